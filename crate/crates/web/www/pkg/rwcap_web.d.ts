/* tslint:disable */
/* eslint-disable */

export class Extraction {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Runs `walks` more walks and returns the current estimate as JSON.
     */
    advance(walks: number): string;
    /**
     * A negative `surface_offset` selects the default offset.
     */
    constructor(layout: string, master: number, n: number, seed: bigint, surface_offset: number);
    walks(): bigint;
}

export function cube_kernel(config: string, n: number): string;

export function layout_summary(text: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_extraction_free: (a: number, b: number) => void;
    readonly cube_kernel: (a: number, b: number, c: number) => [number, number, number, number];
    readonly extraction_advance: (a: number, b: number) => [number, number, number, number];
    readonly extraction_new: (a: number, b: number, c: number, d: number, e: bigint, f: number) => [number, number, number];
    readonly extraction_walks: (a: number) => bigint;
    readonly layout_summary: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
