/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_extraction_free: (a: number, b: number) => void;
export const cube_kernel: (a: number, b: number, c: number) => [number, number, number, number];
export const extraction_advance: (a: number, b: number) => [number, number, number, number];
export const extraction_new: (a: number, b: number, c: number, d: number, e: bigint, f: number) => [number, number, number];
export const extraction_walks: (a: number) => bigint;
export const layout_summary: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
