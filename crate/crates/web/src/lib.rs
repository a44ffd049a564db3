//! Browser bindings: layout checks, single-cube kernels and an incremental
//! single-threaded extraction.

use rwcap_core::dielectric::{voxelize_config, DielectricConfig};
use rwcap_core::fdm::{kernel_set, FdmOptions};
use rwcap_core::frw::{estimate_error, EngineConfig, EstimatorAccumulator, KernelSource, WalkSpace};
use rwcap_core::geometry::{Layout, SignedAxis};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn face_label(f: SignedAxis) -> String {
    format!("{}{}", if f.positive { "+" } else { "-" }, ["x", "y", "z"][f.axis])
}

/// Parses a layout document and summarizes it as JSON.
pub fn layout_summary_json(text: &str) -> Result<String, String> {
    let layout = Layout::parse(text).map_err(|e| e.to_string())?;
    let w = &layout.window;
    let v = json!({
        "window": [w.min.x, w.min.y, w.min.z, w.max.x, w.max.y, w.max.z],
        "background": layout.background_kappa(),
        "conductors": layout
            .conductors
            .iter()
            .map(|c| json!({ "id": c.id, "boxes": c.boxes.len() }))
            .collect::<Vec<_>>(),
        "dielectrics": layout.dielectrics.len(),
    });
    Ok(v.to_string())
}

/// Finite-difference kernels of one block configuration: face sums, the
/// `+z` face of the transition density and the z gradient weight.
pub fn cube_kernel_json(config: &str, n: usize) -> Result<String, String> {
    let cfg = DielectricConfig::parse(config)?;
    let grid = voxelize_config(&cfg, n).map_err(|e| e.to_string())?;
    let ks = kernel_set(&grid, &FdmOptions::default()).map_err(|e| e.to_string())?;
    let faces: Vec<_> = SignedAxis::ALL
        .iter()
        .map(|&f| json!({ "face": face_label(f), "sum": ks.face_dist[f.index()] }))
        .collect();
    let top = SignedAxis { axis: 2, positive: true };
    let v = json!({
        "n": n,
        "faces": faces,
        "total": ks.poisson.sum(),
        "top_face": ks.poisson.face(top),
        "grad_z_weight": ks.grad[2].weight,
        "grad_z_total": ks.grad[2].signed.sum(),
    });
    Ok(v.to_string())
}

/// Extraction advanced a few walks at a time; kernels come from the
/// stratified cache with finite differences for the other cubes.
pub struct Session {
    space: WalkSpace,
    acc: EstimatorAccumulator,
    next: u64,
}

impl Session {
    pub fn new(layout: &str, master: u32, n: usize, seed: u64, surface_offset: Option<f64>) -> Result<Self, String> {
        let layout = Layout::parse(layout).map_err(|e| e.to_string())?;
        let cfg = EngineConfig {
            n,
            workers: 1,
            seed,
            surface_offset,
            ..EngineConfig::default()
        };
        cfg.validate().map_err(|e| e.to_string())?;
        let acc = EstimatorAccumulator::new(layout.conductor_ids());
        let space = WalkSpace::new(layout, master, &cfg, KernelSource::hybrid_oracle()).map_err(|e| e.to_string())?;
        Ok(Session { space, acc, next: 0 })
    }

    pub fn advance(&mut self, walks: u32) -> Result<(), String> {
        for _ in 0..walks {
            let w = self.space.run_walk(self.next).map_err(|e| e.to_string())?;
            let t = w.terminal.ok_or("walk ended without a conductor")?;
            self.acc.push(t, w.value).map_err(|e| e.to_string())?;
            self.next += 1;
        }
        Ok(())
    }

    pub fn walks(&self) -> u64 {
        self.acc.count()
    }

    pub fn snapshot_json(&self) -> String {
        let entries: Vec<_> = self
            .acc
            .ids()
            .iter()
            .map(|&id| {
                json!({
                    "id": id,
                    "mean": self.acc.mean(id),
                    "stderr": self.acc.stderr(id).ok(),
                })
            })
            .collect();
        let (hits, misses) = self.space.cache.counters.snapshot();
        json!({
            "master": self.space.master,
            "walks": self.acc.count(),
            "relative_error": estimate_error(&self.acc, self.space.master).ok(),
            "entries": entries,
            "cache_hits": hits,
            "cache_misses": misses,
        })
        .to_string()
    }
}

#[wasm_bindgen]
pub fn layout_summary(text: &str) -> Result<String, JsError> {
    layout_summary_json(text).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn cube_kernel(config: &str, n: usize) -> Result<String, JsError> {
    cube_kernel_json(config, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct Extraction(Session);

#[wasm_bindgen]
impl Extraction {
    /// A negative `surface_offset` selects the default offset.
    #[wasm_bindgen(constructor)]
    pub fn new(layout: &str, master: u32, n: usize, seed: u64, surface_offset: f64) -> Result<Extraction, JsError> {
        let offset = (surface_offset >= 0.0).then_some(surface_offset);
        Session::new(layout, master, n, seed, offset).map(Extraction).map_err(|e| JsError::new(&e))
    }

    /// Runs `walks` more walks and returns the current estimate as JSON.
    pub fn advance(&mut self, walks: u32) -> Result<String, JsError> {
        self.0.advance(walks).map_err(|e| JsError::new(&e))?;
        Ok(self.0.snapshot_json())
    }

    pub fn walks(&self) -> u64 {
        self.0.walks()
    }
}
