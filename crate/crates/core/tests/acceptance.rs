//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rwcap_core::dielectric::{random_config, voxelize_config, VoxelGrid};
use rwcap_core::fdm::{gradient_kernel, kernel_set, FaceField, FdmOptions, KernelSet};
use rwcap_core::frw::{run_extraction, EngineConfig, ExtractionResult, KernelSource};
use rwcap_core::geometry::{Layout, SignedAxis};
use rwcap_core::nn::{derive_axis_view, ModelBundle, ModelKind, NnError, OraclePredictor, Tensor};
use rwcap_core::reference::{reference_row, ReferenceOptions};
use rwcap_core::symmetry::Symmetry;

const TWO_PLATE: &str = include_str!("../../../fixtures/two_plate.layout");
const THREE_LAYER: &str = include_str!("../../../fixtures/three_layer.layout");

struct Outcome {
    ok: bool,
    detail: String,
}

fn check(failures: &mut Vec<String>, cond: bool, what: impl FnOnce() -> String) {
    if !cond {
        failures.push(what());
    }
}

fn outcome(failures: Vec<String>, summary: String) -> Outcome {
    if failures.is_empty() {
        Outcome { ok: true, detail: summary }
    } else {
        let shown: Vec<_> = failures.iter().take(3).cloned().collect();
        Outcome {
            ok: false,
            detail: format!("{summary}; {} failures, first: {}", failures.len(), shown.join(" | ")),
        }
    }
}

fn random_grid(n: usize, rng: &mut ChaCha8Rng) -> VoxelGrid {
    voxelize_config(&random_config(5, 0.2, rng), n).unwrap()
}

/// Absorption masses of the cell walk started at `start`, by dense Gaussian
/// elimination on the transient chain `x (I - Q) = e_start`.
fn dense_absorption(grid: &VoxelGrid, start: [usize; 3]) -> FaceField {
    let n = grid.n();
    let m = n * n * n;
    let k = grid.values();
    let id = |c: [usize; 3]| (c[0] * n + c[1]) * n + c[2];
    let mut total = vec![0.0; m];
    let mut q = vec![vec![0.0; m]; m];
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                let c = [i, j, l];
                let a = id(c);
                for axis in 0..3 {
                    for step in [-1isize, 1] {
                        let t = c[axis] as isize + step;
                        if t < 0 || t >= n as isize {
                            total[a] += 2.0 * k[a];
                        } else {
                            let mut d = c;
                            d[axis] = t as usize;
                            let b = id(d);
                            let g = 2.0 * k[a] * k[b] / (k[a] + k[b]);
                            total[a] += g;
                            q[a][b] = g;
                        }
                    }
                }
            }
        }
    }
    // Transposed system (I - Q)^T x = e_start.
    let mut a = vec![vec![0.0; m + 1]; m];
    for r in 0..m {
        for c in 0..m {
            let qcr = q[c][r] / total[c];
            a[r][c] = if r == c { 1.0 } else { 0.0 } - qcr;
        }
    }
    a[id(start)][m] = 1.0;
    for col in 0..m {
        let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        for r in col + 1..m {
            let f = a[r][col] / p;
            if f != 0.0 {
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = (r + 1..m).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][m] - s) / a[r][r];
    }
    let mut out = vec![0.0; 6 * n * n];
    for face in SignedAxis::ALL {
        let (t0, t1) = face.tangent_axes();
        for u in 0..n {
            for v in 0..n {
                let mut c = [0; 3];
                c[face.axis] = if face.positive { n - 1 } else { 0 };
                c[t0] = u;
                c[t1] = v;
                let a = id(c);
                out[(face.index() * n + u) * n + v] = x[a] * 2.0 * k[a] / total[a];
            }
        }
    }
    FaceField::from_vec(n, out)
}

fn kernel_oracle_correctness() -> Outcome {
    let opts = FdmOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut f = Vec::new();
    let (mut worst_sum, mut worst_grad) = (0.0f64, 0.0f64);
    let mut grids = Vec::new();
    let mut mixed = 0;
    for g in 0..100 {
        let grid = random_grid(11, &mut rng);
        mixed += !grid.is_homogeneous() as usize;
        let ks = kernel_set(&grid, &opts).unwrap();
        let s = (ks.poisson.sum() - 1.0).abs();
        worst_sum = worst_sum.max(s);
        check(&mut f, s <= 1e-9, || format!("grid {g}: |sum p - 1| = {s:e}"));
        let min = ks.poisson.data().iter().copied().fold(f64::INFINITY, f64::min);
        check(&mut f, min >= 0.0, || format!("grid {g}: negative p {min:e}"));
        for axis in 0..3 {
            let s = ks.grad[axis].signed.sum().abs();
            worst_grad = worst_grad.max(s);
            check(&mut f, s <= 1e-7, || format!("grid {g} axis {axis}: |sum s*g| = {s:e}"));
        }
        if grids.len() < 3 && !grid.is_homogeneous() {
            grids.push((grid, ks));
        }
    }

    let ks = kernel_set(&VoxelGrid::homogeneous(11, 1.0).unwrap(), &opts).unwrap();
    for face in SignedAxis::ALL {
        let s = ks.poisson.face_sum(face);
        check(&mut f, (s - 1.0 / 6.0).abs() <= 1e-9, || format!("homogeneous face {face:?} sum {s}"));
    }

    let mut worst_sym = 0.0f64;
    for (gi, (grid, ks)) in grids.iter().enumerate() {
        for g in Symmetry::all() {
            let direct = kernel_set(&grid.transformed(&g), &opts).unwrap();
            let mapped = ks.transformed(&g);
            let mut d = direct.poisson.max_abs_diff(&mapped.poisson);
            for axis in 0..3 {
                d = d.max(direct.grad[axis].signed.max_abs_diff(&mapped.grad[axis].signed));
            }
            worst_sym = worst_sym.max(d);
            check(&mut f, d <= 1e-10, || format!("grid {gi}: symmetry {g:?} deviates {d:e}"));
        }
    }

    let mut worst_dense = 0.0f64;
    let h = 2.0 / 7.0;
    for gi in 0..3 {
        let mut grid = random_grid(7, &mut rng);
        while grid.is_homogeneous() {
            grid = random_grid(7, &mut rng);
        }
        let ks: KernelSet = kernel_set(&grid, &opts).unwrap();
        let c = [3, 3, 3];
        let mut d = dense_absorption(&grid, c).max_abs_diff(&ks.poisson);
        for axis in 0..3 {
            let (mut plus, mut minus) = (c, c);
            plus[axis] += 1;
            minus[axis] -= 1;
            let pp = dense_absorption(&grid, plus);
            let pm = dense_absorption(&grid, minus);
            let g: Vec<f64> = pp.data().iter().zip(pm.data()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            d = d.max(FaceField::from_vec(7, g).max_abs_diff(&ks.grad[axis].signed));
        }
        worst_dense = worst_dense.max(d);
        check(&mut f, d <= 1e-8, || format!("dense grid {gi} deviates {d:e}"));
    }
    outcome(
        f,
        format!(
            "100 grids n=11 ({mixed} heterogeneous): max|sum p-1| {worst_sum:.1e}, max|sum sg| {worst_grad:.1e}; \
             48-symmetry max dev {worst_sym:.1e}; dense n=7 max dev {worst_dense:.1e}"
        ),
    )
}

fn gradient_axis_derivation() -> Outcome {
    let opts = FdmOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut f = Vec::new();
    let mut worst = 0.0f64;
    for gi in 0..20 {
        let grid = random_grid(11, &mut rng);
        for axis in 0..2 {
            let direct = gradient_kernel(&grid, axis, &opts).unwrap();
            let view = derive_axis_view(&grid, axis, true);
            let rotated = gradient_kernel(&view.grid, 2, &opts).unwrap();
            let d = view.back_map(&rotated.signed).max_abs_diff(&direct.signed);
            worst = worst.max(d);
            check(&mut f, d <= 1e-10, || format!("grid {gi} axis {axis}: {d:e}"));
        }
    }
    outcome(f, format!("20 grids n=11, x and y axes: max dev {worst:.1e}"))
}

struct Fixture {
    name: &'static str,
    layout: Layout,
    reference: f64,
    offset: f64,
}

fn fixtures(f: &mut Vec<String>) -> Vec<Fixture> {
    let two = Layout::parse(TWO_PLATE).unwrap();
    let three = Layout::parse(THREE_LAYER).unwrap();
    // Aligned grids make the reference discretization exact for these stacks.
    let r2 = reference_row(&two, 1, &ReferenceOptions { target_cells: 8000, ..Default::default() })
        .unwrap()
        .get(1)
        .unwrap();
    let r3 = reference_row(&three, 1, &ReferenceOptions { target_cells: 12_000, ..Default::default() })
        .unwrap()
        .get(1)
        .unwrap();
    // Series plate formula as a second route.
    let a2 = 100.0 / 6.0;
    let a3 = 100.0 / (3.0 / 4.0 + 5.0 + 3.0 / 7.0);
    check(f, (r2 / a2 - 1.0).abs() < 1e-8, || format!("two-plate reference {r2} vs {a2}"));
    check(f, (r3 / a3 - 1.0).abs() < 1e-8, || format!("three-layer reference {r3} vs {a3}"));
    vec![
        Fixture {
            name: "two-plate",
            layout: two,
            reference: r2,
            offset: 3.0,
        },
        Fixture {
            name: "three-layer",
            layout: three,
            reference: r3,
            offset: 5.5,
        },
    ]
}

fn extraction_config(fx: &Fixture, seed: u64) -> EngineConfig {
    EngineConfig {
        n: 11,
        workers: 2,
        pool_size: 64,
        target_stderr: 0.01,
        min_walks: 2000,
        max_walks: 2_000_000,
        check_interval: 500,
        seed,
        surface_offset: Some(fx.offset),
        ..EngineConfig::default()
    }
}

fn end_to_end_unbiasedness() -> Outcome {
    let mut f = Vec::new();
    let fxs = fixtures(&mut f);
    let mut parts = Vec::new();
    for fx in &fxs {
        for source in [KernelSource::oracle_direct(), KernelSource::hybrid_oracle()] {
            let mut hits = 0;
            let mut worst_z = 0.0f64;
            for run in 0..20 {
                let cfg = extraction_config(fx, 1000 + run);
                let r = run_extraction(&fx.layout, 1, &cfg, source.clone()).unwrap();
                check(&mut f, r.converged, || format!("{} {} run {run} did not converge", fx.name, source.name()));
                let e = r.self_capacitance();
                let z = (e.mean - fx.reference).abs() / e.stderr;
                worst_z = worst_z.max(z);
                if z <= 3.0 {
                    hits += 1;
                }
            }
            check(&mut f, hits >= 19, || format!("{} {}: {hits}/20 within 3 sigma", fx.name, source.name()));
            parts.push(format!("{} {} {hits}/20 (max z {worst_z:.2})", fx.name, source.name()));
        }

        let fixed = |walks: u64| -> ExtractionResult {
            let cfg = EngineConfig {
                min_walks: walks,
                max_walks: walks,
                ..extraction_config(fx, 5)
            };
            run_extraction(&fx.layout, 1, &cfg, KernelSource::hybrid_oracle()).unwrap()
        };
        let base = 2500;
        let s1 = fixed(base).self_capacitance().stderr;
        let s4 = fixed(4 * base).self_capacitance().stderr;
        let s16 = fixed(16 * base).self_capacitance().stderr;
        let (q4, q16) = (s1 / s4 / 2.0, s1 / s16 / 4.0);
        for (q, k) in [(q4, 4), (q16, 16)] {
            check(&mut f, (q - 1.0).abs() <= 0.2, || format!("{}: {k}x decay ratio {q:.3}", fx.name));
        }
        parts.push(format!("{} decay 4x {q4:.3} 16x {q16:.3}", fx.name));
    }
    outcome(f, parts.join("; "))
}

fn determinism_and_liveness() -> Outcome {
    let mut f = Vec::new();
    let fxs = fixtures(&mut f);
    let bits = |r: &ExtractionResult| -> Vec<(u32, u64, u64)> {
        r.entries.iter().map(|e| (e.id, e.mean.to_bits(), e.stderr.to_bits())).collect()
    };
    let oracle = Arc::new(OraclePredictor::new(11, FdmOptions::default()));
    let mut replay = 0;
    for fx in &fxs {
        for source in [KernelSource::hybrid_oracle(), KernelSource::sampled(oracle.clone(), true)] {
            let cfg = EngineConfig {
                workers: 1,
                min_walks: 3000,
                max_walks: 3000,
                ..extraction_config(fx, 9)
            };
            let a = run_extraction(&fx.layout, 1, &cfg, source.clone()).unwrap();
            let b = run_extraction(&fx.layout, 1, &cfg, source.clone()).unwrap();
            check(&mut f, a.walks == b.walks && bits(&a) == bits(&b), || {
                format!("{} {} replay differs", fx.name, source.name())
            });
            replay += 1;
        }
    }

    // Sampler path for every cube, tiny pools and one step per tick so the
    // engine runs many ticks and stops with walkers still in flight.
    let fx = &fxs[0];
    let cfg = EngineConfig {
        workers: 3,
        pool_size: 4,
        steps_per_tick: 1,
        min_walks: 4000,
        max_walks: 100_000,
        check_interval: 100,
        target_stderr: 0.02,
        ..extraction_config(fx, 3)
    };
    let r = run_extraction(&fx.layout, 1, &cfg, KernelSource::sampled(oracle, false)).unwrap();
    let st = &r.stats;
    check(&mut f, st.awaiting_at_exit == 0, || format!("{} walkers awaiting at exit", st.awaiting_at_exit));
    check(&mut f, st.conservation_checks >= 10_000, || format!("only {} ticks checked", st.conservation_checks));
    check(&mut f, st.conservation_violations == 0, || format!("{} conservation violations", st.conservation_violations));
    check(&mut f, r.walks < cfg.max_walks, || "early stop not reached".into());
    outcome(
        f,
        format!(
            "{replay} single-worker replays bitwise equal; drain: {} walks, {} abandoned, {} awaiting; \
             conservation {} ticks, {} violations",
            r.walks, st.abandoned_walks, st.awaiting_at_exit, st.conservation_checks, st.conservation_violations
        ),
    )
}

fn inference_contracts() -> Outcome {
    let n = 11;
    let mut f = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bundle = ModelBundle::random(n, 42).unwrap();
    let mut worst_norm = 0.0f64;
    let grids: Vec<VoxelGrid> = (0..8).map(|_| random_grid(n, &mut rng)).collect();
    for (gi, grid) in grids.iter().enumerate() {
        let v = grid.values();
        let mut norm = |data: &[f32], signed: bool, what: String, f: &mut Vec<String>| {
            let s: f64 = data.iter().map(|&x| if signed { x.abs() as f64 } else { x as f64 }).sum();
            let e = (s - 1.0).abs();
            worst_norm = worst_norm.max(e);
            check(f, e <= 1e-6, || format!("grid {gi} {what}: mass {s}"));
            if !signed {
                check(f, data.iter().all(|&x| x >= 0.0), || format!("grid {gi} {what}: negative mass"));
            }
        };
        let (sel, _) = bundle.run(ModelKind::PoissonSelector, v, None).unwrap();
        norm(&sel.data, false, "poisson selector".into(), &mut f);
        let (gsel, _) = bundle.run(ModelKind::GradSelector, v, None).unwrap();
        norm(&gsel.data[..6], false, "gradient selector".into(), &mut f);
        check(&mut f, gsel.data[6] > 0.0, || format!("grid {gi}: weight {}", gsel.data[6]));
        for face in SignedAxis::ALL {
            let (p, _) = bundle.run(ModelKind::PoissonFace, v, Some(face)).unwrap();
            norm(&p.data, false, format!("poisson face {face:?}"), &mut f);
            let kind = if face.axis == 2 {
                ModelKind::GradFaceTangent
            } else {
                ModelKind::GradFaceNormal
            };
            match bundle.run(kind, v, Some(face)) {
                Ok((g, _)) => norm(&g.data, true, format!("gradient face {face:?}"), &mut f),
                Err(NnError::Degenerate) => {}
                Err(e) => f.push(format!("grid {gi}: {e}")),
            }
        }
    }

    let mut worst_batch = 0.0f32;
    for kind in ModelKind::ALL {
        let model = bundle.model(kind);
        let inputs: Vec<Tensor> = grids
            .iter()
            .enumerate()
            .map(|(i, g)| rwcap_core::nn::model_input(kind, g.values(), n, Some(SignedAxis::from_index(i % 6))))
            .collect();
        let batch = model.forward_batch(inputs.clone());
        for (x, b) in inputs.into_iter().zip(batch) {
            match (model.forward(x), b) {
                (Ok((s, _)), Ok((b, _))) => {
                    let d = s.data.iter().zip(&b.data).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
                    worst_batch = worst_batch.max(d);
                    check(&mut f, d <= 1e-6, || format!("{}: batch deviates {d:e}", kind.name()));
                }
                (Err(NnError::Degenerate), Err(NnError::Degenerate)) => {}
                _ => f.push(format!("{}: batch and single disagree on failure", kind.name())),
            }
        }
    }

    bundle.record_probes(10, 7).unwrap();
    let bytes = bundle.to_bytes();
    let checked = match ModelBundle::read_from(&mut bytes.as_slice()) {
        Ok(b) => b.check_probes(1e-4).unwrap_or(0),
        Err(e) => {
            f.push(format!("round trip failed: {e}"));
            0
        }
    };
    check(&mut f, checked >= 40, || format!("only {checked} probes checked"));
    // First weight of the first model: 16-byte header, name, layer list,
    // conv3d layer header and a rank-5 shape.
    let at = 16 + 2 + "poisson_selector".len() + 4 + 2 + 4 + 8 + 4 + 4 + 20;
    let mut tampered = bytes.clone();
    let w = f32::from_le_bytes(tampered[at..at + 4].try_into().unwrap());
    tampered[at..at + 4].copy_from_slice(&(w + 5.0).to_le_bytes());
    let rejected = matches!(
        ModelBundle::read_from(&mut tampered.as_slice()).and_then(|b| b.check_probes(1e-4)),
        Err(NnError::ProbeMismatch { ref model, .. }) if model == "poisson_selector"
    );
    check(&mut f, rejected, || "tampered weights not rejected by probes".into());
    outcome(
        f,
        format!(
            "8 grids x 5 models: max mass error {worst_norm:.1e}; batch max dev {worst_batch:.1e}; \
             {checked} probes round-tripped; tampered file rejected"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 5] = [
        ("kernel oracle correctness", kernel_oracle_correctness),
        ("gradient-axis symmetry derivation", gradient_axis_derivation),
        ("end-to-end unbiasedness", end_to_end_unbiasedness),
        ("engine determinism and liveness", determinism_and_liveness),
        ("inference contracts with random weights", inference_contracts),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        println!(
            "{} {name} ({:.1}s): {}",
            if o.ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        failed += !o.ok as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
