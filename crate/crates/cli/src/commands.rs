use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rwcap_core::dataset::{generate_dataset_to, DatasetFile, DatasetHeader, DatasetRecord, GenerateParams};
use rwcap_core::dielectric::{check_grid_size, voxelize_config, voxelize_cube, DielectricConfig, VoxelGrid};
use rwcap_core::fdm::{kernel_set, FdmOptions};
use rwcap_core::frw::{run_extraction, EngineConfig, ExtractionResult, KernelSource};
use rwcap_core::geometry::{largest_empty_cube, Layout, Point3, SignedAxis};
use rwcap_core::nn::ModelBundle;
use serde_json::json;

use crate::error::CliError;
use crate::{BenchArgs, EngineArgs, ExtractArgs, GenDataArgs, InspectArgs, KernelArgs, SourceArg};

pub const JSON_SCHEMA: u32 = 1;
pub const CSV_HEADER: [&str; 11] = [
    "source",
    "repeat",
    "walks",
    "wall_s",
    "walks_per_s",
    "steps",
    "mean_batch",
    "batch_occupancy",
    "c_self",
    "stderr",
    "nonstratified_fraction",
];

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_layout(path: &Path) -> Result<Layout, CliError> {
    Layout::parse(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    check_grid_size(a.n)?;
    if a.count == 0 || a.blocks == 0 {
        return Err(CliError::Usage("--count and --blocks must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&a.p_nest) {
        return Err(CliError::Usage(format!("--p-nest {} outside [0, 1)", a.p_nest)));
    }
    let params = GenerateParams {
        count: a.count,
        n: a.n,
        blocks: a.blocks,
        p_nest: a.p_nest,
        seed: a.seed,
        workers: a.workers.unwrap_or_else(default_workers),
        fdm: FdmOptions::default(),
    };
    let start = Instant::now();
    let mut out = BufWriter::new(File::create(&a.out)?);
    let mut total_resamples = 0;
    generate_dataset_to(&params, &mut out, |done, resamples| {
        total_resamples = resamples;
        eprintln!("generated {done}/{} records, {resamples} resamples", a.count);
    })?;
    out.flush()?;
    eprintln!(
        "wrote {} records to {} in {:.2}s ({} resamples)",
        a.count,
        a.out.display(),
        start.elapsed().as_secs_f64(),
        total_resamples
    );
    Ok(())
}

pub fn kernel(a: &KernelArgs) -> Result<(), CliError> {
    check_grid_size(a.n)?;
    let grid: VoxelGrid = match (&a.layout, &a.config) {
        (Some(path), None) => {
            let layout = load_layout(path)?;
            let p = a.point.as_deref().ok_or_else(|| CliError::Usage("--layout needs --point".into()))?;
            let cube = largest_empty_cube(&layout, Point3::new(p[0], p[1], p[2]))?;
            println!(
                "cube center ({}, {}, {}) half width {}",
                cube.center.x, cube.center.y, cube.center.z, cube.half_width
            );
            voxelize_cube(&layout, &cube, a.n)?
        }
        (None, Some(path)) => {
            let cfg = DielectricConfig::parse(&read_text(path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            voxelize_config(&cfg, a.n)?
        }
        _ => return Err(CliError::Usage("give exactly one of --layout or --config".into())),
    };
    let ks = kernel_set(&grid, &FdmOptions::default())?;
    println!("n {}  raw max permittivity {}", a.n, grid.raw_max());
    let line = |label: &str, v: [f64; 6]| {
        let cells: Vec<String> = SignedAxis::ALL
            .iter()
            .map(|f| format!("{}{} {:.5}", if f.positive { "+" } else { "-" }, ["x", "y", "z"][f.axis], v[f.index()]))
            .collect();
        println!("{label}: {}", cells.join("  "));
    };
    line("poisson face sums", ks.face_dist);
    println!("poisson total {:.12}", ks.poisson.sum());
    let axis = a.axis.map(|x| x as usize);
    if let Some(axis) = axis {
        let g = &ks.grad[axis];
        let mut sums = [0.0; 6];
        for f in SignedAxis::ALL {
            sums[f.index()] = g.signed.face_sum(f);
        }
        line(&format!("gradient {} signed face sums", ["x", "y", "z"][axis]), sums);
        println!("gradient weight {:.8}  signed total {:.3e}", g.weight, g.signed.sum());
    }
    if let Some(out) = &a.out {
        let g = &ks.grad[axis.unwrap_or(2)];
        let file = DatasetFile {
            header: DatasetHeader {
                n: a.n as u32,
                count: 1,
                p_nest: 0.0,
                blocks: 0,
                seed: 0,
            },
            records: vec![DatasetRecord::from_kernels(grid.values(), &ks.poisson, &g.signed, g.weight)],
            resample_count: 0,
        };
        file.save(out)?;
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

struct Prepared {
    cfg: EngineConfig,
    bundle: Option<Arc<ModelBundle>>,
}

fn prepare_engine(e: &EngineArgs) -> Result<Prepared, CliError> {
    let mut cfg = match &e.config {
        Some(path) => toml::from_str::<EngineConfig>(&read_text(path)?)
            .map_err(|err| CliError::Usage(format!("{}: {}", path.display(), err.message())))?,
        None => EngineConfig::default(),
    };
    let bundle = match &e.weights {
        Some(path) => {
            let b = ModelBundle::load(path)?;
            if e.n.is_some_and(|n| n != b.n()) {
                return Err(CliError::Usage(format!("--n {} does not match weights grid size {}", e.n.unwrap(), b.n())));
            }
            cfg.n = b.n();
            Some(Arc::new(b))
        }
        None => None,
    };
    if let Some(n) = e.n {
        cfg.n = n;
    }
    if let Some(s) = e.seed {
        cfg.seed = s;
    }
    if let Some(w) = e.workers {
        cfg.workers = w;
    }
    if e.surface_offset.is_some() {
        cfg.surface_offset = e.surface_offset;
    }
    check_grid_size(cfg.n)?;
    Ok(Prepared { cfg, bundle })
}

fn source_for(s: SourceArg, bundle: &Option<Arc<ModelBundle>>) -> Result<KernelSource, CliError> {
    let need = || {
        bundle
            .clone()
            .ok_or_else(|| CliError::Usage("neural kernel sources need --weights".into()))
    };
    Ok(match s {
        SourceArg::Oracle => KernelSource::oracle_direct(),
        SourceArg::Cache => KernelSource::hybrid_oracle(),
        SourceArg::Neural => KernelSource::hybrid_neural(need()?),
        SourceArg::NeuralDirect => KernelSource::neural(need()?),
    })
}

/// The JSON document printed by `extract --json`.
pub fn result_json(r: &ExtractionResult) -> serde_json::Value {
    json!({
        "schema": JSON_SCHEMA,
        "master": r.master,
        "source": r.source,
        "entries": r.entries,
        "walks": r.walks,
        "relative_error": r.relative_error,
        "converged": r.converged,
        "elapsed_s": r.elapsed_s,
        "nonstratified_fraction": r.stats.nonstratified_fraction(),
        "stats": r.stats,
    })
}

pub fn extract(a: &ExtractArgs) -> Result<(), CliError> {
    let mut p = prepare_engine(&a.engine)?;
    if let Some(t) = a.target_err {
        p.cfg.target_stderr = t;
    }
    if let Some(m) = a.min_walks {
        p.cfg.min_walks = m;
    }
    if let Some(m) = a.max_walks {
        p.cfg.max_walks = m;
    }
    let source = source_for(a.kernel_source, &p.bundle)?;
    let layout = load_layout(&a.layout)?;
    let r = run_extraction(&layout, a.net, &p.cfg, source)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&result_json(&r)).expect("result serializes"));
    } else {
        print!("{}", r.to_text());
    }
    if !r.converged {
        eprintln!(
            "warning: target {} not reached after {} walks (relative error {:.3e})",
            p.cfg.target_stderr, r.walks, r.relative_error
        );
    }
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

pub fn bench(a: &BenchArgs) -> Result<(), CliError> {
    if a.repeats == 0 || a.walks < 2 || a.sources.is_empty() {
        return Err(CliError::Usage("--repeats must be positive, --walks at least 2, --sources non-empty".into()));
    }
    let p = prepare_engine(&a.engine)?;
    let sources: Vec<(SourceArg, KernelSource)> = a
        .sources
        .iter()
        .map(|&s| source_for(s, &p.bundle).map(|k| (s, k)))
        .collect::<Result<_, _>>()?;
    let layout = load_layout(&a.layout)?;
    let net = match a.net {
        Some(id) => id,
        None => *layout
            .conductor_ids()
            .first()
            .ok_or_else(|| CliError::Data("layout has no conductors".into()))?,
    };
    let sink: Box<dyn Write> = match &a.csv {
        Some(path) => Box::new(File::create(path)?),
        None => Box::new(io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER).map_err(|e| CliError::Data(e.to_string()))?;
    for (arg, source) in &sources {
        let mut rates = Vec::new();
        let mut walls = Vec::new();
        for rep in 0..a.repeats {
            let cfg = EngineConfig {
                min_walks: a.walks,
                max_walks: a.walks,
                seed: p.cfg.seed.wrapping_add(rep as u64),
                ..p.cfg
            };
            let r = run_extraction(&layout, net, &cfg, source.clone())?;
            let rate = r.walks as f64 / r.elapsed_s;
            let st = &r.stats;
            let c = r.self_capacitance();
            w.write_record([
                source.name().to_string(),
                rep.to_string(),
                r.walks.to_string(),
                format!("{:.6}", r.elapsed_s),
                format!("{rate:.3}"),
                st.steps.to_string(),
                format!("{:.3}", st.mean_batch),
                format!("{:.4}", st.mean_batch / cfg.batch_size as f64),
                format!("{:.10e}", c.mean),
                format!("{:.4e}", c.stderr),
                format!("{:.6}", st.nonstratified_fraction()),
            ])
            .map_err(|e| CliError::Data(e.to_string()))?;
            rates.push(rate);
            walls.push(r.elapsed_s);
        }
        let (rm, rs) = mean_std(&rates);
        let (wm, ws) = mean_std(&walls);
        eprintln!(
            "{:<14} walks/s {rm:.1} ± {rs:.1}  wall {wm:.3}s ± {ws:.3}s over {} runs",
            format!("{arg:?}").to_lowercase(),
            a.repeats
        );
    }
    w.flush()?;
    Ok(())
}

pub fn inspect(a: &InspectArgs) -> Result<(), CliError> {
    if let Some(path) = &a.weights {
        let mut r = io::BufReader::new(File::open(path)?);
        let bundle = ModelBundle::read_from(&mut r)?;
        let n = bundle.n();
        println!("weights {}  n {}  models {}", path.display(), n, bundle.models().len());
        for m in bundle.models() {
            println!(
                "model {}  input {:?}  output {:?}  layers {}  parameters {}  probes {}",
                m.kind.name(),
                m.kind.input_shape(n),
                m.kind.output_shape(n),
                m.layers.len(),
                m.trainable_parameters(),
                bundle.probes(m.kind).len()
            );
            let mut shape = m.kind.input_shape(n);
            for (i, l) in m.layers.iter().enumerate() {
                shape = l.output_shape(&shape).map_err(CliError::Data)?;
                println!(
                    "  [{i:2}] {:<14} attrs {:?} -> {:?}  params {}",
                    l.name(),
                    l.attributes(),
                    shape,
                    l.trainable_parameters()
                );
            }
        }
        let checked = bundle.check_probes(1e-4)?;
        println!("probes: {checked} checked, all within 1e-4");
    }
    if let Some(path) = &a.data {
        let file = DatasetFile::load(path)?;
        let h = &file.header;
        println!(
            "dataset {}  n {}  count {}  blocks {}  p_nest {}  seed {}",
            path.display(),
            h.n,
            h.count,
            h.blocks,
            h.p_nest,
            h.seed
        );
        println!(
            "record floats {}  resamples {}",
            h.record_floats(),
            file.resample_count
        );
        if !file.records.is_empty() {
            let w: Vec<f64> = file.records.iter().map(|r| r.weight_z as f64).collect();
            let (m, s) = mean_std(&w);
            let worst = file
                .records
                .iter()
                .map(|r| (r.poisson.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            println!("gradient weight mean {m:.6} ± {s:.6}  max |poisson mass - 1| {worst:.2e}");
        }
    }
    Ok(())
}
