use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rwcap_core::nn::ModelBundle;
use tempfile::TempDir;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures");

fn fixture(name: &str) -> PathBuf {
    Path::new(FIXTURES).join(name)
}

fn rwcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwcap")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_error(o: &Output, code: i32, kind: &str) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error[{kind}]: ")), "{err}");
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn reference_value(name: &str) -> f64 {
    let text = fs::read_to_string(fixture(name)).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix("# reference 1 "))
        .unwrap()
        .trim()
        .parse()
        .unwrap()
}

fn write_config(dir: &TempDir, body: &str) -> PathBuf {
    let p = dir.path().join("cube.cfg");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn gen_data_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.drwd");
    let b = dir.path().join("b.drwd");
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = rwcap(&["gen-data", "--count", "6", "--n", "7", "--seed", "7", "--out", path_str(out), "--workers", workers]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stderr(&o).contains("resamples"));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn gen_data_rejects_even_n_before_work() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.drwd");
    let o = rwcap(&["gen-data", "--count", "5", "--n", "10", "--out", path_str(&out)]);
    assert_error(&o, 2, "usage");
    assert!(!out.exists());
}

#[test]
fn inspect_data_echoes_generation_flags() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.drwd");
    let o = rwcap(&[
        "gen-data", "--count", "3", "--n", "5", "--blocks", "4", "--p-nest", "0.3", "--seed", "11", "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = rwcap(&["inspect", "--data", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("n 5  count 3  blocks 4  p_nest 0.3  seed 11"), "{text}");
}

#[test]
fn kernel_homogeneous_face_sums() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "background 2.5\n");
    let o = rwcap(&["kernel", "--config", path_str(&cfg), "--n", "11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("poisson face sums:")).expect(&text);
    let sums: Vec<f64> = line
        .split_once(':')
        .unwrap()
        .1
        .split_whitespace()
        .skip(1)
        .step_by(2)
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(sums.len(), 6, "{line}");
    for s in sums {
        assert!((s - 1.0 / 6.0).abs() <= 1e-5, "{line}");
    }
}

#[test]
fn kernel_gradient_sums_to_zero_and_writes_record() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "background 1\nblock 0.3 0 -0.2 0.8 1.2 0.6 6\n");
    let out = dir.path().join("k.drwd");
    let o = rwcap(&["kernel", "--config", path_str(&cfg), "--n", "9", "--axis", "z", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("gradient weight")).expect(&text);
    let total: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(total.abs() <= 1e-7, "{line}");
    let o = rwcap(&["inspect", "--data", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("n 9  count 1"));
}

#[test]
fn kernel_without_input_is_usage_error() {
    assert_error(&rwcap(&["kernel", "--n", "11"]), 2, "usage");
}

#[test]
fn extract_two_plate_matches_reference() {
    let o = rwcap(&[
        "extract", "--layout", path_str(&fixture("two_plate.layout")), "--net", "1", "--kernel-source", "oracle",
        "--n", "11", "--surface-offset", "3", "--seed", "5", "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let self_entry = v["entries"].as_array().unwrap().iter().find(|e| e["id"] == 1).unwrap();
    let mean = self_entry["mean"].as_f64().unwrap();
    let stderr = self_entry["stderr"].as_f64().unwrap();
    let reference = reference_value("two_plate.layout");
    assert!((mean - reference).abs() <= 3.0 * stderr, "{mean} ± {stderr} vs {reference}");
    assert_eq!(v["converged"], true);
    assert!(v["relative_error"].as_f64().unwrap() <= 0.01);
}

#[test]
fn extract_json_follows_schema() {
    let o = rwcap(&[
        "extract", "--layout", path_str(&fixture("bus.layout")), "--net", "2", "--n", "11", "--min-walks", "300",
        "--max-walks", "300", "--workers", "1", "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["master"], 2);
    assert_eq!(v["source"], "cache");
    assert_eq!(v["walks"], 300);
    for key in ["relative_error", "converged", "elapsed_s", "nonstratified_fraction", "stats"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let entries = v["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for e in entries {
        assert!(e["id"].is_u64() && e["mean"].is_f64() && e["stderr"].is_f64());
    }
    assert!(v["stats"]["poisson_tasks"].is_u64());
}

#[test]
fn extract_is_deterministic_single_worker() {
    let layout = fixture("bus.layout");
    let args = [
        "extract", "--layout", path_str(&layout), "--net", "1", "--n", "11", "--min-walks", "200",
        "--max-walks", "200", "--workers", "1", "--seed", "9", "--json",
    ];
    let strip = |o: Output| {
        let mut v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        v["elapsed_s"] = serde_json::Value::Null;
        v["entries"].clone()
    };
    assert_eq!(strip(rwcap(&args)), strip(rwcap(&args)));
}

#[test]
fn extract_neural_without_weights_is_usage_error() {
    let o = rwcap(&["extract", "--layout", path_str(&fixture("two_plate.layout")), "--net", "1", "--kernel-source", "neural"]);
    assert_error(&o, 2, "usage");
}

#[test]
fn extract_unknown_net_is_usage_error() {
    let o = rwcap(&["extract", "--layout", path_str(&fixture("two_plate.layout")), "--net", "9"]);
    assert_error(&o, 2, "usage");
}

#[test]
fn extract_malformed_layout_is_data_error() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.layout");
    fs::write(&p, "window 0 0 0 1 1\n").unwrap();
    assert_error(&rwcap(&["extract", "--layout", path_str(&p), "--net", "1"]), 3, "data");
}

#[test]
fn extract_with_neural_weights_runs() {
    let dir = TempDir::new().unwrap();
    let w = dir.path().join("w.drwc");
    let mut b = ModelBundle::random(11, 4).unwrap();
    b.record_probes(2, 5).unwrap();
    b.save(&w).unwrap();
    let o = rwcap(&[
        "extract", "--layout", path_str(&fixture("bus.layout")), "--net", "2", "--kernel-source", "neural",
        "--weights", path_str(&w), "--min-walks", "100", "--max-walks", "100", "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["source"], "neural");
    assert_eq!(v["walks"], 100);
    let o = rwcap(&[
        "extract", "--layout", path_str(&fixture("bus.layout")), "--net", "2", "--kernel-source", "neural",
        "--weights", path_str(&w), "--n", "23",
    ]);
    assert_error(&o, 2, "usage");
}

fn bench_rows(csv: &str) -> (String, Vec<Vec<String>>) {
    let mut lines = csv.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn bench_writes_stable_csv_and_summary() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("b.csv");
    let layout = fixture("two_plate.layout");
    let args = [
        "bench", "--layout", path_str(&layout), "--surface-offset", "3", "--n", "11",
        "--repeats", "10", "--walks", "200", "--workers", "1",
    ];
    let mut with_csv = args.to_vec();
    with_csv.extend(["--csv", path_str(&csv)]);
    let o = rwcap(&with_csv);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stderr(&o);
    assert!(summary.lines().any(|l| l.starts_with("oracle") && l.contains("over 10 runs")), "{summary}");
    let (header, rows) = bench_rows(&fs::read_to_string(&csv).unwrap());
    assert_eq!(
        header,
        "source,repeat,walks,wall_s,walks_per_s,steps,mean_batch,batch_occupancy,c_self,stderr,nonstratified_fraction"
    );
    assert_eq!(rows.len(), 20);
    let o = rwcap(&args);
    let (header2, rows2) = bench_rows(&stdout(&o));
    assert_eq!(header, header2);
    // Estimates do not depend on timing.
    for (a, b) in rows.iter().zip(&rows2) {
        assert_eq!(a[0], b[0]);
        assert_eq!(a[8], b[8]);
    }
}

#[test]
fn cache_outpaces_oracle_on_stratified_layout() {
    let o = rwcap(&[
        "bench", "--layout", path_str(&fixture("three_layer.layout")), "--surface-offset", "5.5", "--n", "11",
        "--repeats", "3", "--walks", "2000", "--workers", "1", "--sources", "oracle,cache",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = bench_rows(&stdout(&o));
    let rate = |src: &str| {
        let v: Vec<f64> = rows.iter().filter(|r| r[0] == src).map(|r| r[4].parse().unwrap()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(rate("cache") >= rate("oracle"), "cache {} oracle {}", rate("cache"), rate("oracle"));
}

#[test]
fn inspect_weights_reports_parameter_counts() {
    let dir = TempDir::new().unwrap();
    let w = dir.path().join("w.drwc");
    ModelBundle::random(23, 1).unwrap().save(&w).unwrap();
    let o = rwcap(&["inspect", "--weights", path_str(&w)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("model poisson_face ")).expect(&text);
    let params: usize = line.split("parameters ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((1350..=1450).contains(&params), "{line}");
}

#[test]
fn inspect_probe_mismatch_names_model() {
    let dir = TempDir::new().unwrap();
    let w = dir.path().join("w.drwc");
    let mut b = ModelBundle::random(7, 2).unwrap();
    b.record_probes(3, 3).unwrap();
    let mut bytes = b.to_bytes();
    let at = 16 + 2 + "poisson_selector".len() + 4 + 2 + 4 + 8 + 4 + 4 + 20;
    let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    bytes[at..at + 4].copy_from_slice(&(v + 5.0).to_le_bytes());
    fs::write(&w, &bytes).unwrap();
    let o = rwcap(&["inspect", "--weights", path_str(&w)]);
    assert_error(&o, 3, "data");
    assert!(stderr(&o).contains("poisson_selector"), "{}", stderr(&o));
}

#[test]
fn inspect_truncated_weights_is_data_error() {
    let dir = TempDir::new().unwrap();
    let w = dir.path().join("w.drwc");
    let bytes = ModelBundle::random(5, 2).unwrap().to_bytes();
    fs::write(&w, &bytes[..bytes.len() / 2]).unwrap();
    assert_error(&rwcap(&["inspect", "--weights", path_str(&w)]), 3, "data");
}
