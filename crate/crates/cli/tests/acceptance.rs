//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported but do not fail the process unless
//! `ACCEPTANCE_STRICT=1` is set. `ACCEPTANCE_KEEP=1` keeps the run
//! directories and prints where they are.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use privtranslate::attack::{itn_attack, reconstruction_metrics, AnalyticVictim, AttackConfig};
use privtranslate::authclass::{accepts, compute_metrics};
use privtranslate::data::{load_dataset_dir, synth_identity_dataset};
use privtranslate::gan_core::{apply_spectral_norm, Parameters};
use privtranslate::trainers::load_model;
use privtranslate::translate::translate;
use privtranslate_nn::NamedTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use support::{gradcheck, loss_oracles};

type Outcome = Result<String, String>;

fn bin(out: &Path, args: &[&str]) -> std::io::Result<Output> {
    Command::new(env!("CARGO_BIN_EXE_privtranslate")).args(args).arg("--out").arg(out).env("RUST_LOG", "warn").output()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn num(v: &Value, pointer: &str) -> Result<f64, String> {
    v.pointer(pointer).and_then(Value::as_f64).ok_or_else(|| format!("missing number at {pointer}"))
}

fn within(elapsed: Duration, budget_secs: u64) -> Result<(), String> {
    if elapsed.as_secs_f64() < budget_secs as f64 {
        Ok(())
    } else {
        Err(format!("took {:.1}s, budget {budget_secs}s", elapsed.as_secs_f64()))
    }
}

fn loss_oracles_and_gradients() -> Outcome {
    let clock = Instant::now();
    for (name, r) in loss_oracles::run_all() {
        r.map_err(|e| format!("{name}: {e}"))?;
    }
    let mut worst = 0.0f64;
    for (name, r) in gradcheck::run_all(0x5eed) {
        let w = r.map_err(|e| format!("{name}: {e}"))?;
        if w > gradcheck::REL_TOL {
            return Err(format!("{name}: relative error {w:.2e} above {:.0e}", gradcheck::REL_TOL));
        }
        worst = worst.max(w);
    }
    within(clock.elapsed(), 120)?;
    Ok(format!(
        "7 losses match their oracles to {:.0e}; worst gradient error {worst:.2e} over {} inputs per loss ({:.1}s)",
        loss_oracles::TOL,
        gradcheck::TRIALS,
        clock.elapsed().as_secs_f64()
    ))
}

fn spectral_norm() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut tops = Vec::with_capacity(100);
    for _ in 0..100 {
        let (rows, cols) = (rng.random_range(1..=256), rng.random_range(1..=256));
        let data: Vec<f32> = (0..rows * cols).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let mut p = Parameters::new();
        p.push(NamedTensor { name: "m.weight".into(), shape: vec![rows, cols], trainable: true, data })
            .map_err(|e| e.to_string())?;
        let out = apply_spectral_norm(&p, 50).map_err(|e| e.to_string())?;
        let w = &out.get("m.weight").ok_or("weight missing")?.data;
        let m = DMatrix::from_row_iterator(rows, cols, w.iter().map(|&v| v as f64));
        tops.push(m.singular_values().max());
    }
    within(clock.elapsed(), 60)?;
    let inside = tops.iter().filter(|s| (0.99..=1.01).contains(*s)).count();
    let max = tops.iter().cloned().fold(f64::MIN, f64::max);
    let detail = format!("{inside}/100 matrices with σ₁ in [0.99, 1.01] after 50 iterations, largest {max:.4}");
    if inside == 100 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let n = rng.random_range(0..200);
        let d: Vec<(bool, bool)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
        let count = |p: bool, a: bool| d.iter().filter(|&&x| x == (p, a)).count() as f64;
        let (tp, fp, fn_, tn) = (count(true, true), count(true, false), count(false, true), count(false, false));
        let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        let (precision, recall) = (div(tp, tp + fp), div(tp, tp + fn_));
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        let accuracy = div(tp + tn, n as f64);
        let m = compute_metrics(&d);
        if (m.accuracy, m.precision, m.recall, m.f1) != (accuracy, precision, recall, f1) {
            return Err(format!("list {trial}: {m:?} vs oracle ({accuracy}, {precision}, {recall}, {f1})"));
        }
    }
    let boundary = [(0.7, true), (0.71, true), (0.69, false), (0.7 - 1e-12, false), (1.0, true), (0.0, false)];
    for (p, want) in boundary {
        if accepts(p, 0.7) != want {
            return Err(format!("accepts({p}, 0.7) should be {want}"));
        }
    }
    Ok("1000 random lists match the brute-force oracle exactly; p ≥ 0.7 accepts at the boundary".into())
}

/// The desk-scale pipeline run shared by criteria 4, 5, 7 and 9.
struct DeskRun {
    run: PathBuf,
    elapsed: Duration,
}

fn desk_pipeline(root: &Path) -> Result<DeskRun, String> {
    let clock = Instant::now();
    let o = bin(root, &["pipeline", "--jobs", "1"]).map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("pipeline exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr).trim()));
    }
    Ok(DeskRun { run: root.join("runs/desk"), elapsed: clock.elapsed() })
}

fn desk_translation(desk: &Result<DeskRun, String>) -> Outcome {
    let desk = desk.as_ref().map_err(Clone::clone)?;
    within(desk.elapsed, 6 * 3600)?;
    let collapse = read_json(&desk.run.join("gan/collapse.json"))?;
    if collapse["collapsed"] != Value::Bool(false) {
        return Err(format!("mode-collapse detector fired: {collapse}"));
    }
    let model = load_model(&desk.run.join("gan/model")).map_err(|e| e.to_string())?;
    let bench = load_dataset_dir(&desk.run.join("data/benchmark")).map_err(|e| e.to_string())?;
    let before = model.fingerprint();
    let a = translate(&model, &bench.images).map_err(|e| e.to_string())?;
    let b = translate(&model, &bench.images).map_err(|e| e.to_string())?;
    if a.pixels() != b.pixels() || model.fingerprint() != before {
        return Err("translating the benchmark twice gave different pixels".into());
    }
    let ratio = num(&read_json(&desk.run.join("consistency/consistency.json"))?, "/ratio")?;
    let detail = format!(
        "no collapse, translation deterministic, consistency ratio {ratio:.4} (> 1.1), pipeline {:.1} min",
        desk.elapsed.as_secs_f64() / 60.0
    );
    if ratio > 1.1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn desk_classification(desk: &Result<DeskRun, String>) -> Outcome {
    let desk = desk.as_ref().map_err(Clone::clone)?;
    let table = read_json(&desk.run.join("report/metrics_report.json"))?;
    let rows = table["rows"].as_array().ok_or("metrics report has no rows")?;
    let metrics: Vec<&str> = rows.iter().filter_map(|r| r["metric"].as_str()).collect();
    if metrics != ["accuracy", "precision", "recall", "f1"] {
        return Err(format!("unexpected table rows {metrics:?}"));
    }
    for r in rows {
        for col in ["frozen_faces", "frozen_translated", "trainable_faces", "trainable_translated"] {
            num(r, &format!("/{col}"))?;
        }
    }
    let (faces, translated) = (num(&rows[3], "/trainable_faces")?, num(&rows[3], "/trainable_translated")?);
    let manifest = read_json(&desk.run.join("manifest.json"))?;
    let after_gan: f64 = manifest["stages"]
        .as_array()
        .ok_or("manifest has no stages")?
        .iter()
        .filter(|s| !matches!(s["name"].as_str(), Some("synth-data" | "ingest" | "train-gan" | "attack")))
        .filter_map(|s| s["seconds"].as_f64())
        .sum();
    within(Duration::from_secs_f64(after_gan), 1800)?;
    let gap = (faces - translated).abs();
    let detail = format!(
        "trainable F1 {faces:.4} on faces, {translated:.4} translated, gap {gap:.4} (≤ 0.15); {:.1} min after the translator exists",
        after_gan / 60.0
    );
    if gap <= 0.15 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn itn_on_analytic_victims() -> Outcome {
    let clock = Instant::now();
    let attacker = synth_identity_dataset(50, 4, 64, "faceoid", 501).map_err(|e| e.to_string())?.images;
    let held_out = synth_identity_dataset(10, 4, 64, "faceoid", 502).map_err(|e| e.to_string())?.images;
    let config = AttackConfig::default();
    let mut parts = Vec::new();
    let mut ok = config.epochs <= 10;
    for victim in [AnalyticVictim::Identity, AnalyticVictim::ChannelPermutation([2, 0, 1])] {
        let inverse = itn_attack(&victim, &attacker, &config).map_err(|e| e.to_string())?;
        let translated = translate(&victim, &held_out).map_err(|e| e.to_string())?;
        let recovered = translate(&inverse, &translated).map_err(|e| e.to_string())?;
        let mse = reconstruction_metrics(&held_out, &recovered).map_err(|e| e.to_string())?.mse;
        ok &= mse < 1e-2;
        parts.push(format!("{victim:?} MSE {mse:.5}"));
    }
    let detail = format!(
        "{} on held-out faces after {} epochs (< 1e-2, {:.1}s)",
        parts.join(", "),
        config.epochs,
        clock.elapsed().as_secs_f64()
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn privacy(desk: &Result<DeskRun, String>) -> Outcome {
    let desk = desk.as_ref().map_err(Clone::clone)?;
    let report = read_json(&desk.run.join("attack/attack_report.json"))?;
    let rate = num(&report, "/reidentification_rate")?;
    let chance = num(&report, "/chance_rate")?;
    let per_image = report["per_image"].as_array().map_or(0, Vec::len);
    if per_image == 0 {
        return Err("attack report has no per-image scores".into());
    }
    if !desk.run.join("attack/reconstructions.png").is_file() {
        return Err("reconstruction grid missing".into());
    }
    let detail = format!(
        "ITN re-identification {rate:.3} (target < 0.5, chance {chance:.2}), MSE {:.4}, {per_image} per-image scores and grid written",
        num(&report, "/mse")?
    );
    if rate < 0.5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mode_collapse(root: &Path) -> Outcome {
    let cfg = configs().join("collapse.json");
    let o = bin(root, &["pipeline", "--config", cfg.to_str().ok_or("config path")?, "--jobs", "1"])
        .map_err(|e| e.to_string())?;
    if o.status.code() != Some(1) {
        return Err(format!("expected exit 1, got {:?}", o.status.code()));
    }
    let run = root.join("runs/collapse");
    let collapse = read_json(&run.join("gan/collapse.json"))?;
    if collapse["collapsed"] != Value::Bool(true) {
        return Err("train-gan failed without the detector firing".into());
    }
    let manifest = read_json(&run.join("manifest.json"))?;
    let last = manifest["stages"].as_array().and_then(|s| s.last()).ok_or("empty manifest")?;
    if last["name"] != "train-gan" || last["status"] != "failed" {
        return Err(format!("chain did not halt at train-gan: {last}"));
    }
    let epoch = num(&collapse, "/epoch")?;
    let detail = format!(
        "detector fired at step {} (epoch {} of 20), chain halted at train-gan with exit 1",
        num(&collapse, "/first_step")?,
        epoch + 1.0
    );
    if epoch < 20.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            std::fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

const METRIC_FILES: [&str; 5] = [
    "consistency/consistency.json",
    "eval/frozen_faces.json",
    "eval/frozen_translated.json",
    "eval/trainable_faces.json",
    "eval/trainable_translated.json",
];

/// Copy the finished desk run and repeat translate, consistency,
/// train-classifiers and evaluate in the copy.
fn reproducibility(desk: &Result<DeskRun, String>, root: &Path) -> Outcome {
    let desk = desk.as_ref().map_err(Clone::clone)?;
    let copy = root.join("runs/desk");
    copy_dir(&desk.run, &copy).map_err(|e| e.to_string())?;
    for stage in ["translate", "consistency", "train-classifiers"] {
        let o = bin(root, &[stage, "--rerun", "--jobs", "1"]).map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{stage} --rerun: {}", String::from_utf8_lossy(&o.stderr).trim()));
        }
    }
    let o = bin(root, &["evaluate", "--jobs", "1"]).map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("evaluate: {}", String::from_utf8_lossy(&o.stderr).trim()));
    }
    for f in METRIC_FILES {
        let a = std::fs::read(desk.run.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(copy.join(f)).map_err(|e| format!("{f}: {e}"))?;
        if a != b {
            return Err(format!("{f} differs after re-running"));
        }
    }
    Ok(format!(
        "{} metric files bit-identical after re-running translate through evaluate with --jobs 1",
        METRIC_FILES.len()
    ))
}

fn main() {
    let keep = std::env::var("ACCEPTANCE_KEEP").is_ok_and(|v| v == "1");
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let scratch = tempfile::tempdir().expect("temporary directory");
    let dir = |name: &str| scratch.path().join(name);

    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n} {tag}  {name}: {detail}");
        results.push((n, name, outcome));
    };

    record(1, "loss oracles", loss_oracles_and_gradients());
    record(2, "spectral norm", spectral_norm());
    record(3, "metrics oracle", metrics_oracle());
    let desk = desk_pipeline(&dir("desk"));
    record(4, "desk translator", desk_translation(&desk));
    record(5, "desk classification", desk_classification(&desk));
    record(6, "ITN harness", itn_on_analytic_victims());
    record(7, "privacy", privacy(&desk));
    record(8, "mode collapse", mode_collapse(&dir("collapse")));
    record(9, "reproducibility", reproducibility(&desk, &dir("rerun")));

    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if keep {
        println!("run directories kept under {}", scratch.keep().display());
    }
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
