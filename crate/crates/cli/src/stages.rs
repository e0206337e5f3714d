//! The experiment stages. Each reads its inputs from the run directory and
//! writes its outputs back there, so any stage can be re-run on its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use privtranslate::attack::{
    dual_reverse_probe, itn_attack, naive_inverse_attack, reconstruction_metrics, reidentification_rate, AttackConfig,
    AttackMode, AttackReport,
};
use privtranslate::authclass::{
    crossval_experiment, load_backbone, pretrain_backbone, save_backbone, write_scores_csv, AuthTable, BackboneMode,
    ClassifierConfig, Metric, MetricsReport,
};
use privtranslate::data::{
    augment_identity, load_dataset_dir, load_image_folder, save_dataset, save_grid, synth_identity_dataset,
    DomainDataset, ImageBatch,
};
use privtranslate::gan_core::save_networks;
use privtranslate::seeds::stage_seed;
use privtranslate::trainers::{
    detect_mode_collapse, load_model, save_model, steps_per_epoch, train, TrainConfig, TrainOptions,
};
use privtranslate::translate::{consistency_report, translate, ConsistencyReport};
use serde::Serialize;

use crate::config::{ExperimentConfig, SetSize};
use crate::error::{CliError, Result};
use crate::manifest::{now, ExperimentManifest, StageRecord, StageStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    SynthData,
    Ingest,
    TrainGan,
    Translate,
    Consistency,
    TrainClassifiers,
    Evaluate,
    Attack,
    Report,
}

impl Stage {
    /// Order of `pipeline`; `ingest` joins it only when image folders are
    /// configured.
    pub const PIPELINE: [Stage; 9] = [
        Stage::SynthData,
        Stage::Ingest,
        Stage::TrainGan,
        Stage::Consistency,
        Stage::Translate,
        Stage::TrainClassifiers,
        Stage::Evaluate,
        Stage::Attack,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SynthData => "synth-data",
            Stage::Ingest => "ingest",
            Stage::TrainGan => "train-gan",
            Stage::Translate => "translate",
            Stage::Consistency => "consistency",
            Stage::TrainClassifiers => "train-classifiers",
            Stage::Evaluate => "evaluate",
            Stage::Attack => "attack",
            Stage::Report => "report",
        }
    }

    fn requires(self) -> &'static [Stage] {
        match self {
            Stage::SynthData => &[],
            Stage::Ingest | Stage::TrainGan | Stage::TrainClassifiers => &[Stage::SynthData],
            Stage::Translate | Stage::Consistency => &[Stage::TrainGan],
            Stage::Evaluate => &[Stage::Translate, Stage::TrainClassifiers],
            Stage::Attack => &[Stage::TrainGan, Stage::TrainClassifiers],
            Stage::Report => &[Stage::Evaluate],
        }
    }
}

/// Names of the per-stage seeds, all derived from the top-level seed.
const SEED_NAMES: [&str; 13] = [
    "data.faces",
    "data.target",
    "data.benchmark",
    "data.users",
    "data.augment",
    "data.pool",
    "data.aux-faces",
    "data.aux-target",
    "data.attacker",
    "train-gan",
    "backbone",
    "classifier",
    "attack",
];

pub fn derive_seeds(seed: u64) -> BTreeMap<String, u64> {
    SEED_NAMES.iter().map(|n| (n.to_string(), stage_seed(seed, n))).collect()
}

/// Run directory, config and manifest of one experiment.
pub struct Run {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub manifest: ExperimentManifest,
}

/// Paths a stage produced, relative to the run directory. Kept even when
/// the stage fails so the manifest shows partial results.
#[derive(Default)]
struct Outputs {
    checkpoints: Vec<String>,
    reports: Vec<String>,
}

impl Run {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn seed(&self, name: &str) -> u64 {
        self.manifest.seeds[name]
    }

    /// Mark `stage` and every completed stage downstream of it as
    /// superseded so they can run again.
    pub fn supersede(&mut self, stage: Stage) -> Result<()> {
        let mut stale = vec![stage];
        for s in Stage::PIPELINE {
            if s.requires().iter().any(|r| stale.contains(r)) && !stale.contains(&s) {
                stale.push(s);
            }
        }
        let names: Vec<&str> = stale.iter().map(|s| s.name()).collect();
        for record in &mut self.manifest.stages {
            if record.status == StageStatus::Completed && names.contains(&record.name.as_str()) {
                info!("stage {} superseded", record.name);
                record.status = StageStatus::Superseded;
            }
        }
        self.manifest.save(&self.dir)
    }

    pub fn execute(&mut self, stage: Stage) -> Result<()> {
        if let Some(missing) = stage.requires().iter().find(|s| !self.manifest.completed(s.name())) {
            return Err(CliError::MissingStage { stage: stage.name().into(), missing: missing.name().into() });
        }
        if self.manifest.completed(stage.name()) {
            return Err(CliError::StageDone(self.dir.clone(), stage.name().into()));
        }
        if stage == Stage::Ingest && self.manifest.completed(Stage::TrainGan.name()) {
            return Err(CliError::Usage("ingest must run before train-gan".into()));
        }
        info!("stage {} starting", stage.name());
        let started_at = now();
        let clock = Instant::now();
        let mut out = Outputs::default();
        let result = match stage {
            Stage::SynthData => self.synth_data(&mut out),
            Stage::Ingest => self.ingest(&mut out),
            Stage::TrainGan => self.train_gan(&mut out),
            Stage::Translate => self.translate(&mut out),
            Stage::Consistency => self.consistency(&mut out),
            Stage::TrainClassifiers => self.train_classifiers(&mut out),
            Stage::Evaluate => self.evaluate(&mut out),
            Stage::Attack => self.attack(&mut out),
            Stage::Report => self.report(&mut out),
        };
        let seconds = clock.elapsed().as_secs_f64();
        out.checkpoints.retain(|p| self.dir.join(p).exists());
        out.reports.retain(|p| self.dir.join(p).exists());
        self.manifest.stages.push(StageRecord {
            name: stage.name().into(),
            status: if result.is_ok() { StageStatus::Completed } else { StageStatus::Failed },
            started_at,
            finished_at: now(),
            seconds,
            checkpoints: out.checkpoints,
            reports: out.reports,
            message: result.as_ref().err().map(|e| e.to_string()),
        });
        self.manifest.save(&self.dir)?;
        info!("stage {} finished in {seconds:.1}s", stage.name());
        result
    }

    fn synth(&self, size: SetSize, domain: &str, seed: &str) -> Result<DomainDataset> {
        Ok(synth_identity_dataset(size.identities, size.per_identity, self.config.size, domain, self.seed(seed))?)
    }

    fn save(&self, ds: &DomainDataset, rel: &str, out: &mut Outputs) -> Result<()> {
        let dir = self.path(rel);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        save_dataset(ds, &dir)?;
        out.reports.push(rel.into());
        Ok(())
    }

    fn load(&self, rel: &str) -> Result<DomainDataset> {
        Ok(load_dataset_dir(&self.path(rel))?)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T, out: &mut Outputs) -> Result<()> {
        let path = self.path(rel);
        std::fs::create_dir_all(path.parent().expect("relative path has a parent"))?;
        std::fs::write(&path, serde_json::to_vec_pretty(value)?)?;
        out.reports.push(rel.into());
        Ok(())
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<T> {
        Ok(serde_json::from_slice(&std::fs::read(self.path(rel))?)?)
    }

    fn synth_data(&mut self, out: &mut Outputs) -> Result<()> {
        let c = &self.config;
        let faces = self.synth(c.data.faces, "faceoid", "data.faces")?;
        self.save(&faces, "data/faces", out)?;
        let target = self.synth(c.data.target, &c.data.target_domain, "data.target")?;
        self.save(&target, "data/target", out)?;
        let bench = self.synth(c.consistency.benchmark, "faceoid", "data.benchmark")?;
        self.save(&bench, "data/benchmark", out)?;

        let raw = self.synth(c.auth.users, "faceoid", "data.users")?;
        let copies = c.auth.copies;
        let augment = c.auth.augment.with_seed(self.seed("data.augment"));
        let images = augment_identity(&raw.images, &augment, copies)?;
        let ids = raw
            .identity_ids
            .as_ref()
            .expect("synthetic data has identities")
            .iter()
            .flat_map(|&i| vec![i; copies])
            .collect();
        self.save(&DomainDataset::new("faceoid", images, Some(ids))?, "data/users", out)?;

        let pool = self.synth(c.auth.pool, "faceoid", "data.pool")?;
        self.save(&pool, "data/pool", out)?;
        let aux_faces = self.synth(c.auth.aux, "faceoid", "data.aux-faces")?;
        self.save(&aux_faces, "data/aux_faces", out)?;
        let aux_target = self.synth(c.auth.aux, &c.data.target_domain, "data.aux-target")?;
        self.save(&aux_target, "data/aux_target", out)?;
        let attacker = self.synth(c.attack.attacker_faces, "faceoid", "data.attacker")?;
        self.save(&attacker, "data/attacker", out)
    }

    fn ingest(&mut self, out: &mut Outputs) -> Result<()> {
        let d = &self.config.data;
        let (Some(src), Some(dst)) = (&d.source_dir, &d.target_dir) else {
            return Err(CliError::Config("data.source_dir and data.target_dir: both are required by ingest".into()));
        };
        let faces = load_image_folder(src, self.config.size, "faces")?;
        let target = load_image_folder(dst, self.config.size, "private")?;
        for (name, ds) in [("source", &faces), ("target", &target)] {
            info!("ingested {} {name} images ({} undecodable)", ds.len(), ds.skipped_files);
        }
        self.save(&faces, "data/faces", out)?;
        self.save(&target, "data/target", out)
    }

    fn gan_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed("train-gan"), ..self.config.gan.clone() }
    }

    fn train_gan(&mut self, out: &mut Outputs) -> Result<()> {
        let faces = self.load("data/faces")?;
        let target = self.load("data/target")?;
        let cfg = self.gan_config();
        let options = TrainOptions { checkpoint_dir: Some(self.path("gan/checkpoints")) };
        let (model, history) = train(&faces, &target, &cfg, &options)?;
        out.checkpoints.extend(["gan/checkpoints/last".into(), "gan/checkpoints/best".into()]);
        save_model(&model, &self.path("gan/model"))?;
        out.checkpoints.push("gan/model".into());
        history.write_jsonl(&self.path("gan/history.jsonl"))?;
        out.reports.push("gan/history.jsonl".into());
        let n = faces.len().min(8);
        save_grid(
            &[&faces.images.slice(0, n), &translate(&model, &faces.images.slice(0, n))?],
            &self.path("gan/samples.png"),
        )?;
        out.reports.push("gan/samples.png".into());

        let c = self.config.collapse;
        let verdict = detect_mode_collapse(&history, c.epsilon, c.window);
        let steps = steps_per_epoch(faces.len(), target.len(), cfg.batch_size);
        let epoch = verdict.first_step.map(|s| (s as usize - 1) / steps);
        #[derive(Serialize)]
        struct Collapse {
            collapsed: bool,
            first_step: Option<u64>,
            epoch: Option<usize>,
            epsilon: f64,
            window: usize,
            steps_per_epoch: usize,
        }
        let record = Collapse {
            collapsed: verdict.collapsed,
            first_step: verdict.first_step,
            epoch,
            epsilon: c.epsilon,
            window: c.window,
            steps_per_epoch: steps,
        };
        self.write_json("gan/collapse.json", &record, out)?;
        match (verdict.first_step, epoch) {
            (Some(step), Some(epoch)) => {
                Err(CliError::ModeCollapse { epsilon: c.epsilon, window: c.window, step, epoch })
            }
            _ => Ok(()),
        }
    }

    fn victim(&self) -> Result<privtranslate::trainers::TranslationModel> {
        Ok(load_model(&self.path("gan/model"))?)
    }

    fn translate(&mut self, out: &mut Outputs) -> Result<()> {
        let model = self.victim()?;
        for name in ["users", "pool", "benchmark"] {
            let ds = self.load(&format!("data/{name}"))?;
            let images = translate(&model, &ds.images)?;
            let translated = DomainDataset::new(model.target_domain.clone(), images, ds.identity_ids.clone())?;
            self.save(&translated, &format!("translate/{name}"), out)?;
            if name == "benchmark" {
                let n = ds.len().min(self.config.attack.grid_rows);
                save_grid(&[&ds.images.slice(0, n), &translated.images.slice(0, n)], &self.path("translate/grid.png"))?;
                out.reports.push("translate/grid.png".into());
            }
        }
        Ok(())
    }

    fn consistency(&mut self, out: &mut Outputs) -> Result<()> {
        let model = self.victim()?;
        let bench = self.load("data/benchmark")?;
        let report = consistency_report(&model, &bench, self.config.consistency.similarity)?;
        info!("consistency ratio {:.4}", report.ratio);
        self.write_json("consistency/consistency.json", &report, out)
    }

    fn train_classifiers(&mut self, out: &mut Outputs) -> Result<()> {
        let faces = self.load("data/aux_faces")?;
        let target = self.load("data/aux_target")?;
        let offset = faces.identities().into_iter().max().map_or(0, |m| m + 1);
        let ids = faces
            .identity_ids
            .iter()
            .flatten()
            .copied()
            .chain(target.identity_ids.iter().flatten().map(|i| i + offset))
            .collect();
        let aux = DomainDataset::new("mixed", ImageBatch::concat(&[&faces.images, &target.images])?, Some(ids))?;
        let backbone = pretrain_backbone(&aux, &self.config.auth.backbone, self.seed("backbone"))?;
        save_backbone(&backbone, &self.path("classifiers/backbone"))?;
        out.checkpoints.push("classifiers/backbone".into());
        Ok(())
    }

    fn classifier_config(&self, mode: BackboneMode) -> ClassifierConfig {
        ClassifierConfig { backbone_mode: mode, seed: self.seed("classifier"), ..self.config.auth.classifier.clone() }
    }

    fn evaluate(&mut self, out: &mut Outputs) -> Result<()> {
        let backbone = load_backbone(&self.path("classifiers/backbone"))?;
        let k = self.config.auth.k;
        let sets = [
            ("faces", self.load("data/users")?, self.load("data/pool")?.images),
            ("translated", self.load("translate/users")?, self.load("translate/pool")?.images),
        ];
        let mut reports = Vec::new();
        for mode in [BackboneMode::Frozen, BackboneMode::Trainable] {
            for (label, users, pool) in &sets {
                let clock = Instant::now();
                let report = crossval_experiment(&backbone, users, pool, k, &self.classifier_config(mode), label)?;
                info!(
                    "{} backbone, {label}: F1 {:.4} ({:.1}s)",
                    mode.as_str(),
                    report.average.f1,
                    clock.elapsed().as_secs_f64()
                );
                self.write_json(&format!("eval/{}_{label}.json", mode.as_str()), &report, out)?;
                reports.push(report);
            }
        }
        write_scores_csv(&self.path("eval/scores.csv"), &reports)?;
        out.reports.push("eval/scores.csv".into());
        Ok(())
    }

    fn attack(&mut self, out: &mut Outputs) -> Result<()> {
        let victim = self.victim()?;
        let backbone = load_backbone(&self.path("classifiers/backbone"))?;
        let bench = self.load("data/benchmark")?;
        let attacker = self.load("data/attacker")?;
        // First half of each identity's images are probes, the rest the gallery.
        let (mut probe_idx, mut gallery_idx) = (Vec::new(), Vec::new());
        for id in bench.identities() {
            let idx = bench.indices_of(id);
            let half = idx.len() / 2;
            probe_idx.extend_from_slice(&idx[..half]);
            gallery_idx.extend_from_slice(&idx[half..]);
        }
        let probes = bench.subset(&probe_idx);
        let gallery = bench.subset(&gallery_idx);
        let true_ids = probes.identity_ids.clone().expect("benchmark has identities");
        let params = AttackConfig { seed: self.seed("attack"), ..self.config.attack.params.clone() };
        let translated = translate(&victim, &probes.images)?;
        let reconstructed = match params.mode {
            AttackMode::Itn => {
                let inverse = itn_attack(&victim, &attacker.images, &params)?;
                save_networks(
                    &self.path("attack/inverse"),
                    &[("inverse", &inverse.net)],
                    serde_json::json!({ "epoch_losses": inverse.epoch_losses, "victim": inverse.victim_fingerprint }),
                )?;
                out.checkpoints.push("attack/inverse".into());
                translate(&inverse, &translated)?
            }
            AttackMode::Naive => {
                let target = self.load("data/target")?;
                let (model, _) = naive_inverse_attack(&target, &attacker, &self.gan_config(), &params)?;
                save_model(&model, &self.path("attack/naive_model"))?;
                out.checkpoints.push("attack/naive_model".into());
                translate(&model, &translated)?
            }
        };
        let recon = reconstruction_metrics(&probes.images, &reconstructed)?;
        let reid = reidentification_rate(&reconstructed, &gallery, &true_ids, &backbone)?;
        info!(
            "attack: mse {:.4}, ssim {:.3}, re-identification {:.3} (chance {:.3})",
            recon.mse, recon.ssim, reid.rate, reid.chance
        );
        let report = AttackReport::new(params.mode, &params, victim.fingerprint(), &recon, &reid, &true_ids);
        report.write(
            &self.path("attack"),
            &probes.images,
            &translated,
            &reconstructed,
            self.config.attack.grid_rows,
        )?;
        out.reports.extend(["attack/attack_report.json".into(), "attack/reconstructions.png".into()]);
        if victim.reverse.is_some() {
            let dual = dual_reverse_probe(&victim, &probes.images)?;
            self.write_json("attack/dual_reverse.json", &dual, out)?;
        }
        Ok(())
    }

    fn report(&mut self, out: &mut Outputs) -> Result<()> {
        let load = |mode: &str, label: &str| self.read_json::<MetricsReport>(&format!("eval/{mode}_{label}.json"));
        let table = AuthTable::new(
            load("frozen", "faces")?,
            load("frozen", "translated")?,
            load("trainable", "faces")?,
            load("trainable", "translated")?,
        )?;
        self.write_json("report/metrics_report.json", &table, out)?;
        write_table_csv(&self.path("report/metrics_report.csv"), &table)?;
        out.reports.push("report/metrics_report.csv".into());

        let optional =
            |rel: &str| self.path(rel).exists().then(|| self.read_json::<serde_json::Value>(rel)).transpose();
        let consistency: Option<ConsistencyReport> =
            optional("consistency/consistency.json")?.map(serde_json::from_value).transpose()?;
        let attack: Option<AttackReport> =
            optional("attack/attack_report.json")?.map(serde_json::from_value).transpose()?;
        let f1 = table.row(Metric::F1);
        let summary = serde_json::json!({
            "experiment_id": self.config.experiment_id,
            "f1": {
                "frozen_faces": f1.frozen_faces,
                "frozen_translated": f1.frozen_translated,
                "trainable_faces": f1.trainable_faces,
                "trainable_translated": f1.trainable_translated,
            },
            "consistency_ratio": consistency.as_ref().map(|c| c.ratio),
            "reidentification_rate": attack.as_ref().map(|a| a.reidentification_rate),
            "reidentification_chance": attack.as_ref().map(|a| a.chance_rate),
        });
        self.write_json("report/summary.json", &summary, out)?;
        println!("{}", format_table(&table));
        Ok(())
    }
}

fn write_table_csv(path: &Path, table: &AuthTable) -> Result<()> {
    let mut text = String::from(
        "metric,frozen_faces,frozen_translated,trainable_faces,trainable_translated,\
         reference_frozen_faces,reference_frozen_flowers,reference_trainable_faces,reference_trainable_flowers\n",
    );
    for r in &table.rows {
        let values = [r.frozen_faces, r.frozen_translated, r.trainable_faces, r.trainable_translated];
        let cells: Vec<String> = values.iter().chain(&r.reference).map(|v| format!("{v:.4}")).collect();
        text.push_str(&format!("{},{}\n", r.metric.as_str(), cells.join(",")));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Plain-text rendering of the table for the terminal.
pub fn format_table(table: &AuthTable) -> String {
    let mut s = format!("{:<10}{:>10}{:>12}{:>12}{:>12}\n", "", "frozen", "", "trainable", "");
    s.push_str(&format!("{:<10}{:>10}{:>12}{:>12}{:>12}\n", "metric", "faces", "translated", "faces", "translated"));
    for r in &table.rows {
        s.push_str(&format!(
            "{:<10}{:>10.4}{:>12.4}{:>12.4}{:>12.4}\n",
            r.metric.as_str(),
            r.frozen_faces,
            r.frozen_translated,
            r.trainable_faces,
            r.trainable_translated
        ));
    }
    s
}
