//! Command-line experiment runner: config-driven stages from synthetic data
//! to the authentication table and the inversion attack.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{load_config, ExperimentConfig};
pub use error::{CliError, Result};
pub use manifest::ExperimentManifest;
pub use stages::{derive_seeds, Run, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "privtranslate",
    version,
    about = "Translate faces into a private domain and evaluate authentication and inversion attacks"
)]
pub struct Cli {
    /// JSON experiment config; defaults to the built-in desk-scale config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. `--set gan.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads for per-identity classifier training.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output root; runs land in `<out>/runs/<experiment_id>`.
    #[arg(long, env = "PRIVTRANSLATE_OUT", default_value = ".", global = true)]
    pub out: PathBuf,
    /// Top-level seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat an already completed stage; it and every stage depending on
    /// it are marked superseded in the manifest.
    #[arg(long, global = true)]
    pub rerun: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Render every synthetic dataset the experiment needs.
    SynthData,
    /// Replace the translator's training domains with image folders.
    Ingest,
    /// Train the translator and check it for mode collapse.
    TrainGan,
    /// Translate the enrollment, impostor and benchmark faces.
    Translate,
    /// Within- versus cross-identity similarity of translations.
    Consistency,
    /// Pretrain the shared classifier backbone.
    TrainClassifiers,
    /// Cross-validate per-identity classifiers on faces and translations.
    Evaluate,
    /// Invert the frozen translator and try to re-identify its inputs.
    Attack,
    /// Assemble the metric table and summary.
    Report,
    /// Run every stage in order, stopping at the first failure.
    Pipeline,
    /// Print the JSON Schema of the config.
    Schema,
    /// Print the resolved config.
    ShowConfig,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::SynthData => Stage::SynthData,
            Command::Ingest => Stage::Ingest,
            Command::TrainGan => Stage::TrainGan,
            Command::Translate => Stage::Translate,
            Command::Consistency => Stage::Consistency,
            Command::TrainClassifiers => Stage::TrainClassifiers,
            Command::Evaluate => Stage::Evaluate,
            Command::Attack => Stage::Attack,
            Command::Report => Stage::Report,
            Command::Pipeline | Command::Schema | Command::ShowConfig => return None,
        })
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    load_config(cli.config.as_deref(), &overrides)
}

/// Open an existing run or, for the first stage, create it. A run's config
/// is fixed at creation; later invocations must resolve to the same config.
fn open_run(cli: &Cli, config: ExperimentConfig, stage: Stage) -> Result<Run> {
    let dir = cli.out.join("runs").join(&config.experiment_id);
    if dir.join(manifest::MANIFEST).exists() {
        let manifest = ExperimentManifest::load(&dir)?;
        if manifest.config_hash != config.hash() {
            return Err(CliError::Usage(format!(
                "run {} was created with a different config (hash {}); pass the same config or another experiment_id",
                dir.display(),
                &manifest.config_hash[..12]
            )));
        }
        return Ok(Run { dir, config: manifest.config(), manifest });
    }
    if stage != Stage::SynthData {
        return Err(CliError::MissingStage { stage: stage.name().into(), missing: Stage::SynthData.name().into() });
    }
    std::fs::create_dir_all(&dir)?;
    let manifest = ExperimentManifest::new(&config, derive_seeds(config.seed));
    manifest.save(&dir)?;
    Ok(Run { dir, config, manifest })
}

fn execute(cli: &Cli) -> Result<()> {
    match cli.command {
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::schema())?);
            return Ok(());
        }
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&resolve_config(cli)?)?);
            return Ok(());
        }
        _ => {}
    }
    let config = resolve_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    pool.install(|| match cli.command.stage() {
        Some(stage) => {
            let mut run = open_run(cli, config, stage)?;
            if cli.rerun && run.manifest.completed(stage.name()) {
                run.supersede(stage)?;
            }
            run.execute(stage)
        }
        None => {
            if cli.rerun {
                return Err(CliError::Usage("--rerun applies to single stages".into()));
            }
            let dir = cli.out.join("runs").join(&config.experiment_id);
            if dir.exists() {
                return Err(CliError::RunExists(dir));
            }
            let ingest = config.data.source_dir.is_some() || config.data.target_dir.is_some();
            let mut run = open_run(cli, config, Stage::SynthData)?;
            for stage in Stage::PIPELINE {
                if stage == Stage::Ingest && !ingest {
                    continue;
                }
                run.execute(stage)?;
            }
            println!("run complete: {}", run.dir.display());
            Ok(())
        }
    })
}

/// Parse `args` and run the command. Returns the process exit code: 0 on
/// success, 2 for usage or config errors, 1 for failures during a stage.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
