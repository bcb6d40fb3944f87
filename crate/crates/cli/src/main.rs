use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mitodet_core::config::CONFIG_ENV;
use mitodet_core::evaluation::{self, RunParams};
use mitodet_core::scorer::{FileScorer, OracleScorer, Scorer};
use mitodet_core::{dataset, io, pipeline, Error, Manifest, PipelineConfig};
use serde::Serialize;
use thiserror::Error as ThisError;

#[derive(Parser)]
#[command(name = "mitodet", version, about = "Mitosis detection pipeline stages")]
struct Cli {
    /// Pipeline config (TOML). Missing fields take their defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Validation,
    Test,
}

/// Restricts a stage to one part of a split plan.
#[derive(Args)]
struct PartArgs {
    #[arg(long, requires = "part")]
    plan: Option<PathBuf>,
    #[arg(long, value_enum, requires = "plan")]
    part: Option<Part>,
}

impl PartArgs {
    fn ids(&self) -> CliResult<Option<Vec<String>>> {
        let (Some(path), Some(part)) = (&self.plan, self.part) else {
            return Ok(None);
        };
        let plan: dataset::SplitPlan = io::read_json(path)?;
        Ok(Some(match part {
            Part::Train => plan.train,
            Part::Validation => plan.validation,
            Part::Test => plan.test,
        }))
    }

    fn manifest(&self, path: &Path, box_size: Option<f64>) -> CliResult<Manifest> {
        let m = io::load_manifest(path, box_size)?;
        Ok(match self.ids()? {
            Some(ids) => m.select(&ids),
            None => m,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective config.
    Config {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split slides into train/validation/test, or into leave-one-scanner-out folds.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// One fold per scanner instead of a random split.
        #[arg(long)]
        scanner_folds: bool,
    },
    /// Cut slides into tiles; writes tile images and a `tiles.json` sidecar.
    Tile {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        part: PartArgs,
        /// Apply empty-tile rejection sampling for the configured epoch.
        #[arg(long)]
        sample: bool,
    },
    /// Augment tiles; writes augmented tiles and `trace.jsonl`.
    Augment {
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit anchor levels and, given tiles, per-tile labels and sampled batches.
    Anchors {
        #[arg(long)]
        tiles: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every anchor box of every level here.
        #[arg(long)]
        grid_out: Option<PathBuf>,
    },
    /// Score tiles with the oracle, or replay a predictions file.
    Score {
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Threshold and NMS a predictions file.
    Postprocess {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Evaluate predictions against a manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        part: PartArgs,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the F1-maximizing confidence threshold.
    TuneThreshold {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        part: PartArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the (threshold, P, R, F1) curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Synthetic end-to-end run.
    Demo {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, ThisError)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::Config(_) => 3,
                Error::Io { .. } => 4,
                Error::Eval(_) => 6,
                Error::Geometry(_)
                | Error::Dataset(_)
                | Error::Predictions(_)
                | Error::Json { .. }
                | Error::Image { .. } => 5,
            },
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn load_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(Error::from)?;
    Ok(cfg)
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult {
    match out {
        Some(path) => io::write_json(path, value)?,
        None => print!("{}", io::to_json_string(value)),
    }
    Ok(())
}

fn unit_threshold(t: f64) -> CliResult<f64> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(CliError::Usage(format!("threshold {t} is outside [0, 1]")))
    }
}

fn run(cli: Cli) -> CliResult {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Config { out } => {
            let text = cfg.to_toml().map_err(Error::from)?;
            match out {
                Some(path) => io::write_atomic(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Command::Split {
            manifest,
            out,
            scanner_folds,
        } => {
            let m = io::load_manifest(&manifest, Some(cfg.box_size))?;
            if scanner_folds {
                let plans = dataset::split_leave_one_scanner_out(&m.slides).map_err(Error::from)?;
                emit_json(out.as_deref(), &plans)?;
            } else {
                let plan = dataset::split_random(
                    &m.slides,
                    cfg.split.train,
                    cfg.split.validation,
                    cfg.split.test,
                    cfg.seed,
                )
                .map_err(Error::from)?;
                emit_json(out.as_deref(), &plan)?;
            }
        }
        Command::Tile {
            manifest,
            out,
            part,
            sample,
        } => {
            let m = part.manifest(&manifest, Some(cfg.box_size))?;
            let mut tiles = pipeline::tile_manifest(&m, None, &cfg)?;
            if sample {
                tiles = pipeline::sample_epoch(tiles, &cfg)?;
            }
            io::save_tiles(&out, cfg.tile_size, &tiles)?;
            eprintln!("wrote {} tiles to {}", tiles.len(), out.display());
        }
        Command::Augment { tiles, out } => {
            let (size, tiles) = io::load_tiles(&tiles, true)?;
            let (augmented, traces) = pipeline::augment_tiles(&tiles, &cfg)?;
            io::save_tiles(&out, size, &augmented)?;
            io::write_json_lines(&out.join("trace.jsonl"), &traces)?;
        }
        Command::Anchors {
            tiles,
            out,
            grid_out,
        } => {
            if let Some(path) = grid_out {
                io::write_json(&path, &pipeline::anchor_levels(&cfg)?)?;
            }
            let tiles = match tiles {
                Some(path) => io::load_tiles(&path, false)?.1,
                None => Vec::new(),
            };
            emit_json(out.as_deref(), &pipeline::anchor_report(&tiles, &cfg)?)?;
        }
        Command::Score {
            tiles,
            out,
            predictions,
        } => {
            let (_, tiles) = io::load_tiles(&tiles, false)?;
            let scorer: Box<dyn Scorer> = match predictions {
                Some(p) => Box::new(FileScorer {
                    predictions: io::load_predictions(&p)?,
                }),
                None => Box::new(OracleScorer::new(cfg.oracle).map_err(Error::from)?),
            };
            let preds = pipeline::score_tiles(&tiles, scorer.as_ref(), &cfg);
            io::save_predictions(&out, &preds)?;
        }
        Command::Postprocess {
            predictions,
            out,
            threshold,
        } => {
            let tau = unit_threshold(threshold.unwrap_or(cfg.score_threshold))?;
            let preds = io::load_predictions(&predictions)?;
            let kept = pipeline::postprocess_predictions(&preds, tau, cfg.nms_iou);
            io::save_predictions(&out, &kept)?;
        }
        Command::Evaluate {
            manifest,
            predictions,
            part,
            threshold,
            out,
        } => {
            let tau = unit_threshold(threshold.unwrap_or(cfg.score_threshold))?;
            let m = part.manifest(&manifest, None)?;
            let preds = io::load_predictions(&predictions)?;
            let report = evaluation::evaluate_run(
                &preds,
                &m,
                RunParams {
                    score_threshold: tau,
                    nms_iou: cfg.nms_iou,
                    eval_iou: cfg.eval_iou,
                },
            )
            .map_err(Error::from)?;
            if let Some(path) = out {
                io::write_json(&path, &report)?;
            }
            println!("{report}");
        }
        Command::TuneThreshold {
            manifest,
            predictions,
            part,
            out,
            curve,
        } => {
            let m = part.manifest(&manifest, None)?;
            let preds = io::load_predictions(&predictions)?;
            let search = pipeline::tune_predictions(&preds, &m, &cfg)?;
            if let Some(path) = curve {
                io::write_atomic(&path, pipeline::curve_csv(&search).as_bytes())?;
            }
            if let Some(path) = out {
                io::write_json(&path, &search.report)?;
            }
            if search.degenerate {
                eprintln!("warning: no mitotic detections; threshold is degenerate");
            }
            println!("{}", search.report);
        }
        Command::Demo { out } => {
            let outcome = pipeline::run_demo(&cfg, out.as_deref())?;
            println!(
                "slides: {} (train {}, validation {}, test {})",
                outcome.manifest.slides.len(),
                outcome.plan.train.len(),
                outcome.plan.validation.len(),
                outcome.plan.test.len()
            );
            println!("training tiles after sampling: {}", outcome.training_tiles);
            println!("{}", outcome.report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
