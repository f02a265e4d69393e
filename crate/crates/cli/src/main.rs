//! `mfim`: train, swap faces, mix identities, evaluate, inspect routing and
//! export the ROI mask.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfim_core::config::{load_config, RunConfig};
use mfim_core::data::{load_images, save_batch_png};
use mfim_core::generator::build_layer_table;
use mfim_core::pipeline::{evaluate_manifest, run_training, Pipeline};
use mfim_core::roi::{build_mask, write_mask_png};
use mfim_core::routing::{plan_face_swap, plan_id_mix};
use mfim_core::surrogates::AdapterRegistry;
use mfim_core::{MfimError, Result};

#[derive(Parser)]
#[command(name = "mfim", version, about = "Face swapping and identity mixing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the encoder and generator on the configured dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write an untrained checkpoint for the given configuration.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Put the source identity on the target.
    Swap {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Blend the result into the target with the ROI mask.
        #[arg(long)]
        roi: bool,
    },
    /// Combine coarse identity from one image with fine identity from another.
    Idmix {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        global: PathBuf,
        #[arg(long)]
        local: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        roi: bool,
    },
    /// Compute metrics over a CSV manifest; writes metrics.json and metrics.csv.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Routing plans.
    Routing {
        #[command(subcommand)]
        action: RoutingAction,
    },
    /// ROI mask.
    Mask {
        #[command(subcommand)]
        action: MaskAction,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanKind {
    FaceSwap,
    IdMix,
}

#[derive(Subcommand)]
enum RoutingAction {
    /// Print the per-layer routing table.
    Show {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured generator resolution.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, value_enum, default_value = "face-swap")]
        plan: PlanKind,
    },
}

#[derive(Subcommand)]
enum MaskAction {
    /// Write the mask as a 16-bit grayscale PNG.
    Export {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Canvas side; defaults to the configured ROI canvas.
        #[arg(long)]
        canvas: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
}

fn config_or_default(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let registry = AdapterRegistry::default();
    match cli.command {
        Command::Train { config, resume } => {
            let cfg = load_config(&config)?;
            let out = run_training(&cfg, resume.as_deref(), &registry)?;
            if let Some(last) = out.records.last() {
                println!(
                    "trained to step {}; total loss {:.6}",
                    last.report.step + 1,
                    last.report.total
                );
            }
            println!("log: {}", out.log.display());
            for c in out.checkpoints {
                println!("checkpoint: {}", c.display());
            }
        }
        Command::Init { config, output } => {
            let cfg = config_or_default(config.as_deref())?;
            Pipeline::new(cfg, &registry)?.to_checkpoint()?.save(&output)?;
            println!("{}", output.display());
        }
        Command::Swap {
            model,
            source,
            target,
            output,
            roi,
        } => {
            let p = Pipeline::from_checkpoint(&model.checkpoint, &registry)?;
            let r = p.resolution();
            let out = p.swap(&load_images(&[source], r)?, &load_images(&[target], r)?, roi)?;
            save_batch_png(&out, 0, &output)?;
            println!("{}", output.display());
        }
        Command::Idmix {
            model,
            global,
            local,
            target,
            output,
            roi,
        } => {
            let p = Pipeline::from_checkpoint(&model.checkpoint, &registry)?;
            let r = p.resolution();
            let out = p.idmix(
                &load_images(&[global], r)?,
                &load_images(&[local], r)?,
                &load_images(&[target], r)?,
                roi,
            )?;
            save_batch_png(&out, 0, &output)?;
            println!("{}", output.display());
        }
        Command::Evaluate {
            model,
            manifest,
            output_dir,
        } => {
            let p = Pipeline::from_checkpoint(&model.checkpoint, &registry)?;
            let report = evaluate_manifest(&p, &manifest)?;
            let (json, csv) = report.write(&output_dir)?;
            print!("{}", report.to_csv());
            println!("wrote {} and {}", json.display(), csv.display());
        }
        Command::Routing {
            action:
                RoutingAction::Show {
                    config,
                    resolution,
                    plan,
                },
        } => {
            let mut cfg = config_or_default(config.as_deref())?.generator;
            if let Some(r) = resolution {
                cfg.resolution = r;
                cfg.validate()?;
            }
            let table = build_layer_table(&cfg)?;
            let plan = match plan {
                PlanKind::FaceSwap => plan_face_swap(&cfg)?,
                PlanKind::IdMix => plan_id_mix(&cfg)?,
            };
            println!("{plan}");
            println!();
            print!("{}", plan.render_table(&table));
        }
        Command::Mask {
            action: MaskAction::Export { config, canvas, output },
        } => {
            let spec = config_or_default(config.as_deref())?.roi;
            let spec = canvas.map_or(spec.clone(), |c| spec.for_canvas(c));
            let mask = build_mask(&spec)?;
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_mask_png(&mask, &output)?;
            println!("{}", output.display());
        }
    }
    Ok(())
}

fn exit_code(e: &MfimError) -> u8 {
    match e {
        MfimError::Config(_) | MfimError::Validation(_) | MfimError::Parse { .. } => 2,
        MfimError::Checkpoint(_) | MfimError::CheckpointVersion { .. } => 3,
        MfimError::Image { .. } | MfimError::Data(_) | MfimError::Io(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string() }
            });
            eprintln!("{report}");
            ExitCode::from(exit_code(&e))
        }
    }
}
