use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use medfuse_pipeline::ablation::{run_grid, Grid};
use medfuse_pipeline::baseline::Method;
use medfuse_pipeline::config::RunConfig;
use medfuse_pipeline::data::Manifest;
use medfuse_pipeline::infer::{self, InferOptions};
use medfuse_pipeline::train::{self, TrainingMeta};
use medfuse_pipeline::{synth, PipelineError};

#[derive(Parser)]
#[command(name = "medfuse", version, about = "Two-source medical image fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a fusion network.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Laptop-scale profile (64×64 patches, widths 8/16/32/64, 200 steps).
        #[arg(long)]
        desk: bool,
        /// Overrides the manifest named in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides the output folder named in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fuse the test pairs of a manifest and score them.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write weight and mixer maps under `<out>/maps`.
        #[arg(long)]
        dump_maps: bool,
        /// Put the colour source's chroma back on the fused luma.
        #[arg(long)]
        color_reinject: bool,
        /// Resize sources to this square size (default: the training size).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Score already fused images (`<fused>/<id>.png`) against their sources.
    Eval {
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Fuse with a classical rule.
    Baseline {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train and score every row of an ablation grid.
    Ablate {
        #[arg(long, value_parser = parse_grid)]
        grid: Grid,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        desk: bool,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Folder for per-row runs and the consolidated CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        train: usize,
        #[arg(long, default_value_t = 4)]
        test: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: medfuse_pipeline::baseline::BaselineError| e.to_string())
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    s.parse().map_err(|e: PipelineError| e.to_string())
}

fn run_config(config: Option<&Path>, desk: bool, manifest: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<RunConfig> {
    let mut c = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if desk {
        c = c.desk();
    }
    if manifest.is_some() {
        c.manifest = manifest;
    }
    if let Some(o) = out {
        c.output_dir = o;
    }
    c.validate()?;
    Ok(c)
}

fn manifest_of(c: &RunConfig) -> anyhow::Result<Manifest> {
    let Some(path) = &c.manifest else {
        bail!("no manifest: set `manifest` in the config or pass --manifest");
    };
    Ok(Manifest::load(path)?)
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            config,
            desk,
            manifest,
            out,
            resume,
        } => {
            let c = run_config(Some(&config), desk, manifest, out)?;
            let m = manifest_of(&c)?;
            let report = train::train(&c, &m, resume.as_deref())?;
            println!(
                "trained {} steps; last checkpoint {}, best {} (epoch-mean loss {})",
                report.steps,
                report.last.display(),
                report.best.display(),
                report.best_total.map_or("n/a".into(), |b| b.to_string())
            );
        }
        Command::Infer {
            checkpoint,
            manifest,
            out,
            dump_maps,
            color_reinject,
            size,
        } => {
            let (net, sidecar) = infer::load_model(&checkpoint)?;
            let trained_size = serde_json::from_value::<TrainingMeta>(sidecar.training)
                .ok()
                .map(|m| m.config.image_size);
            let opts = InferOptions {
                dump_maps,
                color_reinject,
                size: size.or(trained_size),
            };
            let m = Manifest::load(&manifest)?;
            let report = infer::infer(&net, &m, &out, &opts)?;
            println!(
                "fused {} pairs ({} skipped) into {}",
                report.records.len(),
                report.skipped.len(),
                out.display()
            );
        }
        Command::Eval {
            fused,
            manifest,
            out,
            size,
        } => {
            let m = Manifest::load(&manifest)?;
            let report = infer::eval(&fused, &m, size)?;
            match out {
                Some(p) => infer::write_report(&p, &report)?,
                None => print!("{}", report.to_csv()),
            }
        }
        Command::Baseline {
            method,
            manifest,
            out,
            size,
        } => {
            let m = Manifest::load(&manifest)?;
            let report = infer::baseline(method, &m, &out, size)?;
            println!("{}: fused {} pairs into {}", method.name(), report.records.len(), out.display());
        }
        Command::Ablate {
            grid,
            config,
            desk,
            manifest,
            out,
        } => {
            let c = run_config(config.as_deref(), desk, manifest, None)?;
            let m = manifest_of(&c)?;
            let dir = out.unwrap_or_else(|| c.output_dir.join("ablation"));
            let (report, path) = run_grid(&c, &m, grid, &dir)?;
            let failed = report
                .rows
                .iter()
                .filter(|r| matches!(r.outcome, medfuse_pipeline::ablation::RowOutcome::Failed(_)))
                .count();
            println!("{} rows ({failed} failed) written to {}", report.rows.len(), path.display());
        }
        Command::Synth {
            out,
            train,
            test,
            size,
            seed,
        } => {
            let m = synth::write_set(&out, train, test, size, seed)
                .with_context(|| format!("writing synthetic set to {}", out.display()))?;
            println!("{} pairs and manifest.json written to {}", m.entries.len(), out.display());
        }
    }
    Ok(())
}
