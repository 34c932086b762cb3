use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nvas::checkpoint;
use nvas::config::{GenConfig, TrainConfig};
use nvas::dataset::{gen_dataset, load_scenes, Dataset, Split};
use nvas::experiments::{ablate, run_baselines, train_config_for, write_json, write_rows_csv, write_scores_csv, AblationSpec, ReportRow};
use nvas::plot::plot_waveforms;
use nvas::train::{evaluate, prepare_eval, train};
use nvas_core::model::FeatureSet;

#[derive(Parser)]
#[command(name = "nvas", version, about = "Binaural synthesis from mono audio and scene features")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic dataset from scene files.
    GenData {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        clips: usize,
        /// Generation config (key = value); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and save its best-validation checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "rgb,dep,sem")]
        features: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Training log CSV; defaults to `<out>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long)]
        report: PathBuf,
        /// Optional per-clip CSV.
        #[arg(long)]
        per_clip: Option<PathBuf>,
    },
    /// Train every feature subset for each seed and tabulate validation scores.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score the signal-only baselines on the validation split.
    Baselines {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot ground truth, prediction and baseline waveforms for some clips.
    Plot {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        clips: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default training or generation config.
    Config {
        #[arg(long, default_value = "train")]
        kind: String,
    },
}

fn json_sibling(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn train_config(ds: &Dataset, file: Option<&Path>) -> Result<TrainConfig> {
    match file {
        Some(p) => Ok(TrainConfig::from_text(&fs::read_to_string(p).with_context(|| p.display().to_string())?)?),
        None => Ok(train_config_for(ds)),
    }
}

fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_rows_csv(path, rows)?;
    write_json(&json_sibling(path), &rows)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { scenes, out, seed, clips, config } => {
            let cfg = match config {
                Some(p) => GenConfig::from_text(&fs::read_to_string(&p).with_context(|| p.display().to_string())?)?,
                None => GenConfig::default(),
            };
            let scenes = load_scenes(&scenes)?;
            if scenes.is_empty() {
                bail!("no scene files found");
            }
            let m = gen_dataset(&scenes, &out, &cfg, seed, clips)?;
            println!("wrote {} clips ({} train, {} val) to {}", m.clips.len(), m.split.train.len(), m.split.val.len(), out.display());
        }
        Cmd::Train { data, features, seed, out, config, steps, log } => {
            let ds = Dataset::open(&data)?;
            let mut cfg = train_config(&ds, config.as_deref())?;
            cfg.features = FeatureSet::parse(&features)?;
            cfg.seed = seed;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            let outcome = train(&ds, &cfg)?;
            checkpoint::save(&out, &cfg, &outcome.best)?;
            let log_path = log.unwrap_or_else(|| PathBuf::from(format!("{}.log.csv", out.display())));
            fs::write(&log_path, outcome.log.to_csv()).with_context(|| log_path.display().to_string())?;
            if let Some(step) = outcome.diverged_at {
                bail!("training diverged at step {step}; best checkpoint (step {}) saved to {}", outcome.best_step, out.display());
            }
            println!("best step {} saved to {}", outcome.best_step, out.display());
        }
        Cmd::Eval { ckpt, data, split, report, per_clip } => {
            let (cfg, model) = checkpoint::load(&ckpt)?;
            let ds = Dataset::open(&data)?;
            let clips = prepare_eval(&ds, ds.split(split), &cfg)?;
            let r = evaluate(&model, cfg.features, &clips, &cfg.stft)?;
            if let Some(p) = per_clip {
                write_scores_csv(&p, r.per_clip.as_deref().unwrap_or_default())?;
            }
            let row = ReportRow::new(&format!("model[{}]", cfg.features), "all", &r);
            println!("{split}: MAG {:.6} ENV {:.6} over {} clips", r.mag, r.env, r.n_clips);
            write_report(&report, &[row])?;
        }
        Cmd::Ablate { data, seeds, out, config, steps } => {
            let ds = Dataset::open(&data)?;
            let mut cfg = train_config(&ds, config.as_deref())?;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            let table = ablate(&ds, &AblationSpec::all_subsets(seeds), &cfg)?;
            let csv = table.to_csv()?;
            fs::write(&out, &csv).with_context(|| out.display().to_string())?;
            write_json(&json_sibling(&out), &table)?;
            print!("{csv}");
        }
        Cmd::Baselines { data, out } => {
            let ds = Dataset::open(&data)?;
            let rows = run_baselines(&ds, &train_config_for(&ds).stft)?;
            for r in &rows {
                println!("{:<14} MAG {:.6} ENV {:.6}", r.system, r.mag, r.env);
            }
            write_report(&out, &rows)?;
        }
        Cmd::Plot { ckpt, data, clips, out } => {
            let (cfg, model) = checkpoint::load(&ckpt)?;
            let ds = Dataset::open(&data)?;
            for p in plot_waveforms(&model, &cfg, &ds, &clips, &out)? {
                println!("{}", p.display());
            }
        }
        Cmd::Config { kind } => match kind.as_str() {
            "train" => print!("{}", TrainConfig::default().to_text()),
            "gen" => print!("{}", GenConfig::default().to_text()),
            other => bail!("unknown config kind `{other}` (expected train or gen)"),
        },
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
