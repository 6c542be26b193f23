use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtlseg::config::RunConfig;
use mtlseg::data::synth_generate;
use mtlseg::error::{Error, Result};
use mtlseg::trainer;

#[derive(Parser)]
#[command(
    name = "mtlseg",
    about = "Multi-task vessel segmentation: train, evaluate, predict, and compare"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set epochs=20 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for --set out_dir=DIR.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shorthand for --set threshold=T.
    #[arg(long)]
    threshold: Option<f64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for assignment in &self.set {
            let (key, value) = assignment.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects KEY=VALUE, got {assignment:?}"))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(t) = self.threshold {
            config.threshold = t;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration; writes best/last checkpoints and a CSV log.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// train, val, test, or all.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
    },
    /// Predict probability/mask/DT maps for a PNG image or a directory.
    Predict {
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long, default_value = "predictions")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Generate a synthetic tubular dataset (img/ + gt/).
    Synth {
        #[arg(long, default_value_t = 250)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Train proposed, multitask-fixed, and single per seed on identical
    /// splits; emit a comparison CSV and protocol manifest.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated training seeds.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
    },
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let config = args.build()?;
            let outcome = trainer::train(&config)?;
            println!(
                "trained {} epochs; best checkpoint {}",
                outcome.epochs_run,
                outcome.best_checkpoint.display()
            );
            if let Some(d) = outcome.best_val_dice {
                println!("best validation Dice {d:.4}");
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            threshold,
            out,
        } => {
            let report =
                trainer::evaluate_checkpoint(&checkpoint, &dataset, &split, threshold, &out)?;
            print!("{}", report.console_table(&split));
            println!("report written to {}", out.display());
        }
        Command::Predict {
            checkpoint,
            input,
            out,
            threshold,
        } => {
            let produced = trainer::predict_files(&checkpoint, &input, &out, threshold)?;
            println!("wrote predictions for {} image(s) to {}", produced.len(), out.display());
        }
        Command::Synth { n, size, seed, out } => {
            synth_generate(n, size, seed, &out)?;
            println!("generated {n} images of {size}x{size} under {}", out.display());
        }
        Command::Compare { config, seeds } => {
            let config = config.build()?;
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad seed {s:?}")))
                })
                .collect::<Result<_>>()?;
            let comparison = trainer::compare(&config, &seeds)?;
            println!("mode,dice,iou");
            for s in &comparison.scores {
                println!("{},{:.4},{:.4}", s.mode, s.median_dice, s.median_iou);
            }
            println!("details in {}", comparison.manifest_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
