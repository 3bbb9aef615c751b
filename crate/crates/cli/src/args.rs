//! Command-line surface.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::stages::{self, Partition};
use crate::{CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "usmnet", version, about = "Data generation, training and evaluation of universal solution manifold networks")]
pub struct Cli {
    /// JSON experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Data and split seed for generate-data and nearest-pair; the single
    /// training seed for train, evaluate, infer and trace-streamlines.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Byte-identical outputs for identical inputs.
    #[arg(long, global = true)]
    pub reproducible: bool,
    /// Output directory; relative config paths resolve against it.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run full-order solves and write the snapshot corpus.
    GenerateData,
    /// Train one checkpoint per training seed.
    Train,
    /// Error metrics of trained checkpoints on a partition.
    Evaluate {
        /// Evaluate this checkpoint instead of every configured seed's.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Partition::Test)]
        partition: Partition,
    },
    /// Predict at the points of a CSV file with an `x,y` header.
    Infer {
        /// Model checkpoint (`.usmn`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cavity height, or bifurcation geometry id.
        #[arg(long)]
        geometry: String,
        /// Physical parameters, comma separated (the Reynolds number for cavities).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu_p: Vec<f64>,
        /// Query points, CSV with an `x,y` header.
        #[arg(long)]
        points: PathBuf,
    },
    /// Streamlines and a velocity raster of a model prediction.
    TraceStreamlines {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        geometry: String,
        /// Physical parameters, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu_p: Vec<f64>,
        /// Seed points (CSV with `x,y` header); a vertical line by default.
        #[arg(long)]
        seeds: Option<PathBuf>,
    },
    /// Geometries of the corpus with the closest landmark vectors.
    NearestPair,
}

impl Cli {
    /// Configuration with command-line overrides applied and validated.
    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            match self.command {
                Command::GenerateData | Command::NearestPair => cfg.seed = s,
                _ => cfg.train_seeds = vec![s],
            }
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.reproducible |= self.reproducible;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one subcommand.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve_config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    let out = cli.out.as_path();
    pool.install(|| {
        match &cli.command {
            Command::GenerateData => {
                let r = stages::generate_data(&cfg, out)?;
                println!("generated {} of {} snapshots ({} flagged)", r.generated.len(), r.requested, r.flagged.len());
            }
            Command::Train => {
                for s in stages::train(&cfg, out)? {
                    println!("seed {}: loss {:e} -> {}", s.seed, s.loss, s.checkpoint.display());
                }
            }
            Command::Evaluate { checkpoint, partition } => {
                for r in stages::evaluate(&cfg, out, checkpoint.as_deref(), *partition)? {
                    let m = r.aggregate("rmse_magnitude").map_or(f64::NAN, |a| a.median);
                    println!("{} on {}: median velocity-magnitude RMSE {m:e}", r.model_id, r.partition);
                }
            }
            Command::Infer { checkpoint, geometry, mu_p, points } => {
                let s = stages::infer(&cfg, out, checkpoint, geometry, mu_p, points)?;
                println!("{} predictions ({} failed) -> {}", s.n_points, s.n_failed, s.output.display());
            }
            Command::TraceStreamlines { checkpoint, geometry, mu_p, seeds } => {
                let s = stages::trace(&cfg, out, checkpoint, geometry, mu_p, seeds.as_deref())?;
                println!("{} streamlines, {} seeds skipped", s.n_lines, s.skipped.len());
            }
            Command::NearestPair => {
                let p = stages::nearest_pair(&cfg, out)?;
                println!("{} / {}: landmark distance {:e}", p.first, p.second, p.distance);
            }
        }
        Ok(())
    })
}
