//! Command-line driver for spectral-lab experiments.

use clap::{Args, Parser, Subcommand};
use spectral_lab::experiment::{self, ExperimentConfig, Prepared};
use spectral_lab::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "spectral-lab", version, about = "Sobolev norm growth and adiabatic hierarchy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues of the reference operator (CSV).
    Spectrum(Common),
    /// Cluster decomposition (JSON).
    Clusters(Common),
    /// Norm trajectory (CSV).
    Propagate(Common),
    /// Adiabatic hierarchy summary and defect reports (JSON).
    Adiabatic(Common),
    /// Full experiment: trajectory CSV and growth fit JSON.
    Growth(Common),
    /// Floquet eigenphases (CSV).
    Floquet(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel sweeps.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_path(&self.config).map_err(|e| e.at("config"))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn prepared(c: &Common) -> Result<Prepared> {
    experiment::prepare(&c.load()?)
}

fn run(command: &Command) -> Result<Vec<PathBuf>> {
    let common = match command {
        Command::Spectrum(c)
        | Command::Clusters(c)
        | Command::Propagate(c)
        | Command::Adiabatic(c)
        | Command::Growth(c)
        | Command::Floquet(c) => c,
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out: &Path = &common.out;
    match command {
        Command::Spectrum(c) => {
            let p = prepared(c)?;
            let csv = experiment::spectrum_csv(&p).map_err(|e| e.at("spectrum"))?;
            Ok(vec![experiment::write_text(out, &p.config.output.spectrum, &csv)?])
        }
        Command::Clusters(c) => {
            let p = prepared(c)?;
            let dec = experiment::clusters(&p)?;
            Ok(vec![experiment::write_json(out, &p.config.output.clusters, &dec)?])
        }
        Command::Propagate(c) => {
            let p = prepared(c)?;
            let traj = experiment::trajectory(&p)?;
            let csv = traj.to_csv().map_err(|e| e.at("output"))?;
            Ok(vec![experiment::write_text(out, &p.config.output.trajectory, &csv)?])
        }
        Command::Adiabatic(c) => {
            let p = prepared(c)?;
            let (_, report) = experiment::hierarchy(&p)?
                .ok_or_else(|| Error::Config("the configuration has no adiabatic section".into()).at("config"))?;
            Ok(vec![experiment::write_json(out, &p.config.output.hierarchy, &report)?])
        }
        Command::Growth(c) => {
            let art = experiment::run_experiment(&c.load()?, out)?;
            Ok([art.hierarchy, art.trajectory, art.fit].into_iter().flatten().collect())
        }
        Command::Floquet(c) => {
            let p = prepared(c)?;
            let f = experiment::floquet(&p)?;
            let mut buf = Vec::new();
            f.write_csv_to(&mut buf).map_err(|e| e.at("output"))?;
            let csv = String::from_utf8(buf).expect("csv output is utf-8");
            Ok(vec![experiment::write_text(out, &p.config.output.floquet, &csv)?])
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
