use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use afrl::harness;
use afrl::{Error, ExperimentConfig, Profile};

#[derive(Parser)]
#[command(name = "afrl", version, about = "Train, calibrate and evaluate switched policy ensembles for UAV deconfliction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the action-robust ensemble and the baselines for every seed.
    TrainEnsemble(Common),
    /// Measure value shift and switching rewards per attack budget.
    Calibrate(Common),
    /// Roll out fixed and switched policies under attack.
    Evaluate(Common),
    /// Run the samplers on a reward schedule and record regret.
    BanditSim(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; profile defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "fast", value_parser = ["fast", "paper"])]
    profile: String,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let profile = Profile::parse(&self.profile)?;
        match &self.config {
            Some(p) => ExperimentConfig::load(p, profile),
            None => Ok(ExperimentConfig::for_profile(profile)),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainEnsemble(c) => {
            let cfg = c.load()?;
            let runs = harness::train_ensemble(&cfg, c.seed, &c.out)?;
            for r in &runs {
                let alphas: Vec<String> = r.ensemble.alphas().iter().map(|a| format!("{a:.2}")).collect();
                println!("seed {}: ensemble alphas [{}], {} baselines", r.seed_index, alphas.join(", "), r.baselines.len());
            }
        }
        Command::Calibrate(c) => {
            let cfg = c.load()?;
            for r in harness::calibrate(&cfg, c.seed, &c.out)? {
                for rep in &r.reports {
                    let best = rep.best();
                    println!("seed {} eps {:.2}: best {} (d = {:.4})", r.seed_index, rep.epsilon, r.labels[best], rep.d[best]);
                }
            }
        }
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            for r in harness::evaluate(&cfg, c.seed, &c.out)? {
                for (label, m) in &r.results {
                    println!(
                        "seed {} {label:>14}: reward {:>9.2}  conflict-free {}/{}",
                        r.seed_index,
                        m.mean_reward(),
                        m.conflict_free(),
                        m.episodes.len()
                    );
                }
            }
        }
        Command::BanditSim(c) => {
            let cfg = c.load()?;
            for r in harness::bandit_sim(&cfg, c.seed, &c.out)? {
                let mean = r.totals.iter().sum::<f64>() / r.totals.len() as f64;
                println!("{:>10}: mean regret {mean:.1} over {} runs", r.sampler.label(), r.totals.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).context("afrl failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
