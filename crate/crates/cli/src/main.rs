use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use multisoliton_cli::commands;
use multisoliton_cli::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "multisoliton",
    version,
    about = "Multi-soliton blow-up profiles for the focusing wave equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the numerical invariants.
    Verify(Common),
    /// Integrate the reduced ODE for the soliton centers.
    Reduced(Common),
    /// Simulate the PDE and track the modulation parameters.
    Simulate(Common),
    /// Search the shooting ball for a long-lived initial datum.
    Shoot(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; a small built-in demo when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Collocation nodes.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Worker threads; MULTISOLITON_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::demo(),
        };
        let o = Overrides {
            out: self.out.clone(),
            n: self.n,
            s0: self.s0,
            horizon: self.horizon,
            threads: self.threads,
        };
        let env = std::env::var("MULTISOLITON_THREADS").ok();
        cfg.apply(&o, env.as_deref())?;
        if cfg.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build_global()?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify(c) => {
            let rep = commands::cmd_verify(&c.load()?)?;
            print!("{}", rep.table());
            Ok(rep.all_pass())
        }
        Command::Reduced(c) => {
            let cfg = c.load()?;
            let rows = commands::cmd_reduced(&cfg)?;
            println!(
                "wrote {} rows to {}",
                rows.len(),
                cfg.out.join("reduced.csv").display()
            );
            Ok(true)
        }
        Command::Simulate(c) => {
            let cfg = c.load()?;
            let s = commands::cmd_simulate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(true)
        }
        Command::Shoot(c) => {
            let cfg = c.load()?;
            let rep = commands::cmd_shoot(&cfg)?;
            for l in &rep.levels {
                println!(
                    "level {}: best cell {:?}, exit s = {:.4}",
                    l.level, l.best_cell, l.best_exit_s
                );
            }
            println!("best ball point {:?}: {:?}", rep.best_ball, rep.best_exit);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
