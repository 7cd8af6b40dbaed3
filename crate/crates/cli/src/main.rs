use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use coalflow::exec::{init_thread_pool_from_env, THREADS_ENV};
use coalflow::runner::{cmd_export, cmd_simulate, cmd_verify, RunConfig};

/// Coalescing stochastic flows: build skeletons, verify, export evaluations.
#[derive(Parser)]
#[command(name = "coalflow", version)]
struct Cli {
    /// Worker threads (also read from the environment).
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist a skeleton, export a trajectory fan and plot data.
    Simulate(RunArgs),
    /// Run verification bundles; exits nonzero iff a regular check fails.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Bundle to run (repeatable): axioms, skeleton, motion, shift,
        /// counterexample, controls. Default: the config's list.
        #[arg(long = "bundle")]
        bundles: Vec<String>,
    },
    /// Evaluate `s,x,t` queries on a skeleton snapshot.
    Export {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(o) = &args.out {
        config.out = o.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        std::env::set_var(THREADS_ENV, n.to_string());
    }
    init_thread_pool_from_env();
    match cli.command {
        Command::Simulate(args) => {
            let config = load(&args)?;
            let s = cmd_simulate(&config)?;
            println!(
                "{}: {} skeleton trajectories over {} steps; fan of {} ends in {:.3} clusters on average",
                s.model, s.skeleton_trajectories, s.skeleton_steps, s.fan_starts, s.fan_final_clusters_mean
            );
            println!("wrote {} (config {})", config.out.display(), s.config_hash);
            Ok(true)
        }
        Command::Verify { run, bundles } => {
            let mut config = load(&run)?;
            if !bundles.is_empty() {
                config.bundles = bundles;
            }
            let outcome = cmd_verify(&config)?;
            for b in &outcome.bundles {
                println!("== {}", b.name);
                for r in &b.reports {
                    println!("{r}");
                }
            }
            println!(
                "checks pass: {}; controls fail as designed: {}",
                outcome.checks_pass(),
                outcome.controls_behave()
            );
            Ok(outcome.checks_pass())
        }
        Command::Export { snapshot, queries, out } => {
            let n = cmd_export(&snapshot, &queries, &out)?;
            println!("wrote {n} rows to {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
