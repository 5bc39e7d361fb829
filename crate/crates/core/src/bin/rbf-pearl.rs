use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rbf_pearl::config::RunConfig;
use rbf_pearl::harness;

#[derive(Parser)]
#[command(name = "rbf-pearl", version, about = "Meta-RL training, evaluation and reporting")]
struct Cli {
    /// Worker threads for data collection and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train one seed to the configured step budget.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Meta-test a checkpoint on its test tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-task SAC trained on 200 observations, over the test tasks.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plots and the final-performance table from run directories.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Collapse metrics, latent scatter and RBF activations of a checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(o) = out {
        cfg.run.out_dir = o;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Train { config, seed, out, resume } => {
            let cfg = load_config(&config, seed, out)?;
            let o = harness::cmd_train(&cfg, resume)?;
            println!(
                "trained {} iterations, {} environment steps{} -> {}",
                o.iterations,
                o.env_steps,
                if o.resumed { " (resumed)" } else { "" },
                cfg.run.out_dir.display()
            );
        }
        Command::Eval { checkpoint, n_test, seed, out } => {
            let r = harness::cmd_eval(&checkpoint, n_test, seed, out.as_deref())?;
            for row in &r.rows {
                println!("task {}: exploration {:.3}, adapted {:.3}", row.task_id, row.exploration_return.unwrap_or(f64::NAN), row.ret);
            }
            println!("{}", r.summary());
        }
        Command::Baseline { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let r = harness::cmd_baseline(&cfg)?;
            for row in &r.rows {
                println!("task {}: {:.3}", row.task_id, row.ret);
            }
            println!("{}", r.summary());
        }
        Command::Report { out, runs } => {
            let r = harness::cmd_report(&runs, &out)?;
            print!("{}", r.table);
            println!("{} files written to {}", r.files.len(), out.display());
        }
        Command::Diagnose { checkpoint, out, seed } => {
            let d = harness::cmd_diagnose(&checkpoint, &out, seed)?;
            println!("{}", d.scatter_summary);
            println!("collapsed dimensions: {:?}", d.collapsed_dims);
            println!("{} files written to {}", d.files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
