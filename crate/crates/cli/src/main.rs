use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use twinmap::gp::{precompute_solver, PosteriorField};
use twinmap::harness::{init_thread_pool_from_env, mae, measurement_noise, run_experiment, ExperimentConfig, Twin};
use twinmap::prior::GpPrior;
use twinmap::propagate::channel_power_matrix;
use twinmap::scene::{sample_beta, BetaDraw};
use twinmap::select::{greedy_select, lazy_greedy_select, random_select, read_plan_indices};
use twinmap::stats::{build_dataset, QuantileDataset};

#[derive(Parser)]
#[command(name = "twinmap", version, about = "Twin-informed prediction of spatial channel statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Lazy,
    Greedy,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment described by a JSON config.
    Run { config: PathBuf },
    /// Trace one scene realization and dump its power matrix.
    Trace {
        #[arg(long)]
        scene: PathBuf,
        /// Realization seed; omit for the nominal scene.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 2.0)]
        pos_bound: f64,
        #[arg(long, default_value_t = twinmap::propagate::DEFAULT_MAX_ORDER)]
        max_order: usize,
        #[arg(long, default_value = "power.csv")]
        out: PathBuf,
        /// Also write the log-quantile dataset here.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
    },
    /// Choose probing locations from a cached prior.
    Select {
        /// Prior directory written by `run` (contains mean.csv, cov.bin).
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, value_enum, default_value_t = Method::Lazy)]
        method: Method,
        /// Seed for `--method random`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "plan.csv")]
        out: PathBuf,
    },
    /// Condition a cached prior on noisy readings of a target dataset.
    Predict {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Log-quantile dataset CSV (as written by `trace --dataset`).
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// Seed of the synthetic measurement noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "posterior.csv")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    init_thread_pool_from_env();
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let out = run_experiment(&cfg).context("running experiment")?;
            println!("scheme,budget,mae_median,meta_probability,normalized_rate_median");
            for r in &out.summary {
                println!(
                    "{},{},{:.4},{:.4},{:.4}",
                    r.scheme, r.budget, r.mae_median, r.meta_probability, r.normalized_rate_median
                );
            }
            info!("artifacts in {}", out.output_dir.display());
        }
        Command::Trace {
            scene,
            seed,
            pos_bound,
            max_order,
            out,
            dataset,
            epsilon,
        } => {
            let twin = Twin::load(&scene, None).with_context(|| format!("loading {}", scene.display()))?;
            let beta = match seed {
                Some(s) => sample_beta(&twin.scene, s, pos_bound),
                None => BetaDraw::nominal(&twin.scene),
            };
            let power = channel_power_matrix(&twin.scene, &twin.grid, &beta, max_order);
            power.write_csv(&out)?;
            let (n, m) = power.shape();
            info!("wrote {n} subcarriers x {m} locations to {}", out.display());
            if let Some(path) = dataset {
                let d = build_dataset(&power, epsilon)?;
                d.write_csv(&path, &twin.grid)?;
                info!("{} of {m} locations hit the power floor", d.floored.len());
            }
        }
        Command::Select {
            prior,
            k,
            noise,
            method,
            seed,
            out,
        } => {
            let (p, points) = GpPrior::<f64>::read_cache(&prior)?;
            let plan = match method {
                Method::Lazy => lazy_greedy_select(&p, k, noise)?,
                Method::Greedy => greedy_select(&p, k, noise)?,
                Method::Random => random_select(p.len(), k, seed)?,
            };
            plan.write_csv(&out, &points)?;
            info!("{} gain evaluations; plan written to {}", plan.evaluations, out.display());
        }
        Command::Predict {
            prior,
            plan,
            target,
            noise,
            seed,
            out,
        } => {
            let (p, points) = GpPrior::<f64>::read_cache(&prior)?;
            let plan = read_plan_indices(&plan)?;
            let truth = QuantileDataset::<f64>::read_csv(&target, 0.05)?;
            if truth.len() != p.len() {
                bail!("target has {} locations but the prior has {}", truth.len(), p.len());
            }
            let e = measurement_noise(seed, p.len(), noise);
            let y: Vec<f64> = plan.iter().map(|&a| truth.values[a] + e[a]).collect();
            let post: PosteriorField = precompute_solver(&p, &plan, &vec![noise; plan.len()])?.posterior(&p, &y, None)?;
            post.write_csv(&out, &points)?;
            println!("mae,{}", mae(&post.mean, &truth.values));
        }
    }
    Ok(())
}
