//! `skymap`: desk-scale pipeline from synthetic urban channel data to UAV
//! trajectory planning. Every stage is deterministic for a fixed seed.

use anyhow::Result;
use skymap_cli::stages;
use clap::{Parser, Subcommand};
use skymap_core::config::RunConfig;
use skymap_core::dataset::ChannelSource;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "skymap",
    about = "Simulate A2G channel data, augment it with a WGAN, train channel-knowledge maps, and plan UAV trajectories"
)]
struct Cli {
    /// JSON run configuration; omitted blocks take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configuration's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random urban scene and rasterize its height grid.
    GenEnv {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate channel samples over a scene.
    GenData {
        #[arg(long)]
        scene: PathBuf,
        /// Row count; defaults to the configuration's data.real_rows.
        #[arg(long)]
        rows: Option<usize>,
        /// Channel source: truth (geometric + shadowing) or analytic.
        #[arg(long, default_value = "truth")]
        channel: String,
        /// Additionally write a normalized copy with its stats sidecar.
        #[arg(long)]
        normalize: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train the WGAN and synthesize an augmentation dataset.
    Augment {
        #[arg(long)]
        real: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train one CKM variant (plain | kf | kd).
    TrainCkm {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long, default_value = "kd")]
        variant: String,
        /// Synthetic rows appended to the training split.
        #[arg(long)]
        synth: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a CKM checkpoint on a dataset.
    EvalCkm {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "out/eval.json")]
        out: PathBuf,
    },
    /// Train a PPO policy against an oracle (los | truth | ckm:<checkpoint>).
    TrainPpo {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "los")]
        oracle: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Plan one trajectory (bcd | bcd-loose | ppo).
    Plan {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "bcd")]
        method: String,
        /// Oracle for scoring/replay; defaults to the analytic model.
        #[arg(long)]
        oracle: Option<String>,
        /// Policy checkpoint, required for --method ppo.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the four planners over several seeds and tabulate them.
    Compare {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Aggregate CKM metrics files into a comparison table and radar plot.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::with_defaults(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    match cli.command {
        Command::GenEnv { out } => {
            let path = stages::gen_env(&cfg, &out)?;
            println!("scene written to {}", path.display());
        }
        Command::GenData {
            scene,
            rows,
            channel,
            normalize,
            out,
        } => {
            let source = match channel.as_str() {
                "truth" => ChannelSource::GroundTruth,
                "analytic" => ChannelSource::Analytic,
                other => anyhow::bail!("unknown channel source {other:?} (truth | analytic)"),
            };
            let path = stages::gen_data(&cfg, &scene, rows, source, normalize, &out)?;
            println!("dataset written to {}", path.display());
        }
        Command::Augment { real, out } => {
            let report = stages::augment(&cfg, &real, &out)?;
            println!(
                "synthesized {} rows ({} rejected by the consistency gate)",
                report.produced, report.rejected
            );
            println!(
                "corr(d,g): real {:.3}, synthetic {:.3}, sign match: {}",
                report.real_corr_distance_gain,
                report.synth_corr_distance_gain,
                report.corr_sign_matches
            );
        }
        Command::TrainCkm {
            scene,
            real,
            variant,
            synth,
            out,
        } => {
            let variant = stages::parse_variant(&variant)?;
            let metrics =
                stages::train_ckm_stage(&cfg, &scene, &real, variant, synth.as_deref(), &out)?;
            println!(
                "{}: val MSE {:.3} dB^2, MAPE {:.3}% ({} epochs, {:.1}s)",
                metrics.label,
                metrics.mse_db2,
                metrics.mape_percent,
                metrics.epochs,
                metrics.train_seconds
            );
        }
        Command::EvalCkm {
            model,
            data,
            scene,
            out,
        } => {
            let metrics = stages::eval_ckm_stage(&model, &data, &scene, &out)?;
            println!(
                "MSE {:.3} dB^2, MAPE {:.3}%",
                metrics.mse_db2, metrics.mape_percent
            );
        }
        Command::TrainPpo { scene, oracle, out } => {
            let report = stages::train_ppo_stage(&cfg, &scene, &oracle, &out)?;
            println!(
                "trained on {} for {} iterations; truth eval: t_end {:.0}s, success {:.0}%",
                report.oracle,
                report.iterations,
                report.truth_eval.mean_flight_time_s,
                100.0 * report.truth_eval.success_rate
            );
        }
        Command::Plan {
            scene,
            method,
            oracle,
            policy,
            out,
        } => {
            let summary = stages::plan_stage(
                &cfg,
                &scene,
                &method,
                oracle.as_deref(),
                policy.as_deref(),
                &out,
            )?;
            println!(
                "{}: t_end {:.0}s, throughput {:.2} Mbps, success {}",
                summary.method,
                summary.t_end_s,
                summary.throughput_bps / 1.0e6,
                summary.success
            );
        }
        Command::Compare { scene, seeds, out } => {
            let table = stages::compare_stage(&cfg, &scene, seeds, &out)?;
            println!("method,mean_t_end_s,mean_throughput_bps,success_rate");
            for row in &table.rows {
                println!(
                    "{},{:.1},{:.3e},{:.2}",
                    row.method, row.mean_t_end_s, row.mean_throughput_bps, row.success_rate
                );
            }
        }
        Command::Report { metrics, out } => {
            stages::report_stage(&metrics, &out)?;
            println!("report written to {}", out.display());
        }
    }
    Ok(())
}
