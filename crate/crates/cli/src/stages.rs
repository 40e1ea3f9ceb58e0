//! Pipeline stages behind the subcommands. Each stage reads and writes only
//! its declared files, so tests can drive them as library calls and diff the
//! artifacts byte for byte.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use skymap_core::bcd::{plan_controller, solve_bcd, BcdVariant};
use skymap_core::ckm::{
    build_ckm, evaluate_ckm, mse_reduction, train_ckm, CkmModel, CkmVariant,
};
use skymap_core::config::{streams, RunConfig};
use skymap_core::dataset::{generate_dataset_from, pearson, ChannelSource, Dataset};
use skymap_core::geometry::{rasterize_heights, sample_environment, Scene};
use skymap_core::mdp::{
    check_feasibility, Action, AnyOracle, CkmOracle, EpisodeConfig, GroundTruthOracle,
    LosModelOracle, TrajectoryResult, UavMdp,
};
use skymap_core::ppo::{evaluate_policy, train_ppo, EvalSummary, PolicyNet};
use skymap_core::wgan::{feature_wasserstein1, generate_samples, train_wgan};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scene {}", path.display()))?;
    let scene: Scene = serde_json::from_str(&text)?;
    scene.environment.validate().map_err(anyhow::Error::from)?;
    Ok(scene)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(())
}

/// Episode configuration for a scene: config defaults with the start pinned
/// to the scene's flight floor.
pub fn episode_for(cfg: &RunConfig, scene: &Scene) -> EpisodeConfig {
    let mut episode = cfg.episode.clone();
    episode.start = skymap_core::geometry::Position::new(0.0, 0.0, scene.environment.h_min);
    episode.budget = cfg.budget;
    episode.weights = cfg.reward_weights;
    episode
}

/// `gen-env`: sample a scene and persist it with its rasterized height grid.
pub fn gen_env(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let env = sample_environment(cfg.stage_seed(streams::GEN_ENV), &cfg.env)?;
    let grid = rasterize_heights(&env, cfg.grid_width_cells, cfg.grid_depth_cells);
    let scene = Scene {
        environment: env,
        height_grid: grid,
    };
    let path = out_dir.join("scene.json");
    std::fs::write(&path, serde_json::to_string_pretty(&scene)?)?;
    Ok(path)
}

/// `gen-data`: simulate channel samples over a scene.
pub fn gen_data(
    cfg: &RunConfig,
    scene_path: &Path,
    rows: Option<usize>,
    source: ChannelSource,
    write_normalized: bool,
    out_dir: &Path,
) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let scene = load_scene(scene_path)?;
    let n = rows.unwrap_or(cfg.data.real_rows);
    let ds = generate_dataset_from(
        &scene.environment,
        &cfg.channel,
        n,
        cfg.stage_seed(streams::GEN_DATA),
        source,
    );
    let path = out_dir.join("real.csv");
    ds.write_csv(&path)?;
    if write_normalized {
        let (norm, stats) = ds.normalize();
        norm.write_csv(&out_dir.join("real.normalized.csv"))?;
        stats.save(&out_dir.join("real.stats.json"))?;
    }
    Ok(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentReport {
    pub requested: usize,
    pub produced: usize,
    pub rejected: usize,
    pub per_feature_w1: [f64; 8],
    pub real_corr_distance_gain: f64,
    pub synth_corr_distance_gain: f64,
    pub corr_sign_matches: bool,
    pub real_means: [f64; 8],
    pub synth_means: [f64; 8],
    pub real_stds: [f64; 8],
    pub synth_stds: [f64; 8],
}

fn column_moments(ds: &Dataset) -> ([f64; 8], [f64; 8]) {
    let mut means = [0.0; 8];
    let mut stds = [0.0; 8];
    for f in 0..8 {
        let col = ds.feature_column(f);
        let n = col.len().max(1) as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means[f] = mean;
        stds[f] = var.sqrt();
    }
    (means, stds)
}

/// `augment`: train the WGAN on the real data and synthesize a quality-gated
/// dataset alongside a distribution report.
pub fn augment(cfg: &RunConfig, real_csv: &Path, out_dir: &Path) -> Result<AugmentReport> {
    ensure_dir(out_dir)?;
    let real = Dataset::read_csv(real_csv)?;
    if real.is_empty() {
        bail!("real dataset {} is empty", real_csv.display());
    }
    let (norm, stats) = real.normalize();
    let mut wgan_cfg = cfg.wgan.clone();
    wgan_cfg.seed = cfg.stage_seed(streams::WGAN);
    let outcome = train_wgan(&norm, &wgan_cfg)?;
    outcome.generator.save(&out_dir.join("generator.json"))?;

    let mut history = String::from("iteration,critic_loss,generator_loss,wasserstein_estimate\n");
    for h in &outcome.history {
        history.push_str(&format!(
            "{},{},{},{}\n",
            h.iteration, h.critic_loss, h.generator_loss, h.wasserstein_estimate
        ));
    }
    std::fs::write(out_dir.join("wgan_history.csv"), history)?;
    let estimate_series: Vec<(f64, f64)> = outcome
        .history
        .iter()
        .map(|h| (h.iteration as f64, h.wasserstein_estimate.abs()))
        .collect();
    std::fs::write(
        out_dir.join("wgan_history.svg"),
        crate::svg::line_chart(
            "critic distance estimate",
            &[("abs wasserstein estimate".to_string(), estimate_series)],
        ),
    )?;

    let n_synth = (real.len() as f64 * cfg.data.synth_multiple).round() as usize;
    let (synth, gen_report) = generate_samples(
        &outcome.generator,
        n_synth,
        &stats,
        cfg.stage_seed(streams::SYNTH),
    );
    synth.write_csv(&out_dir.join("synthetic.csv"))?;
    stats.save(&out_dir.join("synthetic.stats.json"))?;

    let synth_norm = synth.normalize_with(&stats);
    let w1 = feature_wasserstein1(&norm, &synth_norm);
    let real_corr = pearson(&real.feature_column(6), &real.feature_column(7));
    let synth_corr = pearson(&synth.feature_column(6), &synth.feature_column(7));
    let (real_means, real_stds) = column_moments(&real);
    let (synth_means, synth_stds) = column_moments(&synth);
    let report = AugmentReport {
        requested: gen_report.requested,
        produced: gen_report.produced,
        rejected: gen_report.rejected,
        per_feature_w1: w1,
        real_corr_distance_gain: real_corr,
        synth_corr_distance_gain: synth_corr,
        corr_sign_matches: real_corr.signum() == synth_corr.signum(),
        real_means,
        synth_means,
        real_stds,
        synth_stds,
    };
    std::fs::write(
        out_dir.join("quality.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CkmStageMetrics {
    pub label: String,
    pub variant: String,
    pub augmented: bool,
    pub mse_db2: f64,
    pub mape_percent: f64,
    pub best_val_mse_normalized: f64,
    pub train_seconds: f64,
    pub infer_seconds_per_1k: f64,
    pub param_count: usize,
    pub epochs: usize,
}

pub fn parse_variant(s: &str) -> Result<CkmVariant> {
    match s {
        "plain" | "ckm" => Ok(CkmVariant::Plain),
        "kf" | "kf-ckm" => Ok(CkmVariant::KnowledgeFeatured),
        "kd" | "kd-ckm" => Ok(CkmVariant::KnowledgeDriven),
        other => bail!("unknown CKM variant {other:?} (plain|kf|kd)"),
    }
}

/// `train-ckm`: train one variant on the real data (optionally augmented
/// with synthetic rows) and report validation metrics.
pub fn train_ckm_stage(
    cfg: &RunConfig,
    scene_path: &Path,
    real_csv: &Path,
    variant: CkmVariant,
    synth_csv: Option<&Path>,
    out_dir: &Path,
) -> Result<CkmStageMetrics> {
    ensure_dir(out_dir)?;
    let scene = load_scene(scene_path)?;
    let real = Dataset::read_csv(real_csv)?;
    let (norm, stats) = real.normalize();
    let (mut train, val) = norm.split(cfg.data.train_fraction, cfg.stage_seed(streams::SPLIT));
    let augmented = synth_csv.is_some();
    if let Some(path) = synth_csv {
        let synth = Dataset::read_csv(path)?;
        train = train.concat(&synth.normalize_with(&stats));
    }

    let mut dims = cfg.ckm_dims.clone();
    dims.grid_input = scene.height_grid.len();
    let mut train_cfg = cfg.ckm_train.clone();
    train_cfg.seed = cfg.stage_seed(streams::CKM);
    let model = build_ckm(variant, &dims, &cfg.channel, train_cfg.seed);

    let t0 = Instant::now();
    let outcome = train_ckm(model, &train, &val, &scene.height_grid, &train_cfg)
        .map_err(anyhow::Error::from)?;
    let train_seconds = t0.elapsed().as_secs_f64();

    let metrics = evaluate_ckm(&outcome.model, &val, &scene.height_grid)?;
    let t1 = Instant::now();
    let _ = outcome.model.predict_normalized(&val.rows, &scene.height_grid)?;
    let infer_seconds_per_1k = t1.elapsed().as_secs_f64() * 1000.0 / val.len().max(1) as f64;

    let label = format!(
        "{}{}",
        variant.label(),
        if augmented { "+aug" } else { "" }
    );
    let checkpoint = out_dir.join(format!("{label}.ckm.json"));
    outcome.model.save(&checkpoint)?;

    let mut history = String::from("epoch,train_mse,val_mse,lr\n");
    for h in &outcome.history {
        history.push_str(&format!(
            "{},{},{},{}\n",
            h.epoch, h.train_mse, h.val_mse, h.lr
        ));
    }
    std::fs::write(out_dir.join(format!("{label}.history.csv")), history)?;

    let stage = CkmStageMetrics {
        label: label.clone(),
        variant: variant.label().to_string(),
        augmented,
        mse_db2: metrics.mse_db2,
        mape_percent: metrics.mape_percent,
        best_val_mse_normalized: outcome.best_val_mse,
        train_seconds,
        infer_seconds_per_1k,
        param_count: outcome.model.param_count(),
        epochs: outcome.history.len(),
    };
    std::fs::write(
        out_dir.join(format!("{label}.metrics.json")),
        serde_json::to_string_pretty(&stage)?,
    )?;
    Ok(stage)
}

/// `eval-ckm`: score a checkpoint on a dataset.
pub fn eval_ckm_stage(
    model_path: &Path,
    data_csv: &Path,
    scene_path: &Path,
    out_path: &Path,
) -> Result<skymap_core::ckm::CkmMetrics> {
    let scene = load_scene(scene_path)?;
    let model = CkmModel::load(model_path)?;
    let stats = model
        .stats
        .clone()
        .context("checkpoint carries no normalization stats")?;
    let data = Dataset::read_csv(data_csv)?;
    let norm = data.normalize_with(&stats);
    let metrics = evaluate_ckm(&model, &norm, &scene.height_grid)?;
    if let Some(parent) = out_path.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(out_path, serde_json::to_string_pretty(&metrics)?)?;
    Ok(metrics)
}

/// Builds a channel oracle from a CLI spec: `los`, `truth`, or
/// `ckm:<checkpoint>`.
pub fn parse_oracle(spec: &str, cfg: &RunConfig, scene: &Scene) -> Result<AnyOracle> {
    if spec == "los" {
        return Ok(AnyOracle::Los(LosModelOracle {
            params: cfg.channel,
        }));
    }
    if spec == "truth" {
        return Ok(AnyOracle::Truth(GroundTruthOracle {
            env: scene.environment.clone(),
            params: cfg.channel,
        }));
    }
    if let Some(path) = spec.strip_prefix("ckm:") {
        let model = CkmModel::load(Path::new(path))?;
        let oracle = CkmOracle::new(model, &scene.height_grid)?;
        return Ok(AnyOracle::Ckm(Box::new(oracle)));
    }
    bail!("unknown oracle {spec:?} (los | truth | ckm:<checkpoint>)")
}

pub fn write_trace_csv(traj: &TrajectoryResult, path: &Path) -> Result<()> {
    let n = traj.steps.first().map_or(0, |s| s.alphas.len());
    let mut out = String::from("step,x,y,z,v,roll,pitch,yaw,p_t,reward");
    for i in 0..n {
        out.push_str(&format!(",alpha_{i}"));
    }
    for i in 0..n {
        out.push_str(&format!(",rate_{i}"));
    }
    out.push('\n');
    for s in &traj.steps {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}",
            s.step,
            s.position.x,
            s.position.y,
            s.position.z,
            s.speed,
            s.roll,
            s.pitch,
            s.yaw,
            s.tx_power_dbm,
            s.reward
        ));
        for a in &s.alphas {
            out.push_str(&format!(",{a}"));
        }
        for r in &s.rates_bps {
            out.push_str(&format!(",{r}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub method: String,
    pub t_end_s: f64,
    pub throughput_bps: f64,
    pub delivered_bits: f64,
    pub success: bool,
    pub total_reward: f64,
    pub violations: usize,
}

fn summarize(method: &str, traj: &TrajectoryResult, cfg: &EpisodeConfig) -> TrajectorySummary {
    TrajectorySummary {
        method: method.to_string(),
        t_end_s: traj.t_end_s,
        throughput_bps: traj.throughput_bps,
        delivered_bits: traj.delivered_bits,
        success: traj.success,
        total_reward: traj.total_reward,
        violations: check_feasibility(traj, cfg).len(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpoStageReport {
    pub oracle: String,
    pub iterations: usize,
    pub episodes: usize,
    /// Evaluation in the environment the policy was trained in.
    pub train_env_eval: EvalSummary,
    /// Evaluation against the geometric ground-truth channel.
    pub truth_eval: EvalSummary,
}

/// `train-ppo`: train a policy against the chosen oracle, then evaluate it
/// both in its own environment and against the ground truth.
pub fn train_ppo_stage(
    cfg: &RunConfig,
    scene_path: &Path,
    oracle_spec: &str,
    out_dir: &Path,
) -> Result<PpoStageReport> {
    ensure_dir(out_dir)?;
    let scene = load_scene(scene_path)?;
    let episode = episode_for(cfg, &scene);
    let oracle = parse_oracle(oracle_spec, cfg, &scene)?;
    let mdp = UavMdp::new(scene.environment.clone(), episode.clone(), oracle);

    let mut ppo_cfg = cfg.ppo.clone();
    ppo_cfg.seed = cfg.stage_seed(streams::PPO);
    let outcome = train_ppo(&mdp, &ppo_cfg)?;
    outcome.policy.save(&out_dir.join("policy.json"))?;

    let mut curve = String::from(
        "iteration,env_steps,episodes_completed,mean_episode_return,success_rate,policy_loss,value_loss\n",
    );
    for c in &outcome.curve {
        curve.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.iteration,
            c.env_steps,
            c.episodes_completed,
            c.mean_episode_return,
            c.success_rate,
            c.policy_loss,
            c.value_loss
        ));
    }
    std::fs::write(out_dir.join("curve.csv"), curve)?;
    let return_series: Vec<(f64, f64)> = outcome
        .curve
        .iter()
        .filter(|c| c.mean_episode_return.is_finite())
        .map(|c| (c.iteration as f64, c.mean_episode_return))
        .collect();
    std::fs::write(
        out_dir.join("curve.svg"),
        crate::svg::line_chart(
            "mean episode return",
            &[("return".to_string(), return_series)],
        ),
    )?;

    let train_env_eval = evaluate_policy(&mdp, &outcome.policy, 1, cfg.stage_seed(streams::EVAL))?;
    let truth = UavMdp::new(
        scene.environment.clone(),
        episode.clone(),
        GroundTruthOracle {
            env: scene.environment.clone(),
            params: cfg.channel,
        },
    );
    let truth_eval = evaluate_policy(&truth, &outcome.policy, 1, cfg.stage_seed(streams::EVAL))?;

    // Trace of the deterministic policy in its own environment.
    let traj = mdp.rollout_with(|state| {
        let obs = mdp.observe(state);
        Action::from_vec(&outcome.policy.act_deterministic(&obs))
    })?;
    write_trace_csv(&traj, &out_dir.join("trajectory.csv"))?;

    let report = PpoStageReport {
        oracle: oracle_spec.to_string(),
        iterations: outcome.curve.len(),
        episodes: outcome.curve.last().map_or(0, |c| c.episodes_completed),
        train_env_eval,
        truth_eval,
    };
    std::fs::write(
        out_dir.join("eval.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

/// `plan`: produce one trajectory with a named method and score it under the
/// requested oracle.
pub fn plan_stage(
    cfg: &RunConfig,
    scene_path: &Path,
    method: &str,
    oracle_spec: Option<&str>,
    policy_path: Option<&Path>,
    out_dir: &Path,
) -> Result<TrajectorySummary> {
    ensure_dir(out_dir)?;
    let scene = load_scene(scene_path)?;
    let episode = episode_for(cfg, &scene);

    let (traj, replay_cfg) = match method {
        "bcd" | "bcd-loose" => {
            let mut bcd_cfg = cfg.bcd.clone();
            bcd_cfg.seed = cfg.stage_seed(streams::BCD);
            bcd_cfg.variant = if method == "bcd-loose" {
                BcdVariant::LooseStart
            } else {
                BcdVariant::FixedStart
            };
            let outcome = solve_bcd(&scene.environment, &bcd_cfg, &episode, &cfg.channel)?;
            match oracle_spec {
                None | Some("los") => (outcome.trajectory, outcome.replay_cfg),
                Some(spec) => {
                    // Re-score the plan under a different channel.
                    let oracle = parse_oracle(spec, cfg, &scene)?;
                    let mdp =
                        UavMdp::new(scene.environment.clone(), outcome.replay_cfg.clone(), oracle);
                    let traj =
                        mdp.rollout_with(plan_controller(&outcome.plan, &outcome.replay_cfg))?;
                    (traj, outcome.replay_cfg)
                }
            }
        }
        "ppo" => {
            let path = policy_path.context("--policy is required for --method ppo")?;
            let policy = PolicyNet::load(path)?;
            let oracle = parse_oracle(oracle_spec.unwrap_or("los"), cfg, &scene)?;
            let mdp = UavMdp::new(scene.environment.clone(), episode.clone(), oracle);
            let traj = mdp.rollout_with(|state| {
                let obs = mdp.observe(state);
                Action::from_vec(&policy.act_deterministic(&obs))
            })?;
            (traj, episode.clone())
        }
        other => bail!("unknown method {other:?} (bcd | bcd-loose | ppo)"),
    };

    write_trace_csv(&traj, &out_dir.join("trajectory.csv"))?;
    let summary = summarize(method, &traj, &replay_cfg);
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub mean_t_end_s: f64,
    pub mean_throughput_bps: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareTable {
    pub seeds: usize,
    pub rows: Vec<CompareRow>,
}

/// `compare`: run the four planners over several seeds on one scene and
/// score every trajectory against the geometric ground truth.
pub fn compare_stage(
    cfg: &RunConfig,
    scene_path: &Path,
    seeds: usize,
    out_dir: &Path,
) -> Result<CompareTable> {
    ensure_dir(out_dir)?;
    let scene = load_scene(scene_path)?;
    let episode = episode_for(cfg, &scene);
    let truth = GroundTruthOracle {
        env: scene.environment.clone(),
        params: cfg.channel,
    };

    // One knowledge-driven CKM for the whole comparison, trained on data
    // simulated from this scene.
    let real = generate_dataset_from(
        &scene.environment,
        &cfg.channel,
        cfg.data.real_rows,
        cfg.stage_seed(streams::GEN_DATA),
        ChannelSource::GroundTruth,
    );
    let (norm, _) = real.normalize();
    let (train, val) = norm.split(cfg.data.train_fraction, cfg.stage_seed(streams::SPLIT));
    let mut dims = cfg.ckm_dims.clone();
    dims.grid_input = scene.height_grid.len();
    let mut train_cfg = cfg.ckm_train.clone();
    train_cfg.seed = cfg.stage_seed(streams::CKM);
    let kd = build_ckm(CkmVariant::KnowledgeDriven, &dims, &cfg.channel, train_cfg.seed);
    let kd = train_ckm(kd, &train, &val, &scene.height_grid, &train_cfg)?.model;
    kd.save(&out_dir.join("kd-ckm.json"))?;

    let mut per_method: Vec<(String, Vec<TrajectoryResult>, Vec<EpisodeConfig>)> = vec![
        ("los-BCD".into(), Vec::new(), Vec::new()),
        ("los-BCD-loose".into(), Vec::new(), Vec::new()),
        ("los-PPO".into(), Vec::new(), Vec::new()),
        ("KDCKM-PPO".into(), Vec::new(), Vec::new()),
    ];

    for seed_idx in 0..seeds {
        let fork = |stream: u64| {
            skymap_core::config::fork_seed(cfg.stage_seed(stream), 1000 + seed_idx as u64)
        };

        // BCD variants: plan under the analytic model, score on the truth.
        for (slot, variant) in [(0usize, BcdVariant::FixedStart), (1, BcdVariant::LooseStart)] {
            let mut bcd_cfg = cfg.bcd.clone();
            bcd_cfg.seed = fork(streams::BCD);
            bcd_cfg.variant = variant;
            let outcome = solve_bcd(&scene.environment, &bcd_cfg, &episode, &cfg.channel)?;
            let mdp = UavMdp::new(
                scene.environment.clone(),
                outcome.replay_cfg.clone(),
                truth.clone(),
            );
            let traj = mdp.rollout_with(plan_controller(&outcome.plan, &outcome.replay_cfg))?;
            per_method[slot].1.push(traj);
            per_method[slot].2.push(outcome.replay_cfg);
        }

        // PPO variants: train on their oracle, evaluate on the truth.
        for (slot, oracle) in [
            (2usize, AnyOracle::Los(LosModelOracle { params: cfg.channel })),
            (
                3,
                AnyOracle::Ckm(Box::new(CkmOracle::new(kd.clone(), &scene.height_grid)?)),
            ),
        ] {
            let mdp = UavMdp::new(scene.environment.clone(), episode.clone(), oracle);
            let mut ppo_cfg = cfg.ppo.clone();
            ppo_cfg.seed = fork(streams::PPO);
            let outcome = train_ppo(&mdp, &ppo_cfg)?;
            let truth_mdp =
                UavMdp::new(scene.environment.clone(), episode.clone(), truth.clone());
            let traj = truth_mdp.rollout_with(|state| {
                let obs = truth_mdp.observe(state);
                Action::from_vec(&outcome.policy.act_deterministic(&obs))
            })?;
            per_method[slot].1.push(traj);
            per_method[slot].2.push(episode.clone());
        }
    }

    let mut rows = Vec::new();
    let mut csv = String::from("method,mean_t_end_s,mean_throughput_bps,success_rate\n");
    for (method, trajs, cfgs) in &per_method {
        let n = trajs.len() as f64;
        let mean_t = trajs.iter().map(|t| t.t_end_s).sum::<f64>() / n;
        let mean_thr = trajs.iter().map(|t| t.throughput_bps).sum::<f64>() / n;
        let success = trajs
            .iter()
            .zip(cfgs)
            .filter(|(t, c)| t.success && check_feasibility(t, c).is_empty())
            .count() as f64
            / n;
        csv.push_str(&format!("{method},{mean_t},{mean_thr},{success}\n"));
        rows.push(CompareRow {
            method: method.clone(),
            mean_t_end_s: mean_t,
            mean_throughput_bps: mean_thr,
            success_rate: success,
        });
    }
    std::fs::write(out_dir.join("compare.csv"), &csv)?;
    let table = CompareTable { seeds, rows };
    std::fs::write(
        out_dir.join("compare.json"),
        serde_json::to_string_pretty(&table)?,
    )?;

    // Last-seed trajectories, Fig.-style top view.
    let labeled: Vec<(String, &TrajectoryResult)> = per_method
        .iter()
        .filter_map(|(m, t, _)| t.last().map(|traj| (m.clone(), traj)))
        .collect();
    std::fs::write(
        out_dir.join("trajectories.svg"),
        crate::svg::trajectories_topdown("planner comparison (ground-truth replay)", &scene.environment, &labeled),
    )?;
    for (method, trajs, _) in &per_method {
        if let Some(traj) = trajs.last() {
            write_trace_csv(
                traj,
                &out_dir.join(format!("{}.trajectory.csv", method.to_lowercase())),
            )?;
        }
    }
    Ok(table)
}

/// `report`: aggregate CKM metrics files into the five-axis comparison
/// (training time, inference time, MAPE, MSE reduction, parameter count).
pub fn report_stage(metric_paths: &[PathBuf], out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let mut entries: Vec<CkmStageMetrics> = Vec::new();
    for path in metric_paths {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading metrics {}", path.display()))?;
        entries.push(serde_json::from_str(&text)?);
    }
    if entries.is_empty() {
        bail!("report needs at least one metrics file");
    }

    // MSE reduction pairs a variant's augmented run against its plain run.
    let reduction_for = |e: &CkmStageMetrics| -> Option<f64> {
        if !e.augmented {
            return None;
        }
        entries
            .iter()
            .find(|o| o.variant == e.variant && !o.augmented)
            .map(|base| mse_reduction(base.mse_db2, e.mse_db2))
    };

    let mut csv = String::from(
        "label,variant,augmented,mse_db2,mape_percent,train_seconds,infer_seconds_per_1k,param_count,mse_reduction_percent\n",
    );
    let mut radar_rows: Vec<(String, [f64; 5])> = Vec::new();
    for e in &entries {
        let reduction = reduction_for(e);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            e.label,
            e.variant,
            e.augmented,
            e.mse_db2,
            e.mape_percent,
            e.train_seconds,
            e.infer_seconds_per_1k,
            e.param_count,
            reduction.map_or(String::new(), |r| r.to_string()),
        ));
        radar_rows.push((
            e.label.clone(),
            [
                e.train_seconds,
                e.infer_seconds_per_1k,
                e.mape_percent,
                reduction.unwrap_or(0.0),
                e.param_count as f64,
            ],
        ));
    }
    std::fs::write(out_dir.join("report.csv"), &csv)?;

    // Max-min normalization of each axis into [0.1, 1].
    let axes = ["train time", "infer time", "MAPE", "MSE reduction", "params"];
    let mut normalized: Vec<(String, Vec<f64>)> = Vec::new();
    for (label, values) in &radar_rows {
        let mut row = Vec::new();
        for (axis, v) in values.iter().enumerate() {
            let lo = radar_rows
                .iter()
                .map(|(_, vs)| vs[axis])
                .fold(f64::INFINITY, f64::min);
            let hi = radar_rows
                .iter()
                .map(|(_, vs)| vs[axis])
                .fold(f64::NEG_INFINITY, f64::max);
            let scaled = if (hi - lo).abs() < 1e-12 {
                0.55
            } else {
                0.1 + 0.9 * (v - lo) / (hi - lo)
            };
            row.push(scaled);
        }
        normalized.push((label.clone(), row));
    }
    std::fs::write(
        out_dir.join("radar.svg"),
        crate::svg::radar_chart("CKM comparison", &axes, &normalized),
    )?;
    Ok(())
}
