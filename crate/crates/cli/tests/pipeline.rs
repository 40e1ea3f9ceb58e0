//! End-to-end pipeline smoke at toy scale, plus byte-level determinism of
//! every stage's numeric artifacts under a fixed global seed.

use skymap_core::config::RunConfig;
use skymap_core::dataset::ChannelSource;
use skymap_cli::stages;
use std::path::{Path, PathBuf};
use std::process::Command;

fn tiny_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::with_defaults();
    cfg.seed = seed;
    cfg.env = skymap_core::geometry::EnvGenConfig {
        side_x: 300.0,
        h_min: 60.0,
        h_max: 160.0,
        gu_count: 2,
        gu_height: 0.0,
        building_count: 4,
        footprint_min: 20.0,
        footprint_max: 60.0,
        height_min: 20.0,
        height_max: 55.0,
    };
    cfg.grid_width_cells = 6;
    cfg.grid_depth_cells = 6;
    cfg.data.real_rows = 400;
    cfg.data.synth_multiple = 1.0;
    cfg.wgan.iterations = 120;
    cfg.wgan.batch_size = 64;
    cfg.wgan.latent_dim = 8;
    cfg.wgan.generator_hidden = vec![32, 32];
    cfg.wgan.critic_hidden = vec![32, 32];
    cfg.ckm_dims = skymap_core::ckm::CkmDims {
        grid_input: 36,
        encoder_hidden: vec![16, 8],
        trunk_sizes: vec![32, 16],
        grid_scale: 60.0,
    };
    cfg.ckm_train.max_epochs = 25;
    cfg.ckm_train.patience = 10;
    cfg.ckm_train.batch_size = 64;
    cfg.episode.max_steps = 60;
    cfg.episode.eta_min_bits = 5.0e7;
    cfg.episode.v_max = 30.0;
    cfg.episode.a_max = 10.0;
    cfg.ppo.rollout_len = 512;
    cfg.ppo.minibatch = 128;
    cfg.ppo.update_epochs = 4;
    cfg.ppo.episodes = 30;
    cfg.ppo.hidden = vec![32, 32];
    cfg.bcd.waypoints = 40;
    cfg.bcd.max_outer_iters = 30;
    cfg
}

fn fresh_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir()
        .join("skymap-pipeline-tests")
        .join(format!("{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn full_pipeline_runs_end_to_end_at_toy_scale() {
    let cfg = tiny_config(902);
    let root = fresh_dir("smoke");

    let scene = stages::gen_env(&cfg, &root).unwrap();
    let real = stages::gen_data(&cfg, &scene, None, ChannelSource::GroundTruth, true, &root).unwrap();
    assert!(root.join("real.normalized.csv").exists());
    assert!(root.join("real.stats.json").exists());

    let aug = stages::augment(&cfg, &real, &root).unwrap();
    assert!(aug.produced > 0);
    let synth = root.join("synthetic.csv");

    let plain = stages::train_ckm_stage(
        &cfg,
        &scene,
        &real,
        skymap_core::ckm::CkmVariant::Plain,
        None,
        &root,
    )
    .unwrap();
    let kd = stages::train_ckm_stage(
        &cfg,
        &scene,
        &real,
        skymap_core::ckm::CkmVariant::KnowledgeDriven,
        Some(&synth),
        &root,
    )
    .unwrap();
    assert!(plain.mse_db2.is_finite() && kd.mse_db2.is_finite());
    assert!(root.join("kd-ckm+aug.ckm.json").exists());

    let eval = stages::eval_ckm_stage(
        &root.join("ckm.ckm.json"),
        &real,
        &scene,
        &root.join("eval.json"),
    )
    .unwrap();
    assert!(eval.mse_db2.is_finite());

    let ppo = stages::train_ppo_stage(&cfg, &scene, "los", &root).unwrap();
    assert!(ppo.iterations > 0);
    assert!(root.join("policy.json").exists());
    assert!(root.join("curve.csv").exists());

    let plan = stages::plan_stage(&cfg, &scene, "bcd", None, None, &root).unwrap();
    assert!(plan.t_end_s > 0.0);
    assert!(root.join("trajectory.csv").exists());

    let ppo_plan = stages::plan_stage(
        &cfg,
        &scene,
        "ppo",
        Some("truth"),
        Some(&root.join("policy.json")),
        &root,
    )
    .unwrap();
    assert!(ppo_plan.t_end_s > 0.0);

    stages::report_stage(
        &[
            root.join("ckm.metrics.json"),
            root.join("kd-ckm+aug.metrics.json"),
        ],
        &root,
    )
    .unwrap();
    assert!(root.join("report.csv").exists());
    assert!(root.join("radar.svg").exists());
}

#[test]
fn every_stage_reproduces_byte_identical_numeric_artifacts() {
    let cfg = tiny_config(71);
    let a = fresh_dir("determinism-a");
    let b = fresh_dir("determinism-b");

    for dir in [&a, &b] {
        let scene = stages::gen_env(&cfg, dir).unwrap();
        let real = stages::gen_data(&cfg, &scene, None, ChannelSource::GroundTruth, true, dir).unwrap();
        stages::augment(&cfg, &real, dir).unwrap();
        stages::train_ckm_stage(
            &cfg,
            &scene,
            &real,
            skymap_core::ckm::CkmVariant::KnowledgeDriven,
            Some(&dir.join("synthetic.csv")),
            dir,
        )
        .unwrap();
        stages::train_ppo_stage(&cfg, &scene, "los", dir).unwrap();
        stages::plan_stage(&cfg, &scene, "bcd-loose", None, None, dir).unwrap();
    }

    // Numeric artifacts must match byte for byte; metrics files carry wall
    // times and are excluded.
    for name in [
        "scene.json",
        "real.csv",
        "real.normalized.csv",
        "real.stats.json",
        "synthetic.csv",
        "generator.json",
        "wgan_history.csv",
        "quality.json",
        "kd-ckm+aug.ckm.json",
        "kd-ckm+aug.history.csv",
        "policy.json",
        "curve.csv",
        "eval.json",
        "trajectory.csv",
        "summary.json",
    ] {
        assert_eq!(
            read_bytes(&a.join(name)),
            read_bytes(&b.join(name)),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn binary_surface_smoke() {
    let cfg = tiny_config(33);
    let root = fresh_dir("binary");
    let cfg_path = root.join("run.json");
    cfg.save(&cfg_path).unwrap();

    let exe = env!("CARGO_BIN_EXE_skymap");
    let run = |args: &[&str]| {
        let output = Command::new(exe)
            .args(args)
            .output()
            .expect("spawning skymap");
        assert!(
            output.status.success(),
            "skymap {:?} failed: {}",
            args,
            String::from_utf8_lossy(&output.stderr)
        );
    };
    let out = root.to_str().unwrap();
    let cfg_s = cfg_path.to_str().unwrap();
    run(&["gen-env", "--config", cfg_s, "--out", out]);
    let scene = root.join("scene.json");
    run(&[
        "gen-data",
        "--config",
        cfg_s,
        "--scene",
        scene.to_str().unwrap(),
        "--rows",
        "200",
        "--out",
        out,
    ]);
    run(&[
        "plan",
        "--config",
        cfg_s,
        "--scene",
        scene.to_str().unwrap(),
        "--method",
        "bcd",
        "--out",
        out,
    ]);
    assert!(root.join("trajectory.csv").exists());

    // Missing inputs surface as non-zero exits.
    let output = Command::new(exe)
        .args(["gen-data", "--scene", "/nonexistent/scene.json", "--out", out])
        .output()
        .unwrap();
    assert!(!output.status.success());
}
