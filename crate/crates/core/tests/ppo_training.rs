//! End-to-end PPO checks on a small scene: self-consistent ratios before the
//! first update, reproducibility, and learning beyond the random baseline.

use skymap_core::channel::ChannelParams;
use skymap_core::geometry::{Environment, Position};
use skymap_core::mdp::{Action, EpisodeConfig, LosModelOracle, UavMdp};
use skymap_core::nn::Matrix;
use skymap_core::ppo::{
    evaluate_policy, evaluate_random, policy_surrogate_loss, train_ppo, PolicyNet, PpoConfig,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn small_scene() -> UavMdp<LosModelOracle> {
    let env = Environment {
        side_x: 200.0,
        h_min: 50.0,
        h_max: 150.0,
        buildings: vec![],
        gu_positions: vec![Position::new(150.0, 150.0, 0.0)],
    };
    let mut cfg = EpisodeConfig::for_env(&env);
    cfg.max_steps = 80;
    // A payload heavy enough that the mission pays for flying close.
    cfg.eta_min_bits = 2.0e8;
    cfg.v_max = 30.0;
    cfg.a_max = 10.0;
    UavMdp::new(
        env,
        cfg,
        LosModelOracle {
            params: ChannelParams::default(),
        },
    )
}

fn small_ppo(episodes: usize, seed: u64) -> PpoConfig {
    PpoConfig {
        rollout_len: 1024,
        minibatch: 128,
        update_epochs: 10,
        episodes,
        seed,
        hidden: vec![64, 64],
        ..PpoConfig::default()
    }
}

#[test]
fn ratios_are_exactly_one_before_the_first_update() {
    let mdp = small_scene();
    let policy = PolicyNet::new(mdp.obs_dim(), &[32, 32], mdp.cfg.action_bounds(), 3);
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut state = mdp.reset();
    let rows = 64;
    let mut obs = Matrix::zeros(rows, mdp.obs_dim());
    let mut pre_squash = Matrix::zeros(rows, skymap_core::mdp::ACTION_DIM);
    let mut lp_old = Vec::new();
    for t in 0..rows {
        let o = mdp.observe(&state);
        obs.row_mut(t).copy_from_slice(&o);
        let s = policy.sample_action(&o, &mut rng);
        pre_squash.row_mut(t).copy_from_slice(&s.pre_squash);
        lp_old.push(s.log_prob);
        let out = mdp.step(&state, &Action::from_vec(&s.action)).unwrap();
        state = if out.done { mdp.reset() } else { out.state };
    }
    // With unit advantages and a huge clip the surrogate is -mean(ratio);
    // before any update every ratio must equal one within 1e-9.
    let adv = vec![1.0; rows];
    let loss = policy_surrogate_loss(&policy, &obs, &pre_squash, &lp_old, &adv, 10.0);
    assert!(
        (loss + 1.0).abs() < 1e-9,
        "mean ratio should be 1, surrogate gave {loss}"
    );
}

#[test]
fn short_training_run_is_reproducible() {
    let mdp = small_scene();
    let cfg = small_ppo(40, 11);
    let a = train_ppo(&mdp, &cfg).unwrap();
    let b = train_ppo(&mdp, &cfg).unwrap();
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.value, b.value);
    assert_eq!(a.curve.len(), b.curve.len());
    let eval_a = evaluate_policy(&mdp, &a.policy, 3, 0).unwrap();
    let eval_b = evaluate_policy(&mdp, &b.policy, 3, 0).unwrap();
    assert_eq!(eval_a, eval_b);
}

#[test]
fn training_beats_the_random_baseline_on_the_small_scene() {
    let mdp = small_scene();
    let outcome = train_ppo(&mdp, &small_ppo(600, 6)).unwrap();
    let trained = evaluate_policy(&mdp, &outcome.policy, 5, 0).unwrap();
    let random = evaluate_random(&mdp, 20, 123).unwrap();
    println!(
        "trained return {:.1} (success {:.0}%, t={:.0}s), random return {:.1} (success {:.0}%)",
        trained.mean_total_reward,
        100.0 * trained.success_rate,
        trained.mean_flight_time_s,
        random.mean_total_reward,
        100.0 * random.success_rate
    );
    assert!(
        trained.mean_total_reward > random.mean_total_reward,
        "trained {} vs random {}",
        trained.mean_total_reward,
        random.mean_total_reward
    );
    assert!(
        trained.success_rate > 0.5,
        "the trained policy should complete the mission"
    );
}
