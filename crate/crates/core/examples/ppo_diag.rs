// scratch: long runs for stuck seeds + trajectory peek
use skymap_core::channel::ChannelParams;
use skymap_core::geometry::{Environment, Position};
use skymap_core::mdp::{Action, EpisodeConfig, LosModelOracle, UavMdp};
use skymap_core::ppo::{evaluate_policy, train_ppo, PpoConfig};

fn main() {
    let env = Environment {
        side_x: 200.0,
        h_min: 50.0,
        h_max: 150.0,
        buildings: vec![],
        gu_positions: vec![Position::new(150.0, 150.0, 0.0)],
    };
    let mut cfg = EpisodeConfig::for_env(&env);
    cfg.max_steps = 80;
    cfg.eta_min_bits = 2.0e8;
    cfg.v_max = 30.0;
    cfg.a_max = 10.0;
    let mdp = UavMdp::new(env, cfg, LosModelOracle { params: ChannelParams::default() });
    for seed in [5u64, 8] {
        let pcfg = PpoConfig { rollout_len: 1024, minibatch: 128, update_epochs: 10, episodes: 2500, seed, hidden: vec![64,64], ..PpoConfig::default() };
        let t0 = std::time::Instant::now();
        let out = train_ppo(&mdp, &pcfg).unwrap();
        let eval = evaluate_policy(&mdp, &out.policy, 1, 0).unwrap();
        // where does it sit at the end?
        let traj = mdp.rollout_with(|state| {
            let obs = mdp.observe(state);
            Action::from_vec(&out.policy.act_deterministic(&obs))
        }).unwrap();
        let last = traj.steps.last().unwrap();
        let sr: Vec<f64> = out.curve.iter().rev().take(5).map(|c| c.success_rate).collect();
        println!("seed={seed} [{:.0}s]: eval succ {:.0}% t={:.0} ret {:.1} endpos=({:.0},{:.0},{:.0}) delivered={:.0}M last5 train succ {:?}",
            t0.elapsed().as_secs_f64(), 100.0*eval.success_rate, eval.mean_flight_time_s, eval.mean_total_reward,
            last.position.x, last.position.y, last.position.z, traj.delivered_bits/1e6, sr);
    }
}
