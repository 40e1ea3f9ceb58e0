//! Constraint invariants under random control: whatever the (finite) action,
//! every visited state stays inside the kinematic and power boxes.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use skymap_core::channel::ChannelParams;
use skymap_core::geometry::{sample_environment, EnvGenConfig};
use skymap_core::mdp::{Action, EpisodeConfig, LosModelOracle, UavMdp};

#[test]
fn hundred_thousand_random_steps_respect_the_constraint_box() {
    let env = sample_environment(42, &EnvGenConfig::default()).unwrap();
    let cfg = EpisodeConfig::for_env(&env);
    let mdp = UavMdp::new(
        env,
        cfg.clone(),
        LosModelOracle {
            params: ChannelParams::default(),
        },
    );
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut state = mdp.reset();
    let mut prev_speed = state.uav.speed;
    for step in 0..100_000 {
        // Raw commands far outside the feasible box on purpose.
        let action = Action {
            accel_mps2: rng.gen_range(-200.0..200.0),
            roll: rng.gen_range(-10.0..10.0),
            pitch: rng.gen_range(-10.0..10.0),
            yaw: rng.gen_range(-10.0..10.0),
            tx_power_dbm: rng.gen_range(-50.0..90.0),
        };
        let out = mdp.step(&state, &action).unwrap();
        let uav = &out.state.uav;
        assert!(uav.pitch.abs() <= std::f64::consts::FRAC_PI_2, "step {step}: 19c");
        assert!(uav.roll.abs() <= std::f64::consts::PI, "step {step}: 19d");
        assert!(uav.yaw.abs() <= std::f64::consts::PI, "step {step}: 19e");
        assert!(
            (0.0..=cfg.v_max).contains(&uav.speed),
            "step {step}: 19f speed {}",
            uav.speed
        );
        let accel = (uav.speed - prev_speed) / cfg.dt;
        assert!(accel.abs() <= cfg.a_max + 1e-9, "step {step}: 19g accel {accel}");
        assert!(
            (0.0..=cfg.budget.p_max_dbm).contains(&out.info.applied.tx_power_dbm),
            "step {step}: 19h"
        );
        assert!(uav.position.x >= 0.0 && uav.position.x <= mdp.env.side_x);
        assert!(uav.position.z >= mdp.env.h_min && uav.position.z <= mdp.env.h_max);
        for (alpha, rx) in out.info.alphas.iter().zip(&out.info.rx_dbm) {
            if *alpha {
                assert!(*rx >= cfg.budget.p_min_dbm, "step {step}: 19i");
            }
        }
        prev_speed = uav.speed;
        state = if out.done {
            prev_speed = 0.0;
            mdp.reset()
        } else {
            out.state
        };
    }
}
