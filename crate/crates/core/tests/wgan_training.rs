//! Training-level WGAN checks: determinism, mode coverage on a bimodal toy,
//! and the critic's distance estimate shrinking over training.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use skymap_core::dataset::{Dataset, Sample};
use skymap_core::geometry::Position;
use skymap_core::wgan::{feature_wasserstein1, generate_samples, train_wgan, WganConfig};

/// Two well separated gain clusters; every other feature is constant.
fn two_cluster_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let low = Normal::new(-90.0, 2.0).unwrap();
    let high = Normal::new(-60.0, 2.0).unwrap();
    let rows = (0..n)
        .map(|i| {
            let g = if i % 2 == 0 {
                low.sample(&mut rng)
            } else {
                high.sample(&mut rng)
            };
            Sample::from_positions(Position::new(100.0, 100.0, 0.0), Position::new(100.0, 100.0, 400.0), g)
        })
        .collect();
    Dataset::from_rows(rows)
}

fn toy_config(iterations: usize, seed: u64) -> WganConfig {
    WganConfig {
        latent_dim: 8,
        batch_size: 64,
        n_critic: 3,
        clip_value: 0.01,
        lr: 1e-4,
        iterations,
        seed,
        generator_hidden: vec![64, 64],
        critic_hidden: vec![64, 64],
    }
}

#[test]
fn seed_fixed_training_is_reproducible() {
    let (norm, _) = two_cluster_dataset(256, 1).normalize();
    let cfg = toy_config(60, 17);
    let a = train_wgan(&norm, &cfg).unwrap();
    let b = train_wgan(&norm, &cfg).unwrap();
    assert_eq!(a.generator, b.generator);
    assert_eq!(a.critic, b.critic);
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.critic_loss, y.critic_loss);
        assert_eq!(x.generator_loss, y.generator_loss);
    }
}

#[test]
fn toy_covers_both_clusters_and_critic_estimate_shrinks() {
    let ds = two_cluster_dataset(600, 2);
    let (norm, stats) = ds.normalize();
    let cfg = toy_config(3000, 7);
    let outcome = train_wgan(&norm, &cfg).unwrap();

    // Mode coverage: a fifth of the mass in each cluster, split at the
    // midpoint between the two gain modes.
    let (synth, report) = generate_samples(&outcome.generator, 1000, &stats, 11);
    assert!(report.produced >= 900, "generator kept only {}", report.produced);
    let midpoint = -75.0;
    let low = synth.rows.iter().filter(|r| r.gain_db < midpoint).count() as f64;
    let high = synth.rows.len() as f64 - low;
    let total = synth.rows.len() as f64;
    assert!(
        low / total >= 0.2 && high / total >= 0.2,
        "mode collapse: low {:.1}%, high {:.1}%",
        100.0 * low / total,
        100.0 * high / total
    );

    // The critic's Wasserstein estimate must shrink between the early phase
    // (after its warm-up) and the end of training.
    let estimates: Vec<f64> = outcome
        .history
        .iter()
        .map(|h| h.wasserstein_estimate.abs())
        .collect();
    let early: f64 = estimates[100..400].iter().sum::<f64>() / 300.0;
    let late: f64 = estimates[estimates.len() - 300..].iter().sum::<f64>() / 300.0;
    assert!(
        late < early,
        "critic estimate should shrink: early {early:.5}, late {late:.5}"
    );

    // The gain marginal of the synthetic data should track the real one.
    let w1 = feature_wasserstein1(&norm, &synth.normalize_with(&stats));
    assert!(w1[7] < 0.15, "gain W1 {:.3} too large", w1[7]);
}
