//! Wasserstein GAN with weight clipping over normalized channel samples:
//! critic and generator training, synthetic-data generation with a
//! distance-consistency gate, and per-feature W1 quality metrics.

use crate::dataset::{Dataset, NormStats, Sample, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Activation, LayerSpec, Matrix, Network};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WganConfig {
    pub latent_dim: usize,
    pub batch_size: usize,
    /// Critic updates per generator update.
    pub n_critic: usize,
    /// Weights are clamped to [-clip_value, clip_value] after every critic
    /// step to keep the critic Lipschitz.
    pub clip_value: f64,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Default for WganConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            batch_size: 256,
            n_critic: 3,
            clip_value: 0.01,
            lr: 1e-4,
            iterations: 2000,
            seed: 0,
            generator_hidden: vec![128, 128],
            critic_hidden: vec![128, 128],
        }
    }
}

/// Scalar critic objective: the critic drives fake scores below real scores,
/// so its loss is `mean(fake) - mean(real)`.
pub fn critic_loss(real_scores: &[f64], fake_scores: &[f64]) -> f64 {
    assert!(!real_scores.is_empty() && real_scores.len() == fake_scores.len());
    mean(fake_scores) - mean(real_scores)
}

/// Generator objective: `-mean(critic(G(z)))`.
pub fn generator_loss(fake_scores: &[f64]) -> f64 {
    -mean(fake_scores)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Clamps every parameter of the network into [-c, c]. Idempotent.
pub fn clip_weights(net: &mut Network, c: f64) {
    for slice in net.param_slices_mut() {
        for v in slice.iter_mut() {
            *v = v.clamp(-c, c);
        }
    }
}

fn max_abs_param(net: &mut Network) -> f64 {
    net.param_slices_mut()
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Per-iteration telemetry of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WganIterStats {
    pub iteration: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    /// Critic's estimate of the Wasserstein distance,
    /// `mean(D(real)) - mean(D(fake))`.
    pub wasserstein_estimate: f64,
}

#[derive(Debug, Clone)]
pub struct WganOutcome {
    pub generator: Network,
    pub critic: Network,
    pub history: Vec<WganIterStats>,
}

pub fn build_generator(cfg: &WganConfig, seed: u64) -> Network {
    let mut specs = Vec::new();
    let mut prev = cfg.latent_dim;
    for &h in &cfg.generator_hidden {
        specs.push(LayerSpec::new(prev, h, Activation::Relu));
        prev = h;
    }
    // Sigmoid head lands on the min-max normalized [0,1] scale.
    specs.push(LayerSpec::new(prev, FEATURE_COUNT, Activation::Sigmoid));
    Network::new(&specs, seed)
}

pub fn build_critic(cfg: &WganConfig, seed: u64) -> Network {
    let mut specs = Vec::new();
    let mut prev = FEATURE_COUNT;
    for &h in &cfg.critic_hidden {
        specs.push(LayerSpec::new(prev, h, Activation::Relu));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, 1, Activation::Identity));
    Network::new(&specs, seed)
}

fn noise_batch<R: Rng>(rng: &mut R, rows: usize, latent: usize) -> Matrix {
    let data = (0..rows * latent)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, latent, data)
}

fn real_batch<R: Rng>(rng: &mut R, rows: &[Sample], m: usize) -> Matrix {
    let mut data = Vec::with_capacity(m * FEATURE_COUNT);
    for _ in 0..m {
        let row = &rows[rng.gen_range(0..rows.len())];
        data.extend_from_slice(&row.features());
    }
    Matrix::from_vec(m, FEATURE_COUNT, data)
}

/// One critic update on given real/fake batches: gradient step on
/// [`critic_loss`], then weight clipping. Returns (loss, wasserstein
/// estimate). The generator is not touched.
pub fn critic_step(
    critic: &mut Network,
    opt: &mut AdamState,
    real: &Matrix,
    fake: &Matrix,
    clip: f64,
) -> Result<(f64, f64)> {
    let m = real.rows as f64;
    let real_cache = critic.forward_train(real);
    let fake_cache = critic.forward_train(fake);
    let real_scores: Vec<f64> = real_cache.output().data.clone();
    let fake_scores: Vec<f64> = fake_cache.output().data.clone();
    let loss = critic_loss(&real_scores, &fake_scores);
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }

    // d(loss)/d(fake score) = 1/m, d(loss)/d(real score) = -1/m.
    let gf = Matrix::from_vec(fake.rows, 1, vec![1.0 / m; fake.rows]);
    let gr = Matrix::from_vec(real.rows, 1, vec![-1.0 / m; real.rows]);
    let (mut grads, _) = critic.backward(&fake_cache, &gf);
    let (grads_real, _) = critic.backward(&real_cache, &gr);
    grads.accumulate(&grads_real);

    adam_step(&mut critic.param_slices_mut(), &grads.slices(), opt)?;
    clip_weights(critic, clip);
    assert!(
        max_abs_param(critic) <= clip,
        "critic weights must stay clipped"
    );
    Ok((loss, -loss))
}

/// One generator update against a frozen critic. Returns the generator loss.
pub fn generator_step(
    generator: &mut Network,
    opt: &mut AdamState,
    critic: &Network,
    noise: &Matrix,
) -> Result<f64> {
    let m = noise.rows as f64;
    let gen_cache = generator.forward_train(noise);
    let critic_cache = critic.forward_train(gen_cache.output());
    let scores: Vec<f64> = critic_cache.output().data.clone();
    let loss = generator_loss(&scores);
    if !loss.is_finite() {
        return Err(Error::NonFinite("generator loss".into()));
    }

    let gout = Matrix::from_vec(noise.rows, 1, vec![-1.0 / m; noise.rows]);
    // Critic parameters are frozen here; only its input gradient flows back.
    let (_, fake_grad) = critic.backward(&critic_cache, &gout);
    let (grads, _) = generator.backward(&gen_cache, &fake_grad);
    adam_step(&mut generator.param_slices_mut(), &grads.slices(), opt)?;
    Ok(loss)
}

/// Trains the critic/generator pair on a normalized dataset.
///
/// The critic takes `n_critic` clipped steps per generator step, exactly the
/// alternation of the classic weight-clipped WGAN.
pub fn train_wgan(real: &Dataset, cfg: &WganConfig) -> Result<WganOutcome> {
    if !real.normalized {
        return Err(Error::Config("WGAN input must be normalized".into()));
    }
    if real.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "dataset has {} rows, batch size is {}",
            real.len(),
            cfg.batch_size
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut generator = build_generator(cfg, rng.gen());
    let mut critic = build_critic(cfg, rng.gen());
    let mut gen_opt = AdamState::new(cfg.lr);
    let mut critic_opt = AdamState::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let mut last_critic_loss = 0.0;
        let mut last_w = 0.0;
        for _ in 0..cfg.n_critic {
            let noise = noise_batch(&mut rng, cfg.batch_size, cfg.latent_dim);
            let fake = generator.infer(&noise);
            let real_mb = real_batch(&mut rng, &real.rows, cfg.batch_size);
            let (loss, w) =
                critic_step(&mut critic, &mut critic_opt, &real_mb, &fake, cfg.clip_value)
                    .map_err(|_| Error::Diverged {
                        context: "wgan critic".into(),
                        step: iteration,
                    })?;
            last_critic_loss = loss;
            last_w = w;
        }
        let noise = noise_batch(&mut rng, cfg.batch_size, cfg.latent_dim);
        let g_loss =
            generator_step(&mut generator, &mut gen_opt, &critic, &noise).map_err(|_| {
                Error::Diverged {
                    context: "wgan generator".into(),
                    step: iteration,
                }
            })?;
        history.push(WganIterStats {
            iteration,
            critic_loss: last_critic_loss,
            generator_loss: g_loss,
            wasserstein_estimate: last_w,
        });
    }
    Ok(WganOutcome {
        generator,
        critic,
        history,
    })
}

/// Outcome bookkeeping of [`generate_samples`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub requested: usize,
    pub produced: usize,
    /// Rows rejected by the distance-consistency gate and re-drawn.
    pub rejected: usize,
}

/// Total draws allowed per requested row before giving up with a partial
/// dataset.
const RESAMPLE_FACTOR: usize = 50;

/// Draws synthetic rows from a trained generator and denormalizes them.
///
/// Rows whose generated distance column disagrees with the distance
/// recomputed from the generated positions by more than 10% (relative) are
/// rejected and re-drawn. Accepted rows keep the generator's distance column;
/// the 10% gate, not the simulator's 1e-6 consistency, is their contract.
/// Coordinates stay inside the original bounds by construction: the sigmoid
/// head lives on [0,1] before denormalization.
pub fn generate_samples(
    generator: &Network,
    n: usize,
    stats: &NormStats,
    seed: u64,
) -> (Dataset, SynthesisReport) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let latent = generator.input_dim();
    let mut rows = Vec::with_capacity(n);
    let mut rejected = 0usize;
    let mut attempts = 0usize;
    let budget = n.saturating_mul(RESAMPLE_FACTOR).max(1);
    while rows.len() < n && attempts < budget {
        let want = (n - rows.len()).min(512);
        let noise = noise_batch(&mut rng, want, latent);
        let out = generator.infer(&noise);
        attempts += want;
        for i in 0..out.rows {
            let mut f = [0.0; FEATURE_COUNT];
            for (j, v) in f.iter_mut().enumerate() {
                *v = stats.denormalize_value(j, out.get(i, j).clamp(0.0, 1.0));
            }
            let sample = Sample::from_features(f);
            let recomputed = sample.gu.distance(&sample.uav);
            let rel = (sample.distance - recomputed).abs() / recomputed.max(1.0);
            if rel > 0.10 {
                rejected += 1;
                continue;
            }
            rows.push(sample);
            if rows.len() == n {
                break;
            }
        }
    }
    let report = SynthesisReport {
        requested: n,
        produced: rows.len(),
        rejected,
    };
    (Dataset::from_rows(rows), report)
}

/// Per-feature 1-D Wasserstein distance between two datasets via matched
/// order statistics (quantile resampling when sizes differ). Row order does
/// not matter.
pub fn feature_wasserstein1(real: &Dataset, synth: &Dataset) -> [f64; FEATURE_COUNT] {
    let mut out = [0.0; FEATURE_COUNT];
    if real.is_empty() || synth.is_empty() {
        return out;
    }
    let m = real.len().min(synth.len());
    for (feature, slot) in out.iter_mut().enumerate() {
        let mut a = real.feature_column(feature);
        let mut b = synth.feature_column(feature);
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let pick = |v: &[f64], i: usize| {
            let idx = ((i as f64 + 0.5) * v.len() as f64 / m as f64) as usize;
            v[idx.min(v.len() - 1)]
        };
        let mut acc = 0.0;
        for i in 0..m {
            acc += (pick(&a, i) - pick(&b, i)).abs();
        }
        *slot = acc / m as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::geometry::Position;

    #[test]
    fn critic_loss_examples() {
        assert_eq!(critic_loss(&[0.7, 0.7], &[0.7, 0.7]), 0.0);
        assert_eq!(critic_loss(&[1.0, 1.0], &[0.0, 0.0]), -1.0);
        let (r, f) = (vec![0.3, -0.5, 1.1], vec![0.9, 0.2, -0.4]);
        assert!((critic_loss(&r, &f) + critic_loss(&f, &r)).abs() < 1e-15);
    }

    #[test]
    fn generator_loss_examples() {
        assert_eq!(generator_loss(&[0.0, 0.0]), 0.0);
        assert_eq!(generator_loss(&[2.0]), -2.0);
        let scores = vec![0.25, -1.5, 3.25, 0.5];
        let brute = -scores.iter().sum::<f64>() / 4.0;
        assert!((generator_loss(&scores) - brute).abs() < 1e-15);
    }

    #[test]
    fn clip_weights_bounds_and_idempotence() {
        let cfg = WganConfig::default();
        let mut net = build_critic(&cfg, 5);
        net.layers[0].weights.data[0] = 0.5;
        clip_weights(&mut net, 0.01);
        assert_eq!(net.layers[0].weights.data[0], 0.01);
        assert!(max_abs_param(&mut net) <= 0.01);
        let snapshot = net.clone();
        clip_weights(&mut net, 0.01);
        assert_eq!(net, snapshot);
    }

    #[test]
    fn clip_leaves_in_range_weights_alone() {
        let cfg = WganConfig::default();
        let mut net = build_critic(&cfg, 6);
        clip_weights(&mut net, 10.0);
        let reference = build_critic(&cfg, 6);
        assert_eq!(net, reference);
    }

    fn toy_rows(values: &[f64]) -> Dataset {
        let rows = values
            .iter()
            .map(|&g| {
                Sample::from_positions(
                    Position::new(0.0, 0.0, 0.0),
                    Position::new(1.0, 1.0, 1.0),
                    g,
                )
            })
            .collect();
        Dataset::from_rows(rows)
    }

    #[test]
    fn wasserstein_identical_is_zero_and_shift_is_linear() {
        let a = toy_rows(&[-90.0, -80.0, -70.0, -60.0]);
        let zeros = feature_wasserstein1(&a, &a);
        assert!(zeros.iter().all(|&d| d == 0.0));

        let b = toy_rows(&[-89.5, -79.5, -69.5, -59.5]);
        let dist = feature_wasserstein1(&a, &b);
        assert!((dist[7] - 0.5).abs() < 1e-12, "gain feature shifted by 0.5");
    }

    #[test]
    fn wasserstein_is_row_order_invariant() {
        let a = toy_rows(&[-90.0, -60.0, -75.0]);
        let mut shuffled = a.clone();
        shuffled.rows.reverse();
        let b = toy_rows(&[-88.0, -64.0, -71.0]);
        assert_eq!(
            feature_wasserstein1(&a, &b),
            feature_wasserstein1(&shuffled, &b)
        );
    }

    #[test]
    fn generate_zero_samples_is_empty() {
        let cfg = WganConfig::default();
        let gen = build_generator(&cfg, 1);
        let stats = NormStats {
            min: [0.0; FEATURE_COUNT],
            max: [1.0; FEATURE_COUNT],
        };
        let (ds, report) = generate_samples(&gen, 0, &stats, 3);
        assert!(ds.is_empty());
        assert_eq!(report.produced, 0);
    }

    #[test]
    fn generated_rows_stay_inside_training_bounds_and_reproduce() {
        let cfg = WganConfig {
            latent_dim: 4,
            generator_hidden: vec![16],
            ..WganConfig::default()
        };
        let gen = build_generator(&cfg, 9);
        let mut min = [0.0; FEATURE_COUNT];
        let mut max = [1.0; FEATURE_COUNT];
        for i in 0..6 {
            min[i] = 100.0;
            max[i] = 900.0;
        }
        min[6] = 0.0;
        max[6] = 2000.0; // wide distance range so the consistency gate passes
        min[7] = -120.0;
        max[7] = -40.0;
        let stats = NormStats { min, max };
        let (a, ra) = generate_samples(&gen, 40, &stats, 7);
        let (b, rb) = generate_samples(&gen, 40, &stats, 7);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        for row in &a.rows {
            for (i, v) in row.features().iter().enumerate() {
                assert!(*v >= min[i] - 1e-9 && *v <= max[i] + 1e-9, "feature {i}");
            }
        }
    }

    #[test]
    fn critic_step_does_not_touch_generator_and_vice_versa() {
        let cfg = WganConfig {
            latent_dim: 4,
            batch_size: 8,
            generator_hidden: vec![8],
            critic_hidden: vec![8],
            ..WganConfig::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut generator = build_generator(&cfg, 3);
        let mut critic = build_critic(&cfg, 4);
        let mut gen_opt = AdamState::new(cfg.lr);
        let mut critic_opt = AdamState::new(cfg.lr);

        let noise = noise_batch(&mut rng, 8, 4);
        let fake = generator.infer(&noise);
        let real = Matrix::from_vec(8, FEATURE_COUNT, vec![0.5; 8 * FEATURE_COUNT]);

        let gen_before = generator.clone();
        critic_step(&mut critic, &mut critic_opt, &real, &fake, cfg.clip_value).unwrap();
        assert_eq!(generator, gen_before, "critic step must not move the generator");

        let critic_before = critic.clone();
        generator_step(&mut generator, &mut gen_opt, &critic, &noise).unwrap();
        assert_eq!(critic, critic_before, "generator step must not move the critic");
        assert_ne!(generator, gen_before, "generator step must move the generator");
    }

    #[test]
    fn train_rejects_unnormalized_or_tiny_input() {
        let cfg = WganConfig::default();
        let ds = toy_rows(&[-60.0, -70.0]);
        assert!(train_wgan(&ds, &cfg).is_err());
        let (norm, _) = ds.normalize();
        assert!(train_wgan(&norm, &cfg).is_err(), "fewer rows than a batch");
    }
}
