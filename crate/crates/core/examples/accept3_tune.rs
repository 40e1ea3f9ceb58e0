// scratch: tune WGAN iterations/seed for the 5000-row quality gate
use skymap_core::channel::ChannelParams;
use skymap_core::config::{fork_seed, streams};
use skymap_core::dataset::{generate_dataset, pearson};
use skymap_core::geometry::{sample_environment, EnvGenConfig};
use skymap_core::wgan::{feature_wasserstein1, generate_samples, train_wgan, WganConfig};

fn main() {
    let seed = 2024u64;
    let env = sample_environment(fork_seed(seed, streams::GEN_ENV), &EnvGenConfig::default()).unwrap();
    let real = generate_dataset(&env, &ChannelParams::default(), 5000, fork_seed(seed, streams::GEN_DATA));
    let (norm, stats) = real.normalize();
    for iters in [1000usize, 2000] {
        for wseed in [1u64, 2] {
            let cfg = WganConfig { iterations: iters, seed: wseed, ..WganConfig::default() };
            let t0 = std::time::Instant::now();
            let out = train_wgan(&norm, &cfg).unwrap();
            let (synth, rep) = generate_samples(&out.generator, 5000, &stats, 7);
            let sn = synth.normalize_with(&stats);
            let w1 = feature_wasserstein1(&norm, &sn);
            let rc = pearson(&real.feature_column(6), &real.feature_column(7));
            let sc = pearson(&synth.feature_column(6), &synth.feature_column(7));
            let good = w1.iter().filter(|&&d| d < 0.1).count();
            println!("iters={iters} seed={wseed} [{:.0}s]: w1={:?} good={good}/8 corr real {rc:.3} synth {sc:.3} rejected={}",
                t0.elapsed().as_secs_f64(),
                w1.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>(), rep.rejected);
        }
    }
}
