// scratch: synthetic conditional quality — synth-only-trained CKM vs real
use skymap_core::channel::ChannelParams;
use skymap_core::ckm::*;
use skymap_core::config::{fork_seed, streams};
use skymap_core::dataset::generate_dataset;
use skymap_core::geometry::{rasterize_heights, sample_environment, EnvGenConfig};
use skymap_core::wgan::{generate_samples, train_wgan, WganConfig};

fn main() {
    let gen = EnvGenConfig {
        side_x: 400.0, h_min: 80.0, h_max: 200.0,
        gu_count: 48, gu_height: 0.0,
        building_count: 12, footprint_min: 30.0, footprint_max: 80.0,
        height_min: 30.0, height_max: 75.0,
    };
    let env = sample_environment(fork_seed(2024, streams::GEN_ENV), &gen).unwrap();
    let grid = rasterize_heights(&env, 20, 20);
    let params = ChannelParams::default();
    let dims = CkmDims { grid_input: 400, encoder_hidden: vec![64, 16], trunk_sizes: vec![64, 32], grid_scale: 80.0 };
    let seed = 1u64;
    let real = generate_dataset(&env, &params, 2000, fork_seed(seed, streams::GEN_DATA));
    let (norm, stats) = real.normalize();
    let (train, val) = norm.split(0.7, fork_seed(seed, streams::SPLIT));
    let tcfg = CkmTrainConfig { max_epochs: 150, patience: 10, batch_size: 128, lr: 1e-3, seed: fork_seed(seed, streams::CKM), ..CkmTrainConfig::default() };
    let run = |tr: &skymap_core::dataset::Dataset| {
        let m = build_ckm(CkmVariant::Plain, &dims, &params, tcfg.seed);
        let out = train_ckm(m, tr, &val, &grid, &tcfg).unwrap();
        (evaluate_ckm(&out.model, &val, &grid).unwrap().mse_db2, out.history.len())
    };
    let (base, _) = run(&train);
    println!("plain on real: {base:.2}");
    for (w, g, iters) in [(128usize, 128usize, 3000usize), (256, 256, 3000)] {
        let wcfg = WganConfig { iterations: iters, critic_hidden: vec![w, w], generator_hidden: vec![g, g], seed: fork_seed(seed, streams::WGAN), ..WganConfig::default() };
        let t0 = std::time::Instant::now();
        let gan = train_wgan(&norm, &wcfg).unwrap();
        let (synth, rep) = generate_samples(&gan.generator, 3 * train.len(), &stats, fork_seed(seed, streams::SYNTH));
        let sn = synth.normalize_with(&stats);
        let (on_synth, es) = run(&sn);
        let (on_mix, em) = run(&train.concat(&sn));
        println!("wgan {w}x{g}@{iters} [{:.0}s rej={}]: synth-only {on_synth:.2} ({es}ep) mixed {on_mix:.2} ({em}ep) red {:.1}%",
            t0.elapsed().as_secs_f64(), rep.rejected, mse_reduction(base, on_mix));
    }
}
