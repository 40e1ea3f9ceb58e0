// scratch: criterion-4 full chain on blockage scene, clipped training
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
    let dims = CkmDims { grid_input: 400, encoder_hidden: vec![64, 16], trunk_sizes: vec![256, 128, 64], grid_scale: 80.0 };

    let mut agg = vec![];
    for seed in [1u64, 2] {
        let t0 = std::time::Instant::now();
        let real = generate_dataset(&env, &params, 2000, fork_seed(seed, streams::GEN_DATA));
        let (norm, stats) = real.normalize();
        let (train, val) = norm.split(0.7, fork_seed(seed, streams::SPLIT));
        let wcfg = WganConfig { iterations: 3000, seed: fork_seed(seed, streams::WGAN), ..WganConfig::default() };
        let gan = train_wgan(&norm, &wcfg).unwrap();
        let (synth, _) = generate_samples(&gan.generator, 3 * train.len(), &stats, fork_seed(seed, streams::SYNTH));
        let train_aug = train.concat(&synth.normalize_with(&stats));
        let tcfg = CkmTrainConfig { max_epochs: 150, patience: 10, batch_size: 128, lr: 1e-3, seed: fork_seed(seed, streams::CKM), ..CkmTrainConfig::default() };
        let run = |variant: CkmVariant, tr: &skymap_core::dataset::Dataset| {
            let m = build_ckm(variant, &dims, &params, tcfg.seed);
            let out = train_ckm(m, tr, &val, &grid, &tcfg).unwrap();
            (evaluate_ckm(&out.model, &val, &grid).unwrap().mse_db2, out.history.len())
        };
        let (plain, e1) = run(CkmVariant::Plain, &train);
        let (plain_aug, e2) = run(CkmVariant::Plain, &train_aug);
        let (kd, e3) = run(CkmVariant::KnowledgeDriven, &train);
        println!("seed={seed} [{:.0}s]: plain {plain:.2} ({e1}) aug {plain_aug:.2} ({e2}) kd {kd:.2} ({e3}) red {:.1}%", t0.elapsed().as_secs_f64(), mse_reduction(plain, plain_aug));
        agg.push((plain, plain_aug, kd));
    }
    let n = agg.len() as f64;
    let (mp, ma, mk) = agg.iter().fold((0.0,0.0,0.0), |a,x| (a.0+x.0/n, a.1+x.1/n, a.2+x.2/n));
    println!("MEAN: plain {mp:.2} aug {ma:.2} kd {mk:.2} | kd<=plain {} | red {:.1}%", mk<=mp, mse_reduction(mp, ma));
}
