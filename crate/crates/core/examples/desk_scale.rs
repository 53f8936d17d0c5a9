//! Trains on synthetic pairs and reports held-out patch and region metrics.
//!
//! `cargo run --release --example desk_scale -- [train_pairs] [epochs] [lr]`

use std::time::Instant;

use linecorr::metrics::{mean_patch_reports, mean_region_reports, patch_table, region_table};
use linecorr::patchsim::{init_params, train, TrainingPair};
use linecorr::pipeline::{evaluate_prediction, predict_pair, PipelineConfig, Truth};
use linecorr::synthgen::{generate_pair, pair_spec, BenchmarkOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_train: usize = args.first().map_or(Ok(500), |s| s.parse())?;
    let epochs: usize = args.get(1).map_or(Ok(20), |s| s.parse())?;
    let lr: f64 = args.get(2).map_or(Ok(1e-3), |s| s.parse())?;
    let mut cfg = PipelineConfig::default();
    cfg.train.epochs = epochs;
    cfg.train.lr = lr;
    let mut opts = BenchmarkOptions::default();
    opts.scene.gap_noise = 0.1;

    let t0 = Instant::now();
    let mut train_pairs = Vec::new();
    for i in 0..n_train {
        let p = generate_pair(&pair_spec(&opts, 1, i))?;
        train_pairs.push(TrainingPair::new(&cfg.model, &p.lineart_a, &p.lineart_b, &p.regions_a, &p.regions_b, &p.corr)?);
    }
    println!("data: {:.1}s", t0.elapsed().as_secs_f64());
    let init = init_params(&cfg.model, 0)?;
    let t1 = Instant::now();
    let out = train(&cfg.model, &train_pairs, &cfg.train, init, 0, |r| {
        if r.step % 25 == 0 {
            println!("step {} lr {:.2e} loss {:.4} ({:.0}s)", r.step, r.lr, r.loss, t1.elapsed().as_secs_f64());
        }
    })?;
    println!("train: {:.1}s", t1.elapsed().as_secs_f64());

    let mut patch = Vec::new();
    let mut region = Vec::new();
    for i in 0..25 {
        let p = generate_pair(&pair_spec(&opts, 2, i))?;
        let pred = predict_pair(&cfg, &out.params, &p.lineart_a, &p.lineart_b)?;
        let truth = Truth { regions_a: &p.regions_a, regions_b: &p.regions_b, corr: &p.corr };
        let (pr, rr) = evaluate_prediction(&cfg, &pred, truth)?;
        patch.extend(pr);
        region.push(rr);
    }
    print!("{}", patch_table(&mean_patch_reports(&patch)));
    if let Some(r) = mean_region_reports(&region) {
        print!("{}", region_table(&r));
    }
    Ok(())
}
