//! Overfits a handful of synthetic scenes and prints training-set metrics.
//!
//! Usage: `overfit [steps] [lr_start] [lr_end] [glkam 0|1] [gbpm 0|1]`

use std::time::Instant;

use depthnet::data::generate_dataset;
use depthnet::model::{DepthNet, ModelConfig};
use depthnet::train::{evaluate, TrainConfig, Trainer};

fn main() -> depthnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let steps = arg(0, 1000.0) as usize;
    let cfg = ModelConfig {
        use_glkam: arg(3, 1.0) != 0.0,
        use_gbpm: arg(4, 1.0) != 0.0,
        ..ModelConfig::default()
    }
    .fit_to_input(64, 64);
    let scenes = generate_dataset::<f32>(0, 8, 64, 64, cfg.d_min, cfg.d_max)?;
    let model = DepthNet::<f32>::new(cfg)?;
    let train = TrainConfig {
        steps,
        lr_start: arg(1, 4e-5),
        lr_end: arg(2, 4e-6),
        augment: None,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let mut trainer = Trainer::new(model, train);
    trainer.run(&scenes, |l| {
        if l.step % 50 == 0 {
            println!("step {} lr {:.2e} loss {:.4}", l.step, l.lr, l.loss);
        }
    })?;
    let r = evaluate(&trainer.model, &scenes, false)?;
    println!("{:?}\n{}", t0.elapsed(), r.to_key_value());
    Ok(())
}
