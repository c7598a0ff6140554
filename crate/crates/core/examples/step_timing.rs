//! Times forward+backward of the desk-scale model on one 64×64 scene.

use std::time::Instant;

use depthnet::data::generate_scene;
use depthnet::model::{DepthNet, ModelConfig};
use depthnet::objective::SilogParams;
use depthnet::Tape;

fn main() -> depthnet::Result<()> {
    let cfg = ModelConfig::default().fit_to_input(64, 64);
    let model = DepthNet::<f32>::new(cfg)?;
    println!("parameters: {}", model.num_parameters());
    let s = generate_scene::<f32>(0, 64, 64, 1e-3, 10.0)?;
    for _ in 0..3 {
        let t0 = Instant::now();
        let tape = Tape::new(&model.params);
        let loss = model.forward_loss(&tape, &s, SilogParams::default())?;
        let t1 = Instant::now();
        let g = tape.backward(loss)?;
        let t2 = Instant::now();
        println!(
            "loss {:.4} forward {:?} backward {:?} nodes {} visited {}",
            loss.value().item(),
            t1 - t0,
            t2 - t1,
            tape.len(),
            g.visited()
        );
    }
    Ok(())
}
