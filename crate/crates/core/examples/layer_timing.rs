//! Per-layer forward/backward wall time of the default classifier on one batch.
//!
//! `cargo run --release --example layer_timing -- [batch] [rounds]`
//!
//! Earlier rounds warm the allocator; only the last one is reported.

use std::time::Instant;

use islr_core::model::IslCnnConfig;
use islr_core::nn::{Mode, Network, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let batch: usize = std::env::args().nth(1).map_or(32, |s| s.parse().unwrap());
    let cfg = IslCnnConfig::default();
    let net = Network::<f32>::build(&cfg.layers(), &cfg.input_shape(), 0).unwrap();
    let mut layers = net.layers().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let input = Tensor::from_fn(&[batch, 1, 100, 100], |i| ((i * 7919) % 13) as f32 / 13.0);
    let rounds: usize = std::env::args().nth(2).map_or(2, |s| s.parse().unwrap());
    for _ in 0..rounds - 1 {
        let mut x = input.clone();
        for layer in layers.iter_mut() {
            x = layer.forward(x, Mode::Train, &mut rng).unwrap();
        }
        let mut g = x;
        for layer in layers.iter_mut().rev() {
            g = layer.backward(g).unwrap();
        }
    }
    let mut x = input;
    let mut fwd = Vec::new();
    for (layer, conf) in layers.iter_mut().zip(cfg.layers()) {
        let t = Instant::now();
        x = layer.forward(x, Mode::Train, &mut rng).unwrap();
        fwd.push((format!("{conf:?}"), t.elapsed().as_secs_f64()));
    }
    let mut g = Tensor::from_fn(x.shape(), |i| (i % 3) as f32 * 0.01);
    let mut bwd = vec![0.0; layers.len()];
    for (i, layer) in layers.iter_mut().enumerate().rev() {
        let t = Instant::now();
        g = layer.backward(g).unwrap();
        bwd[i] = t.elapsed().as_secs_f64();
    }
    let total: f64 = fwd.iter().map(|f| f.1).sum::<f64>() + bwd.iter().sum::<f64>();
    for ((name, f), b) in fwd.iter().zip(&bwd) {
        let short: String = name.chars().take(40).collect();
        println!("{short:<42} fwd {f:8.4}s  bwd {b:8.4}s");
    }
    println!(
        "total {total:.3}s for batch {batch} ({:.4}s/sample)",
        total / batch as f64
    );
}
