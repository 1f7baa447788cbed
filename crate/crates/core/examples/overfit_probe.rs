//! Trains the default classifier on a handful of glyphs and prints the loss
//! curve, for judging learning rates and step cost.
//!
//! `cargo run --release --example overfit_probe -- [samples] [steps] [lr] [seed] [batch]`

use std::time::Instant;

use islr_core::data::glyphs::render_glyph;
use islr_core::data::{sample_jitter, LabelMap, GLYPH_CANVAS};
use islr_core::imaging::{run_pipeline, PipelineConfig, RgbImage};
use islr_core::model::{build_isl_cnn, IslCnnConfig};
use islr_core::train::{evaluate_set, SampleSet, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(8), |s| s.parse())?;
    let steps: usize = args.next().map_or(Ok(200), |s| s.parse())?;
    let lr: f64 = args.next().map_or(Ok(0.01), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let batch: usize = args.next().map_or(Ok(n), |s| s.parse())?;

    let labels = LabelMap::isl();
    let pipeline = PipelineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let label = (i * 7 + i / labels.len()) % labels.len();
        let ch = labels.names()[label].chars().next().unwrap();
        let glyph = render_glyph(ch, GLYPH_CANVAS, sample_jitter(&mut rng)).unwrap();
        let out = run_pipeline(&RgbImage::from(&glyph), &pipeline)?;
        inputs.extend(out.pixels().iter().map(|&p| p as f32 / 255.0));
        ys.push(label);
    }
    let set = SampleSet::from_parts([1, 100, 100], inputs, ys)?;
    let model = build_isl_cnn(&IslCnnConfig::default(), seed)?;
    let cfg = TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        seed,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, set.clone(), set.clone(), cfg)?;
    let all: Vec<usize> = (0..n).collect();
    let batches: Vec<&[usize]> = all.chunks(batch).collect();
    let t0 = Instant::now();
    for step in 1..=steps {
        let loss = trainer.step(batches[(step - 1) % batches.len()])?;
        if step % 10 == 0 || step <= 5 || batch < n {
            let (acc, eval_loss) = if batch < n && step % 10 != 0 {
                (f64::NAN, f64::NAN)
            } else {
                evaluate_set(trainer.model(), &set)?
            };
            println!(
                "step {step:4} batch_loss {loss:.5} infer_loss {eval_loss:.5} acc {acc:.3} ({:.2}s/step)",
                t0.elapsed().as_secs_f64() / step as f64
            );
        }
    }
    Ok(())
}
