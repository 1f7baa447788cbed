//! Generates the synthetic glyph set and trains the default classifier on it,
//! printing one metrics row per epoch.
//!
//! `cargo run --release --example desk_scale -- [per_class] [epochs] [lr]`

use std::time::Instant;

use islr_core::data::{generate_synthetic_glyphs, stratified_split};
use islr_core::imaging::PipelineConfig;
use islr_core::model::{build_isl_cnn, IslCnnConfig};
use islr_core::train::{SampleSet, TrainConfig, Trainer, CSV_HEADER};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let per_class: usize = args.next().map_or(Ok(200), |s| s.parse())?;
    let epochs: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let lr: f64 = args.next().map_or(Ok(0.01), |s| s.parse())?;

    let dir = std::env::temp_dir().join(format!("islr-desk-{per_class}"));
    let index = generate_synthetic_glyphs(per_class, 7, &dir)?;
    let split = stratified_split(&index, 0.2, 7)?;
    let pipeline = PipelineConfig::default();

    let t0 = Instant::now();
    let train = SampleSet::load(&split.train, &pipeline)?;
    let val = SampleSet::load(&split.val, &pipeline)?;
    eprintln!(
        "preprocessed {} + {} images in {:.1?}",
        train.len(),
        val.len(),
        t0.elapsed()
    );

    let model = build_isl_cnn(&IslCnnConfig::default(), 7)?;
    let cfg = TrainConfig {
        learning_rate: lr,
        epochs,
        seed: 7,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, train, val, cfg)?;
    println!("{CSV_HEADER},seconds");
    for _ in 0..epochs {
        let t = Instant::now();
        let m = trainer.run_epoch()?;
        println!(
            "{},{:.6},{:.4},{:.6},{:.4},{:.1}",
            m.epoch,
            m.train_loss,
            m.train_acc,
            m.val_loss,
            m.val_acc,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
