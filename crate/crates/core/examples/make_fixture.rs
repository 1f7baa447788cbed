//! Builds the small trained checkpoint and glyph image used by the CLI
//! prediction test, and prints the label the model assigns to the glyph.
//!
//! `cargo run --release --example make_fixture -- <out-dir>`

use std::fs;
use std::path::PathBuf;

use islr_core::data::glyphs::{render_glyph, Jitter};
use islr_core::data::{generate_synthetic_glyphs, stratified_split, GLYPH_CANVAS};
use islr_core::imaging::{save_pgm, PipelineConfig};
use islr_core::model::{save_checkpoint, IslCnnConfig};
use islr_core::train::{predict_image, train_epochs, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .ok_or("usage: make_fixture <out-dir>")?,
    );
    fs::create_dir_all(&out)?;
    let data = std::env::temp_dir().join("islr-fixture-data");
    let _ = fs::remove_dir_all(&data);
    let index = generate_synthetic_glyphs(30, 11, &data)?;
    let split = stratified_split(&index, 0.2, 11)?;

    let config = IslCnnConfig {
        input_size: 32,
        block1_filters: 8,
        block2_filters: 16,
        dense_units: 64,
        ..Default::default()
    };
    let pipeline = PipelineConfig {
        model_input_size: 32,
        ..Default::default()
    };
    let cfg = TrainConfig {
        learning_rate: 0.001,
        epochs: 12,
        seed: 11,
        ..Default::default()
    };
    let model = islr_core::model::build_isl_cnn(&config, 11)?;
    let (history, model) = train_epochs(model, &split, &pipeline, &cfg)?;
    let last = history.last().expect("at least one epoch");
    eprintln!(
        "train_acc {:.4} val_acc {:.4}",
        last.train_acc, last.val_acc
    );

    let ckpt = out.join("glyph_small.ckpt");
    save_checkpoint(&model, &index.labels, &ckpt)?;
    let jitter = Jitter {
        rotation_deg: 6.0,
        scale: 1.05,
        dx: -4.0,
        dy: 3.0,
    };
    let glyph = out.join("glyph_R.pgm");
    save_pgm(
        &render_glyph('R', GLYPH_CANVAS, jitter).expect("R has strokes"),
        &glyph,
    )?;
    let (label, confidence) = predict_image(&model, &index.labels, &glyph, &pipeline)?;
    println!("{label} {confidence:.6}");
    Ok(())
}
