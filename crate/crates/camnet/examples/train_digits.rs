//! Train a small multipath classifier on generated glyphs and print
//! per-epoch metrics.
//!
//! Run with `cargo run --release --example train_digits`.

use camnet::arch::build_named;
use camnet::data::{glyphs, GlyphFamily};
use camnet::train::{fit, TrainConfig};
use camnet::Result;

fn main() -> Result<()> {
    let train = glyphs::glyph_dataset::<f32>(GlyphFamily::Strokes, "strokes/train", 1200, 1);
    let test = glyphs::glyph_dataset::<f32>(GlyphFamily::Strokes, "strokes/test", 400, 99);

    let mut model = build_named::<f32>("tinyCAMNet3", &[1, 28, 28], train.classes, 7)?;
    println!(
        "tinyCAMNet3 holds {} parameters; training on {} glyphs",
        model.params.total_scalars(),
        train.len()
    );

    let cfg = TrainConfig { epochs: 3, log: true, ..TrainConfig::default() };
    let report = fit(&mut model, 0, &[train], &[test], &cfg)?;
    println!(
        "final test error {:.2}% (best epoch {})",
        100.0 * report.final_test_error,
        report.best_epoch
    );
    Ok(())
}
