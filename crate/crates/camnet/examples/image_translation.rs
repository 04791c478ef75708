//! Train a multipath encoder-decoder to translate images between two
//! synthetic pixel domains.
//!
//! Run with `cargo run --release --example image_translation`.

use camnet::arch::build_named;
use camnet::data::{pairs, PairStyle};
use camnet::train::{fit_pairs, TrainConfig};
use camnet::Result;

fn main() -> Result<()> {
    let size = 16;
    let trains = [
        pairs::pair_dataset::<f32>(PairStyle::FillIn, "fill/train", 300, size, 1),
        pairs::pair_dataset::<f32>(PairStyle::Carve, "carve/train", 300, size, 1),
    ];
    let tests = [
        pairs::pair_dataset::<f32>(PairStyle::FillIn, "fill/test", 100, size, 99),
        pairs::pair_dataset::<f32>(PairStyle::Carve, "carve/test", 100, size, 99),
    ];

    let mut model = build_named::<f32>("encdec16x2b8", &[3, size, size], 3, 7)?;
    println!(
        "encoder-decoder with {} parameters on {size}x{size} image pairs",
        model.params.total_scalars()
    );
    let cfg = TrainConfig { epochs: 4, log: true, ..TrainConfig::default() };
    let report = fit_pairs(&mut model, 0, &trains, &tests, &cfg)?;
    println!(
        "mean absolute pixel error {:.4} after epoch {}",
        report.final_test_error, report.best_epoch
    );
    Ok(())
}
