//! Train one model on two domains at once, then measure how differently
//! they route through the shared layers.
//!
//! Run with `cargo run --release --example joint_routing`.

use camnet::arch::build_named;
use camnet::data::{glyphs, GlyphFamily};
use camnet::trace::{capture_traces, gate_divergence};
use camnet::train::{fit, TrainConfig};
use camnet::Result;

fn main() -> Result<()> {
    let domains = [GlyphFamily::Strokes, GlyphFamily::Garments];
    let trains: Vec<_> = domains
        .iter()
        .map(|&f| glyphs::glyph_dataset::<f32>(f, format!("{}/train", f.as_str()), 600, 1))
        .collect();
    let tests: Vec<_> = domains
        .iter()
        .map(|&f| glyphs::glyph_dataset::<f32>(f, format!("{}/test", f.as_str()), 200, 99))
        .collect();

    let mut model = build_named::<f32>("x2 rC8 C8 rC16 C16 rF10", &[1, 28, 28], 10, 7)?;
    let cfg = TrainConfig { epochs: 4, log: true, ..TrainConfig::default() };
    let report = fit(&mut model, 0, &trains, &tests, &cfg)?;
    println!("joint test error {:.2}%", 100.0 * report.final_test_error);

    let groups: Vec<_> = tests
        .iter()
        .map(|t| capture_traces(&model, &t.images[..50], 0, &t.name))
        .collect::<Result<_>>()?;
    println!("\nmean gate distance between the domains, per routing layer:");
    for d in gate_divergence(&groups)? {
        println!("  {:<6} {:.4}", d.layer, d.value);
    }
    Ok(())
}
