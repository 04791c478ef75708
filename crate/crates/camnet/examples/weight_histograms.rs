//! Compare the weight distributions that parallel paths of one layer
//! learn under joint two-domain training.
//!
//! Run with `cargo run --release --example weight_histograms`.

use camnet::arch::build_named;
use camnet::data::{glyphs, GlyphFamily};
use camnet::trace::{tv_distance, weight_histograms};
use camnet::train::{fit, TrainConfig};
use camnet::Result;

fn bar(count: usize, max: usize) -> String {
    let width = 30 * count / max.max(1);
    "#".repeat(width)
}

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
    let cfg = TrainConfig { epochs: 3, log: true, ..TrainConfig::default() };
    fit(&mut model, 0, &trains, &tests, &cfg)?;

    for h in weight_histograms(&model, "", 24)? {
        let max = h.counts.iter().flatten().copied().max().unwrap_or(1);
        println!("\nlayer {} ({} bins over [{:.3}, {:.3}])", h.layer, 24, h.edges[0], h.edges[24]);
        for (p, counts) in h.counts.iter().enumerate() {
            println!("  path {}", p + 1);
            for (b, &c) in counts.iter().enumerate() {
                if c > 0 {
                    println!("    [{:>7.3}, {:>7.3}) {}", h.edges[b], h.edges[b + 1], bar(c, max));
                }
            }
        }
        if h.counts.len() == 2 {
            println!(
                "  total-variation distance between the paths: {:.4}",
                tv_distance(&h.counts[0], &h.counts[1])?
            );
        }
    }
    Ok(())
}
