//! Trace one input through a trained model and emit the route graph.
//!
//! Progress goes to stderr and the DOT text to stdout, so
//! `cargo run --release --example route_trace > route.dot` leaves a
//! graph that `dot -Tpng route.dot` renders.

use camnet::arch::build_named;
use camnet::data::{glyphs, GlyphFamily};
use camnet::trace::{capture_trace, export_dot, export_json};
use camnet::train::{fit, TrainConfig};
use camnet::Result;

fn main() -> Result<()> {
    let train = glyphs::glyph_dataset::<f32>(GlyphFamily::Strokes, "strokes/train", 600, 1);
    let test = glyphs::glyph_dataset::<f32>(GlyphFamily::Strokes, "strokes/test", 200, 99);

    let mut model = build_named::<f32>("x2 rC8 C8 rC16 C16 rF10", &[1, 28, 28], 10, 7)?;
    let cfg = TrainConfig { epochs: 2, log: true, ..TrainConfig::default() };
    fit(&mut model, 0, &[train], &[test.clone()], &cfg)?;

    let trace = capture_trace(&model, &test.images[0], 0, "strokes/test[0]", "strokes")?;
    for layer in &trace.layers {
        let strengths: Vec<String> =
            layer.strengths.iter().map(|s| format!("{s:.3}")).collect();
        eprintln!("{:<8} strengths [{}]", layer.name, strengths.join(", "));
    }
    eprintln!("json payload is {} bytes", export_json(&trace)?.len());

    print!("{}", export_dot(&trace));
    Ok(())
}
