//! Learn two tasks in sequence, distilling the first task's responses
//! while the second trains, and print the accuracy history.
//!
//! Run with `cargo run --release --example lifelong_lwf`.

use camnet::arch::build_named;
use camnet::data::{glyphs, GlyphFamily};
use camnet::lifelong::{lwf_run, LwfConfig, TaskData};
use camnet::train::TrainConfig;
use camnet::Result;

fn main() -> Result<()> {
    let task = |family: GlyphFamily| -> TaskData<f32> {
        let name = family.as_str();
        TaskData {
            train: glyphs::glyph_dataset(family, format!("{name}/train"), 800, 1),
            test: glyphs::glyph_dataset(family, format!("{name}/test"), 300, 99),
        }
    };
    let tasks = [task(GlyphFamily::Strokes), task(GlyphFamily::Garments)];

    let mut model = build_named::<f32>("x2 rC8 C8 rC16 C16 rF10", &[1, 28, 28], 10, 7)?;
    let cfg = LwfConfig::default();
    let train_cfg = TrainConfig { epochs: 3, log: true, ..TrainConfig::default() };
    println!(
        "distilling with weight {} at temperature {}",
        cfg.lambda_old, cfg.temperature
    );

    let history = lwf_run(&mut model, &tasks, &cfg, &train_cfg)?;
    println!("\nphase  task  accuracy");
    for row in &history {
        println!("{:>5} {:>5}  {:.4}", row.phase, row.task, row.accuracy);
    }
    Ok(())
}
