//! Build every architecture preset and print its shape summary.
//!
//! Run with `cargo run --release --example arch_zoo`.

use camnet::arch::build_named;
use camnet::Result;

fn main() -> Result<()> {
    let presets = [
        "BaseCNN",
        "BaseCNN2",
        "CAMNet2",
        "CAMNet3",
        "CAMNet4",
        "tinyCAMNet3",
        "MultiCNN3",
    ];
    println!("{:<14} {:>12} {:>8} {:>8}", "architecture", "parameters", "layers", "heads");
    for name in presets {
        let model = build_named::<f32>(name, &[1, 28, 28], 10, 7)?;
        let layers = model.trunk().len() + model.head_layers(0).len();
        println!(
            "{name:<14} {:>12} {layers:>8} {:>8}",
            model.params.total_scalars(),
            model.heads()
        );
    }

    let custom = "x2 rC8 C8 rF10";
    let model = build_named::<f32>(custom, &[1, 28, 28], 10, 7)?;
    println!("\ncustom {custom:?} holds {} parameters:", model.params.total_scalars());
    for node in model.trunk().iter().chain(model.head_layers(0)) {
        println!("  {}", node.name());
    }

    let encdec = "encdec32x2b8";
    let model = build_named::<f32>(encdec, &[1, 32, 32], 1, 7)?;
    println!(
        "\n{encdec:?} maps 32x32 images to 32x32 images with {} parameters",
        model.params.total_scalars()
    );
    Ok(())
}
