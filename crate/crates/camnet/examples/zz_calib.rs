//! Scratch calibration runs; deleted before release.

use std::time::Instant;

use camnet::arch::{build_network, ArchSpec};
use camnet::data::glyphs::glyph_dataset;
use camnet::data::pairs::pair_dataset;
use camnet::data::{GlyphFamily, PairStyle};
use camnet::lifelong::{lwf_run, LwfConfig, TaskData};
use camnet::trace::{capture_traces, gate_divergence, tv_distance, weight_histograms};
use camnet::train::{fit, fit_pairs, TrainConfig};
use camnet::Result;

fn main() -> Result<()> {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "gen" => gen_speed(),
        "c6" => c6_epoch(),
        "c8arch" => c8_epoch(),
        "c8lwf" => c8_margin(),
        "c9" => c9_full(),
        other => {
            eprintln!("unknown calibration {other:?}");
            Ok(())
        }
    }
}

fn gen_speed() -> Result<()> {
    let t0 = Instant::now();
    let d = glyph_dataset::<f32>(GlyphFamily::Strokes, "s", 10_000, 77);
    println!("10k strokes gen: {:.1}s ({} images)", t0.elapsed().as_secs_f64(), d.images.len());
    Ok(())
}

fn c6_epoch() -> Result<()> {
    let train = glyph_dataset::<f32>(GlyphFamily::Strokes, "mnist/train", 10_000, 77);
    let test = glyph_dataset::<f32>(GlyphFamily::Strokes, "mnist/test", 2_000, 77 ^ 0x7e57_da7a);
    let spec = ArchSpec::parse("tinyCAMNet3")?;
    let mut model = build_network::<f32>(&spec, &[1, 28, 28], 10, 1)?;
    let cfg = TrainConfig {
        epochs: 1,
        augment: Some(Default::default()),
        eval_subset: Some(500),
        log: true,
        seed: 1,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let rep = fit(&mut model, 0, &[train], &[test], &cfg)?;
    println!(
        "c6 one epoch: {:.1}s, final test error {:.2}%",
        t0.elapsed().as_secs_f64(),
        100.0 * rep.final_test_error
    );
    Ok(())
}

fn c8_epoch() -> Result<()> {
    let train = glyph_dataset::<f32>(GlyphFamily::Strokes, "mnist/train", 10_000, 77);
    let test = glyph_dataset::<f32>(GlyphFamily::Strokes, "mnist/test", 1_000, 77 ^ 0x7e57_da7a);
    let spec = ArchSpec::parse("x2 rC8 C8 rC16 C16 rF10")?;
    let mut model = build_network::<f32>(&spec, &[1, 28, 28], 10, 1)?;
    let cfg = TrainConfig {
        epochs: 1,
        eval_subset: Some(500),
        log: true,
        seed: 1,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let rep = fit(&mut model, 0, &[train], &[test], &cfg)?;
    println!(
        "c8 arch one epoch: {:.1}s, final test error {:.2}%",
        t0.elapsed().as_secs_f64(),
        100.0 * rep.final_test_error
    );
    Ok(())
}

fn c8_margin() -> Result<()> {
    let tasks = vec![
        TaskData {
            train: glyph_dataset::<f32>(GlyphFamily::Strokes, "mnist/train", 3_000, 77),
            test: glyph_dataset::<f32>(GlyphFamily::Strokes, "mnist/test", 1_000, 77 ^ 0x7e57_da7a),
        },
        TaskData {
            train: glyph_dataset::<f32>(GlyphFamily::Garments, "fashion/train", 3_000, 78),
            test: glyph_dataset::<f32>(
                GlyphFamily::Garments,
                "fashion/test",
                1_000,
                78 ^ 0x7e57_da7a,
            ),
        },
    ];
    let cfg = TrainConfig {
        epochs: 3,
        eval_subset: Some(500),
        seed: 1,
        ..TrainConfig::default()
    };
    let spec = ArchSpec::parse("x2 rC8 C8 rC16 C16 rF10")?;
    let t0 = Instant::now();
    for lambda in [1.0, 0.0] {
        let mut model = build_network::<f32>(&spec, &[1, 28, 28], 10, 1)?;
        let lwf = LwfConfig { lambda_old: lambda, temperature: 2.0 };
        let history = lwf_run(&mut model, &tasks, &lwf, &cfg)?;
        for row in &history {
            println!(
                "lambda {lambda}: phase {} task {} accuracy {:.4}",
                row.phase, row.task, row.accuracy
            );
        }
    }
    println!("c8 small margin probe: {:.1}s total", t0.elapsed().as_secs_f64());
    Ok(())
}

fn c9_full() -> Result<()> {
    let n: usize = std::env::args().nth(2).map_or(500, |s| s.parse().unwrap());
    let arch = std::env::args().nth(3).unwrap_or_else(|| "encdec16x2b8deep".into());
    let seed: u64 = std::env::args().nth(4).map_or(1, |s| s.parse().unwrap());
    let train = [
        pair_dataset::<f32>(PairStyle::FillIn, "fill/train", n, 16, 21),
        pair_dataset::<f32>(PairStyle::Carve, "carve/train", n, 16, 22),
    ];
    let test = [
        pair_dataset::<f32>(PairStyle::FillIn, "fill/test", 150, 16, 21 ^ 0x7e57_da7a),
        pair_dataset::<f32>(PairStyle::Carve, "carve/test", 150, 16, 22 ^ 0x7e57_da7a),
    ];
    let cfg = TrainConfig {
        epochs: 10,
        eval_subset: Some(150),
        log: false,
        seed,
        ..TrainConfig::default()
    };
    for frozen in [false, true] {
        let mut spec = ArchSpec::parse(&arch)?;
        spec.frozen = frozen;
        let mut model = build_network::<f32>(&spec, &[3, 16, 16], 3, seed)?;
        let t0 = Instant::now();
        let rep = fit_pairs(&mut model, 0, &train, &test, &cfg)?;
        println!(
            "frozen={frozen}: 10 epochs in {:.1}s, final test L2 {:.4}",
            t0.elapsed().as_secs_f64(),
            rep.final_test_loss
        );
        if !frozen {
            let a = capture_traces(&model, &test[0].inputs[..50], 0, "fill")?;
            let b = capture_traces(&model, &test[1].inputs[..50], 0, "carve")?;
            for d in gate_divergence(&[a, b])? {
                println!("divergence {} = {:.4}", d.layer, d.value);
            }
        }
        for h in weight_histograms(&model, "", 40)? {
            let tv = tv_distance(&h.counts[0], &h.counts[1])?;
            println!("frozen={frozen} tv {} = {:.4}", h.layer, tv);
        }
    }
    Ok(())
}
