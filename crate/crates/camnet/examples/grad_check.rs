//! Check tape gradients of a small multipath network against central
//! finite differences.
//!
//! Run with `cargo run --release --example grad_check`.

use camnet::arch::build_named;
use camnet::data::one_hot;
use camnet::network::forward_nodes;
use camnet::rng::stream;
use camnet::tensor::{grad_check, Tensor};
use camnet::Result;
use rand::Rng;

fn main() -> Result<()> {
    let model = build_named::<f64>("x2 rC4 C4 rC6 C6 rF10", &[1, 12, 12], 10, 3)?;
    let mut rng = stream(5, "example-gc", &[]);
    let image = Tensor::from_fn(vec![1, 12, 12], |_| rng.random_range(-1.0..1.0));
    let target = one_hot::<f64>(3, 10);

    let trunk = model.trunk().to_vec();
    let head = model.head_layers(0).to_vec();
    let mut params = model.params;
    for id in params.ids().collect::<Vec<_>>() {
        for v in params.get_mut(id).tensor.values_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let report = grad_check(
        &mut params,
        |tape| {
            let x = tape.constant(&image);
            let (mid, _) = forward_nodes(tape, &trunk, vec![x], None)?;
            let (_, pre) = forward_nodes(tape, &head, mid, None)?;
            let probs = tape.softmax(pre[0]);
            let t = tape.constant(&target);
            tape.cross_entropy(probs, t)
        },
        1e-5,
        4,
    )?;
    println!(
        "checked {} coordinates, worst relative error {:.3e}",
        report.checked, report.max_rel_err
    );
    assert!(report.max_rel_err < 1e-4);
    println!("analytic gradients agree with finite differences");
    Ok(())
}
