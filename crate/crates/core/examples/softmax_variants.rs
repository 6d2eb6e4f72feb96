//! Every output layer on the same logits: softmax, Taylor softmax, and the
//! soft-margin versions that subtract a margin at the target class.
//!
//! ```text
//! cargo run --example softmax_variants
//! ```

use taylor_softmax::activations::{sm_softmax, sm_taylor_softmax, softmax, taylor_softmax};
use taylor_softmax::{LogitVector, Margin, TaylorOrder, VariantConfig};

fn show(name: &str, p: &[f64]) {
    let cells: Vec<String> = p.iter().map(|x| format!("{x:.4}")).collect();
    println!("{name:<24} [{}]  sum {:.15}", cells.join(", "), p.iter().sum::<f64>());
}

fn main() -> taylor_softmax::Result<()> {
    let z = LogitVector::new(vec![2.0, 1.0, -0.5, -3.0])?;
    let target = 0;
    let m = Margin::new(0.6)?;
    show("softmax", softmax(&z).as_slice());
    for n in [2, 4, 10, 30] {
        show(&format!("taylor n={n}"), taylor_softmax(&z, TaylorOrder::new(n)?).as_slice());
    }
    show("sm_softmax m=0.6", sm_softmax(&z, target, m)?.as_slice());
    show("sm_taylor n=2 m=0.6", sm_taylor_softmax(&z, target, TaylorOrder::new(2)?, m)?.as_slice());

    // The margin only shapes training; predictions drop it.
    let head = VariantConfig::SmTaylor { order: TaylorOrder::new(2)?, margin: m };
    show("sm_taylor at inference", head.inference_probabilities(&z).as_slice());
    println!("prediction: class {}", head.predict(&z));
    Ok(())
}
