//! Cross-entropy losses and gradients of each head, plus the implicit
//! regularizer log(taylor / softmax) that separates the two Taylor
//! gradients.
//!
//! ```text
//! cargo run --example loss_gradients
//! ```

use taylor_softmax::losses::{loss_grad, regularizer};
use taylor_softmax::{LogitVector, Margin, TargetVector, TaylorOrder, VariantConfig};

fn main() -> taylor_softmax::Result<()> {
    let z = LogitVector::new(vec![0.5, -1.0, 1.5])?;
    let y = TargetVector::class(2);
    let n2 = TaylorOrder::new(2)?;
    let m = Margin::new(0.3)?;
    let heads = [
        VariantConfig::Softmax,
        VariantConfig::Taylor { order: n2 },
        VariantConfig::TaylorInf { order: n2 },
        VariantConfig::SmSoftmax { margin: m },
        VariantConfig::SmTaylor { order: n2, margin: m },
    ];
    for head in heads {
        let lg = loss_grad(&head, &z, y)?;
        let g: Vec<String> = lg.grad.iter().map(|v| format!("{v:+.5}")).collect();
        println!("{:<22} loss {:.6}  grad [{}]", head.to_string(), lg.loss, g.join(", "));
    }
    println!();
    // taylor_inf keeps the loss of taylor but descends along Tsm - y.
    let r = regularizer(&LogitVector::new(vec![1.0, 0.0])?, n2);
    println!("log(Tsm/sm) at z=[1,0], n=2: [{:.9}, {:.9}]", r[0], r[1]);
    Ok(())
}
