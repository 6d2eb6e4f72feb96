//! Central finite differences against the analytic gradients, at the loss
//! level and through a small network.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use taylor_softmax::data::make_blobs;
use taylor_softmax::gradcheck::{check_network_gradient, check_variant, DEFAULT_STEP};
use taylor_softmax::nn::{build_topology, Topology};
use taylor_softmax::{LogitVector, Margin, TaylorOrder, VariantConfig};

fn main() -> taylor_softmax::Result<()> {
    let z = LogitVector::new(vec![0.7, -2.2, 1.1, 0.0, -0.4])?;
    let heads = [
        VariantConfig::Softmax,
        VariantConfig::Taylor { order: TaylorOrder::new(4)? },
        VariantConfig::TaylorInf { order: TaylorOrder::new(4)? },
        VariantConfig::SmSoftmax { margin: Margin::new(0.6)? },
        VariantConfig::SmTaylor { order: TaylorOrder::new(6)?, margin: Margin::new(0.6)? },
    ];
    let (batch, _) = make_blobs(5, 5, 6, 1.0, 3)?;
    for head in heads {
        let loss = check_variant(&head, &z, 2, DEFAULT_STEP, 1e-6)?;
        let net = build_topology(Topology::Mlp, batch.shape(), 5, head, 0)?;
        let network = check_network_gradient(&net, &batch, &head, DEFAULT_STEP, 1e-6, 0)?;
        println!(
            "{:<22} loss rel err {:.2e} ({})   network rel err {:.2e} ({}, {} skipped at kinks)",
            head.to_string(),
            loss.max_rel_error,
            if loss.passed { "pass" } else { "mismatch" },
            network.max_rel_error,
            if network.passed { "pass" } else { "mismatch" },
            network.skipped
        );
    }
    println!("\ntaylor_inf descends along Tsm - y, which is not the gradient of its loss.");
    Ok(())
}
