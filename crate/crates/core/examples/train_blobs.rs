//! Trains an MLP on Gaussian blobs with each head. Needs no downloads.
//!
//! ```text
//! cargo run --release --example train_blobs
//! ```

use taylor_softmax::data::make_blobs;
use taylor_softmax::nn::{build_topology, train, Topology, TrainConfig};
use taylor_softmax::{Margin, TaylorOrder, VariantConfig};

fn main() -> taylor_softmax::Result<()> {
    let (train_set, test_set) = make_blobs(4, 150, 10, 3.0, 0)?;
    let cfg = TrainConfig { epochs: 8, batch_size: 16, learning_rate: 0.02, ..TrainConfig::default() };
    let heads = [
        VariantConfig::Softmax,
        VariantConfig::Taylor { order: TaylorOrder::new(2)? },
        VariantConfig::TaylorInf { order: TaylorOrder::new(2)? },
        VariantConfig::SmSoftmax { margin: Margin::new(0.6)? },
        VariantConfig::SmTaylor { order: TaylorOrder::new(2)?, margin: Margin::new(0.6)? },
    ];
    for head in heads {
        let mut net = build_topology(Topology::Mlp, train_set.shape(), 4, head, 0)?;
        let records = train(&mut net, &train_set, &test_set, &cfg)?;
        let losses: Vec<String> = records.iter().map(|r| format!("{:.3}", r.train_loss)).collect();
        let last = records.last().expect("at least one epoch");
        println!("{:<22} test acc {:.4}  loss by epoch {}", head.to_string(), last.test_accuracy, losses.join(" "));
    }
    Ok(())
}
