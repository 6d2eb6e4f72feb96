//! Trains the 784-256-10 MLP on a 10k stratified MNIST subset with one head,
//! using the `paper-mnist-desk` training settings.
//!
//! ```text
//! cargo run --release --example mnist_mlp -- sm_taylor 2 0.6
//! cargo run --release --example mnist_mlp -- softmax
//! ```
//!
//! Arguments are `KIND [ORDER|-] [MARGIN|-]`. MNIST is read from
//! `$TAYLOR_SOFTMAX_MNIST_DIR` or `data/mnist`.

use taylor_softmax::data::{default_mnist_dir, load_mnist, subset};
use taylor_softmax::experiment::ExperimentConfig;
use taylor_softmax::nn::{build_topology, train_with_progress, Topology};
use taylor_softmax::{VariantConfig, VariantKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: VariantKind = args.first().map_or("softmax", String::as_str).parse()?;
    let order = args.get(1).filter(|s| *s != "-").map(|s| s.parse()).transpose()?;
    let margin = args.get(2).filter(|s| *s != "-").map(|s| s.parse()).transpose()?;
    let head = VariantConfig::from_parts(kind, order, margin)?;

    let mnist = load_mnist(default_mnist_dir())?;
    let train_set = subset(&mnist.train, 10_000, 0)?;
    let cfg = ExperimentConfig::preset("paper-mnist-desk")?.train;
    let mut net = build_topology(Topology::MnistMlp, train_set.shape(), 10, head, cfg.seed)?;
    println!("{head}: {} parameters, {cfg:?}", net.param_count());
    train_with_progress(&mut net, &train_set, &mnist.test, &cfg, |r| {
        println!(
            "epoch {}  loss {:.4}  train acc {:.4}  test acc {:.4}  {} ms",
            r.epoch, r.train_loss, r.train_accuracy, r.test_accuracy, r.wall_ms
        );
    })?;
    Ok(())
}
