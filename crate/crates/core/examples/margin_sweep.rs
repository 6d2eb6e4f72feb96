//! Sweeps the soft margin and writes `sweep_margin.csv`. Uses blobs unless
//! `mnist` is passed, in which case it runs the `paper-mnist-desk` preset.
//!
//! ```text
//! cargo run --release --example margin_sweep
//! cargo run --release --example margin_sweep -- mnist
//! ```

use taylor_softmax::experiment::{cmd_sweep_margin, default_margins, ExperimentConfig};

fn main() -> taylor_softmax::Result<()> {
    let mnist = std::env::args().nth(1).is_some_and(|a| a == "mnist");
    let mut cfg = ExperimentConfig::preset(if mnist { "paper-mnist-desk" } else { "blobs-quick" })?;
    cfg.out = std::env::temp_dir().join("taylor-softmax-margin-sweep");
    let sweep = cmd_sweep_margin(&cfg, &default_margins())?;
    for (m, c) in sweep.margins.iter().zip(&sweep.cells) {
        println!("m={m:.1}  mean {:.4}  sd {}", c.mean, c.sd.map_or("-".into(), |s| format!("{s:.4}")));
    }
    println!("best margin {}; wrote {}", sweep.best_margin, cfg.out.join("sweep_margin.csv").display());
    Ok(())
}
