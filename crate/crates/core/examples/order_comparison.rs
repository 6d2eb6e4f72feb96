//! The variant-by-order table: softmax, Taylor, Taylor with the simplified
//! gradient, SM-softmax and SM-Taylor over n = 2..10. Blobs by default,
//! `mnist` for the `paper-mnist-desk` preset (about 51 runs).
//!
//! ```text
//! cargo run --release --example order_comparison
//! ```

use taylor_softmax::experiment::{cmd_compare, ExperimentConfig, DEFAULT_ORDERS};

fn main() -> taylor_softmax::Result<()> {
    let mnist = std::env::args().nth(1).is_some_and(|a| a == "mnist");
    let mut cfg = ExperimentConfig::preset(if mnist { "paper-mnist-desk" } else { "blobs-quick" })?;
    cfg.out = std::env::temp_dir().join("taylor-softmax-compare");
    let cmp = cmd_compare(&cfg, &DEFAULT_ORDERS, false)?;
    let t = &cmp.orders;
    print!("{:<11} {:>8}", "variant", "best");
    for n in &t.orders {
        print!(" {:>7}", format!("n={n}"));
    }
    println!();
    for row in &t.table {
        print!("{:<11} {:>8.4}", row.variant, row.accuracy);
        for c in &row.cells {
            print!(" {:>7}", c.map_or(String::new(), |c| format!("{:.4}", c.mean)));
        }
        println!();
    }
    println!("wrote {}", cfg.out.join("sweep_order.csv").display());
    Ok(())
}
