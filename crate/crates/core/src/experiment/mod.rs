//! Training runs, margin and order sweeps, gradient-check diagnostics, and
//! the files they write.
//!
//! Every run directory holds `metrics.csv` (`epoch,train_loss,train_accuracy,test_accuracy`),
//! `timing.csv` (`epoch,wall_ms`) and `result.json`. The config embedded in
//! `result.json` reproduces the run's `metrics.csv` byte for byte at the same
//! thread count; pass the file back as `--config`.

mod config;
mod diag;
mod run;
mod sweep;

pub use config::{resolve_variant, DatasetSpec, ExperimentConfig, Overrides, DEFAULT_MARGIN, DEFAULT_ORDER, PRESETS};
pub use diag::{cmd_gradcheck, GradcheckOutcome, GradcheckStatus, LOSS_TOLERANCE, NETWORK_TOLERANCE};
pub use run::{cmd_train, load_dataset, run_single, LoadedData, ResultRow, RunOutput, RunReport};
pub use sweep::{
    cmd_compare, cmd_sweep_margin, cmd_sweep_order, default_margins, margin_sweep_base, order_sweep_plan, Cell,
    Comparison, MarginSweep, OrderRow, OrderSweep, DEFAULT_ORDERS, ORDER_TABLE_ROWS,
};
