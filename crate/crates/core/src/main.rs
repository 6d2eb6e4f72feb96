use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taylor_softmax::data::MNIST_DIR_ENV;
use taylor_softmax::experiment::{
    cmd_compare, cmd_gradcheck, cmd_sweep_margin, cmd_sweep_order, cmd_train, default_margins, resolve_variant,
    DatasetSpec, ExperimentConfig, Overrides, DEFAULT_ORDERS,
};
use taylor_softmax::nn::Topology;
use taylor_softmax::{VariantConfig, VariantKind};

/// Softmax alternatives: training runs, sweeps and gradient checks.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration (`repeats` times).
    Train(Common),
    /// Train SM-softmax (or the configured SM variant) for each margin.
    SweepMargin {
        #[command(flatten)]
        common: Common,
        /// Margins to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = default_margins())]
        margins: Vec<f64>,
    },
    /// Train taylor, taylor_inf and sm_taylor at each order, plus baselines.
    SweepOrder {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ORDERS)]
        orders: Vec<u32>,
    },
    /// The full variant-by-order comparison.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ORDERS)]
        orders: Vec<u32>,
        /// Pick the SM margin from a fresh margin sweep instead of using 0.6.
        #[arg(long)]
        derive_margin: bool,
    },
    /// Check a variant's gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value = "softmax")]
        variant: VariantKind,
        #[arg(long)]
        order: Option<u32>,
        #[arg(long)]
        margin: Option<f64>,
        /// Number of classes.
        #[arg(short = 'k', long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML or JSON config; a run's result.json replays that run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in starting point when no config file is given.
    #[arg(long, default_value = "paper-mnist-desk")]
    preset: String,
    /// mnist, mnist_subset(N) or blobs.
    #[arg(long)]
    dataset: Option<DatasetSpec>,
    /// mnist_table1, mnist_table1_reduced, mnist_mlp, mlp or linear.
    #[arg(long)]
    topology: Option<Topology>,
    /// softmax, taylor, taylor_inf, sm_softmax or sm_taylor.
    #[arg(long)]
    variant: Option<VariantKind>,
    /// Even Taylor order, 2 to 30.
    #[arg(long)]
    order: Option<u32>,
    /// Soft margin, 0 to 1.
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Learning-rate factor applied after each epoch.
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Base seed; repeat r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads inside each training step.
    #[arg(long)]
    threads: Option<usize>,
    /// Seeds per configuration.
    #[arg(long)]
    repeats: Option<usize>,
    /// Concurrent training runs in sweeps.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// MNIST directory.
    #[arg(long, env = MNIST_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> taylor_softmax::Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::preset(&self.preset)?,
        };
        Overrides {
            dataset: self.dataset,
            topology: self.topology,
            variant: self.variant,
            order: self.order,
            margin: self.margin,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            momentum: self.momentum,
            lr_decay: self.lr_decay,
            seed: self.seed,
            threads: self.threads,
            repeats: self.repeats,
            jobs: self.jobs,
            out: self.out.clone(),
            data_dir: self.data_dir.clone(),
        }
        .apply(base)
    }
}

fn print_rows(rows: &[taylor_softmax::experiment::ResultRow]) {
    for r in rows {
        println!(
            "{:<11} order={:<4} margin={:<4} seed={:<3} final_acc={:.4} best_acc={:.4} loss={:.4}",
            r.variant,
            r.order.map_or("-".into(), |n| n.to_string()),
            r.margin.map_or("-".into(), |m| m.to_string()),
            r.seed,
            r.final_test_accuracy,
            r.best_test_accuracy,
            r.final_train_loss
        );
    }
}

fn run(cli: Cli) -> taylor_softmax::Result<ExitCode> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            print_rows(&cmd_train(&cfg)?);
            println!("wrote {}", cfg.out.display());
        }
        Command::SweepMargin { common, margins } => {
            let cfg = common.resolve()?;
            let sweep = cmd_sweep_margin(&cfg, &margins)?;
            for (m, c) in sweep.margins.iter().zip(&sweep.cells) {
                println!("m={m:.1}  mean={:.4}  sd={}", c.mean, c.sd.map_or("-".into(), |s| format!("{s:.4}")));
            }
            println!("best margin {}", sweep.best_margin);
            println!("wrote {}", cfg.out.join("sweep_margin.csv").display());
        }
        Command::SweepOrder { common, orders } => {
            let cfg = common.resolve()?;
            let margin = cfg.variant.margin().map_or(0.6, |m| m.get());
            let sweep = cmd_sweep_order(&cfg, &orders, margin)?;
            print_order_table(&sweep);
            println!("wrote {}", cfg.out.join("sweep_order.csv").display());
        }
        Command::Compare { common, orders, derive_margin } => {
            let cfg = common.resolve()?;
            let cmp = cmd_compare(&cfg, &orders, derive_margin)?;
            if let Some(m) = &cmp.margin_sweep {
                println!("derived margin {}", m.best_margin);
            }
            print_order_table(&cmp.orders);
            println!("wrote {}", cfg.out.join("sweep_order.csv").display());
        }
        Command::Gradcheck { variant, order, margin, classes, seed, out } => {
            let variant = resolve_variant(&VariantConfig::Softmax, Some(variant), order, margin)?;
            let outcome = cmd_gradcheck(&variant, classes, seed)?;
            let json = serde_json::to_string_pretty(&outcome)?;
            println!("{json}");
            println!(
                "{variant}: loss max_rel_error {:.3e}, network max_rel_error {:.3e} -> {}",
                outcome.loss.max_rel_error, outcome.network.max_rel_error, outcome.status
            );
            if let Some(path) = out {
                std::fs::write(&path, json + "\n").map_err(|e| taylor_softmax::Error::Io { path, source: e })?;
            }
            return Ok(ExitCode::from(outcome.exit_code() as u8));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_order_table(sweep: &taylor_softmax::experiment::OrderSweep) {
    print!("{:<11} {:>8} {:>5}", "variant", "accuracy", "best");
    for n in &sweep.orders {
        print!(" {:>7}", format!("n={n}"));
    }
    println!();
    for row in &sweep.table {
        print!(
            "{:<11} {:>8.4} {:>5}",
            row.variant,
            row.accuracy,
            row.best_order.map_or(String::new(), |n| n.to_string())
        );
        for c in &row.cells {
            print!(" {:>7}", c.map_or(String::new(), |c| format!("{:.4}", c.mean)));
        }
        println!();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
