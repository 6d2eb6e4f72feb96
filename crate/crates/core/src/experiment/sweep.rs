use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, DEFAULT_MARGIN};
use super::run::{
    csv_bytes, json_bytes, load_dataset, mean, run_parallel, run_single, std_dev, write_atomic, LoadedData, ResultRow,
    SummaryLine,
};
use crate::activations::{Margin, VariantConfig, VariantKind};
use crate::error::{Error, Result};
use crate::taylor_poly::TaylorOrder;

/// `0.0, 0.1, ..., 0.9`.
pub fn default_margins() -> Vec<f64> {
    (0..10).map(|i| f64::from(i) / 10.0).collect()
}

pub const DEFAULT_ORDERS: [u32; 5] = [2, 4, 6, 8, 10];

/// Row order of the variant-by-order table.
pub const ORDER_TABLE_ROWS: [VariantKind; 5] =
    [VariantKind::Softmax, VariantKind::Taylor, VariantKind::TaylorInf, VariantKind::SmSoftmax, VariantKind::SmTaylor];

#[derive(Debug, Clone, Copy)]
struct Job {
    variant: VariantConfig,
    seed: u64,
}

fn run_dir(cfg: &ExperimentConfig, job: &Job) -> PathBuf {
    let mut tag = job.variant.label().to_string();
    if let Some(n) = job.variant.order() {
        tag.push_str(&format!("-n{n}"));
    }
    if let Some(m) = job.variant.margin() {
        tag.push_str(&format!("-m{}", m.get()));
    }
    cfg.out.join("runs").join(format!("{tag}-seed{}", job.seed))
}

fn run_jobs(cfg: &ExperimentConfig, data: &LoadedData, jobs: &[Job]) -> Result<Vec<ResultRow>> {
    log::info!("{} training runs, {} at a time", jobs.len(), cfg.jobs);
    let rows = run_parallel(jobs, cfg.jobs, |job| {
        run_single(cfg, data, job.variant, job.seed, &run_dir(cfg, job)).map(|o| o.row)
    })?;
    write_atomic(&cfg.out.join("runs.csv"), &csv_bytes(rows.iter().map(SummaryLine::from))?)?;
    Ok(rows)
}

/// Mean and spread of one table cell over its repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    /// `None` with a single repeat.
    pub sd: Option<f64>,
    pub runs: usize,
}

impl Cell {
    fn from_rows<'a>(rows: impl Iterator<Item = &'a ResultRow>) -> Option<Cell> {
        let acc: Vec<f64> = rows.map(|r| r.final_test_accuracy).collect();
        (!acc.is_empty()).then(|| Cell { mean: mean(&acc), sd: std_dev(&acc), runs: acc.len() })
    }
}

fn fmt_acc(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_acc).unwrap_or_default()
}

/// Result of a margin sweep: one cell per margin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginSweep {
    pub variant: String,
    pub margins: Vec<f64>,
    pub cells: Vec<Cell>,
    /// Margin with the highest mean accuracy; the smallest such margin on ties.
    pub best_margin: f64,
    pub rows: Vec<ResultRow>,
}

/// The soft-margin variant swept by `sweep-margin`: the config's own variant
/// if it has a margin, otherwise SM-softmax. SM-Taylor keeps its order.
pub fn margin_sweep_base(cfg: &ExperimentConfig) -> VariantKind {
    if cfg.variant.kind().uses_margin() {
        cfg.variant.kind()
    } else {
        VariantKind::SmSoftmax
    }
}

/// `sweep-margin`: trains every margin `cfg.repeats` times and writes
/// `sweep_margin.csv` (one column per margin, `mean` and `sd` rows) and
/// `sweep_margin.json`.
pub fn cmd_sweep_margin(cfg: &ExperimentConfig, margins: &[f64]) -> Result<MarginSweep> {
    cfg.validate()?;
    if margins.is_empty() {
        return Err(Error::Config("margin list is empty".into()));
    }
    let kind = margin_sweep_base(cfg);
    let order = cfg.variant.order();
    let variants = margins
        .iter()
        .map(|&m| {
            Ok(match kind {
                VariantKind::SmTaylor => {
                    VariantConfig::SmTaylor { order: order.unwrap_or(TaylorOrder::new(2)?), margin: Margin::new(m)? }
                }
                _ => VariantConfig::SmSoftmax { margin: Margin::new(m)? },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let data = load_dataset(cfg)?;
    let jobs: Vec<Job> =
        variants.iter().flat_map(|&variant| cfg.seeds().into_iter().map(move |seed| Job { variant, seed })).collect();
    let rows = run_jobs(cfg, &data, &jobs)?;

    let cells: Vec<Cell> = margins
        .iter()
        .map(|&m| Cell::from_rows(rows.iter().filter(|r| r.margin == Some(m))).expect("every margin ran"))
        .collect();
    let best = cells.iter().enumerate().fold(0, |b, (i, c)| if c.mean > cells[b].mean { i } else { b });
    let sweep = MarginSweep {
        variant: variants[0].label().to_string(),
        margins: margins.to_vec(),
        cells,
        best_margin: margins[best],
        rows,
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["dataset".to_string(), "variant".into(), "statistic".into()];
    header.extend(margins.iter().map(|m| format!("m={m:.1}")));
    w.write_record(&header)?;
    for (stat, values) in [
        ("mean", sweep.cells.iter().map(|c| fmt_acc(c.mean)).collect::<Vec<_>>()),
        ("sd", sweep.cells.iter().map(|c| fmt_opt(c.sd)).collect()),
    ] {
        let mut rec = vec![data.meta.name.clone(), sweep.variant.clone(), stat.to_string()];
        rec.extend(values);
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    write_atomic(&cfg.out.join("sweep_margin.csv"), &bytes)?;
    write_atomic(&cfg.out.join("sweep_margin.json"), &json_bytes(&sweep)?)?;
    Ok(sweep)
}

/// One row of the variant-by-order table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderRow {
    pub variant: String,
    pub margin: Option<f64>,
    /// Best mean accuracy over the orders, or the baseline's own accuracy.
    pub accuracy: f64,
    pub best_order: Option<u32>,
    /// One cell per order; empty for the softmax and SM-softmax baselines.
    pub cells: Vec<Option<Cell>>,
    pub baseline: Option<Cell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderSweep {
    pub orders: Vec<u32>,
    pub margin: f64,
    pub table: Vec<OrderRow>,
    pub rows: Vec<ResultRow>,
}

/// The training runs of an order sweep: every order for taylor, taylor_inf
/// and sm_taylor, plus one softmax and one SM-softmax baseline, per seed.
pub fn order_sweep_plan(orders: &[u32], margin: f64) -> Result<Vec<VariantConfig>> {
    if orders.is_empty() {
        return Err(Error::Config("order list is empty".into()));
    }
    let orders: Vec<TaylorOrder> = orders.iter().map(|&n| TaylorOrder::new(n)).collect::<Result<_>>()?;
    let margin = Margin::new(margin)?;
    let mut plan = vec![VariantConfig::Softmax, VariantConfig::SmSoftmax { margin }];
    for &order in &orders {
        plan.push(VariantConfig::Taylor { order });
        plan.push(VariantConfig::TaylorInf { order });
        plan.push(VariantConfig::SmTaylor { order, margin });
    }
    Ok(plan)
}

/// `sweep-order`: writes `sweep_order.csv` (means) and `sweep_order_sd.csv`
/// with rows softmax, taylor, taylor_inf, sm_softmax, sm_taylor, an
/// `accuracy` column holding the best order's mean, `best_order`, and one
/// column per order. Baseline rows leave the order cells blank.
pub fn cmd_sweep_order(cfg: &ExperimentConfig, orders: &[u32], margin: f64) -> Result<OrderSweep> {
    cfg.validate()?;
    let plan = order_sweep_plan(orders, margin)?;
    let data = load_dataset(cfg)?;
    let jobs: Vec<Job> =
        plan.iter().flat_map(|&variant| cfg.seeds().into_iter().map(move |seed| Job { variant, seed })).collect();
    let rows = run_jobs(cfg, &data, &jobs)?;
    let sweep = tabulate_orders(orders, margin, rows);

    let mut header = vec!["variant".to_string(), "margin".into(), "accuracy".into(), "best_order".into()];
    header.extend(orders.iter().map(|n| format!("n={n}")));
    for (file, pick) in [
        ("sweep_order.csv", (|c: &Cell| Some(c.mean)) as fn(&Cell) -> Option<f64>),
        ("sweep_order_sd.csv", |c: &Cell| c.sd),
    ] {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header)?;
        for row in &sweep.table {
            let headline = match row.baseline {
                Some(c) => pick(&c),
                None => row
                    .best_order
                    .and_then(|b| orders.iter().position(|&n| n == b))
                    .and_then(|i| row.cells[i].as_ref())
                    .and_then(pick),
            };
            let mut rec = vec![
                row.variant.clone(),
                row.margin.map(|m| m.to_string()).unwrap_or_default(),
                fmt_opt(headline),
                row.best_order.map(|n| n.to_string()).unwrap_or_default(),
            ];
            rec.extend(row.cells.iter().map(|c| fmt_opt(c.as_ref().and_then(pick))));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        write_atomic(&cfg.out.join(file), &bytes)?;
    }
    write_atomic(&cfg.out.join("sweep_order.json"), &json_bytes(&sweep)?)?;
    Ok(sweep)
}

fn tabulate_orders(orders: &[u32], margin: f64, rows: Vec<ResultRow>) -> OrderSweep {
    let table = ORDER_TABLE_ROWS
        .iter()
        .map(|&kind| {
            let label = kind.label();
            let of_kind = || rows.iter().filter(move |r| r.variant == label);
            let row_margin = kind.uses_margin().then_some(margin);
            if kind.uses_order() {
                let cells: Vec<Option<Cell>> =
                    orders.iter().map(|&n| Cell::from_rows(of_kind().filter(|r| r.order == Some(n)))).collect();
                let best = cells.iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c.mean))).fold(
                    None,
                    |b: Option<(usize, f64)>, (i, m)| match b {
                        Some((_, bm)) if bm >= m => b,
                        _ => Some((i, m)),
                    },
                );
                OrderRow {
                    variant: label.to_string(),
                    margin: row_margin,
                    accuracy: best.map_or(f64::NAN, |b| b.1),
                    best_order: best.map(|b| orders[b.0]),
                    cells,
                    baseline: None,
                }
            } else {
                let baseline = Cell::from_rows(of_kind());
                OrderRow {
                    variant: label.to_string(),
                    margin: row_margin,
                    accuracy: baseline.map_or(f64::NAN, |c| c.mean),
                    best_order: None,
                    cells: vec![None; orders.len()],
                    baseline,
                }
            }
        })
        .collect();
    OrderSweep { orders: orders.to_vec(), margin, table, rows }
}

/// Output of `compare`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    /// Present when the margin was re-derived from a margin sweep.
    pub margin_sweep: Option<MarginSweep>,
    pub orders: OrderSweep,
}

/// `compare`: the full variant-by-order table at margin 0.6 (or the
/// config's margin), or at the best margin of a fresh SM-softmax sweep when
/// `derive_margin` is set. The margin sweep writes into `out/margin/`.
pub fn cmd_compare(cfg: &ExperimentConfig, orders: &[u32], derive_margin: bool) -> Result<Comparison> {
    cfg.validate()?;
    let (margin, margin_sweep) = if derive_margin {
        let mut mcfg = cfg.clone();
        mcfg.variant = VariantConfig::SmSoftmax { margin: Margin::new(DEFAULT_MARGIN)? };
        mcfg.out = cfg.out.join("margin");
        let sweep = cmd_sweep_margin(&mcfg, &default_margins())?;
        (sweep.best_margin, Some(sweep))
    } else {
        (cfg.variant.margin().map_or(DEFAULT_MARGIN, Margin::get), None)
    };
    let orders = cmd_sweep_order(cfg, orders, margin)?;
    Ok(Comparison { margin_sweep, orders })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, order: Option<u32>, acc: f64) -> ResultRow {
        ResultRow {
            variant: variant.into(),
            order,
            margin: None,
            seed: 0,
            final_test_accuracy: acc,
            best_test_accuracy: acc,
            final_train_loss: 0.0,
            loss_fluctuation: 0.0,
            metrics: PathBuf::new(),
        }
    }

    #[test]
    fn plan_counts() {
        let plan = order_sweep_plan(&DEFAULT_ORDERS, 0.6).unwrap();
        let ordered = plan.iter().filter(|v| v.order().is_some()).count();
        assert_eq!(ordered, 15);
        assert_eq!(plan.len(), 17);
        assert_eq!(order_sweep_plan(&[2], 0.6).unwrap().len(), 5);
        let err = order_sweep_plan(&[2, 3], 0.6).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn tabulation_picks_best_order() {
        let rows = vec![
            row("softmax", None, 0.9),
            row("softmax", None, 0.8),
            row("taylor", Some(2), 0.7),
            row("taylor", Some(4), 0.95),
            row("taylor", Some(4), 0.85),
        ];
        let t = tabulate_orders(&[2, 4], 0.6, rows);
        let soft = &t.table[0];
        assert_eq!(soft.variant, "softmax");
        assert!((soft.accuracy - 0.85).abs() < 1e-12);
        assert!(soft.cells.iter().all(Option::is_none));
        let taylor = &t.table[1];
        assert_eq!(taylor.best_order, Some(4));
        assert!((taylor.accuracy - 0.9).abs() < 1e-12);
        assert_eq!(taylor.cells[0].unwrap().sd, None);
        assert_eq!(
            t.table.iter().map(|r| r.variant.as_str()).collect::<Vec<_>>(),
            vec!["softmax", "taylor", "taylor_inf", "sm_softmax", "sm_taylor"]
        );
    }

    #[test]
    fn default_margin_grid() {
        let m = default_margins();
        assert_eq!(m.len(), 10);
        assert_eq!(m[0], 0.0);
        assert_eq!(m[9], 0.9);
        assert_eq!(m[3], 0.3);
    }
}
