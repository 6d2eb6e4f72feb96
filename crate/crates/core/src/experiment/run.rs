use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, ExperimentConfig};
use crate::activations::VariantConfig;
use crate::data::{default_mnist_dir, load_mnist, make_blobs, sha256_hex, subset, DatasetMeta, LabeledBatch};
use crate::error::{Error, Result};
use crate::nn::{build_topology, train, EpochRecord};

/// Train and test sets plus their provenance.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: LabeledBatch,
    pub test: LabeledBatch,
    pub meta: DatasetMeta,
}

/// Loads (or generates) the dataset a config names.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let dir = || cfg.data_dir.clone().unwrap_or_else(default_mnist_dir);
    match cfg.dataset {
        DatasetSpec::Mnist => {
            let m = load_mnist(dir())?;
            Ok(LoadedData { train: m.train, test: m.test, meta: m.meta })
        }
        DatasetSpec::MnistSubset { n, seed } => {
            let m = load_mnist(dir())?;
            let train = subset(&m.train, n, seed)?;
            let meta = DatasetMeta { name: cfg.dataset.to_string(), n_train: train.len(), ..m.meta };
            Ok(LoadedData { train, test: m.test, meta })
        }
        DatasetSpec::Blobs { classes, per_class, dim, separation, seed } => {
            let (train, test) = make_blobs(classes, per_class, dim, separation, seed)?;
            let meta = DatasetMeta {
                name: cfg.dataset.to_string(),
                n_train: train.len(),
                n_test: test.len(),
                classes,
                input_shape: train.shape(),
                source_checksum: sha256_hex(&[cfg.dataset.to_string().as_bytes()]),
                normalization: "none (generated)".into(),
            };
            Ok(LoadedData { train, test, meta })
        }
    }
}

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: String,
    pub order: Option<u32>,
    pub margin: Option<f64>,
    pub seed: u64,
    pub final_test_accuracy: f64,
    pub best_test_accuracy: f64,
    pub final_train_loss: f64,
    /// Standard deviation of epoch-to-epoch changes in training loss, a
    /// rough measure of how bumpy the loss curve is.
    pub loss_fluctuation: f64,
    /// The run's `metrics.csv`.
    pub metrics: PathBuf,
}

impl ResultRow {
    fn new(variant: &VariantConfig, seed: u64, records: &[EpochRecord], metrics: PathBuf) -> Self {
        let last = records.last().expect("at least one epoch");
        let steps: Vec<f64> = records.windows(2).map(|w| w[1].train_loss - w[0].train_loss).collect();
        ResultRow {
            variant: variant.label().to_string(),
            order: variant.order().map(|n| n.get()),
            margin: variant.margin().map(|m| m.get()),
            seed,
            final_test_accuracy: last.test_accuracy,
            best_test_accuracy: records.iter().map(|r| r.test_accuracy).fold(0.0, f64::max),
            final_train_loss: last.train_loss,
            loss_fluctuation: std_dev(&steps).unwrap_or(0.0),
            metrics,
        }
    }
}

/// Sample standard deviation; `None` below two values.
pub fn std_dev(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Contents of `result.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub result: ResultRow,
    /// Config that reproduces exactly this run: one repeat, this seed.
    pub config: ExperimentConfig,
    pub dataset: DatasetMeta,
    pub version: String,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub row: ResultRow,
    pub records: Vec<EpochRecord>,
}

#[derive(Serialize)]
struct MetricsLine {
    epoch: usize,
    train_loss: f64,
    train_accuracy: f64,
    test_accuracy: f64,
}

#[derive(Serialize)]
struct TimingLine {
    epoch: usize,
    wall_ms: u64,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

pub(crate) fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Trains one network with `variant` and `seed` and writes `metrics.csv`,
/// `timing.csv` and `result.json` into `dir`.
pub fn run_single(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    variant: VariantConfig,
    seed: u64,
    dir: &Path,
) -> Result<RunOutput> {
    let mut run_cfg = cfg.clone();
    run_cfg.variant = variant;
    run_cfg.train.seed = seed;
    run_cfg.repeats = 1;
    run_cfg.jobs = 1;
    run_cfg.out = dir.to_path_buf();

    let mut net = build_topology(cfg.topology, data.train.shape(), data.train.classes(), variant, seed)?;
    log::info!("training {variant} seed {seed} -> {}", dir.display());
    let records = train(&mut net, &data.train, &data.test, &run_cfg.train)?;

    let metrics_path = dir.join("metrics.csv");
    write_atomic(
        &metrics_path,
        &csv_bytes(records.iter().map(|r| MetricsLine {
            epoch: r.epoch,
            train_loss: r.train_loss,
            train_accuracy: r.train_accuracy,
            test_accuracy: r.test_accuracy,
        }))?,
    )?;
    write_atomic(
        &dir.join("timing.csv"),
        &csv_bytes(records.iter().map(|r| TimingLine { epoch: r.epoch, wall_ms: r.wall_ms }))?,
    )?;
    let row = ResultRow::new(&variant, seed, &records, metrics_path);
    let report = RunReport {
        result: row.clone(),
        threads: run_cfg.train.threads,
        config: run_cfg,
        dataset: data.meta.clone(),
        version: crate::VERSION.to_string(),
    };
    write_atomic(&dir.join("result.json"), &json_bytes(&report)?)?;
    Ok(RunOutput { row, records })
}

/// Runs `work` over `items` on up to `jobs` threads, returning results in
/// item order.
pub(crate) fn run_parallel<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    work: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&work).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = work(&items[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|r| r.expect("every item was processed")).collect()
}

/// `train`: one run per repeat. With a single repeat the files go straight
/// into `cfg.out`, otherwise into `cfg.out/seed-<s>/` plus a `summary.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let seeds = cfg.seeds();
    let dir_for = |seed: u64| {
        if seeds.len() == 1 {
            cfg.out.clone()
        } else {
            cfg.out.join(format!("seed-{seed}"))
        }
    };
    let rows = run_parallel(&seeds, cfg.jobs, |&seed| {
        run_single(cfg, &data, cfg.variant, seed, &dir_for(seed)).map(|o| o.row)
    })?;
    if rows.len() > 1 {
        write_atomic(&cfg.out.join("summary.csv"), &csv_bytes(rows.iter().map(SummaryLine::from))?)?;
    }
    Ok(rows)
}

/// Flat CSV form of a [`ResultRow`].
#[derive(Serialize)]
pub(crate) struct SummaryLine<'a> {
    variant: &'a str,
    order: Option<u32>,
    margin: Option<f64>,
    seed: u64,
    final_test_accuracy: f64,
    best_test_accuracy: f64,
    final_train_loss: f64,
    loss_fluctuation: f64,
    metrics: String,
}

impl<'a> From<&'a ResultRow> for SummaryLine<'a> {
    fn from(r: &'a ResultRow) -> Self {
        SummaryLine {
            variant: &r.variant,
            order: r.order,
            margin: r.margin,
            seed: r.seed,
            final_test_accuracy: r.final_test_accuracy,
            best_test_accuracy: r.best_test_accuracy,
            final_train_loss: r.final_train_loss,
            loss_fluctuation: r.loss_fluctuation,
            metrics: r.metrics.display().to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Topology;

    fn blobs_cfg(out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset("blobs-quick").unwrap();
        cfg.dataset = DatasetSpec::Blobs { classes: 3, per_class: 30, dim: 4, separation: 4.0, seed: 1 };
        cfg.topology = Topology::Mlp;
        cfg.train.epochs = 3;
        cfg.out = out.to_path_buf();
        cfg
    }

    #[test]
    fn std_dev_small_cases() {
        assert_eq!(std_dev(&[1.0]), None);
        assert!((std_dev(&[1.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn train_writes_files_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = blobs_cfg(dir.path());
        let rows = cmd_train(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 4);
        assert!(metrics.starts_with("epoch,train_loss,train_accuracy,test_accuracy\n"));
        assert!(dir.path().join("timing.csv").is_file());

        let replay_dir = dir.path().join("replay");
        let mut replay = ExperimentConfig::load(dir.path().join("result.json")).unwrap();
        replay.out = replay_dir.clone();
        cmd_train(&replay).unwrap();
        assert_eq!(metrics, std::fs::read_to_string(replay_dir.join("metrics.csv")).unwrap());
    }

    #[test]
    fn repeats_get_their_own_directories() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = blobs_cfg(dir.path());
        cfg.repeats = 2;
        cfg.train.seed = 5;
        let rows = cmd_train(&cfg).unwrap();
        assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![5, 6]);
        assert!(dir.path().join("seed-6/result.json").is_file());
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 3);
    }

    #[test]
    fn parallel_preserves_order() {
        let items: Vec<usize> = (0..20).collect();
        let out = run_parallel(&items, 4, |&i| Ok(i * i)).unwrap();
        assert_eq!(out, items.iter().map(|i| i * i).collect::<Vec<_>>());
        let err = run_parallel(&items, 3, |&i| if i == 7 { Err(Error::State("x".into())) } else { Ok(i) });
        assert!(err.is_err());
    }
}
