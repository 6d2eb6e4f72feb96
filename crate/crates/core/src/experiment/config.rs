use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activations::{VariantConfig, VariantKind};
use crate::error::{Error, Result};
use crate::nn::{Topology, TrainConfig};

/// Where the samples come from. Config files may give either the table
/// form (`kind = "blobs"`, ...) or the flag string (`"mnist_subset(10000)"`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields, try_from = "DatasetRepr")]
pub enum DatasetSpec {
    /// The official 60k/10k split.
    Mnist,
    /// A stratified `n`-sample subset of the MNIST training set; the test
    /// set stays the full official one.
    MnistSubset {
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DatasetRepr {
    Text(String),
    Table(DatasetTable),
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DatasetTable {
    Mnist,
    MnistSubset {
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl TryFrom<DatasetRepr> for DatasetSpec {
    type Error = Error;

    fn try_from(r: DatasetRepr) -> Result<Self> {
        Ok(match r {
            DatasetRepr::Text(s) => s.parse()?,
            DatasetRepr::Table(DatasetTable::Mnist) => DatasetSpec::Mnist,
            DatasetRepr::Table(DatasetTable::MnistSubset { n, seed }) => DatasetSpec::MnistSubset { n, seed },
            DatasetRepr::Table(DatasetTable::Blobs { classes, per_class, dim, separation, seed }) => {
                DatasetSpec::Blobs { classes, per_class, dim, separation, seed }
            }
        })
    }
}

impl DatasetSpec {
    pub const DEFAULT_BLOBS: DatasetSpec =
        DatasetSpec::Blobs { classes: 3, per_class: 200, dim: 8, separation: 5.0, seed: 0 };

    pub fn is_mnist(&self) -> bool {
        !matches!(self, DatasetSpec::Blobs { .. })
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DatasetSpec::Mnist => f.write_str("mnist"),
            DatasetSpec::MnistSubset { n, seed: 0 } => write!(f, "mnist_subset({n})"),
            DatasetSpec::MnistSubset { n, seed } => write!(f, "mnist_subset({n},{seed})"),
            DatasetSpec::Blobs { classes, per_class, dim, separation, seed } => {
                write!(f, "blobs({classes},{per_class},{dim},{separation},{seed})")
            }
        }
    }
}

/// Accepts `mnist`, `mnist_subset(N)`, `mnist_subset(N,SEED)`, `mnist_subset:N`,
/// `blobs` and `blobs(K,PER_CLASS,DIM,SEPARATION[,SEED])`.
impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let bad = || Error::Config(format!("cannot parse dataset {s:?}; try mnist, mnist_subset(10000) or blobs"));
        let (name, args) = match norm.split_once(['(', ':']) {
            Some((name, rest)) => (name.trim(), Some(rest.trim_end_matches(')'))),
            None => (norm.as_str(), None),
        };
        let args: Vec<&str> =
            args.map(|a| a.split(',').map(str::trim).filter(|t| !t.is_empty()).collect()).unwrap_or_default();
        let int = |t: &str| t.parse::<u64>().map_err(|_| bad());
        match (name, args.as_slice()) {
            ("mnist", []) => Ok(DatasetSpec::Mnist),
            ("mnist_subset", [n]) => Ok(DatasetSpec::MnistSubset { n: int(n)? as usize, seed: 0 }),
            ("mnist_subset", [n, seed]) => Ok(DatasetSpec::MnistSubset { n: int(n)? as usize, seed: int(seed)? }),
            ("blobs", []) => Ok(DatasetSpec::DEFAULT_BLOBS),
            ("blobs", [k, per, dim, sep, rest @ ..]) if rest.len() <= 1 => Ok(DatasetSpec::Blobs {
                classes: int(k)? as usize,
                per_class: int(per)? as usize,
                dim: int(dim)? as usize,
                separation: sep.parse().map_err(|_| bad())?,
                seed: rest.first().map(|t| int(t)).transpose()?.unwrap_or(0),
            }),
            _ => Err(bad()),
        }
    }
}

/// Everything needed to reproduce a run or a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub topology: Topology,
    pub variant: VariantConfig,
    pub train: TrainConfig,
    pub out: PathBuf,
    /// Runs per cell; repeat `r` uses seed `train.seed + r`.
    pub repeats: usize,
    /// Concurrent training runs in sweeps.
    pub jobs: usize,
    /// MNIST directory. Unset means `$TAYLOR_SOFTMAX_MNIST_DIR` or `data/mnist`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

pub const PRESETS: [&str; 3] = ["paper-mnist-desk", "paper-mnist-full", "blobs-quick"];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset("paper-mnist-desk").expect("built-in preset")
    }
}

impl ExperimentConfig {
    /// Built-in presets:
    ///
    /// - `paper-mnist-desk`: 10k stratified MNIST subset, 784-256-10 MLP,
    ///   5 epochs, 3 repeats. The default.
    /// - `paper-mnist-full`: full MNIST on the ten-conv CNN. Slow on a CPU.
    /// - `blobs-quick`: Gaussian blobs on a small MLP, for smoke tests.
    pub fn preset(name: &str) -> Result<Self> {
        let desk_train = TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 0,
            lr_decay: 0.8,
            threads: 1,
        };
        let cfg = match name {
            "paper-mnist-desk" => ExperimentConfig {
                dataset: DatasetSpec::MnistSubset { n: 10_000, seed: 0 },
                topology: Topology::MnistMlp,
                variant: VariantConfig::Softmax,
                train: desk_train,
                out: PathBuf::from("runs/paper-mnist-desk"),
                repeats: 3,
                jobs: 1,
                data_dir: None,
            },
            "paper-mnist-full" => ExperimentConfig {
                dataset: DatasetSpec::Mnist,
                topology: Topology::MnistTable1,
                variant: VariantConfig::Softmax,
                train: TrainConfig { epochs: 20, batch_size: 64, learning_rate: 0.01, lr_decay: 0.95, ..desk_train },
                out: PathBuf::from("runs/paper-mnist-full"),
                repeats: 1,
                jobs: 1,
                data_dir: None,
            },
            "blobs-quick" => ExperimentConfig {
                dataset: DatasetSpec::DEFAULT_BLOBS,
                topology: Topology::Mlp,
                variant: VariantConfig::Softmax,
                train: TrainConfig { epochs: 5, batch_size: 16, learning_rate: 0.05, lr_decay: 0.95, ..desk_train },
                out: PathBuf::from("runs/blobs-quick"),
                repeats: 1,
                jobs: 1,
                data_dir: None,
            },
            other => {
                return Err(Error::Config(format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", "))))
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if !self.dataset.is_mnist()
            && matches!(self.topology, Topology::MnistMlp | Topology::MnistTable1 | Topology::MnistTable1Reduced)
        {
            return Err(Error::Config(format!(
                "topology {} needs MNIST input; use mlp or linear with {}",
                self.topology, self.dataset
            )));
        }
        match self.dataset {
            DatasetSpec::MnistSubset { n: 0, .. } => Err(Error::Config("mnist_subset size must be positive".into())),
            DatasetSpec::Blobs { classes, per_class, dim, separation, .. }
                if classes < 2 || per_class < 5 || dim == 0 || separation.is_nan() || separation < 0.0 =>
            {
                Err(Error::Config(format!("invalid blobs parameters in {}", self.dataset)))
            }
            _ => Ok(()),
        }
    }

    /// Seeds of the `repeats` runs.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.train.seed + r).collect()
    }

    /// Reads a TOML or JSON config. A `result.json` written by a run is also
    /// accepted; its embedded config is returned, so passing it back replays
    /// the run.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json =
            path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || text.trim_start().starts_with('{');
        if is_json {
            let mut value: serde_json::Value = serde_json::from_str(&text)?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            Ok(serde_json::from_value(value)?)
        } else {
            Ok(toml::from_str(&text)?)
        }
    }
}

/// Command-line overrides layered over a preset or config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dataset: Option<DatasetSpec>,
    pub topology: Option<Topology>,
    pub variant: Option<VariantKind>,
    pub order: Option<u32>,
    pub margin: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub lr_decay: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub repeats: Option<usize>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

/// Order and margin used when a variant needs one and none was given.
pub const DEFAULT_ORDER: u32 = 2;
pub const DEFAULT_MARGIN: f64 = 0.6;

impl Overrides {
    /// Applies the overrides and validates the result. An order or margin
    /// given for a variant that has none is an error.
    pub fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            dataset => cfg.dataset,
            topology => cfg.topology,
            epochs => cfg.train.epochs,
            batch_size => cfg.train.batch_size,
            learning_rate => cfg.train.learning_rate,
            momentum => cfg.train.momentum,
            lr_decay => cfg.train.lr_decay,
            seed => cfg.train.seed,
            threads => cfg.train.threads,
            repeats => cfg.repeats,
            jobs => cfg.jobs,
            out => cfg.out,
        }
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir.clone();
        }
        cfg.variant = resolve_variant(&cfg.variant, self.variant, self.order, self.margin)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Combines a base variant with an optional new kind, order and margin.
/// Missing parameters are inherited from `base` when it has them, else
/// defaulted.
pub fn resolve_variant(
    base: &VariantConfig,
    kind: Option<VariantKind>,
    order: Option<u32>,
    margin: Option<f64>,
) -> Result<VariantConfig> {
    let kind = kind.unwrap_or(base.kind());
    let order = match order {
        Some(n) => Some(n),
        None if kind.uses_order() => Some(base.order().map_or(DEFAULT_ORDER, |n| n.get())),
        None => None,
    };
    let margin = match margin {
        Some(m) => Some(m),
        None if kind.uses_margin() => Some(base.margin().map_or(DEFAULT_MARGIN, |m| m.get())),
        None => None,
    };
    VariantConfig::from_parts(kind, order, margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taylor_poly::TaylorOrder;

    #[test]
    fn dataset_strings() {
        assert_eq!("mnist".parse::<DatasetSpec>().unwrap(), DatasetSpec::Mnist);
        for s in ["mnist_subset(10000)", "mnist-subset:10000", "MNIST_SUBSET(10000)"] {
            assert_eq!(s.parse::<DatasetSpec>().unwrap(), DatasetSpec::MnistSubset { n: 10_000, seed: 0 });
        }
        assert_eq!("blobs".parse::<DatasetSpec>().unwrap(), DatasetSpec::DEFAULT_BLOBS);
        let b: DatasetSpec = "blobs(2,50,2,10)".parse().unwrap();
        assert_eq!(b, DatasetSpec::Blobs { classes: 2, per_class: 50, dim: 2, separation: 10.0, seed: 0 });
        for spec in [DatasetSpec::Mnist, DatasetSpec::MnistSubset { n: 7, seed: 3 }, b] {
            assert_eq!(spec.to_string().parse::<DatasetSpec>().unwrap(), spec);
        }
        assert!("cifar10".parse::<DatasetSpec>().is_err());
        assert!("mnist_subset(x)".parse::<DatasetSpec>().is_err());
    }

    #[test]
    fn presets_are_valid() {
        for p in PRESETS {
            ExperimentConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(ExperimentConfig::preset("nope").is_err());
        let desk = ExperimentConfig::default();
        assert_eq!(desk.dataset, DatasetSpec::MnistSubset { n: 10_000, seed: 0 });
        assert_eq!(desk.topology, Topology::MnistMlp);
        assert_eq!((desk.train.epochs, desk.repeats), (5, 3));
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = ExperimentConfig::preset("blobs-quick").unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<ExperimentConfig>(&text).unwrap(), cfg);

        let partial: ExperimentConfig = toml::from_str(
            r#"
            repeats = 2
            [variant]
            kind = "sm_taylor"
            order = 4
            margin = 0.3
            "#,
        )
        .unwrap();
        assert_eq!(partial.repeats, 2);
        assert_eq!(partial.variant.order(), Some(TaylorOrder::new(4).unwrap()));
        assert_eq!(partial.topology, ExperimentConfig::default().topology);

        let odd = toml::from_str::<ExperimentConfig>("[variant]\nkind = \"taylor\"\norder = 3\n");
        assert!(odd.unwrap_err().to_string().contains("odd"));
        assert!(toml::from_str::<ExperimentConfig>("colour = 1").is_err());
    }

    #[test]
    fn overrides() {
        let base = ExperimentConfig::default();
        let o = Overrides { variant: Some(VariantKind::SmTaylor), epochs: Some(2), ..Default::default() };
        let cfg = o.apply(base.clone()).unwrap();
        assert_eq!(cfg.variant.to_string(), "sm_taylor(n=2, m=0.6)");
        assert_eq!(cfg.train.epochs, 2);

        // Order carries over when only the margin changes.
        let o = Overrides { margin: Some(0.3), ..Default::default() };
        let cfg = o.apply(cfg).unwrap();
        assert_eq!(cfg.variant.to_string(), "sm_taylor(n=2, m=0.3)");

        let o = Overrides { variant: Some(VariantKind::Softmax), order: Some(4), ..Default::default() };
        assert!(matches!(o.apply(base.clone()), Err(Error::Config(_))));
        let o = Overrides { variant: Some(VariantKind::Taylor), order: Some(3), ..Default::default() };
        let err = o.apply(base.clone()).unwrap_err().to_string();
        assert!(err.contains("even"), "{err}");
        let o = Overrides { repeats: Some(0), ..Default::default() };
        assert!(o.apply(base.clone()).is_err());
        let o = Overrides { dataset: Some(DatasetSpec::DEFAULT_BLOBS), ..Default::default() };
        assert!(o.apply(base).is_err(), "blobs on the MNIST MLP");
    }
}
