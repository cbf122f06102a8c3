//! JSON experiment configuration. Unknown keys are rejected everywhere so a
//! misspelt hyperparameter fails loudly instead of silently using a default.

use std::path::{Path, PathBuf};

use armacell::cells::{ConvArmaSpec, NetworkSpec};
use armacell::datagen::{DgpSpec, Process, VideoSpec};
use armacell::training::{GridSpec, Monitor, PlateauConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Each seed drives both the data generator and the weight initialization.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Dataset for `simulate`, `train` and `evaluate`.
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: Option<ModelChoice>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Checkpoint root for `evaluate`; defaults to the output directory.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub recover: Option<RecoverConfig>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Where a dataset comes from. Generated sources are re-drawn per seed; file
/// sources are read as-is and must already be differenced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Dgp {
        dgp: DgpSpec,
        n: usize,
    },
    Video {
        #[serde(default)]
        video: VideoSpec,
        sequences: usize,
    },
    /// Header row, one column per variable; a leading `t` column is dropped.
    Csv { path: PathBuf },
    /// ATNS files `[N×T×H×W×C]` and `[N×H×W×C]`.
    Tensors { inputs: PathBuf, targets: PathBuf },
}

impl DataSource {
    pub fn is_frames(&self) -> bool {
        matches!(self, DataSource::Video { .. } | DataSource::Tensors { .. })
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DataSource::Csv { path } => fix(path),
            DataSource::Tensors { inputs, targets } => {
                fix(inputs);
                fix(targets);
            }
            _ => {}
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_frac: f64,
    /// Share of the training part held out for validation.
    pub val_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_frac: armacell::datagen::TRAIN_FRAC,
            val_frac: armacell::datagen::VAL_FRAC_OF_TRAIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelChoice {
    Fixed { spec: NetworkSpec },
    Grid { grid: GridSpec },
}

/// Parameter recovery: simulate a known process, fit a single linear cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverConfig {
    pub dgp: DgpSpec,
    pub n: usize,
    /// Cell orders; default to the process's own orders.
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub train: TrainConfig,
    /// Largest deviation from the folded truth that counts as recovered.
    pub tolerance: f64,
    pub sweep: SweepConfig,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        RecoverConfig {
            dgp: DgpSpec::new(Process::Arma(Default::default())),
            n: 25_000,
            p: None,
            q: None,
            train: recovery_train_config(),
            tolerance: 0.05,
            sweep: SweepConfig::default(),
        }
    }
}

/// Training settings for running a linear cell to convergence on one long
/// series: every step is training data and the training loss is monitored.
pub fn recovery_train_config() -> TrainConfig {
    TrainConfig {
        lr: 0.005,
        batch_size: 64,
        max_epochs: 300,
        patience: 10,
        plateau: Some(PlateauConfig {
            factor: 0.5,
            patience: 3,
        }),
        window_len: 60,
        washout: 10,
        monitor: Monitor::Train,
        record_trajectory: true,
        ..TrainConfig::default()
    }
}

/// Orders visited by `recover --sweep`. The ARMA(p, q) process for each pair
/// has AR polynomial `(1 − a·L)^p` and MA polynomial `(1 + b·L)^q`, which is
/// stationary and invertible for `|a|, |b| < 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub max_order: usize,
    pub ar_factor: f64,
    pub ma_factor: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            max_order: 5,
            ar_factor: 0.5,
            ma_factor: 0.4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ShallowArma,
    DeepArma,
    /// CSS-fitted (V)ARMA, orders picked on validation RMSE.
    ClassicalArma,
    ConvArma,
    RepeatLastFrame,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::ShallowArma => "ShallowARMA",
            Method::DeepArma => "DeepARMA",
            Method::ClassicalArma => "ClassicalARMA",
            Method::ConvArma => "ConvARMA",
            Method::RepeatLastFrame => "RepeatLastFrame",
        }
    }

    pub fn for_frames(self) -> bool {
        matches!(self, Method::ConvArma | Method::RepeatLastFrame)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchDataset {
    pub name: String,
    pub data: DataSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderGrid {
    pub p: Vec<usize>,
    pub q: Vec<usize>,
}

impl Default for OrderGrid {
    fn default() -> Self {
        OrderGrid {
            p: (1..=4).collect(),
            q: (1..=4).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvMethodConfig {
    pub layers: Vec<ConvArmaSpec>,
    pub batch_norm: bool,
    pub train: TrainConfig,
}

impl Default for ConvMethodConfig {
    fn default() -> Self {
        ConvMethodConfig {
            layers: vec![ConvArmaSpec {
                p: 2,
                q: 1,
                filters: 16,
                kernel: [3, 3],
                activation: armacell::Activation::Tanh,
            }],
            batch_norm: false,
            train: TrainConfig {
                lr: 0.005,
                batch_size: 4,
                max_epochs: 30,
                patience: 10,
                plateau: Some(PlateauConfig::default()),
                loss: armacell::training::LossKind::Bce,
                ..TrainConfig::default()
            },
        }
    }
}

impl ConvMethodConfig {
    pub fn spec(&self, channels: usize) -> NetworkSpec {
        NetworkSpec::conv(channels, self.layers.clone(), self.batch_norm)
    }
}

/// Methods × datasets × seeds. Series methods use the top-level `train`
/// settings; inapplicable method/dataset pairs are skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub datasets: Vec<BenchDataset>,
    pub methods: Vec<Method>,
    pub shallow_grid: GridSpec,
    pub deep_grid: GridSpec,
    pub classical_orders: OrderGrid,
    pub conv: ConvMethodConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            datasets: Vec::new(),
            methods: vec![Method::ShallowArma, Method::ClassicalArma],
            shallow_grid: GridSpec {
                layers: vec![1],
                ..GridSpec::default()
            },
            deep_grid: GridSpec {
                layers: vec![2],
                ..GridSpec::default()
            },
            classical_orders: OrderGrid::default(),
            conv: ConvMethodConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads and checks a config; relative data paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = &mut cfg.data {
            d.resolve(base);
        }
        if let Some(b) = &mut cfg.benchmark {
            for d in &mut b.datasets {
                d.data.resolve(base);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn data(&self) -> Result<&DataSource> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a `data` section".into()))
    }

    pub fn model(&self) -> Result<&ModelChoice> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a `model` section".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::parse(r#"{"version": 1}"#).unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse(r#"{"version": 1, "seedz": [1]}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = ExperimentConfig::parse(r#"{"version": 1, "train": {"learning_rate": 0.1}}"#)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = ExperimentConfig::parse(
            r#"{"version": 1, "data": {"source": "dgp", "n": 10, "m": 3,
                "dgp": {"process": {"kind": "sgn"}}}}"#,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        assert!(ExperimentConfig::parse(r#"{"version": 2}"#).is_err());
    }

    #[test]
    fn sources_and_models_parse() {
        let cfg = ExperimentConfig::parse(
            r#"{"version": 1, "seeds": [3, 4],
                "data": {"source": "dgp", "n": 100, "dgp": {"process": {"kind": "arma"}}},
                "model": {"type": "grid", "grid": {"layers": [1], "p": [1], "q": [1], "units": [2]}},
                "benchmark": {"methods": ["shallow_arma", "repeat_last_frame"],
                    "datasets": [{"name": "v", "data": {"source": "video", "sequences": 4}}]}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.data, Some(DataSource::Dgp { n: 100, .. })));
        assert!(matches!(cfg.model, Some(ModelChoice::Grid { .. })));
        let b = cfg.benchmark.unwrap();
        assert_eq!(b.methods, vec![Method::ShallowArma, Method::RepeatLastFrame]);
        assert!(b.datasets[0].data.is_frames());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"version": 1, "data": {"source": "csv", "path": "x.csv"}}"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(
            cfg.data,
            Some(DataSource::Csv {
                path: dir.path().join("x.csv")
            })
        );
    }
}
