use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracegroup::experiment::ExperimentConfig;
use tracegroup::ingest::{SplitSpec, SyntheticConfig};
use tracegroup::knn::{Kernel, KnnConfig};
use tracegroup::ranker::TrainingConfig;

use crate::CliError;

/// Every setting a subcommand can read. Stored as flat `key = value` lines
/// (top-level TOML); unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Report-line file: written by `generate`, read by `split`.
    pub dataset: Option<PathBuf>,
    /// Directory holding the four span files.
    pub splits: Option<PathBuf>,
    /// Labeled report-line file used as the group store by `rank`.
    pub store: Option<PathBuf>,
    /// Model file; defaults to `<out>/model.json`.
    pub model: Option<PathBuf>,
    pub out: PathBuf,

    pub similarity: String,
    pub scorer: String,
    /// Filtration size N; 0 disables filtration.
    pub filtration: usize,
    pub staleness_days: i64,
    pub exclude_first_in_group: bool,

    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub sim_ratio: u32,
    pub agg_ratio: u32,

    pub learning_rate: f64,
    pub weight_decay: f64,
    pub negatives: usize,
    pub epochs: usize,

    /// Kernel name, or `adjusted_weighting`.
    pub knn: String,
    /// `k` for kernels, `gamma` for adjusted weighting.
    pub knn_k: usize,
    pub knn_decay: f64,
    pub grid_k_max: usize,
    pub grid_adjusted_weighting: bool,

    pub groups: usize,
    pub drift_rate: f64,
    pub mutation_rate: f64,

    /// Groups printed by `rank`.
    pub top: usize,
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let split = SplitSpec::default();
        let training = TrainingConfig::default();
        let synthetic = SyntheticConfig::default();
        RunConfig {
            dataset: None,
            splits: None,
            store: None,
            model: None,
            out: PathBuf::from("out"),
            similarity: "tfidf".into(),
            scorer: "baseline".into(),
            filtration: tracegroup::harness::DEFAULT_FILTRATION,
            staleness_days: tracegroup::model::DEFAULT_STALENESS_DAYS,
            exclude_first_in_group: false,
            train_fraction: split.train_fraction,
            validation_fraction: split.validation_fraction,
            test_fraction: split.test_fraction,
            sim_ratio: split.sim_agg_ratio.0,
            agg_ratio: split.sim_agg_ratio.1,
            learning_rate: training.learning_rate,
            weight_decay: training.weight_decay,
            negatives: training.negatives,
            epochs: training.epochs,
            knn: "gaussian".into(),
            knn_k: 5,
            knn_decay: 0.5,
            grid_k_max: KnnConfig::MAX_K,
            grid_adjusted_weighting: true,
            groups: synthetic.groups,
            drift_rate: synthetic.drift_rate,
            mutation_rate: synthetic.mutation_rate,
            top: 10,
            seed: 42,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_owned()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Applies `key=value`. Values that are not valid TOML are taken as bare
    /// strings, so `similarity=durfex` works without quotes.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got `{assignment}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let mut table = toml::Table::try_from(&*self).expect("run config is a table");
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_owned()));
        table.insert(key.to_owned(), parsed);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{key}: {}", e.message())))?;
        Ok(())
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out.join("model.json"))
    }

    pub fn filtration(&self) -> Option<usize> {
        (self.filtration > 0).then_some(self.filtration)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            validation_fraction: self.validation_fraction,
            test_fraction: self.test_fraction,
            sim_agg_ratio: (self.sim_ratio, self.agg_ratio),
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            groups: self.groups,
            drift_rate: self.drift_rate,
            mutation_rate: self.mutation_rate,
            ..Default::default()
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            similarity: self.similarity.clone(),
            filtration: self.filtration(),
            staleness_days: self.staleness_days,
            training: TrainingConfig {
                learning_rate: self.learning_rate,
                weight_decay: self.weight_decay,
                negatives: self.negatives,
                epochs: self.epochs,
                seed: self.seed,
                ..Default::default()
            },
            exclude_first_in_group: self.exclude_first_in_group,
        }
    }

    pub fn knn_config(&self) -> Result<KnnConfig, CliError> {
        let config = if self.knn == "adjusted_weighting" {
            KnnConfig::AdjustedWeighting { gamma: self.knn_k, decay: self.knn_decay }
        } else {
            KnnConfig::kernel(self.knn.parse::<Kernel>()?, self.knn_k)
        };
        config.validate()?;
        Ok(config)
    }

    pub fn grid(&self) -> Vec<KnnConfig> {
        let ks = 1..=self.grid_k_max;
        let mut grid: Vec<KnnConfig> = Kernel::ALL
            .into_iter()
            .flat_map(|kernel| ks.clone().map(move |k| KnnConfig::kernel(kernel, k)))
            .collect();
        if self.grid_adjusted_weighting {
            grid.extend(ks.map(|gamma| KnnConfig::AdjustedWeighting { gamma, decay: self.knn_decay }));
        }
        grid
    }
}
