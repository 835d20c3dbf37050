//! Declarative experiment configuration (TOML).
//!
//! Every key has a default, so an empty file is a valid configuration. The
//! sections mirror the experiment kinds; a run only reads the sections its
//! kind needs.

use std::path::{Path, PathBuf};

use ec2st::baselines::Bandwidth;
use ec2st::data::{load_csv, BlobConfig, CsvSchema, DiscreteToyConfig, GaussianConfig, Source};
use ec2st::ec2st::{Ec2stConfig, MlpLearner};
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Type1,
    Power,
    StoppingTime,
    LambdaAblation,
    BatchOrder,
    InflationDemo,
    GrowthRate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Type1 => "type1",
            ExperimentKind::Power => "power",
            ExperimentKind::StoppingTime => "stopping_time",
            ExperimentKind::LambdaAblation => "lambda_ablation",
            ExperimentKind::BatchOrder => "batch_order",
            ExperimentKind::InflationDemo => "inflation_demo",
            ExperimentKind::GrowthRate => "growth_rate",
        }
    }
}

/// Where the labeled samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Blob(BlobConfig),
    Gaussian(GaussianConfig),
    DiscreteToy(DiscreteToyConfig),
    Csv {
        path: PathBuf,
        #[serde(default)]
        features: Option<Vec<String>>,
        #[serde(default = "default_label")]
        label: String,
    },
}

fn default_label() -> String {
    "label".into()
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Blob(BlobConfig::default())
    }
}

impl DataSpec {
    /// Resolves to a stream source; CSV files are loaded relative to `base`.
    pub fn source(&self, base: &Path) -> Result<Source> {
        Ok(match self {
            DataSpec::Blob(c) => Source::Blob(c.clone()),
            DataSpec::Gaussian(c) => Source::Gaussian(c.clone()),
            DataSpec::DiscreteToy(c) => Source::DiscreteToy(c.clone()),
            DataSpec::Csv { path, features, label } => {
                let path = if path.is_relative() { base.join(path) } else { path.clone() };
                let schema = CsvSchema {
                    features: features.clone(),
                    label: label.clone(),
                };
                Source::Dataset {
                    samples: load_csv(path, &schema)?,
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ec2st,
    Sc2st,
    Lc2st,
    Mc2st,
    Mslrt,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ec2st => "ec2st",
            Method::Sc2st => "sc2st",
            Method::Lc2st => "lc2st",
            Method::Mc2st => "mc2st",
            Method::Mslrt => "mslrt",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::Sc2st | Method::Lc2st | Method::Mc2st)
    }
}

/// E-C2ST settings other than the level and seed, which come from the top
/// level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ec2stSection {
    pub initial_lambda: f64,
    pub lambda_bounds: (f64, f64),
    pub first_batch_split: (f64, f64),
    pub adapt_lambda: bool,
}

impl Default for Ec2stSection {
    fn default() -> Self {
        let d = Ec2stConfig::default();
        Ec2stSection {
            initial_lambda: d.initial_lambda,
            lambda_bounds: d.lambda_bounds,
            first_batch_split: d.first_batch_split,
            adapt_lambda: d.adapt_lambda,
        }
    }
}

impl Ec2stSection {
    pub fn config(&self, alpha: f64, seed: u64) -> Ec2stConfig {
        Ec2stConfig {
            alpha,
            initial_lambda: self.initial_lambda,
            lambda_bounds: self.lambda_bounds,
            first_batch_split: self.first_batch_split,
            adapt_lambda: self.adapt_lambda,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub permutations: usize,
    pub bandwidth: Bandwidth,
    /// Train/validation/test proportions.
    pub split: [usize; 3],
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            permutations: ec2st::baselines::DEFAULT_PERMUTATIONS,
            bandwidth: Bandwidth::Median,
            split: [5, 1, 1],
        }
    }
}

/// One-sample Gaussian split likelihood-ratio test: data `N(data_mean, 1)`,
/// null `N(null_mean, 1)`, alternative fitted as the running mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MslrtSection {
    pub null_mean: f64,
    pub data_mean: f64,
}

impl Default for MslrtSection {
    fn default() -> Self {
        MslrtSection {
            null_mean: 0.0,
            data_mean: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoppingTimeSection {
    pub batch_sizes: Vec<usize>,
    /// Sample budget per replication; runs that exhaust it are censored.
    pub budget: usize,
}

impl Default for StoppingTimeSection {
    fn default() -> Self {
        StoppingTimeSection {
            batch_sizes: vec![8, 16, 32, 64, 128],
            budget: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaAblationSection {
    /// Fixed mixture weights to compare.
    pub lambdas: Vec<f64>,
    /// Also run the adaptive weight.
    pub adaptive: bool,
}

impl Default for LambdaAblationSection {
    fn default() -> Self {
        LambdaAblationSection {
            lambdas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchOrderSection {
    pub shuffles: usize,
}

impl Default for BatchOrderSection {
    fn default() -> Self {
        BatchOrderSection { shuffles: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InflationSection {
    /// Per-class sample size of each round is uniform on `[min, max]`.
    pub min_batch: usize,
    pub max_batch: usize,
    pub rounds: usize,
    /// Run E-C2ST on the same rounds.
    pub ec2st: bool,
    /// Repeated L-C2ST on `lc2st_batches` balanced batches of
    /// `lc2st_batch_size`; zero batches disables it.
    pub lc2st_batches: usize,
    pub lc2st_batch_size: usize,
}

impl Default for InflationSection {
    fn default() -> Self {
        InflationSection {
            min_batch: 32,
            max_batch: 64,
            rounds: 50,
            ec2st: true,
            lc2st_batches: 20,
            lc2st_batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthClassifier {
    Mlp,
    /// The Bayes posterior of the toy table.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthRateSection {
    pub classifier: GrowthClassifier,
}

impl Default for GrowthRateSection {
    fn default() -> Self {
        GrowthRateSection {
            classifier: GrowthClassifier::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Must match the subcommand when present.
    pub kind: Option<ExperimentKind>,
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
    pub batch_size: usize,
    pub max_batches: usize,
    /// Sample sizes for rejection curves; defaults to `k · batch_size` for
    /// `k = 3..=max_batches`.
    pub sample_sizes: Option<Vec<usize>>,
    pub balanced: bool,
    pub data: DataSpec,
    pub methods: Vec<Method>,
    pub ec2st: Ec2stSection,
    pub learner: MlpLearner,
    pub baselines: BaselineSection,
    pub mslrt: MslrtSection,
    pub stopping_time: StoppingTimeSection,
    pub lambda_ablation: LambdaAblationSection,
    pub batch_order: BatchOrderSection,
    pub inflation: InflationSection,
    pub growth_rate: GrowthRateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: None,
            replications: 100,
            seed: 0,
            alpha: 0.05,
            batch_size: 90,
            max_batches: 20,
            sample_sizes: None,
            balanced: true,
            data: DataSpec::default(),
            methods: vec![Method::Ec2st],
            ec2st: Ec2stSection::default(),
            learner: MlpLearner::default(),
            baselines: BaselineSection::default(),
            mslrt: MslrtSection::default(),
            stopping_time: StoppingTimeSection::default(),
            lambda_ablation: LambdaAblationSection::default(),
            batch_order: BatchOrderSection::default(),
            inflation: InflationSection::default(),
            growth_rate: GrowthRateSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Sample-size grid, ascending.
    pub fn grid(&self) -> Vec<usize> {
        match &self.sample_sizes {
            Some(g) => g.clone(),
            None => (3.min(self.max_batches)..=self.max_batches).map(|k| k * self.batch_size).collect(),
        }
    }

    /// Largest number of batches any grid size needs.
    pub fn grid_batches(&self) -> usize {
        self.grid().iter().map(|n| n.div_ceil(self.batch_size)).max().unwrap_or(0)
    }

    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(HarnessError::Config(format!(
                    "config is for `{}` but the `{}` experiment was requested",
                    k.name(),
                    kind.name()
                )));
            }
        }
        if self.replications == 0 {
            return Err(HarnessError::Config("replications must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(HarnessError::Config("alpha must lie in (0, 1]".into()));
        }
        if self.batch_size < 2 {
            return Err(HarnessError::Config("batch_size must be at least 2".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("at least one method is required".into()));
        }
        let grid = self.grid();
        if grid.is_empty() || grid.contains(&0) {
            return Err(HarnessError::Config("the sample-size grid must be non-empty and positive".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::Config("sample sizes must be strictly increasing".into()));
        }
        self.ec2st.config(self.alpha, 0).validate()?;
        self.learner.train.validate()?;
        if self.baselines.permutations == 0 || self.baselines.split.contains(&0) {
            return Err(HarnessError::Config("baselines need permutations and a positive 3-way split".into()));
        }
        match kind {
            ExperimentKind::StoppingTime => {
                let s = &self.stopping_time;
                if s.batch_sizes.is_empty() || s.batch_sizes.iter().any(|&b| b < 2 || b > s.budget) {
                    return Err(HarnessError::Config(
                        "stopping-time batch sizes must be at least 2 and fit in the budget".into(),
                    ));
                }
            }
            ExperimentKind::LambdaAblation => {
                let l = &self.lambda_ablation;
                if l.lambdas.is_empty() && !l.adaptive {
                    return Err(HarnessError::Config("nothing to ablate".into()));
                }
                if l.lambdas.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                    return Err(HarnessError::Config("fixed lambdas must lie in (0, 1)".into()));
                }
            }
            ExperimentKind::BatchOrder if self.batch_order.shuffles == 0 => {
                return Err(HarnessError::Config("batch_order.shuffles must be at least 1".into()));
            }
            ExperimentKind::InflationDemo => {
                let i = &self.inflation;
                if i.min_batch < 2 || i.min_batch > i.max_batch || i.rounds == 0 {
                    return Err(HarnessError::Config("inflation rounds need 2 ≤ min_batch ≤ max_batch".into()));
                }
                if !matches!(self.data, DataSpec::Gaussian(_)) {
                    return Err(HarnessError::Config("the inflation demo needs gaussian data".into()));
                }
            }
            ExperimentKind::GrowthRate if !matches!(self.data, DataSpec::DiscreteToy(_)) => {
                return Err(HarnessError::Config("the growth-rate diagnostic needs a discrete_toy table".into()));
            }
            _ => {}
        }
        Ok(())
    }
}
