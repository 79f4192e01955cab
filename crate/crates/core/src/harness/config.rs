//! TOML run configuration. Every section is optional; unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::LossKind;
use crate::search::{Algorithm, ArchGradient, RetrainConfig, SearchConfig};
use crate::searchspace::{CellTopology, OperationKind, OperationSet, SearchSpace};
use crate::tasks::{gen_blobs, gen_spirals, gen_two_moons, load_csv, SplitFractions, TaskData, GENERATOR_FRACTIONS};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub retrain: RetrainSection,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TwoMoons,
    Blobs,
    Spirals,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
    /// Blobs only.
    pub centers: usize,
    /// Blobs only.
    pub spread: f64,
    /// Spirals only.
    pub turns: f64,
    /// CSV only.
    pub path: Option<PathBuf>,
    /// CSV only.
    pub label_column: String,
    /// CSV only: train, validation and test fractions.
    pub fractions: [f64; 3],
    pub standardize: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            kind: TaskKind::TwoMoons,
            n: 200,
            noise: 0.1,
            seed: 0,
            centers: 3,
            spread: 0.5,
            turns: 2.0,
            path: None,
            label_column: "label".into(),
            fractions: [GENERATOR_FRACTIONS.train, GENERATOR_FRACTIONS.val, GENERATOR_FRACTIONS.test],
            standardize: true,
        }
    }
}

impl TaskConfig {
    pub fn build(&self) -> Result<TaskData> {
        let task = match self.kind {
            TaskKind::TwoMoons => gen_two_moons(self.n, self.noise, self.seed)?,
            TaskKind::Blobs => gen_blobs(self.n, self.centers, self.spread, self.seed)?,
            TaskKind::Spirals => gen_spirals(self.n, self.turns, self.noise, self.seed)?,
            TaskKind::Csv => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("task.path: required when task.kind = \"csv\"".into()))?;
                let [train, val, test] = self.fractions;
                let fractions = SplitFractions::new(train, val, test)
                    .map_err(|e| Error::Config(format!("task.fractions: {e}")))?;
                load_csv(path, &self.label_column, fractions, self.seed)?
            }
        };
        Ok(if self.standardize { task.standardized() } else { task })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    /// Every earlier node feeds every later node.
    Full,
    /// Node `i` feeds node `i + 1` only.
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceConfig {
    pub topology: TopologyKind,
    pub nodes: usize,
    pub width: usize,
    pub operations: Vec<OperationKind>,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            topology: TopologyKind::Full,
            nodes: 4,
            width: 8,
            operations: OperationKind::ALL.to_vec(),
        }
    }
}

impl SpaceConfig {
    pub fn build(&self) -> Result<SearchSpace> {
        let config = |e: Error| Error::Config(format!("space: {e}"));
        let topology = match self.topology {
            TopologyKind::Full => CellTopology::full(self.nodes),
            TopologyKind::Chain => CellTopology::chain(self.nodes),
        }
        .map_err(config)?;
        let operations = OperationSet::new(&self.operations, self.width).map_err(config)?;
        Ok(SearchSpace::new(topology, operations))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: Algorithm,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub weight_steps: usize,
    pub eta: f64,
    pub arch_gradient: ArchGradient,
    pub regularize_continuous: bool,
    pub lazy_box_projection: bool,
    pub init_jitter: f64,
    pub random_budget: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        let d = SearchConfig::default();
        AlgorithmConfig {
            name: d.algorithm,
            epochs: d.epochs,
            batch_size: d.batch_size,
            weight_steps: d.weight_steps,
            eta: d.eta,
            arch_gradient: d.arch_gradient,
            regularize_continuous: d.regularize_continuous,
            lazy_box_projection: d.lazy_box_projection,
            init_jitter: d.init_jitter,
            random_budget: d.random_budget,
            loss: d.loss,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub weight_lr: f64,
    pub weight_momentum: f64,
    pub weight_decay: f64,
    pub arch_lr: f64,
    pub arch_beta1: f64,
    pub arch_beta2: f64,
    pub arch_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = SearchConfig::default();
        OptimizerConfig {
            weight_lr: d.weight_lr,
            weight_momentum: d.weight_momentum,
            weight_decay: d.weight_decay,
            arch_lr: d.arch_lr,
            arch_beta1: d.arch_beta1,
            arch_beta2: d.arch_beta2,
            arch_eps: d.arch_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainSection {
    /// Retrain the final architecture on train + validation and report test metrics.
    pub enabled: bool,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for RetrainSection {
    fn default() -> Self {
        let d = RetrainConfig::default();
        RetrainSection {
            enabled: true,
            epochs: d.epochs,
            lr: d.lr,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
        }
    }
}

/// Settings of the multi-run experiments (`sweep-eta`, `bench`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Runs per setting; run `i` uses search seed `algorithm.seed + i`.
    pub seeds: usize,
    pub etas: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    /// Leading epochs excluded from timing statistics.
    pub warmup: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: 5,
            etas: vec![0.0, 0.1, 1.0, 10.0],
            algorithms: vec![Algorithm::Nasp, Algorithm::DartsFirstOrder, Algorithm::DartsSecondOrder],
            warmup: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write `checkpoint-<epoch>.bin` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/default"),
            checkpoint_every: 0,
            log_every: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.search_config().validate()?;
        self.retrain_config().validate()?;
        self.space.build()?;
        let t = &self.task;
        if t.kind != TaskKind::Csv && t.n < 4 {
            return Err(Error::Config(format!("task.n: must be at least 4, got {}", t.n)));
        }
        if !(t.noise >= 0.0 && t.noise.is_finite()) {
            return Err(Error::Config("task.noise: must be nonnegative".into()));
        }
        let e = &self.experiment;
        if e.seeds == 0 {
            return Err(Error::Config("experiment.seeds: must be at least 1".into()));
        }
        if e.etas.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Config("experiment.etas: values must be nonnegative and finite".into()));
        }
        if e.etas.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("experiment.etas: values must be ascending".into()));
        }
        Ok(())
    }

    pub fn search_config(&self) -> SearchConfig {
        let (a, o) = (&self.algorithm, &self.optimizer);
        SearchConfig {
            algorithm: a.name,
            epochs: a.epochs,
            batch_size: a.batch_size,
            weight_steps: a.weight_steps,
            weight_lr: o.weight_lr,
            weight_momentum: o.weight_momentum,
            weight_decay: o.weight_decay,
            arch_lr: o.arch_lr,
            arch_beta1: o.arch_beta1,
            arch_beta2: o.arch_beta2,
            arch_eps: o.arch_eps,
            eta: a.eta,
            arch_gradient: a.arch_gradient,
            regularize_continuous: a.regularize_continuous,
            lazy_box_projection: a.lazy_box_projection,
            init_jitter: a.init_jitter,
            random_budget: a.random_budget,
            loss: a.loss,
            seed: a.seed,
            log_every: self.output.log_every,
        }
    }

    pub fn retrain_config(&self) -> RetrainConfig {
        let r = &self.retrain;
        RetrainConfig {
            epochs: r.epochs,
            lr: r.lr,
            momentum: r.momentum,
            weight_decay: r.weight_decay,
            seed: self.algorithm.seed,
            loss: self.algorithm.loss,
        }
    }
}
