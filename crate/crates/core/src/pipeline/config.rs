//! Experiment configuration: one TOML file fully determines a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bhp::{BhpConfig, BhpTrainConfig};
use crate::error::{CoreError, Result};
use crate::gnsm::{LossWeights, NetConfig, NetRole};
use crate::grid::GridSpec;
use crate::optimizer::{DeConfig, GeometryLimits, P_ALLOW, RING_FLOOR};
use crate::refsim::{Schedule, SimOptions};

/// Network settings and loss weights for one role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSetup {
    pub net: NetConfig,
    pub loss: LossWeights,
}

/// A hyperparameter set competing in stage 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    pub pressure: NetSetup,
    pub saturation: NetSetup,
}

impl Candidate {
    /// The chosen settings of both networks.
    pub fn chosen() -> Self {
        Self {
            name: "chosen".into(),
            pressure: NetSetup { net: NetConfig::pressure(), loss: LossWeights::pressure() },
            saturation: NetSetup { net: NetConfig::saturation(), loss: LossWeights::saturation() },
        }
    }

    /// A smaller alternative drawn from the searched ranges.
    pub fn compact() -> Self {
        let mut c = Self::chosen();
        c.name = "compact".into();
        for s in [&mut c.pressure, &mut c.saturation] {
            s.net.latent = 16;
            s.net.n_msg = 7;
            s.loss.sigma_p = 0.05;
            s.loss.sigma_s = 0.05;
        }
        c
    }

    pub fn setup(&self, role: NetRole) -> &NetSetup {
        match role {
            NetRole::Pressure => &self.pressure,
            NetRole::Saturation => &self.saturation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (role, s) in [(NetRole::Pressure, &self.pressure), (NetRole::Saturation, &self.saturation)] {
            if s.net.role != role {
                return Err(CoreError::Config(format!("candidate `{}`: {role:?} slot holds a {:?} network", self.name, s.net.role)));
            }
            s.net.validate()?;
            s.loss.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train: 60, test: 20 }
    }
}

/// Stage 1: candidates trained on the first `cases` training cases, of which
/// the last `validation` are held out for ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub cases: usize,
    pub validation: usize,
    pub epochs: usize,
    pub lr: f64,
    pub candidates: Vec<Candidate>,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self { cases: 10, validation: 2, epochs: 20, lr: 1e-3, candidates: vec![Candidate::chosen(), Candidate::compact()] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Predictions chained after the first step; 0 is single-step training.
    pub extra_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub stage1: Stage1Config,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub bhp: BhpConfig,
    pub bhp_train: BhpTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            stage1: Stage1Config::default(),
            stage2: StageConfig { epochs: 400, lr: 1e-3, extra_steps: 0 },
            stage3: StageConfig { epochs: 100, lr: 3e-5, extra_steps: 2 },
            bhp: BhpConfig::default(),
            bhp_train: BhpTrainConfig::default(),
        }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { epochs: 1, lr: 1e-3, extra_steps: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub de: DeConfig,
    pub limits: GeometryLimits,
    pub p_allow: f64,
    /// Predicted ring saturation below this is not counted as escaped gas.
    pub ring_floor: f64,
    /// Seeds of the surrogate-based runs.
    pub surrogate_seeds: Vec<u64>,
    pub oracle_seed: u64,
    pub random_search_seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            de: DeConfig::default(),
            limits: GeometryLimits::default(),
            p_allow: P_ALLOW,
            ring_floor: RING_FLOOR,
            surrogate_seeds: vec![1, 2, 3],
            oracle_seed: 1,
            random_search_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_wells: usize,
    pub grid: GridSpec,
    pub schedule: Schedule,
    pub sim: SimOptions,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub optimize: OptimizeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_wells: 4,
            grid: GridSpec::desk(7),
            schedule: Schedule::default(),
            sim: SimOptions::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            optimize: OptimizeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// A seconds-scale run: 8 x 8 x 3 aquifer, two wells, small networks.
    pub fn tiny() -> Self {
        let mut grid = GridSpec::desk(7);
        grid.nx = 10;
        grid.ny = 10;
        grid.nz = 3;
        grid.layers.truncate(3);
        let mut cand = Candidate::chosen();
        for s in [&mut cand.pressure, &mut cand.saturation] {
            s.net.hidden = 16;
            s.net.hidden_layers = 1;
            s.net.latent = 16;
            s.net.n_msg = 2;
            s.net.norm_groups = 4;
        }
        let mut alt = cand.clone();
        alt.name = "alt".into();
        for s in [&mut alt.pressure, &mut alt.saturation] {
            s.net.n_msg = 3;
            s.loss.sigma_p = 0.05;
            s.loss.sigma_s = 0.05;
        }
        let mut optimize = OptimizeConfig::default();
        optimize.de.pop_size = 6;
        optimize.de.max_iter = 5;
        optimize.surrogate_seeds = vec![1];
        Self {
            seed: 1,
            n_wells: 2,
            grid,
            schedule: Schedule { rate_per_well: 0.5, horizon: 6.0, report_every: 2.0 },
            sim: SimOptions::default(),
            data: DataConfig { train: 4, test: 2 },
            train: TrainConfig {
                batch_size: 2,
                stage1: Stage1Config { cases: 3, validation: 1, epochs: 2, lr: 1e-3, candidates: vec![cand, alt] },
                stage2: StageConfig { epochs: 3, lr: 1e-3, extra_steps: 0 },
                stage3: StageConfig { epochs: 1, lr: 3e-5, extra_steps: 1 },
                bhp: BhpConfig { hidden: 16, hidden_layers: 1, ..BhpConfig::default() },
                bhp_train: BhpTrainConfig { epochs: 20, batch_size: 8, ..BhpTrainConfig::default() },
            },
            optimize,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CoreError::Config(m) => CoreError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Canonical text: equal configurations serialize identically.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoreError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.schedule.n_reports()?;
        if self.n_wells == 0 {
            return Err(CoreError::Config("at least one well is required".into()));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(CoreError::Config("batch size must be positive".into()));
        }
        let s1 = &t.stage1;
        if s1.candidates.is_empty() {
            return Err(CoreError::Config("stage 1 needs at least one candidate".into()));
        }
        if s1.validation == 0 || s1.validation >= s1.cases {
            return Err(CoreError::Config(format!("stage 1 holds out {} of {} cases", s1.validation, s1.cases)));
        }
        if s1.cases > self.data.train {
            return Err(CoreError::Config(format!("stage 1 uses {} cases but only {} are generated", s1.cases, self.data.train)));
        }
        for c in &s1.candidates {
            c.validate()?;
        }
        for (name, lr) in [("stage 1", s1.lr), ("stage 2", t.stage2.lr), ("stage 3", t.stage3.lr), ("BHP", t.bhp_train.lr)] {
            if !(lr > 0.0) {
                return Err(CoreError::Config(format!("{name} learning rate must be positive")));
            }
        }
        self.optimize.de.validate()?;
        if !(self.optimize.p_allow > 0.0) || !(self.optimize.ring_floor >= 0.0) {
            return Err(CoreError::Config("allowed BHP must be positive and the ring floor non-negative".into()));
        }
        Ok(())
    }
}
