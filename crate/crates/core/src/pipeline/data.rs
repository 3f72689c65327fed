//! Simulated training and test cases on disk.
//!
//! Layout under the data root: `grid.json`, then `train/case_NNNN/` and
//! `test/case_NNNN/`, each a saved [`SnapshotSeries`]. A case directory with a
//! readable `meta.json` is complete; generation skips it.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::derive_seed;
use crate::error::{CoreError, Result};
use crate::fluid::FluidModel;
use crate::grid::{build_grid, GridModel, WellConfig};
use crate::optimizer::Placement;
use crate::refsim::{simulate, SnapshotSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub fn case_dir(root: &Path, split: Split, index: usize) -> PathBuf {
    root.join(split.name()).join(format!("case_{index:04}"))
}

pub fn grid_id(cfg: &ExperimentConfig) -> String {
    let g = &cfg.grid;
    format!("{}x{}x{}-seed{}", g.nx, g.ny, g.nz, g.seed)
}

/// Seed of one case's well layout.
pub fn case_seed(cfg: &ExperimentConfig, split: Split, index: usize) -> u64 {
    derive_seed(cfg.seed, split.name(), index as u64)
}

/// The random layout of one case, satisfying every geometric limit.
pub fn case_wells(cfg: &ExperimentConfig, placement: &Placement, split: Split, index: usize) -> WellConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed(cfg, split, index));
    WellConfig::from_vector(&placement.sample_feasible(&mut rng)).expect("placement emits whole wells")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub generated: Vec<String>,
    pub skipped: Vec<String>,
    /// Case id and error message of every failed simulation.
    pub failed: Vec<(String, String)>,
}

fn is_complete(dir: &Path) -> bool {
    SnapshotSeries::load(dir).is_ok()
}

/// Simulates every missing case under `root`; existing complete cases are kept.
pub fn generate(cfg: &ExperimentConfig, root: &Path) -> Result<GenerateSummary> {
    cfg.validate()?;
    let grid = build_grid(&cfg.grid)?;
    let grid_path = root.join("grid.json");
    if grid_path.exists() {
        let existing = GridModel::load(&grid_path)?;
        if existing != grid {
            return Err(CoreError::Config(format!("{} holds a different grid; use a fresh output directory", grid_path.display())));
        }
    } else {
        grid.save(&grid_path)?;
    }
    let placement = Placement::new(&grid, cfg.n_wells, cfg.optimize.limits.clone())?;
    let fluids = FluidModel::default();
    let jobs: Vec<(Split, usize)> = (0..cfg.data.train)
        .map(|i| (Split::Train, i))
        .chain((0..cfg.data.test).map(|i| (Split::Test, i)))
        .collect();
    let outcomes: Vec<(String, Result<bool>)> = jobs
        .par_iter()
        .map(|&(split, i)| {
            let id = format!("{}/{i:04}", split.name());
            let dir = case_dir(root, split, i);
            if is_complete(&dir) {
                return (id, Ok(false));
            }
            let wells = case_wells(cfg, &placement, split, i);
            let run = simulate(&grid, &fluids, &wells, &cfg.schedule, &cfg.sim).and_then(|mut s| {
                s.meta.case_id = id.clone();
                s.meta.seed = case_seed(cfg, split, i);
                s.meta.grid_id = grid_id(cfg);
                s.save(&dir)
            });
            (id, run.map(|_| true))
        })
        .collect();
    let mut summary = GenerateSummary::default();
    for (id, r) in outcomes {
        match r {
            Ok(true) => summary.generated.push(id),
            Ok(false) => summary.skipped.push(id),
            Err(e) => {
                log::error!("case {id} failed: {e}");
                summary.failed.push((id, e.to_string()));
            }
        }
    }
    Ok(summary)
}

/// Grid and cases of one split; any missing case is an error naming it.
pub fn load_split(cfg: &ExperimentConfig, root: &Path, split: Split, count: usize) -> Result<(GridModel, Vec<SnapshotSeries>)> {
    let grid_path = root.join("grid.json");
    if !grid_path.exists() {
        return Err(CoreError::Missing(format!("{} (run generate-data first)", grid_path.display())));
    }
    let grid = GridModel::load(&grid_path)?;
    let cases = (0..count)
        .map(|i| {
            let dir = case_dir(root, split, i);
            if !dir.join("meta.json").exists() {
                return Err(CoreError::Missing(format!("simulated case {}", dir.display())));
            }
            let s = SnapshotSeries::load(&dir)?;
            if s.meta.grid_id != grid_id(cfg) || s.well_config.n_wells() != cfg.n_wells {
                return Err(CoreError::Config(format!("{} was generated with a different configuration", dir.display())));
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, cases))
}
