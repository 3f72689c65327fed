//! Well-placement studies over the simulator or the trained surrogate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::write_csv;
use super::train::Trained;
use crate::error::{CoreError, Result};
use crate::fluid::FluidModel;
use crate::grid::{GridModel, WellConfig};
use crate::io;
use crate::optimizer::{
    differential_evolution, random_search, Evaluation, Evaluator, OracleEvaluator, Placement, PlacementProblem, SearchResult, StopReason,
    SurrogateEvaluator,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    Oracle,
    Surrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DifferentialEvolution,
    /// Independent feasible draws with the given evaluation budget.
    RandomSearch { budget: usize },
}

/// Summary of one study; the full history is in [`StudyRun::result`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub evaluator: EvaluatorKind,
    pub method: Method,
    pub seed: u64,
    pub stop: StopReason,
    pub iterations: usize,
    pub evaluations: usize,
    pub best_feasible_j: Option<f64>,
    pub best: Evaluation,
    /// Simulator scores of the best configuration of a surrogate study.
    pub oracle_check: Option<Evaluation>,
    /// `|J_surrogate - J_oracle| / J_oracle` for surrogate studies.
    pub oracle_gap: Option<f64>,
}

pub struct StudyRun {
    pub summary: StudySummary,
    pub result: SearchResult,
    pub best_wells: WellConfig,
}

fn oracle<'a>(cfg: &ExperimentConfig, grid: &'a GridModel, fluids: &'a FluidModel) -> OracleEvaluator<'a> {
    OracleEvaluator { grid, fluids, schedule: cfg.schedule, options: cfg.sim.clone(), p_allow: cfg.optimize.p_allow }
}

fn search<E: Evaluator>(cfg: &ExperimentConfig, placement: Placement, evaluator: &E, method: Method, seed: u64) -> Result<SearchResult> {
    let problem = PlacementProblem { placement, evaluator };
    match method {
        Method::DifferentialEvolution => differential_evolution(&problem, &cfg.optimize.de, seed),
        Method::RandomSearch { budget } => random_search(&problem, budget, cfg.optimize.de.pop_size, cfg.optimize.de.tol, seed),
    }
}

/// Runs one study. A surrogate study needs `trained` and re-scores its best
/// configuration with the simulator.
pub fn run_study(
    cfg: &ExperimentConfig,
    grid: &GridModel,
    trained: Option<&Trained>,
    evaluator: EvaluatorKind,
    method: Method,
    seed: u64,
) -> Result<StudyRun> {
    cfg.validate()?;
    let fluids = FluidModel::default();
    let placement = Placement::new(grid, cfg.n_wells, cfg.optimize.limits.clone())?;
    let oracle = oracle(cfg, grid, &fluids);
    let (result, best, oracle_check) = match evaluator {
        EvaluatorKind::Oracle => {
            let result = search(cfg, placement, &oracle, method, seed)?;
            let best = oracle.evaluate(&WellConfig::from_vector(&result.best_u)?)?;
            (result, best, None)
        }
        EvaluatorKind::Surrogate => {
            let t = trained.ok_or_else(|| CoreError::Missing("trained networks for a surrogate study (run train first)".into()))?;
            let sur = SurrogateEvaluator {
                grid,
                fluids: &fluids,
                schedule: cfg.schedule,
                pressure_net: &t.pressure,
                saturation_net: &t.saturation,
                bhp_model: &t.bhp,
                well_radius: cfg.sim.well_radius,
                p_allow: cfg.optimize.p_allow,
                ring_floor: cfg.optimize.ring_floor,
            };
            let result = search(cfg, placement, &sur, method, seed)?;
            let wells = WellConfig::from_vector(&result.best_u)?;
            let best = sur.evaluate(&wells)?;
            let check = oracle.evaluate(&wells)?;
            (result, best, Some(check))
        }
    };
    let oracle_gap = oracle_check.as_ref().map(|o| (best.score.j - o.score.j).abs() / o.score.j);
    let best_wells = WellConfig::from_vector(&result.best_u)?;
    let summary = StudySummary {
        evaluator,
        method,
        seed,
        stop: result.stop,
        iterations: result.iterations.len(),
        evaluations: result.evaluations(),
        best_feasible_j: result.best_feasible_j(),
        best,
        oracle_check,
        oracle_gap,
    };
    Ok(StudyRun { summary, result, best_wells })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `history.csv` (every evaluation), `iterations.csv`, `best_wells.json` and `summary.json`.
pub fn write_study(run: &StudyRun, dir: &Path, tol: f64) -> Result<()> {
    let dim = run.result.best_u.len();
    let mut header: Vec<String> = ["iteration", "index", "j", "c_bhp", "c_ret", "feasible", "best_feasible_j"].map(String::from).to_vec();
    header.extend((0..dim).map(|i| format!("u{i}")));
    let mut rows = vec![header];
    for e in &run.result.history {
        let mut r = vec![
            e.iteration.to_string(),
            e.index.to_string(),
            e.score.j.to_string(),
            e.score.c_bhp.to_string(),
            e.score.c_ret.to_string(),
            (e.score.is_feasible(tol) as u8).to_string(),
            opt(e.best_feasible_j),
        ];
        r.extend(e.u.iter().map(|v| v.to_string()));
        rows.push(r);
    }
    write_csv(&dir.join("history.csv"), &rows)?;
    let mut it = vec![["iteration", "evaluations", "best_feasible_j", "n_feasible"].map(String::from).to_vec()];
    for r in &run.result.iterations {
        it.push(vec![r.iteration.to_string(), r.evaluations.to_string(), opt(r.best_feasible_j), r.n_feasible.to_string()]);
    }
    write_csv(&dir.join("iterations.csv"), &it)?;
    run.best_wells.save(&dir.join("best_wells.json"))?;
    io::write_json(&dir.join("summary.json"), &run.summary)
}
