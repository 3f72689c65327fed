//! Test-set evaluation of trained surrogates against simulated truth.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{footprint, percentile_table, state_errors, PERCENTILES};
use super::train::Trained;
use crate::error::{CoreError, Result};
use crate::fluid::FluidModel;
use crate::gnsm::rollout;
use crate::grid::GridModel;
use crate::refsim::{simulate, SnapshotSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEval {
    pub case: String,
    pub e_p: f64,
    pub e_s: f64,
    pub footprint_gnsm: f64,
    pub footprint_oracle: f64,
    /// Mean absolute BHP error over wells and report steps (bar).
    pub bhp_mae: f64,
    /// Mean relative gap between predicted well rates and the prescribed rate.
    pub rate_gap: f64,
    /// `[t][well]` at report steps 1..=n_t.
    pub bhp_true: Vec<Vec<f64>>,
    pub bhp_pred: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: Vec<CaseEval>,
    pub e_p_percentiles: [f64; 5],
    pub e_s_percentiles: [f64; 5],
    pub bhp_mae: f64,
    /// Smallest and largest true BHP over the test set (bar).
    pub bhp_range: (f64, f64),
    pub bhp_mae_over_range: f64,
}

/// Wall-clock comparison, kept apart from the deterministic report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTiming {
    pub rollout_seconds: Vec<f64>,
    pub simulation_seconds: Vec<f64>,
    pub mean_rollout: f64,
    pub mean_simulation: f64,
}

/// Rolls out the surrogate for every test case and compares with the truth.
pub fn evaluate(cfg: &ExperimentConfig, grid: &GridModel, trained: &Trained, test: &[SnapshotSeries]) -> Result<(EvalReport, EvalTiming)> {
    if test.is_empty() {
        return Err(CoreError::Missing("no test cases to evaluate".into()));
    }
    let fluids = FluidModel::default();
    let rate = cfg.schedule.rate_per_well;
    let per_case: Vec<(CaseEval, f64, f64)> = test
        .par_iter()
        .map(|truth| {
            let t0 = Instant::now();
            let r = rollout(&trained.pressure, &trained.saturation, grid, &fluids, &truth.well_config, &cfg.schedule, cfg.sim.well_radius)?;
            let bhp_pred = trained.bhp.predict_rollout(grid, &r)?;
            let rollout_s = t0.elapsed().as_secs_f64();
            let t0 = Instant::now();
            simulate(grid, &fluids, &truth.well_config, &cfg.schedule, &cfg.sim)?;
            let sim_s = t0.elapsed().as_secs_f64();

            let (e_p, e_s) = state_errors(&r, truth)?;
            let n_t = truth.n_reports();
            let bhp_true = truth.bhp[1..].to_vec();
            let n_w = truth.well_config.n_wells();
            let mut abs = 0.0;
            for t in 0..n_t {
                for w in 0..n_w {
                    abs += (bhp_pred[t][w] - bhp_true[t][w]).abs();
                }
            }
            let mut gap = 0.0;
            for q in &r.q_perf {
                let mut per_well = vec![0.0; n_w];
                for (c, v) in r.completions.iter().zip(q) {
                    per_well[c.well] += v;
                }
                gap += per_well.iter().map(|s| (s - rate).abs() / rate).sum::<f64>();
            }
            let eval = CaseEval {
                case: truth.meta.case_id.clone(),
                e_p,
                e_s,
                footprint_gnsm: footprint(grid, &r.saturation_g[n_t - 1])?.ratio,
                footprint_oracle: footprint(grid, &truth.saturation_g[n_t])?.ratio,
                bhp_mae: abs / (n_t * n_w) as f64,
                rate_gap: gap / (n_t * n_w) as f64,
                bhp_true,
                bhp_pred,
                times: r.times.clone(),
            };
            Ok((eval, rollout_s, sim_s))
        })
        .collect::<Result<Vec<_>>>()?;

    let cases: Vec<CaseEval> = per_case.iter().map(|c| c.0.clone()).collect();
    let e_p: Vec<f64> = cases.iter().map(|c| c.e_p).collect();
    let e_s: Vec<f64> = cases.iter().map(|c| c.e_s).collect();
    let all_true = cases.iter().flat_map(|c| c.bhp_true.iter().flatten());
    let lo = all_true.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all_true.copied().fold(f64::NEG_INFINITY, f64::max);
    let n: usize = cases.iter().map(|c| c.bhp_true.len() * c.bhp_true[0].len()).sum();
    let bhp_mae = cases.iter().map(|c| c.bhp_mae * (c.bhp_true.len() * c.bhp_true[0].len()) as f64).sum::<f64>() / n as f64;
    let report = EvalReport {
        e_p_percentiles: percentile_table(&e_p)?,
        e_s_percentiles: percentile_table(&e_s)?,
        bhp_mae,
        bhp_range: (lo, hi),
        bhp_mae_over_range: bhp_mae / (hi - lo),
        cases,
    };
    let rollout_seconds: Vec<f64> = per_case.iter().map(|c| c.1).collect();
    let simulation_seconds: Vec<f64> = per_case.iter().map(|c| c.2).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let timing = EvalTiming {
        mean_rollout: mean(&rollout_seconds),
        mean_simulation: mean(&simulation_seconds),
        rollout_seconds,
        simulation_seconds,
    };
    Ok((report, timing))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CoreError + '_ {
    move |e| CoreError::io(format!("writing {}", path.display()), e.into())
}

/// Writes `rows` (header first) to `path`.
pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CoreError::io(format!("creating {}", parent.display()), e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
}

fn s(v: f64) -> String {
    v.to_string()
}

/// CSV files of a report: per-case errors, percentiles, footprint pairs and
/// BHP series.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    let mut errors = vec![["case", "e_p", "e_s", "footprint_gnsm", "footprint_oracle", "bhp_mae", "rate_gap"].map(String::from).to_vec()];
    for c in &report.cases {
        errors.push(vec![c.case.clone(), s(c.e_p), s(c.e_s), s(c.footprint_gnsm), s(c.footprint_oracle), s(c.bhp_mae), s(c.rate_gap)]);
    }
    write_csv(&dir.join("errors.csv"), &errors)?;

    let mut pct = vec![std::iter::once("metric".to_string()).chain(PERCENTILES.iter().map(|q| format!("p{q}"))).collect::<Vec<_>>()];
    for (name, t) in [("e_p", report.e_p_percentiles), ("e_s", report.e_s_percentiles)] {
        pct.push(std::iter::once(name.to_string()).chain(t.iter().map(|v| s(*v))).collect());
    }
    write_csv(&dir.join("percentiles.csv"), &pct)?;

    let mut fp = vec![vec!["case".to_string(), "gnsm".into(), "oracle".into()]];
    for c in &report.cases {
        fp.push(vec![c.case.clone(), s(c.footprint_gnsm), s(c.footprint_oracle)]);
    }
    write_csv(&dir.join("footprint.csv"), &fp)?;

    let mut bhp = vec![["case", "time", "well", "true", "pred"].map(String::from).to_vec()];
    for c in &report.cases {
        for (t, time) in c.times.iter().enumerate() {
            for w in 0..c.bhp_true[t].len() {
                bhp.push(vec![c.case.clone(), s(*time), w.to_string(), s(c.bhp_true[t][w]), s(c.bhp_pred[t][w])]);
            }
        }
    }
    write_csv(&dir.join("bhp_series.csv"), &bhp)?;

    let summary = vec![
        vec!["bhp_mae".to_string(), "bhp_min".into(), "bhp_max".into(), "mae_over_range".into()],
        vec![s(report.bhp_mae), s(report.bhp_range.0), s(report.bhp_range.1), s(report.bhp_mae_over_range)],
    ];
    write_csv(&dir.join("bhp_summary.csv"), &summary)
}
