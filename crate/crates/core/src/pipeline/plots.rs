//! Plot-ready CSV tables; rendering is left to external tools.

use std::path::{Path, PathBuf};

use super::evaluate::{write_csv, EvalReport};
use super::metrics::{percentile, PERCENTILES};
use crate::error::{CoreError, Result};

pub const BOX_PLOT: &str = "box_percentiles.csv";
pub const FOOTPRINT_CROSSPLOT: &str = "footprint_crossplot.csv";
pub const BHP_SERIES: &str = "bhp_series.csv";
pub const OPTIMIZATION_PROGRESS: &str = "optimization_progress.csv";

fn s(v: f64) -> String {
    v.to_string()
}

/// Progress rows of one optimization study, read from its `iterations.csv`.
pub struct StudyProgress {
    pub name: String,
    pub rows: Vec<Vec<String>>,
}

pub fn read_progress(name: &str, iterations_csv: &Path) -> Result<StudyProgress> {
    let err = |e: csv::Error| CoreError::format(iterations_csv, e.to_string());
    let mut r = csv::Reader::from_path(iterations_csv).map_err(err)?;
    let rows = r.records().map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(err)).collect::<Result<Vec<Vec<String>>>>()?;
    Ok(StudyProgress { name: name.to_string(), rows })
}

/// Writes the four plot tables under `dir` and returns their paths. Studies
/// may be empty, which leaves only the header in the progress table.
pub fn export(report: &EvalReport, studies: &[StudyProgress], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut header = vec!["metric".to_string(), "min".into()];
    header.extend(PERCENTILES.iter().map(|q| format!("p{q}")));
    header.push("max".into());
    let mut rows = vec![header];
    for (name, get) in [("e_p", (|c: &super::evaluate::CaseEval| c.e_p) as fn(&_) -> f64), ("e_s", |c| c.e_s)] {
        let v: Vec<f64> = report.cases.iter().map(get).collect();
        let mut row = vec![name.to_string(), s(percentile(&v, 0.0)?)];
        for q in PERCENTILES {
            row.push(s(percentile(&v, q)?));
        }
        row.push(s(percentile(&v, 100.0)?));
        rows.push(row);
    }
    let mut paths = Vec::new();
    let mut put = |name: &str, rows: &[Vec<String>]| -> Result<()> {
        let p = dir.join(name);
        write_csv(&p, rows)?;
        paths.push(p);
        Ok(())
    };
    put(BOX_PLOT, &rows)?;

    let mut fp = vec![vec!["case".to_string(), "gnsm".into(), "oracle".into()]];
    fp.extend(report.cases.iter().map(|c| vec![c.case.clone(), s(c.footprint_gnsm), s(c.footprint_oracle)]));
    put(FOOTPRINT_CROSSPLOT, &fp)?;

    let mut bhp = vec!["case,time_years,well,true_bar,predicted_bar".split(',').map(String::from).collect::<Vec<_>>()];
    for c in &report.cases {
        for (t, time) in c.times.iter().enumerate() {
            for w in 0..c.bhp_true[t].len() {
                bhp.push(vec![c.case.clone(), s(*time), w.to_string(), s(c.bhp_true[t][w]), s(c.bhp_pred[t][w])]);
            }
        }
    }
    put(BHP_SERIES, &bhp)?;

    let mut prog = vec!["study,iteration,evaluations,best_feasible_j,n_feasible".split(',').map(String::from).collect::<Vec<_>>()];
    for st in studies {
        for r in &st.rows {
            prog.push(std::iter::once(st.name.clone()).chain(r.iter().cloned()).collect());
        }
    }
    put(OPTIMIZATION_PROGRESS, &prog)?;
    Ok(paths)
}
