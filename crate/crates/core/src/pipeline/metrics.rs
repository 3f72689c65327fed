//! Error statistics and the CO2 footprint.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::gnsm::RolloutResult;
use crate::grid::GridModel;
use crate::refsim::SnapshotSeries;

/// Saturation-error denominator offset.
pub const SAT_EPS: f64 = 0.05;
/// Cells with gas saturation at or below this do not count toward the footprint.
pub const FOOTPRINT_THRESHOLD: f64 = 0.05;
pub const PERCENTILES: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];

/// Mean relative pressure and saturation errors over cells and report steps.
///
/// Pressure errors are divided by the true pressure range at each step;
/// saturation errors by `S_g + 0.05`. Index `t` of every slice is one report step.
pub fn state_errors_fields(
    pred_p: &[Vec<f64>],
    pred_sg: &[Vec<f64>],
    true_p: &[Vec<f64>],
    true_sg: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let n_t = true_p.len();
    if n_t == 0 {
        return Err(CoreError::InvalidArgument("no report steps to compare".into()));
    }
    for (what, len) in [("predicted pressure steps", pred_p.len()), ("predicted saturation steps", pred_sg.len()), ("true saturation steps", true_sg.len())] {
        if len != n_t {
            return Err(CoreError::Shape { what, expected: n_t, got: len });
        }
    }
    let n_c = true_p[0].len();
    let (mut ep, mut es) = (0.0, 0.0);
    for t in 0..n_t {
        for (what, len) in [("predicted pressure", pred_p[t].len()), ("predicted saturation", pred_sg[t].len()), ("true pressure", true_p[t].len()), ("true saturation", true_sg[t].len())] {
            if len != n_c {
                return Err(CoreError::Shape { what, expected: n_c, got: len });
            }
        }
        let lo = true_p[t].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = true_p[t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(CoreError::Numerical(format!("true pressure is constant ({lo} bar) at step {}; relative error undefined", t + 1)));
        }
        let range = hi - lo;
        for c in 0..n_c {
            ep += (pred_p[t][c] - true_p[t][c]).abs() / range;
            es += (pred_sg[t][c] - true_sg[t][c]).abs() / (true_sg[t][c] + SAT_EPS);
        }
    }
    let norm = (n_c * n_t) as f64;
    Ok((ep / norm, es / norm))
}

/// Relative errors of a rollout against the simulated series it mimics.
pub fn state_errors(pred: &RolloutResult, truth: &SnapshotSeries) -> Result<(f64, f64)> {
    let n_t = truth.n_reports();
    if pred.times.len() != n_t || pred.times.iter().zip(&truth.times[1..]).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(CoreError::InvalidArgument(format!(
            "rollout times {:?} do not match simulated report times {:?}",
            pred.times,
            &truth.times[1..]
        )));
    }
    state_errors_fields(&pred.pressure, &pred.saturation_g, &truth.pressure[1..], &truth.saturation_g[1..])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    /// Plume box volume (m^3).
    pub volume: f64,
    /// Box volume over aquifer volume.
    pub ratio: f64,
    /// Aquifer cell index ranges of the box (inclusive), `None` without plume.
    pub i_range: Option<(usize, usize)>,
    pub j_range: Option<(usize, usize)>,
}

impl Footprint {
    pub fn is_empty(&self) -> bool {
        self.i_range.is_none()
    }
}

/// Smallest x-y box holding every aquifer cell with `S_g > 0.05`, extended
/// through the full aquifer thickness.
pub fn footprint(grid: &GridModel, sat_g: &[f64]) -> Result<Footprint> {
    if sat_g.len() != grid.n_cells() {
        return Err(CoreError::Shape { what: "saturation field", expected: grid.n_cells(), got: sat_g.len() });
    }
    let b = &grid.aquifer_box;
    let mut i_range: Option<(usize, usize)> = None;
    let mut j_range: Option<(usize, usize)> = None;
    for c in 0..grid.n_cells() {
        if sat_g[c] <= FOOTPRINT_THRESHOLD || !grid.in_aquifer(c) {
            continue;
        }
        let (i, j, _) = grid.ijk(c);
        let (i, j) = (i - b.i[0], j - b.j[0]);
        i_range = Some(i_range.map_or((i, i), |(lo, hi)| (lo.min(i), hi.max(i))));
        j_range = Some(j_range.map_or((j, j), |(lo, hi)| (lo.min(j), hi.max(j))));
    }
    let volume = match (i_range, j_range) {
        (Some(ir), Some(jr)) => {
            let ext = grid.aquifer_extent();
            (ir.1 - ir.0 + 1) as f64 * grid.dx * (jr.1 - jr.0 + 1) as f64 * grid.dy * ext[2]
        }
        _ => 0.0,
    };
    Ok(Footprint { volume, ratio: volume / grid.aquifer_bulk_volume(), i_range, j_range })
}

/// Linear-interpolation percentile of `values` (`q` in 0..=100).
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CoreError::InvalidArgument("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&q) || values.iter().any(|v| v.is_nan()) {
        return Err(CoreError::InvalidArgument(format!("percentile {q} of a set containing NaN or out of range")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// P10, P25, P50, P75 and P90.
pub fn percentile_table(values: &[f64]) -> Result<[f64; 5]> {
    let mut out = [0.0; 5];
    for (o, q) in out.iter_mut().zip(PERCENTILES) {
        *o = percentile(values, q)?;
    }
    Ok(out)
}
