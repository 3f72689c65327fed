//! Central finite-difference checks against reverse-mode gradients.
//!
//! The numeric side only ever evaluates the loss closure, so it shares no code
//! path with the tape's backward pass.

use rand::seq::index::sample;
use rand::Rng;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Picks `count` distinct scalar entries across all tensors of `store`.
pub fn pick_entries<R: Rng + ?Sized>(store: &ParamStore, count: usize, rng: &mut R) -> Vec<(ParamId, usize)> {
    let offsets: Vec<(ParamId, usize, usize)> = {
        let mut acc = 0;
        store
            .iter()
            .map(|(id, _, t)| {
                let start = acc;
                acc += t.numel();
                (id, start, t.numel())
            })
            .collect()
    };
    let total: usize = offsets.iter().map(|o| o.2).sum();
    let mut flat: Vec<usize> = sample(rng, total, count.min(total)).into_vec();
    flat.sort_unstable();
    flat.into_iter()
        .map(|f| {
            let (id, start, _) = *offsets.iter().rev().find(|o| o.1 <= f).expect("offset found");
            (id, f - start)
        })
        .collect()
}

/// Compares `analytic` (one tensor per store entry) with central differences
/// of `loss` at the given entries.
pub fn check_entries<F>(
    store: &mut ParamStore,
    analytic: &[Tensor],
    entries: &[(ParamId, usize)],
    h: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradCheckReport::default();
    for &(id, i) in entries {
        let orig = store.get(id).data()[i];
        store.get_mut(id).data_mut()[i] = orig + h;
        let up = loss(store);
        store.get_mut(id).data_mut()[i] = orig - h;
        let down = loss(store);
        store.get_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[id.0].data()[i];
        report.probes.push(Probe {
            param: store.name(id).to_string(),
            index: i,
            analytic: a,
            numeric,
            rel_err: rel_err(a, numeric),
        });
    }
    report
}
