//! Gaussian likelihoods and the predictive probability functions: the
//! plain Chinese restaurant process, its temporally coherent variant with
//! conflict masking and a junk sink, and the segment-aware franchise
//! variant.
//!
//! All three predictives are pure functions of count tables; the returned
//! [`Categorical`] assigns weight exactly 0 to every masked component.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::types::{Candidate, Categorical, HyperParams, ModelState, JUNK_COMPONENT};

/// Log-density of a diagonal-covariance Gaussian. `var` holds per-dimension
/// variances.
pub fn log_gaussian(y: &[f64], mean: &[f64], var: &[f64]) -> Result<f64> {
    if y.len() != mean.len() || y.len() != var.len() {
        return Err(Error::Contract(format!(
            "log_gaussian: dimension mismatch (y {}, mean {}, var {})",
            y.len(),
            mean.len(),
            var.len()
        )));
    }
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Contract(format!(
            "log_gaussian: variance element {v} is not strictly positive"
        )));
    }
    Ok(log_gaussian_raw(y, mean, var))
}

/// Unchecked counterpart of [`log_gaussian`] for validated inputs.
pub(crate) fn log_gaussian_raw(y: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    const LN_TWO_PI: f64 = 1.8378770664093453;
    let mut acc = 0.0;
    for ((y, m), v) in y.iter().zip(mean).zip(var) {
        let r = y - m;
        acc += LN_TWO_PI + v.ln() + r * r / v;
    }
    -0.5 * acc
}

/// Log-density of the junk emission `N(mu, c * sigma1)`.
pub(crate) fn log_junk(y: &[f64], hyper: &HyperParams) -> f64 {
    const LN_TWO_PI: f64 = 1.8378770664093453;
    let mut acc = 0.0;
    for ((y, m), v) in y.iter().zip(&hyper.mu).zip(&hyper.sigma1) {
        let v = hyper.c * v;
        let r = y - m;
        acc += LN_TWO_PI + v.ln() + r * r / v;
    }
    -0.5 * acc
}

/// Plain Chinese restaurant process predictive: existing components
/// proportional to their counts, a new one proportional to `alpha`.
/// No junk sink, no conflict masking.
pub fn crp_predictive(counts: &BTreeMap<usize, usize>, alpha: f64) -> Result<Categorical> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Contract(format!("crp_predictive: alpha {alpha} must be positive")));
    }
    let mut entries: Vec<(Candidate, f64)> = counts
        .iter()
        .map(|(k, n)| (Candidate::Component(*k), *n as f64))
        .collect();
    entries.push((Candidate::New, alpha));
    Categorical::new(entries)
}

/// Temporally coherent predictive for a change-flagged draw.
///
/// Weights: junk proportional to `beta`; an existing component proportional
/// to its change-flagged count, zeroed when it appears in `conflicts`
/// (junk is exempt from masking); a new component proportional to `alpha`.
/// Components whose change-flagged count is zero get zero weight even if
/// they still hold tracklets.
pub fn tccrp_predictive(
    state: &ModelState,
    conflicts: &BTreeSet<usize>,
    hyper: &HyperParams,
) -> Result<Categorical> {
    let mut entries = Vec::with_capacity(state.components.len() + 2);
    entries.push((Candidate::Component(JUNK_COMPONENT), hyper.beta));
    for (k, comp) in &state.components {
        let w = if conflicts.contains(k) { 0.0 } else { comp.n_zc as f64 };
        entries.push((Candidate::Component(*k), w));
    }
    entries.push((Candidate::New, hyper.alpha));
    Categorical::new(entries)
}

/// Franchise predictive for a change-flagged draw inside temporal segment
/// `segment`.
///
/// Weights: junk proportional to `beta`; a component already active in the
/// segment proportional to its within-segment change-flagged count; a
/// component held only by other segments proportional to
/// `alpha * seg_count` (the joint activation-and-assignment move); a brand
/// new component proportional to `alpha * gamma`. Conflict masking as in
/// the non-franchise predictive.
pub fn tccrf_predictive(
    state: &ModelState,
    segment: usize,
    conflicts: &BTreeSet<usize>,
    hyper: &HyperParams,
) -> Result<Categorical> {
    let crf = state
        .tccrf
        .as_ref()
        .ok_or_else(|| Error::Contract("tccrf_predictive: state has no franchise table".into()))?;
    if segment >= crf.n_szc.len() {
        return Err(Error::Contract(format!(
            "tccrf_predictive: segment {segment} out of range ({} segments)",
            crf.n_szc.len()
        )));
    }
    let in_segment = &crf.n_szc[segment];
    let mut entries = Vec::with_capacity(state.components.len() + 2);
    entries.push((Candidate::Component(JUNK_COMPONENT), hyper.beta));
    for k in state.components.keys() {
        let w = if conflicts.contains(k) {
            0.0
        } else if let Some(n) = in_segment.get(k) {
            *n as f64
        } else {
            hyper.alpha * crf.seg_count.get(k).copied().unwrap_or(0) as f64
        };
        entries.push((Candidate::Component(*k), w));
    }
    entries.push((Candidate::New, hyper.alpha * hyper.gamma));
    Categorical::new(entries)
}
