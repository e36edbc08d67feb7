//! Collapsed blocked Gibbs sampling for the coherent seating models, the
//! conjugate component updates, hyperparameter re-estimation and the
//! single-pass online variant.
//!
//! One chain is strictly sequential; independent chains with distinct
//! seeds can run in parallel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_gaussian_raw, log_junk};
use crate::types::{
    Candidate, Component, HyperParams, ModelState, SequenceContext, TcCrfState, TrackletRecord,
    JUNK_COMPONENT,
};

/// Which seating model drives the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Tccrp,
    Tccrf,
    CrpBaseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Tccrp => "tccrp",
            Mode::Tccrf => "tccrf",
            Mode::CrpBaseline => "crp-baseline",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tccrp" => Ok(Mode::Tccrp),
            "tccrf" => Ok(Mode::Tccrf),
            "crp-baseline" => Ok(Mode::CrpBaseline),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected tccrp, tccrf or crp-baseline)"
            ))),
        }
    }
}

/// Sampler configuration.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub mode: Mode,
    pub n_sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub online: bool,
    /// Draws per record in the online pass; the mode of the draws wins.
    pub online_samples_per_point: usize,
    pub hyper_update_enabled: bool,
    pub hyper: HyperParams,
}

impl FitConfig {
    pub fn new(mode: Mode, hyper: HyperParams) -> Self {
        FitConfig {
            mode,
            n_sweeps: 200,
            burn_in: 100,
            seed: 0,
            online: false,
            online_samples_per_point: 15,
            hyper_update_enabled: true,
            hyper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.n_sweeps == 0 {
            return Err(Error::Config("fit: n_sweeps must be at least 1".into()));
        }
        if self.burn_in >= self.n_sweeps {
            return Err(Error::Config(format!(
                "fit: burn_in ({}) must be smaller than n_sweeps ({})",
                self.burn_in, self.n_sweeps
            )));
        }
        if self.online_samples_per_point == 0 {
            return Err(Error::Config("fit: online_samples_per_point must be at least 1".into()));
        }
        Ok(())
    }
}

/// Final state plus the per-sweep joint log-probability trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: ModelState,
    /// Joint log probability of (C, Z, phi, Y) after each sweep. Length 1
    /// for the online pass.
    pub log_prob_trace: Vec<f64>,
    /// Wall-clock seconds per sweep; informational only.
    pub sweep_seconds: Vec<f64>,
    /// Hyperparameters after any re-estimation.
    pub hyper: HyperParams,
    pub mode: Mode,
}

// ---------------------------------------------------------------------------
// Conjugate pieces
// ---------------------------------------------------------------------------

/// Collapsed weight of a brand-new component: `log N(y | mu, sigma0 + sigma1)`.
pub fn marginal_likelihood_new(y: &[f64], hyper: &HyperParams) -> Result<f64> {
    if y.len() != hyper.dim() {
        return Err(Error::Contract(format!(
            "marginal_likelihood_new: y has dimension {} but hyper has {}",
            y.len(),
            hyper.dim()
        )));
    }
    let var: Vec<f64> = hyper.sigma0.iter().zip(&hyper.sigma1).map(|(a, b)| a + b).collect();
    Ok(log_gaussian_raw(y, &hyper.mu, &var))
}

/// Gaussian posterior of a component mean given `n` assigned vectors with
/// running sum `sum_y`. Element-wise under diagonal covariances:
/// variance `(n/sigma1 + 1/sigma0)^-1`, mean `var * (sum_y/sigma1 + mu/sigma0)`.
pub fn component_posterior(n: usize, sum_y: &[f64], hyper: &HyperParams) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut mean = Vec::with_capacity(sum_y.len());
    let mut var = Vec::with_capacity(sum_y.len());
    for j in 0..sum_y.len() {
        let prec = nf / hyper.sigma1[j] + 1.0 / hyper.sigma0[j];
        let v = 1.0 / prec;
        mean.push(v * (sum_y[j] / hyper.sigma1[j] + hyper.mu[j] / hyper.sigma0[j]));
        var.push(v);
    }
    (mean, var)
}

/// Redraws the mean of component `k` from its conjugate posterior.
pub fn resample_component<R: Rng>(
    state: &mut ModelState,
    k: usize,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<()> {
    let comp = state
        .components
        .get_mut(&k)
        .ok_or_else(|| Error::Contract(format!("resample_component: component {k} does not exist")))?;
    let (mean, var) = component_posterior(comp.n, &comp.sum_y, hyper);
    for j in 0..comp.phi.len() {
        let eps: f64 = rng.sample(StandardNormal);
        comp.phi[j] = mean[j] + var[j].sqrt() * eps;
    }
    Ok(())
}

/// Maximum-likelihood update of `mu` and `sigma0` from the active
/// component means; `sigma1` (and with it the junk variance) stays fixed.
/// No-op with fewer than two active components.
pub fn update_hyperparameters(state: &ModelState, hyper: &mut HyperParams) {
    const VAR_FLOOR: f64 = 1e-6;
    let active: Vec<&Component> = state.components.values().filter(|c| c.n > 0).collect();
    if active.len() < 2 {
        return;
    }
    let m = active.len() as f64;
    let dim = hyper.dim();
    let mut mu = vec![0.0; dim];
    for comp in &active {
        for j in 0..dim {
            mu[j] += comp.phi[j];
        }
    }
    for v in &mut mu {
        *v /= m;
    }
    let mut var = vec![0.0; dim];
    for comp in &active {
        for j in 0..dim {
            let r = comp.phi[j] - mu[j];
            var[j] += r * r;
        }
    }
    for v in &mut var {
        *v = (*v / m).max(VAR_FLOOR);
    }
    hyper.mu = mu;
    hyper.sigma0 = var;
}

// ---------------------------------------------------------------------------
// Likelihood context (per-sweep constants)
// ---------------------------------------------------------------------------

struct LikCtx {
    ent_const: f64,
    junk_const: f64,
    new_const: f64,
    inv_sigma1: Vec<f64>,
    inv_sigma2: Vec<f64>,
    inv_s01: Vec<f64>,
}

impl LikCtx {
    fn new(hyper: &HyperParams) -> Self {
        const LN_TWO_PI: f64 = 1.8378770664093453;
        let d = hyper.dim();
        let mut ent_const = 0.0;
        let mut junk_const = 0.0;
        let mut new_const = 0.0;
        let mut inv_sigma1 = Vec::with_capacity(d);
        let mut inv_sigma2 = Vec::with_capacity(d);
        let mut inv_s01 = Vec::with_capacity(d);
        for j in 0..d {
            let s1 = hyper.sigma1[j];
            let s2 = hyper.c * s1;
            let s01 = hyper.sigma0[j] + s1;
            ent_const += LN_TWO_PI + s1.ln();
            junk_const += LN_TWO_PI + s2.ln();
            new_const += LN_TWO_PI + s01.ln();
            inv_sigma1.push(1.0 / s1);
            inv_sigma2.push(1.0 / s2);
            inv_s01.push(1.0 / s01);
        }
        LikCtx {
            ent_const: -0.5 * ent_const,
            junk_const: -0.5 * junk_const,
            new_const: -0.5 * new_const,
            inv_sigma1,
            inv_sigma2,
            inv_s01,
        }
    }

    fn entity(&self, y: &[f64], phi: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((y, p), iv) in y.iter().zip(phi).zip(&self.inv_sigma1) {
            let r = y - p;
            q += r * r * iv;
        }
        self.ent_const - 0.5 * q
    }

    fn junk(&self, y: &[f64], mu: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((y, m), iv) in y.iter().zip(mu).zip(&self.inv_sigma2) {
            let r = y - m;
            q += r * r * iv;
        }
        self.junk_const - 0.5 * q
    }

    fn fresh(&self, y: &[f64], mu: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((y, m), iv) in y.iter().zip(mu).zip(&self.inv_s01) {
            let r = y - m;
            q += r * r * iv;
        }
        self.new_const - 0.5 * q
    }
}

// ---------------------------------------------------------------------------
// Count bookkeeping
// ---------------------------------------------------------------------------

fn segment_of(ctx: &SequenceContext, state: &ModelState, i: usize) -> Option<usize> {
    state.tccrf.as_ref().map(|_| ctx.segment_of[i])
}

fn remove_point(state: &mut ModelState, i: usize, features: &[f64], seg: Option<usize>) {
    let k = state.z[i];
    let c = state.c_flags[i];
    if k == JUNK_COMPONENT {
        state.junk_n -= 1;
        return;
    }
    let comp = state.components.get_mut(&k).expect("assigned component exists");
    comp.n -= 1;
    for (s, y) in comp.sum_y.iter_mut().zip(features) {
        *s -= y;
    }
    if c {
        comp.n_zc -= 1;
        if let (Some(s), Some(crf)) = (seg, state.tccrf.as_mut()) {
            let cnt = crf.n_szc[s].get_mut(&k).expect("segment holds component");
            *cnt -= 1;
            if *cnt == 0 {
                crf.n_szc[s].remove(&k);
                let sc = crf.seg_count.get_mut(&k).expect("seg_count holds component");
                *sc -= 1;
                if *sc == 0 {
                    crf.seg_count.remove(&k);
                }
            }
        }
    }
}

fn insert_point(
    state: &mut ModelState,
    i: usize,
    features: &[f64],
    seg: Option<usize>,
    k: usize,
    c: bool,
) {
    state.z[i] = k;
    state.c_flags[i] = c;
    if k == JUNK_COMPONENT {
        state.junk_n += 1;
        return;
    }
    let comp = state.components.get_mut(&k).expect("target component exists");
    comp.n += 1;
    for (s, y) in comp.sum_y.iter_mut().zip(features) {
        *s += y;
    }
    if c {
        comp.n_zc += 1;
        if let (Some(s), Some(crf)) = (seg, state.tccrf.as_mut()) {
            let cnt = crf.n_szc[s].entry(k).or_insert(0);
            *cnt += 1;
            if *cnt == 1 {
                *crf.seg_count.entry(k).or_insert(0) += 1;
            }
        }
    }
}

fn create_component<R: Rng>(
    state: &mut ModelState,
    features: &[f64],
    hyper: &HyperParams,
    rng: Option<&mut R>,
) -> usize {
    let k = state.next_label;
    state.next_label += 1;
    let (mean, var) = component_posterior(1, features, hyper);
    let phi = match rng {
        Some(rng) => mean
            .iter()
            .zip(&var)
            .map(|(m, v)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * eps
            })
            .collect(),
        // Online updates keep the deterministic posterior mean.
        None => mean,
    };
    state
        .components
        .insert(k, Component { phi, n: 0, sum_y: vec![0.0; features.len()], n_zc: 0 });
    k
}

// ---------------------------------------------------------------------------
// Blocked (C, Z) move
// ---------------------------------------------------------------------------

/// One weighted option for the blocked draw.
struct MoveOption {
    c: bool,
    cand: Candidate,
    log_w: f64,
}

/// Conflict labels of `i`: components held by frame-overlapping tracklets.
/// With `past_only`, only already-assigned earlier tracklets count.
fn conflict_labels(
    state: &ModelState,
    ctx: &SequenceContext,
    i: usize,
    past_only: bool,
) -> BTreeSet<usize> {
    let mut set = BTreeSet::new();
    for &j in &ctx.conflict_sets[i] {
        if past_only && j >= i {
            continue;
        }
        if state.z[j] != JUNK_COMPONENT {
            set.insert(state.z[j]);
        }
    }
    set
}

/// Prior seating weight of component `k` for a change-flagged draw, and
/// the total weight of all allowed options, from counts excluding the
/// point being resampled. Returns `(weight, total)`.
fn seating_weight_and_total(
    state: &ModelState,
    seg: Option<usize>,
    conflicts: &BTreeSet<usize>,
    hyper: &HyperParams,
    target: Candidate,
) -> (f64, f64) {
    let mut total = hyper.beta;
    let mut target_w = match target {
        Candidate::Component(JUNK_COMPONENT) => hyper.beta,
        _ => 0.0,
    };
    match (seg, state.tccrf.as_ref()) {
        (Some(s), Some(crf)) => {
            for k in state.components.keys() {
                if conflicts.contains(k) {
                    continue;
                }
                let w = match crf.n_szc[s].get(k) {
                    Some(n) => *n as f64,
                    None => hyper.alpha * crf.seg_count.get(k).copied().unwrap_or(0) as f64,
                };
                total += w;
                if target == Candidate::Component(*k) {
                    target_w = w;
                }
            }
            let fresh = hyper.alpha * hyper.gamma;
            total += fresh;
            if target == Candidate::New {
                target_w = fresh;
            }
        }
        _ => {
            for (k, comp) in state.components.iter() {
                if conflicts.contains(k) {
                    continue;
                }
                let w = comp.n_zc as f64;
                total += w;
                if target == Candidate::Component(*k) {
                    target_w = w;
                }
            }
            total += hyper.alpha;
            if target == Candidate::New {
                target_w = hyper.alpha;
            }
        }
    }
    (target_w, total)
}

/// Builds the weighted options for resampling `(C_i, Z_i)` with point `i`
/// already removed from the counts.
///
/// `pinned` fixes `Z_i` (a successor copies from `i`). `past_only`
/// restricts conflicts to already-seen tracklets (warm start, online).
fn build_options(
    state: &ModelState,
    i: usize,
    records: &[TrackletRecord],
    ctx: &SequenceContext,
    hyper: &HyperParams,
    lik: &LikCtx,
    mode: Mode,
    pinned: Option<usize>,
    past_only: bool,
) -> Vec<MoveOption> {
    let y = &records[i].features;
    let mut options = Vec::new();

    if mode == Mode::CrpBaseline {
        // Plain exchangeable mixture: no change machinery, no junk sink,
        // no conflict masking.
        let total: f64 =
            state.components.values().map(|c| c.n as f64).sum::<f64>() + hyper.alpha;
        let log_total = total.ln();
        for (k, comp) in &state.components {
            if comp.n == 0 {
                continue;
            }
            options.push(MoveOption {
                c: true,
                cand: Candidate::Component(*k),
                log_w: (comp.n as f64).ln() - log_total + lik.entity(y, &comp.phi),
            });
        }
        options.push(MoveOption {
            c: true,
            cand: Candidate::New,
            log_w: hyper.alpha.ln() - log_total + lik.fresh(y, &hyper.mu),
        });
        return options;
    }

    let seg = segment_of(ctx, state, i);
    let conflicts = conflict_labels(state, ctx, i, past_only);
    let prev = ctx.prev[i];
    // Change forced with no predecessor, or across a segment boundary.
    let boundary = match (seg, prev) {
        (Some(s), Some(p)) => ctx.segment_of[p] != s,
        _ => false,
    };
    let kappa = if boundary { None } else { hyper.change_prob(ctx.prev_distance[i], prev.is_some()) };
    let (log_keep, log_change) = match kappa {
        Some(k) => ((1.0 - k).ln(), k.ln()),
        None => (f64::NEG_INFINITY, 0.0),
    };

    let loglik = |cand: Candidate| -> f64 {
        match cand {
            Candidate::Component(JUNK_COMPONENT) => lik.junk(y, &hyper.mu),
            Candidate::Component(k) => lik.entity(y, &state.components[&k].phi),
            Candidate::New => lik.fresh(y, &hyper.mu),
        }
    };

    if let Some(z_star) = pinned {
        // A successor copies from i, so Z_i is fixed; only C_i may vary.
        let cand = Candidate::Component(z_star);
        let copy_ok = kappa.is_some()
            && prev.is_some_and(|p| state.z[p] == z_star)
            && (z_star == JUNK_COMPONENT || !conflicts.contains(&z_star));
        let ll = loglik(cand);
        if copy_ok {
            options.push(MoveOption { c: false, cand, log_w: log_keep + ll });
        }
        let (w, total) = seating_weight_and_total(state, seg, &conflicts, hyper, cand);
        let masked = z_star != JUNK_COMPONENT && conflicts.contains(&z_star);
        if !masked && (w > 0.0 || options.is_empty()) {
            // A zero seating weight can only happen when the whole chain
            // hangs off i; the move is then forced.
            let log_prior = if w > 0.0 { w.ln() - total.ln() } else { 0.0 };
            options.push(MoveOption { c: true, cand, log_w: log_change + log_prior + ll });
        }
        return options;
    }

    // Keep-branch: copy the predecessor's label.
    if let (Some(p), Some(_)) = (prev, kappa) {
        let zp = state.z[p];
        if zp == JUNK_COMPONENT || !conflicts.contains(&zp) {
            options.push(MoveOption {
                c: false,
                cand: Candidate::Component(zp),
                log_w: log_keep + loglik(Candidate::Component(zp)),
            });
        }
    }

    // Change-branch: junk, allowed components, or a new component.
    let (_, total) = seating_weight_and_total(state, seg, &conflicts, hyper, Candidate::New);
    let log_total = total.ln();
    options.push(MoveOption {
        c: true,
        cand: Candidate::Component(JUNK_COMPONENT),
        log_w: log_change + hyper.beta.ln() - log_total + lik.junk(y, &hyper.mu),
    });
    match (seg, state.tccrf.as_ref()) {
        (Some(s), Some(crf)) => {
            for (k, comp) in &state.components {
                if conflicts.contains(k) {
                    continue;
                }
                let w = match crf.n_szc[s].get(k) {
                    Some(n) => *n as f64,
                    None => hyper.alpha * crf.seg_count.get(k).copied().unwrap_or(0) as f64,
                };
                if w > 0.0 {
                    options.push(MoveOption {
                        c: true,
                        cand: Candidate::Component(*k),
                        log_w: log_change + w.ln() - log_total + lik.entity(y, &comp.phi),
                    });
                }
            }
            let fresh = hyper.alpha * hyper.gamma;
            options.push(MoveOption {
                c: true,
                cand: Candidate::New,
                log_w: log_change + fresh.ln() - log_total + lik.fresh(y, &hyper.mu),
            });
        }
        _ => {
            for (k, comp) in &state.components {
                if conflicts.contains(k) || comp.n_zc == 0 {
                    continue;
                }
                options.push(MoveOption {
                    c: true,
                    cand: Candidate::Component(*k),
                    log_w: log_change + (comp.n_zc as f64).ln() - log_total
                        + lik.entity(y, &comp.phi),
                });
            }
            options.push(MoveOption {
                c: true,
                cand: Candidate::New,
                log_w: log_change + hyper.alpha.ln() - log_total + lik.fresh(y, &hyper.mu),
            });
        }
    }
    options
}

fn sample_option<R: Rng>(options: &[MoveOption], rng: &mut R) -> usize {
    debug_assert!(!options.is_empty());
    if options.len() == 1 {
        return 0;
    }
    let m = options.iter().map(|o| o.log_w).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = options.iter().map(|o| (o.log_w - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (idx, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return idx;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Label pinned by copying successors, if any. All copying successors
/// share one label in a consistent state.
fn pinned_label(state: &ModelState, ctx: &SequenceContext, i: usize) -> Option<usize> {
    ctx.children[i]
        .iter()
        .find(|&&j| !state.c_flags[j])
        .map(|&j| state.z[j])
}

fn resample_point<R: Rng>(
    state: &mut ModelState,
    i: usize,
    records: &[TrackletRecord],
    ctx: &SequenceContext,
    hyper: &HyperParams,
    lik: &LikCtx,
    mode: Mode,
    rng: &mut R,
) -> Result<()> {
    let y = &records[i].features;
    let seg = segment_of(ctx, state, i);
    let pinned = if mode == Mode::CrpBaseline { None } else { pinned_label(state, ctx, i) };
    remove_point(state, i, y, seg);
    let options = build_options(state, i, records, ctx, hyper, lik, mode, pinned, false);
    if options.is_empty() {
        return Err(Error::Invariant(format!("no admissible move for tracklet {i}")));
    }
    let pick = &options[sample_option(&options, rng)];
    let (c, cand) = (pick.c, pick.cand);
    let k = match cand {
        Candidate::Component(k) => k,
        Candidate::New => create_component(state, y, hyper, Some(rng)),
    };
    insert_point(state, i, y, seg, k, c);
    Ok(())
}

/// Jointly resamples `(C_i, Z_i)` under the coherent seating model,
/// honoring the successor constraint and updating all counts by
/// remove-then-reinsert.
pub fn blocked_resample_cz<R: Rng>(
    state: &mut ModelState,
    i: usize,
    records: &[TrackletRecord],
    ctx: &SequenceContext,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<()> {
    if state.tccrf.is_some() {
        return Err(Error::Contract(
            "blocked_resample_cz: state carries a franchise table; use tccrf_resample_bz".into(),
        ));
    }
    let lik = LikCtx::new(hyper);
    resample_point(state, i, records, ctx, hyper, &lik, Mode::Tccrp, rng)
}

/// Franchise counterpart of [`blocked_resample_cz`]: the draw jointly
/// activates the chosen component in the tracklet's segment, and
/// deactivation happens when a segment loses its last holder.
pub fn tccrf_resample_bz<R: Rng>(
    state: &mut ModelState,
    i: usize,
    records: &[TrackletRecord],
    ctx: &SequenceContext,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<()> {
    if state.tccrf.is_none() {
        return Err(Error::Contract("tccrf_resample_bz: state has no franchise table".into()));
    }
    let lik = LikCtx::new(hyper);
    resample_point(state, i, records, ctx, hyper, &lik, Mode::Tccrf, rng)
}

// ---------------------------------------------------------------------------
// Full fits
// ---------------------------------------------------------------------------

fn check_inputs(records: &[TrackletRecord], ctx: &SequenceContext, config: &FitConfig) -> Result<()> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Data("fit: dataset is empty".into()));
    }
    if ctx.len() != records.len() {
        return Err(Error::Data(format!(
            "fit: context covers {} tracklets but the dataset has {}",
            ctx.len(),
            records.len()
        )));
    }
    let d = config.hyper.dim();
    if let Some(r) = records.iter().find(|r| r.dim() != d) {
        return Err(Error::Data(format!(
            "fit: record id {} has dimension {} but hyper has {}",
            r.id,
            r.dim(),
            d
        )));
    }
    Ok(())
}

/// Recomputes every count and sum from the assignments. Returns an
/// invariant error when the incremental integer counts drifted; resyncs
/// the floating-point sums.
fn resync_stats(state: &mut ModelState, records: &[TrackletRecord], ctx: &SequenceContext) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.dim());
    let mut n: BTreeMap<usize, usize> = BTreeMap::new();
    let mut n_zc: BTreeMap<usize, usize> = BTreeMap::new();
    let mut sums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut junk = 0usize;
    for (i, r) in records.iter().enumerate() {
        let k = state.z[i];
        if k == JUNK_COMPONENT {
            junk += 1;
            continue;
        }
        *n.entry(k).or_insert(0) += 1;
        if state.c_flags[i] {
            *n_zc.entry(k).or_insert(0) += 1;
        }
        let s = sums.entry(k).or_insert_with(|| vec![0.0; dim]);
        for (acc, y) in s.iter_mut().zip(&r.features) {
            *acc += y;
        }
    }
    if junk != state.junk_n {
        return Err(Error::Invariant(format!(
            "junk count drifted: incremental {} vs recount {junk}",
            state.junk_n
        )));
    }
    for (k, comp) in &mut state.components {
        let expect_n = n.get(k).copied().unwrap_or(0);
        let expect_zc = n_zc.get(k).copied().unwrap_or(0);
        if comp.n != expect_n || comp.n_zc != expect_zc {
            return Err(Error::Invariant(format!(
                "component {k} counts drifted: incremental ({}, {}) vs recount ({expect_n}, {expect_zc})",
                comp.n, comp.n_zc
            )));
        }
        comp.sum_y = sums.remove(k).unwrap_or_else(|| vec![0.0; dim]);
    }
    if let Some(crf) = &mut state.tccrf {
        let mut n_szc: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); crf.n_szc.len()];
        for i in 0..records.len() {
            let k = state.z[i];
            if k != JUNK_COMPONENT && state.c_flags[i] {
                *n_szc[ctx.segment_of[i]].entry(k).or_insert(0) += 1;
            }
        }
        if n_szc != crf.n_szc {
            return Err(Error::Invariant("per-segment counts drifted".into()));
        }
        let mut seg_count: BTreeMap<usize, usize> = BTreeMap::new();
        for seg in &n_szc {
            for k in seg.keys() {
                *seg_count.entry(*k).or_insert(0) += 1;
            }
        }
        if seg_count != crf.seg_count {
            return Err(Error::Invariant("segment-holder counts drifted".into()));
        }
    }
    Ok(())
}

fn init_state<R: Rng>(
    records: &[TrackletRecord],
    ctx: &SequenceContext,
    hyper: &HyperParams,
    mode: Mode,
    rng: &mut R,
) -> ModelState {
    // Generative warm start: every change flag set, labels drawn
    // sequentially from the seating weights times the likelihood.
    let mut state = ModelState::new(records.len());
    if mode == Mode::Tccrf {
        state.tccrf = Some(TcCrfState::new(ctx.n_segments().max(1)));
    }
    let lik = LikCtx::new(hyper);
    for i in 0..records.len() {
        let y = &records[i].features;
        let seg = segment_of(ctx, &state, i);
        let mut options = build_options(&state, i, records, ctx, hyper, &lik, mode, None, true);
        options.retain(|o| o.c);
        let pick = sample_option(&options, rng);
        let (c, cand) = (options[pick].c, options[pick].cand);
        let k = match cand {
            Candidate::Component(k) => k,
            Candidate::New => create_component::<R>(&mut state, y, hyper, None),
        };
        insert_point(&mut state, i, y, seg, k, c);
        // Track the running posterior mean so a single unlucky draw
        // cannot misprice every later member of the component; the
        // first sweep replaces these means with proper samples.
        if k != JUNK_COMPONENT {
            let comp = state.components.get_mut(&k).unwrap();
            let (mean, _) = component_posterior(comp.n, &comp.sum_y, hyper);
            comp.phi = mean;
        }
    }
    state
}

/// Runs the collapsed blocked Gibbs sampler and returns the final state.
pub fn fit(records: &[TrackletRecord], ctx: &SequenceContext, config: &FitConfig) -> Result<FitResult> {
    fit_observed(records, ctx, config, |_, _, _| {})
}

/// [`fit`] with a per-sweep observer `(sweep, state, hyper)`, called after
/// each sweep's component update and garbage collection. An online
/// config runs the single forward pass instead; the observer never fires
/// there.
pub fn fit_observed(
    records: &[TrackletRecord],
    ctx: &SequenceContext,
    config: &FitConfig,
    mut observer: impl FnMut(usize, &ModelState, &HyperParams),
) -> Result<FitResult> {
    check_inputs(records, ctx, config)?;
    if config.online {
        return fit_online(records, ctx, config);
    }
    let mode = config.mode;
    let mut hyper = config.hyper.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut state = init_state(records, ctx, &hyper, mode, &mut rng);

    let mut trace = Vec::with_capacity(config.n_sweeps);
    let mut seconds = Vec::with_capacity(config.n_sweeps);
    for sweep in 0..config.n_sweeps {
        let t0 = Instant::now();
        let lik = LikCtx::new(&hyper);
        for i in 0..records.len() {
            resample_point(&mut state, i, records, ctx, &hyper, &lik, mode, &mut rng)?;
        }
        let keys: Vec<usize> = state.components.keys().copied().collect();
        for k in keys {
            resample_component(&mut state, k, &hyper, &mut rng)?;
        }
        if config.hyper_update_enabled && sweep >= config.burn_in {
            update_hyperparameters(&state, &mut hyper);
        }
        resync_stats(&mut state, records, ctx)?;
        state.garbage_collect();
        trace.push(joint_log_prob(&state, records, ctx, &hyper, mode));
        seconds.push(t0.elapsed().as_secs_f64());
        observer(sweep, &state, &hyper);
    }
    Ok(FitResult { state, log_prob_trace: trace, sweep_seconds: seconds, hyper, mode })
}

/// Single forward pass over the records: per record, draws
/// `online_samples_per_point` blocked samples, keeps the most frequent
/// one (ties toward the lowest component index), and folds the point into
/// the component table with a deterministic posterior-mean update. Past
/// assignments are never revisited.
pub fn fit_online(records: &[TrackletRecord], ctx: &SequenceContext, config: &FitConfig) -> Result<FitResult> {
    check_inputs(records, ctx, config)?;
    for w in records.windows(2) {
        let a = (w[0].start_frame, w[0].end_frame, w[0].id);
        let b = (w[1].start_frame, w[1].end_frame, w[1].id);
        if a >= b {
            return Err(Error::Data(format!(
                "online fit: record id {} arrives out of order",
                w[1].id
            )));
        }
    }
    let t0 = Instant::now();
    let mode = config.mode;
    let hyper = config.hyper.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut state = ModelState::new(records.len());
    if mode == Mode::Tccrf {
        state.tccrf = Some(TcCrfState::new(ctx.n_segments().max(1)));
    }
    let lik = LikCtx::new(&hyper);

    for i in 0..records.len() {
        let y = &records[i].features;
        let seg = segment_of(ctx, &state, i);
        let options = build_options(&state, i, records, ctx, &hyper, &lik, mode, None, true);
        if options.is_empty() {
            return Err(Error::Invariant(format!("no admissible option for tracklet {i}")));
        }
        let mut tally: BTreeMap<(Candidate, bool), usize> = BTreeMap::new();
        for _ in 0..config.online_samples_per_point {
            let pick = &options[sample_option(&options, &mut rng)];
            *tally.entry((pick.cand, pick.c)).or_insert(0) += 1;
        }
        let ((cand, c), _) = tally
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(k, v)| (*k, *v))
            .expect("at least one draw");
        let k = match cand {
            Candidate::Component(k) => k,
            Candidate::New => create_component::<ChaCha20Rng>(&mut state, y, &hyper, None),
        };
        insert_point(&mut state, i, y, seg, k, c);
        if k != JUNK_COMPONENT {
            let comp = state.components.get_mut(&k).unwrap();
            let (mean, _) = component_posterior(comp.n, &comp.sum_y, &hyper);
            comp.phi = mean;
        }
    }
    let trace = vec![joint_log_prob(&state, records, ctx, &hyper, mode)];
    Ok(FitResult {
        state,
        log_prob_trace: trace,
        sweep_seconds: vec![t0.elapsed().as_secs_f64()],
        hyper,
        mode,
    })
}

// ---------------------------------------------------------------------------
// Scoring and validation
// ---------------------------------------------------------------------------

/// Joint log probability of `(C, Z, phi, Y)` under the generative
/// process, evaluated sequentially term by term.
pub fn joint_log_prob(
    state: &ModelState,
    records: &[TrackletRecord],
    ctx: &SequenceContext,
    hyper: &HyperParams,
    mode: Mode,
) -> f64 {
    let mut lp = 0.0;
    match mode {
        Mode::CrpBaseline => {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            let mut total = 0usize;
            for (i, r) in records.iter().enumerate() {
                let k = state.z[i];
                let n = counts.get(&k).copied().unwrap_or(0);
                let w = if n > 0 { n as f64 } else { hyper.alpha };
                lp += w.ln() - (total as f64 + hyper.alpha).ln();
                lp += log_gaussian_raw(&r.features, &state.components[&k].phi, &hyper.sigma1);
                *counts.entry(k).or_insert(0) += 1;
                total += 1;
            }
        }
        Mode::Tccrp | Mode::Tccrf => {
            let crf = mode == Mode::Tccrf;
            let mut n_zc: BTreeMap<usize, usize> = BTreeMap::new();
            let mut n_szc: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            let mut seg_count: BTreeMap<usize, usize> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                let k = state.z[i];
                let seg = ctx.segment_of[i];
                let boundary = crf
                    && ctx.prev[i].is_none_or(|p| ctx.segment_of[p] != seg);
                let kappa = if crf && boundary {
                    None
                } else {
                    hyper.change_prob(ctx.prev_distance[i], ctx.prev[i].is_some())
                };
                if state.c_flags[i] {
                    if let Some(kp) = kappa {
                        lp += kp.ln();
                    }
                    // seating weight of the realized label given the prefix
                    let masked: BTreeSet<usize> = ctx.conflict_sets[i]
                        .iter()
                        .filter(|&&j| j < i)
                        .map(|&j| state.z[j])
                        .filter(|&z| z != JUNK_COMPONENT)
                        .collect();
                    let mut total = hyper.beta;
                    let mut w_k = if k == JUNK_COMPONENT { hyper.beta } else { 0.0 };
                    if crf {
                        let mut in_other: BTreeSet<usize> = BTreeSet::new();
                        for (kk, sc) in &seg_count {
                            if masked.contains(kk) {
                                continue;
                            }
                            let here = n_szc.get(&(seg, *kk)).copied().unwrap_or(0);
                            let w = if here > 0 { here as f64 } else { hyper.alpha * *sc as f64 };
                            total += w;
                            if *kk == k {
                                w_k = w;
                            }
                            in_other.insert(*kk);
                        }
                        let fresh = hyper.alpha * hyper.gamma;
                        total += fresh;
                        if k != JUNK_COMPONENT && !in_other.contains(&k) {
                            w_k = fresh;
                        }
                    } else {
                        for (kk, n) in &n_zc {
                            if masked.contains(kk) {
                                continue;
                            }
                            total += *n as f64;
                            if *kk == k {
                                w_k = *n as f64;
                            }
                        }
                        total += hyper.alpha;
                        if k != JUNK_COMPONENT && n_zc.get(&k).copied().unwrap_or(0) == 0 {
                            w_k = hyper.alpha;
                        }
                    }
                    lp += w_k.ln() - total.ln();
                } else if let Some(kp) = kappa {
                    lp += (1.0 - kp).ln();
                }
                lp += match k {
                    JUNK_COMPONENT => log_junk(&r.features, hyper),
                    k => log_gaussian_raw(&r.features, &state.components[&k].phi, &hyper.sigma1),
                };
                if state.c_flags[i] && k != JUNK_COMPONENT {
                    *n_zc.entry(k).or_insert(0) += 1;
                    let slot = n_szc.entry((seg, k)).or_insert(0);
                    *slot += 1;
                    if *slot == 1 {
                        *seg_count.entry(k).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    for comp in state.components.values() {
        if comp.n > 0 {
            lp += log_gaussian_raw(&comp.phi, &hyper.mu, &hyper.sigma0);
        }
    }
    lp
}

/// Checks every structural invariant of a sampled state. Used by tests
/// and by the acceptance suite's per-sweep observers.
pub fn validate_state(
    state: &ModelState,
    records: &[TrackletRecord],
    ctx: &SequenceContext,
    mode: Mode,
) -> Result<()> {
    let n = records.len();
    if state.len() != n {
        return Err(Error::Invariant("state length differs from dataset".into()));
    }
    let total: usize = state.components.values().map(|c| c.n).sum::<usize>() + state.junk_n;
    if total != n {
        return Err(Error::Invariant(format!("counts sum to {total}, expected {n}")));
    }
    for (k, comp) in &state.components {
        if comp.n_zc > comp.n {
            return Err(Error::Invariant(format!("component {k} has n_zc > n")));
        }
    }
    let mut clone = state.clone();
    resync_stats(&mut clone, records, ctx)?;
    if mode == Mode::CrpBaseline {
        return Ok(());
    }
    for i in 0..n {
        let k = state.z[i];
        if k != JUNK_COMPONENT {
            for &j in &ctx.conflict_sets[i] {
                if state.z[j] == k {
                    return Err(Error::Invariant(format!(
                        "tracklets {i} and {j} conflict but share component {k}"
                    )));
                }
            }
        }
        if !state.c_flags[i] {
            let p = ctx.prev[i].ok_or_else(|| {
                Error::Invariant(format!("tracklet {i} keeps its label but has no predecessor"))
            })?;
            if state.z[p] != k {
                return Err(Error::Invariant(format!(
                    "tracklet {i} keeps its label but differs from its predecessor"
                )));
            }
            if mode == Mode::Tccrf && ctx.segment_of[p] != ctx.segment_of[i] {
                return Err(Error::Invariant(format!(
                    "tracklet {i} copies across a segment boundary"
                )));
            }
        }
        if mode == Mode::Tccrf && k != JUNK_COMPONENT {
            let crf = state
                .tccrf
                .as_ref()
                .ok_or_else(|| Error::Invariant("franchise mode without franchise table".into()))?;
            if !crf.n_szc[ctx.segment_of[i]].contains_key(&k) {
                return Err(Error::Invariant(format!(
                    "tracklet {i} holds component {k}, inactive in its segment"
                )));
            }
        }
    }
    Ok(())
}
