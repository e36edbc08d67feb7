//! Forward samplers for the coherent seating models. They double as
//! synthetic-dataset generators with ground truth: the returned state
//! holds the realized assignments, change flags and component means.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::dataset::{build_context, quantize, Dataset};
use crate::error::{Error, Result};
use crate::model::tccrp_predictive;
use crate::types::{
    Candidate, HyperParams, ModelState, SequenceContext, TcCrfState, TrackletRecord,
    JUNK_COMPONENT, JUNK_LABEL,
};

/// Layout and size of a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthesisPlan {
    pub n_tracklets: usize,
    pub dim: usize,
    pub seed: u64,
    /// Tracklet length `R` in frames.
    pub tracklet_len: u32,
    /// Shortest chain of consecutive tracklets.
    pub min_chain_len: usize,
    /// Mean chain length (geometric beyond the minimum).
    pub mean_chain_len: f64,
    /// Fraction of in-chain tracklets that overlap their predecessor's
    /// span, injecting conflicts.
    pub overlap_rate: f64,
    /// First tracklet index eligible for overlap injection.
    pub overlap_start: usize,
    /// Number of temporal segments carved by large frame gaps.
    pub n_segments: usize,
    /// When set, the seating process stops opening components at this
    /// count (benchmark construction).
    pub max_components: Option<usize>,
}

impl SynthesisPlan {
    pub fn new(n_tracklets: usize, dim: usize, seed: u64) -> Self {
        SynthesisPlan {
            n_tracklets,
            dim,
            seed,
            tracklet_len: 10,
            min_chain_len: 3,
            mean_chain_len: 15.0,
            overlap_rate: 0.05,
            overlap_start: 0,
            n_segments: 1,
            max_components: None,
        }
    }

    pub fn validate(&self, hyper: &HyperParams) -> Result<()> {
        if self.n_tracklets == 0 {
            return Err(Error::Config("plan: n_tracklets must be at least 1".into()));
        }
        if self.dim == 0 || self.dim != hyper.dim() {
            return Err(Error::Config(format!(
                "plan: dim {} must match hyper dim {}",
                self.dim,
                hyper.dim()
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap_rate) {
            return Err(Error::Config("plan: overlap_rate must lie in [0, 1]".into()));
        }
        if self.tracklet_len == 0 {
            return Err(Error::Config("plan: tracklet_len must be at least 1".into()));
        }
        if self.min_chain_len == 0 || self.mean_chain_len < self.min_chain_len as f64 {
            return Err(Error::Config(
                "plan: need 1 <= min_chain_len <= mean_chain_len".into(),
            ));
        }
        if self.n_segments == 0 || self.n_segments > self.n_tracklets {
            return Err(Error::Config(
                "plan: n_segments must lie in [1, n_tracklets]".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Frame layout
// ---------------------------------------------------------------------------

fn draw_chain_len<R: Rng>(plan: &SynthesisPlan, rng: &mut R) -> usize {
    let extra_mean = plan.mean_chain_len - plan.min_chain_len as f64;
    if extra_mean <= 0.0 {
        return plan.min_chain_len;
    }
    let p = 1.0 / (extra_mean + 1.0);
    let mut extra = 0usize;
    let cap = (plan.mean_chain_len * 20.0) as usize + 1;
    while extra < cap && rng.random::<f64>() >= p {
        extra += 1;
    }
    plan.min_chain_len + extra
}

/// Frame spans for the plan: chains of consecutive tracklets separated by
/// medium gaps (beyond `thres`, below a changepoint) and segment
/// boundaries separated by gaps beyond `segment_gap`. A fraction of
/// in-chain tracklets overlaps its predecessor's span.
fn gen_layout<R: Rng>(plan: &SynthesisPlan, hyper: &HyperParams, rng: &mut R) -> Vec<(u32, u32)> {
    let n = plan.n_tracklets;
    let r = plan.tracklet_len;
    let seg_starts: BTreeSet<usize> =
        (1..plan.n_segments).map(|j| j * n / plan.n_segments).collect();

    // In-chain gaps are 1 frame; chain breaks stay strictly between the
    // closeness threshold and the changepoint gap.
    let break_lo = hyper.thres.floor() as u32 + 2;
    let break_hi = (hyper.segment_gap.saturating_sub(r).saturating_add(1)).max(break_lo);

    let mut spans = Vec::with_capacity(n);
    let mut chain_left = 0usize;
    for i in 0..n {
        let start = if i == 0 {
            chain_left = draw_chain_len(plan, rng);
            0
        } else {
            let (ps, pe) = spans[i - 1];
            if seg_starts.contains(&i) {
                chain_left = draw_chain_len(plan, rng);
                pe + hyper.segment_gap + 2 + rng.random_range(0..50)
            } else if chain_left == 0 {
                chain_left = draw_chain_len(plan, rng);
                pe + break_lo + rng.random_range(0..=(break_hi - break_lo))
            } else if i >= plan.overlap_start && rng.random::<f64>() < plan.overlap_rate {
                ps + r / 2 + 1
            } else {
                pe + 1
            }
        };
        chain_left = chain_left.saturating_sub(1);
        spans.push((start, start + r - 1));
    }
    spans
}

fn skeleton_records(plan: &SynthesisPlan, spans: &[(u32, u32)]) -> Vec<TrackletRecord> {
    spans
        .iter()
        .enumerate()
        .map(|(i, (s, e))| TrackletRecord {
            id: i,
            features: vec![0.0; plan.dim],
            start_frame: *s,
            end_frame: *e,
            spatial_center: None,
            truth_label: None,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Shared drawing helpers
// ---------------------------------------------------------------------------

fn draw_prior_phi<R: Rng>(hyper: &HyperParams, rng: &mut R) -> Vec<f64> {
    hyper
        .mu
        .iter()
        .zip(&hyper.sigma0)
        .map(|(m, v)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + v.sqrt() * eps
        })
        .collect()
}

fn emit<R: Rng>(state: &ModelState, k: usize, hyper: &HyperParams, rng: &mut R) -> Vec<f64> {
    let d = hyper.dim();
    let mut y = Vec::with_capacity(d);
    for j in 0..d {
        let eps: f64 = rng.sample(StandardNormal);
        let (mean, var) = if k == JUNK_COMPONENT {
            (hyper.mu[j], hyper.c * hyper.sigma1[j])
        } else {
            (state.components[&k].phi[j], hyper.sigma1[j])
        };
        y.push(quantize(mean + var.sqrt() * eps));
    }
    y
}

fn past_conflicts(state: &ModelState, ctx: &SequenceContext, i: usize) -> BTreeSet<usize> {
    ctx.conflict_sets[i]
        .iter()
        .filter(|&&j| j < i)
        .map(|&j| state.z[j])
        .filter(|&z| z != JUNK_COMPONENT)
        .collect()
}

fn commit(state: &mut ModelState, i: usize, y: &[f64], seg: Option<usize>, k: usize, c: bool) {
    state.z[i] = k;
    state.c_flags[i] = c;
    if k == JUNK_COMPONENT {
        state.junk_n += 1;
        return;
    }
    let comp = state.components.get_mut(&k).unwrap();
    comp.n += 1;
    for (s, v) in comp.sum_y.iter_mut().zip(y) {
        *s += v;
    }
    if c {
        comp.n_zc += 1;
        if let (Some(s), Some(crf)) = (seg, state.tccrf.as_mut()) {
            let slot = crf.n_szc[s].entry(k).or_insert(0);
            *slot += 1;
            if *slot == 1 {
                *crf.seg_count.entry(k).or_insert(0) += 1;
            }
        }
    }
}

fn new_component<R: Rng>(state: &mut ModelState, hyper: &HyperParams, rng: &mut R) -> usize {
    let k = state.next_label;
    state.next_label += 1;
    let phi = draw_prior_phi(hyper, rng);
    state.components.insert(
        k,
        crate::types::Component { phi, n: 0, sum_y: vec![0.0; hyper.dim()], n_zc: 0 },
    );
    k
}

fn finish(
    plan: &SynthesisPlan,
    mut records: Vec<TrackletRecord>,
    ctx: SequenceContext,
    state: ModelState,
) -> Result<(Dataset, SequenceContext, ModelState)> {
    for (i, r) in records.iter_mut().enumerate() {
        r.truth_label = Some(if state.z[i] == JUNK_COMPONENT {
            JUNK_LABEL.to_string()
        } else {
            format!("e{:03}", state.z[i])
        });
    }
    let dataset = Dataset::from_records(records, plan.tracklet_len)?;
    Ok((dataset, ctx, state))
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Forward sampler of the coherent seating process: change flags from the
/// distance-dependent Bernoulli, labels copied or drawn from the
/// predictive, component means from the prior, emissions Gaussian.
/// A copy that would collide with an overlapping tracklet forces a
/// change-flagged redraw instead.
pub fn generate_tccrp(
    plan: &SynthesisPlan,
    hyper: &HyperParams,
) -> Result<(Dataset, SequenceContext, ModelState)> {
    plan.validate(hyper)?;
    hyper.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(plan.seed);
    let mut records = skeleton_records(plan, &gen_layout(plan, hyper, &mut rng));
    let ctx = build_context(&records, hyper)?;
    let mut state = ModelState::new(plan.n_tracklets);

    for i in 0..plan.n_tracklets {
        let kappa = hyper.change_prob(ctx.prev_distance[i], ctx.prev[i].is_some());
        let mut c = match kappa {
            None => true,
            Some(k) => rng.random::<f64>() < k,
        };
        let conflicts = past_conflicts(&state, &ctx, i);
        if !c {
            let zp = state.z[ctx.prev[i].unwrap()];
            if zp != JUNK_COMPONENT && conflicts.contains(&zp) {
                c = true; // conflict repair: the copy would collide
            }
        }
        let k = if c {
            let mut cat = tccrp_predictive(&state, &conflicts, hyper)?;
            if plan.max_components.is_some_and(|m| state.n_components() >= m) {
                for (cand, w) in &mut cat.entries {
                    if *cand == Candidate::New {
                        *w = 0.0;
                    }
                }
            }
            match cat.sample(&mut rng) {
                Candidate::Component(k) => k,
                Candidate::New => new_component(&mut state, hyper, &mut rng),
            }
        } else {
            state.z[ctx.prev[i].unwrap()]
        };
        let y = emit(&state, k, hyper, &mut rng);
        records[i].features = y.clone();
        commit(&mut state, i, &y, None, k, c);
    }
    finish(plan, records, ctx, state)
}

/// One sampled activation row of the buffet prior: previously held
/// components activate independently with probability `seg_count / s`
/// (`s` = number of prior segments); `fresh` brand-new dishes arrive
/// Poisson-distributed with rate `gamma / max(s, 1)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IbpRow {
    pub existing: BTreeSet<usize>,
    pub fresh: usize,
}

pub fn sample_ibp_row<R: Rng>(
    prior_rows: &[BTreeSet<usize>],
    seg_count: &BTreeMap<usize, usize>,
    gamma: f64,
    rng: &mut R,
) -> Result<IbpRow> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Contract(format!("sample_ibp_row: gamma {gamma} must be non-negative")));
    }
    let s = prior_rows.len();
    let mut existing = BTreeSet::new();
    for (k, m) in seg_count {
        let p = (*m as f64 / s.max(1) as f64).min(1.0);
        if rng.random::<f64>() < p {
            existing.insert(*k);
        }
    }
    let rate = gamma / s.max(1) as f64;
    let fresh = if rate > 0.0 {
        Poisson::new(rate)
            .map_err(|e| Error::Contract(format!("sample_ibp_row: bad rate: {e}")))?
            .sample(rng) as usize
    } else {
        0
    };
    Ok(IbpRow { existing, fresh })
}

/// Forward sampler of the segment-aware franchise process. Each segment
/// draws an activation row from the buffet prior; labels are drawn from
/// the franchise predictive restricted to that row, with the fresh-dish
/// option carrying mass `alpha` while the row's dish budget lasts.
/// Crossing a segment boundary forces a change flag.
pub fn generate_tccrf(
    plan: &SynthesisPlan,
    hyper: &HyperParams,
) -> Result<(Dataset, SequenceContext, ModelState)> {
    plan.validate(hyper)?;
    hyper.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(plan.seed);
    let mut records = skeleton_records(plan, &gen_layout(plan, hyper, &mut rng));
    let ctx = build_context(&records, hyper)?;
    let n_segments = ctx.n_segments().max(1);
    let mut state = ModelState::new(plan.n_tracklets);
    state.tccrf = Some(TcCrfState::new(n_segments));

    let mut rows: Vec<BTreeSet<usize>> = Vec::new();
    let mut active: BTreeSet<usize> = BTreeSet::new();
    let mut fresh_budget = 0usize;

    for i in 0..plan.n_tracklets {
        let seg = ctx.segment_of[i];
        if seg == rows.len() {
            let seg_count = state.tccrf.as_ref().unwrap().seg_count.clone();
            let row = sample_ibp_row(&rows, &seg_count, hyper.gamma, &mut rng)?;
            active = row.existing.clone();
            fresh_budget = row.fresh;
            rows.push(row.existing);
        }
        let boundary = ctx.prev[i].is_none_or(|p| ctx.segment_of[p] != seg);
        let kappa = if boundary {
            None
        } else {
            hyper.change_prob(ctx.prev_distance[i], ctx.prev[i].is_some())
        };
        let mut c = match kappa {
            None => true,
            Some(k) => rng.random::<f64>() < k,
        };
        let conflicts = past_conflicts(&state, &ctx, i);
        if !c {
            let zp = state.z[ctx.prev[i].unwrap()];
            if zp != JUNK_COMPONENT && conflicts.contains(&zp) {
                c = true;
            }
        }
        let k = if c {
            let crf = state.tccrf.as_ref().unwrap();
            let mut cat = crate::model::tccrf_predictive(&state, seg, &conflicts, hyper)?;
            for (cand, w) in &mut cat.entries {
                match cand {
                    Candidate::Component(k) if *k != JUNK_COMPONENT => {
                        let in_segment = crf.n_szc[seg].contains_key(k);
                        if !in_segment && !active.contains(k) {
                            *w = 0.0;
                        }
                    }
                    Candidate::New => {
                        let capped = plan
                            .max_components
                            .is_some_and(|m| state.n_components() >= m);
                        *w = if fresh_budget > 0 && !capped { hyper.alpha } else { 0.0 };
                    }
                    _ => {}
                }
            }
            match cat.sample(&mut rng) {
                Candidate::Component(k) => k,
                Candidate::New => {
                    fresh_budget -= 1;
                    new_component(&mut state, hyper, &mut rng)
                }
            }
        } else {
            state.z[ctx.prev[i].unwrap()]
        };
        let y = emit(&state, k, hyper, &mut rng);
        records[i].features = y.clone();
        commit(&mut state, i, &y, Some(seg), k, c);
    }
    finish(plan, records, ctx, state)
}
