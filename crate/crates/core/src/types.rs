//! Core domain types: tracklets, the derived sequence structure, model
//! hyperparameters and the mutable sampler state.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Reserved ground-truth label marking a false (non-entity) tracklet.
pub const JUNK_LABEL: &str = "junk";

/// Component index reserved for the junk sink.
pub const JUNK_COMPONENT: usize = 0;

/// One observed tracklet: the mean feature vector of a short run of
/// detections plus its frame span.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletRecord {
    pub id: usize,
    /// Feature vector (dimension `d`, identical across a dataset).
    pub features: Vec<f64>,
    pub start_frame: u32,
    pub end_frame: u32,
    /// Bounding-box center in pixels, when known.
    pub spatial_center: Option<(f64, f64)>,
    /// Ground-truth entity name, or [`JUNK_LABEL`] for false tracklets.
    pub truth_label: Option<String>,
}

impl TrackletRecord {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// True when the record carries no entity label (unlabeled or junk).
    pub fn is_junk_truth(&self) -> bool {
        self.truth_label.as_deref().is_none_or(|l| l == JUNK_LABEL)
    }
}

/// Validates ordering, id uniqueness and a consistent feature dimension.
pub fn validate_records(records: &[TrackletRecord]) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let dim = records[0].dim();
    let mut seen = std::collections::BTreeSet::new();
    for (pos, r) in records.iter().enumerate() {
        if r.dim() != dim {
            return Err(Error::Data(format!(
                "record id {} has dimension {} but the dataset dimension is {}",
                r.id,
                r.dim(),
                dim
            )));
        }
        if r.start_frame > r.end_frame {
            return Err(Error::Data(format!(
                "record id {} has start_frame {} > end_frame {}",
                r.id, r.start_frame, r.end_frame
            )));
        }
        if !seen.insert(r.id) {
            return Err(Error::Data(format!("duplicate record id {}", r.id)));
        }
        if pos > 0 {
            let p = &records[pos - 1];
            let prev_key = (p.start_frame, p.end_frame, p.id);
            let key = (r.start_frame, r.end_frame, r.id);
            if prev_key >= key {
                return Err(Error::Data(format!(
                    "records out of order: id {} must sort after id {} by (start, end, id)",
                    r.id, p.id
                )));
            }
        }
    }
    Ok(())
}

/// Derived temporal structure over a dataset: predecessor/successor links,
/// frame-overlap conflict sets, changepoints and segment indices.
#[derive(Debug, Clone, Default)]
pub struct SequenceContext {
    /// Latest earlier-ending tracklet, when one exists.
    pub prev: Vec<Option<usize>>,
    /// First successor whose predecessor is this tracklet.
    pub next: Vec<Option<usize>>,
    /// Indices of tracklets whose frame spans intersect this one's.
    pub conflict_sets: Vec<Vec<usize>>,
    /// Indices at which a new temporal segment starts.
    pub changepoints: Vec<usize>,
    /// Segment index per tracklet; non-decreasing.
    pub segment_of: Vec<usize>,
    /// Spatio-temporal distance to the predecessor; infinite when absent.
    pub prev_distance: Vec<f64>,
    /// All successors whose predecessor is this tracklet (inverse of `prev`).
    pub children: Vec<Vec<usize>>,
}

impl SequenceContext {
    pub fn len(&self) -> usize {
        self.prev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prev.is_empty()
    }

    pub fn n_segments(&self) -> usize {
        self.segment_of.last().map_or(0, |s| s + 1)
    }
}

/// All model constants. `sigma0` and `sigma1` are diagonal covariances
/// stored as per-dimension variance vectors; the junk covariance is
/// `c * sigma1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Base mean of the component prior.
    pub mu: Vec<f64>,
    /// Component prior variance (diagonal).
    pub sigma0: Vec<f64>,
    /// Emission variance around a component mean (diagonal).
    pub sigma1: Vec<f64>,
    /// Junk variance multiplier, > 1.
    pub c: f64,
    /// Concentration of the seating process.
    pub alpha: f64,
    /// Junk-component weight.
    pub beta: f64,
    /// Segment-level innovation mass.
    pub gamma: f64,
    /// Change probability for close predecessors.
    pub kappa1: f64,
    /// Change probability for far predecessors.
    pub kappa2: f64,
    /// Predecessor-distance threshold separating close from far.
    pub thres: f64,
    /// Start-frame gap that opens a new temporal segment.
    pub segment_gap: u32,
    /// Weight of the pixel displacement in the predecessor distance.
    pub pixel_weight: f64,
    /// Minimum cluster size considered in evaluation.
    pub min_cluster_size: usize,
    /// Majority fraction that makes a cluster pure (inclusive).
    pub purity_threshold: f64,
    /// Minimum frame count of a significant temporal segment.
    pub min_segment_frames: u32,
}

impl HyperParams {
    /// Isotropic defaults for feature dimension `dim`.
    pub fn isotropic(dim: usize) -> Self {
        HyperParams {
            mu: vec![0.0; dim],
            sigma0: vec![100.0; dim],
            sigma1: vec![1.0; dim],
            c: 5.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            kappa1: 0.001,
            kappa2: 0.1,
            thres: 20.0,
            segment_gap: 100,
            pixel_weight: 0.1,
            min_cluster_size: 10,
            purity_threshold: 0.7,
            min_segment_frames: 100,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Junk variance vector `c * sigma1`.
    pub fn sigma2(&self) -> Vec<f64> {
        self.sigma1.iter().map(|v| self.c * v).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mu.len();
        if d == 0 {
            return Err(Error::Config("hyper: dimension must be at least 1".into()));
        }
        if self.sigma0.len() != d || self.sigma1.len() != d {
            return Err(Error::Config(format!(
                "hyper: mu, sigma0, sigma1 must share one dimension (got {}, {}, {})",
                d,
                self.sigma0.len(),
                self.sigma1.len()
            )));
        }
        for (name, v) in [("sigma0", &self.sigma0), ("sigma1", &self.sigma1)] {
            if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!(
                    "hyper: every element of {name} must be strictly positive and finite"
                )));
            }
        }
        if !(self.c > 1.0) {
            return Err(Error::Config("hyper: c must be greater than 1".into()));
        }
        for (name, x) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("thres", self.thres),
        ] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::Config(format!("hyper: {name} must be strictly positive")));
            }
        }
        for (name, x) in [("kappa1", self.kappa1), ("kappa2", self.kappa2)] {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::Config(format!("hyper: {name} must lie in (0, 1)")));
            }
        }
        if self.kappa1 > self.kappa2 {
            return Err(Error::Config(
                "hyper: kappa1 must not exceed kappa2 (close predecessors change less)".into(),
            ));
        }
        if self.segment_gap == 0 {
            return Err(Error::Config("hyper: segment_gap must be positive".into()));
        }
        if !(self.pixel_weight >= 0.0) {
            return Err(Error::Config("hyper: pixel_weight must be non-negative".into()));
        }
        if !(self.purity_threshold > 0.0 && self.purity_threshold <= 1.0) {
            return Err(Error::Config("hyper: purity_threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Change probability for tracklet `i` given its predecessor distance,
    /// or `None` when the change is forced (no predecessor).
    pub fn change_prob(&self, prev_distance: f64, has_prev: bool) -> Option<f64> {
        if !has_prev {
            None
        } else if prev_distance <= self.thres {
            Some(self.kappa1)
        } else {
            Some(self.kappa2)
        }
    }
}

/// Per-component sufficient statistics and the sampled mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Current component mean ("atom").
    pub phi: Vec<f64>,
    /// Number of assigned tracklets.
    pub n: usize,
    /// Running sum of assigned feature vectors.
    pub sum_y: Vec<f64>,
    /// Number of assigned tracklets with the change flag set.
    pub n_zc: usize,
}

/// Segment-activation bookkeeping for the franchise model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TcCrfState {
    /// Per segment: component -> count of change-flagged assignments.
    pub n_szc: Vec<BTreeMap<usize, usize>>,
    /// Component -> number of segments currently holding it.
    pub seg_count: BTreeMap<usize, usize>,
}

impl TcCrfState {
    pub fn new(n_segments: usize) -> Self {
        TcCrfState { n_szc: vec![BTreeMap::new(); n_segments], seg_count: BTreeMap::new() }
    }

    /// Components active in segment `s`.
    pub fn active_in(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.n_szc[s].keys().copied()
    }
}

/// Assignments, change flags and the component table of one model state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Component index per tracklet; 0 is the junk sink.
    pub z: Vec<usize>,
    /// Change flag per tracklet.
    pub c_flags: Vec<bool>,
    /// Number of tracklets assigned to the junk sink.
    pub junk_n: usize,
    /// Live entity components keyed by index (>= 1).
    pub components: BTreeMap<usize, Component>,
    /// Next component index to hand out; indices are never reused.
    pub next_label: usize,
    /// Present only in franchise mode.
    pub tccrf: Option<TcCrfState>,
}

impl ModelState {
    pub fn new(n: usize) -> Self {
        ModelState {
            z: vec![JUNK_COMPONENT; n],
            c_flags: vec![false; n],
            junk_n: 0,
            components: BTreeMap::new(),
            next_label: 1,
            tccrf: None,
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Number of live entity components.
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Component means keyed by index, for export.
    pub fn atoms(&self) -> Vec<(usize, Vec<f64>)> {
        self.components.iter().map(|(k, c)| (*k, c.phi.clone())).collect()
    }

    /// Drops components with no assigned tracklets.
    pub fn garbage_collect(&mut self) {
        self.components.retain(|_, c| c.n > 0);
    }
}

/// A finite distribution over component indices plus a fresh-component
/// option, as produced by the predictive probability functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Candidate {
    /// An existing component; index 0 is the junk sink.
    Component(usize),
    /// A brand-new component.
    New,
}

/// Weighted candidate set. Weights are finite and non-negative with at
/// least one strictly positive entry; `normalized` makes them sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub entries: Vec<(Candidate, f64)>,
}

impl Categorical {
    pub fn new(entries: Vec<(Candidate, f64)>) -> Result<Self> {
        let mut positive = false;
        for (_, w) in &entries {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Contract(format!("categorical weight {w} is not usable")));
            }
            positive |= *w > 0.0;
        }
        if !positive {
            return Err(Error::Contract("categorical has no positive weight".into()));
        }
        Ok(Categorical { entries })
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }

    /// Rescales the weights to sum to one.
    pub fn normalized(mut self) -> Self {
        let total = self.total();
        for (_, w) in &mut self.entries {
            *w /= total;
        }
        self
    }

    pub fn weight_of(&self, cand: Candidate) -> Option<f64> {
        self.entries.iter().find(|(c, _)| *c == cand).map(|(_, w)| *w)
    }

    /// Draws one candidate proportionally to the weights.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Candidate {
        let total = self.total();
        let mut u = rng.random::<f64>() * total;
        for (c, w) in &self.entries {
            u -= w;
            if u <= 0.0 {
                return *c;
            }
        }
        // Floating-point slack: fall back to the last positive entry.
        self.entries
            .iter()
            .rev()
            .find(|(_, w)| *w > 0.0)
            .map(|(c, _)| *c)
            .expect("categorical has a positive weight")
    }
}
