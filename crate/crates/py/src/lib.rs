//! Python bindings: datasets, the forward samplers, offline and online
//! inference, and the evaluation report, mirroring the `tcclust` CLI.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use tcclust::dataset::{aggregate_detections, build_context, read_dataset, write_dataset, Detection};
use tcclust::error::Error;
use tcclust::evaluation::{evaluate as eval_report, EvalReport};
use tcclust::inference::{fit as fit_rs, fit_online, FitConfig, FitResult, Mode};
use tcclust::model;
use tcclust::synthesis::{generate_tccrf, generate_tccrp, SynthesisPlan};
use tcclust::types::{Candidate, HyperParams};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(to_py_err)
}

#[allow(clippy::too_many_arguments)]
fn hyper_with(
    dim: usize,
    mu: Option<f64>,
    sigma0: Option<f64>,
    sigma1: Option<f64>,
    c: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    kappa1: Option<f64>,
    kappa2: Option<f64>,
    thres: Option<f64>,
) -> PyResult<HyperParams> {
    let mut h = HyperParams::isotropic(dim);
    if let Some(v) = mu {
        h.mu = vec![v; dim];
    }
    if let Some(v) = sigma0 {
        h.sigma0 = vec![v; dim];
    }
    if let Some(v) = sigma1 {
        h.sigma1 = vec![v; dim];
    }
    if let Some(v) = c {
        h.c = v;
    }
    if let Some(v) = alpha {
        h.alpha = v;
    }
    if let Some(v) = beta {
        h.beta = v;
    }
    if let Some(v) = gamma {
        h.gamma = v;
    }
    if let Some(v) = kappa1 {
        h.kappa1 = v;
    }
    if let Some(v) = kappa2 {
        h.kappa2 = v;
    }
    if let Some(v) = thres {
        h.thres = v;
    }
    h.validate().map_err(to_py_err)?;
    Ok(h)
}

/// An in-memory tracklet dataset.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: tcclust::dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn frames(&self) -> u32 {
        self.inner.frames
    }

    /// Ground-truth labels per tracklet (None when unlabeled).
    fn labels(&self) -> Vec<Option<String>> {
        self.inner.records.iter().map(|r| r.truth_label.clone()).collect()
    }

    fn features(&self, i: usize) -> PyResult<Vec<f64>> {
        self.inner
            .records
            .get(i)
            .map(|r| r.features.clone())
            .ok_or_else(|| PyValueError::new_err(format!("tracklet {i} out of range")))
    }

    /// (start_frame, end_frame) per tracklet.
    fn spans(&self) -> Vec<(u32, u32)> {
        self.inner.records.iter().map(|r| (r.start_frame, r.end_frame)).collect()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_dataset(&self.inner, path).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset { inner: read_dataset(path).map_err(to_py_err)? })
    }
}

/// Assignments, change flags, atoms and the log-probability trace of one
/// sampler run.
#[pyclass(name = "FitOutcome")]
struct PyFitOutcome {
    z: Vec<usize>,
    c_flags: Vec<bool>,
    atoms: BTreeMap<usize, Vec<f64>>,
    trace: Vec<f64>,
    mode: String,
}

impl PyFitOutcome {
    fn from_result(result: &FitResult) -> Self {
        PyFitOutcome {
            z: result.state.z.clone(),
            c_flags: result.state.c_flags.clone(),
            atoms: result.state.atoms().into_iter().collect(),
            trace: result.log_prob_trace.clone(),
            mode: result.mode.to_string(),
        }
    }
}

#[pymethods]
impl PyFitOutcome {
    /// Component index per tracklet; 0 is the junk sink.
    fn z(&self) -> Vec<usize> {
        self.z.clone()
    }

    fn c_flags(&self) -> Vec<bool> {
        self.c_flags.clone()
    }

    /// Component means keyed by component index.
    fn atoms(&self) -> BTreeMap<usize, Vec<f64>> {
        self.atoms.clone()
    }

    /// Joint log probability per sweep (one entry for an online pass).
    fn trace(&self) -> Vec<f64> {
        self.trace.clone()
    }

    #[getter]
    fn mode(&self) -> String {
        self.mode.clone()
    }

    fn n_components(&self) -> usize {
        self.atoms.len()
    }
}

/// Log-density of a diagonal Gaussian.
#[pyfunction]
fn log_gaussian(y: Vec<f64>, mean: Vec<f64>, var: Vec<f64>) -> PyResult<f64> {
    model::log_gaussian(&y, &mean, &var).map_err(to_py_err)
}

/// Plain seating-process predictive: returns `[(label_or_None, prob)]`
/// with `None` standing for a brand-new component.
#[pyfunction]
fn crp_predictive(counts: BTreeMap<usize, usize>, alpha: f64) -> PyResult<Vec<(Option<usize>, f64)>> {
    let cat = model::crp_predictive(&counts, alpha).map_err(to_py_err)?.normalized();
    Ok(cat
        .entries
        .into_iter()
        .map(|(cand, w)| match cand {
            Candidate::Component(k) => (Some(k), w),
            Candidate::New => (None, w),
        })
        .collect())
}

/// Samples a synthetic dataset with ground truth. Returns
/// `(Dataset, FitOutcome)` where the outcome holds the true assignments.
#[pyfunction]
#[pyo3(signature = (mode="tccrp", n=1000, dim=16, seed=0, segments=1, overlap_rate=0.05,
                    max_components=None, mu=None, sigma0=None, sigma1=None, c=None,
                    alpha=None, beta=None, gamma=None, kappa1=None, kappa2=None, thres=None))]
#[allow(clippy::too_many_arguments)]
fn generate(
    mode: &str,
    n: usize,
    dim: usize,
    seed: u64,
    segments: usize,
    overlap_rate: f64,
    max_components: Option<usize>,
    mu: Option<f64>,
    sigma0: Option<f64>,
    sigma1: Option<f64>,
    c: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    kappa1: Option<f64>,
    kappa2: Option<f64>,
    thres: Option<f64>,
) -> PyResult<(PyDataset, PyFitOutcome)> {
    let mode = parse_mode(mode)?;
    let hyper = hyper_with(dim, mu, sigma0, sigma1, c, alpha, beta, gamma, kappa1, kappa2, thres)?;
    let mut plan = SynthesisPlan::new(n, dim, seed);
    plan.n_segments = segments;
    plan.overlap_rate = overlap_rate;
    plan.max_components = max_components;
    let (dataset, _ctx, truth) = match mode {
        Mode::Tccrp => generate_tccrp(&plan, &hyper).map_err(to_py_err)?,
        Mode::Tccrf => generate_tccrf(&plan, &hyper).map_err(to_py_err)?,
        Mode::CrpBaseline => {
            return Err(PyValueError::new_err("generate: mode must be tccrp or tccrf"));
        }
    };
    let outcome = PyFitOutcome {
        z: truth.z.clone(),
        c_flags: truth.c_flags.clone(),
        atoms: truth.atoms().into_iter().collect(),
        trace: Vec::new(),
        mode: mode.to_string(),
    };
    Ok((PyDataset { inner: dataset }, outcome))
}

/// Runs the sampler (or the single-pass online variant) on a dataset.
#[pyfunction]
#[pyo3(signature = (dataset, mode="tccrp", sweeps=200, burn_in=100, seed=0, online=false,
                    samples_per_point=15, hyper_update=true, mu=None, sigma0=None, sigma1=None,
                    c=None, alpha=None, beta=None, gamma=None, kappa1=None, kappa2=None, thres=None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    dataset: &PyDataset,
    mode: &str,
    sweeps: usize,
    burn_in: usize,
    seed: u64,
    online: bool,
    samples_per_point: usize,
    hyper_update: bool,
    mu: Option<f64>,
    sigma0: Option<f64>,
    sigma1: Option<f64>,
    c: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    kappa1: Option<f64>,
    kappa2: Option<f64>,
    thres: Option<f64>,
) -> PyResult<PyFitOutcome> {
    let mode = parse_mode(mode)?;
    let hyper = hyper_with(
        dataset.inner.dim,
        mu,
        sigma0,
        sigma1,
        c,
        alpha,
        beta,
        gamma,
        kappa1,
        kappa2,
        thres,
    )?;
    let ctx = build_context(&dataset.inner.records, &hyper).map_err(to_py_err)?;
    let mut cfg = FitConfig::new(mode, hyper);
    cfg.n_sweeps = sweeps;
    cfg.burn_in = burn_in;
    cfg.seed = seed;
    cfg.online = online;
    cfg.online_samples_per_point = samples_per_point;
    cfg.hyper_update_enabled = hyper_update;
    let result = if online {
        fit_online(&dataset.inner.records, &ctx, &cfg).map_err(to_py_err)?
    } else {
        fit_rs(&dataset.inner.records, &ctx, &cfg).map_err(to_py_err)?
    };
    Ok(PyFitOutcome::from_result(&result))
}

fn report_to_dict<'py>(py: Python<'py>, report: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("n_tracklets", report.n_tracklets)?;
    d.set_item("n_significant_clusters", report.n_significant_clusters)?;
    d.set_item("purity", report.purity)?;
    d.set_item("entity_coverage", report.entity_coverage)?;
    d.set_item("tracklet_coverage", report.tracklet_coverage)?;
    d.set_item("outlier_precision", report.outlier_precision)?;
    d.set_item("outlier_recall_star", report.outlier_recall_star)?;
    d.set_item("linking_fraction", report.linking_fraction)?;
    d.set_item("linking_fraction_no_singletons", report.linking_fraction_no_singletons)?;
    d.set_item("n_tracks", report.n_tracks)?;
    d.set_item("conciseness", report.conciseness)?;
    d.set_item("representativeness", report.representativeness)?;
    d.set_item("representativeness_x100", report.representativeness_x100)?;
    let clusters = PyList::empty(py);
    for c in &report.significant_clusters {
        let cd = PyDict::new(py);
        cd.set_item("k", c.k)?;
        cd.set_item("size", c.size)?;
        cd.set_item("majority_label", c.majority_label.clone())?;
        cd.set_item("purity", c.purity)?;
        cd.set_item("is_pure", c.is_pure)?;
        clusters.append(cd)?;
    }
    d.set_item("significant_clusters", clusters)?;
    let shot = PyDict::new(py);
    shot.set_item("n_segments", report.shot.n_segments)?;
    shot.set_item("n_significant_segments", report.shot.n_significant_segments)?;
    shot.set_item("shot_coverage", report.shot.shot_coverage)?;
    shot.set_item("n_true_shots", report.shot.n_true_shots)?;
    shot.set_item("frame_coverage", report.shot.frame_coverage)?;
    shot.set_item("conciseness", report.shot.conciseness)?;
    shot.set_item("representativeness", report.shot.representativeness)?;
    d.set_item("shot", shot)?;
    let segments = PyList::empty(py);
    for s in &report.segments {
        segments.append((s.start_frame, s.end_frame, s.significant, s.labels.clone()))?;
    }
    d.set_item("segments", segments)?;
    Ok(d)
}

/// Scores an outcome against the dataset's ground-truth labels and
/// returns the full report as a dict.
#[pyfunction]
#[pyo3(signature = (dataset, outcome, thres=None, min_cluster_size=None, purity_threshold=None,
                    min_segment_frames=None))]
fn evaluate<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    outcome: &PyFitOutcome,
    thres: Option<f64>,
    min_cluster_size: Option<usize>,
    purity_threshold: Option<f64>,
    min_segment_frames: Option<u32>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut hyper = HyperParams::isotropic(dataset.inner.dim.max(1));
    if let Some(v) = thres {
        hyper.thres = v;
    }
    if let Some(v) = min_cluster_size {
        hyper.min_cluster_size = v;
    }
    if let Some(v) = purity_threshold {
        hyper.purity_threshold = v;
    }
    if let Some(v) = min_segment_frames {
        hyper.min_segment_frames = v;
    }
    let ctx = build_context(&dataset.inner.records, &hyper).map_err(to_py_err)?;
    let report = eval_report(&outcome.z, &dataset.inner.records, &ctx, dataset.inner.frames, &hyper)
        .map_err(to_py_err)?;
    report_to_dict(py, &report)
}

/// Links raw detections `(frame, (cx, cy), box_width, features)` into
/// tracklets of exactly `r` detections.
#[pyfunction]
#[pyo3(signature = (detections, r, locality_factor=0.5))]
fn detections_to_dataset(
    detections: Vec<(u32, (f64, f64), f64, Vec<f64>)>,
    r: usize,
    locality_factor: f64,
) -> PyResult<PyDataset> {
    let dets: Vec<Detection> = detections
        .into_iter()
        .map(|(frame, center, width, features)| Detection { frame, center, width, features })
        .collect();
    let records = aggregate_detections(&dets, r, locality_factor).map_err(to_py_err)?;
    let inner = tcclust::dataset::Dataset::from_records(records, r as u32).map_err(to_py_err)?;
    Ok(PyDataset { inner })
}

#[pymodule]
fn tcclust_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFitOutcome>()?;
    m.add_function(wrap_pyfunction!(log_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(crp_predictive, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(detections_to_dataset, m)?)?;
    Ok(())
}
