//! Evaluation of a clustering against ground-truth labels: cluster
//! purity and coverage, junk-detection precision/recall*, track-linking
//! fraction, and the entity- and shot-level summarization measures.
//!
//! Unlabeled tracklets count as non-entity (junk) throughout.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{HyperParams, SequenceContext, TrackletRecord, JUNK_COMPONENT};

/// One size-qualified cluster with its truth composition.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub size: usize,
    /// Most common entity label among the members, if any entity occurs.
    pub majority_label: Option<String>,
    /// Fraction of members carrying the majority label.
    pub purity: f64,
    /// Majority fraction reaches the purity threshold.
    pub is_pure: bool,
    /// Junk fraction reaches the threshold; excluded from all metrics.
    pub is_mostly_junk: bool,
}

/// Shot-level summarization measures.
#[derive(Debug, Clone, Serialize)]
pub struct ShotMetrics {
    pub n_segments: usize,
    pub n_significant_segments: usize,
    /// True shots containing at least one significant segment.
    pub shot_coverage: usize,
    pub n_true_shots: usize,
    /// Fraction of frames inside significant segments.
    pub frame_coverage: f64,
    pub conciseness: Option<f64>,
    pub representativeness: Option<f64>,
}

/// One temporal segment: a maximal frame run with a constant label set.
#[derive(Debug, Clone, Serialize)]
pub struct TemporalSegment {
    pub start_frame: u32,
    pub end_frame: u32,
    pub labels: Vec<usize>,
    pub significant: bool,
}

/// Machine-readable evaluation report.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n_tracklets: usize,
    pub n_significant_clusters: usize,
    pub significant_clusters: Vec<ClusterSummary>,
    /// Clusters big enough but dominated by junk, kept for inspection.
    pub mostly_junk_clusters: Vec<ClusterSummary>,
    pub purity: Option<f64>,
    pub entity_coverage: usize,
    pub tracklet_coverage: f64,
    pub outlier_precision: Option<f64>,
    pub outlier_recall_star: usize,
    pub linking_fraction: Option<f64>,
    pub linking_fraction_no_singletons: Option<f64>,
    pub n_tracks: usize,
    pub conciseness: Option<f64>,
    pub representativeness: Option<f64>,
    pub representativeness_x100: Option<f64>,
    pub shot: ShotMetrics,
    #[serde(skip)]
    pub segments: Vec<TemporalSegment>,
}

fn truth_of(rec: &TrackletRecord) -> Option<&str> {
    match rec.truth_label.as_deref() {
        Some(l) if l != crate::types::JUNK_LABEL => Some(l),
        _ => None,
    }
}

/// Groups assignments into size-qualified clusters with purity and junk
/// flags. Clusters below `min_cluster_size` are dropped; clusters whose
/// junk fraction reaches the purity threshold are flagged as mostly-junk
/// (callers exclude those from every metric). The junk sink itself (k=0)
/// is never listed.
pub fn significant_clusters(
    z: &[usize],
    records: &[TrackletRecord],
    hyper: &HyperParams,
) -> Vec<ClusterSummary> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &k) in z.iter().enumerate() {
        if k != JUNK_COMPONENT {
            members.entry(k).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    for (k, idx) in members {
        if idx.len() < hyper.min_cluster_size {
            continue;
        }
        let size = idx.len();
        let mut label_counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut junk = 0usize;
        for &i in &idx {
            match truth_of(&records[i]) {
                Some(l) => *label_counts.entry(l).or_insert(0) += 1,
                None => junk += 1,
            }
        }
        let majority = label_counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(l, n)| (l.to_string(), *n));
        let purity = majority.as_ref().map_or(0.0, |(_, n)| *n as f64 / size as f64);
        out.push(ClusterSummary {
            k,
            size,
            majority_label: majority.map(|(l, _)| l),
            purity,
            is_pure: purity >= hyper.purity_threshold,
            is_mostly_junk: junk as f64 / size as f64 >= hyper.purity_threshold,
        });
    }
    out
}

/// Purity (pure / significant), entity coverage (entities owning a pure
/// cluster) and tracklet coverage (members of pure clusters / N).
pub fn purity_and_coverage(
    clusters: &[ClusterSummary],
    n_tracklets: usize,
) -> (Option<f64>, usize, f64) {
    let significant: Vec<&ClusterSummary> = clusters.iter().filter(|c| !c.is_mostly_junk).collect();
    if significant.is_empty() {
        return (None, 0, 0.0);
    }
    let pure: Vec<&&ClusterSummary> = significant.iter().filter(|c| c.is_pure).collect();
    let purity = pure.len() as f64 / significant.len() as f64;
    let entities: BTreeSet<&str> =
        pure.iter().filter_map(|c| c.majority_label.as_deref()).collect();
    let covered: usize = pure.iter().map(|c| c.size).sum();
    (Some(purity), entities.len(), covered as f64 / n_tracklets as f64)
}

/// Precision and raw recovered count over the tracklets the model sent to
/// the junk sink.
pub fn outlier_metrics(z: &[usize], records: &[TrackletRecord]) -> (Option<f64>, usize) {
    let captured: Vec<usize> =
        (0..z.len()).filter(|&i| z[i] == JUNK_COMPONENT).collect();
    if captured.is_empty() {
        return (None, 0);
    }
    let hits = captured.iter().filter(|&&i| records[i].is_junk_truth()).count();
    (Some(hits as f64 / captured.len() as f64), hits)
}

/// Ground-truth tracks (same-entity tracklets chained through close
/// predecessors) fully assigned to a single cluster. Returns the fraction
/// over all tracks, the fraction over multi-tracklet tracks, and the
/// track count.
pub fn linking_fraction(
    z: &[usize],
    records: &[TrackletRecord],
    ctx: &SequenceContext,
    hyper: &HyperParams,
) -> (Option<f64>, Option<f64>, usize) {
    let n = records.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let up = parent[cur];
            parent[cur] = root;
            cur = up;
        }
        root
    }
    for i in 0..n {
        let Some(p) = ctx.prev[i] else { continue };
        if ctx.prev_distance[i] > hyper.thres {
            continue;
        }
        match (truth_of(&records[i]), truth_of(&records[p])) {
            (Some(a), Some(b)) if a == b => {
                let (ra, rb) = (find(&mut parent, i), find(&mut parent, p));
                parent[ra] = rb;
            }
            _ => {}
        }
    }
    let mut tracks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        if truth_of(&records[i]).is_some() {
            let root = find(&mut parent, i);
            tracks.entry(root).or_default().push(i);
        }
    }
    if tracks.is_empty() {
        return (None, None, 0);
    }
    let mut linked = 0usize;
    let mut multi = 0usize;
    let mut multi_linked = 0usize;
    for members in tracks.values() {
        let whole = members.iter().all(|&i| z[i] == z[members[0]]);
        linked += usize::from(whole);
        if members.len() > 1 {
            multi += 1;
            multi_linked += usize::from(whole);
        }
    }
    let all = Some(linked as f64 / tracks.len() as f64);
    let no_single = (multi > 0).then(|| multi_linked as f64 / multi as f64);
    (all, no_single, tracks.len())
}

/// Conciseness (entity coverage / significant clusters) and
/// representativeness (tracklet coverage / significant clusters).
pub fn summarization_metrics(
    clusters: &[ClusterSummary],
    n_tracklets: usize,
) -> (Option<f64>, Option<f64>) {
    let n_sig = clusters.iter().filter(|c| !c.is_mostly_junk).count();
    if n_sig == 0 {
        return (None, None);
    }
    let (_, entity_coverage, tracklet_coverage) = purity_and_coverage(clusters, n_tracklets);
    (
        Some(entity_coverage as f64 / n_sig as f64),
        Some(tracklet_coverage / n_sig as f64),
    )
}

fn segments_of_label_runs(
    frames: u32,
    spans: &[(u32, u32, usize)],
) -> Vec<(u32, u32, Vec<usize>)> {
    // Per-frame label sets via an event sweep; a new segment starts
    // whenever the set changes.
    let mut add: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut del: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (s, e, l) in spans {
        add.entry(*s).or_default().push(*l);
        del.entry(*e + 1).or_default().push(*l);
    }
    let mut present: BTreeMap<usize, usize> = BTreeMap::new();
    let mut segments: Vec<(u32, u32, Vec<usize>)> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut seg_start = 0u32;
    for f in 0..frames {
        if let Some(ls) = del.get(&f) {
            for l in ls {
                let c = present.get_mut(l).unwrap();
                *c -= 1;
                if *c == 0 {
                    present.remove(l);
                }
            }
        }
        if let Some(ls) = add.get(&f) {
            for l in ls {
                *present.entry(*l).or_insert(0) += 1;
            }
        }
        let set: Vec<usize> = present.keys().copied().collect();
        if f == 0 {
            current = set;
        } else if set != current {
            segments.push((seg_start, f - 1, std::mem::replace(&mut current, set)));
            seg_start = f;
        }
    }
    if frames > 0 {
        segments.push((seg_start, frames - 1, current));
    }
    segments
}

/// Cuts the video into temporal segments of constant cluster-label sets,
/// marks segments covering at least `min_segment_frames` frames as
/// significant, and scores them against true shots derived from the
/// ground-truth labels by the same rule.
pub fn shot_segmentation(
    z: &[usize],
    records: &[TrackletRecord],
    frames: u32,
    hyper: &HyperParams,
) -> (Vec<TemporalSegment>, ShotMetrics) {
    let spans: Vec<(u32, u32, usize)> = records
        .iter()
        .enumerate()
        .filter(|(i, _)| z[*i] != JUNK_COMPONENT)
        .map(|(i, r)| (r.start_frame, r.end_frame, z[i]))
        .collect();
    let raw = segments_of_label_runs(frames, &spans);
    let segments: Vec<TemporalSegment> = raw
        .into_iter()
        .map(|(s, e, labels)| TemporalSegment {
            start_frame: s,
            end_frame: e,
            significant: e - s + 1 >= hyper.min_segment_frames,
            labels,
        })
        .collect();

    // true shots from the truth labels, via the same set-equality rule
    let mut entity_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut true_spans: Vec<(u32, u32, usize)> = Vec::new();
    for r in records {
        if let Some(l) = truth_of(r) {
            let next = entity_ids.len() + 1;
            let id = *entity_ids.entry(l).or_insert(next);
            true_spans.push((r.start_frame, r.end_frame, id));
        }
    }
    let true_shots = segments_of_label_runs(frames, &true_spans);

    let significant: Vec<&TemporalSegment> = segments.iter().filter(|s| s.significant).collect();
    let covered_frames: u64 =
        significant.iter().map(|s| (s.end_frame - s.start_frame + 1) as u64).sum();
    let shot_coverage = true_shots
        .iter()
        .filter(|(ts, te, _)| {
            significant.iter().any(|seg| seg.start_frame >= *ts && seg.end_frame <= *te)
        })
        .count();
    let n_sig = significant.len();
    let frame_coverage = if frames > 0 { covered_frames as f64 / frames as f64 } else { 0.0 };
    let metrics = ShotMetrics {
        n_segments: segments.len(),
        n_significant_segments: n_sig,
        shot_coverage,
        n_true_shots: true_shots.len(),
        frame_coverage,
        conciseness: (n_sig > 0).then(|| shot_coverage as f64 / n_sig as f64),
        representativeness: (n_sig > 0).then(|| frame_coverage / n_sig as f64),
    };
    (segments, metrics)
}

/// Computes the full report for an assignment against the ground truth
/// carried on the records.
pub fn evaluate(
    z: &[usize],
    records: &[TrackletRecord],
    ctx: &SequenceContext,
    frames: u32,
    hyper: &HyperParams,
) -> Result<EvalReport> {
    if z.len() != records.len() {
        return Err(Error::Data(format!(
            "evaluate: {} assignments for {} records",
            z.len(),
            records.len()
        )));
    }
    let all_clusters = significant_clusters(z, records, hyper);
    let (mostly_junk, clusters): (Vec<ClusterSummary>, Vec<ClusterSummary>) =
        all_clusters.into_iter().partition(|c| c.is_mostly_junk);
    let (purity, entity_coverage, tracklet_coverage) =
        purity_and_coverage(&clusters, records.len());
    let (outlier_precision, recall_star) = outlier_metrics(z, records);
    let (link_all, link_multi, n_tracks) = linking_fraction(z, records, ctx, hyper);
    let (conciseness, representativeness) = summarization_metrics(&clusters, records.len());
    let (segments, shot) = shot_segmentation(z, records, frames, hyper);
    Ok(EvalReport {
        n_tracklets: records.len(),
        n_significant_clusters: clusters.len(),
        significant_clusters: clusters,
        mostly_junk_clusters: mostly_junk,
        purity,
        entity_coverage,
        tracklet_coverage,
        outlier_precision,
        outlier_recall_star: recall_star,
        linking_fraction: link_all,
        linking_fraction_no_singletons: link_multi,
        n_tracks,
        conciseness,
        representativeness,
        representativeness_x100: representativeness.map(|r| r * 100.0),
        shot,
        segments,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.6}"))
}

impl EvalReport {
    /// Flat `key value` rendering; `-` marks absent values.
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push(' ');
            out.push_str(&v);
            out.push('\n');
        };
        kv("n_tracklets", self.n_tracklets.to_string());
        kv("n_significant_clusters", self.n_significant_clusters.to_string());
        kv("purity", fmt_opt(self.purity));
        kv("entity_coverage", self.entity_coverage.to_string());
        kv("tracklet_coverage", format!("{:.6}", self.tracklet_coverage));
        kv("outlier_precision", fmt_opt(self.outlier_precision));
        kv("outlier_recall_star", self.outlier_recall_star.to_string());
        kv("linking_fraction", fmt_opt(self.linking_fraction));
        kv(
            "linking_fraction_no_singletons",
            fmt_opt(self.linking_fraction_no_singletons),
        );
        kv("n_tracks", self.n_tracks.to_string());
        kv("conciseness", fmt_opt(self.conciseness));
        kv("representativeness", fmt_opt(self.representativeness));
        kv("representativeness_x100", fmt_opt(self.representativeness_x100));
        kv("shot_n_segments", self.shot.n_segments.to_string());
        kv("shot_n_significant_segments", self.shot.n_significant_segments.to_string());
        kv("shot_coverage", self.shot.shot_coverage.to_string());
        kv("shot_n_true_shots", self.shot.n_true_shots.to_string());
        kv("shot_frame_coverage", format!("{:.6}", self.shot.frame_coverage));
        kv("shot_conciseness", fmt_opt(self.shot.conciseness));
        kv("shot_representativeness", fmt_opt(self.shot.representativeness));
        kv(
            "shot_representativeness_x100",
            fmt_opt(self.shot.representativeness.map(|r| r * 100.0)),
        );
        for c in &self.significant_clusters {
            kv(
                &format!("cluster_{}", c.k),
                format!(
                    "size {} majority {} purity {:.6} pure {}",
                    c.size,
                    c.majority_label.as_deref().unwrap_or("-"),
                    c.purity,
                    u8::from(c.is_pure)
                ),
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_context;
    use crate::types::JUNK_LABEL;
    use proptest::prelude::*;

    fn rec(id: usize, start: u32, end: u32, label: Option<&str>) -> TrackletRecord {
        TrackletRecord {
            id,
            features: vec![0.0],
            start_frame: start,
            end_frame: end,
            spatial_center: None,
            truth_label: label.map(|s| s.to_string()),
        }
    }

    fn sequential_records(labels: &[Option<&str>]) -> Vec<TrackletRecord> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| rec(i, 10 * i as u32, 10 * i as u32 + 9, *l))
            .collect()
    }

    #[test]
    fn cluster_size_and_junk_filters() {
        let hyper = HyperParams::isotropic(1);
        // 9-member cluster excluded, 10-member included
        let mut labels = vec![Some("a"); 9];
        labels.extend(vec![Some("b"); 10]);
        let records = sequential_records(&labels);
        let mut z = vec![1usize; 9];
        z.extend(vec![2usize; 10]);
        let clusters = significant_clusters(&z, &records, &hyper);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].k, 2);
        assert!(clusters[0].is_pure && !clusters[0].is_mostly_junk);

        // 20 members, 15 junk: flagged mostly-junk and excluded from metrics
        let mut labels = vec![Some(JUNK_LABEL); 15];
        labels.extend(vec![Some("a"); 5]);
        let records = sequential_records(&labels);
        let z = vec![1usize; 20];
        let clusters = significant_clusters(&z, &records, &hyper);
        assert_eq!(clusters.len(), 1);
        assert!(clusters[0].is_mostly_junk);
        let (purity, cov, tcov) = purity_and_coverage(
            &clusters.iter().filter(|c| !c.is_mostly_junk).cloned().collect::<Vec<_>>(),
            20,
        );
        assert_eq!(purity, None);
        assert_eq!((cov, tcov), (0, 0.0));
    }

    #[test]
    fn purity_and_coverage_hand_case() {
        let hyper = HyperParams::isotropic(1);
        // cluster 1: 8 of A + 2 of B; cluster 2: 5 A / 5 B
        let mut labels = vec![Some("A"); 8];
        labels.extend(vec![Some("B"); 2]);
        labels.extend(vec![Some("A"); 5]);
        labels.extend(vec![Some("B"); 5]);
        let records = sequential_records(&labels);
        let mut z = vec![1usize; 10];
        z.extend(vec![2usize; 10]);
        let clusters = significant_clusters(&z, &records, &hyper);
        let (purity, coverage, tcov) = purity_and_coverage(&clusters, 20);
        assert_eq!(purity, Some(0.5));
        assert_eq!(coverage, 1);
        assert!((tcov - 0.5).abs() < 1e-12);
    }

    #[test]
    fn purity_threshold_is_inclusive() {
        let hyper = HyperParams::isotropic(1);
        // exactly 70%: 7 of A, 3 of B
        let mut labels = vec![Some("A"); 7];
        labels.extend(vec![Some("B"); 3]);
        let records = sequential_records(&labels);
        let clusters = significant_clusters(&vec![1; 10], &records, &hyper);
        assert!(clusters[0].is_pure);
        let (purity, _, _) = purity_and_coverage(&clusters, 10);
        assert_eq!(purity, Some(1.0));
    }

    #[test]
    fn all_pure_clusters_give_unit_purity() {
        let hyper = HyperParams::isotropic(1);
        let mut labels = vec![Some("A"); 10];
        labels.extend(vec![Some("B"); 12]);
        let records = sequential_records(&labels);
        let mut z = vec![1usize; 10];
        z.extend(vec![2usize; 12]);
        let clusters = significant_clusters(&z, &records, &hyper);
        let (purity, coverage, tcov) = purity_and_coverage(&clusters, 22);
        assert_eq!(purity, Some(1.0));
        assert_eq!(coverage, 2);
        assert!((tcov - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outlier_metrics_hand_cases() {
        let records = sequential_records(&[
            Some(JUNK_LABEL),
            Some(JUNK_LABEL),
            Some(JUNK_LABEL),
            Some("a"),
            Some("a"),
        ]);
        let z = vec![0, 0, 0, 0, 1];
        let (prec, rec_star) = outlier_metrics(&z, &records);
        assert_eq!(prec, Some(0.75));
        assert_eq!(rec_star, 3);

        let (prec, rec_star) = outlier_metrics(&[1, 1, 1, 1, 1], &records);
        assert_eq!(prec, None);
        assert_eq!(rec_star, 0);

        let (prec, rec_star) = outlier_metrics(&[0, 0, 0, 1, 1], &records);
        assert_eq!(prec, Some(1.0));
        assert_eq!(rec_star, 3);
    }

    #[test]
    fn linking_fraction_hand_cases() {
        let hyper = HyperParams::isotropic(1);
        // one chain of three same-entity tracklets, gaps of 1 frame
        let records = sequential_records(&[Some("A"), Some("A"), Some("A")]);
        let ctx = build_context(&records, &hyper).unwrap();
        let (all, multi, n) = linking_fraction(&[1, 1, 1], &records, &ctx, &hyper);
        assert_eq!((all, multi, n), (Some(1.0), Some(1.0), 1));

        // split track (k, k, m) is not linked
        let (all, multi, _) = linking_fraction(&[1, 1, 2], &records, &ctx, &hyper);
        assert_eq!((all, multi), (Some(0.0), Some(0.0)));

        // far-apart singletons always count as linked
        let far = vec![rec(0, 0, 9, Some("A")), rec(1, 500, 509, Some("A"))];
        let mut hyper2 = HyperParams::isotropic(1);
        hyper2.thres = 20.0;
        let ctx = build_context(&far, &hyper2).unwrap();
        let (all, multi, n) = linking_fraction(&[1, 2], &far, &ctx, &hyper2);
        assert_eq!((all, multi, n), (Some(1.0), None, 2));
    }

    #[test]
    fn summarization_ratios() {
        // ratio arithmetic pinned to two decimals
        let conciseness: f64 = 14.0 / 67.0;
        assert_eq!(format!("{conciseness:.2}"), "0.21");
        let representativeness: f64 = 0.90 / 67.0;
        assert!((representativeness * 100.0 - 1.3432835).abs() < 1e-6);

        // degenerate optimum: one cluster covering one entity and all tracklets
        let hyper = HyperParams::isotropic(1);
        let records = sequential_records(&vec![Some("A"); 12]);
        let clusters = significant_clusters(&vec![1; 12], &records, &hyper);
        let (con, rep) = summarization_metrics(&clusters, 12);
        assert_eq!(con, Some(1.0));
        assert_eq!(rep, Some(1.0));
    }

    #[test]
    fn shot_segmentation_hand_cases() {
        let mut hyper = HyperParams::isotropic(1);
        hyper.min_segment_frames = 100;
        // frames 0..=199 covered by cluster 1; 200..=249 by clusters 1 and 2
        let mut records = Vec::new();
        let mut z = Vec::new();
        for b in 0..25 {
            records.push(rec(records.len(), b * 10, b * 10 + 9, Some("A")));
            z.push(1);
        }
        for b in 20..25 {
            records.push(rec(records.len(), b * 10, b * 10 + 9, Some("B")));
            z.push(2);
        }
        records.sort_by_key(|r| (r.start_frame, r.end_frame));
        let order: Vec<usize> = records.iter().map(|r| r.id).collect();
        let z: Vec<usize> = order.iter().map(|&i| z[i]).collect();
        let mut records = records;
        for (i, r) in records.iter_mut().enumerate() {
            r.id = i;
        }
        let (segments, metrics) = shot_segmentation(&z, &records, 250, &hyper);
        assert_eq!(segments.len(), 2);
        assert_eq!(metrics.n_significant_segments, 1);
        assert_eq!((segments[0].start_frame, segments[0].end_frame), (0, 199));
        assert_eq!(segments[0].labels, vec![1]);
        assert_eq!(segments[1].labels, vec![1, 2]);

        // no tracklets: one empty-set segment spanning the video
        let (segments, metrics) = shot_segmentation(&[], &[], 500, &hyper);
        assert_eq!(segments.len(), 1);
        assert!(segments[0].labels.is_empty());
        assert_eq!((segments[0].start_frame, segments[0].end_frame), (0, 499));
        assert_eq!(metrics.frame_coverage, 1.0); // the single segment is significant

        // alternating labels every frame: nothing significant
        let mut records = Vec::new();
        let mut z = Vec::new();
        for f in 0..200u32 {
            records.push(rec(f as usize, f, f, Some("A")));
            z.push(1 + (f % 2) as usize);
        }
        let (_, metrics) = shot_segmentation(&z, &records, 200, &hyper);
        assert_eq!(metrics.n_significant_segments, 0);
        assert_eq!(metrics.frame_coverage, 0.0);
    }

    #[test]
    fn truth_self_evaluation_is_perfect() {
        let hyper = HyperParams::isotropic(1);
        let mut labels: Vec<Option<&str>> = Vec::new();
        labels.extend(vec![Some("A"); 15]);
        labels.extend(vec![Some("B"); 11]);
        labels.extend(vec![Some(JUNK_LABEL); 3]);
        let records = sequential_records(&labels);
        let ctx = build_context(&records, &hyper).unwrap();
        let mut z = vec![1usize; 15];
        z.extend(vec![2usize; 11]);
        z.extend(vec![0usize; 3]);
        let report = evaluate(&z, &records, &ctx, 300, &hyper).unwrap();
        assert_eq!(report.purity, Some(1.0));
        assert_eq!(report.entity_coverage, 2);
        assert_eq!(report.linking_fraction, Some(1.0));
        assert_eq!(report.outlier_precision, Some(1.0));
        assert_eq!(report.outlier_recall_star, 3);
    }

    proptest! {
        #[test]
        fn segments_partition_the_frame_range(
            spans in proptest::collection::vec((0u32..300, 1u32..40, 1usize..5), 0..25),
            frames in 301u32..400,
        ) {
            let mut keyed: Vec<(u32, u32, usize)> =
                spans.iter().map(|(s, l, z)| (*s, s + l, *z)).collect();
            keyed.sort();
            keyed.dedup_by_key(|(s, e, _)| (*s, *e));
            let records: Vec<TrackletRecord> = keyed
                .iter()
                .enumerate()
                .map(|(i, (s, e, _))| rec(i, *s, *e, Some("A")))
                .collect();
            let z: Vec<usize> = keyed.iter().map(|(_, _, z)| *z).collect();
            let hyper = HyperParams::isotropic(1);
            let (segments, _) = shot_segmentation(&z, &records, frames, &hyper);
            prop_assert_eq!(segments[0].start_frame, 0);
            prop_assert_eq!(segments.last().unwrap().end_frame, frames - 1);
            for w in segments.windows(2) {
                prop_assert_eq!(w[0].end_frame + 1, w[1].start_frame);
                prop_assert_ne!(&w[0].labels, &w[1].labels);
            }
        }

        #[test]
        fn purity_is_invariant_under_relabeling(
            assignment in proptest::collection::vec(0usize..4, 30..60),
        ) {
            let names = ["A", "B", "C", "D"];
            let renamed = ["X", "Y", "Z", "W"];
            let labels: Vec<Option<&str>> =
                assignment.iter().map(|&g| Some(names[g])).collect();
            let relabeled: Vec<Option<&str>> =
                assignment.iter().map(|&g| Some(renamed[g])).collect();
            let z: Vec<usize> = assignment.iter().map(|&g| g + 1).collect();
            let z_shifted: Vec<usize> = assignment.iter().map(|&g| g + 50).collect();
            let hyper = HyperParams::isotropic(1);
            let r1 = sequential_records(&labels);
            let r2 = sequential_records(&relabeled);
            let c1 = significant_clusters(&z, &r1, &hyper);
            let c2 = significant_clusters(&z_shifted, &r2, &hyper);
            let (p1, e1, t1) = purity_and_coverage(&c1, z.len());
            let (p2, e2, t2) = purity_and_coverage(&c2, z.len());
            prop_assert_eq!(p1, p2);
            prop_assert_eq!(e1, e2);
            prop_assert!((t1 - t2).abs() < 1e-12);
        }
    }
}
