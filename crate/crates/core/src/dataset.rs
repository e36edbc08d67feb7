//! Tracklet dataset persistence, detection-to-tracklet aggregation and
//! derivation of the temporal sequence structure.
//!
//! The on-disk format is a self-describing text header followed by either
//! a text payload (one record per line) or a little-endian binary payload
//! with 32-bit-float features. Feature values are canonically 32-bit
//! floats: writers quantize, so a write/read round trip is exact. The
//! format is documented in `docs/dataset-format.md`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{validate_records, HyperParams, SequenceContext, TrackletRecord};

/// Payload encoding of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Text,
    Binary,
}

/// An in-memory dataset: records plus file-level metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<TrackletRecord>,
    /// Feature dimension `d`.
    pub dim: usize,
    /// Tracklet length `R` used when the records were built.
    pub tracklet_len: u32,
    /// Total number of video frames.
    pub frames: u32,
    pub encoding: Encoding,
}

impl Dataset {
    /// Wraps records, deriving `frames` from the last covered frame.
    pub fn from_records(records: Vec<TrackletRecord>, tracklet_len: u32) -> Result<Self> {
        validate_records(&records)?;
        let dim = records.first().map_or(0, |r| r.dim());
        let frames = records.iter().map(|r| r.end_frame + 1).max().unwrap_or(0);
        Ok(Dataset { records, dim, tracklet_len, frames, encoding: Encoding::Text })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        self.records.iter().any(|r| r.truth_label.is_some())
    }
}

/// Quantize to the canonical 32-bit feature grid.
pub(crate) fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

fn fmt_f32(x: f64) -> String {
    // 9 significant digits round-trip every 32-bit float exactly.
    format!("{:.8e}", x as f32 as f64)
}

// ---------------------------------------------------------------------------
// Reading and writing
// ---------------------------------------------------------------------------

/// One detection prior to tracklet aggregation.
#[derive(Debug, Clone)]
pub struct Detection {
    pub frame: u32,
    pub center: (f64, f64),
    /// Bounding-box width in pixels; bounds the linking radius.
    pub width: f64,
    pub features: Vec<f64>,
}

struct HeaderFields {
    encoding: Encoding,
    dim: usize,
    tracklet_len: u32,
    frames: u32,
    count: usize,
}

fn parse_header(path: &str, lines: &mut std::str::Lines<'_>, line_no: &mut usize) -> Result<HeaderFields> {
    let perr = |at: usize, msg: String| Error::Parse {
        path: path.to_string(),
        at: format!("line {at}"),
        msg,
    };
    let mut next_line = |line_no: &mut usize| -> Result<&str> {
        *line_no += 1;
        lines
            .next()
            .ok_or_else(|| perr(*line_no, "unexpected end of header".into()))
    };

    let magic = next_line(line_no)?;
    let encoding = match magic {
        "tcd 1 text" => Encoding::Text,
        "tcd 1 bin" => Encoding::Binary,
        other => {
            return Err(perr(*line_no, format!("expected 'tcd 1 text' or 'tcd 1 bin', got '{other}'")));
        }
    };
    let mut field = |line_no: &mut usize, key: &str| -> Result<u64> {
        let line = next_line(line_no)?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| perr(*line_no, format!("expected '{key} <value>', got '{line}'")))?;
        rest.parse::<u64>()
            .map_err(|_| perr(*line_no, format!("'{key}' value '{rest}' is not a non-negative integer")))
    };
    let dim = field(line_no, "dim")? as usize;
    let tracklet_len = field(line_no, "len")? as u32;
    let frames = field(line_no, "frames")? as u32;
    let count = field(line_no, "count")? as usize;
    let marker = next_line(line_no)?;
    if marker != "records" {
        return Err(perr(*line_no, format!("expected 'records', got '{marker}'")));
    }
    if dim == 0 {
        return Err(perr(*line_no, "dim must be at least 1".into()));
    }
    Ok(HeaderFields { encoding, dim, tracklet_len, frames, count })
}

fn parse_text_record(path: &str, line_no: usize, line: &str, dim: usize) -> Result<TrackletRecord> {
    let perr = |msg: String| Error::Parse {
        path: path.to_string(),
        at: format!("line {line_no}"),
        msg,
    };
    let mut tok = line.split(' ');
    let mut next = |name: &str| tok.next().ok_or_else(|| perr(format!("missing field '{name}'")));
    let id: usize = next("id")?
        .parse()
        .map_err(|_| perr("id is not an integer".into()))?;
    let start: u32 = next("start")?
        .parse()
        .map_err(|_| perr(format!("record id {id}: start is not an integer")))?;
    let end: u32 = next("end")?
        .parse()
        .map_err(|_| perr(format!("record id {id}: end is not an integer")))?;
    let cx = next("cx")?;
    let cy = next("cy")?;
    let spatial_center = match (cx, cy) {
        ("-", "-") => None,
        (cx, cy) => {
            let x: f64 = cx
                .parse()
                .map_err(|_| perr(format!("record id {id}: cx '{cx}' is not a number")))?;
            let y: f64 = cy
                .parse()
                .map_err(|_| perr(format!("record id {id}: cy '{cy}' is not a number")))?;
            Some((quantize(x), quantize(y)))
        }
    };
    let label = next("label")?;
    let truth_label = if label == "-" { None } else { Some(label.to_string()) };
    let mut features = Vec::with_capacity(dim);
    for tok in tok {
        let v: f64 = tok
            .parse()
            .map_err(|_| perr(format!("record id {id}: feature '{tok}' is not a number")))?;
        features.push(quantize(v));
    }
    if features.len() != dim {
        return Err(perr(format!(
            "record id {id}: expected {dim} feature values, found {}",
            features.len()
        )));
    }
    Ok(TrackletRecord { id, features, start_frame: start, end_frame: end, spatial_center, truth_label })
}

/// Reads a dataset file; truth labels, when present, ride on the records.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&path_str, e))?;

    // The header is always text; locate the end of the 'records' line.
    let header_probe = String::from_utf8_lossy(&bytes[..bytes.len().min(256)]);
    let mut probe_lines = header_probe.lines();
    let mut line_no = 0usize;
    let header = parse_header(&path_str, &mut probe_lines, &mut line_no)?;
    let header_len = header_probe
        .lines()
        .take(line_no)
        .map(|l| l.len() + 1)
        .sum::<usize>();
    let body = bytes.get(header_len..).unwrap_or(&[]);

    let records = match header.encoding {
        Encoding::Text => read_text_records(&path_str, body, &header, line_no)?,
        Encoding::Binary => read_binary_records(&path_str, body, &header, header_len)?,
    };
    validate_records(&records)?;
    for r in &records {
        if r.end_frame >= header.frames {
            return Err(Error::Data(format!(
                "record id {} ends at frame {} but the header declares {} frames",
                r.id, r.end_frame, header.frames
            )));
        }
    }
    Ok(Dataset {
        records,
        dim: header.dim,
        tracklet_len: header.tracklet_len,
        frames: header.frames,
        encoding: header.encoding,
    })
}

fn read_text_records(
    path: &str,
    body: &[u8],
    header: &HeaderFields,
    header_lines: usize,
) -> Result<Vec<TrackletRecord>> {
    let text = std::str::from_utf8(body).map_err(|e| Error::Parse {
        path: path.to_string(),
        at: format!("byte {}", e.valid_up_to()),
        msg: "payload is not valid UTF-8".into(),
    })?;
    let mut records = Vec::with_capacity(header.count);
    let mut lines = text.lines();
    let mut line_no = header_lines;
    for _ in 0..header.count {
        line_no += 1;
        let line = lines.next().ok_or_else(|| Error::Parse {
            path: path.to_string(),
            at: format!("line {line_no}"),
            msg: format!("expected {} records, file ends early", header.count),
        })?;
        records.push(parse_text_record(path, line_no, line, header.dim)?);
    }
    line_no += 1;
    match lines.next() {
        Some("end") => {}
        Some(other) => {
            return Err(Error::Parse {
                path: path.to_string(),
                at: format!("line {line_no}"),
                msg: format!("expected 'end', got '{other}'"),
            });
        }
        None => {
            return Err(Error::Parse {
                path: path.to_string(),
                at: format!("line {line_no}"),
                msg: "expected 'end' trailer".into(),
            });
        }
    }
    Ok(records)
}

fn read_binary_records(
    path: &str,
    body: &[u8],
    header: &HeaderFields,
    base_offset: usize,
) -> Result<Vec<TrackletRecord>> {
    let mut pos = 0usize;
    let perr = |pos: usize, msg: String| Error::Parse {
        path: path.to_string(),
        at: format!("byte {}", base_offset + pos),
        msg,
    };
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(perr(body.len(), format!("unexpected end of file, needed {n} more bytes")));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let mut records = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let id = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let start = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let end = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let has_center = take(&mut pos, 1)?[0];
        let spatial_center = match has_center {
            0 => None,
            1 => {
                let cx = f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
                let cy = f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
                Some((cx as f64, cy as f64))
            }
            other => return Err(perr(pos - 1, format!("bad center flag {other}"))),
        };
        let has_label = take(&mut pos, 1)?[0];
        let truth_label = match has_label {
            0 => None,
            1 => {
                let len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
                let raw = take(&mut pos, len)?;
                let s = std::str::from_utf8(raw)
                    .map_err(|_| perr(pos - len, "label is not valid UTF-8".into()))?;
                Some(s.to_string())
            }
            other => return Err(perr(pos - 1, format!("bad label flag {other}"))),
        };
        let raw = take(&mut pos, 4 * header.dim)?;
        let features: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        records.push(TrackletRecord {
            id,
            features,
            start_frame: start,
            end_frame: end,
            spatial_center,
            truth_label,
        });
    }
    let trailer = take(&mut pos, 4)?;
    if trailer != b"end\n" {
        return Err(perr(pos - 4, "expected 'end' trailer".into()));
    }
    if pos != body.len() {
        return Err(perr(pos, format!("{} trailing bytes after trailer", body.len() - pos)));
    }
    Ok(records)
}

/// Writes a dataset in its chosen encoding. Feature values and centers are
/// quantized to 32-bit floats so that reading the file back is exact.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    validate_records(&dataset.records)?;
    for r in &dataset.records {
        if let Some(l) = &r.truth_label {
            if l.is_empty() || l == "-" || l.chars().any(|c| c.is_whitespace()) {
                return Err(Error::Data(format!(
                    "record id {}: label '{l}' is empty, '-', or contains whitespace",
                    r.id
                )));
            }
        }
        if r.dim() != dataset.dim {
            return Err(Error::Data(format!(
                "record id {} has dimension {} but the dataset dimension is {}",
                r.id,
                r.dim(),
                dataset.dim
            )));
        }
    }

    let mut out: Vec<u8> = Vec::new();
    let enc = match dataset.encoding {
        Encoding::Text => "text",
        Encoding::Binary => "bin",
    };
    write!(
        out,
        "tcd 1 {enc}\ndim {}\nlen {}\nframes {}\ncount {}\nrecords\n",
        dataset.dim,
        dataset.tracklet_len,
        dataset.frames,
        dataset.records.len()
    )
    .unwrap();

    match dataset.encoding {
        Encoding::Text => {
            for r in &dataset.records {
                write!(out, "{} {} {}", r.id, r.start_frame, r.end_frame).unwrap();
                match r.spatial_center {
                    Some((x, y)) => write!(out, " {} {}", fmt_f32(x), fmt_f32(y)).unwrap(),
                    None => write!(out, " - -").unwrap(),
                }
                match &r.truth_label {
                    Some(l) => write!(out, " {l}").unwrap(),
                    None => write!(out, " -").unwrap(),
                }
                for f in &r.features {
                    write!(out, " {}", fmt_f32(*f)).unwrap();
                }
                out.push(b'\n');
            }
            out.extend_from_slice(b"end\n");
        }
        Encoding::Binary => {
            for r in &dataset.records {
                out.extend_from_slice(&(r.id as u32).to_le_bytes());
                out.extend_from_slice(&r.start_frame.to_le_bytes());
                out.extend_from_slice(&r.end_frame.to_le_bytes());
                match r.spatial_center {
                    Some((x, y)) => {
                        out.push(1);
                        out.extend_from_slice(&(x as f32).to_le_bytes());
                        out.extend_from_slice(&(y as f32).to_le_bytes());
                    }
                    None => out.push(0),
                }
                match &r.truth_label {
                    Some(l) => {
                        out.push(1);
                        out.extend_from_slice(&(l.len() as u16).to_le_bytes());
                        out.extend_from_slice(l.as_bytes());
                    }
                    None => out.push(0),
                }
                for f in &r.features {
                    out.extend_from_slice(&(*f as f32).to_le_bytes());
                }
            }
            out.extend_from_slice(b"end\n");
        }
    }
    fs::write(path, out).map_err(|e| Error::io(&path_str, e))
}

// ---------------------------------------------------------------------------
// Detection aggregation
// ---------------------------------------------------------------------------

/// Links detections in consecutive frames into chains by spatial locality,
/// then cuts the chains into tracklets of exactly `r` detections. Chains
/// shorter than `r` are dropped; longer chains yield consecutive blocks
/// with any remainder discarded. The tracklet vector is the element-wise
/// mean of its member vectors.
pub fn aggregate_detections(
    detections: &[Detection],
    r: usize,
    locality_factor: f64,
) -> Result<Vec<TrackletRecord>> {
    if r == 0 {
        return Err(Error::Contract("aggregate_detections: r must be at least 1".into()));
    }
    if detections.windows(2).any(|w| w[0].frame > w[1].frame) {
        return Err(Error::Data("detections must be sorted by frame".into()));
    }
    if let Some(d) = detections.first() {
        let dim = d.features.len();
        if detections.iter().any(|d| d.features.len() != dim) {
            return Err(Error::Data("detections must share one feature dimension".into()));
        }
    }

    struct Chain {
        last_frame: u32,
        last_center: (f64, f64),
        last_width: f64,
        members: Vec<usize>,
    }
    let mut chains: Vec<Chain> = Vec::new();
    for (di, det) in detections.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (ci, chain) in chains.iter().enumerate() {
            if chain.last_frame + 1 != det.frame {
                continue;
            }
            let dx = det.center.0 - chain.last_center.0;
            let dy = det.center.1 - chain.last_center.1;
            let dist = (dx * dx + dy * dy).sqrt();
            if dist <= locality_factor * chain.last_width && best.is_none_or(|(_, d)| dist < d) {
                best = Some((ci, dist));
            }
        }
        match best {
            Some((ci, _)) => {
                let chain = &mut chains[ci];
                chain.last_frame = det.frame;
                chain.last_center = det.center;
                chain.last_width = det.width;
                chain.members.push(di);
            }
            None => chains.push(Chain {
                last_frame: det.frame,
                last_center: det.center,
                last_width: det.width,
                members: vec![di],
            }),
        }
    }

    let mut records = Vec::new();
    for chain in &chains {
        for block in chain.members.chunks_exact(r) {
            let dim = detections[block[0]].features.len();
            let mut features = vec![0.0; dim];
            let mut cx = 0.0;
            let mut cy = 0.0;
            for &di in block {
                for (acc, f) in features.iter_mut().zip(&detections[di].features) {
                    *acc += f;
                }
                cx += detections[di].center.0;
                cy += detections[di].center.1;
            }
            let n = block.len() as f64;
            for f in &mut features {
                *f = quantize(*f / n);
            }
            records.push(TrackletRecord {
                id: 0,
                features,
                start_frame: detections[block[0]].frame,
                end_frame: detections[*block.last().unwrap()].frame,
                spatial_center: Some((quantize(cx / n), quantize(cy / n))),
                truth_label: None,
            });
        }
    }
    records.sort_by_key(|r| (r.start_frame, r.end_frame));
    for (i, r) in records.iter_mut().enumerate() {
        r.id = i;
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Sequence context
// ---------------------------------------------------------------------------

/// Derives predecessor/successor links, conflict sets, changepoints,
/// segment indices and predecessor distances from sorted records.
///
/// The predecessor of `i` is the latest tracklet ending strictly before
/// `i` starts (so it can never conflict with `i`). The predecessor
/// distance is the frame gap plus `pixel_weight` times the center
/// displacement when both centers are known.
pub fn build_context(records: &[TrackletRecord], hyper: &HyperParams) -> Result<SequenceContext> {
    validate_records(records)?;
    let n = records.len();
    let mut ctx = SequenceContext {
        prev: vec![None; n],
        next: vec![None; n],
        conflict_sets: vec![Vec::new(); n],
        changepoints: Vec::new(),
        segment_of: vec![0; n],
        prev_distance: vec![f64::INFINITY; n],
        children: vec![Vec::new(); n],
    };
    if n == 0 {
        return Ok(ctx);
    }

    // Predecessors: order indices by (end, idx); the last entry ending
    // before start(i) is the latest such tracklet.
    let mut by_end: Vec<usize> = (0..n).collect();
    by_end.sort_by_key(|&i| (records[i].end_frame, i));
    let ends: Vec<u32> = by_end.iter().map(|&i| records[i].end_frame).collect();
    for i in 0..n {
        let start = records[i].start_frame;
        let k = ends.partition_point(|&e| e < start);
        if k > 0 {
            let j = by_end[k - 1];
            ctx.prev[i] = Some(j);
            ctx.children[j].push(i);
            let gap = (start - records[j].end_frame) as f64;
            let pixels = match (records[i].spatial_center, records[j].spatial_center) {
                (Some(a), Some(b)) => {
                    let dx = a.0 - b.0;
                    let dy = a.1 - b.1;
                    (dx * dx + dy * dy).sqrt()
                }
                _ => 0.0,
            };
            ctx.prev_distance[i] = gap + hyper.pixel_weight * pixels;
        }
    }
    for j in 0..n {
        ctx.next[j] = ctx.children[j].first().copied();
    }

    // Conflicts: sweep by start frame, keeping tracklets that still overlap.
    let mut active: Vec<usize> = Vec::new();
    for i in 0..n {
        let start = records[i].start_frame;
        active.retain(|&j| records[j].end_frame >= start);
        for &j in &active {
            ctx.conflict_sets[j].push(i);
            ctx.conflict_sets[i].push(j);
        }
        active.push(i);
    }
    for set in &mut ctx.conflict_sets {
        set.sort_unstable();
    }

    // Changepoints from start-frame gaps.
    let mut segment = 0usize;
    for i in 1..n {
        if records[i].start_frame - records[i - 1].start_frame > hyper.segment_gap {
            ctx.changepoints.push(i);
            segment += 1;
        }
        ctx.segment_of[i] = segment;
    }
    Ok(ctx)
}

/// Replaces the derived predecessor distances with explicitly supplied
/// ones (for datasets that ship their own distance measure).
pub fn override_prev_distances(ctx: &mut SequenceContext, distances: &[f64]) -> Result<()> {
    if distances.len() != ctx.len() {
        return Err(Error::Contract(format!(
            "override_prev_distances: got {} distances for {} tracklets",
            distances.len(),
            ctx.len()
        )));
    }
    for (i, d) in distances.iter().enumerate() {
        if ctx.prev[i].is_some() {
            if !(*d >= 0.0) {
                return Err(Error::Contract(format!("distance for tracklet {i} must be non-negative")));
            }
            ctx.prev_distance[i] = *d;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: usize, start: u32, end: u32, features: Vec<f64>) -> TrackletRecord {
        TrackletRecord {
            id,
            features,
            start_frame: start,
            end_frame: end,
            spatial_center: None,
            truth_label: None,
        }
    }

    #[test]
    fn aggregate_mean_of_identical_detections() {
        let dets: Vec<Detection> = (0..10)
            .map(|f| Detection {
                frame: f,
                center: (50.0, 50.0),
                width: 20.0,
                features: vec![1.5, -2.0],
            })
            .collect();
        let out = aggregate_detections(&dets, 10, 0.5).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].features, vec![1.5, -2.0]);
        assert_eq!((out[0].start_frame, out[0].end_frame), (0, 9));
    }

    #[test]
    fn aggregate_drops_short_chains() {
        let dets: Vec<Detection> = (0..9)
            .map(|f| Detection { frame: f, center: (0.0, 0.0), width: 10.0, features: vec![1.0] })
            .collect();
        assert!(aggregate_detections(&dets, 10, 0.5).unwrap().is_empty());
    }

    #[test]
    fn aggregate_splits_long_chains_into_blocks() {
        let dets: Vec<Detection> = (1..=25)
            .map(|f| Detection { frame: f, center: (0.0, 0.0), width: 10.0, features: vec![f as f64] })
            .collect();
        let out = aggregate_detections(&dets, 10, 0.5).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].start_frame, out[0].end_frame), (1, 10));
        assert_eq!((out[1].start_frame, out[1].end_frame), (11, 20));
    }

    #[test]
    fn aggregate_rejects_unsorted_input() {
        let dets = vec![
            Detection { frame: 5, center: (0.0, 0.0), width: 10.0, features: vec![1.0] },
            Detection { frame: 4, center: (0.0, 0.0), width: 10.0, features: vec![1.0] },
        ];
        assert!(aggregate_detections(&dets, 1, 0.5).is_err());
    }

    #[test]
    fn context_changepoints_follow_start_gaps() {
        let records = vec![
            rec(0, 0, 9, vec![0.0]),
            rec(1, 15, 24, vec![0.0]),
            rec(2, 300, 309, vec![0.0]),
        ];
        let hyper = HyperParams::isotropic(1);
        let ctx = build_context(&records, &hyper).unwrap();
        assert_eq!(ctx.changepoints, vec![2]);
        assert_eq!(ctx.segment_of, vec![0, 0, 1]);
    }

    #[test]
    fn context_overlapping_spans_conflict_both_ways() {
        let records = vec![rec(0, 5, 14, vec![0.0]), rec(1, 10, 19, vec![0.0])];
        let ctx = build_context(&records, &HyperParams::isotropic(1)).unwrap();
        assert_eq!(ctx.conflict_sets[0], vec![1]);
        assert_eq!(ctx.conflict_sets[1], vec![0]);
        assert_eq!(ctx.prev[1], None);
    }

    #[test]
    fn context_singleton() {
        let records = vec![rec(0, 0, 9, vec![0.0])];
        let ctx = build_context(&records, &HyperParams::isotropic(1)).unwrap();
        assert_eq!(ctx.prev[0], None);
        assert_eq!(ctx.next[0], None);
        assert!(ctx.conflict_sets[0].is_empty());
        assert_eq!(ctx.segment_of, vec![0]);
    }

    #[test]
    fn prev_distance_combines_frame_gap_and_pixels() {
        let mut a = rec(0, 0, 9, vec![0.0]);
        a.spatial_center = Some((100.0, 200.0));
        let mut b = rec(1, 12, 21, vec![0.0]);
        b.spatial_center = Some((103.0, 204.0));
        let mut hyper = HyperParams::isotropic(1);
        hyper.pixel_weight = 0.1;
        let ctx = build_context(&[a.clone(), b.clone()], &hyper).unwrap();
        // frame gap 3 plus 0.1 times the 3-4-5 displacement
        assert!((ctx.prev_distance[1] - 3.5).abs() < 1e-12);

        // frame gap alone when either center is missing
        b.spatial_center = None;
        let ctx = build_context(&[a, b], &hyper).unwrap();
        assert_eq!(ctx.prev_distance[1], 3.0);
    }

    #[test]
    fn frames_header_bounds_spans() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tcd");
        let text =
            "tcd 1 text
dim 1
len 10
frames 15
count 1
records
0 0 19 - - - 1.00000000e0
end
";
        std::fs::write(&path, text).unwrap();
        match read_dataset(&path) {
            Err(Error::Data(msg)) => assert!(msg.contains("frames"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn prev_distance_override() {
        let records = vec![
            rec(0, 0, 9, vec![0.0]),
            rec(1, 12, 21, vec![0.0]),
            rec(2, 40, 49, vec![0.0]),
        ];
        let hyper = HyperParams::isotropic(1);
        let mut ctx = build_context(&records, &hyper).unwrap();
        assert_eq!(ctx.prev_distance[1], 3.0);
        override_prev_distances(&mut ctx, &[0.0, 7.5, 1.0]).unwrap();
        assert_eq!(ctx.prev_distance[1], 7.5);
        assert_eq!(ctx.prev_distance[2], 1.0);
        assert!(override_prev_distances(&mut ctx, &[1.0]).is_err());
        assert!(override_prev_distances(&mut ctx, &[0.0, -1.0, 0.0]).is_err());
    }

    #[test]
    fn roundtrip_text_and_binary() {
        let records = vec![
            TrackletRecord {
                id: 0,
                features: vec![quantize(0.1), quantize(-3.25)],
                start_frame: 0,
                end_frame: 9,
                spatial_center: Some((quantize(12.5), quantize(30.25))),
                truth_label: Some("alice".into()),
            },
            TrackletRecord {
                id: 1,
                features: vec![quantize(1e-7), quantize(4.75e4)],
                start_frame: 10,
                end_frame: 19,
                spatial_center: None,
                truth_label: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        for enc in [Encoding::Text, Encoding::Binary] {
            let mut ds = Dataset::from_records(records.clone(), 10).unwrap();
            ds.encoding = enc;
            let path = dir.path().join(if enc == Encoding::Text { "a.tcd" } else { "b.tcd" });
            write_dataset(&ds, &path).unwrap();
            let back = read_dataset(&path).unwrap();
            assert_eq!(back.records, ds.records);
            assert_eq!(back.frames, ds.frames);
            // reserialization is byte-identical
            let bytes1 = std::fs::read(&path).unwrap();
            let path2 = dir.path().join("again");
            write_dataset(&back, &path2).unwrap();
            assert_eq!(bytes1, std::fs::read(&path2).unwrap());
        }
    }

    #[test]
    fn truncated_file_reports_location() {
        let records = vec![rec(0, 0, 9, vec![1.0, 2.0]), rec(1, 10, 19, vec![3.0, 4.0])];
        let dir = tempfile::tempdir().unwrap();
        let mut ds = Dataset::from_records(records, 10).unwrap();
        ds.encoding = Encoding::Binary;
        let path = dir.path().join("t.tcd");
        write_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { at, .. }) => assert!(at.starts_with("byte ")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tcd");
        let text = "tcd 1 text\ndim 3\nlen 10\nframes 20\ncount 1\nrecords\n7 0 9 - - - 1.0 2.0\nend\n";
        std::fs::write(&path, text).unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("id 7"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn context_invariants_over_random_layouts(
            spans in proptest::collection::vec((0u32..400, 1u32..30), 1..40),
            gap in 5u32..120,
        ) {
            let mut keys: Vec<(u32, u32)> =
                spans.iter().map(|(s, len)| (*s, s + len)).collect();
            keys.sort();
            keys.dedup();
            let records: Vec<TrackletRecord> = keys
                .iter()
                .enumerate()
                .map(|(i, (s, e))| rec(i, *s, *e, vec![0.0]))
                .collect();
            let mut hyper = HyperParams::isotropic(1);
            hyper.segment_gap = gap;
            let ctx = build_context(&records, &hyper).unwrap();
            for i in 0..records.len() {
                // conflicts are symmetric and never contain self or prev
                prop_assert!(!ctx.conflict_sets[i].contains(&i));
                for &j in &ctx.conflict_sets[i] {
                    prop_assert!(ctx.conflict_sets[j].contains(&i));
                }
                if let Some(p) = ctx.prev[i] {
                    prop_assert!(p < i);
                    prop_assert!(!ctx.conflict_sets[i].contains(&p));
                    prop_assert!(records[p].end_frame < records[i].start_frame);
                }
                if let Some(nx) = ctx.next[i] {
                    prop_assert!(nx > i);
                    prop_assert_eq!(ctx.prev[nx], Some(i));
                }
                if i > 0 {
                    prop_assert!(ctx.segment_of[i] >= ctx.segment_of[i - 1]);
                    let cut = records[i].start_frame - records[i - 1].start_frame > gap;
                    prop_assert_eq!(
                        ctx.segment_of[i] - ctx.segment_of[i - 1],
                        usize::from(cut)
                    );
                    prop_assert_eq!(ctx.changepoints.contains(&i), cut);
                }
            }
        }

        #[test]
        fn aggregate_count_matches_block_arithmetic(
            lens in proptest::collection::vec(1usize..40, 1..8),
            r in 1usize..12,
        ) {
            // well-separated chains so linking cannot merge them
            let mut dets = Vec::new();
            for (ci, len) in lens.iter().enumerate() {
                for f in 0..*len {
                    dets.push(Detection {
                        frame: f as u32,
                        center: (1000.0 * ci as f64, 0.0),
                        width: 10.0,
                        features: vec![ci as f64],
                    });
                }
            }
            dets.sort_by_key(|d| d.frame);
            let out = aggregate_detections(&dets, r, 0.5).unwrap();
            let expected: usize = lens.iter().map(|l| l / r).sum();
            prop_assert_eq!(out.len(), expected);
        }
    }
}
