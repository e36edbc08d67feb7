//! Fit-result persistence: per-tracklet assignments and change flags,
//! component means ("atoms"), and the log-probability trace as CSV.
//! All files are plain text with stable formatting, so identical fits
//! produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::{FitResult, Mode};

/// The persisted view of a fit (or of a generated ground truth).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub mode: Mode,
    pub ids: Vec<usize>,
    pub z: Vec<usize>,
    pub c_flags: Vec<bool>,
    pub dim: usize,
    pub atoms: BTreeMap<usize, Vec<f64>>,
}

impl ResultFile {
    pub fn from_fit(result: &FitResult, ids: &[usize]) -> Self {
        ResultFile {
            mode: result.mode,
            ids: ids.to_vec(),
            z: result.state.z.clone(),
            c_flags: result.state.c_flags.clone(),
            dim: result.hyper.dim(),
            atoms: result.state.atoms().into_iter().collect(),
        }
    }
}

pub fn write_result(r: &ResultFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out: Vec<u8> = Vec::new();
    write!(
        out,
        "tcr 1\nmode {}\ncount {}\ndim {}\ncomponents {}\nassignments\n",
        r.mode,
        r.ids.len(),
        r.dim,
        r.atoms.len()
    )
    .unwrap();
    for i in 0..r.ids.len() {
        writeln!(out, "{} {} {}", r.ids[i], r.z[i], u8::from(r.c_flags[i])).unwrap();
    }
    out.extend_from_slice(b"atoms\n");
    for (k, phi) in &r.atoms {
        write!(out, "{k}").unwrap();
        for v in phi {
            // 17 significant digits round-trip doubles exactly
            write!(out, " {v:.16e}").unwrap();
        }
        out.push(b'\n');
    }
    out.extend_from_slice(b"end\n");
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_result(path: impl AsRef<Path>) -> Result<ResultFile> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&path_str, e))?;
    let mut lines = text.lines().enumerate();
    let mut next = |expect: &str| -> Result<(usize, String)> {
        lines
            .next()
            .map(|(n, l)| (n + 1, l.to_string()))
            .ok_or_else(|| Error::Parse {
                path: path_str.clone(),
                at: "end of file".into(),
                msg: format!("expected {expect}"),
            })
    };
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        at: format!("line {line}"),
        msg,
    };

    let (n, magic) = next("'tcr 1'")?;
    if magic != "tcr 1" {
        return Err(perr(n, format!("expected 'tcr 1', got '{magic}'")));
    }
    let (n, mode_line) = next("'mode <m>'")?;
    let mode: Mode = mode_line
        .strip_prefix("mode ")
        .ok_or_else(|| perr(n, "expected 'mode <m>'".into()))?
        .parse()?;
    let mut int_field = |key: &str| -> Result<usize> {
        let (n, line) = next(key)?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| perr(n, format!("expected '{key} <int>', got '{line}'")))
    };
    let count = int_field("count")?;
    let dim = int_field("dim")?;
    let n_components = int_field("components")?;
    let (n, marker) = next("'assignments'")?;
    if marker != "assignments" {
        return Err(perr(n, format!("expected 'assignments', got '{marker}'")));
    }

    let mut ids = Vec::with_capacity(count);
    let mut z = Vec::with_capacity(count);
    let mut c_flags = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, line) = next("an assignment line")?;
        let mut tok = line.split(' ');
        let parse = |t: Option<&str>| t.and_then(|t| t.parse::<usize>().ok());
        match (parse(tok.next()), parse(tok.next()), parse(tok.next()), tok.next()) {
            (Some(id), Some(zi), Some(ci @ (0 | 1)), None) => {
                ids.push(id);
                z.push(zi);
                c_flags.push(ci == 1);
            }
            _ => return Err(perr(n, format!("bad assignment line '{line}'"))),
        }
    }
    let (n, marker) = next("'atoms'")?;
    if marker != "atoms" {
        return Err(perr(n, format!("expected 'atoms', got '{marker}'")));
    }
    let mut atoms = BTreeMap::new();
    for _ in 0..n_components {
        let (n, line) = next("an atom line")?;
        let mut tok = line.split(' ');
        let k: usize = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(n, format!("bad atom line '{line}'")))?;
        let phi: Vec<f64> = tok
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| perr(n, format!("bad atom values for component {k}")))?;
        if phi.len() != dim {
            return Err(perr(n, format!("atom {k} has {} values, expected {dim}", phi.len())));
        }
        atoms.insert(k, phi);
    }
    let (n, trailer) = next("'end'")?;
    if trailer != "end" {
        return Err(perr(n, format!("expected 'end', got '{trailer}'")));
    }
    Ok(ResultFile { mode, ids, z, c_flags, dim, atoms })
}

/// Writes the per-sweep joint log-probability trace as CSV.
pub fn write_trace(trace: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("sweep,log_prob\n");
    for (i, lp) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{lp:.9e}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
