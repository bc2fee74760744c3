//! Greedy CTC decoding, character error rate, corpus evaluation and Pareto
//! analysis over (parameter count, CER).

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SessionWindows;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Mat;
use crate::BLANK;

/// Best-path decoding: per-frame argmax (ties → lower id), collapse runs, drop blanks.
pub fn greedy_decode(logits: &Mat) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..logits.rows {
        let k = logits.argmax_row(t) as u32;
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Edit counts aligning a prediction to a reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn add(&mut self, o: &EditCounts) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.reference_len += o.reference_len;
    }

    pub fn breakdown(&self) -> Result<CerBreakdown> {
        if self.reference_len == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(CerBreakdown {
            substitutions: self.substitutions,
            deletions: self.deletions,
            insertions: self.insertions,
            reference_len: self.reference_len,
            cer: self.distance() as f64 * 100.0 / self.reference_len as f64,
        })
    }
}

/// S, D, I, N and `cer = (S + D + I) · 100 / N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
    pub cer: f64,
}

impl CerBreakdown {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Minimal unit-cost alignment of `pred` onto `reference`.
///
/// Traceback ties prefer substitution (or match), then deletion, then insertion.
pub fn edit_counts<T: PartialEq>(pred: &[T], reference: &[T]) -> EditCounts {
    let n = reference.len();
    let m = pred.len();
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        dp[i * w] = i;
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != pred[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut counts = EditCounts { reference_len: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == pred[j - 1];
            if dp[(i - 1) * w + j - 1] + usize::from(!same) == here {
                if !same {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Character error rate of `pred` against `reference`; errors on an empty reference.
pub fn cer<T: PartialEq>(pred: &[T], reference: &[T]) -> Result<CerBreakdown> {
    edit_counts(pred, reference).breakdown()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionCer {
    pub user_id: String,
    pub session_id: String,
    pub breakdown: CerBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Micro-average: total edits over total reference length.
    pub aggregate: CerBreakdown,
    pub per_session: Vec<SessionCer>,
    pub checkpoint_id: String,
    pub split: String,
}

/// Edit counts of greedy predictions for every window of every session.
pub fn session_edit_counts(model: &Model, sessions: &[SessionWindows]) -> Result<Vec<EditCounts>> {
    sessions
        .iter()
        .map(|s| {
            let per_window: Vec<EditCounts> = s
                .windows
                .par_iter()
                .map(|w| {
                    let logits = model.forward(&w.signal)?;
                    Ok(edit_counts(&greedy_decode(&logits), &w.target))
                })
                .collect::<Result<_>>()?;
            let mut total = EditCounts::default();
            per_window.iter().for_each(|c| total.add(c));
            Ok(total)
        })
        .collect()
}

/// Micro-averaged CER over a set of sessions.
pub fn corpus_cer(model: &Model, sessions: &[SessionWindows]) -> Result<CerBreakdown> {
    let mut total = EditCounts::default();
    session_edit_counts(model, sessions)?.iter().for_each(|c| total.add(c));
    total.breakdown()
}

pub fn evaluate(
    model: &Model,
    sessions: &[SessionWindows],
    checkpoint_id: &str,
    split: &str,
) -> Result<EvalReport> {
    if sessions.is_empty() {
        return Err(Error::EmptyManifest("no sessions to evaluate".into()));
    }
    let counts = session_edit_counts(model, sessions)?;
    let mut total = EditCounts::default();
    let mut per_session = Vec::with_capacity(sessions.len());
    for (s, c) in sessions.iter().zip(&counts) {
        total.add(c);
        per_session.push(SessionCer {
            user_id: s.user_id.clone(),
            session_id: s.session_id.clone(),
            breakdown: c.breakdown()?,
        });
    }
    Ok(EvalReport {
        aggregate: total.breakdown()?,
        per_session,
        checkpoint_id: checkpoint_id.to_string(),
        split: split.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub params: u64,
    pub cer: f64,
    pub tag: String,
}

/// Points not dominated by any point with `params ≤` and strictly lower CER.
/// Input order is preserved.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    points
        .iter()
        .filter(|p| !points.iter().any(|q| q.params <= p.params && q.cer < p.cer))
        .cloned()
        .collect()
}

/// Reads a `params,cer,tag` CSV.
pub fn read_points_csv<R: Read>(reader: R) -> Result<Vec<ParetoPoint>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["params", "cer", "tag"] {
        return Err(Error::MalformedHeader(format!(
            "expected CSV header params,cer,tag, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let points: Vec<ParetoPoint> = rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    if let Some(p) = points.iter().find(|p| p.params == 0) {
        return Err(Error::InvalidConfig(format!("point {:?} has zero parameters", p.tag)));
    }
    Ok(points)
}

pub fn write_points_csv<W: Write>(writer: W, points: &[ParetoPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if points.is_empty() {
        w.write_record(["params", "cer", "tag"]).map_err(csv_err)?;
    }
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

fn csv_err(e: csv::Error) -> Error {
    Error::MalformedHeader(format!("csv: {e}"))
}
