//! The three weak labeling functions and the verdict matrix.
//!
//! Each labeling function inspects one query plus cheap context (its session,
//! the per-transcript confidence percentiles, the device's next query) and
//! votes CORRECT, INCORRECT, or abstains. Applying all three to a trace
//! yields the noisy label matrix the generative model is fitted on.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{group_sessions, Query, Session, Trace};

/// Gap below which a follow-up query marks the previous one as a likely miss.
pub const RAPID_REPEAT_WINDOW_MS: u64 = 13_000;

/// Default minimum group size for percentile statistics.
pub const DEFAULT_MIN_COUNT: usize = 5;

/// Three-valued labeling-function verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Correct,
    Incorrect,
    Abstain,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Correct => "CORRECT",
            Verdict::Incorrect => "INCORRECT",
            Verdict::Abstain => "ABSTAIN",
        }
    }
}

/// Per-transcript confidence percentile entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    pub p20: f64,
    pub p80: f64,
    pub count: usize,
}

/// Confidence percentiles grouped by transcript text. Transcripts with fewer
/// than `min_count` occurrences are omitted; their percentiles are undefined.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfidenceTable {
    entries: HashMap<String, ConfidenceStats>,
    min_count: usize,
}

impl ConfidenceTable {
    pub fn get(&self, transcript: &str) -> Option<&ConfidenceStats> {
        self.entries.get(transcript)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }
}

/// Nearest-rank percentile: value at 1-based index `ceil(p * n)` of the
/// sorted sample.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let idx = (p * n as f64).ceil() as usize;
    sorted[idx.clamp(1, n) - 1]
}

/// Builds the per-transcript confidence percentile table.
pub fn build_confidence_table(trace: &Trace, min_count: usize) -> Result<ConfidenceTable> {
    if min_count < 1 {
        return Err(Error::usage("confidence table: min_count must be >= 1"));
    }
    let mut groups: HashMap<&str, Vec<f64>> = HashMap::new();
    for q in trace.queries() {
        groups.entry(q.transcript.as_str()).or_default().push(q.confidence);
    }
    let mut entries = HashMap::new();
    for (transcript, mut scores) in groups {
        if scores.len() < min_count {
            continue;
        }
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        entries.insert(
            transcript.to_string(),
            ConfidenceStats {
                p20: nearest_rank(&scores, 0.2),
                p80: nearest_rank(&scores, 0.8),
                count: scores.len(),
            },
        );
    }
    Ok(ConfidenceTable { entries, min_count })
}

/// Session-position LF: the last query of a session is taken as correct;
/// a non-final query of a session of length three or more as incorrect.
pub fn lf_session_position(q: &Query, session: &Session) -> Result<Verdict> {
    let pos = session
        .queries
        .iter()
        .position(|s| s.id == q.id)
        .ok_or_else(|| Error::usage(format!("query {} is not in the given session", q.id)))?;
    let last = pos + 1 == session.len();
    Ok(if last {
        Verdict::Correct
    } else if session.len() >= 3 {
        Verdict::Incorrect
    } else {
        Verdict::Abstain
    })
}

/// Confidence LF with transcript-specific thresholds: scores at or above the
/// 80th percentile vote correct, at or below the 20th vote incorrect.
pub fn lf_asr_confidence(q: &Query, table: &ConfidenceTable) -> Verdict {
    match table.get(&q.transcript) {
        None => Verdict::Abstain,
        Some(stats) if q.confidence >= stats.p80 => Verdict::Correct,
        Some(stats) if q.confidence <= stats.p20 => Verdict::Incorrect,
        Some(_) => Verdict::Abstain,
    }
}

/// Rapid-repetition LF: a same-device follow-up within thirteen seconds
/// (inclusive) marks this query as incorrect.
pub fn lf_rapid_repetition(q: &Query, next_same_device: Option<&Query>) -> Result<Verdict> {
    match next_same_device {
        None => Ok(Verdict::Abstain),
        Some(next) => {
            if next.device_id != q.device_id {
                return Err(Error::usage(format!(
                    "next query {} belongs to device {}, not {}",
                    next.id, next.device_id, q.device_id
                )));
            }
            if next.timestamp_ms.saturating_sub(q.timestamp_ms) <= RAPID_REPEAT_WINDOW_MS {
                Ok(Verdict::Incorrect)
            } else {
                Ok(Verdict::Abstain)
            }
        }
    }
}

/// Dense query-by-LF verdict grid; row order matches trace order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub query_ids: Vec<String>,
    pub lf_names: Vec<&'static str>,
    verdicts: Vec<Verdict>,
}

impl LabelMatrix {
    /// Assembles a matrix from raw parts, checking dimensional consistency.
    pub fn from_parts(
        query_ids: Vec<String>,
        lf_names: Vec<&'static str>,
        verdicts: Vec<Verdict>,
    ) -> Result<Self> {
        if verdicts.len() != query_ids.len() * lf_names.len() {
            return Err(Error::usage(format!(
                "label matrix: {} verdicts for {} rows x {} columns",
                verdicts.len(),
                query_ids.len(),
                lf_names.len()
            )));
        }
        Ok(LabelMatrix {
            query_ids,
            lf_names,
            verdicts,
        })
    }

    pub fn rows(&self) -> usize {
        self.query_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.lf_names.len()
    }

    pub fn row(&self, i: usize) -> &[Verdict] {
        let k = self.cols();
        &self.verdicts[i * k..(i + 1) * k]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[Verdict]> {
        (0..self.rows()).map(move |i| self.row(i))
    }

    /// Writes the matrix as audit CSV: `query_id,lf_sp,lf_ac,lf_rr`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        write!(w, "query_id")?;
        for name in &self.lf_names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for (i, id) in self.query_ids.iter().enumerate() {
            write!(w, "{id}")?;
            for v in self.row(i) {
                write!(w, ",{}", v.as_str())?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Applies all three LFs to every query. Columns are ordered
/// (`lf_sp`, `lf_ac`, `lf_rr`).
pub fn apply_lfs(trace: &Trace, table: &ConfidenceTable) -> Result<LabelMatrix> {
    let sessions = group_sessions(trace);
    // query id -> (session index, position)
    let mut in_session: HashMap<&str, (usize, usize)> = HashMap::new();
    for (si, s) in sessions.iter().enumerate() {
        for (pos, q) in s.queries.iter().enumerate() {
            in_session.insert(q.id.as_str(), (si, pos));
        }
    }
    // trace index -> trace index of the device's next query
    let mut next_same_device: Vec<Option<usize>> = vec![None; trace.len()];
    let mut last_seen: HashMap<&str, usize> = HashMap::new();
    for (i, q) in trace.queries().iter().enumerate() {
        if let Some(&prev) = last_seen.get(q.device_id.as_str()) {
            next_same_device[prev] = Some(i);
        }
        last_seen.insert(q.device_id.as_str(), i);
    }

    let mut verdicts = Vec::with_capacity(trace.len() * 3);
    let mut query_ids = Vec::with_capacity(trace.len());
    for (i, q) in trace.queries().iter().enumerate() {
        let (si, _) = in_session[q.id.as_str()];
        verdicts.push(lf_session_position(q, &sessions[si])?);
        verdicts.push(lf_asr_confidence(q, table));
        let next = next_same_device[i].map(|j| &trace.queries()[j]);
        verdicts.push(lf_rapid_repetition(q, next)?);
        query_ids.push(q.id.clone());
    }
    Ok(LabelMatrix {
        query_ids,
        lf_names: vec!["lf_sp", "lf_ac", "lf_rr"],
        verdicts,
    })
}
