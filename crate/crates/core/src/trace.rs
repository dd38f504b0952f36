//! Canonical data model for voice-query traces.
//!
//! A trace is a flat list of timestamped queries, one JSONL record per line.
//! Sessions are derived, never stored: queries from the same device chain
//! into a session while consecutive gaps stay within the session window.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on audio length; the upstream recorder never sends more.
pub const MAX_AUDIO_SECONDS: f64 = 10.0;

/// Maximal gap between consecutive queries of one session, in milliseconds.
pub const SESSION_WINDOW_MS: u64 = 60_000;

/// One voice query: audio is represented only by its duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub device_id: String,
    pub timestamp_ms: u64,
    pub audio_seconds: f64,
    /// Weak transcript from the upstream recognizer, lowercase.
    pub transcript: String,
    /// Final confidence score reported by the upstream recognizer.
    pub confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gold_transcript: Option<String>,
    /// Synthetic-truth flag: weak transcript equals the gold one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gold_correct: Option<bool>,
}

impl Query {
    /// Checks the per-query invariants, lowercasing the transcripts in place.
    fn normalize_and_validate(&mut self) -> Result<()> {
        if !(self.audio_seconds > 0.0 && self.audio_seconds <= MAX_AUDIO_SECONDS) {
            return Err(Error::data(format!(
                "query {}: audio length {} exceeds 10 s bound or is non-positive",
                self.id, self.audio_seconds
            )));
        }
        self.transcript = self.transcript.to_lowercase();
        if let Some(gold) = self.gold_transcript.take() {
            self.gold_transcript = Some(gold.to_lowercase());
        }
        Ok(())
    }
}

/// A whole trace, sorted by `(timestamp_ms, id)` with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    queries: Vec<Query>,
}

impl Trace {
    /// Builds a trace from raw queries: validates, re-sorts, checks id
    /// uniqueness.
    pub fn new(mut queries: Vec<Query>) -> Result<Self> {
        for q in &mut queries {
            q.normalize_and_validate()?;
        }
        queries.sort_by(|a, b| {
            a.timestamp_ms
                .cmp(&b.timestamp_ms)
                .then_with(|| a.id.cmp(&b.id))
        });
        let mut seen = std::collections::HashSet::new();
        for q in &queries {
            if !seen.insert(q.id.as_str()) {
                return Err(Error::data(format!("duplicate query id {}", q.id)));
            }
        }
        Ok(Trace { queries })
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Audio lengths in trace order.
    pub fn audio_lengths(&self) -> Vec<f64> {
        self.queries.iter().map(|q| q.audio_seconds).collect()
    }
}

/// Consecutive same-device queries no more than the session window apart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub device_id: String,
    pub queries: Vec<Query>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Loads a JSONL trace file; every line must be a well-formed query record.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open trace {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut queries = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!(
                "{}:{}: malformed query record: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        queries.push(q);
    }
    Trace::new(queries).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes a trace as JSONL, one query per line, optional fields omitted.
pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for q in trace.queries() {
        serde_json::to_writer(&mut w, q).map_err(|e| Error::data(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Groups a trace into sessions: per device, maximal runs of queries where
/// each consecutive gap is at most the session window. Sessions are returned
/// ordered by their first query's `(timestamp_ms, id)`.
pub fn group_sessions(trace: &Trace) -> Vec<Session> {
    let mut sessions: Vec<Session> = Vec::new();
    // latest open session per device; keys borrow from the trace
    let mut open: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for q in trace.queries() {
        let chained = open.get(q.device_id.as_str()).copied().filter(|&idx| {
            q.timestamp_ms
                .saturating_sub(sessions[idx].queries.last().unwrap().timestamp_ms)
                <= SESSION_WINDOW_MS
        });
        match chained {
            Some(idx) => sessions[idx].queries.push(q.clone()),
            None => {
                sessions.push(Session {
                    device_id: q.device_id.clone(),
                    queries: vec![q.clone()],
                });
                open.insert(q.device_id.as_str(), sessions.len() - 1);
            }
        }
    }
    sessions
}

/// Word error rate: word-level edit distance over the reference word count.
/// Both strings are lowercased and tokenized on whitespace first.
pub fn wer(reference: &str, hypothesis: &str) -> Result<f64> {
    let r = reference.to_lowercase();
    let h = hypothesis.to_lowercase();
    let ref_words: Vec<&str> = r.split_whitespace().collect();
    let hyp_words: Vec<&str> = h.split_whitespace().collect();
    if ref_words.is_empty() {
        return Err(Error::data("wer: empty reference after tokenization"));
    }
    let dist = levenshtein_words(&ref_words, &hyp_words);
    Ok(dist as f64 / ref_words.len() as f64)
}

/// Word-level Levenshtein distance with unit costs and O(min) memory.
fn levenshtein_words(a: &[&str], b: &[&str]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, wa) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, wb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(wa != wb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str, dev: &str, ts: u64, len: f64) -> Query {
        Query {
            id: id.to_string(),
            device_id: dev.to_string(),
            timestamp_ms: ts,
            audio_seconds: len,
            transcript: "netflix".to_string(),
            confidence: 0.8,
            gold_transcript: None,
            gold_correct: None,
        }
    }

    #[test]
    fn new_trace_sorts_and_rejects_duplicates() {
        let t = Trace::new(vec![q("b", "d", 10, 1.0), q("a", "d", 5, 1.0)]).unwrap();
        assert_eq!(t.queries()[0].id, "a");
        assert!(Trace::new(vec![q("a", "d", 1, 1.0), q("a", "d", 2, 1.0)]).is_err());
    }

    #[test]
    fn audio_bound_enforced() {
        let err = Trace::new(vec![q("a", "d", 0, 11.0)]).unwrap_err();
        assert!(err.to_string().contains("10 s bound"));
        assert!(Trace::new(vec![q("a", "d", 0, 0.0)]).is_err());
        assert!(Trace::new(vec![q("a", "d", 0, 10.0)]).is_ok());
    }

    #[test]
    fn transcripts_lowercased() {
        let mut query = q("a", "d", 0, 1.0);
        query.transcript = "NetFlix".to_string();
        let t = Trace::new(vec![query]).unwrap();
        assert_eq!(t.queries()[0].transcript, "netflix");
    }

    #[test]
    fn sessions_chain_on_sixty_second_gaps() {
        // gaps of 30 s and 59 s chain into one session of 3
        let t = Trace::new(vec![
            q("a", "d", 0, 1.0),
            q("b", "d", 30_000, 1.0),
            q("c", "d", 89_000, 1.0),
        ])
        .unwrap();
        let s = group_sessions(&t);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 3);
    }

    #[test]
    fn sessions_split_past_sixty_seconds() {
        let t = Trace::new(vec![q("a", "d", 0, 1.0), q("b", "d", 61_000, 1.0)]).unwrap();
        let s = group_sessions(&t);
        assert_eq!(s.len(), 2);
        // exactly 60 s still chains
        let t = Trace::new(vec![q("a", "d", 0, 1.0), q("b", "d", 60_000, 1.0)]).unwrap();
        assert_eq!(group_sessions(&t).len(), 1);
    }

    #[test]
    fn sessions_never_mix_devices() {
        let t = Trace::new(vec![
            q("a", "d1", 0, 1.0),
            q("b", "d2", 1_000, 1.0),
            q("c", "d1", 2_000, 1.0),
            q("d", "d2", 3_000, 1.0),
        ])
        .unwrap();
        let s = group_sessions(&t);
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|sess| sess
            .queries
            .iter()
            .all(|query| query.device_id == sess.device_id)));
        assert_eq!(s[0].device_id, "d1");
        assert_eq!(s[1].device_id, "d2");
    }

    #[test]
    fn session_partition_covers_trace() {
        let t = Trace::new(vec![
            q("a", "d1", 0, 1.0),
            q("b", "d1", 120_000, 1.0),
            q("c", "d2", 50, 1.0),
        ])
        .unwrap();
        let s = group_sessions(&t);
        let total: usize = s.iter().map(Session::len).sum();
        assert_eq!(total, t.len());
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer("netflix", "netflix").unwrap(), 0.0);
        // distance 2 over 4 reference words
        assert_eq!(wer("turn on the tv", "turn off tv").unwrap(), 0.5);
        assert_eq!(wer("netflix", "").unwrap(), 1.0);
        assert!(wer("", "netflix").is_err());
        assert_eq!(wer("A B", "a b").unwrap(), 0.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut gold = q("a", "d", 3, 2.5);
        gold.gold_transcript = Some("netflix".to_string());
        gold.gold_correct = Some(true);
        let t = Trace::new(vec![gold, q("b", "d", 9, 0.5)]).unwrap();
        save_trace(&t, &path).unwrap();
        let back = load_trace(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn load_empty_file_gives_empty_trace() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_trace(&path).unwrap().is_empty());
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"nonsense\": true}\n").unwrap();
        let err = load_trace(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "missing line number: {err}");
    }
}
