//! Latent-class generative model over LF verdicts.
//!
//! The model: a hidden binary label `y` per query with prior `pi`, and per
//! labeling function an emission probability (propensity `r_j`) and an
//! accuracy `a_j` giving the chance an emitted vote matches `y`. Abstentions
//! are class-independent, so they cancel out of the posterior. Fitting is
//! plain EM with closed-form M-steps; filtering keeps queries whose posterior
//! clears a threshold and that received at least one vote.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{LabelMatrix, Verdict};
use crate::trace::Trace;

/// Parameter clamp bounds; keeps every probability away from 0 and 1.
pub const PARAM_CLAMP: (f64, f64) = (1e-4, 1.0 - 1e-4);

/// Default posterior threshold for keeping a query.
pub const DEFAULT_KEEP_THRESHOLD: f64 = 0.5;

fn clamp(p: f64) -> f64 {
    p.clamp(PARAM_CLAMP.0, PARAM_CLAMP.1)
}

/// Per-LF accuracy/propensity pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfParams {
    /// P(vote = truth | vote emitted).
    pub accuracy: f64,
    /// P(vote emitted).
    pub propensity: f64,
}

/// Fitted (or initial) label-model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModelParams {
    /// P(true label is CORRECT).
    pub prior: f64,
    pub lfs: Vec<LfParams>,
}

impl LabelModelParams {
    /// Symmetry-breaking defaults: accuracies start above one half so EM
    /// drifts toward the labeling where votes mostly tell the truth.
    pub fn init(n_lfs: usize) -> Self {
        LabelModelParams {
            prior: 0.5,
            lfs: vec![
                LfParams {
                    accuracy: 0.7,
                    propensity: 0.5,
                };
                n_lfs
            ],
        }
    }

    fn clamped(mut self) -> Self {
        self.prior = clamp(self.prior);
        for lf in &mut self.lfs {
            lf.accuracy = clamp(lf.accuracy);
            lf.propensity = clamp(lf.propensity);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| p > 0.0 && p < 1.0;
        if !ok(self.prior) || self.lfs.iter().any(|l| !ok(l.accuracy) || !(l.propensity > 0.0 && l.propensity <= 1.0)) {
            return Err(Error::usage("label model: parameters out of range"));
        }
        Ok(())
    }
}

/// P(CORRECT | verdict row). Abstain factors cancel, so only emitted votes
/// contribute.
pub fn posterior(params: &LabelModelParams, row: &[Verdict]) -> Result<f64> {
    if row.len() != params.lfs.len() {
        return Err(Error::usage(format!(
            "posterior: row has {} verdicts for {} LFs",
            row.len(),
            params.lfs.len()
        )));
    }
    let mut like_correct = params.prior;
    let mut like_incorrect = 1.0 - params.prior;
    for (lf, v) in params.lfs.iter().zip(row) {
        match v {
            Verdict::Correct => {
                like_correct *= lf.accuracy;
                like_incorrect *= 1.0 - lf.accuracy;
            }
            Verdict::Incorrect => {
                like_correct *= 1.0 - lf.accuracy;
                like_incorrect *= lf.accuracy;
            }
            Verdict::Abstain => {}
        }
    }
    Ok(like_correct / (like_correct + like_incorrect))
}

/// Observed-data log-likelihood, propensity factors included.
pub fn log_likelihood(params: &LabelModelParams, matrix: &LabelMatrix) -> f64 {
    let mut ll = 0.0;
    for row in matrix.iter_rows() {
        let mut p1 = params.prior;
        let mut p0 = 1.0 - params.prior;
        for (lf, v) in params.lfs.iter().zip(row) {
            match v {
                Verdict::Abstain => {
                    p1 *= 1.0 - lf.propensity;
                    p0 *= 1.0 - lf.propensity;
                }
                Verdict::Correct => {
                    p1 *= lf.propensity * lf.accuracy;
                    p0 *= lf.propensity * (1.0 - lf.accuracy);
                }
                Verdict::Incorrect => {
                    p1 *= lf.propensity * (1.0 - lf.accuracy);
                    p0 *= lf.propensity * lf.accuracy;
                }
            }
        }
        ll += (p1 + p0).ln();
    }
    ll
}

/// Result of an EM fit, with the likelihood trajectory for monotonicity
/// checks.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: LabelModelParams,
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits the model by EM. The likelihood is non-decreasing across iterations;
/// iteration stops once the gain drops below `tol` or `max_iters` is hit.
pub fn fit_em(
    matrix: &LabelMatrix,
    init: &LabelModelParams,
    tol: f64,
    max_iters: usize,
) -> Result<FitOutcome> {
    if matrix.rows() == 0 {
        return Err(Error::data("fit_em: empty label matrix"));
    }
    if init.lfs.len() != matrix.cols() {
        return Err(Error::usage(format!(
            "fit_em: init has {} LFs for a {}-column matrix",
            init.lfs.len(),
            matrix.cols()
        )));
    }
    if tol <= 0.0 {
        return Err(Error::usage("fit_em: tol must be positive"));
    }
    init.validate()?;

    let m = matrix.rows();
    let k = matrix.cols();
    let mut params = init.clone().clamped();
    let mut lls = vec![log_likelihood(&params, matrix)];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        // E-step: posterior responsibility per row
        let mut sum_t = 0.0;
        let mut vote_truth = vec![0.0f64; k];
        let mut vote_count = vec![0usize; k];
        for row in matrix.iter_rows() {
            let t = posterior(&params, row)?;
            sum_t += t;
            for (j, v) in row.iter().enumerate() {
                match v {
                    Verdict::Correct => {
                        vote_truth[j] += t;
                        vote_count[j] += 1;
                    }
                    Verdict::Incorrect => {
                        vote_truth[j] += 1.0 - t;
                        vote_count[j] += 1;
                    }
                    Verdict::Abstain => {}
                }
            }
        }
        // M-step: closed-form updates, clamped
        params.prior = clamp(sum_t / m as f64);
        for j in 0..k {
            if vote_count[j] > 0 {
                params.lfs[j].accuracy = clamp(vote_truth[j] / vote_count[j] as f64);
            }
            params.lfs[j].propensity = clamp(vote_count[j] as f64 / m as f64);
        }
        let ll = log_likelihood(&params, matrix);
        let gain = ll - lls.last().unwrap();
        lls.push(ll);
        if gain.abs() < tol {
            converged = true;
            break;
        }
    }

    Ok(FitOutcome {
        params,
        log_likelihoods: lls,
        iterations,
        converged,
    })
}

/// Outcome accounting for a filtering pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub total: usize,
    pub kept: usize,
    pub discarded_incorrect: usize,
    pub discarded_all_abstain: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw_error_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kept_error_rate: Option<f64>,
}

/// Keeps a query iff at least one LF voted and the posterior strictly
/// exceeds the threshold. Order is preserved among kept queries.
pub fn filter_trace(
    trace: &Trace,
    matrix: &LabelMatrix,
    params: &LabelModelParams,
    keep_threshold: f64,
) -> Result<(Trace, CurationReport)> {
    if matrix.rows() != trace.len() {
        return Err(Error::usage(format!(
            "filter_trace: matrix has {} rows for a {}-query trace",
            matrix.rows(),
            trace.len()
        )));
    }
    if !(keep_threshold > 0.0 && keep_threshold < 1.0) {
        return Err(Error::usage("filter_trace: keep_threshold must lie in (0, 1)"));
    }
    for (id, qid) in matrix.query_ids.iter().zip(trace.queries()) {
        if *id != qid.id {
            return Err(Error::usage(format!(
                "filter_trace: matrix row for {id} does not match trace query {}",
                qid.id
            )));
        }
    }

    let mut kept = Vec::new();
    let mut discarded_incorrect = 0;
    let mut discarded_all_abstain = 0;
    for (q, row) in trace.queries().iter().zip(matrix.iter_rows()) {
        if row.iter().all(|v| *v == Verdict::Abstain) {
            discarded_all_abstain += 1;
            continue;
        }
        if posterior(params, row)? > keep_threshold {
            kept.push(q.clone());
        } else {
            discarded_incorrect += 1;
        }
    }

    let error_rate = |qs: &[crate::trace::Query]| -> Option<f64> {
        if qs.is_empty() || qs.iter().any(|q| q.gold_correct.is_none()) {
            return None;
        }
        let errs = qs.iter().filter(|q| q.gold_correct == Some(false)).count();
        Some(errs as f64 / qs.len() as f64)
    };
    let raw_error_rate = error_rate(trace.queries());
    let kept_error_rate = error_rate(&kept);

    let report = CurationReport {
        total: trace.len(),
        kept: kept.len(),
        discarded_incorrect,
        discarded_all_abstain,
        raw_error_rate,
        kept_error_rate,
    };
    let kept_trace = Trace::new(kept)?;
    Ok((kept_trace, report))
}
