//! Synthetic trace generator with known ground truth.
//!
//! Models the behavioral loop behind production traces: a device issues a
//! command, the recognizer sometimes mistranscribes it, and the user tends to
//! repeat the command shortly after a miss. Sessions end on a success or when
//! the user gives up. Every emitted query carries its gold transcript and a
//! correctness flag, so downstream curation quality can be measured exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Query, Trace, MAX_AUDIO_SECONDS};

/// Mean/stddev pair for a confidence distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    pub mean: f64,
    pub stddev: f64,
}

/// Generator configuration; ships with paper-shaped defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_devices: usize,
    pub sessions_per_device: usize,
    /// Probability a single utterance is mistranscribed.
    pub mistranscription_prob: f64,
    /// Probability the user repeats the command after a miss.
    pub repeat_prob_after_error: f64,
    /// Uniform delay window (seconds) before a repeat.
    pub repeat_delay_seconds: (f64, f64),
    /// `(mu, sigma)` of the log-normal audio length in seconds.
    pub length_lognormal: (f64, f64),
    pub confidence_correct: ConfidenceParams,
    pub confidence_incorrect: ConfidenceParams,
    pub vocabulary: Vec<String>,
    pub seed: u64,
    /// Probability an utterance is recorded at the full ten-second window
    /// (button held long; trailing silence). Speech stays short, audio does
    /// not have to.
    #[serde(default)]
    pub long_audio_prob: f64,
    /// Probability the user immediately issues another command after a
    /// success. Keeps sessions realistic: not every rapid follow-up is a
    /// correction.
    #[serde(default = "default_quick_followup")]
    pub quick_followup_prob: f64,
    /// When set, audio length is this scale times a per-command base length
    /// (derived from the command's word count) times the log-normal jitter.
    /// When unset, lengths are drawn i.i.d. from the log-normal alone.
    #[serde(default)]
    pub command_length_scale: Option<f64>,
    /// Safety cap on repeats per session so degenerate configs terminate.
    #[serde(default = "default_max_repeats")]
    pub max_repeats_per_session: usize,
}

fn default_max_repeats() -> usize {
    8
}

fn default_quick_followup() -> f64 {
    0.10
}

/// Characteristic audio length of a spoken command: a fixed press overhead
/// plus time per word.
pub fn command_base_seconds(command: &str) -> f64 {
    let words = command.split_whitespace().count().max(1);
    0.4 + 0.35 * words as f64
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_devices: 50,
            sessions_per_device: 20,
            mistranscription_prob: 0.25,
            repeat_prob_after_error: 0.8,
            repeat_delay_seconds: (1.5, 11.0),
            length_lognormal: (-0.1, 0.55),
            confidence_correct: ConfidenceParams {
                mean: 0.78,
                stddev: 0.10,
            },
            confidence_incorrect: ConfidenceParams {
                mean: 0.47,
                stddev: 0.14,
            },
            vocabulary: default_vocabulary(),
            seed: 1,
            long_audio_prob: 0.0,
            quick_followup_prob: default_quick_followup(),
            command_length_scale: None,
            max_repeats_per_session: default_max_repeats(),
        }
    }
}

fn default_vocabulary() -> Vec<String> {
    [
        "netflix",
        "hulu",
        "youtube",
        "free movies for me",
        "turn on the tv",
        "turn off the tv",
        "watch the news",
        "kids shows",
        "sports tonight",
        "what is on hbo",
        "play some music",
        "weather tomorrow",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 || self.sessions_per_device == 0 {
            return Err(Error::usage("generator: device and session counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mistranscription_prob)
            || !(0.0..=1.0).contains(&self.repeat_prob_after_error)
            || !(0.0..=1.0).contains(&self.long_audio_prob)
            || !(0.0..=1.0).contains(&self.quick_followup_prob)
        {
            return Err(Error::usage("generator: probabilities must lie in [0, 1]"));
        }
        if matches!(self.command_length_scale, Some(s) if s <= 0.0) {
            return Err(Error::usage("generator: command length scale must be positive"));
        }
        let (lo, hi) = self.repeat_delay_seconds;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::usage("generator: repeat delay range invalid"));
        }
        if self.length_lognormal.1 < 0.0 {
            return Err(Error::usage("generator: length sigma must be non-negative"));
        }
        if self.confidence_correct.stddev < 0.0 || self.confidence_incorrect.stddev < 0.0 {
            return Err(Error::usage("generator: confidence stddev must be non-negative"));
        }
        if self.vocabulary.is_empty() {
            return Err(Error::usage("generator: vocabulary must be non-empty"));
        }
        Ok(())
    }
}

/// Generates a synthetic trace. Deterministic for a fixed config.
pub fn generate_trace(cfg: &GenConfig) -> Result<Trace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mu, sigma) = cfg.length_lognormal;
    let length_dist = LogNormal::new(mu, sigma.max(1e-12))
        .map_err(|e| Error::usage(format!("generator: bad length parameters: {e}")))?;
    let conf_ok = Normal::new(cfg.confidence_correct.mean, cfg.confidence_correct.stddev.max(1e-12))
        .map_err(|e| Error::usage(format!("generator: bad confidence parameters: {e}")))?;
    let conf_bad = Normal::new(
        cfg.confidence_incorrect.mean,
        cfg.confidence_incorrect.stddev.max(1e-12),
    )
    .map_err(|e| Error::usage(format!("generator: bad confidence parameters: {e}")))?;
    let (delay_lo, delay_hi) = cfg.repeat_delay_seconds;
    let repeat_delay = Uniform::new_inclusive(delay_lo.max(0.001), delay_hi.max(delay_lo + 0.001));
    let followup_delay = Uniform::new_inclusive(2.0, 13.0);
    let session_gap = Uniform::new_inclusive(120.0, 900.0);

    let mut queries = Vec::new();
    let mut next_id = 0u64;
    for device in 0..cfg.n_devices {
        let device_id = format!("dev-{device:05}");
        // stagger devices so traffic interleaves
        let mut clock_ms = (device as u64) * 37_321 + 1_000;
        for _ in 0..cfg.sessions_per_device {
            let mut command = cfg.vocabulary[rng.gen_range(0..cfg.vocabulary.len())].clone();
            let mut attempts = 0usize;
            loop {
                let wrong = rng.gen::<f64>() < cfg.mistranscription_prob;
                let transcript = if wrong && cfg.vocabulary.len() > 1 {
                    // the recognizer outputs a different command from the vocabulary
                    let mut other = rng.gen_range(0..cfg.vocabulary.len() - 1);
                    if cfg.vocabulary[other] == command {
                        other = cfg.vocabulary.len() - 1;
                    }
                    cfg.vocabulary[other].clone()
                } else {
                    command.clone()
                };
                let gold_correct = transcript == command;
                let confidence = if gold_correct {
                    conf_ok.sample(&mut rng)
                } else {
                    conf_bad.sample(&mut rng)
                }
                .clamp(0.0, 1.0);
                let jitter = length_dist.sample(&mut rng);
                let audio_seconds = if rng.gen::<f64>() < cfg.long_audio_prob {
                    MAX_AUDIO_SECONDS
                } else {
                    match cfg.command_length_scale {
                        Some(scale) => scale * command_base_seconds(&command) * jitter,
                        None => jitter,
                    }
                    .min(MAX_AUDIO_SECONDS)
                };
                queries.push(Query {
                    id: format!("q-{next_id:08}"),
                    device_id: device_id.clone(),
                    timestamp_ms: clock_ms,
                    audio_seconds,
                    transcript,
                    confidence,
                    gold_transcript: Some(command.clone()),
                    gold_correct: Some(gold_correct),
                });
                next_id += 1;
                attempts += 1;
                if gold_correct {
                    // success: user may chain straight into another command
                    if rng.gen::<f64>() < cfg.quick_followup_prob {
                        command = cfg.vocabulary[rng.gen_range(0..cfg.vocabulary.len())].clone();
                        clock_ms += (followup_delay.sample(&mut rng) * 1000.0) as u64;
                        attempts = 0;
                        continue;
                    }
                    break;
                }
                let repeats = attempts <= cfg.max_repeats_per_session
                    && rng.gen::<f64>() < cfg.repeat_prob_after_error;
                if !repeats {
                    break;
                }
                clock_ms += (repeat_delay.sample(&mut rng) * 1000.0) as u64;
            }
            clock_ms += (session_gap.sample(&mut rng) * 1000.0) as u64;
        }
    }
    Trace::new(queries)
}
