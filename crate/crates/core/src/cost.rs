//! Parameterized inference cost model.
//!
//! Compute time is quadratic in audio length (attention) on top of a linear
//! term (convolutional front end) and a constant. Launch overhead splits two
//! ways: without compiled executors every kernel of the forward pass pays a
//! CPU launch, and the interleaved launches stall the device for the whole
//! interval; with a compiled executor a single launch puts the job on the
//! device and only the padded compute occupies it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost model parameters. The shipped default calibration lives at
/// `crates/core/data/cost_default.json` and is embedded in the binary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Kernels launched per forward pass (architecture-determined, not
    /// length-dependent).
    pub n_kernels: u32,
    pub t_kernel_launch_ms: f64,
    pub t_graph_launch_ms: f64,
    pub c0_ms: f64,
    pub c1_ms_per_s: f64,
    pub c2_ms_per_s2: f64,
    pub mem0_mb: f64,
    pub mem1_mb_per_s: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_COST_JSON).expect("embedded default calibration parses")
    }
}

/// Shipped default calibration (same content as the data file).
pub const DEFAULT_COST_JSON: &str = include_str!("../data/cost_default.json");

impl CostParams {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::data(format!("cost params {}: {e}", path.as_ref().display())))?;
        let params: CostParams = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("cost params {}: {e}", path.as_ref().display())))?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_kernel_launch_ms <= 0.0 || self.t_graph_launch_ms <= 0.0 {
            return Err(Error::usage("cost params: launch times must be positive"));
        }
        if self.n_kernels == 0 {
            return Err(Error::usage("cost params: n_kernels must be positive"));
        }
        if self.c0_ms < 0.0
            || self.c1_ms_per_s < 0.0
            || self.c2_ms_per_s2 < 0.0
            || self.mem0_mb < 0.0
            || self.mem1_mb_per_s < 0.0
        {
            return Err(Error::usage("cost params: coefficients must be non-negative"));
        }
        Ok(())
    }

    /// Configuration warnings that do not block execution.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.t_graph_launch_ms >= f64::from(self.n_kernels) * self.t_kernel_launch_ms {
            out.push(format!(
                "graph launch ({} ms) is not cheaper than {} kernel launches ({} ms); \
                 compiled executors will not help",
                self.t_graph_launch_ms,
                self.n_kernels,
                f64::from(self.n_kernels) * self.t_kernel_launch_ms
            ));
        }
        out
    }
}

/// Pure compute time for `l` seconds of audio, in milliseconds.
pub fn compute_time(cost: &CostParams, l: f64) -> f64 {
    cost.c0_ms + cost.c1_ms_per_s * l + cost.c2_ms_per_s2 * l * l
}

/// Service time without compiled executors: per-kernel launches plus
/// compute. Occupies the issuing thread and the device for the whole
/// interval.
pub fn graphless_service(cost: &CostParams, l: f64) -> f64 {
    f64::from(cost.n_kernels) * cost.t_kernel_launch_ms + compute_time(cost, l)
}

/// Service profile with a compiled executor of padded length `z`:
/// `(thread_ms, device_ms)`. The launch occupies the thread only.
pub fn graph_service(cost: &CostParams, z: f64) -> (f64, f64) {
    (cost.t_graph_launch_ms, compute_time(cost, z))
}

/// Resident memory of an executor compiled for length `z`, in MB.
pub fn executor_memory(cost: &CostParams, z: f64) -> f64 {
    cost.mem0_mb + cost.mem1_mb_per_s * z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> CostParams {
        CostParams {
            n_kernels: 500,
            t_kernel_launch_ms: 0.02,
            t_graph_launch_ms: 0.05,
            c0_ms: 2.0,
            c1_ms_per_s: 0.5,
            c2_ms_per_s2: 0.3,
            mem0_mb: 100.0,
            mem1_mb_per_s: 50.0,
        }
    }

    #[test]
    fn compute_time_examples() {
        let c = toy();
        assert_eq!(compute_time(&c, 0.0), 2.0);
        assert!((compute_time(&c, 10.0) - 37.0).abs() < 1e-12);
        // pure quadratic doubles to quadruple
        let q = CostParams {
            c0_ms: 0.0,
            c1_ms_per_s: 0.0,
            ..c
        };
        let four = compute_time(&q, 4.0);
        let two = compute_time(&q, 2.0);
        assert!((four - 4.0 * two).abs() < 1e-12);
    }

    #[test]
    fn graphless_service_examples() {
        let c = toy();
        assert!((graphless_service(&c, 2.0) - 14.2).abs() < 1e-12);
        let zero_kernels = CostParams { n_kernels: 1, t_kernel_launch_ms: 1e-300, ..c };
        assert!((graphless_service(&zero_kernels, 2.0) - compute_time(&c, 2.0)).abs() < 1e-9);
    }

    #[test]
    fn graph_service_examples() {
        let c = toy();
        let (thread, device) = graph_service(&c, 10.0);
        assert_eq!(thread, 0.05);
        assert!((device - 37.0).abs() < 1e-12);
        // padding is never free with positive slope
        assert!(compute_time(&c, 4.0) > compute_time(&c, 2.5));
    }

    #[test]
    fn executor_memory_examples() {
        let c = toy();
        assert_eq!(executor_memory(&c, 0.0), 100.0);
        assert!((executor_memory(&c, 10.0) - 600.0).abs() < 1e-12);
        assert!(executor_memory(&c, 3.0) <= executor_memory(&c, 5.0));
    }

    #[test]
    fn monotonicity_in_length() {
        let c = toy();
        let mut prev = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..=100 {
            let l = i as f64 / 10.0;
            let now = (
                compute_time(&c, l),
                graphless_service(&c, l),
                executor_memory(&c, l),
            );
            assert!(now.0 >= prev.0 && now.1 >= prev.1 && now.2 >= prev.2);
            prev = now;
        }
    }

    #[test]
    fn default_calibration_is_sane() {
        let c = CostParams::default();
        c.validate().unwrap();
        assert!(c.warnings().is_empty(), "{:?}", c.warnings());
        // graphs must help: one launch far below the kernel cascade
        assert!(c.t_graph_launch_ms < f64::from(c.n_kernels) * c.t_kernel_launch_ms);
    }

    #[test]
    fn warning_when_graphs_do_not_help() {
        let c = CostParams {
            t_graph_launch_ms: 100.0,
            ..toy()
        };
        assert_eq!(c.warnings().len(), 1);
    }
}
