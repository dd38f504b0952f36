//! Fixed-length executor pools and nearest-upper-bound routing.
//!
//! A pool is a strictly increasing list of compiled input lengths; a query
//! of length `l` runs on the smallest executor length at or above `l`. The
//! largest pool length is always the ten-second admission bound, so every
//! admissible query has a home.

use serde::{Deserialize, Serialize};

use crate::cost::{compute_time, executor_memory, CostParams};
use crate::error::{Error, Result};
use crate::traffic::{fit_lognormal, lognormal_quantile, EmpiricalDist};
use crate::trace::MAX_AUDIO_SECONDS;

/// Pool length granularity: planned lengths closer than this collapse into
/// one executor (keeping the larger).
pub const DEDUP_GRANULARITY_S: f64 = 0.01;

/// How the planner picks executor lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStrategy {
    /// Evenly spaced lengths up to the bound.
    Uniform,
    /// Nearest-rank quantiles of the observed lengths.
    EmpiricalQuantile,
    /// Quantiles of a log-normal fitted to the observed lengths.
    LognormalQuantile,
    /// Quantiles of the length sample weighted by each query's compute
    /// time, matching the pool to where the computation actually goes.
    TimeWeighted,
}

impl Default for PlanStrategy {
    fn default() -> Self {
        PlanStrategy::TimeWeighted
    }
}

impl std::str::FromStr for PlanStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PlanStrategy::Uniform),
            "empirical-quantile" | "empirical_quantile" => Ok(PlanStrategy::EmpiricalQuantile),
            "lognormal-quantile" | "lognormal_quantile" => Ok(PlanStrategy::LognormalQuantile),
            "time-weighted" | "time_weighted" => Ok(PlanStrategy::TimeWeighted),
            other => Err(Error::usage(format!("unknown plan strategy '{other}'"))),
        }
    }
}

/// A planned pool: sorted lengths plus its total memory footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutorPool {
    pub lengths_s: Vec<f64>,
    pub strategy: PlanStrategy,
    pub memory_mb: f64,
}

impl ExecutorPool {
    /// Validates invariants on a deserialized pool: non-empty, strictly
    /// increasing, within the admission bound.
    pub fn validate(&self) -> Result<()> {
        if self.lengths_s.is_empty() {
            return Err(Error::data("executor pool: no lengths"));
        }
        for pair in self.lengths_s.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::data("executor pool: lengths must strictly increase"));
            }
        }
        let last = *self.lengths_s.last().unwrap();
        if last > MAX_AUDIO_SECONDS || self.lengths_s[0] <= 0.0 {
            return Err(Error::data("executor pool: lengths out of (0, 10]"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lengths_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths_s.is_empty()
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::data(format!("pool {}: {e}", path.as_ref().display())))?;
        let pool: ExecutorPool = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("pool {}: {e}", path.as_ref().display())))?;
        pool.validate()?;
        Ok(pool)
    }
}

/// Plans a pool of (at most) `n` executors against the observed traffic.
/// The largest length is always forced to the admission bound; lengths
/// within one granule collapse, so the effective size may shrink.
pub fn plan_pool(
    dist: &EmpiricalDist,
    n: usize,
    strategy: PlanStrategy,
    cost: &CostParams,
    budget_mb: f64,
) -> Result<ExecutorPool> {
    if n < 1 {
        return Err(Error::usage("plan_pool: n must be at least 1"));
    }
    let mut lengths = Vec::with_capacity(n);
    for i in 1..=n {
        let p = i as f64 / n as f64;
        let z = if p >= 1.0 {
            MAX_AUDIO_SECONDS
        } else {
            match strategy {
                PlanStrategy::Uniform => p * MAX_AUDIO_SECONDS,
                PlanStrategy::EmpiricalQuantile => dist.quantile(p),
                PlanStrategy::LognormalQuantile => {
                    let params = fit_lognormal(dist);
                    lognormal_quantile(&params, p)?
                }
                PlanStrategy::TimeWeighted => weighted_quantile(dist, cost, p),
            }
        };
        lengths.push(z.clamp(f64::MIN_POSITIVE, MAX_AUDIO_SECONDS));
    }

    // collapse near-duplicates on a 10 ms grid, keeping the larger length
    let mut deduped: Vec<f64> = Vec::with_capacity(lengths.len());
    lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for z in lengths {
        match deduped.last_mut() {
            Some(last) if granule(*last) == granule(z) => *last = z.max(*last),
            _ => deduped.push(z),
        }
    }
    *deduped.last_mut().unwrap() = MAX_AUDIO_SECONDS;
    if deduped.len() >= 2 && granule(deduped[deduped.len() - 2]) == granule(MAX_AUDIO_SECONDS) {
        deduped.remove(deduped.len() - 2);
    }

    let memory_mb: f64 = deduped.iter().map(|&z| executor_memory(cost, z)).sum();
    if memory_mb > budget_mb {
        return Err(Error::resource(format!(
            "pool of {} executors needs {memory_mb:.0} MB, budget is {budget_mb:.0} MB",
            deduped.len()
        )));
    }
    let pool = ExecutorPool {
        lengths_s: deduped,
        strategy,
        memory_mb,
    };
    pool.validate()?;
    Ok(pool)
}

fn granule(z: f64) -> i64 {
    (z / DEDUP_GRANULARITY_S).round() as i64
}

/// Weighted nearest-rank quantile where each length carries its compute
/// time as weight.
fn weighted_quantile(dist: &EmpiricalDist, cost: &CostParams, p: f64) -> f64 {
    let lengths = dist.lengths();
    let total: f64 = lengths.iter().map(|&l| compute_time(cost, l)).sum();
    let target = p * total;
    let mut acc = 0.0;
    for &l in lengths {
        acc += compute_time(cost, l);
        if acc >= target {
            return l;
        }
    }
    *lengths.last().unwrap()
}

/// Routes a query of length `l` to the smallest executor length at or above
/// it, returning the executor index.
pub fn route(pool: &ExecutorPool, l: f64) -> Result<usize> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::data(format!("route: invalid length {l}")));
    }
    let idx = pool.lengths_s.partition_point(|&z| z < l);
    if idx == pool.lengths_s.len() {
        return Err(Error::data(format!(
            "route: length {l} exceeds largest executor {}",
            pool.lengths_s.last().unwrap()
        )));
    }
    Ok(idx)
}

/// Mean extra compute from padding, over the given traffic, in ms.
pub fn padding_waste(pool: &ExecutorPool, dist: &EmpiricalDist, cost: &CostParams) -> Result<f64> {
    let mut total = 0.0;
    for &l in dist.lengths() {
        let z = pool.lengths_s[route(pool, l)?];
        total += compute_time(cost, z) - compute_time(cost, l);
    }
    Ok(total / dist.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostParams;

    fn cost() -> CostParams {
        CostParams::default()
    }

    fn dist(lengths: &[f64]) -> EmpiricalDist {
        EmpiricalDist::new(lengths.to_vec()).unwrap()
    }

    #[test]
    fn uniform_plan_evenly_spaced() {
        let d = dist(&[1.0, 2.0]);
        let pool = plan_pool(&d, 5, PlanStrategy::Uniform, &cost(), 1e9).unwrap();
        assert_eq!(pool.lengths_s, vec![2.0, 4.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn single_executor_is_the_bound() {
        let d = dist(&[0.5, 1.0]);
        for strategy in [
            PlanStrategy::Uniform,
            PlanStrategy::EmpiricalQuantile,
            PlanStrategy::LognormalQuantile,
            PlanStrategy::TimeWeighted,
        ] {
            let pool = plan_pool(&d, 1, strategy, &cost(), 1e9).unwrap();
            assert_eq!(pool.lengths_s, vec![10.0], "{strategy:?}");
        }
    }

    #[test]
    fn lognormal_plan_matches_quantile_oracle() {
        // sample {e^-0.5, e^0.5} fits to mu=0, sigma=0.5
        let d = dist(&[(-0.5f64).exp(), 0.5f64.exp()]);
        let pool = plan_pool(&d, 4, PlanStrategy::LognormalQuantile, &cost(), 1e9).unwrap();
        let want = [0.71373404280815796, 1.0, 1.4010821118543542, 10.0];
        assert_eq!(pool.len(), 4);
        for (got, want) in pool.lengths_s.iter().zip(want) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn quantile_plans_are_non_decreasing_and_end_at_bound() {
        let lengths: Vec<f64> = (1..=500).map(|i| 0.02 * i as f64).collect();
        let d = dist(&lengths);
        for strategy in [
            PlanStrategy::EmpiricalQuantile,
            PlanStrategy::LognormalQuantile,
            PlanStrategy::TimeWeighted,
        ] {
            let pool = plan_pool(&d, 12, strategy, &cost(), 1e9).unwrap();
            assert!(pool.lengths_s.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(*pool.lengths_s.last().unwrap(), MAX_AUDIO_SECONDS);
        }
    }

    #[test]
    fn duplicates_collapse() {
        // all mass at one point: every quantile lands there
        let d = dist(&[3.0; 50]);
        let pool = plan_pool(&d, 8, PlanStrategy::EmpiricalQuantile, &cost(), 1e9).unwrap();
        assert_eq!(pool.lengths_s, vec![3.0, 10.0]);
    }

    #[test]
    fn budget_enforced() {
        let d = dist(&[1.0, 2.0, 3.0]);
        let err = plan_pool(&d, 36, PlanStrategy::Uniform, &cost(), 100.0).unwrap_err();
        assert!(matches!(err, Error::Resource(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn route_picks_least_upper_bound() {
        let pool = ExecutorPool {
            lengths_s: vec![1.0, 2.0, 4.0, 8.0, 10.0],
            strategy: PlanStrategy::Uniform,
            memory_mb: 0.0,
        };
        assert_eq!(route(&pool, 3.2).unwrap(), 2);
        assert_eq!(route(&pool, 10.0).unwrap(), 4); // inclusive upper bound
        assert_eq!(route(&pool, 2.0).unwrap(), 1); // equality routes there
        assert_eq!(route(&pool, 0.1).unwrap(), 0);
        assert!(route(&pool, 10.4).is_err());
        assert!(route(&pool, 0.0).is_err());
        assert!(route(&pool, -1.0).is_err());
    }

    #[test]
    fn route_matches_linear_scan() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(1..=12);
            let mut lengths: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(1..=995) as f64) * 0.01)
                .collect();
            lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
            lengths.dedup();
            lengths.push(10.0);
            let pool = ExecutorPool {
                lengths_s: lengths,
                strategy: PlanStrategy::Uniform,
                memory_mb: 0.0,
            };
            for _ in 0..40 {
                let l = rng.gen_range(0.001..=10.0);
                let got = route(&pool, l).unwrap();
                let want = pool
                    .lengths_s
                    .iter()
                    .position(|&z| z >= l)
                    .unwrap();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn route_is_monotone_and_refinement_helps() {
        let coarse = ExecutorPool {
            lengths_s: vec![2.0, 6.0, 10.0],
            strategy: PlanStrategy::Uniform,
            memory_mb: 0.0,
        };
        let fine = ExecutorPool {
            lengths_s: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            strategy: PlanStrategy::Uniform,
            memory_mb: 0.0,
        };
        let mut prev = 0.0;
        for i in 1..=100 {
            let l = i as f64 / 10.0;
            let zc = coarse.lengths_s[route(&coarse, l).unwrap()];
            assert!(zc >= prev);
            prev = zc;
            let zf = fine.lengths_s[route(&fine, l).unwrap()];
            // adding executors never increases any query's routed length
            assert!(zf <= zc);
        }
    }

    #[test]
    fn padding_waste_cases() {
        let c = cost();
        let d = dist(&[1.0, 2.0, 3.0]);
        // pool holding the exact lengths wastes nothing
        let exact = ExecutorPool {
            lengths_s: vec![1.0, 2.0, 3.0, 10.0],
            strategy: PlanStrategy::EmpiricalQuantile,
            memory_mb: 0.0,
        };
        assert!(padding_waste(&exact, &d, &c).unwrap().abs() < 1e-12);

        // the single-executor pool maximizes waste among bound-holding pools
        let single = ExecutorPool {
            lengths_s: vec![10.0],
            strategy: PlanStrategy::Uniform,
            memory_mb: 0.0,
        };
        let single_waste = padding_waste(&single, &d, &c).unwrap();
        assert!(single_waste > padding_waste(&exact, &d, &c).unwrap());

        // hand arithmetic on a three-point distribution
        let pool = ExecutorPool {
            lengths_s: vec![2.0, 10.0],
            strategy: PlanStrategy::Uniform,
            memory_mb: 0.0,
        };
        let want = ((crate::cost::compute_time(&c, 2.0) - crate::cost::compute_time(&c, 1.0))
            + (crate::cost::compute_time(&c, 2.0) - crate::cost::compute_time(&c, 2.0))
            + (crate::cost::compute_time(&c, 10.0) - crate::cost::compute_time(&c, 3.0)))
            / 3.0;
        let got = padding_waste(&pool, &d, &c).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn pool_json_round_trip() {
        let d = dist(&[0.5, 1.5, 2.5, 9.0]);
        let pool = plan_pool(&d, 6, PlanStrategy::TimeWeighted, &cost(), 1e9).unwrap();
        let text = serde_json::to_string(&pool).unwrap();
        let back: ExecutorPool = serde_json::from_str(&text).unwrap();
        assert_eq!(pool, back);
        back.validate().unwrap();
    }
}
