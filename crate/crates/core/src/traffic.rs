//! Length-distribution modeling: empirical samples and a log-normal fit.
//!
//! The log-normal fit is the closed-form MLE (mean and population standard
//! deviation of the log lengths). Quantiles go through an inverse standard
//! normal built from Acklam's rational approximation plus one Halley
//! refinement step against a Cody-style erfc, which brings the absolute
//! error to around 1e-13 across the usable domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Trace;

/// Sorted sample of audio lengths in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    lengths: Vec<f64>,
}

impl EmpiricalDist {
    pub fn new(mut lengths: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::data("empirical distribution: empty sample"));
        }
        if lengths.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::data(
                "empirical distribution: lengths must be positive and finite",
            ));
        }
        lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(EmpiricalDist { lengths })
    }

    pub fn from_trace(trace: &Trace) -> Result<Self> {
        EmpiricalDist::new(trace.audio_lengths())
    }

    /// Sorted lengths, ascending.
    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Nearest-rank quantile of the sample.
    pub fn quantile(&self, p: f64) -> f64 {
        crate::labeling::nearest_rank(&self.lengths, p)
    }
}

/// Parameters of a log-normal length distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    /// Mean of the log lengths (log-seconds).
    pub mu: f64,
    /// Population standard deviation of the log lengths.
    pub sigma: f64,
}

impl LogNormalParams {
    /// A zero sigma collapses the distribution to a point.
    pub fn is_degenerate(&self) -> bool {
        self.sigma == 0.0
    }
}

/// Maximum-likelihood log-normal fit: `mu` is the mean of the logs and
/// `sigma` the population (1/n) standard deviation.
pub fn fit_lognormal(dist: &EmpiricalDist) -> LogNormalParams {
    let logs: Vec<f64> = dist.lengths().iter().map(|l| l.ln()).collect();
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    // identical samples are exactly degenerate, no float residue
    if dist.lengths().windows(2).all(|w| w[0] == w[1]) {
        return LogNormalParams { mu, sigma: 0.0 };
    }
    let var = logs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    LogNormalParams {
        mu,
        sigma: var.sqrt(),
    }
}

/// Quantile of the log-normal: `exp(mu + sigma * phi_inv(p))`.
pub fn lognormal_quantile(params: &LogNormalParams, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::usage(format!(
            "lognormal quantile: p must lie in (0, 1), got {p}"
        )));
    }
    Ok((params.mu + params.sigma * normal_quantile(p)).exp())
}

/// Log-normal CDF, for round-trip checks.
pub fn lognormal_cdf(params: &LogNormalParams, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if params.sigma == 0.0 {
        return if x.ln() < params.mu { 0.0 } else { 1.0 };
    }
    normal_cdf((x.ln() - params.mu) / params.sigma)
}

// Acklam's coefficients for the inverse standard normal CDF.
const INV_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const INV_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const INV_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const INV_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

fn acklam_raw(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    if p > P_LOW && p < 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        let num = (((((INV_A[0] * r + INV_A[1]) * r + INV_A[2]) * r + INV_A[3]) * r + INV_A[4]) * r
            + INV_A[5])
            * q;
        let den =
            ((((INV_B[0] * r + INV_B[1]) * r + INV_B[2]) * r + INV_B[3]) * r + INV_B[4]) * r + 1.0;
        num / den
    } else {
        let q = if p < P_LOW {
            (-2.0 * p.ln()).sqrt()
        } else {
            (-2.0 * (-p).ln_1p()).sqrt()
        };
        let num =
            ((((INV_C[0] * q + INV_C[1]) * q + INV_C[2]) * q + INV_C[3]) * q + INV_C[4]) * q
                + INV_C[5];
        let den = (((INV_D[0] * q + INV_D[1]) * q + INV_D[2]) * q + INV_D[3]) * q + 1.0;
        let x = num / den;
        if p < P_LOW {
            x
        } else {
            -x
        }
    }
}

/// Inverse of the standard normal CDF for `p` in `(0, 0.5]`, refined by two
/// Halley steps. The lower half has well-conditioned tail arithmetic; the
/// upper half is handled by symmetry in `normal_quantile`.
fn normal_quantile_lower(p: f64) -> f64 {
    let mut z = acklam_raw(p);
    // refinement overflows exp(z^2/2) only in the sub-1e-260 tail
    if z * z < 1100.0 {
        for _ in 0..2 {
            let err = normal_cdf(z) - p;
            let u = err * (2.0 * std::f64::consts::PI).sqrt() * (z * z / 2.0).exp();
            z -= u / (1.0 + z * u / 2.0);
        }
    }
    z
}

/// Inverse standard normal CDF. Absolute error below 1e-8 everywhere in
/// (0, 1); below ~1e-13 for p in [1e-12, 1 - 1e-12].
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    if p == 0.5 {
        0.0
    } else if p < 0.5 {
        normal_quantile_lower(p)
    } else {
        // 1 - p is exact for p in [0.5, 1)
        -normal_quantile_lower(1.0 - p)
    }
}

/// Standard normal CDF via erfc.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Complementary error function, W. J. Cody's rational approximations
/// (the classic three-interval scheme). Relative error below ~1e-15.
fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        return 1.0 - erf_small(x);
    }
    let result = if y <= 4.0 { erfc_mid(y) } else { erfc_large(y) };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// erf(x) for |x| <= 0.46875.
fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e+00,
        1.13864154151050156e+02,
        3.77485237685302021e+02,
        3.20937758913846947e+03,
        1.85777706184603153e-01,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e+01,
        2.44024637934444173e+02,
        1.28261652607737228e+03,
        2.84423683343917062e+03,
    ];
    let ysq = x * x;
    let mut num = A[4] * ysq;
    let mut den = ysq;
    for i in 0..3 {
        num = (num + A[i]) * ysq;
        den = (den + B[i]) * ysq;
    }
    x * (num + A[3]) / (den + B[3])
}

/// erfc(x) for 0.46875 < x <= 4.
fn erfc_mid(y: f64) -> f64 {
    const C: [f64; 9] = [
        5.64188496988670089180e-01,
        8.88314979438837594118e+00,
        6.61191906371416294775e+01,
        2.98635138197400131132e+02,
        8.81952221241769090411e+02,
        1.71204761263407058314e+03,
        2.05107837782607146532e+03,
        1.23033935479799725272e+03,
        2.15311535474403846343e-08,
    ];
    const D: [f64; 8] = [
        1.57449261107098347253e+01,
        1.17693950891312499305e+02,
        5.37181101862009857509e+02,
        1.62138957456669018874e+03,
        3.29079923573345962678e+03,
        4.36261909014324715820e+03,
        3.43936767414372163696e+03,
        1.23033935480374942043e+03,
    ];
    let mut num = C[8] * y;
    let mut den = y;
    for i in 0..7 {
        num = (num + C[i]) * y;
        den = (den + D[i]) * y;
    }
    let frac = (num + C[7]) / (den + D[7]);
    (-y * y).exp() * frac
}

/// erfc(x) for x > 4.
fn erfc_large(y: f64) -> f64 {
    const P: [f64; 6] = [
        3.05326634961232344035e-01,
        3.60344899949804439429e-01,
        1.25781726111229246204e-01,
        1.60837851487422766278e-02,
        6.58749161529837803157e-04,
        1.63153871373020978498e-02,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242072e+00,
        1.87295284992346047209e+00,
        5.27905102951428412248e-01,
        6.05183413124413191178e-02,
        2.33520497626869185443e-03,
    ];
    // one over sqrt(pi)
    const SQRPI: f64 = 5.6418958354775628695e-01;
    if y >= 26.543 {
        return 0.0;
    }
    let ysq = 1.0 / (y * y);
    let mut num = P[5] * ysq;
    let mut den = ysq;
    for i in 0..4 {
        num = (num + P[i]) * ysq;
        den = (den + Q[i]) * ysq;
    }
    let r = ysq * (num + P[4]) / (den + Q[4]);
    (-y * y).exp() * (SQRPI - r) / y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_dist_sorts_and_validates() {
        let d = EmpiricalDist::new(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(d.lengths(), &[1.0, 2.0, 3.0]);
        assert!(EmpiricalDist::new(vec![]).is_err());
        assert!(EmpiricalDist::new(vec![1.0, -2.0]).is_err());
        assert!(EmpiricalDist::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn fit_on_e_and_e_cubed() {
        let d = EmpiricalDist::new(vec![1f64.exp(), 3f64.exp()]).unwrap();
        let p = fit_lognormal(&d);
        assert!((p.mu - 2.0).abs() < 1e-12);
        assert!((p.sigma - 1.0).abs() < 1e-12);
        assert!(!p.is_degenerate());
    }

    #[test]
    fn fit_degenerate_cases() {
        let d = EmpiricalDist::new(vec![1f64.exp(); 4]).unwrap();
        let p = fit_lognormal(&d);
        assert!((p.mu - 1.0).abs() < 1e-12);
        assert_eq!(p.sigma, 0.0);
        assert!(p.is_degenerate());

        let single = EmpiricalDist::new(vec![2.5]).unwrap();
        assert!(fit_lognormal(&single).is_degenerate());
    }

    #[test]
    fn fit_recovers_sampled_parameters() {
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100);
        let ln = rand_distr::LogNormal::new(0.0, 0.5).unwrap();
        let sample: Vec<f64> = (0..100_000).map(|_| ln.sample(&mut rng)).collect();
        let d = EmpiricalDist::new(sample).unwrap();
        let p = fit_lognormal(&d);
        assert!(p.mu.abs() <= 0.02, "mu {}", p.mu);
        assert!((p.sigma - 0.5).abs() <= 0.02, "sigma {}", p.sigma);
    }

    /// High-precision reference values for the inverse standard normal.
    const PHI_INV_TABLE: &[(f64, f64)] = &[
        (0.0001, -3.7190164854556806),
        (0.001, -3.0902323061678135),
        (0.01, -2.3263478740408411),
        (0.025, -1.9599639845400542),
        (0.02425, -1.9729610513118849),
        (0.1, -1.2815515655446005),
        (0.2, -0.84162123357291421),
        (0.25, -0.67448975019608174),
        (0.4, -0.2533471031357998),
        (0.5, 0.0),
        (0.6, 0.2533471031357998),
        (0.75, 0.67448975019608174),
        (0.8, 0.84162123357291421),
        (0.9, 1.2815515655446005),
        (0.975, 1.9599639845400542),
        (0.99, 2.3263478740408411),
        (0.999, 3.0902323061678135),
        (0.9999, 3.7190164854556806),
        (0.000001, -4.7534243088228989),
        (0.999999, 4.7534243088228989),
    ];

    #[test]
    fn normal_quantile_meets_reference_table() {
        for &(p, want) in PHI_INV_TABLE {
            let got = normal_quantile(p);
            assert!(
                (got - want).abs() < 1e-8,
                "phi_inv({p}) = {got}, want {want}"
            );
        }
    }

    /// High-precision reference values for the standard normal CDF.
    const PHI_TABLE: &[(f64, f64)] = &[
        (-8.0, 6.2209605742717841e-16),
        (-5.0, 2.8665157187919391e-7),
        (-3.0, 0.0013498980316300945),
        (-1.959963984540054, 0.025000000000000014),
        (-1.0, 0.15865525393145705),
        (-0.5, 0.3085375387259869),
        (0.0, 0.5),
        (0.5, 0.6914624612740131),
        (1.0, 0.84134474606854295),
        (1.959963984540054, 0.97499999999999999),
        (3.0, 0.99865010196836991),
        (5.0, 0.99999971334842812),
        (8.0, 0.99999999999999938),
    ];

    #[test]
    fn normal_cdf_meets_reference_table() {
        for &(z, want) in PHI_TABLE {
            let got = normal_cdf(z);
            let tol = (want.abs() * 1e-13).max(1e-16);
            assert!(
                (got - want).abs() < tol,
                "phi({z}) = {got:e}, want {want:e}"
            );
        }
    }

    #[test]
    fn lognormal_quantile_reference_values() {
        let std = LogNormalParams { mu: 0.0, sigma: 1.0 };
        assert_eq!(lognormal_quantile(&std, 0.5).unwrap(), 1.0);
        let got = lognormal_quantile(&std, 0.975).unwrap();
        assert!((got - 7.0990713842313363).abs() < 1e-10, "got {got}");

        let half = LogNormalParams { mu: 0.0, sigma: 0.5 };
        let got = lognormal_quantile(&half, 0.25).unwrap();
        assert!((got - 0.71373404280815796).abs() < 1e-10, "got {got}");
        let got = lognormal_quantile(&half, 0.75).unwrap();
        assert!((got - 1.4010821118543542).abs() < 1e-10, "got {got}");
    }

    #[test]
    fn lognormal_quantile_rejects_bad_p() {
        let p = LogNormalParams { mu: 0.0, sigma: 1.0 };
        assert!(lognormal_quantile(&p, 0.0).is_err());
        assert!(lognormal_quantile(&p, 1.0).is_err());
        assert!(lognormal_quantile(&p, -0.2).is_err());
    }

    #[test]
    fn quantile_strictly_increasing_and_round_trips() {
        for (mu, sigma) in [(0.0, 0.5), (0.0, 1.0), (0.3, 0.7)] {
            let params = LogNormalParams { mu, sigma };
            let mut prev = f64::NEG_INFINITY;
            for i in 1..200 {
                let p = i as f64 / 200.0;
                let q = lognormal_quantile(&params, p).unwrap();
                assert!(q > prev, "not increasing at p={p}");
                prev = q;
            }
            // quantile(cdf(x)) = x within 1e-6 over [0.1, 10]
            let mut x = 0.1;
            while x <= 10.0 {
                let p = lognormal_cdf(&params, x);
                if p > 0.0 && p < 1.0 {
                    let back = lognormal_quantile(&params, p).unwrap();
                    assert!(
                        (back - x).abs() < 1e-6,
                        "round trip at x={x}: {back} (mu={mu}, sigma={sigma})"
                    );
                }
                x += 0.01;
            }
        }
    }
}
