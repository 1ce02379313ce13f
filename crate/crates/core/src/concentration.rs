//! Semi-empirical Efron-Stein concentration for fixed functions.
//!
//! For a function `f` of `n` independent coordinates, the variance proxy
//!
//! ```text
//! V = sum_k E[ (f(S) - f(S^(k)))^2 | X_1..X_k ]
//! ```
//!
//! (with `S^(k)` replacing coordinate `k` by an independent copy) controls
//! the deviation `delta = f(S) - E[f(S)]` through two radii:
//!
//! ```text
//! |delta| <= sqrt(2 (V + y) (1 + 0.5 ln(1 + V/y)) x)   w.p. >= 1 - e^-x,      x >= 2, y > 0
//! |delta| <= 2 sqrt((V + E[V]) x)                      w.p. >= 1 - sqrt(2) e^-x,  x >= 0
//! ```
//!
//! The underlying argument needs `(delta, sqrt(V))` to satisfy
//! `E[exp(lambda delta - lambda^2 V / 2)] <= 1` for every real `lambda`;
//! [`canonical_mgf_check`] estimates that expectation on sampled pairs so the
//! property can be falsified empirically.

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// An evaluatable function of `n` independent coordinates that supports
/// coordinate replacement: fresh draws of any single coordinate's marginal.
///
/// `evaluate` must be deterministic in its input; `draw_coordinate(k, ..)`
/// must produce independent draws distributed as coordinate `k`.
pub trait ReplaceOneFunction {
    type Coord: Clone;

    fn arity(&self) -> usize;

    fn evaluate(&self, sample: &[Self::Coord]) -> f64;

    fn draw_coordinate(&self, k: usize, rng: &mut ChaCha8Rng) -> Self::Coord;
}

/// Confidence exponent `x` and free scale `y` (either a single value or a
/// grid to be optimized over with a union bound).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailParams {
    pub x: f64,
    pub y: Option<f64>,
    pub y_grid: Option<Vec<f64>>,
}

impl TailParams {
    /// The problem-agnostic default scale `1/n^2`.
    pub fn default_y(n: usize) -> f64 {
        let nf = n as f64;
        1.0 / (nf * nf)
    }
}

/// How a variance-proxy value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMethod {
    ExactEnumeration,
    MonteCarlo,
    ClosedFormBound,
}

/// A variance-proxy value with its Monte Carlo standard error
/// (zero for exact computations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: ProxyMethod,
}

impl ProxyEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            method: ProxyMethod::ExactEnumeration,
        }
    }
}

/// Shared kernel `sqrt(2 (v + y) (kl + x + (x/2) ln(1 + v/y)))`.
///
/// All log-barrier radii in this crate route through this one expression so
/// that algebraically identical bounds agree bitwise.
pub(crate) fn radius_logy_kernel(v: f64, kl: f64, x: f64, y: f64) -> f64 {
    (2.0 * (v + y) * (kl + x + 0.5 * x * (v / y).ln_1p())).sqrt()
}

fn check_logy_args(v: f64, x: f64, y: f64) -> Result<()> {
    if !(v >= 0.0) {
        return Err(Error::NegativeArgument {
            name: "variance proxy",
            value: v,
        });
    }
    if !(x >= 2.0) {
        return Err(Error::XBelowTwo { x });
    }
    if !(y > 0.0) {
        return Err(Error::YNotPositive { y });
    }
    Ok(())
}

/// Radius `sqrt(2 (v + y) (1 + 0.5 ln(1 + v/y)) x)`, valid with probability
/// at least `1 - e^-x` for `x >= 2` and any `y > 0`.
pub fn es_radius_logy(v: f64, x: f64, y: f64) -> Result<f64> {
    check_logy_args(v, x, y)?;
    Ok(radius_logy_kernel(v, 0.0, x, y))
}

/// Scale-free radius `2 sqrt((v + v_mean) x)`, valid with probability at
/// least `1 - sqrt(2) e^-x` for any `x >= 0`. `v_mean` is the population
/// mean of the variance proxy.
pub fn es_radius_scale_free(v: f64, v_mean: f64, x: f64) -> Result<f64> {
    for (name, value) in [("variance proxy", v), ("proxy mean", v_mean)] {
        if !(value >= 0.0) {
            return Err(Error::NegativeArgument { name, value });
        }
    }
    if !(x >= 0.0) {
        return Err(Error::XNegative { x });
    }
    Ok(2.0 * ((v + v_mean) * x).sqrt())
}

/// Result of minimizing the log-barrier radius over a finite grid of `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectedY {
    pub y: f64,
    pub radius: f64,
    /// Union-bound failure probability `m e^-x` over the `m` grid entries
    /// (duplicates still count).
    pub failure_probability: f64,
}

/// Pick the grid entry minimizing [`es_radius_logy`]; the failure budget
/// grows to `m e^-x` by the union bound over the grid.
pub fn select_y(v: f64, x: f64, y_grid: &[f64]) -> Result<SelectedY> {
    if y_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut best: Option<(f64, f64)> = None;
    for &y in y_grid {
        let radius = es_radius_logy(v, x, y)?;
        match best {
            Some((_, r)) if r <= radius => {}
            _ => best = Some((y, radius)),
        }
    }
    let (y, radius) = best.unwrap();
    Ok(SelectedY {
        y,
        radius,
        failure_probability: y_grid.len() as f64 * (-x).exp(),
    })
}

/// Monte Carlo estimate of the semi-empirical Efron-Stein variance proxy at
/// a fixed sample.
///
/// For each coordinate `k`, the conditional expectation fixes coordinates
/// `0..=k` at their observed values and integrates over a joint redraw of
/// the tail `k+1..n` together with an independent replacement for
/// coordinate `k`; `inner_reps` redraws estimate it. Coordinate `k` draws
/// from the stream `(seed, k)`, so per-coordinate work may be parallelized
/// without changing the result.
pub fn estimate_es_proxy<F: ReplaceOneFunction>(
    f: &F,
    sample: &[F::Coord],
    inner_reps: u32,
    seed: u64,
) -> Result<ProxyEstimate> {
    let n = f.arity();
    if n == 0 || sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.len() != n {
        return Err(Error::ArityMismatch {
            arity: n,
            got: sample.len(),
        });
    }
    if inner_reps == 0 {
        return Err(Error::ZeroInnerReps);
    }

    let mut value = 0.0;
    let mut variance_of_sum = 0.0;
    let mut scratch: Vec<F::Coord> = sample.to_vec();

    for k in 0..n {
        let mut rng = stream_rng(seed, k as u64);
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for rep in 0..inner_reps {
            scratch.clone_from_slice(sample);
            for (i, slot) in scratch.iter_mut().enumerate().skip(k + 1) {
                *slot = f.draw_coordinate(i, &mut rng);
            }
            let with_original = f.evaluate(&scratch);
            scratch[k] = f.draw_coordinate(k, &mut rng);
            let with_replacement = f.evaluate(&scratch);
            if !with_original.is_finite() || !with_replacement.is_finite() {
                return Err(Error::NonFiniteValue { index: k });
            }
            let sq = (with_original - with_replacement).powi(2);
            let delta = sq - mean;
            mean += delta / (rep + 1) as f64;
            m2 += delta * (sq - mean);
        }
        value += mean;
        if inner_reps > 1 {
            let var = m2 / (inner_reps - 1) as f64;
            variance_of_sum += var / inner_reps as f64;
        }
    }

    Ok(ProxyEstimate {
        value,
        std_error: variance_of_sum.sqrt(),
        method: ProxyMethod::MonteCarlo,
    })
}

/// One grid point of a canonical-pair check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfPoint {
    pub lambda: f64,
    pub estimate: f64,
    pub std_error: f64,
}

/// Result of [`canonical_mgf_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MgfCheck {
    pub per_lambda: Vec<MgfPoint>,
    pub max_estimate: f64,
    pub max_std_error: f64,
    pub argmax_lambda: f64,
}

/// Estimate `E[exp(lambda delta - lambda^2 v / 2)]` over sampled
/// `(delta, v)` pairs, for each `lambda` in the grid.
///
/// For a correct implementation of the variance proxy, every estimate stays
/// at or below 1 up to Monte Carlo error; a value significantly above 1
/// falsifies the pairing. Overflow aborts rather than saturating, since a
/// saturated estimate would be meaningless.
pub fn canonical_mgf_check(
    delta_v_samples: &[(f64, f64)],
    lambda_grid: &[f64],
) -> Result<MgfCheck> {
    if delta_v_samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if lambda_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }

    let mut per_lambda = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (index, &(delta, v)) in delta_v_samples.iter().enumerate() {
            let term = (lambda * delta - 0.5 * lambda * lambda * v).exp();
            if !term.is_finite() {
                return Err(Error::MgfOverflow { lambda, index });
            }
            let d = term - mean;
            mean += d / (index + 1) as f64;
            m2 += d * (term - mean);
        }
        let count = delta_v_samples.len();
        let std_error = if count > 1 {
            (m2 / (count - 1) as f64 / count as f64).sqrt()
        } else {
            0.0
        };
        per_lambda.push(MgfPoint {
            lambda,
            estimate: mean,
            std_error,
        });
    }

    let best = per_lambda
        .iter()
        .copied()
        .reduce(|a, b| if b.estimate > a.estimate { b } else { a })
        .unwrap();
    Ok(MgfCheck {
        per_lambda,
        max_estimate: best.estimate,
        max_std_error: best.std_error,
        argmax_lambda: best.lambda,
    })
}

/// Literature baselines, used for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    /// Weakly self-bounding functions (`V^es <= a f + b`):
    /// radius `2 sqrt((a E[f] + b) x) + 2 a x`.
    SelfBounding { a: f64, b: f64, mean_f: f64 },
    /// Bernstein-type bound in terms of `E[V^es]` and difference constants:
    /// radius `sqrt(2 E[V^es] x) + (sqrt(2) a + (2/3) b) x`.
    MaurerEs { a: f64, b: f64, mean_v: f64 },
}

/// Evaluate a baseline radius at confidence exponent `x >= 0`.
pub fn baseline_radius(baseline: &Baseline, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::XNegative { x });
    }
    let check = |name: &'static str, value: f64| -> Result<f64> {
        if !(value >= 0.0) {
            return Err(Error::NegativeArgument { name, value });
        }
        Ok(value)
    };
    match *baseline {
        Baseline::SelfBounding { a, b, mean_f } => {
            let a = check("a", a)?;
            let b = check("b", b)?;
            let mean_f = check("mean_f", mean_f)?;
            Ok(2.0 * ((a * mean_f + b) * x).sqrt() + 2.0 * a * x)
        }
        Baseline::MaurerEs { a, b, mean_v } => {
            let a = check("a", a)?;
            let b = check("b", b)?;
            let mean_v = check("mean_v", mean_v)?;
            Ok((2.0 * mean_v * x).sqrt() + (2.0f64.sqrt() * a + 2.0 / 3.0 * b) * x)
        }
    }
}
