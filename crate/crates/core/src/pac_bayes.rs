//! PAC-Bayesian Efron-Stein bounds over finite parameter spaces.
//!
//! The parameter space is restricted to finite sets with categorical
//! posteriors and priors, so every posterior expectation and the KL
//! divergence are exact. The kernel producing the posterior may depend on
//! the data arbitrarily; the bounds hold for any such kernel.
//!
//! Two radii control the posterior-mean deviation `E[delta_theta | S]`:
//!
//! ```text
//! sqrt(2 (Ev_marginal + Ev_conditional) (KL + 2x))            w.p. >= 1 - 2 e^-x,  x >= 0
//! sqrt(2 (y + Ev_conditional) (KL + x + (x/2) ln(1 + Ev_conditional/y)))
//!                                                             w.p. >= 1 - e^-x,    x >= 2, y > 0
//! ```
//!
//! where `Ev_conditional = E[V_theta | S]` and `Ev_marginal = E[V_theta]`.
//! At `KL = 0` the second radius coincides with the fixed-function radius
//! exactly (same code path, bitwise).

use serde::Serialize;

use crate::categorical::Categorical;
use crate::concentration::radius_logy_kernel;
use crate::error::{Error, Result};
use crate::report::{BoundKind, BoundName, BoundReport, FailureEvent};

/// `KL(p || q) = sum_j p_j ln(p_j / q_j)` with the convention that atoms
/// with `p_j = 0` contribute nothing.
pub fn kl_categorical(p: &Categorical, q: &Categorical) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut kl = 0.0;
    for (index, (&pj, &qj)) in p.weights().iter().zip(q.weights()).enumerate() {
        if pj == 0.0 {
            continue;
        }
        if qj == 0.0 {
            return Err(Error::AbsoluteContinuity { index, p: pj });
        }
        kl += pj * (pj / qj).ln();
    }
    // Nonnegative in exact arithmetic; rounding can leave a tiny negative
    // residue when p == q.
    Ok(kl.max(0.0))
}

/// Scale-free radius `sqrt(2 (ev_marginal + ev_conditional) (kl + 2x))`,
/// valid with probability at least `1 - 2 e^-x` for `x >= 0`.
pub fn pb_radius_scale_free(ev_marginal: f64, ev_conditional: f64, kl: f64, x: f64) -> Result<f64> {
    for (name, value) in [
        ("marginal proxy mean", ev_marginal),
        ("conditional proxy mean", ev_conditional),
        ("kl", kl),
    ] {
        if !(value >= 0.0) {
            return Err(Error::NegativeArgument { name, value });
        }
    }
    if !(x >= 0.0) {
        return Err(Error::XNegative { x });
    }
    Ok((2.0 * (ev_marginal + ev_conditional) * (kl + 2.0 * x)).sqrt())
}

/// Log-barrier radius
/// `sqrt(2 (y + ev_conditional) (kl + x + (x/2) ln(1 + ev_conditional/y)))`,
/// valid with probability at least `1 - e^-x` for `x >= 2`, `y > 0`.
///
/// At `kl = 0` this equals [`crate::concentration::es_radius_logy`] exactly.
pub fn pb_radius_logy(ev_conditional: f64, kl: f64, x: f64, y: f64) -> Result<f64> {
    for (name, value) in [("conditional proxy mean", ev_conditional), ("kl", kl)] {
        if !(value >= 0.0) {
            return Err(Error::NegativeArgument { name, value });
        }
    }
    if !(x >= 2.0) {
        return Err(Error::XBelowTwo { x });
    }
    if !(y > 0.0) {
        return Err(Error::YNotPositive { y });
    }
    Ok(radius_logy_kernel(ev_conditional, kl, x, y))
}

/// Estimate of the Gaussian-mixture inequality across independent trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureCheck {
    pub estimate: f64,
    pub std_error: f64,
}

/// Estimate `E[(y / sqrt(y^2 + v)) exp(d^2 / (2 (y^2 + v)) - kl)]` over
/// per-trial triples `(d, v, kl)`, where `d = E[delta_theta | S]`,
/// `v = E[V_theta | S]`, and `kl = KL(posterior || prior)` are computed
/// exactly over the finite parameter space for each independent dataset.
///
/// A correct implementation keeps the estimate at or below 1 up to Monte
/// Carlo error.
pub fn pb_mgf_check(per_trial: &[(f64, f64, f64)], y: f64) -> Result<MixtureCheck> {
    if per_trial.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(y > 0.0) {
        return Err(Error::YNotPositive { y });
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (index, &(d, v, kl)) in per_trial.iter().enumerate() {
        let denom = y * y + v;
        let term = (y / denom.sqrt()) * (d * d / (2.0 * denom) - kl).exp();
        if !term.is_finite() {
            return Err(Error::MixtureOverflow { index });
        }
        let delta = term - mean;
        mean += delta / (index + 1) as f64;
        m2 += delta * (term - mean);
    }
    let count = per_trial.len();
    let std_error = if count > 1 {
        (m2 / (count - 1) as f64 / count as f64).sqrt()
    } else {
        0.0
    };
    Ok(MixtureCheck {
        estimate: mean,
        std_error,
    })
}

/// Declared range of a loss table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRange {
    Unbounded,
    UnitInterval,
}

/// An `n x m` table of nonnegative losses; entry `(k, j)` is the loss of
/// parameter `j` on data point `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    entries: Vec<f64>,
    n: usize,
    m: usize,
    range: LossRange,
}

impl LossTable {
    /// Build from row-major entries (`n` rows of `m` losses each).
    pub fn new(rows: &[Vec<f64>], range: LossRange) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::EmptySample);
        }
        let m = rows[0].len();
        let mut entries = Vec::with_capacity(rows.len() * m);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != m {
                return Err(Error::LengthMismatch {
                    left: m,
                    right: r.len(),
                });
            }
            for (column, &value) in r.iter().enumerate() {
                let ok = match range {
                    LossRange::Unbounded => value.is_finite() && value >= 0.0,
                    LossRange::UnitInterval => (0.0..=1.0).contains(&value),
                };
                if !ok {
                    return Err(Error::LossOutOfRange { row, column, value });
                }
                entries.push(value);
            }
        }
        Ok(Self {
            entries,
            n: rows.len(),
            m,
            range,
        })
    }

    pub fn num_points(&self) -> usize {
        self.n
    }

    pub fn num_params(&self) -> usize {
        self.m
    }

    pub fn range(&self) -> LossRange {
        self.range
    }

    pub fn loss(&self, k: usize, j: usize) -> f64 {
        self.entries[k * self.m + j]
    }

    /// Empirical loss of parameter `j`: row mean over data points.
    pub fn empirical_loss(&self, j: usize) -> f64 {
        (0..self.n).map(|k| self.loss(k, j)).sum::<f64>() / self.n as f64
    }

    /// Mean squared loss of parameter `j` over data points.
    pub fn mean_squared_loss(&self, j: usize) -> f64 {
        (0..self.n).map(|k| self.loss(k, j).powi(2)).sum::<f64>() / self.n as f64
    }
}

/// Semi-empirical generalization bound for (possibly unbounded) nonnegative
/// losses.
///
/// The conditional proxy mean is replaced by its upper bound
/// `sum_j posterior_j (1/n^2) sum_k (loss(k,j)^2 + E[loss(j, X')^2])`,
/// where the population second moment comes from `second_moment` (supplied
/// by the environment; unknown in practice, so reports are labeled
/// oracle-assisted). The radius is then the log-barrier PAC-Bayes radius at
/// that proxy, valid with probability at least `1 - e^-x`.
pub fn gen_bound<O: Fn(usize) -> f64>(
    losses: &LossTable,
    second_moment: O,
    posterior: &Categorical,
    prior: &Categorical,
    x: f64,
    y: f64,
) -> Result<BoundReport> {
    if posterior.len() != losses.num_params() {
        return Err(Error::DimensionMismatch {
            context: "posterior vs loss table",
            expected: losses.num_params(),
            got: posterior.len(),
        });
    }
    let kl = kl_categorical(posterior, prior)?;
    let n = losses.num_points() as f64;
    let mut proxy = 0.0;
    for (j, &pj) in posterior.weights().iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        let oracle_j = second_moment(j);
        if !(oracle_j >= 0.0) {
            return Err(Error::NegativeArgument {
                name: "population second moment",
                value: oracle_j,
            });
        }
        let sum_sq: f64 = (0..losses.num_points())
            .map(|k| losses.loss(k, j).powi(2) + oracle_j)
            .sum();
        proxy += pj * sum_sq / (n * n);
    }
    let radius = pb_radius_logy(proxy, kl, x, y)?;
    Ok(
        BoundReport::new(BoundName::GenBound, BoundKind::TwoSidedRadius, radius, x)
            .with_event(FailureEvent::new("pac_bayes_concentration", (-x).exp()))
            .with_y(y)
            .with_proxy(proxy)
            .with_kl(kl)
            .with_note("proxy uses oracle-assisted population second moments"),
    )
}

/// Fully empirical bound for losses in `[0, 1]`, valid with probability at
/// least `1 - 2 e^-x` for `x >= 2`:
///
/// ```text
/// radius = sqrt(2 (1/n^2 + (2/n) U) C)
/// C      = KL + x + (x/2) ln(1 + n)
/// U      = s2 + sqrt((2/n) s2 C) + (1/n) (2C + 2^(1/4) sqrt(C) + 1/sqrt(2))
/// ```
///
/// with `s2` the posterior mean of the per-parameter mean squared loss.
pub fn empirical_bernstein_bound(
    losses: &LossTable,
    posterior: &Categorical,
    prior: &Categorical,
    x: f64,
) -> Result<BoundReport> {
    if losses.range() != LossRange::UnitInterval {
        return Err(Error::InvalidConfig(
            "empirical Bernstein bound requires losses declared in [0, 1]".into(),
        ));
    }
    if posterior.len() != losses.num_params() {
        return Err(Error::DimensionMismatch {
            context: "posterior vs loss table",
            expected: losses.num_params(),
            got: posterior.len(),
        });
    }
    if !(x >= 2.0) {
        return Err(Error::XBelowTwo { x });
    }
    let kl = kl_categorical(posterior, prior)?;
    let n = losses.num_points() as f64;
    let s2: f64 = posterior
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, &pj)| pj > 0.0)
        .map(|(j, &pj)| pj * losses.mean_squared_loss(j))
        .sum();
    // x ln(sqrt(1 + n)) written as (x/2) ln(1 + n).
    let capacity = kl + x + 0.5 * x * n.ln_1p();
    let u = s2
        + (2.0 / n * s2 * capacity).sqrt()
        + (2.0 * capacity + 2.0f64.powf(0.25) * capacity.sqrt() + 0.5f64.sqrt()) / n;
    let radius = (2.0 * (1.0 / (n * n) + 2.0 / n * u) * capacity).sqrt();
    Ok(BoundReport::new(
        BoundName::EmpiricalBernstein,
        BoundKind::TwoSidedRadius,
        radius,
        x,
    )
    .with_event(FailureEvent::new("gap_concentration", (-x).exp()))
    .with_event(FailureEvent::new("squared_loss_concentration", (-x).exp()))
    .with_proxy(s2)
    .with_kl(kl))
}
