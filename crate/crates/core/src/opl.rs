//! PAC-Bayesian off-policy learning over a finite policy class.
//!
//! A posterior over `m` candidate target policies is scored by the lower
//! bound
//!
//! ```text
//! E[v(pi_theta) | S] >= ( value - bias - sqrt(2 (y + proxy) C) )_+
//! value = E[wis_estimate(pi_theta) | S]
//! bias  = min{1, E[|n / N_{theta,x}(n) - 1| | S]}
//! C     = KL(posterior || prior) + x + (x/2) ln(1 + proxy / y)
//! ```
//!
//! where `proxy = E[V^wis_theta | S]` is the posterior mean of the
//! per-policy variance proxy. The guarantee holds for arbitrarily
//! data-dependent posteriors, so the bound may be maximized over the
//! posterior; [`optimize_posterior`] does this by exponentiated-gradient
//! ascent with finite-difference gradients of the pre-clamp objective (the
//! clamp kills gradients at zero, the surrogate preserves the ascent
//! direction).

use serde::Serialize;

use crate::categorical::Categorical;
use crate::error::{Error, Result};
use crate::pac_bayes::{kl_categorical, pb_radius_logy};
use crate::report::{BoundKind, BoundName, BoundReport, FailureEvent};
use crate::rng::derive_seed;
use crate::wis::{
    effective_n, importance_weights, vwa_bound_global, vwa_bound_perk, vwa_bruteforce, vwa_mc,
    weight_moments, wis_estimate, LoggedData, ProxyMode, WeightPmf,
};

/// A finite class of candidate target policies over the same action set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinitePolicyClass {
    policies: Vec<Categorical>,
}

impl FinitePolicyClass {
    pub fn new(policies: Vec<Categorical>) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::EmptyPolicyClass);
        }
        let k = policies[0].len();
        for p in &policies {
            if p.len() != k {
                return Err(Error::LengthMismatch {
                    left: k,
                    right: p.len(),
                });
            }
        }
        Ok(Self { policies })
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn policies(&self) -> &[Categorical] {
        &self.policies
    }

    pub fn policy(&self, j: usize) -> &Categorical {
        &self.policies[j]
    }
}

/// Optimizer configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LearnConfig {
    pub x: f64,
    pub y: f64,
    pub step_size: f64,
    pub max_iters: usize,
    /// Half-width of the central finite differences on the pre-clamp
    /// objective.
    pub gradient_epsilon: f64,
    pub proxy_mode: ProxyMode,
    pub seed: u64,
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.x >= 2.0) {
            return Err(Error::XBelowTwo { x: self.x });
        }
        if !(self.y > 0.0) {
            return Err(Error::YNotPositive { y: self.y });
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.gradient_epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gradient_epsilon must be positive, got {}",
                self.gradient_epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if let ProxyMode::Mc { inner_reps } = self.proxy_mode {
            if inner_reps == 0 {
                return Err(Error::ZeroInnerReps);
            }
        }
        Ok(())
    }
}

/// Result of [`optimize_posterior`]: the trace-argmax posterior and the
/// post-clamp bound per iterate (entry 0 is the uniform initializer).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorState {
    pub posterior: Categorical,
    pub objective_trace: Vec<f64>,
    /// Index into `objective_trace` of the returned posterior.
    pub best_index: usize,
}

/// Per-policy statistics that every posterior functional is affine in.
#[derive(Debug, Clone)]
struct PolicyStats {
    /// WIS estimate per policy; `None` marks a degenerate zero weight sum.
    values: Vec<Option<f64>>,
    /// `|n / N_{theta,x}(n) - 1|` per policy; infinite when the floor is 0.
    bias_ratios: Vec<f64>,
    /// Variance proxy per policy; may be infinite in closed-form modes.
    proxies: Vec<f64>,
}

fn per_policy_stats(
    data: &LoggedData,
    class: &FinitePolicyClass,
    behavior: &Categorical,
    x: f64,
    proxy_mode: ProxyMode,
    seed: u64,
) -> Result<PolicyStats> {
    let n = data.len();
    let mut values = Vec::with_capacity(class.len());
    let mut bias_ratios = Vec::with_capacity(class.len());
    let mut proxies = Vec::with_capacity(class.len());
    for (j, policy) in class.policies().iter().enumerate() {
        let weights = importance_weights(policy, behavior, data.actions())?;
        values.push(match wis_estimate(&weights, data.rewards()) {
            Ok(v) => Some(v),
            Err(Error::DegenerateWeightSum) => None,
            Err(e) => return Err(e),
        });
        let moments = weight_moments(policy, behavior)?;
        let floor = effective_n(n, x, &moments)?;
        bias_ratios.push(if floor > 0.0 {
            (n as f64 / floor - 1.0).abs()
        } else {
            f64::INFINITY
        });
        proxies.push(match proxy_mode {
            ProxyMode::PerK => vwa_bound_perk(&weights, &moments, x)?.value,
            ProxyMode::Global => vwa_bound_global(&weights, &moments, x)?.value,
            ProxyMode::BruteForce => {
                let pmf = WeightPmf::from_policies(policy, behavior)?;
                vwa_bruteforce(&weights, &pmf)?
            }
            ProxyMode::Mc { inner_reps } => {
                let pmf = WeightPmf::from_policies(policy, behavior)?;
                vwa_mc(&weights, &pmf, inner_reps, derive_seed(seed, j as u64))?.value
            }
        });
    }
    Ok(PolicyStats {
        values,
        bias_ratios,
        proxies,
    })
}

fn posterior_mean<F: Fn(usize) -> Result<f64>>(posterior: &Categorical, term: F) -> Result<f64> {
    let mut acc = 0.0;
    for (j, &pj) in posterior.weights().iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        acc += pj * term(j)?;
    }
    Ok(acc)
}

/// All pieces of the learning bound at one posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Assembled {
    value: f64,
    bias: f64,
    proxy: f64,
    kl: f64,
    variance_term: f64,
    pre_clamp: f64,
    bound: f64,
}

fn assemble(
    stats: &PolicyStats,
    posterior: &Categorical,
    prior: &Categorical,
    x: f64,
    y: f64,
) -> Result<Assembled> {
    if posterior.len() != stats.values.len() {
        return Err(Error::DimensionMismatch {
            context: "posterior vs policy class",
            expected: stats.values.len(),
            got: posterior.len(),
        });
    }
    let value = posterior_mean(posterior, |j| {
        stats.values[j].ok_or(Error::DegeneratePolicyWeightSum { policy: j })
    })?;
    let bias_inner = posterior_mean(posterior, |j| Ok(stats.bias_ratios[j]))?;
    let bias = bias_inner.min(1.0);
    let proxy = posterior_mean(posterior, |j| Ok(stats.proxies[j]))?;
    let kl = kl_categorical(posterior, prior)?;
    let variance_term = pb_radius_logy(proxy, kl, x, y)?;
    let pre_clamp = value - bias - variance_term;
    Ok(Assembled {
        value,
        bias,
        proxy,
        kl,
        variance_term,
        pre_clamp,
        bound: pre_clamp.max(0.0),
    })
}

/// Posterior mean of the per-policy WIS estimates.
pub fn posterior_value(
    data: &LoggedData,
    class: &FinitePolicyClass,
    posterior: &Categorical,
    behavior: &Categorical,
) -> Result<f64> {
    if posterior.len() != class.len() {
        return Err(Error::DimensionMismatch {
            context: "posterior vs policy class",
            expected: class.len(),
            got: posterior.len(),
        });
    }
    posterior_mean(posterior, |j| {
        let weights = importance_weights(class.policy(j), behavior, data.actions())?;
        wis_estimate(&weights, data.rewards())
            .map_err(|_| Error::DegeneratePolicyWeightSum { policy: j })
    })
}

/// Bias term `min{1, sum_j posterior_j |n / N_{j,x}(n) - 1|}`; a zero floor
/// in the support makes the min select 1.
pub fn posterior_bias(
    class: &FinitePolicyClass,
    posterior: &Categorical,
    behavior: &Categorical,
    n: usize,
    x: f64,
) -> Result<f64> {
    if posterior.len() != class.len() {
        return Err(Error::DimensionMismatch {
            context: "posterior vs policy class",
            expected: class.len(),
            got: posterior.len(),
        });
    }
    let inner = posterior_mean(posterior, |j| {
        let moments = weight_moments(class.policy(j), behavior)?;
        let floor = effective_n(n, x, &moments)?;
        Ok(if floor > 0.0 {
            (n as f64 / floor - 1.0).abs()
        } else {
            f64::INFINITY
        })
    })?;
    Ok(inner.min(1.0))
}

/// Posterior mean of the per-policy variance proxies in the chosen mode;
/// infinite proxies propagate.
pub fn posterior_proxy(
    data: &LoggedData,
    class: &FinitePolicyClass,
    posterior: &Categorical,
    behavior: &Categorical,
    x: f64,
    proxy_mode: ProxyMode,
    seed: u64,
) -> Result<f64> {
    let stats = per_policy_stats(data, class, behavior, x, proxy_mode, seed)?;
    if posterior.len() != stats.proxies.len() {
        return Err(Error::DimensionMismatch {
            context: "posterior vs policy class",
            expected: stats.proxies.len(),
            got: posterior.len(),
        });
    }
    posterior_mean(posterior, |j| Ok(stats.proxies[j]))
}

fn opl_report(
    assembled: &Assembled,
    x: f64,
    y: f64,
    proxy_mode: ProxyMode,
    n: usize,
    m_support: usize,
) -> BoundReport {
    let e_x = (-x).exp();
    let mut report = BoundReport::new(
        BoundName::OplLowerBound,
        BoundKind::LowerBound,
        assembled.bound,
        x,
    )
    .with_event(FailureEvent::new("bias_weight_sum_lower_tail", e_x))
    .with_event(FailureEvent::new("concentration", e_x));
    if matches!(proxy_mode, ProxyMode::PerK | ProxyMode::Global) {
        report = report.with_event(FailureEvent::new(
            "variance_proxy_partial_sums",
            (m_support * n) as f64 * e_x,
        ));
    }
    report
        .with_y(y)
        .with_proxy(assembled.proxy)
        .with_kl(assembled.kl)
        .with_note(format!("proxy_mode={}", proxy_mode.name()))
        .with_note(format!("value_term={}", assembled.value))
        .with_note(format!("bias_term={}", assembled.bias))
        .with_note(format!("variance_term={}", assembled.variance_term))
}

/// The learning lower bound at a given posterior.
#[allow(clippy::too_many_arguments)]
pub fn opl_lower_bound(
    data: &LoggedData,
    class: &FinitePolicyClass,
    posterior: &Categorical,
    prior: &Categorical,
    behavior: &Categorical,
    x: f64,
    y: f64,
    proxy_mode: ProxyMode,
    seed: u64,
) -> Result<BoundReport> {
    let stats = per_policy_stats(data, class, behavior, x, proxy_mode, seed)?;
    let assembled = assemble(&stats, posterior, prior, x, y)?;
    let m_support = posterior.weights().iter().filter(|&&p| p > 0.0).count();
    Ok(opl_report(
        &assembled,
        x,
        y,
        proxy_mode,
        data.len(),
        m_support,
    ))
}

fn normalized_perturbation(base: &[f64], j: usize, delta: f64) -> Result<Categorical> {
    let mut raw = base.to_vec();
    raw[j] = (raw[j] + delta).max(0.0);
    Categorical::normalized(&raw)
}

/// Exponentiated-gradient ascent of the learning bound over the posterior.
///
/// Starts from the uniform posterior, estimates the gradient of the
/// pre-clamp objective by central finite differences on renormalized
/// perturbations, applies the multiplicative update
/// `posterior_j <- posterior_j exp(step g_j)` (shift-normalized to avoid
/// overflow), and returns the iterate with the best post-clamp bound, which
/// by construction is at least the initializer's.
pub fn optimize_posterior(
    data: &LoggedData,
    class: &FinitePolicyClass,
    prior: &Categorical,
    behavior: &Categorical,
    config: &LearnConfig,
) -> Result<PosteriorState> {
    config.validate()?;
    if prior.len() != class.len() {
        return Err(Error::DimensionMismatch {
            context: "prior vs policy class",
            expected: class.len(),
            got: prior.len(),
        });
    }
    let stats = per_policy_stats(
        data,
        class,
        behavior,
        config.x,
        config.proxy_mode,
        config.seed,
    )?;
    let m = class.len();
    let mut posterior = Categorical::uniform(m);
    let initial = assemble(&stats, &posterior, prior, config.x, config.y)?;
    let mut trace = vec![initial.bound];
    let mut best = (initial.bound, posterior.clone(), 0usize);

    let eps = config.gradient_epsilon;
    for iteration in 0..config.max_iters {
        let weights = posterior.weights().to_vec();
        let mut gradient = vec![0.0; m];
        for (j, g) in gradient.iter_mut().enumerate() {
            let up = assemble(
                &stats,
                &normalized_perturbation(&weights, j, eps)?,
                prior,
                config.x,
                config.y,
            )?
            .pre_clamp;
            let down_step = eps.min(weights[j]);
            let down = assemble(
                &stats,
                &normalized_perturbation(&weights, j, -down_step)?,
                prior,
                config.x,
                config.y,
            )?
            .pre_clamp;
            *g = (up - down) / (eps + down_step);
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    iteration,
                    coordinate: j,
                });
            }
        }

        // Multiplicative update in log space, shifted by the max exponent so
        // exp never overflows; zero-mass atoms stay at zero.
        let log_unnormalized: Vec<f64> = weights
            .iter()
            .zip(&gradient)
            .map(|(&p, &g)| p.ln() + config.step_size * g)
            .collect();
        let shift = log_unnormalized
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let unnormalized: Vec<f64> = log_unnormalized
            .iter()
            .map(|&l| (l - shift).exp())
            .collect();
        posterior = Categorical::normalized(&unnormalized)?;

        let assembled = assemble(&stats, &posterior, prior, config.x, config.y)?;
        trace.push(assembled.bound);
        if assembled.bound > best.0 {
            best = (assembled.bound, posterior.clone(), iteration + 1);
        }
    }

    Ok(PosteriorState {
        posterior: best.1,
        objective_trace: trace,
        best_index: best.2,
    })
}
