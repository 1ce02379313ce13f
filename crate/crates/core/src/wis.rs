//! Weighted importance sampling: estimator, weight moments, weight-sum lower
//! tail, variance proxies, and the truncation-free off-policy evaluation
//! lower bound.
//!
//! For logged actions from a behavior policy, importance weights
//! `W_k = target(A_k) / behavior(A_k)` feed the self-normalized estimator
//! `sum(W R) / sum(W)`. Its variance proxy
//!
//! ```text
//! V^wa = sum_k E[ Wt_k^2 + Ut_k^2 | W_1..W_k ]
//! Wt_k = W_k / sum_j W_j
//! Ut_k = W_k' / (W_k' + sum_{j != k} W_j)
//! ```
//!
//! can be computed exactly by enumerating the known weight distribution
//! ([`vwa_bruteforce`]), estimated by Monte Carlo ([`vwa_mc`]), or bounded in
//! closed form through the weight-sum lower tail
//! `N_x(n) = (n E[W] - sqrt(2 x n E[W^2]))_+` ([`vwa_bound_perk`],
//! [`vwa_bound_global`]).

use serde::Serialize;

use crate::categorical::Categorical;
use crate::concentration::{radius_logy_kernel, ProxyEstimate, ProxyMethod};
use crate::error::{Error, Result};
use crate::report::{BoundKind, BoundName, BoundReport, FailureEvent};
use crate::rng::stream_rng;

/// Enumeration guard for the brute-force proxy: `support^n` must not exceed
/// this many terms.
pub const ENUMERATION_LIMIT: f64 = 1e7;

/// Logged `(action, reward)` pairs generated by a behavior policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoggedData {
    actions: Vec<usize>,
    rewards: Vec<f64>,
    num_actions: usize,
}

impl LoggedData {
    pub fn new(actions: Vec<usize>, rewards: Vec<f64>, num_actions: usize) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::EmptySample);
        }
        if actions.len() != rewards.len() {
            return Err(Error::LengthMismatch {
                left: actions.len(),
                right: rewards.len(),
            });
        }
        for (index, &action) in actions.iter().enumerate() {
            if action >= num_actions {
                return Err(Error::ActionOutOfRange {
                    index,
                    action,
                    num_actions,
                });
            }
        }
        for (index, &value) in rewards.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::RewardOutOfRange { index, value });
            }
        }
        Ok(Self {
            actions,
            rewards,
            num_actions,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

/// Exact first and second moments of a single importance weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightMoments {
    pub m1: f64,
    pub m2: f64,
}

impl WeightMoments {
    pub fn new(m1: f64, m2: f64) -> Result<Self> {
        if !(m1 > 0.0) {
            return Err(Error::NegativeArgument {
                name: "first weight moment",
                value: m1,
            });
        }
        if !(m2 >= m1 * m1) {
            return Err(Error::InvalidConfig(format!(
                "second weight moment {m2} below the square of the first ({})",
                m1 * m1
            )));
        }
        Ok(Self { m1, m2 })
    }
}

/// The known distribution of one importance weight: distinct nonnegative
/// support values with their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightPmf {
    support: Vec<f64>,
    probs: Categorical,
}

impl WeightPmf {
    pub fn new(support: Vec<f64>, probs: Categorical) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::LengthMismatch {
                left: support.len(),
                right: probs.len(),
            });
        }
        let mut sorted = support.clone();
        sorted.sort_by(f64::total_cmp);
        let distinct = sorted.windows(2).all(|w| w[0] < w[1]);
        let nonneg = sorted.first().is_some_and(|&w| w >= 0.0 && w.is_finite());
        if !distinct || !nonneg {
            return Err(Error::InvalidWeightSupport);
        }
        Ok(Self { support, probs })
    }

    /// The weight law induced by a pair of policies when actions are drawn
    /// from the behavior policy: `target(a)/behavior(a)` with probability
    /// `behavior(a)`. Equal ratios are merged into one atom.
    pub fn from_policies(target: &Categorical, behavior: &Categorical) -> Result<Self> {
        if target.len() != behavior.len() {
            return Err(Error::LengthMismatch {
                left: target.len(),
                right: behavior.len(),
            });
        }
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for (index, (&t, &b)) in target.weights().iter().zip(behavior.weights()).enumerate() {
            if b == 0.0 {
                if t > 0.0 {
                    return Err(Error::AbsoluteContinuity { index, p: t });
                }
                continue;
            }
            atoms.push((t / b, b));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support = Vec::new();
        let mut probs = Vec::new();
        for (w, p) in atoms {
            match support.last() {
                Some(&last) if last == w => {
                    let n = probs.len();
                    probs[n - 1] += p;
                }
                _ => {
                    support.push(w);
                    probs.push(p);
                }
            }
        }
        Self::new(support, Categorical::normalized(&probs)?)
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &Categorical {
        &self.probs
    }

    pub fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        self.support[self.probs.sample(rng)]
    }

    /// Exact moments `E[W]` and `E[W^2]` of this law.
    pub fn moments(&self) -> Result<WeightMoments> {
        let m1: f64 = self
            .support
            .iter()
            .zip(self.probs.weights())
            .map(|(&w, &p)| p * w)
            .sum();
        let m2: f64 = self
            .support
            .iter()
            .zip(self.probs.weights())
            .map(|(&w, &p)| p * w * w)
            .sum();
        WeightMoments::new(m1, m2)
    }
}

/// How the variance proxy of the estimator is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ProxyMode {
    /// Per-coordinate closed-form upper bound (costs `n e^-x` budget).
    PerK,
    /// Whole-sum closed-form upper bound (costs `n e^-x` budget).
    Global,
    /// Exact enumeration over the weight law (guarded).
    BruteForce,
    /// Monte Carlo estimate of the exact proxy.
    Mc { inner_reps: u32 },
}

impl ProxyMode {
    pub fn name(&self) -> &'static str {
        match self {
            ProxyMode::PerK => "perk",
            ProxyMode::Global => "global",
            ProxyMode::BruteForce => "bruteforce",
            ProxyMode::Mc { .. } => "mc",
        }
    }
}

/// Why a closed-form proxy bound degenerated to infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxyDegeneracy {
    /// The whole-sum floor `N_x(n)` clamped to zero.
    ZeroWeightSumFloor,
    /// First coordinate (1-based) whose denominator floor reached zero.
    ZeroDenominatorAt { k: usize },
}

/// A closed-form upper bound on the variance proxy; infinite when a
/// denominator floor degenerates (which legitimately propagates to a
/// vacuous, zero lower bound downstream).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyBound {
    pub value: f64,
    pub degeneracy: Option<ProxyDegeneracy>,
}

/// Elementwise importance weights `target(A_k) / behavior(A_k)`.
pub fn importance_weights(
    target: &Categorical,
    behavior: &Categorical,
    actions: &[usize],
) -> Result<Vec<f64>> {
    if target.len() != behavior.len() {
        return Err(Error::LengthMismatch {
            left: target.len(),
            right: behavior.len(),
        });
    }
    actions
        .iter()
        .enumerate()
        .map(|(index, &action)| {
            if action >= behavior.len() {
                return Err(Error::ActionOutOfRange {
                    index,
                    action,
                    num_actions: behavior.len(),
                });
            }
            let b = behavior.get(action);
            if b == 0.0 {
                return Err(Error::ZeroBehaviorProbability { index, action });
            }
            Ok(target.get(action) / b)
        })
        .collect()
}

/// Self-normalized weighted average `sum(W R) / sum(W)`.
pub fn wis_estimate(weights: &[f64], rewards: &[f64]) -> Result<f64> {
    if weights.len() != rewards.len() {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: rewards.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&w, &r) in weights.iter().zip(rewards) {
        if !(w >= 0.0) {
            return Err(Error::NegativeArgument {
                name: "weight",
                value: w,
            });
        }
        num += w * r;
        den += w;
    }
    if den == 0.0 {
        return Err(Error::DegenerateWeightSum);
    }
    Ok(num / den)
}

/// Exact weight moments under the behavior policy: `E[W] = sum_a target(a)`
/// (one, for genuine policies) and `E[W^2] = sum_a target(a)^2 / behavior(a)`.
pub fn weight_moments(target: &Categorical, behavior: &Categorical) -> Result<WeightMoments> {
    if target.len() != behavior.len() {
        return Err(Error::LengthMismatch {
            left: target.len(),
            right: behavior.len(),
        });
    }
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (index, (&t, &b)) in target.weights().iter().zip(behavior.weights()).enumerate() {
        if t == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::AbsoluteContinuity { index, p: t });
        }
        m1 += t;
        m2 += t * t / b;
    }
    WeightMoments::new(m1, m2)
}

fn weight_sum_floor(m: usize, x: f64, moments: &WeightMoments) -> f64 {
    let mf = m as f64;
    (mf * moments.m1 - (2.0 * x * mf * moments.m2).sqrt()).max(0.0)
}

/// High-probability floor on the sum of `n` i.i.d. nonnegative weights:
/// `N_x(n) = (n E[W] - sqrt(2 x n E[W^2]))_+`, holding with probability at
/// least `1 - e^-x` for any `x > 0`.
pub fn effective_n(n: usize, x: f64, moments: &WeightMoments) -> Result<f64> {
    if n == 0 {
        return Err(Error::ZeroSampleSize);
    }
    if !(x > 0.0) {
        return Err(Error::XNotPositive { x });
    }
    Ok(weight_sum_floor(n, x, moments))
}

fn check_weights_nonneg(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::EmptySample);
    }
    for &w in weights {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::NegativeArgument {
                name: "weight",
                value: w,
            });
        }
    }
    Ok(())
}

fn for_each_tail(
    pmf: &WeightPmf,
    len: usize,
    acc_sum: f64,
    acc_prob: f64,
    visit: &mut impl FnMut(f64, f64) -> Result<()>,
) -> Result<()> {
    if len == 0 {
        return visit(acc_sum, acc_prob);
    }
    for (&w, &p) in pmf.support().iter().zip(pmf.probs().weights()) {
        if p == 0.0 {
            continue;
        }
        for_each_tail(pmf, len - 1, acc_sum + w, acc_prob * p, visit)?;
    }
    Ok(())
}

/// Exact variance proxy by enumerating the weight law.
///
/// For each coordinate `k` (conditioning on the observed `W_1..W_k`), all
/// assignments of the unobserved tail `W_{k+1}..W_n` and of the independent
/// replacement `W_k'` are enumerated with their product probabilities.
pub fn vwa_bruteforce(weights: &[f64], pmf: &WeightPmf) -> Result<f64> {
    check_weights_nonneg(weights)?;
    let n = weights.len();
    let terms = (pmf.len() as f64).powi(n as i32);
    if terms > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            terms,
            limit: ENUMERATION_LIMIT,
        });
    }

    let mut total = 0.0;
    let mut prefix = 0.0;
    for (k, &wk) in weights.iter().enumerate() {
        let prefix_before = prefix;
        prefix += wk;
        let prefix_through = prefix;
        let wk_sq = wk * wk;
        let tail_len = n - 1 - k;
        let mut acc = 0.0;
        for_each_tail(pmf, tail_len, 0.0, 1.0, &mut |tail_sum, tail_prob| {
            let denom_w = prefix_through + tail_sum;
            if denom_w == 0.0 {
                return Err(Error::DegenerateWeightPmf);
            }
            acc += tail_prob * wk_sq / (denom_w * denom_w);
            for (&wp, &p) in pmf.support().iter().zip(pmf.probs().weights()) {
                if p == 0.0 {
                    continue;
                }
                let denom_u = wp + prefix_before + tail_sum;
                if denom_u == 0.0 {
                    return Err(Error::DegenerateWeightPmf);
                }
                acc += tail_prob * p * wp * wp / (denom_u * denom_u);
            }
            Ok(())
        })?;
        total += acc;
    }
    Ok(total)
}

/// Monte Carlo counterpart of [`vwa_bruteforce`]: per coordinate, averages
/// over `inner_reps` joint draws of the tail and the replacement weight.
/// Coordinate `k` draws from stream `(seed, k)`.
pub fn vwa_mc(
    weights: &[f64],
    pmf: &WeightPmf,
    inner_reps: u32,
    seed: u64,
) -> Result<ProxyEstimate> {
    check_weights_nonneg(weights)?;
    if inner_reps == 0 {
        return Err(Error::ZeroInnerReps);
    }
    let n = weights.len();
    let mut value = 0.0;
    let mut variance_of_sum = 0.0;
    let mut prefix = 0.0;
    for (k, &wk) in weights.iter().enumerate() {
        let prefix_before = prefix;
        prefix += wk;
        let prefix_through = prefix;
        let wk_sq = wk * wk;
        let mut rng = stream_rng(seed, k as u64);
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for rep in 0..inner_reps {
            let mut tail_sum = 0.0;
            for _ in (k + 1)..n {
                tail_sum += pmf.sample(&mut rng);
            }
            let replacement = pmf.sample(&mut rng);
            let denom_w = prefix_through + tail_sum;
            let denom_u = replacement + prefix_before + tail_sum;
            if denom_w == 0.0 || denom_u == 0.0 {
                return Err(Error::DegenerateWeightPmf);
            }
            let term =
                wk_sq / (denom_w * denom_w) + replacement * replacement / (denom_u * denom_u);
            let delta = term - mean;
            mean += delta / (rep + 1) as f64;
            m2 += delta * (term - mean);
        }
        value += mean;
        if inner_reps > 1 {
            variance_of_sum += m2 / (inner_reps - 1) as f64 / inner_reps as f64;
        }
    }
    Ok(ProxyEstimate {
        value,
        std_error: variance_of_sum.sqrt(),
        method: ProxyMethod::MonteCarlo,
    })
}

/// Per-coordinate closed-form upper bound on the proxy, holding with
/// probability at least `1 - n e^-x`:
///
/// ```text
/// sum_k [ W_k^2 / (sum_{i<=k} W_i + N_x(n-k))^2
///       + E[W'^2] / (sum_{i<=k-1} W_i + N_x(n-k+1))^2 ]
/// ```
pub fn vwa_bound_perk(weights: &[f64], moments: &WeightMoments, x: f64) -> Result<ProxyBound> {
    check_weights_nonneg(weights)?;
    if !(x > 0.0) {
        return Err(Error::XNotPositive { x });
    }
    let n = weights.len();
    let mut total = 0.0;
    let mut prefix = 0.0;
    for (k, &wk) in weights.iter().enumerate() {
        let prefix_before = prefix;
        prefix += wk;
        let denom_w = prefix + weight_sum_floor(n - 1 - k, x, moments);
        let denom_u = prefix_before + weight_sum_floor(n - k, x, moments);
        if denom_w == 0.0 || denom_u == 0.0 {
            return Ok(ProxyBound {
                value: f64::INFINITY,
                degeneracy: Some(ProxyDegeneracy::ZeroDenominatorAt { k: k + 1 }),
            });
        }
        total += wk * wk / (denom_w * denom_w);
        total += moments.m2 / (denom_u * denom_u);
    }
    Ok(ProxyBound {
        value: total,
        degeneracy: None,
    })
}

/// Whole-sum closed-form upper bound on the proxy, holding with probability
/// at least `1 - n e^-x`: `(1 / N_x(n)^2) sum_k (W_k^2 + E[W'^2])`.
pub fn vwa_bound_global(weights: &[f64], moments: &WeightMoments, x: f64) -> Result<ProxyBound> {
    check_weights_nonneg(weights)?;
    if !(x > 0.0) {
        return Err(Error::XNotPositive { x });
    }
    let floor = weight_sum_floor(weights.len(), x, moments);
    if floor == 0.0 {
        return Ok(ProxyBound {
            value: f64::INFINITY,
            degeneracy: Some(ProxyDegeneracy::ZeroWeightSumFloor),
        });
    }
    let sum: f64 = weights.iter().map(|&w| w * w + moments.m2).sum();
    Ok(ProxyBound {
        value: sum / (floor * floor),
        degeneracy: None,
    })
}

/// Concentration radius for the self-normalized estimator:
/// `sqrt(2 (2 vwa + y) (1 + ln(sqrt(1 + 2 vwa / y))) x)`, valid with
/// probability at least `1 - e^-x` for `x >= 2`, `y > 0`. The factor 2 on
/// the proxy comes from folding the remove-one and replacement differences
/// into `V^wa`.
pub fn wis_concentration_radius(vwa: f64, x: f64, y: f64) -> Result<f64> {
    if !(vwa >= 0.0) {
        return Err(Error::NegativeArgument {
            name: "variance proxy",
            value: vwa,
        });
    }
    if !(x >= 2.0) {
        return Err(Error::XBelowTwo { x });
    }
    if !(y > 0.0) {
        return Err(Error::YNotPositive { y });
    }
    Ok(radius_logy_kernel(2.0 * vwa, 0.0, x, y))
}

/// Lower bound on the value of a fixed target policy:
/// `v(pi) >= (N_x(n) / n) (v_wis - radius)_+`.
///
/// The failure budget is itemized per event: the weight-sum lower tail
/// (shared by the bias control and, for closed-form proxy modes, the `n`
/// partial-sum floors) and the estimator concentration event. Closed-form
/// proxy modes total `(n + 1) e^-x`; exact proxy modes total `2 e^-x`.
pub fn opev_lower_bound(
    data: &LoggedData,
    target: &Categorical,
    behavior: &Categorical,
    x: f64,
    y: f64,
    proxy_mode: ProxyMode,
    seed: u64,
) -> Result<BoundReport> {
    let n = data.len();
    let weights = importance_weights(target, behavior, data.actions())?;
    let v_wis = wis_estimate(&weights, data.rewards())?;
    let moments = weight_moments(target, behavior)?;
    let n_eff = effective_n(n, x, &moments)?;

    let mut degeneracy = None;
    let (proxy, proxy_std_error) = match proxy_mode {
        ProxyMode::PerK => {
            let bound = vwa_bound_perk(&weights, &moments, x)?;
            degeneracy = bound.degeneracy;
            (bound.value, 0.0)
        }
        ProxyMode::Global => {
            let bound = vwa_bound_global(&weights, &moments, x)?;
            degeneracy = bound.degeneracy;
            (bound.value, 0.0)
        }
        ProxyMode::BruteForce => {
            let pmf = WeightPmf::from_policies(target, behavior)?;
            (vwa_bruteforce(&weights, &pmf)?, 0.0)
        }
        ProxyMode::Mc { inner_reps } => {
            let pmf = WeightPmf::from_policies(target, behavior)?;
            let est = vwa_mc(&weights, &pmf, inner_reps, seed)?;
            (est.value, est.std_error)
        }
    };

    let radius = wis_concentration_radius(proxy, x, y)?;
    let value = n_eff / n as f64 * (v_wis - radius).max(0.0);

    let e_x = (-x).exp();
    let weight_sum_budget = match proxy_mode {
        ProxyMode::PerK | ProxyMode::Global => n as f64 * e_x,
        ProxyMode::BruteForce | ProxyMode::Mc { .. } => e_x,
    };
    let mut report = BoundReport::new(BoundName::OpevLowerBound, BoundKind::LowerBound, value, x)
        .with_event(FailureEvent::new(
            "weight_sum_lower_tail",
            weight_sum_budget,
        ))
        .with_event(FailureEvent::new("concentration", e_x))
        .with_y(y)
        .with_proxy(proxy)
        .with_note(format!("proxy_mode={}", proxy_mode.name()))
        .with_note(format!("wis_estimate={v_wis}"))
        .with_note(format!("effective_n={n_eff}"));
    if proxy_std_error > 0.0 {
        report = report.with_note(format!("proxy_std_error={proxy_std_error}"));
    }
    if let Some(d) = degeneracy {
        report = report.with_note(format!("proxy degenerate: {d:?}"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cat(w: &[f64]) -> Categorical {
        Categorical::new(w.to_vec()).unwrap()
    }

    #[test]
    fn matched_policies_give_unit_weights() {
        let p = cat(&[0.5, 0.5]);
        let w = importance_weights(&p, &p, &[0, 1, 0]).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn weights_are_policy_ratios() {
        let target = cat(&[1.0, 0.0]);
        let behavior = cat(&[0.5, 0.5]);
        let w = importance_weights(&target, &behavior, &[0, 1]).unwrap();
        assert_eq!(w, vec![2.0, 0.0]);
    }

    #[test]
    fn zero_behavior_probability_is_reported() {
        let target = cat(&[0.5, 0.5]);
        let behavior = cat(&[1.0, 0.0]);
        let err = importance_weights(&target, &behavior, &[0, 1]).unwrap_err();
        assert_eq!(
            err,
            Error::ZeroBehaviorProbability {
                index: 1,
                action: 1
            }
        );
    }

    #[test]
    fn wis_estimate_values() {
        assert_relative_eq!(
            wis_estimate(&[1.0, 1.0, 1.0], &[0.0, 1.0, 1.0]).unwrap(),
            2.0 / 3.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            wis_estimate(&[2.0, 1.0], &[1.0, 0.0]).unwrap(),
            2.0 / 3.0,
            max_relative = 1e-15
        );
        assert_eq!(
            wis_estimate(&[0.0, 0.0], &[0.3, 0.4]).unwrap_err(),
            Error::DegenerateWeightSum
        );
    }

    #[test]
    fn weight_moments_values() {
        let p = cat(&[0.5, 0.5]);
        let m = weight_moments(&p, &p).unwrap();
        assert_relative_eq!(m.m1, 1.0, max_relative = 1e-15);
        assert_relative_eq!(m.m2, 1.0, max_relative = 1e-15);

        let m = weight_moments(&cat(&[1.0, 0.0]), &cat(&[0.5, 0.5])).unwrap();
        assert_relative_eq!(m.m2, 2.0, max_relative = 1e-15);

        let m = weight_moments(&cat(&[0.5, 0.5]), &cat(&[0.9, 0.1])).unwrap();
        assert_relative_eq!(m.m2, 0.25 / 0.9 + 0.25 / 0.1, max_relative = 1e-14);

        assert!(weight_moments(&cat(&[0.5, 0.5]), &cat(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn effective_n_values() {
        let unit = WeightMoments::new(1.0, 1.0).unwrap();
        assert_relative_eq!(
            effective_n(100, 2.0, &unit).unwrap(),
            80.0,
            max_relative = 1e-15
        );
        let m = WeightMoments::new(1.0, 2.0).unwrap();
        assert_relative_eq!(
            effective_n(100, 2.0, &m).unwrap(),
            71.7157287525381,
            max_relative = 1e-14
        );
        let heavy = WeightMoments::new(1.0, 100.0).unwrap();
        assert_eq!(effective_n(4, 2.0, &heavy).unwrap(), 0.0);
        assert!(matches!(
            effective_n(4, 0.0, &unit),
            Err(Error::XNotPositive { .. })
        ));
    }

    fn point_mass_pmf(w: f64) -> WeightPmf {
        WeightPmf::new(vec![w], cat(&[1.0])).unwrap()
    }

    fn two_point_pmf(a: f64, b: f64, pa: f64) -> WeightPmf {
        WeightPmf::new(vec![a, b], cat(&[pa, 1.0 - pa])).unwrap()
    }

    #[test]
    fn vwa_single_weight_is_two() {
        let pmf = point_mass_pmf(3.5);
        assert_eq!(vwa_bruteforce(&[0.7], &pmf).unwrap(), 2.0);
        let est = vwa_mc(&[0.7], &pmf, 4, 0).unwrap();
        assert_eq!(est.value, 2.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn vwa_two_unit_weights_point_mass() {
        let pmf = point_mass_pmf(1.0);
        assert_relative_eq!(
            vwa_bruteforce(&[1.0, 1.0], &pmf).unwrap(),
            1.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn vwa_mc_matches_bruteforce_exactly_for_point_mass() {
        let pmf = point_mass_pmf(2.0);
        let weights = [2.0, 2.0, 2.0];
        let exact = vwa_bruteforce(&weights, &pmf).unwrap();
        let est = vwa_mc(&weights, &pmf, 5, 123).unwrap();
        assert_eq!(est.value, exact);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn vwa_mc_agrees_with_bruteforce_on_two_point_law() {
        let pmf = two_point_pmf(1.0, 3.0, 0.5);
        for weights in [vec![1.0, 3.0], vec![1.0, 1.0, 3.0, 3.0]] {
            let exact = vwa_bruteforce(&weights, &pmf).unwrap();
            let est = vwa_mc(&weights, &pmf, 20_000, 7).unwrap();
            assert!(
                (est.value - exact).abs() <= 3.0 * est.std_error,
                "mc {} +- {} vs exact {}",
                est.value,
                est.std_error,
                exact
            );
        }
    }

    #[test]
    fn vwa_bruteforce_guard() {
        let pmf = two_point_pmf(1.0, 2.0, 0.5);
        let weights = vec![1.0; 32];
        assert!(matches!(
            vwa_bruteforce(&weights, &pmf),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn vwa_bruteforce_rejects_degenerate_pmf() {
        // Zero weight with an all-zero tail makes a 0/0 term.
        let pmf = point_mass_pmf(0.0);
        assert_eq!(
            vwa_bruteforce(&[0.0, 0.0], &pmf).unwrap_err(),
            Error::DegenerateWeightPmf
        );
    }

    #[test]
    fn perk_bound_clamp_degeneracy() {
        // n = 2, unit weights and moments, x = 2: the floors N_x(1), N_x(2)
        // both clamp to zero, so the first coordinate's replacement term has
        // denominator 0.
        let m = WeightMoments::new(1.0, 1.0).unwrap();
        let bound = vwa_bound_perk(&[1.0, 1.0], &m, 2.0).unwrap();
        assert_eq!(bound.value, f64::INFINITY);
        assert_eq!(
            bound.degeneracy,
            Some(ProxyDegeneracy::ZeroDenominatorAt { k: 1 })
        );
    }

    #[test]
    fn perk_bound_hand_value() {
        // n = 4, unit weights and moments, x = 1/2: floors are m - sqrt(m).
        let m = WeightMoments::new(1.0, 1.0).unwrap();
        let floor = |m: f64| m - m.sqrt();
        let mut expected = 0.0;
        for k in 1..=4usize {
            let prefix_k = k as f64;
            let prefix_km1 = (k - 1) as f64;
            expected += 1.0 / (prefix_k + floor((4 - k) as f64)).powi(2);
            expected += 1.0 / (prefix_km1 + floor((4 - k + 1) as f64)).powi(2);
        }
        let bound = vwa_bound_perk(&[1.0; 4], &m, 0.5).unwrap();
        assert_relative_eq!(bound.value, expected, max_relative = 1e-14);
        assert_relative_eq!(bound.value, 1.2226749092525582, max_relative = 1e-12);
        assert_eq!(bound.degeneracy, None);
    }

    #[test]
    fn perk_bound_monotone_in_x() {
        let m = WeightMoments::new(1.0, 1.5).unwrap();
        let weights = [0.5, 2.0, 1.0, 1.0, 0.25];
        let mut last = 0.0;
        for x in [0.1, 0.3, 0.5, 1.0, 2.0] {
            let b = vwa_bound_perk(&weights, &m, x).unwrap();
            assert!(b.value >= last);
            last = b.value;
        }
    }

    #[test]
    fn global_bound_values() {
        // sum(W^2 + m2) = 8 over n = 4 unit weights with m2 = 1; x = 1/2
        // makes N_x(4) = 2, so the bound is 8 / 4 = 2.
        let m = WeightMoments::new(1.0, 1.0).unwrap();
        let bound = vwa_bound_global(&[1.0; 4], &m, 0.5).unwrap();
        assert_relative_eq!(bound.value, 2.0, max_relative = 1e-15);

        let m2 = WeightMoments::new(1.0, 2.0).unwrap();
        let bound = vwa_bound_global(&[1.0; 100], &m2, 2.0).unwrap();
        assert_relative_eq!(bound.value, 0.05833005995803065, max_relative = 1e-12);

        let heavy = WeightMoments::new(1.0, 100.0).unwrap();
        let bound = vwa_bound_global(&[1.0; 4], &heavy, 2.0).unwrap();
        assert_eq!(bound.value, f64::INFINITY);
        assert_eq!(bound.degeneracy, Some(ProxyDegeneracy::ZeroWeightSumFloor));
    }

    #[test]
    fn wis_radius_values() {
        assert_eq!(wis_concentration_radius(0.0, 2.0, 1.0).unwrap(), 2.0);
        assert_relative_eq!(
            wis_concentration_radius(0.5, 2.0, 1.0).unwrap(),
            3.2821622023050265,
            max_relative = 1e-14
        );
        assert_eq!(
            wis_concentration_radius(f64::INFINITY, 2.0, 1.0).unwrap(),
            f64::INFINITY
        );
        assert!(wis_concentration_radius(0.5, 1.0, 1.0).is_err());
        assert!(wis_concentration_radius(0.5, 2.0, 0.0).is_err());
    }

    #[test]
    fn opev_clamps_to_zero_when_radius_dominates() {
        let uniform = cat(&[0.5, 0.5]);
        // Low rewards: the radius exceeds the estimate, so the bound clamps.
        let data = LoggedData::new(vec![0, 1, 0, 1], vec![0.1, 0.0, 0.1, 0.0], 2).unwrap();
        let report = opev_lower_bound(
            &data,
            &uniform,
            &uniform,
            2.0,
            0.01,
            ProxyMode::BruteForce,
            0,
        )
        .unwrap();
        assert_eq!(report.value, 0.0);
    }

    #[test]
    fn opev_chain_hand_value() {
        // Matched uniform policies over K = 2, all rewards 1, n = 100,
        // x = 2, y = 0.01, global proxy: all weights are 1, the estimate is
        // 1, N = 80, proxy = 200 / 80^2 and the bound follows the formula.
        let uniform = cat(&[0.5, 0.5]);
        let actions: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let data = LoggedData::new(actions, vec![1.0; 100], 2).unwrap();
        let report =
            opev_lower_bound(&data, &uniform, &uniform, 2.0, 0.01, ProxyMode::Global, 0).unwrap();
        assert_relative_eq!(report.proxy.unwrap(), 0.03125, max_relative = 1e-15);
        let radius = wis_concentration_radius(0.03125, 2.0, 0.01).unwrap();
        assert_relative_eq!(
            report.value,
            0.8 * (1.0 - radius).max(0.0),
            max_relative = 1e-12
        );
        assert_relative_eq!(report.value, 0.19218675869078103, max_relative = 1e-12);
        // Closed-form proxy: budget (n + 1) e^-x.
        assert_relative_eq!(
            report.failure_budget,
            101.0 * (-2.0f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn opev_exact_proxy_budget_is_two_events() {
        let uniform = cat(&[0.5, 0.5]);
        let data = LoggedData::new(vec![0, 1], vec![1.0, 1.0], 2).unwrap();
        let report = opev_lower_bound(
            &data,
            &uniform,
            &uniform,
            2.0,
            0.01,
            ProxyMode::BruteForce,
            0,
        )
        .unwrap();
        assert_eq!(report.events.len(), 2);
        assert_relative_eq!(
            report.failure_budget,
            2.0 * (-2.0f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn opev_zero_floor_gives_zero_bound() {
        // Strong mismatch: m2 large enough that N_x(n) clamps to zero.
        let target = cat(&[0.99, 0.01]);
        let behavior = cat(&[0.01, 0.99]);
        let data = LoggedData::new(vec![0, 1, 1, 0], vec![1.0; 4], 2).unwrap();
        let report =
            opev_lower_bound(&data, &target, &behavior, 2.0, 0.01, ProxyMode::Global, 0).unwrap();
        assert_eq!(report.value, 0.0);
    }

    #[test]
    fn pmf_from_policies_merges_equal_ratios() {
        let pmf = WeightPmf::from_policies(&cat(&[0.5, 0.5]), &cat(&[0.5, 0.5])).unwrap();
        assert_eq!(pmf.len(), 1);
        assert_eq!(pmf.support(), &[1.0]);
        let m = pmf.moments().unwrap();
        assert_eq!((m.m1, m.m2), (1.0, 1.0));
    }

    #[test]
    fn pmf_moments_match_policy_moments() {
        let target = cat(&[0.75, 0.1, 0.15]);
        let behavior = cat(&[0.2, 0.5, 0.3]);
        let pmf = WeightPmf::from_policies(&target, &behavior).unwrap();
        let from_pmf = pmf.moments().unwrap();
        let direct = weight_moments(&target, &behavior).unwrap();
        assert_relative_eq!(from_pmf.m1, direct.m1, max_relative = 1e-12);
        assert_relative_eq!(from_pmf.m2, direct.m2, max_relative = 1e-12);
    }

    #[test]
    fn logged_data_validation() {
        assert!(matches!(
            LoggedData::new(vec![0, 2], vec![0.5, 0.5], 2),
            Err(Error::ActionOutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            LoggedData::new(vec![0, 1], vec![0.5, 1.5], 2),
            Err(Error::RewardOutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            LoggedData::new(vec![], vec![], 2),
            Err(Error::EmptySample)
        ));
    }
}
