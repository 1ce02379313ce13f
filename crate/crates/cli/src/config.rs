//! Experiment configuration: JSON schema, defaults, and validation.
//!
//! Every constraint is checked before any computation starts; violations
//! are reported together, each with its field path.

use std::path::PathBuf;

use serde::Deserialize;

use steinbound_core::categorical::Categorical;
use steinbound_core::concentration::TailParams;
use steinbound_core::opl::{FinitePolicyClass, LearnConfig};
use steinbound_core::sim::{
    scenario_heavy_k3, scenario_matched_k2, scenario_mismatched_k5, BanditEnv, BoundSpec,
    RewardLaw, Scenario,
};
use steinbound_core::wis::ProxyMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Eval,
    Learn,
    Coverage,
    VerifyCanonical,
    GenBound,
}

impl CommandName {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommandName::Eval => "eval",
            CommandName::Learn => "learn",
            CommandName::Coverage => "coverage",
            CommandName::VerifyCanonical => "verify-canonical",
            CommandName::GenBound => "gen-bound",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Bernoulli,
    PointMass,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    MatchedK2,
    MismatchedK5,
    HeavyK3,
    Custom {
        reward_means: Vec<f64>,
        #[serde(default)]
        reward_laws: Option<Vec<LawSpec>>,
        behavior: Vec<f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    /// Which bound a coverage run exercises; ignored by other commands.
    #[serde(default)]
    pub name: Option<String>,
    pub x: f64,
    #[serde(default)]
    pub y: Option<f64>,
    #[serde(default)]
    pub y_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub proxy_mode: Option<String>,
    #[serde(default)]
    pub inner_reps: Option<u32>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnParams {
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_gradient_epsilon")]
    pub gradient_epsilon: f64,
}

fn default_step_size() -> f64 {
    0.5
}
fn default_max_iters() -> usize {
    50
}
fn default_gradient_epsilon() -> f64 {
    1e-4
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            step_size: default_step_size(),
            max_iters: default_max_iters(),
            gradient_epsilon: default_gradient_epsilon(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandName,
    pub environment: EnvSpec,
    #[serde(default)]
    pub behavior: Option<Vec<f64>>,
    #[serde(default)]
    pub target: Option<Vec<f64>>,
    #[serde(default)]
    pub class: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub posterior: Option<Vec<f64>>,
    #[serde(default)]
    pub prior: Option<Vec<f64>>,
    #[serde(default)]
    pub posterior_temperature: Option<f64>,
    pub n: usize,
    #[serde(default)]
    pub trials: Option<u64>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    pub bound: BoundParams,
    #[serde(default)]
    pub learn: Option<LearnParams>,
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// A fully validated experiment, ready to run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub command: CommandName,
    pub scenario: Scenario,
    pub n: usize,
    pub x: f64,
    pub y: f64,
    pub y_defaulted: bool,
    pub y_grid: Option<Vec<f64>>,
    pub proxy_mode: ProxyMode,
    pub bound_name: Option<String>,
    pub posterior: Option<Categorical>,
    pub temperature: Option<f64>,
    pub trials: Option<u64>,
    pub lambda_grid: Vec<f64>,
    pub learn: LearnParams,
    pub seed: u64,
    pub out: PathBuf,
}

impl Resolved {
    pub fn learn_config(&self) -> LearnConfig {
        LearnConfig {
            x: self.x,
            y: self.y,
            step_size: self.learn.step_size,
            max_iters: self.learn.max_iters,
            gradient_epsilon: self.learn.gradient_epsilon,
            proxy_mode: self.proxy_mode,
            seed: self.seed,
        }
    }
}

pub const VALID_BOUND_NAMES: &[&str] = &[
    "es_radius_logy",
    "es_radius_scale_free",
    "wis_concentration",
    "opev_lower_bound",
    "opl_lower_bound",
    "gen_bound",
    "empirical_bernstein",
    "effective_n",
    "vwa_perk",
    "vwa_global",
];

fn simplex_field(raw: &[f64], field: &str, errors: &mut Vec<String>) -> Option<Categorical> {
    match Categorical::new(raw.to_vec()) {
        Ok(c) => Some(c),
        Err(e) => {
            errors.push(format!("{field}: {e}"));
            None
        }
    }
}

/// Bounds whose confidence exponent only needs to be positive; everything
/// else routes through a log-barrier radius requiring x >= 2.
fn x_threshold(command: CommandName, bound_name: Option<&str>) -> (f64, &'static str) {
    match (command, bound_name) {
        (CommandName::Coverage, Some("es_radius_scale_free")) => (0.0, "bound.x: must be >= 0"),
        (CommandName::Coverage, Some("effective_n") | Some("vwa_perk") | Some("vwa_global")) => {
            (f64::MIN_POSITIVE, "bound.x: must be > 0")
        }
        (CommandName::VerifyCanonical, _) => (f64::MIN_POSITIVE, "bound.x: must be > 0"),
        _ => (
            2.0,
            "bound.x: must be >= 2 (theorem precondition for y-dependent bounds)",
        ),
    }
}

pub fn resolve(config: &ExperimentConfig) -> Result<Resolved, Vec<String>> {
    let mut errors = Vec::new();

    if config.n == 0 {
        errors.push("n: must be >= 1".into());
    }

    // Environment and default policies.
    let (env, preset_behavior, preset_target) = match &config.environment {
        EnvSpec::MatchedK2 => {
            let s = scenario_matched_k2();
            (Some(s.env), Some(s.behavior), s.target)
        }
        EnvSpec::MismatchedK5 => {
            let s = scenario_mismatched_k5();
            (Some(s.env), Some(s.behavior), s.target)
        }
        EnvSpec::HeavyK3 => {
            let s = scenario_heavy_k3();
            (Some(s.env), Some(s.behavior), s.target)
        }
        EnvSpec::Custom {
            reward_means,
            reward_laws,
            behavior,
        } => {
            let laws: Vec<RewardLaw> = match reward_laws {
                None => vec![RewardLaw::Bernoulli; reward_means.len()],
                Some(specs) => specs
                    .iter()
                    .map(|l| match l {
                        LawSpec::Bernoulli => RewardLaw::Bernoulli,
                        LawSpec::PointMass => RewardLaw::PointMass,
                    })
                    .collect(),
            };
            let env = match BanditEnv::new(reward_means.clone(), laws) {
                Ok(env) => Some(env),
                Err(e) => {
                    errors.push(format!("environment: {e}"));
                    None
                }
            };
            let behavior = simplex_field(behavior, "environment.behavior", &mut errors);
            (env, behavior, None)
        }
    };

    let behavior = match &config.behavior {
        Some(raw) => simplex_field(raw, "behavior", &mut errors),
        None => preset_behavior,
    };
    let target = match &config.target {
        Some(raw) => simplex_field(raw, "target", &mut errors),
        None => preset_target,
    };

    let class = match &config.class {
        None => None,
        Some(rows) => {
            let mut policies = Vec::with_capacity(rows.len());
            for (j, row) in rows.iter().enumerate() {
                if let Some(c) = simplex_field(row, &format!("class[{j}]"), &mut errors) {
                    policies.push(c);
                }
            }
            if policies.len() == rows.len() {
                match FinitePolicyClass::new(policies) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        errors.push(format!("class: {e}"));
                        None
                    }
                }
            } else {
                None
            }
        }
    };

    let posterior = config
        .posterior
        .as_ref()
        .and_then(|raw| simplex_field(raw, "posterior", &mut errors));
    let prior = config
        .prior
        .as_ref()
        .and_then(|raw| simplex_field(raw, "prior", &mut errors));

    if let (Some(env), Some(behavior)) = (&env, &behavior) {
        if behavior.len() != env.num_actions() {
            errors.push(format!(
                "behavior: length {} does not match environment with {} actions",
                behavior.len(),
                env.num_actions()
            ));
        }
        if let Some(t) = &target {
            if t.len() != env.num_actions() {
                errors.push(format!(
                    "target: length {} does not match environment with {} actions",
                    t.len(),
                    env.num_actions()
                ));
            }
        }
        if let Some(c) = &class {
            if c.policy(0).len() != env.num_actions() {
                errors.push(format!(
                    "class: policies over {} actions do not match environment with {} actions",
                    c.policy(0).len(),
                    env.num_actions()
                ));
            }
        }
    }
    if let (Some(c), Some(p)) = (&class, &posterior) {
        if p.len() != c.len() {
            errors.push(format!(
                "posterior: length {} does not match class of size {}",
                p.len(),
                c.len()
            ));
        }
    }
    if let (Some(c), Some(p)) = (&class, &prior) {
        if p.len() != c.len() {
            errors.push(format!(
                "prior: length {} does not match class of size {}",
                p.len(),
                c.len()
            ));
        }
    }

    // Bound parameters.
    let bound_name = config.bound.name.clone();
    if config.command == CommandName::Coverage {
        match bound_name.as_deref() {
            None => errors.push(format!(
                "bound.name: required for coverage; one of {}",
                VALID_BOUND_NAMES.join(", ")
            )),
            Some(name) if !VALID_BOUND_NAMES.contains(&name) => errors.push(format!(
                "bound.name: unknown bound {name:?}; one of {}",
                VALID_BOUND_NAMES.join(", ")
            )),
            _ => {}
        }
    }
    let (x_min, x_msg) = x_threshold(config.command, bound_name.as_deref());
    if !(config.bound.x >= x_min) {
        errors.push(format!("{x_msg}, got {}", config.bound.x));
    }

    let y_defaulted = config.bound.y.is_none();
    let y = config.bound.y.unwrap_or_else(|| {
        // Problem-agnostic default scale.
        TailParams::default_y(config.n.max(1))
    });
    if !(y > 0.0) {
        errors.push(format!("bound.y: must be > 0, got {y}"));
    }
    if let Some(grid) = &config.bound.y_grid {
        if grid.is_empty() {
            errors.push("bound.y_grid: must be nonempty when present".into());
        }
        for (i, &v) in grid.iter().enumerate() {
            if !(v > 0.0) {
                errors.push(format!("bound.y_grid[{i}]: must be > 0, got {v}"));
            }
        }
    }

    let proxy_mode = match config.bound.proxy_mode.as_deref() {
        None | Some("global") => ProxyMode::Global,
        Some("perk") => ProxyMode::PerK,
        Some("bruteforce") => ProxyMode::BruteForce,
        Some("mc") => {
            let inner_reps = config.bound.inner_reps.unwrap_or(0);
            if inner_reps == 0 {
                errors.push("bound.inner_reps: must be >= 1 when proxy_mode is \"mc\"".into());
            }
            ProxyMode::Mc { inner_reps }
        }
        Some(other) => {
            errors.push(format!(
                "bound.proxy_mode: unknown mode {other:?}; one of perk, global, bruteforce, mc"
            ));
            ProxyMode::Global
        }
    };

    if let Some(t) = config.posterior_temperature {
        if !(t > 0.0) {
            errors.push(format!("posterior_temperature: must be > 0, got {t}"));
        }
    }

    // Per-command requirements.
    match config.command {
        CommandName::Eval => {
            let has_opev = target.is_some() && posterior.is_none();
            let has_opl = class.is_some() && posterior.is_some();
            if !has_opev && !has_opl {
                errors
                    .push("eval: needs either a target policy, or a class plus a posterior".into());
            }
        }
        CommandName::Learn => {
            if class.is_none() {
                errors.push("class: required for learn".into());
            }
        }
        CommandName::Coverage => {
            match config.trials {
                None => errors.push("trials: required for coverage".into()),
                Some(0) => errors.push("trials: must be >= 1".into()),
                _ => {}
            }
            match bound_name.as_deref() {
                Some(
                    "wis_concentration" | "opev_lower_bound" | "effective_n" | "vwa_perk"
                    | "vwa_global",
                ) if target.is_none() => {
                    errors.push("target: required for this coverage bound".into());
                }
                Some("opl_lower_bound" | "gen_bound" | "empirical_bernstein")
                    if class.is_none() =>
                {
                    errors.push("class: required for this coverage bound".into());
                }
                _ => {}
            }
        }
        CommandName::VerifyCanonical => match config.trials {
            None => errors.push("trials: required for verify-canonical (number of pairs)".into()),
            Some(0) => errors.push("trials: must be >= 1".into()),
            _ => {}
        },
        CommandName::GenBound => {
            if class.is_none() {
                errors.push("class: required for gen-bound".into());
            }
        }
    }

    if let Some(params) = &config.learn {
        if !(params.step_size > 0.0) {
            errors.push(format!(
                "learn.step_size: must be > 0, got {}",
                params.step_size
            ));
        }
        if params.max_iters == 0 {
            errors.push("learn.max_iters: must be >= 1".into());
        }
        if !(params.gradient_epsilon > 0.0) {
            errors.push(format!(
                "learn.gradient_epsilon: must be > 0, got {}",
                params.gradient_epsilon
            ));
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }

    let mut scenario = Scenario::new(env.unwrap(), behavior.unwrap());
    scenario.target = target;
    scenario.class = class;
    scenario.prior = prior;

    Ok(Resolved {
        command: config.command,
        scenario,
        n: config.n,
        x: config.bound.x,
        y,
        y_defaulted,
        y_grid: config.bound.y_grid.clone(),
        proxy_mode,
        bound_name,
        posterior,
        temperature: config.posterior_temperature,
        trials: config.trials,
        lambda_grid: config
            .lambda_grid
            .clone()
            .unwrap_or_else(|| vec![-4.0, -2.0, -1.0, 1.0, 2.0, 4.0]),
        learn: config.learn.unwrap_or_default(),
        seed: config.seed,
        out: config
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("steinbound_result")),
    })
}

/// Build the coverage spec from a resolved config; assumes validation
/// passed.
pub fn bound_spec(resolved: &Resolved) -> BoundSpec {
    match resolved.bound_name.as_deref().unwrap_or_default() {
        "es_radius_logy" => BoundSpec::EsRadiusLogy {
            x: resolved.x,
            y: resolved.y,
        },
        "es_radius_scale_free" => BoundSpec::EsRadiusScaleFree { x: resolved.x },
        "wis_concentration" => BoundSpec::WisConcentration {
            x: resolved.x,
            y: resolved.y,
        },
        "opev_lower_bound" => BoundSpec::OpevLowerBound {
            x: resolved.x,
            y: resolved.y,
            proxy_mode: resolved.proxy_mode,
        },
        "opl_lower_bound" => BoundSpec::OplLowerBound {
            learn: resolved.learn_config(),
        },
        "gen_bound" => BoundSpec::GenBound {
            x: resolved.x,
            y: resolved.y,
            posterior_temperature: resolved.temperature,
        },
        "empirical_bernstein" => BoundSpec::EmpiricalBernstein {
            x: resolved.x,
            posterior_temperature: resolved.temperature,
        },
        "effective_n" => BoundSpec::EffectiveN { x: resolved.x },
        "vwa_perk" => BoundSpec::VwaPerk { x: resolved.x },
        "vwa_global" => BoundSpec::VwaGlobal { x: resolved.x },
        other => unreachable!("bound name {other:?} passed validation"),
    }
}
