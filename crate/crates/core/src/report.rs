//! Bound reports with explicit confidence budgets.
//!
//! Composite bounds consume several probabilistic events through union
//! bounds. Each report itemizes every event and its failure-probability
//! share so the total budget is auditable rather than implicit.

use serde::Serialize;

/// Identifies a bound family in reports and coverage harnesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundName {
    EsRadiusLogy,
    EsRadiusScaleFree,
    WisConcentration,
    OpevLowerBound,
    OplLowerBound,
    GenBound,
    EmpiricalBernstein,
    EffectiveN,
    VwaPerk,
    VwaGlobal,
}

impl BoundName {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundName::EsRadiusLogy => "es_radius_logy",
            BoundName::EsRadiusScaleFree => "es_radius_scale_free",
            BoundName::WisConcentration => "wis_concentration",
            BoundName::OpevLowerBound => "opev_lower_bound",
            BoundName::OplLowerBound => "opl_lower_bound",
            BoundName::GenBound => "gen_bound",
            BoundName::EmpiricalBernstein => "empirical_bernstein",
            BoundName::EffectiveN => "effective_n",
            BoundName::VwaPerk => "vwa_perk",
            BoundName::VwaGlobal => "vwa_global",
        }
    }
}

/// Whether `value` bounds a deviation from above or a target from below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    TwoSidedRadius,
    LowerBound,
    UpperBound,
}

/// One probabilistic event consumed by a composite bound.
#[derive(Debug, Clone, Serialize)]
pub struct FailureEvent {
    pub name: String,
    /// This event's failure-probability share, e.g. `e^{-x}` or `n e^{-x}`.
    pub budget: f64,
}

impl FailureEvent {
    pub fn new(name: impl Into<String>, budget: f64) -> Self {
        Self {
            name: name.into(),
            budget,
        }
    }
}

/// A computed radius or lower bound together with its provenance.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub bound: BoundName,
    pub kind: BoundKind,
    pub value: f64,
    /// Total failure probability, the sum of all event budgets.
    pub failure_budget: f64,
    /// `1 - failure_budget`, floored at 0 when the union budget is vacuous.
    pub confidence: f64,
    pub events: Vec<FailureEvent>,
    pub x: f64,
    pub y: Option<f64>,
    /// Variance proxy fed into the radius, when one exists.
    pub proxy: Option<f64>,
    pub kl: Option<f64>,
    /// Free-text notes, e.g. which proxy mode produced `proxy` or whether a
    /// population quantity was supplied by an oracle.
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn new(bound: BoundName, kind: BoundKind, value: f64, x: f64) -> Self {
        Self {
            bound,
            kind,
            value,
            failure_budget: 0.0,
            confidence: 1.0,
            events: Vec::new(),
            x,
            y: None,
            proxy: None,
            kl: None,
            notes: Vec::new(),
        }
    }

    pub fn with_event(mut self, event: FailureEvent) -> Self {
        self.failure_budget += event.budget;
        self.confidence = (1.0 - self.failure_budget).max(0.0);
        self.events.push(event);
        self
    }

    pub fn with_y(mut self, y: f64) -> Self {
        self.y = Some(y);
        self
    }

    pub fn with_proxy(mut self, proxy: f64) -> Self {
        self.proxy = Some(proxy);
        self
    }

    pub fn with_kl(mut self, kl: f64) -> Self {
        self.kl = Some(kl);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}
