//! TOML scenario files.
//!
//! ```toml
//! L = 2
//! n = [4, 8]
//! epsilon = "0.25"
//! trials = 200
//!
//! [source]
//! kind = "keys"
//! key_alphabet = 2
//!
//! [timeline]
//! kind = "threshold"
//! f1 = [2]
//! f2 = [0]
//!
//! [seeds]
//! binning = 1
//! sampling = 2
//! ```
//!
//! Probabilities and ε are decimal strings. Every other table is optional;
//! [`Scenario::normalized`] fills in the defaults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{
    aas_from_events, taas_timeline, validate_aas, AasTimeline, Family, ParticipantSet,
    ThresholdParams, UnauthorizedRule,
};
use crate::binning::BinningFamily;
use crate::eval::{AuditConfig, DEFAULT_EXACT_BUDGET};
use crate::rates::{plan_step, MarginConfig, RateError, RatePlan};
use crate::source::{make_keys_source, validate_source, JointSource, SourceTable, DEFAULT_TABLE_BUDGET};
use crate::typicality::DEFAULT_ENUMERATION_BUDGET;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Keys {
        key_alphabet: usize,
    },
    Table {
        alphabet_y: usize,
        alphabet_x: Vec<usize>,
        pmf: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimelineSpec {
    /// Groups that become authorized at each step.
    Events { events: Vec<Vec<Vec<usize>>> },
    /// `𝔸_t = {|A| ≥ f1(t)}`, `𝕌_t = {|U| ≤ f2(t)}`.
    Threshold { f1: Vec<usize>, f2: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    #[default]
    Complement,
    Explicit,
}

/// Unauthorized families for event timelines; threshold timelines take them
/// from `f2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct UnauthorizedSpec {
    #[serde(default)]
    pub rule: RuleKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unauthorized_sets: Vec<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub binning: u64,
    #[serde(default)]
    pub sampling: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    #[serde(default = "default_enumeration")]
    pub enumeration: u64,
    #[serde(default = "default_exact")]
    pub exact: u64,
}

fn default_enumeration() -> u64 {
    DEFAULT_ENUMERATION_BUDGET
}

fn default_exact() -> u64 {
    DEFAULT_EXACT_BUDGET
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            enumeration: default_enumeration(),
            exact: default_exact(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    /// Subsets to audit; empty means every member of `𝕌_t`.
    #[serde(default)]
    pub witnesses: Vec<Vec<usize>>,
    #[serde(default = "default_fallback")]
    pub fallback_samples: u64,
}

fn default_fallback() -> u64 {
    100_000
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            witnesses: Vec::new(),
            fallback_samples: default_fallback(),
        }
    }
}

/// Hand-set counts replacing the planner's choice, per step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PlanOverride {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma: Vec<usize>,
}

impl PlanOverride {
    pub fn is_empty(&self) -> bool {
        self.k.is_empty() && self.sigma.is_empty()
    }
}

fn default_trials() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(rename = "L")]
    pub participants: usize,
    pub n: Vec<usize>,
    pub epsilon: String,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub reveal_secrets: bool,
    pub source: SourceSpec,
    pub timeline: TimelineSpec,
    #[serde(default)]
    pub unauthorized: UnauthorizedSpec,
    #[serde(default)]
    pub margins: MarginConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub audit: AuditSpec,
    #[serde(default, skip_serializing_if = "PlanOverride::is_empty")]
    pub plan_override: PlanOverride,
}

/// Validated objects built from a scenario.
#[derive(Debug, Clone)]
pub struct Model {
    pub source: JointSource,
    pub timeline: AasTimeline,
    pub epsilon: f64,
}

fn parse_decimal(field: &str, s: &str) -> Result<f64, ScenarioError> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ScenarioError::Parse(format!(
            "{field}: expected a decimal string, got {s:?}"
        ))),
    }
}

fn invalid(context: &str, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Invalid(format!("{context}: {e}"))
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario is always serializable")
    }

    /// The scenario with every default spelled out.
    pub fn normalized(&self) -> String {
        self.to_toml()
    }

    pub fn epsilon(&self) -> Result<f64, ScenarioError> {
        parse_decimal("epsilon", &self.epsilon)
    }

    pub fn audit_config(&self, fallback_seed: u64) -> AuditConfig {
        AuditConfig {
            exact_budget: self.budgets.exact,
            fallback_samples: self.audit.fallback_samples,
            fallback_seed,
        }
    }

    fn sets(&self, context: &str, raw: &[Vec<usize>]) -> Result<Vec<ParticipantSet>, ScenarioError> {
        raw.iter()
            .map(|m| ParticipantSet::from_members(m, self.participants).map_err(|e| invalid(context, e)))
            .collect()
    }

    pub fn witnesses(&self) -> Result<Vec<ParticipantSet>, ScenarioError> {
        self.sets("audit.witnesses", &self.audit.witnesses)
    }

    /// Parses numbers, builds the source and timeline and validates both.
    pub fn build(&self) -> Result<Model, ScenarioError> {
        let epsilon = self.epsilon()?;
        let l = self.participants;
        if epsilon <= 0.0 {
            return Err(ScenarioError::Invalid("epsilon must be positive".into()));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(ScenarioError::Invalid("n must be a nonempty list of positive lengths".into()));
        }
        let source = match &self.source {
            SourceSpec::Keys { key_alphabet } => {
                make_keys_source(l, *key_alphabet).map_err(|e| invalid("source", e))?
            }
            SourceSpec::Table {
                alphabet_y,
                alphabet_x,
                pmf,
            } => {
                if alphabet_x.len() != l {
                    return Err(ScenarioError::Invalid(format!(
                        "source: {} participant alphabets but L = {l}",
                        alphabet_x.len()
                    )));
                }
                let pmf = pmf
                    .iter()
                    .enumerate()
                    .map(|(i, s)| parse_decimal(&format!("source.pmf[{i}]"), s))
                    .collect::<Result<Vec<_>, _>>()?;
                let table = SourceTable {
                    alphabet_y: *alphabet_y,
                    alphabet_x: alphabet_x.clone(),
                    pmf,
                };
                validate_source(table, DEFAULT_TABLE_BUDGET).map_err(|e| invalid("source", e))?
            }
        };
        let timeline = match &self.timeline {
            TimelineSpec::Threshold { f1, f2 } => {
                if self.unauthorized.rule != RuleKind::Complement
                    || !self.unauthorized.unauthorized_sets.is_empty()
                {
                    return Err(ScenarioError::Invalid(
                        "unauthorized: threshold timelines take 𝕌_t from f2".into(),
                    ));
                }
                let params = ThresholdParams {
                    f1: f1.clone(),
                    f2: f2.clone(),
                };
                taas_timeline(l, &params).map_err(|e| invalid("timeline", e))?
            }
            TimelineSpec::Events { events } => {
                let events = events
                    .iter()
                    .map(|step| self.sets("timeline.events", step))
                    .collect::<Result<Vec<_>, _>>()?;
                let rule = match self.unauthorized.rule {
                    RuleKind::Complement => {
                        if !self.unauthorized.unauthorized_sets.is_empty() {
                            return Err(ScenarioError::Invalid(
                                "unauthorized: unauthorized_sets requires rule = \"explicit\"".into(),
                            ));
                        }
                        UnauthorizedRule::Complement
                    }
                    RuleKind::Explicit => {
                        let families = self
                            .unauthorized
                            .unauthorized_sets
                            .iter()
                            .map(|step| {
                                self.sets("unauthorized.unauthorized_sets", step)
                                    .map(|v| v.into_iter().collect::<Family>())
                            })
                            .collect::<Result<Vec<_>, _>>()?;
                        UnauthorizedRule::Explicit(families)
                    }
                };
                aas_from_events(l, &events, &rule).map_err(|e| invalid("timeline", e))?
            }
        };
        validate_aas(&timeline).map_err(|e| invalid("timeline", e))?;
        let o = &self.plan_override;
        for (name, list) in [("k", &o.k), ("sigma", &o.sigma)] {
            if !list.is_empty() && list.len() != timeline.len() {
                return Err(ScenarioError::Invalid(format!(
                    "plan_override.{name} has {} entries for {} steps",
                    list.len(),
                    timeline.len()
                )));
            }
        }
        if o.k.windows(2).any(|w| w[1] < w[0]) {
            return Err(ScenarioError::Invalid("plan_override.k must be non-decreasing".into()));
        }
        self.witnesses()?;
        Ok(Model {
            source,
            timeline,
            epsilon,
        })
    }

    /// Planner output with `plan_override` applied step by step.
    pub fn plan(&self, model: &Model, family: &BinningFamily) -> Result<RatePlan, RateError> {
        let mut k_prev = 0;
        let mut steps = Vec::with_capacity(model.timeline.len());
        for (i, s) in model.timeline.steps().iter().enumerate() {
            let mut step = plan_step(&model.source, s, k_prev, &self.margins, family)?;
            let k = self.plan_override.k.get(i).copied();
            let sigma = self.plan_override.sigma.get(i).copied();
            if k.is_some() || sigma.is_some() {
                let (k, sigma) = (k.unwrap_or(step.k), sigma.unwrap_or(step.sigma));
                step = step.with_counts(k, sigma, k_prev, family.epsilon(), &self.margins);
            }
            k_prev = step.k;
            steps.push(step);
        }
        Ok(RatePlan {
            epsilon: family.epsilon(),
            b: family.b(),
            steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INTRO: &str = r#"
L = 4
n = [4]
epsilon = "0.25"

[source]
kind = "keys"
key_alphabet = 2

[timeline]
kind = "events"
events = [[[1, 2, 4]], [[2, 3]]]
"#;

    #[test]
    fn intro_scenario_builds() {
        let s = Scenario::from_toml(INTRO).unwrap();
        let m = s.build().unwrap();
        assert_eq!(m.timeline.step(1).authorized().len(), 2);
        assert_eq!(m.timeline.step(2).authorized().len(), 5);
        assert_eq!(s.trials, 100);
        assert_eq!(s.margins, MarginConfig::default());
    }

    #[test]
    fn normalized_dump_round_trips() {
        let s = Scenario::from_toml(INTRO).unwrap();
        let dumped = s.normalized();
        let again = Scenario::from_toml(&dumped).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.normalized(), dumped);
        assert!(dumped.contains("[budgets]"));
    }

    #[test]
    fn parse_failures_name_the_field() {
        let e = Scenario::from_toml(&INTRO.replace("key_alphabet", "key_alfabet")).unwrap_err();
        assert!(matches!(&e, ScenarioError::Parse(m) if m.contains("key_alfabet")), "{e}");
        let e = Scenario::from_toml(&INTRO.replace("\"0.25\"", "\"quarter\""))
            .unwrap()
            .build()
            .unwrap_err();
        assert!(matches!(&e, ScenarioError::Parse(m) if m.contains("epsilon")), "{e}");
    }

    #[test]
    fn validation_failures() {
        let shrinking = INTRO.replace("[[[1, 2, 4]], [[2, 3]]]", "[[[1, 2, 4]], []]");
        let e = Scenario::from_toml(&shrinking).unwrap().build().unwrap_err();
        assert!(matches!(&e, ScenarioError::Invalid(m) if m.contains("timeline")), "{e}");
        let table = r#"
L = 1
n = [2]
epsilon = "0.5"
[source]
kind = "table"
alphabet_y = 2
alphabet_x = [2]
pmf = ["0.5", "0.25", "0.25", "-0.1"]
[timeline]
kind = "threshold"
f1 = [1]
f2 = [0]
"#;
        let e = Scenario::from_toml(table).unwrap().build().unwrap_err();
        assert!(matches!(&e, ScenarioError::Invalid(m) if m.contains("negative")), "{e}");
    }

    #[test]
    fn overrides_replace_counts() {
        let text = format!("{INTRO}\n[plan_override]\nk = [1, 1]\n");
        let s = Scenario::from_toml(&text).unwrap();
        let m = s.build().unwrap();
        let fam = crate::binning::make_family(0, 4, 0.25, 16).unwrap();
        let plan = s.plan(&m, &fam).unwrap();
        assert_eq!(plan.steps.iter().map(|p| p.k).collect::<Vec<_>>(), vec![1, 1]);
        let bad = format!("{INTRO}\n[plan_override]\nk = [3, 1]\n");
        assert!(Scenario::from_toml(&bad).unwrap().build().is_err());
    }
}
