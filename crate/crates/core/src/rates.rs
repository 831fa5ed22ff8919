//! Rate planning and capacity analytics.
//!
//! At each step the dealer picks `k_t` message binnings and `σ_t` secret
//! binnings:
//!
//! ```text
//! k_t = max(k_{t-1}, ⌈(max_{A ∈ 𝔸_t} H(Y|X_A) + δ(ε)) / ε⌉)
//! σ_t = max(0, ⌊(min_{U ∈ 𝕌_t} H(Y|X_U) - ε k_t - δ(ε)) / ε⌋)
//! ```
//!
//! with message rate `R'_t = (k_t - k_{t-1}) ε` and secret rate `R_t = σ_t ε`.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{AasTimeline, AccessStructure, Family, ParticipantSet};
use crate::binning::BinningFamily;
use crate::numeric::{ceil_snapped, floor_snapped};
use crate::source::{JointSource, SourceError};

/// Entropy values closer than this are treated as ties when picking
/// witnesses.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("{0} family is empty")]
    EmptyFamily(&'static str),
    #[error("step needs {required} message binnings but the family only has {b}")]
    InsufficientBinnings { required: usize, b: usize },
    #[error("thresholds require v < u, got u={u}, v={v}")]
    BadThresholds { u: usize, v: usize },
    #[error("k_prev = {k_prev} exceeds b = {b}")]
    BadPreviousCount { k_prev: usize, b: usize },
    #[error(transparent)]
    Source(#[from] SourceError),
}

/// Choice of the margin function `δ(ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaFn {
    /// `δ(ε) = ε log2 |𝒴|`.
    AlphabetScaled,
    /// `δ(ε) = c ε`.
    Scaled { factor: f64 },
    /// `δ(ε) = d`, independent of ε.
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginConfig {
    pub delta: DeltaFn,
    /// Multiplier `c` of the stricter secrecy check `ε(σ + k) < min H - c δ`.
    pub secrecy_margin_multiplier: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            delta: DeltaFn::AlphabetScaled,
            secrecy_margin_multiplier: 3.0,
        }
    }
}

impl MarginConfig {
    pub fn delta(&self, epsilon: f64, alphabet_y: usize) -> f64 {
        match self.delta {
            DeltaFn::AlphabetScaled => crate::typicality::default_delta(epsilon, alphabet_y),
            DeltaFn::Scaled { factor } => factor * epsilon,
            DeltaFn::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanWarning {
    /// `σ_t = 0`: the step shares no secret.
    ZeroRate,
    /// `ε(σ_t + k_t) < min H - c δ(ε)` fails.
    SecrecyMarginNotMet,
    /// `k_t` or `σ_t` was set by hand rather than by the planner.
    Overridden,
}

/// Which of the derived constraints hold for the chosen counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    /// `k_t ε > max_A H(Y|X_A) + δ(ε)`.
    pub reliability_strict: bool,
    /// `ε(σ_t + k_t) < min_U H(Y|X_U) - δ(ε)`.
    pub secrecy_strict: bool,
    /// `ε(σ_t + k_t) < min_U H(Y|X_U) - c δ(ε)`.
    pub secrecy_with_margin: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    #[serde(rename = "k_t")]
    pub k: usize,
    #[serde(rename = "sigma_t")]
    pub sigma: usize,
    #[serde(rename = "R_prime_t")]
    pub message_rate: f64,
    #[serde(rename = "R_t")]
    pub secret_rate: f64,
    pub max_authorized_entropy: f64,
    #[serde(rename = "argmax_A")]
    pub argmax_authorized: ParticipantSet,
    pub min_unauthorized_entropy: f64,
    #[serde(rename = "argmin_U")]
    pub argmin_unauthorized: ParticipantSet,
    pub delta: f64,
    pub constraints: ConstraintCheck,
    pub warnings: Vec<PlanWarning>,
}

impl StepPlan {
    /// Replaces the planned counts, recomputing rates and diagnostics.
    pub fn with_counts(
        mut self,
        k: usize,
        sigma: usize,
        k_prev: usize,
        epsilon: f64,
        margins: &MarginConfig,
    ) -> Self {
        self.k = k;
        self.sigma = sigma;
        self.message_rate = k.saturating_sub(k_prev) as f64 * epsilon;
        self.secret_rate = sigma as f64 * epsilon;
        self.constraints = check_constraints(
            k,
            sigma,
            epsilon,
            self.delta,
            self.max_authorized_entropy,
            self.min_unauthorized_entropy,
            margins.secrecy_margin_multiplier,
        );
        self.warnings = warnings_for(sigma, &self.constraints);
        self.warnings.push(PlanWarning::Overridden);
        self
    }
}

fn check_constraints(
    k: usize,
    sigma: usize,
    epsilon: f64,
    delta: f64,
    max_a: f64,
    min_u: f64,
    multiplier: f64,
) -> ConstraintCheck {
    const TOL: f64 = 1e-12;
    let used = epsilon * (k + sigma) as f64;
    ConstraintCheck {
        reliability_strict: epsilon * k as f64 - (max_a + delta) > TOL,
        secrecy_strict: (min_u - delta) - used > TOL,
        secrecy_with_margin: (min_u - multiplier * delta) - used > TOL,
    }
}

fn warnings_for(sigma: usize, constraints: &ConstraintCheck) -> Vec<PlanWarning> {
    let mut w = Vec::new();
    if sigma == 0 {
        w.push(PlanWarning::ZeroRate);
    }
    if !constraints.secrecy_with_margin {
        w.push(PlanWarning::SecrecyMarginNotMet);
    }
    w
}

/// Per-step plans for a whole timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePlan {
    pub epsilon: f64,
    pub b: usize,
    pub steps: Vec<StepPlan>,
}

impl RatePlan {
    /// `Σ_{i <= t} R'_i = k_t ε`.
    pub fn cumulative_message_rate(&self, t: usize) -> f64 {
        self.steps[..t].iter().map(|s| s.message_rate).sum()
    }

    pub fn step(&self, t: usize) -> &StepPlan {
        &self.steps[t - 1]
    }
}

/// Memoized `H(Y|X_S)` over subsets of one source.
#[derive(Debug)]
pub struct EntropyCache<'a> {
    src: &'a JointSource,
    values: HashMap<ParticipantSet, f64>,
}

impl<'a> EntropyCache<'a> {
    pub fn new(src: &'a JointSource) -> Self {
        Self {
            src,
            values: HashMap::new(),
        }
    }

    pub fn source(&self) -> &'a JointSource {
        self.src
    }

    pub fn get(&mut self, set: ParticipantSet) -> Result<f64, SourceError> {
        if let Some(&h) = self.values.get(&set) {
            return Ok(h);
        }
        let h = self.src.conditional_entropy(set)?;
        self.values.insert(set, h);
        Ok(h)
    }

    /// `(value, witness)` of the extremum of `H(Y|X_S)` over `family`;
    /// ties go to the lexicographically smallest set.
    fn extremum(
        &mut self,
        family: &Family,
        which: &'static str,
        prefer: Ordering,
    ) -> Result<(f64, ParticipantSet), RateError> {
        let mut best: Option<(f64, ParticipantSet)> = None;
        for &s in family {
            let h = self.get(s)?;
            best = Some(match best {
                None => (h, s),
                Some((bh, bs)) => {
                    if (h - bh).abs() <= TIE_TOLERANCE {
                        if s.lex_cmp(bs) == Ordering::Less {
                            (bh, s)
                        } else {
                            (bh, bs)
                        }
                    } else if h.partial_cmp(&bh) == Some(prefer) {
                        (h, s)
                    } else {
                        (bh, bs)
                    }
                }
            });
        }
        best.ok_or(RateError::EmptyFamily(which))
    }

    /// `max_{A ∈ 𝔸} H(Y|X_A)` with its witness.
    pub fn max_authorized(&mut self, s: &AccessStructure) -> Result<(f64, ParticipantSet), RateError> {
        self.extremum(s.authorized(), "authorized", Ordering::Greater)
    }

    /// `min_{U ∈ 𝕌} H(Y|X_U)` with its witness.
    pub fn min_unauthorized(
        &mut self,
        s: &AccessStructure,
    ) -> Result<(f64, ParticipantSet), RateError> {
        self.extremum(s.unauthorized(), "unauthorized", Ordering::Less)
    }
}

fn plan_step_cached(
    cache: &mut EntropyCache<'_>,
    structure: &AccessStructure,
    k_prev: usize,
    margins: &MarginConfig,
    family: &BinningFamily,
) -> Result<StepPlan, RateError> {
    let b = family.b();
    if k_prev > b {
        return Err(RateError::BadPreviousCount { k_prev, b });
    }
    let epsilon = family.epsilon();
    let delta = margins.delta(epsilon, cache.source().alphabet_y());
    let (max_a, argmax) = cache.max_authorized(structure)?;
    let (min_u, argmin) = cache.min_unauthorized(structure)?;

    let required = ceil_snapped((max_a + delta) / epsilon).max(0.0) as usize;
    let k = k_prev.max(required);
    if k > b {
        return Err(RateError::InsufficientBinnings { required: k, b });
    }
    let sigma_real = floor_snapped((min_u - epsilon * k as f64 - delta) / epsilon);
    let sigma = (sigma_real.max(0.0) as usize).min(b);

    let constraints = check_constraints(
        k,
        sigma,
        epsilon,
        delta,
        max_a,
        min_u,
        margins.secrecy_margin_multiplier,
    );
    let warnings = warnings_for(sigma, &constraints);
    Ok(StepPlan {
        k,
        sigma,
        message_rate: (k - k_prev) as f64 * epsilon,
        secret_rate: sigma as f64 * epsilon,
        max_authorized_entropy: max_a,
        argmax_authorized: argmax,
        min_unauthorized_entropy: min_u,
        argmin_unauthorized: argmin,
        delta,
        constraints,
        warnings,
    })
}

/// Plans one step given the previous message-binning count.
pub fn plan_step(
    src: &JointSource,
    structure: &AccessStructure,
    k_prev: usize,
    margins: &MarginConfig,
    family: &BinningFamily,
) -> Result<StepPlan, RateError> {
    plan_step_cached(&mut EntropyCache::new(src), structure, k_prev, margins, family)
}

/// Folds [`plan_step`] over the timeline, threading `k_{t-1}` from `k_0 = 0`.
pub fn plan_timeline(
    src: &JointSource,
    tl: &AasTimeline,
    margins: &MarginConfig,
    family: &BinningFamily,
) -> Result<RatePlan, RateError> {
    let mut cache = EntropyCache::new(src);
    let mut k_prev = 0;
    let mut steps = Vec::with_capacity(tl.len());
    for s in tl.steps() {
        let step = plan_step_cached(&mut cache, s, k_prev, margins, family)?;
        k_prev = step.k;
        steps.push(step);
    }
    Ok(RatePlan {
        epsilon: family.epsilon(),
        b: family.b(),
        steps,
    })
}

/// `min_U H(Y|X_U) - max_A H(Y|X_A)`, possibly non-positive.
pub fn achievable_rate(src: &JointSource, structure: &AccessStructure) -> Result<f64, RateError> {
    let mut cache = EntropyCache::new(src);
    let (max_a, _) = cache.max_authorized(structure)?;
    let (min_u, _) = cache.min_unauthorized(structure)?;
    Ok(min_u - max_a)
}

/// `min_U min_A I(Y; X_A | X_U)`.
pub fn converse_bound(src: &JointSource, structure: &AccessStructure) -> Result<f64, RateError> {
    if structure.authorized().is_empty() {
        return Err(RateError::EmptyFamily("authorized"));
    }
    if structure.unauthorized().is_empty() {
        return Err(RateError::EmptyFamily("unauthorized"));
    }
    let mut cache = EntropyCache::new(src);
    let mut best = f64::INFINITY;
    for &u in structure.unauthorized() {
        let outer = cache.get(u)?;
        for &a in structure.authorized() {
            let cmi = if a.is_subset(u) {
                0.0
            } else {
                (outer - cache.get(a.union(u))?).max(0.0)
            };
            best = best.min(cmi);
        }
    }
    Ok(best)
}

/// Threshold capacity `H(X) (u - v)` of the uniform-keys model.
pub fn threshold_capacity(key_entropy: f64, u: usize, v: usize) -> Result<f64, RateError> {
    if v >= u {
        return Err(RateError::BadThresholds { u, v });
    }
    Ok(key_entropy * (u - v) as f64)
}

/// Capacity when `structure` is a threshold structure over a uniform-keys
/// source, `None` otherwise.
pub fn capacity_if_threshold(src: &JointSource, structure: &AccessStructure) -> Option<f64> {
    let (u, v) = structure.threshold_parameters()?;
    let h = src.key_model_entropy()?;
    threshold_capacity(h, u, v).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::{aas_from_events, taas_timeline, threshold_structure, ThresholdParams, UnauthorizedRule};
    use crate::binning::make_family;
    use crate::source::make_keys_source;

    fn set(m: &[usize]) -> ParticipantSet {
        ParticipantSet::from_members(m, 16).unwrap()
    }

    #[test]
    fn keys_threshold_step_by_hand() {
        let src = make_keys_source(2, 2).unwrap();
        let s = threshold_structure(2, 2, 0).unwrap();
        let fam = make_family(0, 8, 0.1, src.alphabet_y()).unwrap();
        let margins = MarginConfig {
            delta: DeltaFn::Constant { value: 0.2 },
            ..MarginConfig::default()
        };
        let p = plan_step(&src, &s, 0, &margins, &fam).unwrap();
        assert_eq!(p.k, 2);
        assert_eq!(p.sigma, 16);
        assert!((p.secret_rate - 1.6).abs() < 1e-12);
        assert!((p.message_rate - 0.2).abs() < 1e-12);
        assert!(p.warnings.contains(&PlanWarning::SecrecyMarginNotMet));
        // The default δ for |𝒴| = 4 is 2ε = 0.2 as well.
        let d = plan_step(&src, &s, 0, &MarginConfig::default(), &fam).unwrap();
        assert_eq!((d.k, d.sigma), (2, 16));
        // Ceil/floor land exactly on the boundaries here.
        assert!(!p.constraints.reliability_strict);
        assert!(!p.constraints.secrecy_strict);
    }

    #[test]
    fn deterministic_source_has_zero_rate() {
        let src = JointSource::new(2, vec![2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let s = AccessStructure::new(
            1,
            [set(&[1])].into_iter().collect(),
            [ParticipantSet::EMPTY].into_iter().collect(),
        )
        .unwrap();
        let fam = make_family(0, 4, 0.25, 2).unwrap();
        let p = plan_step(&src, &s, 0, &MarginConfig::default(), &fam).unwrap();
        // δ = ε log2 2 = ε, so k = ⌈δ/ε⌉ = 1.
        assert_eq!(p.k, 1);
        assert_eq!(p.sigma, 0);
        assert!(p.warnings.contains(&PlanWarning::ZeroRate));
    }

    #[test]
    fn intro_example_first_step_is_zero_rate() {
        let src = make_keys_source(4, 2).unwrap();
        let tl = aas_from_events(4, &[vec![set(&[1, 2, 4])]], &UnauthorizedRule::Complement).unwrap();
        let fam = make_family(0, 4, 0.05, src.alphabet_y()).unwrap();
        let p = plan_step(&src, tl.step(1), 0, &MarginConfig::default(), &fam).unwrap();
        assert!((p.min_unauthorized_entropy - 1.0).abs() < 1e-12);
        assert_eq!(p.argmin_unauthorized, set(&[1, 2, 3]));
        assert!((p.max_authorized_entropy - 1.0).abs() < 1e-12);
        assert_eq!(p.argmax_authorized, set(&[1, 2, 4]));
        assert_eq!(p.sigma, 0);
        assert!(p.warnings.contains(&PlanWarning::ZeroRate));
        assert!(achievable_rate(&src, tl.step(1)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn keys_threshold_rates_match_capacity() {
        let src = make_keys_source(4, 2).unwrap();
        let s = threshold_structure(4, 3, 1).unwrap();
        assert!((achievable_rate(&src, &s).unwrap() - 2.0).abs() < 1e-12);
        assert!((converse_bound(&src, &s).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(capacity_if_threshold(&src, &s), Some(2.0));
        assert_eq!(threshold_capacity(1.0, 3, 1).unwrap(), 2.0);
        assert!(matches!(threshold_capacity(1.0, 2, 2), Err(RateError::BadThresholds { .. })));
    }

    #[test]
    fn ternary_keys_capacity() {
        let src = make_keys_source(2, 3).unwrap();
        let s = threshold_structure(2, 2, 1).unwrap();
        let cap = threshold_capacity(3f64.log2(), 2, 1).unwrap();
        assert!((cap - 3f64.log2()).abs() < 1e-15);
        assert!((achievable_rate(&src, &s).unwrap() - cap).abs() < 1e-12);
        assert!((converse_bound(&src, &s).unwrap() - cap).abs() < 1e-12);
    }

    #[test]
    fn extremal_families() {
        let src = JointSource::new(2, vec![2, 2], vec![0.2, 0.1, 0.05, 0.15, 0.1, 0.1, 0.2, 0.1])
            .unwrap();
        let s = AccessStructure::new(
            2,
            [ParticipantSet::full(2)].into_iter().collect(),
            [ParticipantSet::EMPTY].into_iter().collect(),
        )
        .unwrap();
        let full = ParticipantSet::full(2);
        let expected = src.entropy_y() - src.conditional_entropy(full).unwrap();
        assert!((achievable_rate(&src, &s).unwrap() - expected).abs() < 1e-12);
        let i = src
            .conditional_mutual_information(full, ParticipantSet::EMPTY)
            .unwrap();
        assert!((converse_bound(&src, &s).unwrap() - i).abs() < 1e-12);
        let empty = AccessStructure::new(2, Family::new(), Family::new()).unwrap();
        assert_eq!(achievable_rate(&src, &empty), Err(RateError::EmptyFamily("authorized")));
    }

    #[test]
    fn taas_sweep_converges_to_capacity() {
        let src = make_keys_source(4, 2).unwrap();
        let tl = taas_timeline(4, &ThresholdParams { f1: vec![4, 3], f2: vec![2, 1] }).unwrap();
        let mut last_gap = f64::INFINITY;
        for eps in [0.1, 0.05, 0.01, 0.002] {
            let fam = make_family(0, 4, eps, src.alphabet_y()).unwrap();
            let plan = plan_timeline(&src, &tl, &MarginConfig::default(), &fam).unwrap();
            let gap = plan.steps.iter().map(|s| (s.secret_rate - 2.0).abs()).fold(0.0, f64::max);
            assert!(gap <= last_gap + 1e-12);
            last_gap = gap;
            for (t, s) in plan.steps.iter().enumerate() {
                let bound = s.max_authorized_entropy + s.delta + eps;
                assert!(plan.cumulative_message_rate(t + 1) <= bound + 1e-12);
            }
        }
        assert!(last_gap < 0.02);
    }

    #[test]
    fn single_step_timeline_equals_plan_step() {
        let src = make_keys_source(3, 2).unwrap();
        let tl = taas_timeline(3, &ThresholdParams { f1: vec![2], f2: vec![1] }).unwrap();
        let fam = make_family(3, 5, 0.2, src.alphabet_y()).unwrap();
        let plan = plan_timeline(&src, &tl, &MarginConfig::default(), &fam).unwrap();
        let direct = plan_step(&src, tl.step(1), 0, &MarginConfig::default(), &fam).unwrap();
        assert_eq!(plan.steps, vec![direct]);
    }

    #[test]
    fn insufficient_binnings_is_reported() {
        let src = make_keys_source(2, 2).unwrap();
        let s = threshold_structure(2, 1, 0).unwrap();
        let fam = make_family(0, 4, 0.25, 4).unwrap();
        let m = MarginConfig {
            delta: DeltaFn::Constant { value: 1.5 },
            ..MarginConfig::default()
        };
        assert_eq!(
            plan_step(&src, &s, 0, &m, &fam),
            Err(RateError::InsufficientBinnings { required: 10, b: 8 })
        );
        let empty_u = AccessStructure::new(2, s.authorized().clone(), Family::new()).unwrap();
        assert_eq!(
            plan_step(&src, &empty_u, 0, &MarginConfig::default(), &fam),
            Err(RateError::EmptyFamily("unauthorized"))
        );
    }

    #[test]
    fn override_recomputes_diagnostics() {
        let src = make_keys_source(2, 2).unwrap();
        let s = threshold_structure(2, 1, 0).unwrap();
        let fam = make_family(0, 12, 0.25, 4).unwrap();
        let m = MarginConfig::default();
        let p = plan_step(&src, &s, 0, &m, &fam).unwrap();
        assert_eq!(p.k, 6);
        let forced = p.with_counts(2, 0, 0, 0.25, &m);
        assert!(!forced.constraints.reliability_strict);
        assert!(forced.warnings.contains(&PlanWarning::Overridden));
        assert!((forced.message_rate - 0.5).abs() < 1e-12);
    }
}
