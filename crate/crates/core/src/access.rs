//! Participant sets, monotone access structures and additive access
//! structure timelines.
//!
//! Participants are numbered `1..=L` with `L <= 16`; a [`ParticipantSet`] is
//! an `L`-bit membership vector. Families of sets are stored explicitly as
//! ordered sets of masks, which keeps every check exact for the `2^L`
//! enumeration regime this crate targets.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MAX_PARTICIPANTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("participant {member} is outside 1..={participants}")]
    MemberOutOfRange { member: usize, participants: usize },
    #[error("participant count {0} outside 1..={MAX_PARTICIPANTS}")]
    BadParticipantCount(usize),
    #[error("authorized family is not monotone: {subset} is authorized but its superset {superset} is not")]
    NotMonotone {
        subset: ParticipantSet,
        superset: ParticipantSet,
    },
    #[error("set {0} is both authorized and unauthorized")]
    Overlap(ParticipantSet),
    #[error("thresholds require 0 <= v < u <= L, got u={u}, v={v}, L={participants}")]
    BadThresholds { u: usize, v: usize, participants: usize },
    #[error("step {0}: no group is newly authorized")]
    NotGrowing(usize),
    #[error("step {0}: the unauthorized family gained a set")]
    UnauthorizedGrew(usize),
    #[error("step {step}: {source}")]
    StepInvalid {
        step: usize,
        #[source]
        source: Box<AccessError>,
    },
    #[error("timeline has no steps")]
    EmptyTimeline,
    #[error("step {0} declares no newly authorized sets")]
    EmptyEvents(usize),
    #[error("step {step} has {found} participants, timeline has {expected}")]
    ParticipantMismatch {
        step: usize,
        expected: usize,
        found: usize,
    },
    #[error("threshold schedules have different lengths ({f1} vs {f2})")]
    ScheduleLength { f1: usize, f2: usize },
    #[error("explicit unauthorized families given for {given} steps, timeline has {steps}")]
    ExplicitLength { given: usize, steps: usize },
}

/// A subset of the participants `1..=16`, stored as a bitmask where bit
/// `l - 1` marks participant `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ParticipantSet(u16);

impl ParticipantSet {
    pub const EMPTY: ParticipantSet = ParticipantSet(0);

    pub fn from_mask(mask: u16) -> Self {
        ParticipantSet(mask)
    }

    /// All of `1..=participants`.
    pub fn full(participants: usize) -> Self {
        debug_assert!(participants <= MAX_PARTICIPANTS);
        if participants >= 16 {
            ParticipantSet(u16::MAX)
        } else {
            ParticipantSet(((1u32 << participants) - 1) as u16)
        }
    }

    /// Builds a set from 1-based members, rejecting anything outside
    /// `1..=participants`.
    pub fn from_members(members: &[usize], participants: usize) -> Result<Self, AccessError> {
        let mut mask = 0u16;
        for &m in members {
            if m == 0 || m > participants || m > MAX_PARTICIPANTS {
                return Err(AccessError::MemberOutOfRange {
                    member: m,
                    participants,
                });
            }
            mask |= 1 << (m - 1);
        }
        Ok(ParticipantSet(mask))
    }

    pub fn mask(self) -> u16 {
        self.0
    }

    pub fn contains(self, member: usize) -> bool {
        (1..=MAX_PARTICIPANTS).contains(&member) && self.0 & (1 << (member - 1)) != 0
    }

    pub fn with(self, member: usize) -> Self {
        ParticipantSet(self.0 | (1 << (member - 1)))
    }

    pub fn union(self, other: Self) -> Self {
        ParticipantSet(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        ParticipantSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Largest member, or 0 for the empty set.
    pub fn max_member(self) -> usize {
        16 - self.0.leading_zeros() as usize
    }

    /// Members in ascending order, 1-based.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let mask = self.0;
        (1..=MAX_PARTICIPANTS).filter(move |&m| mask & (1 << (m - 1)) != 0)
    }

    pub fn member_vec(self) -> Vec<usize> {
        self.members().collect()
    }

    /// Lexicographic order on the ascending member lists, so that
    /// `{} < {1} < {1,2} < {1,2,3} < {1,3} < {2}`.
    pub fn lex_cmp(self, other: Self) -> Ordering {
        self.members().cmp(other.members())
    }

    /// Every subset of `1..=participants`, in mask order.
    pub fn all(participants: usize) -> impl Iterator<Item = ParticipantSet> {
        let full = Self::full(participants).0 as u32;
        (0..=full).map(|m| ParticipantSet(m as u16))
    }
}

impl fmt::Display for ParticipantSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, m) in self.members().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for ParticipantSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.member_vec().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParticipantSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let members = Vec::<usize>::deserialize(deserializer)?;
        ParticipantSet::from_members(&members, MAX_PARTICIPANTS).map_err(serde::de::Error::custom)
    }
}

/// A family of participant sets.
pub type Family = BTreeSet<ParticipantSet>;

fn check_members(participants: usize, sets: &[ParticipantSet]) -> Result<(), AccessError> {
    if participants == 0 || participants > MAX_PARTICIPANTS {
        return Err(AccessError::BadParticipantCount(participants));
    }
    for s in sets {
        if s.max_member() > participants {
            return Err(AccessError::MemberOutOfRange {
                member: s.max_member(),
                participants,
            });
        }
    }
    Ok(())
}

/// Upward closure `{B : A ⊆ B for some A in minimal_sets}` over `2^[1,L]`.
pub fn monotone_closure(
    participants: usize,
    minimal_sets: &[ParticipantSet],
) -> Result<Family, AccessError> {
    check_members(participants, minimal_sets)?;
    Ok(ParticipantSet::all(participants)
        .filter(|b| minimal_sets.iter().any(|a| a.is_subset(*b)))
        .collect())
}

/// Inclusion-minimal members of a family (its antichain of generators).
pub fn minimal_sets(family: &Family) -> Vec<ParticipantSet> {
    family
        .iter()
        .copied()
        .filter(|a| !family.iter().any(|b| b != a && b.is_subset(*a)))
        .collect()
}

/// Non-fatal observations about an access structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Notice {
    /// `subset ⊆ member` with `member` unauthorized but `subset` not listed
    /// as unauthorized. Allowed, but unusual.
    UnauthorizedNotDownwardClosed {
        member: ParticipantSet,
        subset: ParticipantSet,
    },
}

impl fmt::Display for Notice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Notice::UnauthorizedNotDownwardClosed { member, subset } => write!(
                f,
                "unauthorized family is not downward closed: {member} is unauthorized but {subset} is not"
            ),
        }
    }
}

/// Authorized family `𝔸` and unauthorized family `𝕌` at one time step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessStructure {
    participants: usize,
    authorized: Family,
    unauthorized: Family,
}

impl AccessStructure {
    /// Wraps two families without validating them; see
    /// [`validate_access_structure`].
    pub fn new(
        participants: usize,
        authorized: Family,
        unauthorized: Family,
    ) -> Result<Self, AccessError> {
        let all: Vec<_> = authorized.iter().chain(unauthorized.iter()).copied().collect();
        check_members(participants, &all)?;
        Ok(Self {
            participants,
            authorized,
            unauthorized,
        })
    }

    /// Authorized family from minimal sets, unauthorized family is the full
    /// complement `2^L \ 𝔸`.
    pub fn with_complement(
        participants: usize,
        minimal: &[ParticipantSet],
    ) -> Result<Self, AccessError> {
        let authorized = monotone_closure(participants, minimal)?;
        let unauthorized = complement(participants, &authorized);
        Ok(Self {
            participants,
            authorized,
            unauthorized,
        })
    }

    pub fn participants(&self) -> usize {
        self.participants
    }

    pub fn authorized(&self) -> &Family {
        &self.authorized
    }

    pub fn unauthorized(&self) -> &Family {
        &self.unauthorized
    }

    /// `Some((u, v))` when `𝔸 = {|A| >= u}` and `𝕌 = {|U| <= v}`.
    pub fn threshold_parameters(&self) -> Option<(usize, usize)> {
        let u = self.authorized.iter().map(|s| s.len()).min()?;
        let v = self.unauthorized.iter().map(|s| s.len()).max()?;
        if v >= u {
            return None;
        }
        let candidate = threshold_structure(self.participants, u, v).ok()?;
        (candidate == *self).then_some((u, v))
    }

    pub fn notices(&self) -> Vec<Notice> {
        let mut out = Vec::new();
        for &member in &self.unauthorized {
            for subset in ParticipantSet::all(self.participants) {
                if subset.is_subset(member) && !self.unauthorized.contains(&subset) {
                    out.push(Notice::UnauthorizedNotDownwardClosed { member, subset });
                    return out;
                }
            }
        }
        out
    }
}

pub fn complement(participants: usize, family: &Family) -> Family {
    ParticipantSet::all(participants)
        .filter(|s| !family.contains(s))
        .collect()
}

/// Checks monotonicity of `𝔸` and `𝔸 ∩ 𝕌 = ∅`.
pub fn validate_access_structure(s: &AccessStructure) -> Result<(), AccessError> {
    for &a in &s.authorized {
        for j in 1..=s.participants {
            if !a.contains(j) {
                let b = a.with(j);
                if !s.authorized.contains(&b) {
                    return Err(AccessError::NotMonotone {
                        subset: a,
                        superset: b,
                    });
                }
            }
        }
    }
    if let Some(&x) = s.unauthorized.iter().find(|u| s.authorized.contains(u)) {
        return Err(AccessError::Overlap(x));
    }
    Ok(())
}

/// `𝔸 = {|A| >= u}`, `𝕌 = {|U| <= v}`.
pub fn threshold_structure(
    participants: usize,
    u: usize,
    v: usize,
) -> Result<AccessStructure, AccessError> {
    if participants == 0 || participants > MAX_PARTICIPANTS {
        return Err(AccessError::BadParticipantCount(participants));
    }
    if v >= u || u > participants {
        return Err(AccessError::BadThresholds { u, v, participants });
    }
    let authorized = ParticipantSet::all(participants)
        .filter(|s| s.len() >= u)
        .collect();
    let unauthorized = ParticipantSet::all(participants)
        .filter(|s| s.len() <= v)
        .collect();
    Ok(AccessStructure {
        participants,
        authorized,
        unauthorized,
    })
}

/// Per-step authorization thresholds `f1(t)` and unauthorized thresholds
/// `f2(t)`, for `t = 1..=len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub f1: Vec<usize>,
    pub f2: Vec<usize>,
}

/// Validated additive access structure `((𝔸_t, 𝕌_t))_{t = 1..t_max}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AasTimeline {
    participants: usize,
    steps: Vec<AccessStructure>,
}

impl AasTimeline {
    /// Wraps steps without validation; see [`validate_aas`].
    pub fn from_steps(steps: Vec<AccessStructure>) -> Result<Self, AccessError> {
        let first = steps.first().ok_or(AccessError::EmptyTimeline)?;
        let participants = first.participants;
        for (i, s) in steps.iter().enumerate() {
            if s.participants != participants {
                return Err(AccessError::ParticipantMismatch {
                    step: i + 1,
                    expected: participants,
                    found: s.participants,
                });
            }
        }
        Ok(Self {
            participants,
            steps,
        })
    }

    pub fn participants(&self) -> usize {
        self.participants
    }

    pub fn steps(&self) -> &[AccessStructure] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Structure at 1-based step `t`.
    pub fn step(&self, t: usize) -> &AccessStructure {
        &self.steps[t - 1]
    }
}

/// Checks the three additive-access-structure properties: strict growth of
/// `𝔸_t` from `𝔸_0 = ∅`, weak shrinkage of `𝕌_t` from `𝕌_0 = 2^L`, and
/// per-step monotonicity and disjointness.
pub fn validate_aas(tl: &AasTimeline) -> Result<(), AccessError> {
    let empty = Family::new();
    let everything: Family = ParticipantSet::all(tl.participants).collect();
    let mut prev_a = &empty;
    let mut prev_u = &everything;
    for (i, s) in tl.steps.iter().enumerate() {
        let t = i + 1;
        validate_access_structure(s).map_err(|e| AccessError::StepInvalid {
            step: t,
            source: Box::new(e),
        })?;
        if !(prev_a.is_subset(&s.authorized) && s.authorized.len() > prev_a.len()) {
            return Err(AccessError::NotGrowing(t));
        }
        if !s.unauthorized.is_subset(prev_u) {
            return Err(AccessError::UnauthorizedGrew(t));
        }
        prev_a = &s.authorized;
        prev_u = &s.unauthorized;
    }
    Ok(())
}

/// Threshold timeline: step `t` is `threshold_structure(L, f1(t), f2(t))`.
pub fn taas_timeline(
    participants: usize,
    params: &ThresholdParams,
) -> Result<AasTimeline, AccessError> {
    if params.f1.len() != params.f2.len() {
        return Err(AccessError::ScheduleLength {
            f1: params.f1.len(),
            f2: params.f2.len(),
        });
    }
    let steps = params
        .f1
        .iter()
        .zip(&params.f2)
        .enumerate()
        .map(|(i, (&u, &v))| {
            threshold_structure(participants, u, v).map_err(|e| AccessError::StepInvalid {
                step: i + 1,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let tl = AasTimeline::from_steps(steps)?;
    validate_aas(&tl)?;
    Ok(tl)
}

/// How the unauthorized families of an event-driven timeline are formed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnauthorizedRule {
    /// `𝕌_t = 2^L \ 𝔸_t`.
    Complement,
    /// Literal per-step families.
    Explicit(Vec<Family>),
}

/// Timeline from per-step lists of newly authorized sets.
///
/// `𝔸_t` is the monotone closure of every set authorized up to step `t`.
pub fn aas_from_events(
    participants: usize,
    events: &[Vec<ParticipantSet>],
    rule: &UnauthorizedRule,
) -> Result<AasTimeline, AccessError> {
    if events.is_empty() {
        return Err(AccessError::EmptyTimeline);
    }
    if let UnauthorizedRule::Explicit(fams) = rule {
        if fams.len() != events.len() {
            return Err(AccessError::ExplicitLength {
                given: fams.len(),
                steps: events.len(),
            });
        }
    }
    let mut generators: Vec<ParticipantSet> = Vec::new();
    let mut steps = Vec::with_capacity(events.len());
    for (i, new_sets) in events.iter().enumerate() {
        if new_sets.is_empty() {
            return Err(AccessError::EmptyEvents(i + 1));
        }
        generators.extend(new_sets.iter().copied());
        let authorized = monotone_closure(participants, &generators)?;
        let unauthorized = match rule {
            UnauthorizedRule::Complement => complement(participants, &authorized),
            UnauthorizedRule::Explicit(fams) => fams[i].clone(),
        };
        steps.push(AccessStructure::new(participants, authorized, unauthorized)?);
        generators = minimal_sets(&steps.last().expect("pushed").authorized);
    }
    let tl = AasTimeline::from_steps(steps)?;
    validate_aas(&tl)?;
    Ok(tl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(m: &[usize]) -> ParticipantSet {
        ParticipantSet::from_members(m, 16).unwrap()
    }

    fn fam(sets: &[&[usize]]) -> Family {
        sets.iter().map(|s| set(s)).collect()
    }

    #[test]
    fn closure_examples() {
        assert_eq!(
            monotone_closure(3, &[set(&[1, 2])]).unwrap(),
            fam(&[&[1, 2], &[1, 2, 3]])
        );
        assert_eq!(
            monotone_closure(4, &[set(&[1, 2, 4])]).unwrap(),
            fam(&[&[1, 2, 4], &[1, 2, 3, 4]])
        );
        assert!(monotone_closure(4, &[]).unwrap().is_empty());
        assert!(matches!(
            monotone_closure(3, &[set(&[4])]),
            Err(AccessError::MemberOutOfRange { member: 4, .. })
        ));
    }

    #[test]
    fn structure_validation() {
        let ok = AccessStructure::new(3, fam(&[&[1, 2], &[1, 2, 3]]), fam(&[&[1], &[3]])).unwrap();
        assert_eq!(validate_access_structure(&ok), Ok(()));

        let not_mono = AccessStructure::new(3, fam(&[&[1, 2]]), Family::new()).unwrap();
        assert_eq!(
            validate_access_structure(&not_mono),
            Err(AccessError::NotMonotone {
                subset: set(&[1, 2]),
                superset: set(&[1, 2, 3])
            })
        );

        let overlap =
            AccessStructure::new(3, fam(&[&[1, 2], &[1, 2, 3]]), fam(&[&[1, 2]])).unwrap();
        assert_eq!(
            validate_access_structure(&overlap),
            Err(AccessError::Overlap(set(&[1, 2])))
        );
    }

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn threshold_counts() {
        let s = threshold_structure(4, 3, 1).unwrap();
        assert_eq!(s.authorized().len(), binomial(4, 3) + binomial(4, 4));
        assert_eq!(s.unauthorized().len(), binomial(4, 0) + binomial(4, 1));
        assert_eq!(s.threshold_parameters(), Some((3, 1)));

        let small = threshold_structure(2, 2, 0).unwrap();
        assert_eq!(*small.authorized(), fam(&[&[1, 2]]));
        assert_eq!(*small.unauthorized(), fam(&[&[]]));

        assert!(matches!(
            threshold_structure(4, 1, 1),
            Err(AccessError::BadThresholds { .. })
        ));
    }

    fn intro_events() -> Vec<Vec<ParticipantSet>> {
        vec![vec![set(&[1, 2, 4])], vec![set(&[2, 3])]]
    }

    #[test]
    fn intro_example_reproduces_second_step() {
        let tl = aas_from_events(4, &intro_events(), &UnauthorizedRule::Complement).unwrap();
        let a1 = fam(&[&[1, 2, 4], &[1, 2, 3, 4]]);
        let mut a2 = a1.clone();
        a2.extend(fam(&[&[2, 3], &[1, 2, 3], &[2, 3, 4], &[1, 2, 3, 4]]));
        assert_eq!(*tl.step(1).authorized(), a1);
        assert_eq!(*tl.step(2).authorized(), a2);
        assert_eq!(a2.len(), 5);
        assert_eq!(tl.step(2).unauthorized().len(), 16 - 5);
    }

    #[test]
    fn aas_mutations_are_rejected() {
        let tl = aas_from_events(4, &intro_events(), &UnauthorizedRule::Complement).unwrap();

        let stalled = AasTimeline::from_steps(vec![tl.step(1).clone(), tl.step(1).clone()]).unwrap();
        assert_eq!(validate_aas(&stalled), Err(AccessError::NotGrowing(2)));

        let u1_small: Family = fam(&[&[], &[1]]);
        let u2_big: Family = fam(&[&[], &[1], &[2]]);
        let grew = AasTimeline::from_steps(vec![
            AccessStructure::new(4, tl.step(1).authorized().clone(), u1_small).unwrap(),
            AccessStructure::new(4, tl.step(2).authorized().clone(), u2_big).unwrap(),
        ])
        .unwrap();
        assert_eq!(validate_aas(&grew), Err(AccessError::UnauthorizedGrew(2)));

        let broken = AasTimeline::from_steps(vec![
            AccessStructure::new(4, fam(&[&[1, 2, 4]]), Family::new()).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            validate_aas(&broken),
            Err(AccessError::StepInvalid { step: 1, .. })
        ));
    }

    #[test]
    fn taas_examples() {
        let ok = taas_timeline(4, &ThresholdParams { f1: vec![4, 3], f2: vec![2, 1] }).unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(
            taas_timeline(4, &ThresholdParams { f1: vec![3, 3], f2: vec![1, 1] }),
            Err(AccessError::NotGrowing(2))
        );
        assert_eq!(
            taas_timeline(4, &ThresholdParams { f1: vec![3, 4], f2: vec![1, 1] }),
            Err(AccessError::NotGrowing(2))
        );
    }

    #[test]
    fn authorizing_empty_set_authorizes_everything() {
        let tl = aas_from_events(3, &[vec![ParticipantSet::EMPTY]], &UnauthorizedRule::Complement)
            .unwrap();
        assert_eq!(tl.step(1).authorized().len(), 8);
        assert!(tl.step(1).unauthorized().is_empty());
    }

    #[test]
    fn explicit_unauthorized_may_be_smaller_than_complement() {
        let rule = UnauthorizedRule::Explicit(vec![fam(&[&[1], &[2]]), fam(&[&[1]])]);
        let tl = aas_from_events(4, &intro_events(), &rule).unwrap();
        // {1} and {2} are not downward closed (∅ missing).
        assert!(!tl.step(1).notices().is_empty());
        assert_eq!(tl.step(2).unauthorized().len(), 1);
    }

    #[test]
    fn lex_order_and_display() {
        let mut v = [set(&[2]), set(&[1, 3]), set(&[1, 2, 3]), set(&[1]), set(&[])];
        v.sort_by(|a, b| a.lex_cmp(*b));
        let shown: Vec<String> = v.iter().map(|s| s.to_string()).collect();
        assert_eq!(shown, ["{}", "{1}", "{1,2,3}", "{1,3}", "{2}"]);
    }
}
