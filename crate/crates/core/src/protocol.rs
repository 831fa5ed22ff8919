//! Dealer encoding, public transcript and the typical-set decoder.
//!
//! At step `t` the dealer publishes `m_t = (g_i(y^n))_{i = k_{t-1}+1..k_t}`
//! (empty when `k_t = k_{t-1}`) and keeps `s_t = (h_j(y^n))_{j = 1..σ_t}`.
//! A group `A` decodes from `x_A^n` and the cumulative message `m^t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::access::{AasTimeline, ParticipantSet};
use crate::binning::{BinningError, BinningFamily};
use crate::rates::{RatePlan, StepPlan};
use crate::source::{JointSource, PairPmf, SampleBlock, SourceError};
use crate::typicality::{ConditionalTypicalSet, TypicalityError, TypicalityParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("plan regresses: k_t = {k} < k_prev = {k_prev}")]
    PlanRegression { k: usize, k_prev: usize },
    #[error("{count} binnings requested but the family only has {b}")]
    ExceedsBinnings { count: usize, b: usize },
    #[error("timeline has {timeline} steps but the plan has {plan}")]
    PlanLength { timeline: usize, plan: usize },
    #[error("decode search space of {size} candidates exceeds budget {limit}")]
    BudgetExceeded { size: u128, limit: u64 },
    #[error(transparent)]
    Binning(#[from] BinningError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Typicality(#[from] TypicalityError),
}

/// One step of the public record plus the dealer's secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub step: usize,
    pub k: usize,
    pub sigma: usize,
    pub message: Vec<u64>,
    pub secret: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub steps: Vec<TranscriptStep>,
}

impl Transcript {
    /// `m^t = m_1 || ... || m_t`.
    pub fn cumulative_message(&self, t: usize) -> Vec<u64> {
        self.steps[..t]
            .iter()
            .flat_map(|s| s.message.iter().copied())
            .collect()
    }

    pub fn step(&self, t: usize) -> &TranscriptStep {
        &self.steps[t - 1]
    }
}

#[derive(Debug, Clone)]
pub struct Dealer<'a> {
    y: Vec<usize>,
    family: &'a BinningFamily,
    k_prev: usize,
    transcript: Transcript,
}

impl<'a> Dealer<'a> {
    pub fn new(y: Vec<usize>, family: &'a BinningFamily) -> Self {
        Self {
            y,
            family,
            k_prev: 0,
            transcript: Transcript::default(),
        }
    }

    pub fn k_prev(&self) -> usize {
        self.k_prev
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// Emits `(m_t, s_t)` for counts `(k, sigma)` and advances the state.
    pub fn encode(&mut self, k: usize, sigma: usize) -> Result<&TranscriptStep, ProtocolError> {
        let b = self.family.b();
        if k < self.k_prev {
            return Err(ProtocolError::PlanRegression {
                k,
                k_prev: self.k_prev,
            });
        }
        for count in [k, sigma] {
            if count > b {
                return Err(ProtocolError::ExceedsBinnings { count, b });
            }
        }
        let message = self.family.message_bins(self.k_prev + 1..=k, &self.y)?;
        let secret = self.family.secret_bins(sigma, &self.y)?;
        self.k_prev = k;
        self.transcript.steps.push(TranscriptStep {
            step: self.transcript.steps.len() + 1,
            k,
            sigma,
            message,
            secret,
        });
        Ok(self.transcript.steps.last().expect("just pushed"))
    }

    pub fn encode_step(&mut self, plan: &StepPlan) -> Result<&TranscriptStep, ProtocolError> {
        self.encode(plan.k, plan.sigma)
    }
}

/// Why a decoder produced no sequence.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("no typical sequence matches the message bins")]
    NoCandidate,
    #[error("more than one typical sequence matches the message bins")]
    Ambiguous,
    #[error("decode search space of {size} candidates exceeds budget {limit}")]
    BudgetExceeded { size: u128, limit: u64 },
}

/// Unique `ŷ` jointly typical with `x_a` whose first `message.len()` message
/// bins equal `message`.
pub fn decode(
    x_a: &[usize],
    message: &[u64],
    family: &BinningFamily,
    pair: &PairPmf,
    params: &TypicalityParams,
    budget: u64,
) -> Result<Vec<usize>, DecodeError> {
    let set = match ConditionalTypicalSet::new(pair, x_a, params, budget) {
        Ok(s) => s,
        Err(TypicalityError::BudgetExceeded { size, limit }) => {
            return Err(DecodeError::BudgetExceeded { size, limit })
        }
        // Length mismatches cannot arise for sequences taken from one block.
        Err(_) => return Err(DecodeError::NoCandidate),
    };
    let matches = |y: &Vec<usize>| {
        message
            .iter()
            .enumerate()
            .all(|(i, &m)| family.g(i + 1, y).map(|v| v == m).unwrap_or(false))
    };
    let mut hits = set.iter().filter(matches);
    let first = hits.next().ok_or(DecodeError::NoCandidate)?;
    if hits.next().is_some() {
        return Err(DecodeError::Ambiguous);
    }
    Ok(first)
}

/// `(h_j(ŷ))_{j = 1..σ}`.
pub fn recover_secret(
    y_hat: &[usize],
    sigma: usize,
    family: &BinningFamily,
) -> Result<Vec<u64>, BinningError> {
    family.secret_bins(sigma, y_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeOutcome {
    Success,
    WrongSequence,
    NoCandidate,
    Ambiguous,
}

impl DecodeOutcome {
    pub fn is_failure(self) -> bool {
        self != DecodeOutcome::Success
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub step: usize,
    pub group: ParticipantSet,
    pub outcome: DecodeOutcome,
    pub secret_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineRun {
    pub block: SampleBlock,
    pub transcript: Transcript,
    pub decodes: Vec<DecodeRecord>,
}

/// Samples one block, runs the dealer over every step, then decodes at every
/// `(t, A)` with `A ∈ 𝔸_t`. Records are ordered by `t`, then by `A`.
pub fn run_timeline(
    src: &JointSource,
    tl: &AasTimeline,
    plan: &RatePlan,
    family: &BinningFamily,
    sample_seed: u64,
    budget: u64,
) -> Result<TimelineRun, ProtocolError> {
    if tl.len() != plan.steps.len() {
        return Err(ProtocolError::PlanLength {
            timeline: tl.len(),
            plan: plan.steps.len(),
        });
    }
    let block = src.sample_block(family.n(), sample_seed);
    let mut dealer = Dealer::new(block.y.clone(), family);
    for step in &plan.steps {
        dealer.encode_step(step)?;
    }
    let transcript = dealer.into_transcript();
    let params = TypicalityParams::new(family.epsilon(), family.n())?;

    let cells: Vec<(usize, ParticipantSet)> = tl
        .steps()
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.authorized().iter().map(move |&a| (i + 1, a)))
        .collect();
    let decodes = cells
        .par_iter()
        .map(|&(t, group)| {
            decode_cell(src, &block, &transcript, family, &params, budget, t, group)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TimelineRun {
        block,
        transcript,
        decodes,
    })
}

#[allow(clippy::too_many_arguments)]
fn decode_cell(
    src: &JointSource,
    block: &SampleBlock,
    transcript: &Transcript,
    family: &BinningFamily,
    params: &TypicalityParams,
    budget: u64,
    t: usize,
    group: ParticipantSet,
) -> Result<DecodeRecord, ProtocolError> {
    let pair = src.pair_pmf(group)?;
    let x_a = block.project(src, group);
    let message = transcript.cumulative_message(t);
    let dealt = transcript.step(t);
    let (outcome, secret_ok) = match decode(&x_a, &message, family, &pair, params, budget) {
        Ok(y_hat) => {
            let ok = recover_secret(&y_hat, dealt.sigma, family)? == dealt.secret;
            if y_hat == block.y {
                (DecodeOutcome::Success, ok)
            } else {
                (DecodeOutcome::WrongSequence, ok)
            }
        }
        Err(DecodeError::NoCandidate) => (DecodeOutcome::NoCandidate, false),
        Err(DecodeError::Ambiguous) => (DecodeOutcome::Ambiguous, false),
        Err(DecodeError::BudgetExceeded { size, limit }) => {
            return Err(ProtocolError::BudgetExceeded { size, limit })
        }
    };
    Ok(DecodeRecord {
        step: t,
        group,
        outcome,
        secret_ok,
    })
}

/// Hex SHA-256 over `"aas-sim/secret/v1" || step as u32 LE || indices as u64 LE`.
pub fn secret_commitment(step: usize, secret: &[u64]) -> String {
    let mut h = Sha256::new();
    h.update(b"aas-sim/secret/v1");
    h.update((step as u32).to_le_bytes());
    for &s in secret {
        h.update(s.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Serialized form of one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub step: usize,
    pub k_t: usize,
    pub sigma_t: usize,
    pub m_t: Vec<u64>,
    pub s_t_commitment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_t: Option<Vec<u64>>,
    pub decode_results: Vec<DecodeRecord>,
}

/// Transcript file: the public parameters a decoder needs, then the steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptDocument {
    pub n: usize,
    pub epsilon: f64,
    pub b: usize,
    pub m_bins: u64,
    pub s_bins: u64,
    pub binning_seed: u64,
    pub sample_seed: u64,
    pub steps: Vec<TranscriptRecord>,
}

impl TranscriptDocument {
    pub fn new(
        family: &BinningFamily,
        sample_seed: u64,
        run: &TimelineRun,
        reveal_secrets: bool,
    ) -> Self {
        let steps = run
            .transcript
            .steps
            .iter()
            .map(|s| TranscriptRecord {
                step: s.step,
                k_t: s.k,
                sigma_t: s.sigma,
                m_t: s.message.clone(),
                s_t_commitment: secret_commitment(s.step, &s.secret),
                s_t: reveal_secrets.then(|| s.secret.clone()),
                decode_results: run
                    .decodes
                    .iter()
                    .filter(|d| d.step == s.step)
                    .cloned()
                    .collect(),
            })
            .collect();
        Self {
            n: family.n(),
            epsilon: family.epsilon(),
            b: family.b(),
            m_bins: family.m_bins(),
            s_bins: family.s_bins(),
            binning_seed: family.seed(),
            sample_seed,
            steps,
        }
    }
}
