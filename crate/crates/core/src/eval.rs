//! Reliability trials and secrecy audits.
//!
//! The secrecy instrument is the exact table
//!
//! ```text
//! p(x_U^n, m^t, s_t) = Σ_{y^n} p(x_U^n, y^n) 1[g_{1..k}(y^n) = m^t] 1[h_{1..σ}(y^n) = s_t]
//! ```
//!
//! compared against `p_unif(m^t, s_t) p(x_U^n)`. When the double enumeration
//! exceeds the budget a Monte-Carlo table of the same shape is used instead.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{AasTimeline, ParticipantSet};
use crate::binning::{BinningError, BinningFamily};
use crate::numeric::{compensated_sum, entropy_bits, trial_seed, wilson_interval, CompensatedSum};
use crate::protocol::{run_timeline, DecodeOutcome, DecodeRecord, ProtocolError};
use crate::rates::RatePlan;
use crate::source::{JointSource, PairPmf, SourceError};

/// Default cap on `|𝒴|^n |𝒳_U|^n` for exact tables.
pub const DEFAULT_EXACT_BUDGET: u64 = 100_000_000;

/// `y^n` codes handled per work unit; fixed so that summation order does not
/// depend on the worker count.
const CHUNK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("exact table needs {size} accumulations, budget is {limit}")]
    BudgetExceeded { size: u128, limit: u64 },
    #[error("distributions have {left} and {right} cells")]
    ShapeMismatch { left: usize, right: usize },
    #[error("at least one trial is required")]
    NoTrials,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Binning(#[from] BinningError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCell {
    pub step: usize,
    pub group: ParticipantSet,
    pub trials: u64,
    /// Trials with `Ŝ_t ≠ S_t`.
    pub failures: u64,
    pub error_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Trials with `Ŷ^n ≠ Y^n`, by cause.
    pub sequence_failures: u64,
    pub no_candidate: u64,
    pub ambiguous: u64,
    pub wrong_sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub n: usize,
    pub epsilon: f64,
    pub trials: u64,
    pub cells: Vec<ReliabilityCell>,
    /// Trials where a cell counted more secret failures than sequence failures.
    pub dominance_violations: u64,
}

impl ReliabilityReport {
    pub fn cell(&self, step: usize, group: ParticipantSet) -> Option<&ReliabilityCell> {
        self.cells.iter().find(|c| c.step == step && c.group == group)
    }
}

/// One [`run_timeline`] per seed; the binning family is shared.
pub fn run_reliability_trials(
    src: &JointSource,
    tl: &AasTimeline,
    plan: &RatePlan,
    family: &BinningFamily,
    seeds: &[u64],
    budget: u64,
) -> Result<ReliabilityReport, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::NoTrials);
    }
    let runs: Vec<Vec<DecodeRecord>> = seeds
        .par_iter()
        .map(|&seed| run_timeline(src, tl, plan, family, seed, budget).map(|r| r.decodes))
        .collect::<Result<_, _>>()?;

    let mut cells: Vec<ReliabilityCell> = runs[0]
        .iter()
        .map(|d| ReliabilityCell {
            step: d.step,
            group: d.group,
            trials: 0,
            failures: 0,
            error_rate: 0.0,
            ci_low: 0.0,
            ci_high: 1.0,
            sequence_failures: 0,
            no_candidate: 0,
            ambiguous: 0,
            wrong_sequence: 0,
        })
        .collect();
    let mut dominance_violations = 0;
    for run in &runs {
        let mut violated = false;
        for (cell, d) in cells.iter_mut().zip(run) {
            cell.trials += 1;
            let seq_fail = d.outcome.is_failure();
            if !d.secret_ok {
                cell.failures += 1;
                violated |= !seq_fail;
            }
            if seq_fail {
                cell.sequence_failures += 1;
            }
            match d.outcome {
                DecodeOutcome::Success => {}
                DecodeOutcome::NoCandidate => cell.no_candidate += 1,
                DecodeOutcome::Ambiguous => cell.ambiguous += 1,
                DecodeOutcome::WrongSequence => cell.wrong_sequence += 1,
            }
        }
        dominance_violations += violated as u64;
    }
    for cell in &mut cells {
        cell.error_rate = cell.failures as f64 / cell.trials as f64;
        (cell.ci_low, cell.ci_high) = wilson_interval(cell.failures, cell.trials);
    }
    Ok(ReliabilityReport {
        n: family.n(),
        epsilon: family.epsilon(),
        trials: seeds.len() as u64,
        cells,
        dominance_violations,
    })
}

/// Cell key `(x_U^n code, m^t, s_t)`; `x_U^n` is encoded with position 1 most
/// significant.
pub type JointKey = (u64, Vec<u64>, Vec<u64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TableMethod {
    Exact,
    MonteCarlo { samples: u64 },
}

/// Sparse joint table over `(x_U^n, m^t, s_t)` together with the exact
/// marginal of `X_U^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub method: TableMethod,
    pub group: ParticipantSet,
    pub n: usize,
    pub k: usize,
    pub sigma: usize,
    pub m_bins: u64,
    pub s_bins: u64,
    pub cells: BTreeMap<JointKey, f64>,
    x_pair: PairPmf,
}

impl JointTable {
    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.cells.values().copied())
    }

    /// `p(x_U^n) = Π p(x_i)`.
    pub fn x_probability(&self, x_code: u64) -> f64 {
        let marginal = self.x_pair.x_marginal();
        decode_digits(x_code, self.x_pair.x_card, self.n)
            .iter()
            .map(|&x| marginal[x])
            .product()
    }

    /// `p_unif(m, s) = m_bins^{-k} s_bins^{-σ}`.
    pub fn uniform_mass(&self) -> f64 {
        (self.m_bins as f64).powi(-(self.k as i32)) * (self.s_bins as f64).powi(-(self.sigma as i32))
    }

    /// `Σ |p - p_unif(m, s) p(x_U^n)|` over the full index space.
    pub fn tv_to_uniform_product(&self) -> f64 {
        let u = self.uniform_mass();
        let mut diff = CompensatedSum::new();
        let mut covered = CompensatedSum::new();
        let mut px_cache: BTreeMap<u64, f64> = BTreeMap::new();
        for ((x, _, _), &p) in &self.cells {
            let px = *px_cache.entry(*x).or_insert_with(|| self.x_probability(*x));
            let q = u * px;
            diff.add((p - q).abs());
            covered.add(q);
        }
        // Cells outside the support contribute their uniform-product mass.
        diff.value() + (1.0 - covered.value()).max(0.0)
    }

    /// Distribution of `S_t` alone.
    pub fn secret_marginal(&self) -> BTreeMap<Vec<u64>, f64> {
        marginal(&self.cells, |(_, _, s)| s.clone())
    }

    /// `Σ_s |p(s) - s_bins^{-σ}|`.
    pub fn secret_tv_to_uniform(&self) -> f64 {
        let u = (self.s_bins as f64).powi(-(self.sigma as i32));
        let m = self.secret_marginal();
        let diff = compensated_sum(m.values().map(|&p| (p - u).abs()));
        let covered = m.len() as f64 * u;
        diff + (1.0 - covered).max(0.0)
    }

    /// Plug-in `I(S; M, X_U) = H(S) + H(M, X_U) - H(M, S, X_U)`.
    pub fn mutual_information(&self) -> f64 {
        let h_s = entropy_bits(self.secret_marginal().into_values());
        let h_mx = entropy_bits(marginal(&self.cells, |(x, m, _)| (*x, m.clone())).into_values());
        let h_all = entropy_bits(self.cells.values().copied());
        h_s + h_mx - h_all
    }

    /// `σ log2 s_bins - H(S)`.
    pub fn uniformity_gap(&self) -> f64 {
        let h_s = entropy_bits(self.secret_marginal().into_values());
        self.sigma as f64 * (self.s_bins as f64).log2() - h_s
    }
}

fn marginal<K: Ord, F: Fn(&JointKey) -> K>(
    cells: &BTreeMap<JointKey, f64>,
    key: F,
) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, CompensatedSum> = BTreeMap::new();
    for (k, &p) in cells {
        acc.entry(key(k)).or_default().add(p);
    }
    acc.into_iter().map(|(k, s)| (k, s.value())).collect()
}

fn decode_digits(mut code: u64, radix: usize, n: usize) -> Vec<usize> {
    let mut digits = vec![0; n];
    for pos in (0..n).rev() {
        digits[pos] = (code % radix as u64) as usize;
        code /= radix as u64;
    }
    digits
}

fn encode_digits(digits: &[usize], radix: usize) -> u64 {
    digits.iter().fold(0, |acc, &d| acc * radix as u64 + d as u64)
}

fn exact_size(family: &BinningFamily, x_card: usize) -> u128 {
    let n = family.n() as u32;
    (family.alphabet_y() as u128)
        .checked_pow(n)
        .and_then(|a| (x_card as u128).checked_pow(n).and_then(|b| a.checked_mul(b)))
        .unwrap_or(u128::MAX)
}

/// Exact table by enumerating every `(y^n, x_U^n)` pair.
pub fn exact_joint_distribution(
    src: &JointSource,
    family: &BinningFamily,
    k: usize,
    sigma: usize,
    group: ParticipantSet,
    budget: u64,
) -> Result<JointTable, EvalError> {
    let pair = src.pair_pmf(group)?;
    let size = exact_size(family, pair.x_card);
    if size > budget as u128 {
        return Err(EvalError::BudgetExceeded { size, limit: budget });
    }
    let n = family.n();
    let y_total = (family.alphabet_y() as u64).pow(n as u32);
    let x_total = (pair.x_card as u64).pow(n as u32);
    let chunks: Vec<u64> = (0..y_total.div_ceil(CHUNK)).collect();
    let partials = chunks
        .par_iter()
        .map(|&c| -> Result<BTreeMap<JointKey, CompensatedSum>, EvalError> {
            let mut local: BTreeMap<JointKey, CompensatedSum> = BTreeMap::new();
            for code in c * CHUNK..((c + 1) * CHUNK).min(y_total) {
                let y = decode_digits(code, family.alphabet_y(), n);
                let mut bins: Option<(Vec<u64>, Vec<u64>)> = None;
                for x_code in 0..x_total {
                    let x = decode_digits(x_code, pair.x_card, n);
                    let p: f64 = x.iter().zip(&y).map(|(&xi, &yi)| pair.get(xi, yi)).product();
                    if p == 0.0 {
                        continue;
                    }
                    if bins.is_none() {
                        bins = Some((
                            family.message_bins(1..=k, &y)?,
                            family.secret_bins(sigma, &y)?,
                        ));
                    }
                    let (m, s) = bins.clone().expect("set above");
                    local.entry((x_code, m, s)).or_default().add(p);
                }
            }
            Ok(local)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells: BTreeMap<JointKey, CompensatedSum> = BTreeMap::new();
    for part in partials {
        for (key, sum) in part {
            cells.entry(key).or_default().add(sum.value());
        }
    }
    Ok(JointTable {
        method: TableMethod::Exact,
        group,
        n,
        k,
        sigma,
        m_bins: family.m_bins(),
        s_bins: family.s_bins(),
        cells: cells.into_iter().map(|(k, s)| (k, s.value())).collect(),
        x_pair: pair,
    })
}

/// Empirical table from `samples` blocks drawn with seeds derived from `seed`.
pub fn monte_carlo_joint_distribution(
    src: &JointSource,
    family: &BinningFamily,
    k: usize,
    sigma: usize,
    group: ParticipantSet,
    samples: u64,
    seed: u64,
) -> Result<JointTable, EvalError> {
    if samples == 0 {
        return Err(EvalError::NoTrials);
    }
    let pair = src.pair_pmf(group)?;
    let n = family.n();
    let keys = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<JointKey, EvalError> {
            let block = src.sample_block(n, trial_seed(seed, i));
            let x = block.project(src, group);
            Ok((
                encode_digits(&x, pair.x_card),
                family.message_bins(1..=k, &block.y)?,
                family.secret_bins(sigma, &block.y)?,
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut counts: BTreeMap<JointKey, u64> = BTreeMap::new();
    for key in keys {
        *counts.entry(key).or_default() += 1;
    }
    Ok(JointTable {
        method: TableMethod::MonteCarlo { samples },
        group,
        n,
        k,
        sigma,
        m_bins: family.m_bins(),
        s_bins: family.s_bins(),
        cells: counts
            .into_iter()
            .map(|(key, c)| (key, c as f64 / samples as f64))
            .collect(),
        x_pair: pair,
    })
}

/// `Σ |p - q|` over identical index spaces.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, EvalError> {
    if p.len() != q.len() {
        return Err(EvalError::ShapeMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(compensated_sum(p.iter().zip(q).map(|(a, b)| (a - b).abs())))
}

/// `Σ |p - q|` over the union of two sparse supports.
pub fn sparse_tv(p: &BTreeMap<JointKey, f64>, q: &BTreeMap<JointKey, f64>) -> f64 {
    let mut sum = CompensatedSum::new();
    for (key, &a) in p {
        sum.add((a - q.get(key).copied().unwrap_or(0.0)).abs());
    }
    for (key, &b) in q {
        if !p.contains_key(key) {
            sum.add(b);
        }
    }
    sum.value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecrecyEntry {
    pub step: usize,
    pub group: ParticipantSet,
    #[serde(flatten)]
    pub method: TableMethod,
    pub k: usize,
    pub sigma: usize,
    pub tv_to_uniform_product: f64,
    pub mi_estimate: f64,
    pub uniformity_gap: f64,
    pub secret_tv_to_uniform: f64,
}

/// How to fall back when the exact table is over budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub exact_budget: u64,
    /// Monte-Carlo sample count; 0 disables the fallback.
    pub fallback_samples: u64,
    pub fallback_seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            exact_budget: DEFAULT_EXACT_BUDGET,
            fallback_samples: 100_000,
            fallback_seed: 0,
        }
    }
}

/// Secrecy and uniformity metrics for one `(t, U)` cell.
pub fn secrecy_audit(
    src: &JointSource,
    family: &BinningFamily,
    step: usize,
    k: usize,
    sigma: usize,
    group: ParticipantSet,
    config: &AuditConfig,
) -> Result<SecrecyEntry, EvalError> {
    let table = match exact_joint_distribution(src, family, k, sigma, group, config.exact_budget) {
        Ok(t) => t,
        Err(EvalError::BudgetExceeded { .. }) if config.fallback_samples > 0 => {
            monte_carlo_joint_distribution(
                src,
                family,
                k,
                sigma,
                group,
                config.fallback_samples,
                config.fallback_seed,
            )?
        }
        Err(e) => return Err(e),
    };
    Ok(SecrecyEntry {
        step,
        group,
        method: table.method,
        k,
        sigma,
        tv_to_uniform_product: table.tv_to_uniform_product(),
        mi_estimate: table.mutual_information(),
        uniformity_gap: table.uniformity_gap(),
        secret_tv_to_uniform: table.secret_tv_to_uniform(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: u64,
    pub tv: f64,
    pub max_cell_deviation: f64,
    pub exact_cells: usize,
    pub empirical_cells: usize,
}

/// Compares a Monte-Carlo table against the exact one.
#[allow(clippy::too_many_arguments)]
pub fn oracle_equivalence(
    src: &JointSource,
    family: &BinningFamily,
    k: usize,
    sigma: usize,
    group: ParticipantSet,
    trials: u64,
    seed: u64,
    budget: u64,
) -> Result<OracleReport, EvalError> {
    if trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let exact = exact_joint_distribution(src, family, k, sigma, group, budget)?;
    let empirical = monte_carlo_joint_distribution(src, family, k, sigma, group, trials, seed)?;
    let max_cell_deviation = exact
        .cells
        .iter()
        .map(|(key, &p)| (p - empirical.cells.get(key).copied().unwrap_or(0.0)).abs())
        .chain(
            empirical
                .cells
                .iter()
                .filter(|(key, _)| !exact.cells.contains_key(*key))
                .map(|(_, &q)| q),
        )
        .fold(0.0, f64::max);
    Ok(OracleReport {
        trials,
        tv: sparse_tv(&exact.cells, &empirical.cells),
        max_cell_deviation,
        exact_cells: exact.cells.len(),
        empirical_cells: empirical.cells.len(),
    })
}

#[derive(Debug, Serialize)]
struct ReliabilityRow {
    n: usize,
    epsilon: f64,
    step: usize,
    group: String,
    trials: u64,
    failures: u64,
    error_rate: f64,
    ci_low: f64,
    ci_high: f64,
    no_candidate: u64,
    ambiguous: u64,
    wrong_sequence: u64,
}

/// One row per `(n, t, A)`.
pub fn write_reliability_csv<W: Write>(out: W, reports: &[ReliabilityReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        for c in &r.cells {
            w.serialize(ReliabilityRow {
                n: r.n,
                epsilon: r.epsilon,
                step: c.step,
                group: c.group.to_string(),
                trials: c.trials,
                failures: c.failures,
                error_rate: c.error_rate,
                ci_low: c.ci_low,
                ci_high: c.ci_high,
                no_candidate: c.no_candidate,
                ambiguous: c.ambiguous,
                wrong_sequence: c.wrong_sequence,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SecrecyRow {
    n: usize,
    step: usize,
    group: String,
    method: &'static str,
    k: usize,
    sigma: usize,
    tv_to_uniform_product: f64,
    mi_estimate: f64,
    uniformity_gap: f64,
}

/// One row per `(n, t, U)`.
pub fn write_secrecy_csv<W: Write>(out: W, rows: &[(usize, SecrecyEntry)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (n, e) in rows {
        w.serialize(SecrecyRow {
            n: *n,
            step: e.step,
            group: e.group.to_string(),
            method: match e.method {
                TableMethod::Exact => "exact",
                TableMethod::MonteCarlo { .. } => "monte_carlo",
            },
            k: e.k,
            sigma: e.sigma,
            tv_to_uniform_product: e.tv_to_uniform_product,
            mi_estimate: e.mi_estimate,
            uniformity_gap: e.uniformity_gap,
        })?;
    }
    w.flush()?;
    Ok(())
}
