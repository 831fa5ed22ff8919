//! Discrete memoryless joint sources `p(y, x_1, ..., x_L)`.
//!
//! The PMF is a dense table. Cell `(y, x_1, ..., x_L)` lives at the
//! mixed-radix index with `y` most significant, then `x_1`, ..., `x_L`.
//! Entropies are in bits.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{ParticipantSet, MAX_PARTICIPANTS};
use crate::numeric::{compensated_sum, entropy_bits};

pub const MASS_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_TABLE_BUDGET: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SourceError {
    #[error("negative mass {value} at cell {cell}")]
    NegativeMass { cell: usize, value: f64 },
    #[error("total mass {total} is not 1 (tolerance {MASS_TOLERANCE})")]
    MassNotOne { total: f64 },
    #[error("participant {index} is outside 1..={participants}")]
    IndexOutOfRange { index: usize, participants: usize },
    #[error("participant count {0} outside 1..={MAX_PARTICIPANTS}")]
    BadParticipantCount(usize),
    #[error("every alphabet must have at least one symbol")]
    EmptyAlphabet,
    #[error("key alphabets need at least 2 symbols, got {0}")]
    KeyAlphabetTooSmall(usize),
    #[error("table needs {expected} cells but {found} were given")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("table of {cells} cells exceeds the budget of {budget}")]
    TableTooLarge { cells: u128, budget: usize },
}

/// Unvalidated PMF table as read from a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTable {
    pub alphabet_y: usize,
    pub alphabet_x: Vec<usize>,
    pub pmf: Vec<f64>,
}

/// A validated joint PMF of the dealer variable and the participant
/// variables.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSource {
    alphabet_y: usize,
    alphabet_x: Vec<usize>,
    /// `x_strides[l]` is the weight of participant `l+1`'s digit inside the
    /// participant part of a cell index.
    x_strides: Vec<usize>,
    x_cells: usize,
    pmf: Vec<f64>,
}

/// Joint PMF of a participant-side symbol `X` and the dealer symbol `Y`,
/// stored row-major as `p[x * y_card + y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPmf {
    pub x_card: usize,
    pub y_card: usize,
    pub p: Vec<f64>,
}

impl PairPmf {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.p[x * self.y_card + y]
    }

    pub fn x_marginal(&self) -> Vec<f64> {
        (0..self.x_card)
            .map(|x| compensated_sum((0..self.y_card).map(|y| self.get(x, y))))
            .collect()
    }

    pub fn y_marginal(&self) -> Vec<f64> {
        (0..self.y_card)
            .map(|y| compensated_sum((0..self.x_card).map(|x| self.get(x, y))))
            .collect()
    }
}

/// `n` i.i.d. draws of `(Y, X_1, ..., X_L)`; symbols are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleBlock {
    pub n: usize,
    pub y: Vec<usize>,
    /// `x[l]` is participant `l+1`'s sequence.
    pub x: Vec<Vec<usize>>,
}

/// Confirms the PMF invariants and builds the source.
pub fn validate_source(table: SourceTable, budget: usize) -> Result<JointSource, SourceError> {
    let SourceTable {
        alphabet_y,
        alphabet_x,
        pmf,
    } = table;
    if alphabet_x.is_empty() || alphabet_x.len() > MAX_PARTICIPANTS {
        return Err(SourceError::BadParticipantCount(alphabet_x.len()));
    }
    if alphabet_y == 0 || alphabet_x.contains(&0) {
        return Err(SourceError::EmptyAlphabet);
    }
    let cells = alphabet_x
        .iter()
        .fold(alphabet_y as u128, |acc, &a| acc.saturating_mul(a as u128));
    if cells > budget as u128 {
        return Err(SourceError::TableTooLarge { cells, budget });
    }
    let cells = cells as usize;
    if pmf.len() != cells {
        return Err(SourceError::ShapeMismatch {
            expected: cells,
            found: pmf.len(),
        });
    }
    if let Some((cell, &value)) = pmf.iter().enumerate().find(|(_, &p)| p.is_nan() || p < 0.0) {
        return Err(SourceError::NegativeMass { cell, value });
    }
    let total = compensated_sum(pmf.iter().copied());
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(SourceError::MassNotOne { total });
    }
    let mut x_strides = vec![1; alphabet_x.len()];
    for l in (0..alphabet_x.len().saturating_sub(1)).rev() {
        x_strides[l] = x_strides[l + 1] * alphabet_x[l + 1];
    }
    let x_cells = alphabet_x.iter().product();
    Ok(JointSource {
        alphabet_y,
        alphabet_x,
        x_strides,
        x_cells,
        pmf,
    })
}

/// Independent uniform keys: `Y = (X_1, ..., X_L)`, each `X_l` uniform over
/// `key_alphabet` symbols. `Y`'s index is the mixed-radix encoding of the
/// key tuple with `X_1` most significant.
pub fn make_keys_source(participants: usize, key_alphabet: usize) -> Result<JointSource, SourceError> {
    if participants == 0 || participants > MAX_PARTICIPANTS {
        return Err(SourceError::BadParticipantCount(participants));
    }
    if key_alphabet < 2 {
        return Err(SourceError::KeyAlphabetTooSmall(key_alphabet));
    }
    let x_cells = (key_alphabet as u128).pow(participants as u32);
    let cells = x_cells.saturating_mul(x_cells);
    if cells > DEFAULT_TABLE_BUDGET as u128 {
        return Err(SourceError::TableTooLarge {
            cells,
            budget: DEFAULT_TABLE_BUDGET,
        });
    }
    let x_cells = x_cells as usize;
    let mass = 1.0 / x_cells as f64;
    let mut pmf = vec![0.0; x_cells * x_cells];
    for x in 0..x_cells {
        pmf[x * x_cells + x] = mass;
    }
    validate_source(
        SourceTable {
            alphabet_y: x_cells,
            alphabet_x: vec![key_alphabet; participants],
            pmf,
        },
        DEFAULT_TABLE_BUDGET,
    )
}

impl JointSource {
    pub fn new(alphabet_y: usize, alphabet_x: Vec<usize>, pmf: Vec<f64>) -> Result<Self, SourceError> {
        validate_source(
            SourceTable {
                alphabet_y,
                alphabet_x,
                pmf,
            },
            DEFAULT_TABLE_BUDGET,
        )
    }

    pub fn participants(&self) -> usize {
        self.alphabet_x.len()
    }

    pub fn alphabet_y(&self) -> usize {
        self.alphabet_y
    }

    pub fn alphabet_x(&self) -> &[usize] {
        &self.alphabet_x
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn to_table(&self) -> SourceTable {
        SourceTable {
            alphabet_y: self.alphabet_y,
            alphabet_x: self.alphabet_x.clone(),
            pmf: self.pmf.clone(),
        }
    }

    /// Size of the participant-side alphabet `𝒳_S = ∏_{l ∈ S} 𝒳_l`.
    pub fn set_alphabet(&self, set: ParticipantSet) -> usize {
        set.members().map(|l| self.alphabet_x[l - 1]).product()
    }

    fn check_set(&self, set: ParticipantSet) -> Result<(), SourceError> {
        let top = set.max_member();
        if top > self.participants() {
            return Err(SourceError::IndexOutOfRange {
                index: top,
                participants: self.participants(),
            });
        }
        Ok(())
    }

    /// Digit of participant `l` (1-based) inside a full participant index.
    fn x_digit(&self, x_index: usize, l: usize) -> usize {
        (x_index / self.x_strides[l - 1]) % self.alphabet_x[l - 1]
    }

    /// Mixed-radix index of the `X_S` part of a participant index, first
    /// member most significant.
    fn project_index(&self, x_index: usize, set: ParticipantSet) -> usize {
        set.members()
            .fold(0, |acc, l| acc * self.alphabet_x[l - 1] + self.x_digit(x_index, l))
    }

    /// Joint PMF of `(X_S, Y)`.
    pub fn pair_pmf(&self, set: ParticipantSet) -> Result<PairPmf, SourceError> {
        self.check_set(set)?;
        let x_card = self.set_alphabet(set);
        let y_card = self.alphabet_y;
        let mut acc = vec![Vec::new(); x_card * y_card];
        for (cell, &p) in self.pmf.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let y = cell / self.x_cells;
            let xs = self.project_index(cell % self.x_cells, set);
            acc[xs * y_card + y].push(p);
        }
        Ok(PairPmf {
            x_card,
            y_card,
            p: acc.into_iter().map(compensated_sum).collect(),
        })
    }

    /// `H(Y)` in bits.
    pub fn entropy_y(&self) -> f64 {
        let pair = self.pair_pmf(ParticipantSet::EMPTY).expect("empty set is in range");
        entropy_bits(pair.p)
    }

    /// `H(Y | X_S)` in bits; `S = ∅` gives `H(Y)`.
    pub fn conditional_entropy(&self, set: ParticipantSet) -> Result<f64, SourceError> {
        let pair = self.pair_pmf(set)?;
        let joint = entropy_bits(pair.p.iter().copied());
        let marginal = entropy_bits(pair.x_marginal());
        Ok((joint - marginal).max(0.0))
    }

    /// `I(Y; X_A | X_U) = H(Y | X_U) - H(Y | X_{A ∪ U})`.
    pub fn conditional_mutual_information(
        &self,
        a: ParticipantSet,
        u: ParticipantSet,
    ) -> Result<f64, SourceError> {
        self.check_set(a)?;
        self.check_set(u)?;
        if a.is_subset(u) {
            return Ok(0.0);
        }
        let outer = self.conditional_entropy(u)?;
        let inner = self.conditional_entropy(a.union(u))?;
        Ok((outer - inner).max(0.0))
    }

    /// `Some(log2 q)` when this is an independent-uniform-keys source: all
    /// participants share an alphabet of size `q`, the keys are independent
    /// and uniform, and `Y` is in bijection with the key tuple.
    pub fn key_model_entropy(&self) -> Option<f64> {
        const TOL: f64 = 1e-9;
        let q = self.alphabet_x[0];
        if self.alphabet_x.iter().any(|&a| a != q) {
            return None;
        }
        let per_key = (q as f64).log2();
        let full = ParticipantSet::full(self.participants());
        for l in 1..=self.participants() {
            let single = ParticipantSet::EMPTY.with(l);
            let marginal = self.pair_pmf(single).ok()?.x_marginal();
            if marginal.iter().any(|&p| (p - 1.0 / q as f64).abs() > TOL) {
                return None;
            }
        }
        let pair = self.pair_pmf(full).ok()?;
        let keys_entropy = entropy_bits(pair.x_marginal());
        if (keys_entropy - per_key * self.participants() as f64).abs() > TOL {
            return None;
        }
        let y_entropy = entropy_bits(pair.y_marginal());
        let joint = entropy_bits(pair.p.iter().copied());
        // H(Y|X) = 0 and H(X|Y) = 0.
        if (joint - keys_entropy).abs() > TOL || (joint - y_entropy).abs() > TOL {
            return None;
        }
        Some(per_key)
    }

    /// Reproducible block of `n` i.i.d. draws.
    pub fn sample_block(&self, n: usize, seed: u64) -> SampleBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = WeightedIndex::new(&self.pmf).expect("validated PMF has positive mass");
        let mut y = Vec::with_capacity(n);
        let mut x = vec![Vec::with_capacity(n); self.participants()];
        for _ in 0..n {
            let cell = dist.sample(&mut rng);
            y.push(cell / self.x_cells);
            let xi = cell % self.x_cells;
            for (l, seq) in x.iter_mut().enumerate() {
                seq.push(self.x_digit(xi, l + 1));
            }
        }
        SampleBlock { n, y, x }
    }
}

impl SampleBlock {
    /// Sequence of `X_S` symbols, encoded as in [`JointSource::pair_pmf`].
    pub fn project(&self, src: &JointSource, set: ParticipantSet) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                set.members()
                    .fold(0, |acc, l| acc * src.alphabet_x[l - 1] + self.x[l - 1][i])
            })
            .collect()
    }
}
