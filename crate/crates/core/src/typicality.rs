//! Robust (letter) typicality.
//!
//! A sequence `x^n` is ε-typical for `p` when every symbol's empirical
//! frequency satisfies `|N(x)/n - p(x)| <= ε p(x)`. Symbols with zero mass
//! therefore never appear in a typical sequence.

use thiserror::Error;

use crate::source::PairPmf;

/// Absolute slack, in counts, when comparing `|N(x) - n p(x)|` against
/// `ε n p(x)`. Only absorbs float noise on exact boundaries.
const COUNT_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypicalityError {
    #[error("sequences have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("candidate space of {size} sequences exceeds the enumeration budget {limit}")]
    BudgetExceeded { size: u128, limit: u64 },
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("block length must be at least 1")]
    ZeroLength,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypicalityParams {
    epsilon: f64,
    n: usize,
}

impl TypicalityParams {
    pub fn new(epsilon: f64, n: usize) -> Result<Self, TypicalityError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(TypicalityError::BadEpsilon(epsilon));
        }
        if n == 0 {
            return Err(TypicalityError::ZeroLength);
        }
        Ok(Self { epsilon, n })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Default `δ(ε) = ε log2 |alphabet|`.
pub fn default_delta(epsilon: f64, alphabet: usize) -> f64 {
    epsilon * (alphabet as f64).log2()
}

fn counts_typical(counts: &[usize], pmf: &[f64], n: usize, epsilon: f64) -> bool {
    let nf = n as f64;
    counts.iter().zip(pmf).all(|(&c, &p)| {
        let expected = nf * p;
        (c as f64 - expected).abs() <= epsilon * expected + COUNT_TOLERANCE
    })
}

/// Letter typicality of `seq` under `pmf`. The block length is
/// `seq.len()`; out-of-alphabet symbols make the sequence atypical.
pub fn is_typical(seq: &[usize], pmf: &[f64], params: &TypicalityParams) -> bool {
    let mut counts = vec![0usize; pmf.len()];
    for &s in seq {
        match counts.get_mut(s) {
            Some(c) => *c += 1,
            None => return false,
        }
    }
    counts_typical(&counts, pmf, seq.len(), params.epsilon)
}

/// Typicality of the pair sequence `((x_i, y_i))_i` under the joint PMF.
pub fn is_jointly_typical(
    x: &[usize],
    y: &[usize],
    pair: &PairPmf,
    params: &TypicalityParams,
) -> Result<bool, TypicalityError> {
    if x.len() != y.len() {
        return Err(TypicalityError::LengthMismatch(x.len(), y.len()));
    }
    if x.iter().any(|&a| a >= pair.x_card) || y.iter().any(|&b| b >= pair.y_card) {
        return Ok(false);
    }
    let joint: Vec<usize> = x.iter().zip(y).map(|(&a, &b)| a * pair.y_card + b).collect();
    Ok(is_typical(&joint, &pair.p, params))
}

/// Search space for the conditionally typical `y^n` given `x^n`.
///
/// A jointly typical pair sequence only uses positive-mass pairs, so every
/// candidate lies in the product of the per-position supports
/// `{y : p(x_i, y) > 0}`. That product (in ascending lexicographic order) is
/// filtered exhaustively; it is identical to filtering all of `𝒴^n`.
#[derive(Debug, Clone)]
pub struct ConditionalTypicalSet<'a> {
    pair: &'a PairPmf,
    x: Vec<usize>,
    supports: Vec<Vec<usize>>,
    size: u64,
    epsilon: f64,
}

impl<'a> ConditionalTypicalSet<'a> {
    pub fn new(
        pair: &'a PairPmf,
        x: &[usize],
        params: &TypicalityParams,
        budget: u64,
    ) -> Result<Self, TypicalityError> {
        let marginal_ok = is_typical(x, &pair.x_marginal(), params);
        let supports: Vec<Vec<usize>> = if marginal_ok {
            x.iter()
                .map(|&xi| (0..pair.y_card).filter(|&y| pair.get(xi, y) > 0.0).collect())
                .collect()
        } else {
            // Joint typicality implies marginal typicality of x.
            Vec::new()
        };
        let size: u128 = if marginal_ok {
            supports
                .iter()
                .fold(1u128, |acc, s| acc.saturating_mul(s.len() as u128))
        } else {
            0
        };
        if size > budget as u128 {
            return Err(TypicalityError::BudgetExceeded {
                size,
                limit: budget,
            });
        }
        Ok(Self {
            pair,
            x: x.to_vec(),
            supports,
            size: size as u64,
            epsilon: params.epsilon,
        })
    }

    /// Number of candidate sequences searched (before the typicality filter).
    pub fn search_size(&self) -> u64 {
        self.size
    }

    /// Typical sequences whose candidate index lies in `range`; the union
    /// over a partition of `0..search_size()` is the full set, in order.
    pub fn iter_range(&self, range: std::ops::Range<u64>) -> impl Iterator<Item = Vec<usize>> + '_ {
        let end = range.end.min(self.size);
        let start = range.start.min(end);
        CandidateIter {
            set: self,
            digits: self.digits_of(start),
            next: start,
            end,
            counts: vec![0; self.pair.p.len()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.iter_range(0..self.size)
    }

    fn digits_of(&self, mut index: u64) -> Vec<usize> {
        let mut digits = vec![0; self.supports.len()];
        for pos in (0..self.supports.len()).rev() {
            let radix = self.supports[pos].len() as u64;
            if radix == 0 {
                break;
            }
            digits[pos] = (index % radix) as usize;
            index /= radix;
        }
        digits
    }
}

struct CandidateIter<'s, 'a> {
    set: &'s ConditionalTypicalSet<'a>,
    digits: Vec<usize>,
    next: u64,
    end: u64,
    counts: Vec<usize>,
}

impl CandidateIter<'_, '_> {
    fn advance(&mut self) {
        for pos in (0..self.digits.len()).rev() {
            self.digits[pos] += 1;
            if self.digits[pos] < self.set.supports[pos].len() {
                return;
            }
            self.digits[pos] = 0;
        }
    }
}

impl Iterator for CandidateIter<'_, '_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let set = self.set;
        let y_card = set.pair.y_card;
        while self.next < self.end {
            self.counts.iter_mut().for_each(|c| *c = 0);
            for (pos, &d) in self.digits.iter().enumerate() {
                let y = set.supports[pos][d];
                self.counts[set.x[pos] * y_card + y] += 1;
            }
            let typical = counts_typical(&self.counts, &set.pair.p, set.x.len(), set.epsilon);
            let candidate = typical.then(|| {
                self.digits
                    .iter()
                    .enumerate()
                    .map(|(pos, &d)| set.supports[pos][d])
                    .collect()
            });
            self.next += 1;
            if self.next < self.end {
                self.advance();
            }
            if candidate.is_some() {
                return candidate;
            }
        }
        None
    }
}

/// All `y^n` with `(x^n, y^n)` jointly typical, in ascending order.
pub fn enumerate_conditionally_typical(
    pair: &PairPmf,
    x: &[usize],
    params: &TypicalityParams,
    budget: u64,
) -> Result<Vec<Vec<usize>>, TypicalityError> {
    Ok(ConditionalTypicalSet::new(pair, x, params, budget)?.iter().collect())
}
