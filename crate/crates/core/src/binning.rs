//! Quantized random binnings.
//!
//! A family holds `b = ⌈log2|𝒴| / ε⌉` message binnings `g_1..g_b` onto
//! `[1, ⌈2^{nε}⌉]` and `b` secret binnings `h_1..h_b` onto
//! `[1, max(1, ⌊2^{nε}⌋)]`. Binnings are never tabulated: each value is a
//! seeded pseudorandom function of the sequence.
//!
//! # Construction
//!
//! For kind `K` (`0x67` = `g`, `0x68` = `h`), index `i`, sequence
//! `y_1..y_n` and counter `c = 0, 1, ...`:
//!
//! ```text
//! raw_c = u64_le(SHA-256("aas-sim/binning/v1" || K || salt_K as u64 LE
//!                        || seed as u64 LE || i as u32 LE || n as u32 LE
//!                        || |𝒴| as u32 LE || y_1 as u32 LE || ... || y_n as u32 LE
//!                        || c as u32 LE)[0..8])
//! ```
//!
//! The first `raw_c` below `r * floor(2^64 / r)` (for range size `r`) is
//! accepted and the bin is `raw_c mod r + 1`. Equal inputs give equal bins
//! on every platform.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numeric::ceil_snapped;

const DOMAIN_TAG: &[u8] = b"aas-sim/binning/v1";
const MAX_BIN_EXPONENT: f64 = 62.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BinningError {
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("block length must be at least 1")]
    ZeroLength,
    #[error("dealer alphabet must have at least 2 symbols, got {0}")]
    AlphabetTooSmall(usize),
    #[error("bin ranges 2^(n·ε) = 2^{exponent} are not representable")]
    DegenerateBins { exponent: f64 },
    #[error("binning index {index} outside 1..={b}")]
    IndexOutOfRange { index: usize, b: usize },
    #[error("sequence has length {found}, family expects {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("symbol {symbol} outside the dealer alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Message,
    Secret,
}

impl BinKind {
    fn tag(self) -> u8 {
        match self {
            BinKind::Message => b'g',
            BinKind::Secret => b'h',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinningFamily {
    seed: u64,
    n: usize,
    epsilon: f64,
    alphabet_y: usize,
    b: usize,
    m_bins: u64,
    s_bins: u64,
    message_salt: u64,
    secret_salt: u64,
}

/// Unbiased reduction of a `raw_bits`-bit value onto `0..range`, or `None`
/// when `raw` falls in the rejected tail.
pub fn reduce_unbiased(raw: u64, raw_bits: u32, range: u64) -> Option<u64> {
    debug_assert!(range >= 1 && (1..=64).contains(&raw_bits));
    let space = 1u128 << raw_bits;
    let limit = space / range as u128 * range as u128;
    ((raw as u128) < limit).then(|| raw % range)
}

/// Builds a binning family. `b`, `|M_ε|` and `|S_ε|` snap to the nearest
/// integer when within float noise of it.
pub fn make_family(
    seed: u64,
    n: usize,
    epsilon: f64,
    alphabet_y: usize,
) -> Result<BinningFamily, BinningError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(BinningError::BadEpsilon(epsilon));
    }
    if n == 0 {
        return Err(BinningError::ZeroLength);
    }
    if alphabet_y < 2 {
        return Err(BinningError::AlphabetTooSmall(alphabet_y));
    }
    let b = ceil_snapped((alphabet_y as f64).log2() / epsilon) as usize;
    let exponent = n as f64 * epsilon;
    if exponent > MAX_BIN_EXPONENT {
        return Err(BinningError::DegenerateBins { exponent });
    }
    let rounded = exponent.round();
    let (m_bins, s_bins) = if (exponent - rounded).abs() < crate::numeric::QUANTIZE_TOLERANCE {
        let exact = 1u64 << rounded as u32;
        (exact, exact)
    } else {
        let v = exponent.exp2();
        (v.ceil() as u64, (v.floor() as u64).max(1))
    };
    if m_bins == 0 || s_bins == 0 {
        return Err(BinningError::DegenerateBins { exponent });
    }
    Ok(BinningFamily {
        seed,
        n,
        epsilon,
        alphabet_y,
        b,
        m_bins,
        s_bins,
        message_salt: 0,
        secret_salt: 0,
    })
}

impl BinningFamily {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn alphabet_y(&self) -> usize {
        self.alphabet_y
    }

    /// Number of binnings of each kind.
    pub fn b(&self) -> usize {
        self.b
    }

    /// `|M_ε|`.
    pub fn m_bins(&self) -> u64 {
        self.m_bins
    }

    /// `|S_ε|`.
    pub fn s_bins(&self) -> u64 {
        self.s_bins
    }

    pub fn with_message_salt(mut self, salt: u64) -> Self {
        self.message_salt = salt;
        self
    }

    pub fn with_secret_salt(mut self, salt: u64) -> Self {
        self.secret_salt = salt;
        self
    }

    fn check(&self, index: usize, y: &[usize]) -> Result<(), BinningError> {
        if index == 0 || index > self.b {
            return Err(BinningError::IndexOutOfRange { index, b: self.b });
        }
        if y.len() != self.n {
            return Err(BinningError::LengthMismatch {
                expected: self.n,
                found: y.len(),
            });
        }
        if let Some(&symbol) = y.iter().find(|&&s| s >= self.alphabet_y) {
            return Err(BinningError::SymbolOutOfRange {
                symbol,
                alphabet: self.alphabet_y,
            });
        }
        Ok(())
    }

    fn hasher(&self, kind: BinKind, index: usize, y: &[usize]) -> Sha256 {
        let salt = match kind {
            BinKind::Message => self.message_salt,
            BinKind::Secret => self.secret_salt,
        };
        let mut h = Sha256::new();
        h.update(DOMAIN_TAG);
        h.update([kind.tag()]);
        h.update(salt.to_le_bytes());
        h.update(self.seed.to_le_bytes());
        h.update((index as u32).to_le_bytes());
        h.update((self.n as u32).to_le_bytes());
        h.update((self.alphabet_y as u32).to_le_bytes());
        for &s in y {
            h.update((s as u32).to_le_bytes());
        }
        h
    }

    fn evaluate(&self, kind: BinKind, index: usize, y: &[usize]) -> u64 {
        let range = match kind {
            BinKind::Message => self.m_bins,
            BinKind::Secret => self.s_bins,
        };
        if range == 1 {
            return 1;
        }
        let prefix = self.hasher(kind, index, y);
        for counter in 0u32.. {
            let mut h = prefix.clone();
            h.update(counter.to_le_bytes());
            let digest = h.finalize();
            let mut word = [0u8; 8];
            word.copy_from_slice(&digest[..8]);
            if let Some(v) = reduce_unbiased(u64::from_le_bytes(word), 64, range) {
                return v + 1;
            }
        }
        unreachable!("rejection probability is below 1/2 per draw")
    }

    /// Message binning `g_i(y^n) ∈ [1, |M_ε|]`.
    pub fn g(&self, index: usize, y: &[usize]) -> Result<u64, BinningError> {
        self.check(index, y)?;
        Ok(self.evaluate(BinKind::Message, index, y))
    }

    /// Secret binning `h_j(y^n) ∈ [1, |S_ε|]`.
    pub fn h(&self, index: usize, y: &[usize]) -> Result<u64, BinningError> {
        self.check(index, y)?;
        Ok(self.evaluate(BinKind::Secret, index, y))
    }

    /// `(g_i(y))_{i ∈ indices}`.
    pub fn message_bins(
        &self,
        indices: std::ops::RangeInclusive<usize>,
        y: &[usize],
    ) -> Result<Vec<u64>, BinningError> {
        indices.map(|i| self.g(i, y)).collect()
    }

    /// `(h_j(y))_{j = 1..=count}`.
    pub fn secret_bins(&self, count: usize, y: &[usize]) -> Result<Vec<u64>, BinningError> {
        (1..=count).map(|j| self.h(j, y)).collect()
    }
}
