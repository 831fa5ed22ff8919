//! Small numeric helpers shared by the analytic and simulation modules.

/// Offsets below this are treated as float noise when quantizing a real
/// value to an integer with `ceil`/`floor`.
pub const QUANTIZE_TOLERANCE: f64 = 1e-9;

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<CompensatedSum>().value()
}

/// `ceil(x)`, except that values within [`QUANTIZE_TOLERANCE`] of an integer
/// snap to that integer. `ceil((0.1 + 0.2) / 0.1)` is 4 in plain f64 arithmetic.
pub fn ceil_snapped(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < QUANTIZE_TOLERANCE {
        r
    } else {
        x.ceil()
    }
}

/// Floor counterpart of [`ceil_snapped`].
pub fn floor_snapped(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < QUANTIZE_TOLERANCE {
        r
    } else {
        x.floor()
    }
}

/// Shannon entropy in bits of an unnormalized-safe mass vector, with the
/// `0 log 0 = 0` convention.
pub fn entropy_bits<I: IntoIterator<Item = f64>>(masses: I) -> f64 {
    let h = compensated_sum(masses.into_iter().filter(|&p| p > 0.0).map(|p| -p * p.log2()));
    h.max(0.0)
}

/// Wilson score interval at 95% confidence for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    const Z: f64 = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// One SplitMix64 step: advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seeds for `count` trials derived from a scenario seed.
///
/// Trial `i` receives the `(i+1)`-th SplitMix64 output of a generator whose
/// state starts at `base`. The mapping depends only on `(base, i)`, so the
/// seeds never depend on how trials are scheduled across workers.
pub fn trial_seeds(base: u64, count: usize) -> Vec<u64> {
    let mut state = base;
    (0..count).map(|_| splitmix64(&mut state)).collect()
}

/// Seed of trial `index` without materializing the prefix.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    let mut state = base.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix64(&mut state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapped_rounding_absorbs_float_noise() {
        assert_eq!(((0.1f64 + 0.2) / 0.1).ceil(), 4.0);
        assert_eq!(ceil_snapped((0.1 + 0.2) / 0.1), 3.0);
        assert_eq!((0.3f64 / 0.1).floor(), 2.0);
        assert_eq!(floor_snapped(0.3 / 0.1), 3.0);
        assert_eq!(ceil_snapped(2.5), 3.0);
        assert_eq!(floor_snapped(-0.5), -1.0);
    }

    #[test]
    fn compensated_sum_beats_naive_on_cancellation() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(values), 2.0);
    }

    #[test]
    fn entropy_of_uniform() {
        assert!((entropy_bits([0.25; 4]) - 2.0).abs() < 1e-15);
        assert_eq!(entropy_bits([1.0, 0.0]), 0.0);
    }

    #[test]
    fn wilson_contains_point_estimate() {
        let (lo, hi) = wilson_interval(30, 100);
        assert!(lo < 0.3 && 0.3 < hi);
        assert_eq!(wilson_interval(0, 10).0, 0.0);
        assert_eq!(wilson_interval(10, 10).1, 1.0);
    }

    #[test]
    fn trial_seed_matches_sequence() {
        let seq = trial_seeds(42, 5);
        for (i, s) in seq.iter().enumerate() {
            assert_eq!(*s, trial_seed(42, i as u64));
        }
    }
}
