//! Adaptive binary context models and their bit-cost estimates.

use std::sync::OnceLock;

use crate::bacore::{PROB_BITS, PROB_HALF, PROB_MAX, PROB_MIN, PROB_ONE};

pub const DEFAULT_ADAPTATION_SHIFT: u8 = 4;

/// Fractional bits of a [`BitCost`].
pub const COST_FRAC_BITS: u32 = 16;

/// A code length in units of 2^-16 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BitCost(pub u64);

impl BitCost {
    pub const ONE_BIT: BitCost = BitCost(1 << COST_FRAC_BITS);

    pub fn bits(self) -> f64 {
        self.0 as f64 / (1u64 << COST_FRAC_BITS) as f64
    }
}

impl std::ops::Add for BitCost {
    type Output = BitCost;
    fn add(self, rhs: BitCost) -> BitCost {
        BitCost(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for BitCost {
    fn add_assign(&mut self, rhs: BitCost) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for BitCost {
    fn sum<I: Iterator<Item = BitCost>>(iter: I) -> BitCost {
        iter.fold(BitCost(0), |a, b| a + b)
    }
}

/// log2(x) in Q16 for 1 <= x < 2^31, by repeated squaring of the mantissa.
///
/// Integer-only so the table is identical on every platform.
fn log2_q16(x: u32) -> u32 {
    debug_assert!(x > 0);
    const MANT_BITS: u32 = 30;
    let int_part = 31 - x.leading_zeros();
    let mut y = (x as u64) << (MANT_BITS - int_part);
    let mut frac = 0u32;
    for i in 1..=COST_FRAC_BITS {
        y = (y * y) >> MANT_BITS;
        if y >= 2 << MANT_BITS {
            y >>= 1;
            frac |= 1 << (COST_FRAC_BITS - i);
        }
    }
    (int_part << COST_FRAC_BITS) | frac
}

/// -log2(p / 2^15) for every 15-bit probability p.
fn cost_table() -> &'static [u32] {
    static TABLE: OnceLock<Vec<u32>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let top = PROB_BITS << COST_FRAC_BITS;
        (0..PROB_ONE)
            .map(|p| if p == 0 { u32::MAX } else { top - log2_q16(p) })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextModel {
    p1: u16,
    adaptation_shift: u8,
}

impl Default for ContextModel {
    fn default() -> Self {
        Self::new(DEFAULT_ADAPTATION_SHIFT)
    }
}

impl ContextModel {
    pub fn new(adaptation_shift: u8) -> Self {
        Self {
            p1: PROB_HALF,
            adaptation_shift,
        }
    }

    pub fn with_p1(p1: u16, adaptation_shift: u8) -> Self {
        Self {
            p1: p1.clamp(PROB_MIN, PROB_MAX),
            adaptation_shift,
        }
    }

    /// Probability of a one, 15-bit fixed point.
    #[inline]
    pub fn p1(&self) -> u16 {
        self.p1
    }

    pub fn adaptation_shift(&self) -> u8 {
        self.adaptation_shift
    }

    /// Move p1 a fraction 2^-shift of the way toward the observed value.
    ///
    /// The step is rounded away from zero so repeated observations reach the
    /// clamp bounds rather than stalling short of them.
    #[inline]
    pub fn update(&mut self, observed: bool) {
        let p1 = self.p1 as u32;
        let shift = self.adaptation_shift as u32;
        let round = (1u32 << shift) - 1;
        let next = if observed {
            p1 + ((PROB_ONE - p1 + round) >> shift)
        } else {
            p1 - ((p1 + round) >> shift).min(p1)
        };
        self.p1 = next.clamp(PROB_MIN as u32, PROB_MAX as u32) as u16;
    }

    /// -log2 P(bin) under the current state.
    #[inline]
    pub fn bit_cost(&self, bin: bool) -> BitCost {
        let p = if bin { self.p1 as u32 } else { PROB_ONE - self.p1 as u32 };
        BitCost(cost_table()[p as usize] as u64)
    }
}

/// The regular-bin models of one layer: significance, sign, and one model
/// per greater-than flag.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextSet {
    pub sig: ContextModel,
    pub sign: ContextModel,
    pub gr: Vec<ContextModel>,
}

impl ContextSet {
    pub fn new(n_flags: u8, adaptation_shift: u8) -> Self {
        let m = ContextModel::new(adaptation_shift);
        Self {
            sig: m,
            sign: m,
            gr: vec![m; n_flags as usize],
        }
    }

    pub fn n_flags(&self) -> u8 {
        self.gr.len() as u8
    }

    pub fn len(&self) -> usize {
        self.gr.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Deep copy for pricing candidates without committing.
    pub fn clone_state(&self) -> Self {
        self.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_model_is_half() {
        let m = ContextModel::new(4);
        assert_eq!(m.p1(), 16384);
        assert_eq!(m.bit_cost(true), BitCost::ONE_BIT);
        assert_eq!(m.bit_cost(false), BitCost::ONE_BIT);
    }

    #[test]
    fn update_arithmetic() {
        let mut m = ContextModel::new(4);
        m.update(true);
        assert_eq!(m.p1(), 17408);

        let mut m = ContextModel::new(4);
        m.update(false);
        assert_eq!(m.p1(), 15360);
        m.update(true);
        assert_eq!(m.p1(), 16448);
    }

    #[test]
    fn long_runs_reach_clamp_bounds() {
        let mut m = ContextModel::new(4);
        for _ in 0..1_000_000 {
            m.update(false);
        }
        assert_eq!(m.p1(), 1);
        for _ in 0..1_000_000 {
            m.update(true);
        }
        assert_eq!(m.p1(), 32767);
    }

    #[test]
    fn adapts_within_64_observations() {
        for bin in [false, true] {
            let mut m = ContextModel::new(4);
            for _ in 0..64 {
                m.update(bin);
            }
            let p = m.p1() as f64 / PROB_ONE as f64;
            let p_bin = if bin { p } else { 1.0 - p };
            assert!(p_bin > 0.95, "{p_bin}");
        }
    }

    #[test]
    fn cost_at_ninety_percent() {
        let m = ContextModel::with_p1(29491, 4); // round(0.9 * 32768)
        let expected = -(0.9f64).log2(); // 0.152
        assert!((m.bit_cost(true).bits() - expected).abs() < 0.01);
    }

    #[test]
    fn cost_table_tracks_float_log() {
        for p in [1u32, 2, 3, 100, 1000, 16383, 16385, 30000, 32767] {
            let exact = -((p as f64) / PROB_ONE as f64).log2();
            let got = BitCost(cost_table()[p as usize] as u64).bits();
            assert!((got - exact).abs() < 1e-3, "p={p} got={got} exact={exact}");
        }
    }

    #[test]
    fn bit_cost_does_not_mutate() {
        let mut m = ContextModel::new(4);
        m.update(true);
        let before = m;
        let _ = m.bit_cost(true);
        let _ = m.bit_cost(false);
        assert_eq!(m, before);
    }

    #[test]
    fn clone_is_deep() {
        let fresh = ContextSet::new(3, 4);
        assert_eq!(fresh.len(), 5);
        let mut copy = fresh.clone_state();
        copy.sig.update(true);
        copy.gr[2].update(false);
        assert_eq!(fresh, ContextSet::new(3, 4));
        assert!(fresh.gr.iter().all(|m| m.p1() == 16384));
    }

    #[test]
    fn replay_is_deterministic() {
        let mut a = ContextSet::new(2, 4);
        let obs: Vec<bool> = (0..100).map(|i| (i * 7) % 3 == 0).collect();
        for &o in &obs {
            a.sig.update(o);
            a.gr[1].update(!o);
        }
        let snapshot = a.clone_state();
        let mut b = ContextSet::new(2, 4);
        for &o in &obs {
            b.sig.update(o);
            b.gr[1].update(!o);
        }
        assert_eq!(snapshot, b);
    }
}
