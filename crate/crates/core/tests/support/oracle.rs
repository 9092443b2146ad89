//! Reference computations for tests, written without the library's coding
//! paths. Only the public context-model primitives (`bit_cost`, `update`) are
//! shared.
#![allow(dead_code)]

use deepcabac::ctxmodel::{BitCost, ContextModel};

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Ideal code length of a bin sequence coded at fixed probability-of-one `p`.
pub fn ideal_bits(bins: &[bool], p: f64) -> f64 {
    let ones = bins.iter().filter(|&&b| b).count() as f64;
    let zeros = bins.len() as f64 - ones;
    -(ones * p.log2() + zeros * (1.0 - p).log2())
}

/// Bins of one index as (model slot, bit); slot `None` is a bypass bin.
/// Slots: 0 = significance, 1 = sign, 1 + k = greater-than-k.
pub fn bins_of(v: i64, n: u8, remainder_bits: u8) -> Vec<(Option<usize>, bool)> {
    let m = v.unsigned_abs();
    let mut out = vec![(Some(0), m > 0)];
    if m == 0 {
        return out;
    }
    out.push((Some(1), v < 0));
    let mut k = 1u64;
    while k <= n as u64 {
        out.push((Some(1 + k as usize), m > k));
        if m <= k {
            return out;
        }
        k += 1;
    }
    let r = m - n as u64 - 1;
    let mut bits = Vec::new();
    for i in 0..remainder_bits {
        bits.push((None, (r >> i) & 1 == 1));
    }
    bits.reverse();
    out.extend(bits);
    out
}

pub fn remainder_width(n: u8, max_abs: u64) -> u8 {
    let mut w = 0u8;
    while (n as u64) + (1u64 << w) < max_abs {
        w += 1;
    }
    w
}

pub struct BruteForce {
    pub delta: f64,
    pub max_abs: u64,
    pub lambda: f64,
    pub halfwidth: i64,
    pub n: u8,
    pub shift: u8,
}

impl BruteForce {
    /// Sequential argmin over the candidate set with costs summed bin by bin.
    pub fn quantize(&self, w: &[f32], eta: &[f64]) -> Vec<i32> {
        let rb = remainder_width(self.n, self.max_abs);
        let mut models = vec![ContextModel::new(self.shift); 2 + self.n as usize];
        let bound = self.max_abs as i64;
        let mut out = Vec::with_capacity(w.len());
        for (i, &x) in w.iter().enumerate() {
            let x = x as f64;
            let nearest = (x / self.delta).round() as i64;
            let mut cands: Vec<i64> = (-bound..=bound)
                .filter(|&k| k == 0 || (k - nearest).abs() <= self.halfwidth)
                .collect();
            // smaller magnitude first, then nonnegative: the first minimum wins
            cands.sort_by_key(|&k| (k.unsigned_abs(), k < 0));
            let mut best = (f64::INFINITY, 0i64);
            for &k in &cands {
                let rate: BitCost = bins_of(k, self.n, rb)
                    .iter()
                    .map(|&(slot, b)| match slot {
                        Some(s) => models[s].bit_cost(b),
                        None => BitCost::ONE_BIT,
                    })
                    .sum();
                let d = x - self.delta * k as f64;
                let mut cost = eta[i] * d * d;
                if self.lambda > 0.0 {
                    cost += self.lambda * rate.bits();
                }
                if cost < best.0 {
                    best = (cost, k);
                }
            }
            for (slot, b) in bins_of(best.1, self.n, rb) {
                if let Some(s) = slot {
                    models[s].update(b);
                }
            }
            out.push(best.1 as i32);
        }
        out
    }
}

/// round(x / delta) with exact half-steps resolved toward zero.
pub fn round_toward_zero_on_ties(x: f64, delta: f64) -> i64 {
    let t = x / delta;
    let f = t.floor();
    let frac = t - f;
    let up = frac > 0.5 || (frac == 0.5 && t < 0.0);
    let k = if up { f + 1.0 } else { f };
    k as i64
}
