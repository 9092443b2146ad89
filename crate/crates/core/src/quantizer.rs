//! Weighted rate-distortion quantization onto an equidistant grid.
//!
//! Every weight is mapped to the grid index minimizing
//! `eta * (w - delta * k)^2 + lambda * R(k)`, where `R(k)` is the code length
//! of `k`'s bin string under the live context models. Weights are visited in
//! row-major order and the models are updated with each chosen index, so the
//! prices follow exactly the states the entropy coder will see.

use thiserror::Error;

use crate::binarizer::{commit_index, index_cost, BinarizationParams, QuantIndexTensor, DEFAULT_N_FLAGS};
use crate::ctxmodel::{ContextSet, DEFAULT_ADAPTATION_SHIFT};
use crate::tensor::WeightTensor;

/// Grid floor used in place of the smallest standard deviation when no
/// deviations are supplied, relative to the largest weight magnitude.
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantizeError {
    #[error("sigma map has {found} entries, layer has {expected}")]
    SigmaDims { expected: usize, found: usize },
    #[error("sigma at position {index} is {value}, expected a positive finite value")]
    BadSigma { index: usize, value: f64 },
    #[error("invalid weight statistics: w_max={w_max}, sigma_min={sigma_min}")]
    BadStats { w_max: f64, sigma_min: f64 },
    #[error("invalid rd config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStats {
    pub w_max: f64,
    pub sigma_min: f64,
}

impl WeightStats {
    pub fn new(w_max: f64, sigma_min: f64) -> Result<Self, QuantizeError> {
        let w_max = w_max.abs();
        if !w_max.is_finite() || !sigma_min.is_finite() || sigma_min <= 0.0 {
            return Err(QuantizeError::BadStats { w_max, sigma_min });
        }
        Ok(Self { w_max, sigma_min })
    }

    /// Statistics of a layer. Without a sigma map, `floor` stands in for the
    /// smallest deviation (default `w_max / 1024`, or 1 for an all-zero layer).
    pub fn of_layer(w: &WeightTensor, sigmas: Option<&[f32]>, floor: Option<f64>) -> Result<Self, QuantizeError> {
        let w_max = w.max_abs();
        let sigma_min = match sigmas {
            Some(s) => {
                check_sigmas(w.len(), s)?;
                s.iter().fold(f64::INFINITY, |m, &x| m.min(x as f64))
            }
            None => match floor {
                Some(f) => f,
                None if w_max > 0.0 => w_max * DEFAULT_RELATIVE_FLOOR,
                None => 1.0,
            },
        };
        Self::new(w_max, sigma_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantGrid {
    pub delta: f64,
    pub s: u32,
    pub max_abs_index: u64,
}

impl QuantGrid {
    pub fn is_degenerate(&self) -> bool {
        self.max_abs_index == 0
    }

    #[inline]
    pub fn point(&self, index: i64) -> f64 {
        self.delta * index as f64
    }
}

/// Step size `2|w_max| / (2|w_max| / sigma_min + S)`.
pub fn grid_step(w_max: f64, sigma_min: f64, s: u32) -> f64 {
    let span = 2.0 * w_max.abs();
    span / (span / sigma_min + s as f64)
}

pub fn build_grid(stats: WeightStats, s: u32) -> QuantGrid {
    if stats.w_max == 0.0 {
        return QuantGrid {
            delta: stats.sigma_min,
            s,
            max_abs_index: 0,
        };
    }
    let delta = grid_step(stats.w_max, stats.sigma_min, s);
    QuantGrid {
        delta,
        s,
        max_abs_index: (stats.w_max / delta).ceil() as u64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum EtaMode {
    /// eta = 1 for every weight.
    #[default]
    Uniform,
    /// eta = 1 / sigma^2 when a sigma map is available, otherwise uniform.
    FromSigma,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdConfig {
    pub lambda: f64,
    pub eta_mode: EtaMode,
    pub search_halfwidth: u32,
    pub n_flags: u8,
    pub adaptation_shift: u8,
}

impl Default for RdConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            eta_mode: EtaMode::FromSigma,
            search_halfwidth: 2,
            n_flags: DEFAULT_N_FLAGS,
            adaptation_shift: DEFAULT_ADAPTATION_SHIFT,
        }
    }
}

impl RdConfig {
    pub fn validate(&self) -> Result<(), QuantizeError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(QuantizeError::BadConfig("lambda must be finite and >= 0"));
        }
        if self.search_halfwidth < 1 {
            return Err(QuantizeError::BadConfig("search half-width must be >= 1"));
        }
        if self.adaptation_shift == 0 || self.adaptation_shift > 14 {
            return Err(QuantizeError::BadConfig("adaptation shift must be in 1..=14"));
        }
        Ok(())
    }

    /// Binarization used to price candidates on `grid`.
    pub fn pricing_params(&self, grid: &QuantGrid) -> BinarizationParams {
        BinarizationParams::covering(self.n_flags, grid.max_abs_index)
    }
}

fn check_sigmas(len: usize, sigmas: &[f32]) -> Result<(), QuantizeError> {
    if sigmas.len() != len {
        return Err(QuantizeError::SigmaDims {
            expected: len,
            found: sigmas.len(),
        });
    }
    if let Some((index, &s)) = sigmas.iter().enumerate().find(|(_, &s)| !(s > 0.0 && s.is_finite())) {
        return Err(QuantizeError::BadSigma { index, value: s as f64 });
    }
    Ok(())
}

/// Ordering key for equal costs: smaller magnitude first, then nonnegative.
#[inline]
fn tie_key(k: i64) -> (u64, bool) {
    (k.unsigned_abs(), k < 0)
}

/// Candidate indices: the window around the nearest grid index, plus zero,
/// clipped to the grid bounds.
pub fn candidates(w: f64, grid: &QuantGrid, halfwidth: u32) -> impl Iterator<Item = i64> {
    let bound = grid.max_abs_index.min(i32::MAX as u64) as i64;
    let nearest = (w / grid.delta).round().clamp(-(bound as f64), bound as f64) as i64;
    let lo = (nearest - halfwidth as i64).max(-bound);
    let hi = (nearest + halfwidth as i64).min(bound);
    let zero_outside = lo > 0 || hi < 0;
    (lo..=hi).chain(zero_outside.then_some(0))
}

/// Pick the cheapest index for one weight and commit it to `ctx`.
pub fn rd_quantize_weight(
    w: f64,
    eta: f64,
    grid: &QuantGrid,
    cfg: &RdConfig,
    params: BinarizationParams,
    ctx: &mut ContextSet,
) -> i64 {
    let mut best = 0i64;
    let mut best_cost = f64::INFINITY;
    for k in candidates(w, grid, cfg.search_halfwidth) {
        let d = w - grid.point(k);
        let mut cost = eta * d * d;
        if cfg.lambda > 0.0 {
            cost += cfg.lambda * index_cost(k, params, ctx).bits();
        }
        if cost < best_cost || (cost == best_cost && tie_key(k) < tie_key(best)) {
            best = k;
            best_cost = cost;
        }
    }
    commit_index(best, params, ctx);
    best
}

/// Quantize a layer in scan order. Returns the indices and the context state
/// after the last weight, which equals the state the encoder ends in.
pub fn rd_quantize_layer(
    w: &WeightTensor,
    sigmas: Option<&[f32]>,
    grid: &QuantGrid,
    cfg: &RdConfig,
) -> Result<(QuantIndexTensor, ContextSet), QuantizeError> {
    cfg.validate()?;
    if let Some(s) = sigmas {
        check_sigmas(w.len(), s)?;
    }
    let params = cfg.pricing_params(grid);
    let mut ctx = ContextSet::new(cfg.n_flags, cfg.adaptation_shift);
    let eta_of = |i: usize| match (cfg.eta_mode, sigmas) {
        (EtaMode::FromSigma, Some(s)) => {
            let sigma = s[i] as f64;
            1.0 / (sigma * sigma)
        }
        _ => 1.0,
    };
    let indices = w
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| rd_quantize_weight(x as f64, eta_of(i), grid, cfg, params, &mut ctx) as i32)
        .collect();
    Ok((
        QuantIndexTensor {
            rows: w.rows,
            cols: w.cols,
            indices,
        },
        ctx,
    ))
}

pub fn dequantize(q: &QuantIndexTensor, grid: &QuantGrid) -> Vec<f32> {
    q.indices.iter().map(|&i| grid.point(i as i64) as f32).collect()
}
