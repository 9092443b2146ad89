//! Binarization of quantization indices and the tensor-level coding loop.
//!
//! Each index becomes a significance bin, then (if nonzero) a sign bin, a
//! truncated-unary run of greater-than flags, and finally a fixed-length
//! remainder when the magnitude exceeds the flag count. Significance, sign and
//! flag bins are regular bins with one context model each; remainder bins are
//! bypass bins.

use thiserror::Error;

use crate::bacore::{ArithDecoder, ArithEncoder, CoderError};
use crate::ctxmodel::{BitCost, ContextSet};
use crate::tensor::WeightTensor;

pub const DEFAULT_N_FLAGS: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BinarizeError {
    #[error("index {value} exceeds the codable magnitude {max}")]
    MagnitudeOverflow { value: i64, max: u64 },
    #[error("index tensor has {len} entries, expected {rows}x{cols}")]
    DimsMismatch { rows: usize, cols: usize, len: usize },
    #[error("context set has {found} flag models, expected {expected}")]
    ContextMismatch { expected: u8, found: u8 },
    #[error("cannot convert a rank-{0} tensor to matrix form")]
    UnsupportedRank(usize),
    #[error("shape {shape:?} does not match {len} values")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error(transparent)]
    Coder(#[from] CoderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinarizationParams {
    pub n_flags: u8,
    pub remainder_bits: u8,
}

impl BinarizationParams {
    pub fn new(n_flags: u8, remainder_bits: u8) -> Self {
        Self {
            n_flags,
            remainder_bits,
        }
    }

    /// Smallest params with `n_flags` flags that can code every magnitude up to `max_abs`.
    pub fn covering(n_flags: u8, max_abs: u64) -> Self {
        Self {
            n_flags,
            remainder_bits: remainder_bits_for(n_flags, max_abs),
        }
    }

    /// Largest codable magnitude: `n + 2^remainder_bits`.
    pub fn max_magnitude(&self) -> u64 {
        self.n_flags as u64 + (1u64 << self.remainder_bits)
    }

    pub fn check(&self, value: i64) -> Result<(), BinarizeError> {
        let max = self.max_magnitude();
        if value.unsigned_abs() > max {
            return Err(BinarizeError::MagnitudeOverflow { value, max });
        }
        Ok(())
    }

    /// Number of bins `value` binarizes to.
    pub fn bin_count(&self, value: i64) -> usize {
        let m = value.unsigned_abs();
        if m == 0 {
            return 1;
        }
        let n = self.n_flags as u64;
        2 + m.min(n) as usize + if m > n { self.remainder_bits as usize } else { 0 }
    }
}

/// Minimal remainder width covering magnitudes up to `max_abs`.
pub fn remainder_bits_for(n_flags: u8, max_abs: u64) -> u8 {
    let n = n_flags as u64;
    if max_abs <= n {
        return 0;
    }
    let largest = max_abs - n - 1;
    (u64::BITS - largest.leading_zeros()) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Sig,
    Sign,
    /// Greater-than-k flag, k starting at 1.
    Gr(u8),
    Remainder,
}

impl Channel {
    pub fn is_regular(self) -> bool {
        !matches!(self, Channel::Remainder)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bin {
    pub channel: Channel,
    pub value: bool,
}

/// Walk the bin string of `value` without allocating. The caller has checked
/// the magnitude bound.
#[inline]
pub fn for_each_bin(value: i64, params: BinarizationParams, mut f: impl FnMut(Channel, bool)) {
    let m = value.unsigned_abs();
    f(Channel::Sig, m != 0);
    if m == 0 {
        return;
    }
    f(Channel::Sign, value < 0);
    for k in 1..=params.n_flags {
        let greater = m > k as u64;
        f(Channel::Gr(k), greater);
        if !greater {
            return;
        }
    }
    let rem = m - params.n_flags as u64 - 1;
    for shift in (0..params.remainder_bits).rev() {
        f(Channel::Remainder, (rem >> shift) & 1 == 1);
    }
}

pub fn binarize_index(value: i64, params: BinarizationParams) -> Result<Vec<Bin>, BinarizeError> {
    params.check(value)?;
    let mut bins = Vec::with_capacity(params.bin_count(value));
    for_each_bin(value, params, |channel, value| bins.push(Bin { channel, value }));
    Ok(bins)
}

/// Code length of `value` under the current context states. Bypass bins cost
/// exactly one bit. Within one bin string every model is used at most once,
/// so pricing without intermediate updates is exact.
#[inline]
pub fn index_cost(value: i64, params: BinarizationParams, ctx: &ContextSet) -> BitCost {
    let mut cost = BitCost(0);
    for_each_bin(value, params, |channel, bin| {
        cost += match channel {
            Channel::Sig => ctx.sig.bit_cost(bin),
            Channel::Sign => ctx.sign.bit_cost(bin),
            Channel::Gr(k) => ctx.gr[k as usize - 1].bit_cost(bin),
            Channel::Remainder => BitCost::ONE_BIT,
        }
    });
    cost
}

/// Apply the regular bins of `value` to the context models.
#[inline]
pub fn commit_index(value: i64, params: BinarizationParams, ctx: &mut ContextSet) {
    for_each_bin(value, params, |channel, bin| match channel {
        Channel::Sig => ctx.sig.update(bin),
        Channel::Sign => ctx.sign.update(bin),
        Channel::Gr(k) => ctx.gr[k as usize - 1].update(bin),
        Channel::Remainder => {}
    });
}

/// Quantization indices of one layer in matrix form, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantIndexTensor {
    pub rows: usize,
    pub cols: usize,
    pub indices: Vec<i32>,
}

impl QuantIndexTensor {
    pub fn new(rows: usize, cols: usize, indices: Vec<i32>) -> Result<Self, BinarizeError> {
        if rows.checked_mul(cols) != Some(indices.len()) {
            return Err(BinarizeError::DimsMismatch {
                rows,
                cols,
                len: indices.len(),
            });
        }
        Ok(Self { rows, cols, indices })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indices: vec![0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_abs(&self) -> u64 {
        self.indices.iter().map(|&i| i.unsigned_abs() as u64).max().unwrap_or(0)
    }
}

fn check_context(params: BinarizationParams, ctx: &ContextSet) -> Result<(), BinarizeError> {
    if ctx.n_flags() != params.n_flags {
        return Err(BinarizeError::ContextMismatch {
            expected: params.n_flags,
            found: ctx.n_flags(),
        });
    }
    Ok(())
}

fn encode_index(
    value: i64,
    params: BinarizationParams,
    ctx: &mut ContextSet,
    enc: &mut ArithEncoder,
) -> Result<(), CoderError> {
    let mut result = Ok(());
    for_each_bin(value, params, |channel, bin| {
        if result.is_err() {
            return;
        }
        let model = match channel {
            Channel::Sig => &mut ctx.sig,
            Channel::Sign => &mut ctx.sign,
            Channel::Gr(k) => &mut ctx.gr[k as usize - 1],
            Channel::Remainder => {
                result = enc.encode_bypass(bin);
                return;
            }
        };
        result = enc.encode_bin(bin, model.p1());
        model.update(bin);
    });
    result
}

/// Code every index of `q` in row-major order.
pub fn encode_tensor(
    q: &QuantIndexTensor,
    params: BinarizationParams,
    ctx: &mut ContextSet,
    enc: &mut ArithEncoder,
) -> Result<(), BinarizeError> {
    check_context(params, ctx)?;
    if let Some(&bad) = q
        .indices
        .iter()
        .find(|&&i| i.unsigned_abs() as u64 > params.max_magnitude())
    {
        return Err(BinarizeError::MagnitudeOverflow {
            value: bad as i64,
            max: params.max_magnitude(),
        });
    }
    for &i in &q.indices {
        encode_index(i as i64, params, ctx, enc)?;
    }
    Ok(())
}

fn decode_index(
    params: BinarizationParams,
    ctx: &mut ContextSet,
    dec: &mut ArithDecoder<'_>,
) -> Result<i64, CoderError> {
    let sig = dec.decode_bin(ctx.sig.p1())?;
    ctx.sig.update(sig);
    if !sig {
        return Ok(0);
    }
    let negative = dec.decode_bin(ctx.sign.p1())?;
    ctx.sign.update(negative);
    let mut magnitude = 1u64;
    let mut exhausted = true;
    for model in ctx.gr.iter_mut() {
        let greater = dec.decode_bin(model.p1())?;
        model.update(greater);
        if !greater {
            exhausted = false;
            break;
        }
        magnitude += 1;
    }
    if exhausted {
        // all n flags set: magnitude is n + 1 + remainder
        magnitude += dec.decode_bypass_bits(params.remainder_bits as u32)?;
    }
    let m = magnitude as i64;
    Ok(if negative { -m } else { m })
}

pub fn decode_tensor(
    rows: usize,
    cols: usize,
    params: BinarizationParams,
    ctx: &mut ContextSet,
    dec: &mut ArithDecoder<'_>,
) -> Result<QuantIndexTensor, BinarizeError> {
    check_context(params, ctx)?;
    let len = rows
        .checked_mul(cols)
        .ok_or(BinarizeError::DimsMismatch { rows, cols, len: 0 })?;
    // decoding consumes input for every index, so a bogus size fails on overread
    let mut indices = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        let v = decode_index(params, ctx, dec)?;
        let v = i32::try_from(v).map_err(|_| BinarizeError::MagnitudeOverflow {
            value: v,
            max: i32::MAX as u64,
        })?;
        indices.push(v);
    }
    Ok(QuantIndexTensor { rows, cols, indices })
}

/// Bring a rank-2 or rank-4 tensor into matrix form.
///
/// A convolution kernel `(out, in, kh, kw)` becomes `(out, in * kh * kw)` with
/// `in` outermost and `kw` innermost within each row, which leaves the
/// row-major buffer unchanged.
pub fn matrixify(name: &str, shape: &[usize], data: Vec<f32>) -> Result<WeightTensor, BinarizeError> {
    let (rows, cols) = match *shape {
        [r, c] => (r, c),
        [o, i, kh, kw] => (o, i * kh * kw),
        _ => return Err(BinarizeError::UnsupportedRank(shape.len())),
    };
    if rows * cols != data.len() {
        return Err(BinarizeError::ShapeMismatch {
            shape: shape.to_vec(),
            len: data.len(),
        });
    }
    Ok(WeightTensor {
        name: name.to_string(),
        orig_shape: shape.to_vec(),
        rows,
        cols,
        data,
    })
}

/// Flat position of kernel element `(o, i, kh, kw)` as `(row, col)` in matrix form.
pub fn kernel_position(shape: [usize; 4], o: usize, i: usize, kh: usize, kw: usize) -> (usize, usize) {
    let [_, _, h, w] = shape;
    (o, (i * h + kh) * w + kw)
}
