//! Binary arithmetic coding engine.
//!
//! A bitwise interval coder with 32-bit precision and carry resolution through
//! pending (follow) bits. Regular bins are coded against a probability-of-one
//! given in 15-bit fixed point; bypass bins split the interval in half.
//! Output is packed most-significant bit first.

use thiserror::Error;

/// Register width of the coder.
pub const PRECISION: u32 = 32;
pub const FULL: u64 = 1 << PRECISION;
pub const HALF: u64 = FULL >> 1;
pub const QUARTER: u64 = FULL >> 2;
pub const THREE_QUARTERS: u64 = HALF + QUARTER;

/// Fixed-point scale of probabilities: `p1 / PROB_ONE` is the probability of a one.
pub const PROB_BITS: u32 = 15;
pub const PROB_ONE: u32 = 1 << PROB_BITS;
pub const PROB_MIN: u16 = 1;
pub const PROB_MAX: u16 = (PROB_ONE - 1) as u16;
pub const PROB_HALF: u16 = (PROB_ONE / 2) as u16;

/// Zero bits the decoder may read past the end of a payload before it reports
/// an overread. The minimal flush leaves the tail of the value window unset.
const MAX_PADDING_BITS: u64 = PRECISION as u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoderError {
    #[error("encoder already terminated")]
    Terminated,
    #[error("decoder read past the end of a {len}-byte payload")]
    Overread { len: usize },
}

/// Clamp a fixed-point probability into the codable range.
#[inline]
pub fn clamp_prob(p1: u32) -> u16 {
    p1.clamp(PROB_MIN as u32, PROB_MAX as u32) as u16
}

/// Convert a real probability-of-one to clamped 15-bit fixed point.
pub fn prob_from_f64(p: f64) -> u16 {
    clamp_prob((p * PROB_ONE as f64).round() as u32)
}

/// Width of the sub-interval assigned to a one.
#[inline]
fn split(range: u64, p1: u16) -> u64 {
    (range * p1 as u64) >> PROB_BITS
}

#[derive(Debug, Default, Clone)]
struct BitSink {
    bytes: Vec<u8>,
    acc: u8,
    filled: u8,
}

impl BitSink {
    #[inline]
    fn push(&mut self, bit: bool) {
        self.acc = (self.acc << 1) | bit as u8;
        self.filled += 1;
        if self.filled == 8 {
            self.bytes.push(self.acc);
            self.acc = 0;
            self.filled = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push(self.acc << (8 - self.filled));
        }
        self.bytes
    }

    fn bit_len(&self) -> u64 {
        self.bytes.len() as u64 * 8 + self.filled as u64
    }
}

#[derive(Debug, Clone)]
pub struct ArithEncoder {
    low: u64,
    range: u64,
    pending_bits: u64,
    output: BitSink,
    terminated: bool,
}

impl Default for ArithEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: FULL,
            pending_bits: 0,
            output: BitSink::default(),
            terminated: false,
        }
    }

    /// Encode one bin with probability-of-one `p1` (15-bit fixed point).
    pub fn encode_bin(&mut self, bin: bool, p1: u16) -> Result<(), CoderError> {
        if self.terminated {
            return Err(CoderError::Terminated);
        }
        let ones = split(self.range, clamp_prob(p1 as u32));
        if bin {
            self.range = ones;
        } else {
            self.low += ones;
            self.range -= ones;
        }
        self.renormalize();
        Ok(())
    }

    /// Encode one equiprobable bin.
    pub fn encode_bypass(&mut self, bin: bool) -> Result<(), CoderError> {
        if self.terminated {
            return Err(CoderError::Terminated);
        }
        let ones = self.range >> 1;
        if bin {
            self.range = ones;
        } else {
            self.low += ones;
            self.range -= ones;
        }
        self.renormalize();
        Ok(())
    }

    /// Encode the low `width` bits of `value`, most significant first.
    pub fn encode_bypass_bits(&mut self, value: u64, width: u32) -> Result<(), CoderError> {
        for shift in (0..width).rev() {
            self.encode_bypass((value >> shift) & 1 == 1)?;
        }
        Ok(())
    }

    /// Flush the interval state and return the payload.
    ///
    /// Emits two disambiguating bits (plus any pending bits) and zero-pads to
    /// a byte boundary. The decoder supplies zeros past the end.
    pub fn terminate(&mut self) -> Result<Vec<u8>, CoderError> {
        if self.terminated {
            return Err(CoderError::Terminated);
        }
        self.terminated = true;
        self.pending_bits += 1;
        let bit = self.low >= QUARTER;
        self.emit(bit);
        Ok(std::mem::take(&mut self.output).finish())
    }

    /// Bits written so far, excluding pending bits and termination.
    pub fn bits_written(&self) -> u64 {
        self.output.bit_len()
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn range(&self) -> u64 {
        self.range
    }

    #[inline]
    fn emit(&mut self, bit: bool) {
        self.output.push(bit);
        while self.pending_bits > 0 {
            self.output.push(!bit);
            self.pending_bits -= 1;
        }
    }

    #[inline]
    fn renormalize(&mut self) {
        loop {
            if self.low + self.range <= HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
            } else if self.low >= QUARTER && self.low + self.range <= THREE_QUARTERS {
                self.pending_bits += 1;
                self.low -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.range <<= 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArithDecoder<'a> {
    input: &'a [u8],
    bit_pos: u64,
    low: u64,
    range: u64,
    value: u64,
}

impl<'a> ArithDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self, CoderError> {
        let mut dec = Self {
            input,
            bit_pos: 0,
            low: 0,
            range: FULL,
            value: 0,
        };
        for _ in 0..PRECISION {
            dec.value = (dec.value << 1) | dec.next_bit()? as u64;
        }
        Ok(dec)
    }

    pub fn decode_bin(&mut self, p1: u16) -> Result<bool, CoderError> {
        let ones = split(self.range, clamp_prob(p1 as u32));
        self.finish_decision(ones)
    }

    pub fn decode_bypass(&mut self) -> Result<bool, CoderError> {
        let ones = self.range >> 1;
        self.finish_decision(ones)
    }

    pub fn decode_bypass_bits(&mut self, width: u32) -> Result<u64, CoderError> {
        let mut value = 0;
        for _ in 0..width {
            value = (value << 1) | self.decode_bypass()? as u64;
        }
        Ok(value)
    }

    #[inline]
    fn finish_decision(&mut self, ones: u64) -> Result<bool, CoderError> {
        // Corrupt input can push value outside the interval; wrapping keeps
        // decoding total (garbage in, garbage out) instead of panicking.
        let bin = self.value.wrapping_sub(self.low) < ones;
        if bin {
            self.range = ones;
        } else {
            self.low += ones;
            self.range -= ones;
        }
        self.renormalize()?;
        Ok(bin)
    }

    #[inline]
    fn next_bit(&mut self) -> Result<bool, CoderError> {
        let pos = self.bit_pos;
        self.bit_pos += 1;
        let byte = (pos / 8) as usize;
        match self.input.get(byte) {
            Some(b) => Ok((b >> (7 - pos % 8)) & 1 == 1),
            None if pos < self.input.len() as u64 * 8 + MAX_PADDING_BITS => Ok(false),
            None => Err(CoderError::Overread { len: self.input.len() }),
        }
    }

    #[inline]
    fn renormalize(&mut self) -> Result<(), CoderError> {
        loop {
            if self.low + self.range <= HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.value = self.value.wrapping_sub(HALF);
            } else if self.low >= QUARTER && self.low + self.range <= THREE_QUARTERS {
                self.low -= QUARTER;
                self.value = self.value.wrapping_sub(QUARTER);
            } else {
                break;
            }
            self.low <<= 1;
            self.range <<= 1;
            self.value = ((self.value << 1) | self.next_bit()? as u64) & (FULL - 1);
        }
        Ok(())
    }
}
