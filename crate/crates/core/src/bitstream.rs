//! The `.dcnb` container: every coded layer of a model with the header fields
//! the decoder needs.
//!
//! All integers are little-endian.
//!
//! ```text
//! file   := "DCNB" version:u16 layer_count:u32 layer*
//! layer  := name_len:u16 name:[u8; name_len]
//!           rank:u8 dims:[u32; rank]
//!           rows:u32 cols:u32
//!           delta:u64        IEEE-754 binary64 bits
//!           s:u32 n_flags:u8 remainder_bits:u8 adaptation_shift:u8
//!           payload_len:u32 payload:[u8; payload_len]
//! ```

use thiserror::Error;

use crate::wire::Reader;

pub const MAGIC: [u8; 4] = *b"DCNB";
pub const VERSION: u16 = 1;
pub const MAX_RANK: usize = 4;
/// Flag counts above this are rejected as corrupt.
pub const MAX_N_FLAGS: u8 = 32;
/// Remainders wider than this could not come from 32-bit indices.
pub const MAX_REMAINDER_BITS: u8 = 31;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitstreamError {
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {found} at offset {offset}")]
    UnsupportedVersion { offset: usize, found: u16 },
    #[error("unexpected end of data at offset {offset}{}", in_layer(.layer))]
    Truncated { offset: usize, layer: Option<String> },
    #[error("layer '{layer}' declares a {declared}-byte payload at offset {offset} but only {available} bytes remain")]
    PayloadLength {
        offset: usize,
        layer: String,
        declared: u32,
        available: usize,
    },
    #[error("invalid header at offset {offset}{}: {reason}", in_layer(.layer))]
    InvalidHeader {
        offset: usize,
        layer: Option<String>,
        reason: String,
    },
    #[error("{count} trailing bytes after the last layer at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("layer name is {len} bytes, limit is 65535")]
    NameTooLong { len: usize },
    #[error("{0} layers exceed the u32 layer count")]
    TooManyLayers(usize),
    #[error("layer '{layer}' is not serializable: {reason}")]
    Unserializable { layer: String, reason: String },
}

fn in_layer(layer: &Option<String>) -> String {
    layer.as_ref().map(|l| format!(" in layer '{l}'")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerHeader {
    pub name: String,
    pub rows: u32,
    pub cols: u32,
    pub orig_shape: Vec<u32>,
    pub delta: f64,
    pub s: u32,
    pub n_flags: u8,
    pub remainder_bits: u8,
    pub adaptation_shift: u8,
}

impl LayerHeader {
    fn check(&self) -> Result<(), String> {
        if self.orig_shape.is_empty() || self.orig_shape.len() > MAX_RANK {
            return Err(format!("rank {} outside 1..={MAX_RANK}", self.orig_shape.len()));
        }
        let product = self
            .orig_shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        if product != Some(self.rows as u64 * self.cols as u64) {
            return Err(format!(
                "shape {:?} does not match {}x{} matrix",
                self.orig_shape, self.rows, self.cols
            ));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(format!("step size {} is not positive", self.delta));
        }
        if self.n_flags > MAX_N_FLAGS {
            return Err(format!("flag count {} above {MAX_N_FLAGS}", self.n_flags));
        }
        if self.remainder_bits > MAX_REMAINDER_BITS {
            return Err(format!(
                "remainder width {} above {MAX_REMAINDER_BITS}",
                self.remainder_bits
            ));
        }
        if !(1..=14).contains(&self.adaptation_shift) {
            return Err(format!("adaptation shift {} outside 1..=14", self.adaptation_shift));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedLayer {
    pub header: LayerHeader,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelBitstream {
    pub layers: Vec<EncodedLayer>,
}

impl ModelBitstream {
    pub fn new(layers: Vec<EncodedLayer>) -> Self {
        Self { layers }
    }

    pub fn payload_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.payload.len()).sum()
    }
}

pub fn serialize(model: &ModelBitstream) -> Result<Vec<u8>, BitstreamError> {
    let count = u32::try_from(model.layers.len()).map_err(|_| BitstreamError::TooManyLayers(model.layers.len()))?;
    let mut out = Vec::with_capacity(10 + model.payload_bytes() + 64 * model.layers.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for layer in &model.layers {
        let h = &layer.header;
        let name_len = u16::try_from(h.name.len()).map_err(|_| BitstreamError::NameTooLong { len: h.name.len() })?;
        let unserializable = |reason: String| BitstreamError::Unserializable {
            layer: h.name.clone(),
            reason,
        };
        h.check().map_err(unserializable)?;
        let payload_len = u32::try_from(layer.payload.len())
            .map_err(|_| unserializable(format!("{}-byte payload", layer.payload.len())))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(h.name.as_bytes());
        out.push(h.orig_shape.len() as u8);
        for d in &h.orig_shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&h.rows.to_le_bytes());
        out.extend_from_slice(&h.cols.to_le_bytes());
        out.extend_from_slice(&h.delta.to_bits().to_le_bytes());
        out.extend_from_slice(&h.s.to_le_bytes());
        out.push(h.n_flags);
        out.push(h.remainder_bits);
        out.push(h.adaptation_shift);
        out.extend_from_slice(&payload_len.to_le_bytes());
        out.extend_from_slice(&layer.payload);
    }
    Ok(out)
}

pub fn parse(bytes: &[u8]) -> Result<ModelBitstream, BitstreamError> {
    let mut r = Reader::new(bytes);
    let truncated = |r: &Reader, layer: Option<&str>| BitstreamError::Truncated {
        offset: r.pos(),
        layer: layer.map(str::to_string),
    };
    match r.array::<4>() {
        Some(m) if m == MAGIC => {}
        _ => return Err(BitstreamError::BadMagic { offset: 0 }),
    }
    let version = r.u16().ok_or_else(|| truncated(&r, None))?;
    if version != VERSION {
        return Err(BitstreamError::UnsupportedVersion {
            offset: 4,
            found: version,
        });
    }
    let count = r.u32().ok_or_else(|| truncated(&r, None))?;
    let mut layers = Vec::with_capacity((count as usize).min(r.remaining() / 24));
    for _ in 0..count {
        let start = r.pos();
        let name_len = r.u16().ok_or_else(|| truncated(&r, None))?;
        let name_bytes = r.take(name_len as usize).ok_or_else(|| truncated(&r, None))?;
        let name = String::from_utf8(name_bytes.to_vec()).map_err(|_| BitstreamError::InvalidHeader {
            offset: start + 2,
            layer: None,
            reason: "layer name is not UTF-8".into(),
        })?;
        let lname = Some(name.as_str());
        let rank = r.u8().ok_or_else(|| truncated(&r, lname))? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(BitstreamError::InvalidHeader {
                offset: r.pos() - 1,
                layer: Some(name),
                reason: format!("rank {rank} outside 1..={MAX_RANK}"),
            });
        }
        let mut orig_shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            orig_shape.push(r.u32().ok_or_else(|| truncated(&r, lname))?);
        }
        let rows = r.u32().ok_or_else(|| truncated(&r, lname))?;
        let cols = r.u32().ok_or_else(|| truncated(&r, lname))?;
        let delta = f64::from_bits(r.u64().ok_or_else(|| truncated(&r, lname))?);
        let s = r.u32().ok_or_else(|| truncated(&r, lname))?;
        let n_flags = r.u8().ok_or_else(|| truncated(&r, lname))?;
        let remainder_bits = r.u8().ok_or_else(|| truncated(&r, lname))?;
        let adaptation_shift = r.u8().ok_or_else(|| truncated(&r, lname))?;
        let header = LayerHeader {
            name,
            rows,
            cols,
            orig_shape,
            delta,
            s,
            n_flags,
            remainder_bits,
            adaptation_shift,
        };
        header.check().map_err(|reason| BitstreamError::InvalidHeader {
            offset: start,
            layer: Some(header.name.clone()),
            reason,
        })?;
        let len_offset = r.pos();
        let payload_len = r.u32().ok_or_else(|| truncated(&r, Some(&header.name)))?;
        let available = r.remaining();
        let payload = r
            .take(payload_len as usize)
            .ok_or_else(|| BitstreamError::PayloadLength {
                offset: len_offset,
                layer: header.name.clone(),
                declared: payload_len,
                available,
            })?
            .to_vec();
        layers.push(EncodedLayer { header, payload });
    }
    if r.remaining() > 0 {
        return Err(BitstreamError::TrailingBytes {
            offset: r.pos(),
            count: r.remaining(),
        });
    }
    Ok(ModelBitstream { layers })
}
