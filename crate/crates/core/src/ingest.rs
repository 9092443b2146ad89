//! The `.dcnw` container for uncompressed weights and per-weight standard
//! deviations, and selection of the tensors that get coded.
//!
//! All integers are little-endian.
//!
//! ```text
//! file   := "DCNW" version:u16 entry_count:u32 entry*
//! entry  := name_len:u16 name:[u8; name_len] role:u8 rank:u8 dims:[u32; rank]
//!           data:[f32; product(dims)]          IEEE-754 binary32, row-major
//! role   := 0 weight | 1 sigma | 2 excluded
//! ```
//!
//! A sigma entry belongs to the weight entry with the same name. Names are
//! unique within a role. Weight and sigma entries must have rank 2 or more;
//! biases and normalization parameters are stored as `excluded`.

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use crate::binarizer::{matrixify, BinarizeError};
use crate::tensor::WeightTensor;
use crate::wire::Reader;

pub const MAGIC: [u8; 4] = *b"DCNW";
pub const VERSION: u16 = 1;
pub const MAX_RANK: usize = 8;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {found} at offset {offset}")]
    UnsupportedVersion { offset: usize, found: u16 },
    #[error("unexpected end of data at offset {offset}{}", entry.as_ref().map(|e| format!(" in entry '{e}'")).unwrap_or_default())]
    Truncated { offset: usize, entry: Option<String> },
    #[error("malformed entry at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("duplicate {role} entry '{name}'")]
    DuplicateName { name: String, role: Role },
    #[error("entry '{name}' holds a non-finite value at position {index}")]
    NonFinite { name: String, index: usize },
    #[error("{role} entry '{name}' has rank {rank}; rank-0 and rank-1 tensors must be marked excluded")]
    RankForRole { name: String, role: Role, rank: usize },
    #[error("{count} trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("sigma for '{name}' has shape {sigma:?}, weight has {weight:?}")]
    SigmaShape {
        name: String,
        weight: Vec<usize>,
        sigma: Vec<usize>,
    },
    #[error("entry '{name}': {source}")]
    Matrix {
        name: String,
        #[source]
        source: BinarizeError,
    },
    #[error("entry '{name}' cannot be written: {reason}")]
    Unwritable { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Weight,
    Sigma,
    Excluded,
}

impl Role {
    fn from_byte(b: u8) -> Option<Role> {
        match b {
            0 => Some(Role::Weight),
            1 => Some(Role::Sigma),
            2 => Some(Role::Excluded),
            _ => None,
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            Role::Weight => 0,
            Role::Sigma => 1,
            Role::Excluded => 2,
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Weight => "weight",
            Role::Sigma => "sigma",
            Role::Excluded => "excluded",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, role: Role, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            role,
            shape,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub entries: Vec<TensorEntry>,
}

impl TensorFile {
    pub fn new(entries: Vec<TensorEntry>) -> Self {
        Self { entries }
    }

    pub fn get(&self, name: &str, role: Role) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name && e.role == role)
    }

    /// Checks every invariant the loader enforces.
    pub fn validate(&self) -> Result<(), IngestError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert((e.role, e.name.as_str())) {
                return Err(IngestError::DuplicateName {
                    name: e.name.clone(),
                    role: e.role,
                });
            }
            if e.role != Role::Excluded && e.shape.len() < 2 {
                return Err(IngestError::RankForRole {
                    name: e.name.clone(),
                    role: e.role,
                    rank: e.shape.len(),
                });
            }
            if let Some(index) = e.data.iter().position(|x| !x.is_finite()) {
                return Err(IngestError::NonFinite {
                    name: e.name.clone(),
                    index,
                });
            }
        }
        Ok(())
    }
}

pub fn to_bytes(file: &TensorFile) -> Result<Vec<u8>, IngestError> {
    file.validate()?;
    let unwritable = |e: &TensorEntry, reason: &str| IngestError::Unwritable {
        name: e.name.clone(),
        reason: reason.to_string(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(file.entries.len()).map_err(|_| IngestError::Unwritable {
        name: String::new(),
        reason: "too many entries".into(),
    })?;
    out.extend_from_slice(&count.to_le_bytes());
    for e in &file.entries {
        let name_len = u16::try_from(e.name.len()).map_err(|_| unwritable(e, "name longer than 65535 bytes"))?;
        if e.shape.len() > MAX_RANK {
            return Err(unwritable(e, "rank above 8"));
        }
        if e.shape.iter().product::<usize>() != e.data.len() {
            return Err(unwritable(e, "shape does not match data length"));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.role.to_byte());
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            let d = u32::try_from(d).map_err(|_| unwritable(e, "dimension above u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for x in &e.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<TensorFile, IngestError> {
    let mut r = Reader::new(bytes);
    let truncated = |r: &Reader, entry: Option<&str>| IngestError::Truncated {
        offset: r.pos(),
        entry: entry.map(str::to_string),
    };
    match r.array::<4>() {
        Some(m) if m == MAGIC => {}
        _ => return Err(IngestError::BadMagic { offset: 0 }),
    }
    let version = r.u16().ok_or_else(|| truncated(&r, None))?;
    if version != VERSION {
        return Err(IngestError::UnsupportedVersion {
            offset: 4,
            found: version,
        });
    }
    let count = r.u32().ok_or_else(|| truncated(&r, None))?;
    let mut entries = Vec::with_capacity((count as usize).min(r.remaining() / 4));
    for _ in 0..count {
        let start = r.pos();
        let name_len = r.u16().ok_or_else(|| truncated(&r, None))?;
        let name = r.take(name_len as usize).ok_or_else(|| truncated(&r, None))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| IngestError::Malformed {
            offset: start + 2,
            reason: "entry name is not UTF-8".into(),
        })?;
        let role_at = r.pos();
        let role_byte = r.u8().ok_or_else(|| truncated(&r, Some(&name)))?;
        let role = Role::from_byte(role_byte).ok_or_else(|| IngestError::Malformed {
            offset: role_at,
            reason: format!("unknown role {role_byte}"),
        })?;
        let rank = r.u8().ok_or_else(|| truncated(&r, Some(&name)))? as usize;
        if rank > MAX_RANK {
            return Err(IngestError::Malformed {
                offset: role_at + 1,
                reason: format!("rank {rank} above {MAX_RANK}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32().ok_or_else(|| truncated(&r, Some(&name)))? as usize);
        }
        let byte_len = shape
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= r.remaining())
            .ok_or_else(|| IngestError::Truncated {
                offset: r.pos(),
                entry: Some(name.clone()),
            })?;
        let raw = r.take(byte_len).expect("length checked");
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(TensorEntry {
            name,
            role,
            shape,
            data,
        });
    }
    if r.remaining() > 0 {
        return Err(IngestError::TrailingBytes {
            offset: r.pos(),
            count: r.remaining(),
        });
    }
    let file = TensorFile { entries };
    file.validate()?;
    Ok(file)
}

pub fn load(path: impl AsRef<Path>) -> Result<TensorFile, IngestError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

pub fn save(path: impl AsRef<Path>, file: &TensorFile) -> Result<(), IngestError> {
    let path = path.as_ref();
    let bytes = to_bytes(file)?;
    std::fs::write(path, bytes).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A weight tensor in matrix form with its optional sigma map (same layout).
#[derive(Debug, Clone, PartialEq)]
pub struct CodableLayer {
    pub weight: WeightTensor,
    pub sigma: Option<Vec<f32>>,
}

/// Weight entries in name order, in matrix form, each paired with its sigma
/// entry when one exists.
pub fn select_codable(file: &TensorFile) -> Result<Vec<CodableLayer>, IngestError> {
    let mut weights: Vec<&TensorEntry> = file.entries.iter().filter(|e| e.role == Role::Weight).collect();
    weights.sort_by(|a, b| a.name.cmp(&b.name));
    weights
        .into_iter()
        .map(|e| {
            let sigma = match file.get(&e.name, Role::Sigma) {
                Some(s) if s.shape != e.shape => {
                    return Err(IngestError::SigmaShape {
                        name: e.name.clone(),
                        weight: e.shape.clone(),
                        sigma: s.shape.clone(),
                    })
                }
                Some(s) => Some(s.data.clone()),
                None => None,
            };
            let weight = matrixify(&e.name, &e.shape, e.data.clone()).map_err(|source| IngestError::Matrix {
                name: e.name.clone(),
                source,
            })?;
            Ok(CodableLayer { weight, sigma })
        })
        .collect()
}
