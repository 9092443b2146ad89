//! Size, sparsity and distortion measures, plus a scalar Huffman baseline.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("original size is zero")]
    ZeroOriginal,
    #[error("empty tensor")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionRatio {
    /// Compressed size as a percentage of the original.
    pub percent: f64,
    /// Original size over compressed size.
    pub factor: f64,
}

pub fn compression_ratio(original_bytes: f64, compressed_bytes: f64) -> Result<CompressionRatio, MetricsError> {
    if original_bytes <= 0.0 {
        return Err(MetricsError::ZeroOriginal);
    }
    Ok(CompressionRatio {
        percent: compressed_bytes / original_bytes * 100.0,
        factor: original_bytes / compressed_bytes,
    })
}

/// Fraction of nonzero indices.
pub fn sparsity(indices: &[i32]) -> Result<f64, MetricsError> {
    if indices.is_empty() {
        return Err(MetricsError::Empty);
    }
    let nonzero = indices.iter().filter(|&&i| i != 0).count();
    Ok(nonzero as f64 / indices.len() as f64)
}

/// `sum eta_i (w_i - delta * I_i)^2`; `eta` of `None` means all ones.
pub fn weighted_distortion(w: &[f32], indices: &[i32], delta: f64, eta: Option<&[f64]>) -> Result<f64, MetricsError> {
    if w.len() != indices.len() {
        return Err(MetricsError::LengthMismatch(w.len(), indices.len()));
    }
    if let Some(e) = eta {
        if e.len() != w.len() {
            return Err(MetricsError::LengthMismatch(w.len(), e.len()));
        }
    }
    Ok(w.iter()
        .zip(indices)
        .enumerate()
        .map(|(i, (&x, &k))| {
            let d = x as f64 - delta * k as f64;
            eta.map_or(1.0, |e| e[i]) * d * d
        })
        .sum())
}

fn histogram(indices: &[i32]) -> HashMap<i32, u64> {
    let mut counts = HashMap::new();
    for &i in indices {
        *counts.entry(i).or_insert(0u64) += 1;
    }
    counts
}

/// First-order entropy of the index distribution, bits per symbol.
pub fn empirical_entropy(indices: &[i32]) -> Result<f64, MetricsError> {
    if indices.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = indices.len() as f64;
    let mut counts: Vec<u64> = histogram(indices).into_values().collect();
    counts.sort_unstable();
    Ok(counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum())
}

/// Header of the code table: the number of distinct symbols.
pub const HUFFMAN_TABLE_HEADER_BITS: u64 = 32;
/// Per distinct symbol: a 32-bit symbol value and an 8-bit code length.
pub const HUFFMAN_TABLE_ENTRY_BITS: u64 = 32 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct HuffmanReport {
    /// Code length per symbol, sorted by symbol.
    pub code_lengths: Vec<(i32, u32)>,
    pub payload_bits: u64,
    pub table_bits: u64,
}

impl HuffmanReport {
    pub fn total_bits(&self) -> u64 {
        self.payload_bits + self.table_bits
    }
}

/// Optimal prefix-code lengths for `counts` (a lone symbol gets one bit).
pub fn huffman_code_lengths(counts: &[u64]) -> Vec<u32> {
    match counts.len() {
        0 => return vec![],
        1 => return vec![1],
        _ => {}
    }
    // nodes: leaves 0..n, internal nodes appended; parent links give depths
    let n = counts.len();
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        counts.iter().enumerate().map(|(i, &c)| Reverse((c, i))).collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    (0..n)
        .map(|leaf| {
            let mut depth = 0;
            let mut node = leaf;
            while parent[node] != usize::MAX {
                node = parent[node];
                depth += 1;
            }
            depth
        })
        .collect()
}

/// Size of `indices` under a scalar Huffman code for their empirical
/// distribution, plus the cost of transmitting the code table.
pub fn huffman_baseline(indices: &[i32]) -> Result<HuffmanReport, MetricsError> {
    if indices.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts: Vec<(i32, u64)> = histogram(indices).into_iter().collect();
    counts.sort_unstable();
    let lengths = huffman_code_lengths(&counts.iter().map(|&(_, c)| c).collect::<Vec<_>>());
    let payload_bits = counts.iter().zip(&lengths).map(|(&(_, c), &l)| c * l as u64).sum();
    Ok(HuffmanReport {
        code_lengths: counts.iter().zip(&lengths).map(|(&(s, _), &l)| (s, l)).collect(),
        payload_bits,
        table_bits: HUFFMAN_TABLE_HEADER_BITS + HUFFMAN_TABLE_ENTRY_BITS * counts.len() as u64,
    })
}
