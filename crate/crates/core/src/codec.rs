//! Model-level pipeline: quantize and code every layer, decode a container
//! back to weights, and sweep the grid coarseness.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use thiserror::Error;

use crate::bacore::{ArithDecoder, ArithEncoder, CoderError};
use crate::binarizer::{decode_tensor, encode_tensor, BinarizationParams, BinarizeError, QuantIndexTensor};
use crate::bitstream::{self, BitstreamError, EncodedLayer, LayerHeader, ModelBitstream};
use crate::ctxmodel::ContextSet;
use crate::ingest::{select_codable, CodableLayer, IngestError, Role, TensorEntry, TensorFile};
use crate::metrics::{self, MetricsError};
use crate::quantizer::{
    build_grid, dequantize, rd_quantize_layer, EtaMode, QuantGrid, QuantizeError, RdConfig, WeightStats,
};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Bitstream(#[from] BitstreamError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    Binarize(#[from] BinarizeError),
    #[error(transparent)]
    Coder(#[from] CoderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("layer '{name}': {source}")]
    Layer {
        name: String,
        #[source]
        source: Box<CodecError>,
    },
    #[error("empty S range")]
    EmptyRange,
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl CodecError {
    fn in_layer(name: &str, err: impl Into<CodecError>) -> CodecError {
        CodecError::Layer {
            name: name.to_string(),
            source: Box::new(err.into()),
        }
    }

    pub fn is_invariant_violation(&self) -> bool {
        match self {
            CodecError::Invariant(_) => true,
            CodecError::Layer { source, .. } => source.is_invariant_violation(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeOptions {
    pub rd: RdConfig,
    pub s: u32,
    /// Stand-in for the smallest deviation when a layer has no sigma map.
    pub grid_floor: Option<f64>,
    pub threads: usize,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            rd: RdConfig::default(),
            s: 64,
            grid_floor: None,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub delta: f64,
    pub sigma_min: f64,
    pub s: u32,
    pub n_flags: u8,
    pub remainder_bits: u8,
    pub nonzero_fraction: f64,
    pub payload_bytes: usize,
    pub bits_per_weight: f64,
    /// Payload as a percentage of the 32-bit float original.
    pub ratio_percent: f64,
    /// Sum of eta-weighted squared errors.
    pub distortion: f64,
    pub mse: f64,
    pub entropy_bits: f64,
    pub huffman_bits: u64,
}

impl LayerReport {
    pub fn record(&self) -> String {
        format!(
            "record=layer name={:?} rows={} cols={} delta={:e} sigma_min={:e} s={} n_flags={} remainder_bits={} \
             nonzero={:.6} payload_bytes={} bits_per_weight={:.6} ratio_percent={:.4} distortion={:e} mse={:e} \
             entropy_bits={:.6} huffman_bits={}",
            self.name,
            self.rows,
            self.cols,
            self.delta,
            self.sigma_min,
            self.s,
            self.n_flags,
            self.remainder_bits,
            self.nonzero_fraction,
            self.payload_bytes,
            self.bits_per_weight,
            self.ratio_percent,
            self.distortion,
            self.mse,
            self.entropy_bits,
            self.huffman_bits,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub layers: Vec<LayerReport>,
    pub weights: usize,
    pub container_bytes: usize,
    pub original_bytes: usize,
    pub ratio_percent: f64,
    pub distortion: f64,
}

impl ModelReport {
    /// One `name=value` record per layer, then the model total.
    pub fn records(&self) -> String {
        let mut out = String::new();
        for l in &self.layers {
            out.push_str(&l.record());
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "record=model layers={} weights={} original_bytes={} container_bytes={} ratio_percent={:.4} \
             bits_per_weight={:.6} distortion={:e}",
            self.layers.len(),
            self.weights,
            self.original_bytes,
            self.container_bytes,
            self.ratio_percent,
            if self.weights > 0 {
                self.container_bytes as f64 * 8.0 / self.weights as f64
            } else {
                0.0
            },
            self.distortion,
        );
        out
    }
}

/// Everything produced for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutcome {
    pub encoded: EncodedLayer,
    pub indices: QuantIndexTensor,
    pub grid: QuantGrid,
    pub report: LayerReport,
}

/// Code a quantized layer and return its payload. The final context state must
/// equal `trace` when one is given.
pub fn code_indices(
    q: &QuantIndexTensor,
    params: BinarizationParams,
    adaptation_shift: u8,
    trace: Option<&ContextSet>,
) -> Result<Vec<u8>, CodecError> {
    let mut ctx = ContextSet::new(params.n_flags, adaptation_shift);
    let mut enc = ArithEncoder::new();
    encode_tensor(q, params, &mut ctx, &mut enc)?;
    if let Some(t) = trace {
        if *t != ctx {
            return Err(CodecError::Invariant(
                "quantizer context trace differs from the encoder's".into(),
            ));
        }
    }
    Ok(enc.terminate()?)
}

pub fn encode_layer(layer: &CodableLayer, opts: &EncodeOptions) -> Result<LayerOutcome, CodecError> {
    let w = &layer.weight;
    let run = || -> Result<LayerOutcome, CodecError> {
        let sigma = layer.sigma.as_deref();
        let stats = WeightStats::of_layer(w, sigma, opts.grid_floor)?;
        let grid = build_grid(stats, opts.s);
        let (q, trace) = rd_quantize_layer(w, sigma, &grid, &opts.rd)?;
        let params = BinarizationParams::covering(opts.rd.n_flags, q.max_abs());
        let payload = code_indices(&q, params, opts.rd.adaptation_shift, Some(&trace))?;

        let eta: Option<Vec<f64>> = match (opts.rd.eta_mode, sigma) {
            (EtaMode::FromSigma, Some(s)) => Some(s.iter().map(|&x| 1.0 / (x as f64 * x as f64)).collect()),
            _ => None,
        };
        let n = w.len().max(1) as f64;
        let distortion = metrics::weighted_distortion(&w.data, &q.indices, grid.delta, eta.as_deref())?;
        let mse = metrics::weighted_distortion(&w.data, &q.indices, grid.delta, None)? / n;
        let (nonzero_fraction, entropy_bits, huffman_bits) = if q.is_empty() {
            (0.0, 0.0, 0)
        } else {
            (
                metrics::sparsity(&q.indices)?,
                metrics::empirical_entropy(&q.indices)?,
                metrics::huffman_baseline(&q.indices)?.total_bits(),
            )
        };
        let report = LayerReport {
            name: w.name.clone(),
            rows: w.rows,
            cols: w.cols,
            delta: grid.delta,
            sigma_min: stats.sigma_min,
            s: opts.s,
            n_flags: params.n_flags,
            remainder_bits: params.remainder_bits,
            nonzero_fraction,
            payload_bytes: payload.len(),
            bits_per_weight: payload.len() as f64 * 8.0 / n,
            ratio_percent: payload.len() as f64 / (n * 4.0) * 100.0,
            distortion,
            mse,
            entropy_bits,
            huffman_bits,
        };
        let dim = |x: usize| u32::try_from(x).map_err(|_| CodecError::Invariant(format!("dimension {x} exceeds u32")));
        let header = LayerHeader {
            name: w.name.clone(),
            rows: dim(w.rows)?,
            cols: dim(w.cols)?,
            orig_shape: w.orig_shape.iter().map(|&d| dim(d)).collect::<Result<_, _>>()?,
            delta: grid.delta,
            s: opts.s,
            n_flags: params.n_flags,
            remainder_bits: params.remainder_bits,
            adaptation_shift: opts.rd.adaptation_shift,
        };
        Ok(LayerOutcome {
            encoded: EncodedLayer { header, payload },
            indices: q,
            grid,
            report,
        })
    };
    run().map_err(|e| CodecError::in_layer(&w.name, e))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, CodecError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CodecError::ThreadPool(e.to_string()))
}

/// Encode every codable layer of `layers`. Output order follows input order
/// whatever the thread count.
pub fn encode_layers(layers: &[CodableLayer], opts: &EncodeOptions) -> Result<Vec<LayerOutcome>, CodecError> {
    opts.rd.validate()?;
    if opts.threads <= 1 {
        return layers.iter().map(|l| encode_layer(l, opts)).collect();
    }
    pool(opts.threads)?.install(|| layers.par_iter().map(|l| encode_layer(l, opts)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedModel {
    pub bitstream: ModelBitstream,
    pub bytes: Vec<u8>,
    pub indices: Vec<QuantIndexTensor>,
    pub report: ModelReport,
}

pub fn encode_model(file: &TensorFile, opts: &EncodeOptions) -> Result<EncodedModel, CodecError> {
    let layers = select_codable(file)?;
    encode_codable(&layers, opts)
}

pub fn encode_codable(layers: &[CodableLayer], opts: &EncodeOptions) -> Result<EncodedModel, CodecError> {
    let outcomes = encode_layers(layers, opts)?;
    let mut encoded = Vec::with_capacity(outcomes.len());
    let mut indices = Vec::with_capacity(outcomes.len());
    let mut reports = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        encoded.push(o.encoded);
        indices.push(o.indices);
        reports.push(o.report);
    }
    let bitstream = ModelBitstream::new(encoded);
    let bytes = bitstream::serialize(&bitstream)?;
    let weights: usize = reports.iter().map(|r| r.rows * r.cols).sum();
    let report = ModelReport {
        weights,
        container_bytes: bytes.len(),
        original_bytes: weights * 4,
        ratio_percent: if weights > 0 {
            bytes.len() as f64 / (weights * 4) as f64 * 100.0
        } else {
            0.0
        },
        distortion: reports.iter().map(|r| r.distortion).sum(),
        layers: reports,
    };
    Ok(EncodedModel {
        bitstream,
        bytes,
        indices,
        report,
    })
}

pub fn decode_layer(layer: &EncodedLayer) -> Result<QuantIndexTensor, CodecError> {
    let h = &layer.header;
    let run = || -> Result<QuantIndexTensor, CodecError> {
        let params = BinarizationParams::new(h.n_flags, h.remainder_bits);
        let mut ctx = ContextSet::new(h.n_flags, h.adaptation_shift);
        let mut dec = ArithDecoder::new(&layer.payload)?;
        Ok(decode_tensor(
            h.rows as usize,
            h.cols as usize,
            params,
            &mut ctx,
            &mut dec,
        )?)
    };
    run().map_err(|e| CodecError::in_layer(&h.name, e))
}

/// Decode a container to reconstructed weights in their original shapes.
pub fn decode_model(model: &ModelBitstream) -> Result<TensorFile, CodecError> {
    model
        .layers
        .par_iter()
        .map(|layer| {
            let q = decode_layer(layer)?;
            let h = &layer.header;
            let grid = QuantGrid {
                delta: h.delta,
                s: h.s,
                max_abs_index: q.max_abs(),
            };
            Ok(TensorEntry::new(
                h.name.clone(),
                Role::Weight,
                h.orig_shape.iter().map(|&d| d as usize).collect(),
                dequantize(&q, &grid),
            ))
        })
        .collect::<Result<Vec<_>, CodecError>>()
        .map(TensorFile::new)
}

pub fn decode_bytes(bytes: &[u8]) -> Result<TensorFile, CodecError> {
    decode_model(&bitstream::parse(bytes)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub s: u32,
    pub container_bytes: usize,
    pub distortion: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub best_s: u32,
    pub best_bytes: Vec<u8>,
}

impl SweepResult {
    pub fn table(&self) -> String {
        let mut out = String::from("s\tcontainer_bytes\tdistortion\tmse\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{:e}\t{:e}", r.s, r.container_bytes, r.distortion, r.mse);
        }
        out
    }
}

/// Encode once per S in `range` and keep the smallest container (the lowest S
/// wins ties).
pub fn sweep(
    layers: &[CodableLayer],
    opts: &EncodeOptions,
    range: RangeInclusive<u32>,
) -> Result<SweepResult, CodecError> {
    if range.is_empty() {
        return Err(CodecError::EmptyRange);
    }
    opts.rd.validate()?;
    let run_one = |s: u32| -> Result<(SweepRow, Vec<u8>), CodecError> {
        let o = EncodeOptions { s, threads: 1, ..*opts };
        let m = encode_codable(layers, &o)?;
        let mse_num: f64 = m.report.layers.iter().map(|l| l.mse * (l.rows * l.cols) as f64).sum();
        let row = SweepRow {
            s,
            container_bytes: m.bytes.len(),
            distortion: m.report.distortion,
            mse: mse_num / m.report.weights.max(1) as f64,
        };
        Ok((row, m.bytes))
    };
    let s_values: Vec<u32> = range.collect();
    let results: Vec<(SweepRow, Vec<u8>)> = if opts.threads <= 1 {
        s_values.into_iter().map(run_one).collect::<Result<_, _>>()?
    } else {
        pool(opts.threads)?.install(|| s_values.into_par_iter().map(run_one).collect::<Result<_, _>>())?
    };
    let best = results
        .iter()
        .enumerate()
        .min_by_key(|(_, (row, _))| (row.container_bytes, row.s))
        .map(|(i, _)| i)
        .expect("non-empty range");
    let best_s = results[best].0.s;
    let best_bytes = results[best].1.clone();
    Ok(SweepResult {
        rows: results.into_iter().map(|(r, _)| r).collect(),
        best_s,
        best_bytes,
    })
}
