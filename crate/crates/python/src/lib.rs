//! Python bindings: `deepcabac._native`.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use deepcabac::bacore::{self, ArithDecoder};
use deepcabac::binarizer::matrixify;
use deepcabac::bitstream;
use deepcabac::codec::{self, CodecError, LayerReport, ModelReport};
use deepcabac::ctxmodel;
use deepcabac::ingest::{self, IngestError, Role, TensorEntry, TensorFile};
use deepcabac::metrics;
use deepcabac::quantizer::{self, EtaMode, RdConfig, WeightStats};

fn codec_err(e: CodecError) -> PyErr {
    match e {
        CodecError::Ingest(IngestError::Io { .. }) => PyOSError::new_err(e.to_string()),
        e if e.is_invariant_violation() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_role(role: &str) -> PyResult<Role> {
    match role {
        "weight" => Ok(Role::Weight),
        "sigma" => Ok(Role::Sigma),
        "excluded" => Ok(Role::Excluded),
        other => Err(PyValueError::new_err(format!(
            "role must be 'weight', 'sigma' or 'excluded', got {other:?}"
        ))),
    }
}

/// A named tensor of a model file.
#[pyclass(get_all, set_all, from_py_object)]
#[derive(Clone)]
pub struct Tensor {
    pub name: String,
    /// "weight", "sigma" or "excluded".
    pub role: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[pymethods]
impl Tensor {
    #[new]
    #[pyo3(signature = (name, shape, data, role = "weight".to_string()))]
    fn new(name: String, shape: Vec<usize>, data: Vec<f32>, role: String) -> PyResult<Self> {
        parse_role(&role)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(PyValueError::new_err(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            name,
            role,
            shape,
            data,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Tensor(name={:?}, role={:?}, shape={:?})",
            self.name, self.role, self.shape
        )
    }
}

impl Tensor {
    fn to_entry(&self) -> PyResult<TensorEntry> {
        Ok(TensorEntry::new(
            self.name.clone(),
            parse_role(&self.role)?,
            self.shape.clone(),
            self.data.clone(),
        ))
    }

    fn from_entry(e: TensorEntry) -> Self {
        Self {
            name: e.name,
            role: e.role.to_string(),
            shape: e.shape,
            data: e.data,
        }
    }
}

fn to_file(tensors: &[Tensor]) -> PyResult<TensorFile> {
    Ok(TensorFile::new(
        tensors.iter().map(Tensor::to_entry).collect::<PyResult<_>>()?,
    ))
}

fn from_file(file: TensorFile) -> Vec<Tensor> {
    file.entries.into_iter().map(Tensor::from_entry).collect()
}

/// Coding parameters shared by `encode`, `quantize` and `sweep`.
#[pyclass(get_all, set_all, from_py_object)]
#[derive(Clone)]
pub struct EncodeOptions {
    pub lambda_: f64,
    pub s: u32,
    pub n_flags: u8,
    pub adaptation_shift: u8,
    pub search_halfwidth: u32,
    pub uniform_eta: bool,
    pub grid_floor: Option<f64>,
    pub threads: usize,
}

#[pymethods]
impl EncodeOptions {
    #[new]
    #[pyo3(signature = (lambda_ = 0.01, s = 64, n_flags = 4, adaptation_shift = 4, search_halfwidth = 2,
                        uniform_eta = false, grid_floor = None, threads = 1))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        lambda_: f64,
        s: u32,
        n_flags: u8,
        adaptation_shift: u8,
        search_halfwidth: u32,
        uniform_eta: bool,
        grid_floor: Option<f64>,
        threads: usize,
    ) -> Self {
        Self {
            lambda_,
            s,
            n_flags,
            adaptation_shift,
            search_halfwidth,
            uniform_eta,
            grid_floor,
            threads,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "EncodeOptions(lambda_={}, s={}, n_flags={}, adaptation_shift={}, search_halfwidth={}, uniform_eta={}, \
             grid_floor={:?}, threads={})",
            self.lambda_,
            self.s,
            self.n_flags,
            self.adaptation_shift,
            self.search_halfwidth,
            self.uniform_eta,
            self.grid_floor,
            self.threads
        )
    }
}

impl EncodeOptions {
    fn to_core(&self) -> PyResult<codec::EncodeOptions> {
        let rd = RdConfig {
            lambda: self.lambda_,
            eta_mode: if self.uniform_eta {
                EtaMode::Uniform
            } else {
                EtaMode::FromSigma
            },
            search_halfwidth: self.search_halfwidth,
            n_flags: self.n_flags,
            adaptation_shift: self.adaptation_shift,
        };
        rd.validate().map_err(value_err)?;
        if self.n_flags > bitstream::MAX_N_FLAGS {
            return Err(PyValueError::new_err(format!(
                "n_flags must be at most {}",
                bitstream::MAX_N_FLAGS
            )));
        }
        Ok(codec::EncodeOptions {
            rd,
            s: self.s,
            grid_floor: self.grid_floor,
            threads: self.threads,
        })
    }
}

fn options_or_default(options: Option<EncodeOptions>) -> PyResult<codec::EncodeOptions> {
    options.map_or_else(|| Ok(codec::EncodeOptions::default()), |o| o.to_core())
}

fn layer_dict<'py>(py: Python<'py>, r: &LayerReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("name", &r.name)?;
    d.set_item("rows", r.rows)?;
    d.set_item("cols", r.cols)?;
    d.set_item("delta", r.delta)?;
    d.set_item("sigma_min", r.sigma_min)?;
    d.set_item("s", r.s)?;
    d.set_item("n_flags", r.n_flags)?;
    d.set_item("remainder_bits", r.remainder_bits)?;
    d.set_item("nonzero", r.nonzero_fraction)?;
    d.set_item("payload_bytes", r.payload_bytes)?;
    d.set_item("bits_per_weight", r.bits_per_weight)?;
    d.set_item("ratio_percent", r.ratio_percent)?;
    d.set_item("distortion", r.distortion)?;
    d.set_item("mse", r.mse)?;
    d.set_item("entropy_bits", r.entropy_bits)?;
    d.set_item("huffman_bits", r.huffman_bits)?;
    Ok(d)
}

fn model_dict<'py>(py: Python<'py>, r: &ModelReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let layers = r
        .layers
        .iter()
        .map(|l| layer_dict(py, l))
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("layers", layers)?;
    d.set_item("weights", r.weights)?;
    d.set_item("original_bytes", r.original_bytes)?;
    d.set_item("container_bytes", r.container_bytes)?;
    d.set_item("ratio_percent", r.ratio_percent)?;
    d.set_item("distortion", r.distortion)?;
    Ok(d)
}

/// Read a `.dcnw` model file.
#[pyfunction]
fn load(path: &str) -> PyResult<Vec<Tensor>> {
    ingest::load(path).map(from_file).map_err(|e| codec_err(e.into()))
}

/// Write tensors to a `.dcnw` model file.
#[pyfunction]
fn save(path: &str, tensors: Vec<Tensor>) -> PyResult<()> {
    ingest::save(path, &to_file(&tensors)?).map_err(|e| codec_err(e.into()))
}

/// Quantize and code every weight tensor. Returns `(container_bytes, report)`.
#[pyfunction]
#[pyo3(signature = (tensors, options = None))]
fn encode<'py>(
    py: Python<'py>,
    tensors: Vec<Tensor>,
    options: Option<EncodeOptions>,
) -> PyResult<(Bound<'py, PyBytes>, Bound<'py, PyDict>)> {
    let file = to_file(&tensors)?;
    let opts = options_or_default(options)?;
    let model = py.detach(|| codec::encode_model(&file, &opts)).map_err(codec_err)?;
    Ok((PyBytes::new(py, &model.bytes), model_dict(py, &model.report)?))
}

/// Reconstruct weight tensors, in their original shapes, from container bytes.
#[pyfunction]
fn decode(py: Python<'_>, data: Vec<u8>) -> PyResult<Vec<Tensor>> {
    py.detach(|| codec::decode_bytes(&data))
        .map(from_file)
        .map_err(codec_err)
}

/// Layer headers of a container.
#[pyfunction]
fn inspect<'py>(py: Python<'py>, data: Vec<u8>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let model = bitstream::parse(&data).map_err(|e| codec_err(e.into()))?;
    model
        .layers
        .iter()
        .map(|l| {
            let h = &l.header;
            let d = PyDict::new(py);
            d.set_item("name", &h.name)?;
            d.set_item("shape", &h.orig_shape)?;
            d.set_item("rows", h.rows)?;
            d.set_item("cols", h.cols)?;
            d.set_item("delta", h.delta)?;
            d.set_item("s", h.s)?;
            d.set_item("n_flags", h.n_flags)?;
            d.set_item("remainder_bits", h.remainder_bits)?;
            d.set_item("adaptation_shift", h.adaptation_shift)?;
            d.set_item("payload_len", l.payload.len())?;
            Ok(d)
        })
        .collect()
}

/// RD-quantize one tensor. Returns `(indices, delta)`; indices are row-major
/// over the matrix view of `shape`.
#[pyfunction]
#[pyo3(signature = (weights, shape, sigma = None, options = None))]
fn quantize(
    py: Python<'_>,
    weights: Vec<f32>,
    shape: Vec<usize>,
    sigma: Option<Vec<f32>>,
    options: Option<EncodeOptions>,
) -> PyResult<(Vec<i32>, f64)> {
    let opts = options_or_default(options)?;
    let w = matrixify("tensor", &shape, weights).map_err(value_err)?;
    py.detach(|| {
        let stats = WeightStats::of_layer(&w, sigma.as_deref(), opts.grid_floor)?;
        let grid = quantizer::build_grid(stats, opts.s);
        let (q, _) = quantizer::rd_quantize_layer(&w, sigma.as_deref(), &grid, &opts.rd)?;
        Ok((q.indices, grid.delta))
    })
    .map_err(|e: quantizer::QuantizeError| value_err(e))
}

/// Step size and largest index magnitude of the grid for `(w_max, sigma_min, s)`.
#[pyfunction]
fn build_grid(w_max: f64, sigma_min: f64, s: u32) -> PyResult<(f64, u64)> {
    let g = quantizer::build_grid(WeightStats::new(w_max, sigma_min).map_err(value_err)?, s);
    Ok((g.delta, g.max_abs_index))
}

/// Encode once per S in `s_min..=s_max`. Returns `(rows, best_s, best_bytes)`
/// with rows of `(s, container_bytes, distortion, mse)`.
#[pyfunction]
#[pyo3(signature = (tensors, s_min = 0, s_max = 256, options = None))]
#[allow(clippy::type_complexity)]
fn sweep<'py>(
    py: Python<'py>,
    tensors: Vec<Tensor>,
    s_min: u32,
    s_max: u32,
    options: Option<EncodeOptions>,
) -> PyResult<(Vec<(u32, usize, f64, f64)>, u32, Bound<'py, PyBytes>)> {
    let file = to_file(&tensors)?;
    let opts = options_or_default(options)?;
    let result = py
        .detach(|| {
            let layers = ingest::select_codable(&file)?;
            codec::sweep(&layers, &opts, s_min..=s_max)
        })
        .map_err(codec_err)?;
    let rows = result
        .rows
        .iter()
        .map(|r| (r.s, r.container_bytes, r.distortion, r.mse))
        .collect();
    Ok((rows, result.best_s, PyBytes::new(py, &result.best_bytes)))
}

/// Bits of a scalar Huffman code for `indices`, code table included.
#[pyfunction]
fn huffman_bits(indices: Vec<i32>) -> PyResult<u64> {
    metrics::huffman_baseline(&indices)
        .map(|r| r.total_bits())
        .map_err(value_err)
}

/// First-order entropy of `indices` in bits per symbol.
#[pyfunction]
fn empirical_entropy(indices: Vec<i32>) -> PyResult<f64> {
    metrics::empirical_entropy(&indices).map_err(value_err)
}

/// Adaptive binary probability model.
#[pyclass]
pub struct ContextModel(ctxmodel::ContextModel);

#[pymethods]
impl ContextModel {
    #[new]
    #[pyo3(signature = (adaptation_shift = 4))]
    fn new(adaptation_shift: u8) -> PyResult<Self> {
        if !(1..=14).contains(&adaptation_shift) {
            return Err(PyValueError::new_err("adaptation_shift must be in 1..=14"));
        }
        Ok(Self(ctxmodel::ContextModel::new(adaptation_shift)))
    }

    /// Probability of a one, 15-bit fixed point.
    #[getter]
    fn p1(&self) -> u16 {
        self.0.p1()
    }

    fn update(&mut self, bin: bool) {
        self.0.update(bin);
    }

    /// Code length of `bin` in bits under the current state.
    fn bit_cost(&self, bin: bool) -> f64 {
        self.0.bit_cost(bin).bits()
    }
}

/// Binary arithmetic encoder. Probabilities are 15-bit fixed point.
#[pyclass]
pub struct ArithEncoder(bacore::ArithEncoder);

#[pymethods]
impl ArithEncoder {
    #[new]
    fn new() -> Self {
        Self(bacore::ArithEncoder::new())
    }

    fn encode_bin(&mut self, bin: bool, p1: u16) -> PyResult<()> {
        self.0.encode_bin(bin, p1).map_err(value_err)
    }

    fn encode_bypass(&mut self, bin: bool) -> PyResult<()> {
        self.0.encode_bypass(bin).map_err(value_err)
    }

    fn terminate<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = self.0.terminate().map_err(value_err)?;
        Ok(PyBytes::new(py, &bytes))
    }
}

/// Decode one bin per entry of `probs`; `None` entries are bypass bins.
#[pyfunction]
fn decode_bins(payload: Vec<u8>, probs: Vec<Option<u16>>) -> PyResult<Vec<bool>> {
    let mut dec = ArithDecoder::new(&payload).map_err(value_err)?;
    probs
        .into_iter()
        .map(|p| match p {
            Some(p1) => dec.decode_bin(p1),
            None => dec.decode_bypass(),
        })
        .collect::<Result<_, _>>()
        .map_err(value_err)
}

#[pymodule]
pub fn _native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tensor>()?;
    m.add_class::<EncodeOptions>()?;
    m.add_class::<ContextModel>()?;
    m.add_class::<ArithEncoder>()?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(save, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(inspect, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(build_grid, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(huffman_bits, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(decode_bins, m)?)?;
    Ok(())
}
