use std::fmt;
use std::path::Path;

use deepcabac::bitstream;
use deepcabac::codec::{self, CodecError, EncodeOptions};
use deepcabac::ingest;
use deepcabac::quantizer::{EtaMode, RdConfig};

use crate::CodingArgs;

pub enum CliError {
    Usage(String),
    Io(String),
    Codec(CodecError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Codec(e) if e.is_invariant_violation() => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Codec(e) => write!(f, "{e}"),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        CliError::Codec(e)
    }
}

impl From<ingest::IngestError> for CliError {
    fn from(e: ingest::IngestError) -> Self {
        CliError::Codec(e.into())
    }
}

impl From<bitstream::BitstreamError> for CliError {
    fn from(e: bitstream::BitstreamError) -> Self {
        CliError::Codec(e.into())
    }
}

impl CodingArgs {
    pub fn options(&self, s: u32) -> EncodeOptions {
        EncodeOptions {
            rd: RdConfig {
                lambda: self.lambda,
                eta_mode: if self.uniform_eta {
                    EtaMode::Uniform
                } else {
                    EtaMode::FromSigma
                },
                search_halfwidth: self.search_halfwidth,
                n_flags: self.n_flags,
                adaptation_shift: self.adapt_shift,
            },
            s,
            grid_floor: self.grid_floor,
            threads: self.threads,
        }
    }
}

fn check_options(opts: &EncodeOptions) -> Result<(), CliError> {
    opts.rd.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(f) = opts.grid_floor {
        if !(f > 0.0 && f.is_finite()) {
            return Err(CliError::Usage("--grid-floor must be positive".into()));
        }
    }
    if opts.rd.n_flags > bitstream::MAX_N_FLAGS {
        return Err(CliError::Usage(format!(
            "--n-flags must be at most {}",
            bitstream::MAX_N_FLAGS
        )));
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

pub fn encode(input: &Path, output: &Path, opts: EncodeOptions) -> Result<(), CliError> {
    check_options(&opts)?;
    let file = ingest::load(input)?;
    let model = codec::encode_model(&file, &opts)?;
    write(output, &model.bytes)?;
    print!("{}", model.report.records());
    Ok(())
}

pub fn decode(input: &Path, output: &Path) -> Result<(), CliError> {
    let bytes = read(input)?;
    let file = codec::decode_bytes(&bytes)?;
    let out = ingest::to_bytes(&file)?;
    write(output, &out)?;
    println!(
        "record=decode layers={} output={:?}",
        file.entries.len(),
        output.display().to_string()
    );
    Ok(())
}

pub fn inspect(input: &Path) -> Result<(), CliError> {
    let bytes = read(input)?;
    let model = bitstream::parse(&bytes)?;
    println!(
        "{} layers, {} bytes ({} payload)",
        model.layers.len(),
        bytes.len(),
        model.payload_bytes()
    );
    for l in &model.layers {
        let h = &l.header;
        println!(
            "layer name={:?} shape={:?} matrix={}x{} delta={:e} s={} n_flags={} remainder_bits={} adapt_shift={} payload_len={}",
            h.name,
            h.orig_shape,
            h.rows,
            h.cols,
            h.delta,
            h.s,
            h.n_flags,
            h.remainder_bits,
            h.adaptation_shift,
            l.payload.len()
        );
    }
    Ok(())
}

pub fn sweep(input: &Path, out_dir: &Path, opts: EncodeOptions, (lo, hi): (u32, u32)) -> Result<(), CliError> {
    check_options(&opts)?;
    if lo > hi {
        return Err(CliError::Usage(format!("empty S range {lo}:{hi}")));
    }
    let file = ingest::load(input)?;
    let layers = ingest::select_codable(&file)?;
    let result = codec::sweep(&layers, &opts, lo..=hi)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let table = result.table();
    write(&out_dir.join("sweep.tsv"), table.as_bytes())?;
    write(&out_dir.join("best.dcnb"), &result.best_bytes)?;
    print!("{table}");
    println!(
        "record=sweep rows={} best_s={} best_bytes={}",
        result.rows.len(),
        result.best_s,
        result.best_bytes.len()
    );
    Ok(())
}
