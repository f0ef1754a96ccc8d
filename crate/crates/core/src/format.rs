//! Binary containers for models and patch datasets.
//!
//! All integers and floats are little-endian.
//!
//! Model file (`VDSRNET\0`, version 1):
//!
//! ```text
//! magic        8 bytes  "VDSRNET\0"
//! version      u32      1
//! depth        u32
//! filters      u32
//! kernel       u32
//! activation   u8 length + ASCII   ("relu")
//! estimator    u8 length + ASCII   ("none" | "mse" | "var-norm")
//! stability_r  f64                 (0 unless var-norm)
//! scales       u8 count + u8 each
//! run          u32 length + UTF-8
//! per layer, first to last:
//!   weights    f64 × out·in·k·k     (out, in, ky, kx order)
//!   biases     f64 × out
//! ```
//!
//! Layer shapes follow from the header: layer 0 is `1 -> filters`, the last
//! is `filters -> 1`, the rest `filters -> filters`.
//!
//! Dataset archive (`VDSRDSET`, version 1):
//!
//! ```text
//! magic        8 bytes  "VDSRDSET"
//! version      u32      1
//! patch_size   u32      P
//! records      u64
//! sources      u32 count, then per source: u32 length + UTF-8 name
//! per record (fixed width, (2 + 2·P²) f64):
//!   scale      f64      2, 3 or 4
//!   source     f64      index into the source table
//!   ilr        f64 × P²  row-major
//!   residual   f64 × P²  row-major
//! ```

use crate::error::{Error, Result};
use crate::imaging::{ImagePlane, Scale};
use crate::loss::LossEstimator;
use crate::net::{ConvLayer, ModelMetadata, NetworkModel, ACTIVATION_RELU};
use crate::train::PatchPair;

const MODEL_MAGIC: &[u8; 8] = b"VDSRNET\0";
const DATASET_MAGIC: &[u8; 8] = b"VDSRDSET";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
    fn short_str(&mut self, s: &str) {
        self.u8(s.len() as u8);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn long_str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            what,
        }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.err("length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn str_of(&mut self, n: usize) -> Result<String> {
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err("invalid UTF-8"))
    }
    fn short_str(&mut self) -> Result<String> {
        let n = self.u8()? as usize;
        self.str_of(n)
    }
    fn long_str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        self.str_of(n)
    }
    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(self.err("bad magic"));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(self.err(format!("unsupported version {version}")));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_model(model: &NetworkModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(model.depth() as u32);
    w.u32(model.filters() as u32);
    w.u32(model.kernel() as u32);
    w.short_str(model.activation());
    let meta = &model.metadata;
    w.short_str(meta.estimator.map_or("none", |e| e.id()));
    w.f64(meta.estimator.and_then(|e| e.stability_r()).unwrap_or(0.0));
    w.u8(meta.scales.len() as u8);
    for s in &meta.scales {
        w.u8(s.factor() as u8);
    }
    w.long_str(&meta.run);
    for layer in model.layers() {
        w.f64s(layer.weights());
        w.f64s(layer.biases());
    }
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<NetworkModel> {
    let mut r = Reader::new(bytes, "model file");
    r.header(MODEL_MAGIC)?;
    let depth = r.u32()? as usize;
    let filters = r.u32()? as usize;
    let kernel = r.u32()? as usize;
    let activation = r.short_str()?;
    if activation != ACTIVATION_RELU {
        return Err(r.err(format!("unsupported activation {activation:?}")));
    }
    let estimator_id = r.short_str()?;
    let stability_r = r.f64()?;
    let estimator = match estimator_id.as_str() {
        "none" => None,
        "mse" => Some(LossEstimator::Mse),
        "var-norm" => Some(LossEstimator::var_norm(stability_r)?),
        other => return Err(r.err(format!("unknown estimator {other:?}"))),
    };
    let n_scales = r.u8()? as usize;
    let scales = (0..n_scales)
        .map(|_| Scale::try_from(r.u8()? as usize))
        .collect::<Result<Vec<_>>>()?;
    let run = r.long_str()?;
    if depth == 0 || filters == 0 || depth > 4096 || filters > 65536 {
        return Err(r.err(format!("implausible shape depth={depth} filters={filters}")));
    }
    let mut layers = Vec::with_capacity(depth);
    for i in 0..depth {
        let inp = if i == 0 { 1 } else { filters };
        let out = if i + 1 == depth { 1 } else { filters };
        let weights = r.f64s(out * inp * kernel * kernel)?;
        let biases = r.f64s(out)?;
        layers.push(ConvLayer::new(out, inp, kernel, weights, biases)?);
    }
    r.finish()?;
    NetworkModel::from_layers(
        layers,
        ModelMetadata {
            scales,
            estimator,
            run,
        },
    )
}

/// A decoded dataset archive.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub patch_size: usize,
    pub sources: Vec<String>,
    pub pairs: Vec<PatchPair>,
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let p2 = ds.patch_size * ds.patch_size;
    let mut w = Writer(Vec::with_capacity(32 + ds.pairs.len() * (2 + 2 * p2) * 8));
    w.0.extend_from_slice(DATASET_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(ds.patch_size as u32);
    w.u64(ds.pairs.len() as u64);
    w.u32(ds.sources.len() as u32);
    for s in &ds.sources {
        w.long_str(s);
    }
    for pair in &ds.pairs {
        if pair.ilr.dims() != (ds.patch_size, ds.patch_size)
            || pair.residual.dims() != pair.ilr.dims()
        {
            return Err(Error::ShapeMismatch(format!(
                "pair from source {} is not {p}x{p}",
                pair.source,
                p = ds.patch_size
            )));
        }
        if pair.source >= ds.sources.len() {
            return Err(Error::InvalidParameter(format!(
                "pair source {} has no name",
                pair.source
            )));
        }
        w.f64(pair.scale.factor() as f64);
        w.f64(pair.source as f64);
        w.f64s(pair.ilr.as_slice());
        w.f64s(pair.residual.as_slice());
    }
    Ok(w.0)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes, "dataset archive");
    r.header(DATASET_MAGIC)?;
    let patch_size = r.u32()? as usize;
    let count = r.u64()? as usize;
    let n_sources = r.u32()? as usize;
    let sources = (0..n_sources)
        .map(|_| r.long_str())
        .collect::<Result<Vec<_>>>()?;
    if patch_size == 0 {
        return Err(r.err("zero patch size"));
    }
    let p2 = patch_size * patch_size;
    let record = (2 + 2 * p2) * 8;
    if (bytes.len() - r.pos) / record < count {
        return Err(r.err(format!("header promises {count} records")));
    }
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let scale = r.f64()?;
        let source = r.f64()?;
        if scale.fract() != 0.0
            || source.fract() != 0.0
            || source < 0.0
            || source as usize >= n_sources
        {
            return Err(r.err(format!("bad record header scale={scale} source={source}")));
        }
        let ilr = ImagePlane::new(patch_size, patch_size, r.f64s(p2)?)?;
        let residual = ImagePlane::new(patch_size, patch_size, r.f64s(p2)?)?;
        pairs.push(PatchPair {
            ilr,
            residual,
            scale: Scale::try_from(scale as usize)?,
            source: source as usize,
        });
    }
    r.finish()?;
    Ok(Dataset {
        patch_size,
        sources,
        pairs,
    })
}
