//! Self-describing binary container for trained models.
//!
//! Layout (all integers little-endian `u32`, floats little-endian `f64`):
//! magic `LTNN`, version, metadata table (`count`, then length-prefixed UTF-8
//! key/value pairs), input shape (`ndim`, dims), layer table (`count`, then per
//! layer: kind code `u8`, input node ids, kind fields, parameter tensors,
//! buffer tensors). A tensor is `ndim`, dims, then its data.

use std::collections::BTreeMap;
use std::path::Path;

use super::layers::{LayerKind, LayerParams, LayerSpec, ModelParams, Network};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"LTNN";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub network: Network,
    pub params: ModelParams,
    pub metadata: BTreeMap<String, String>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn dims(&mut self, dims: &[usize]) {
        self.u32(dims.len());
        dims.iter().for_each(|&d| self.u32(d));
    }

    fn tensor(&mut self, t: &Tensor) {
        self.dims(t.shape());
        t.data().iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(self.path, "invalid utf-8"))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 8 {
            return Err(Error::format(
                self.path,
                format!("tensor rank {n} too large"),
            ));
        }
        (0..n).map(|_| self.u32()).collect()
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let dims = self.dims()?;
        let len: usize = dims.iter().product();
        if len * 8 > self.bytes.len() - self.pos.min(self.bytes.len()) {
            return Err(Error::format(self.path, "tensor data truncated"));
        }
        let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(dims, data).map_err(|e| Error::format(self.path, e.to_string()))
    }

    fn tensors(&mut self) -> Result<Vec<Tensor>> {
        let n = self.u32()?;
        (0..n).map(|_| self.tensor()).collect()
    }
}

impl ModelFile {
    pub fn new(network: Network, params: ModelParams) -> Self {
        ModelFile {
            network,
            params,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Parses a required metadata entry.
    pub fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::invalid(format!("model metadata `{key}` missing or malformed")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MODEL_MAGIC);
        w.u32(MODEL_VERSION as usize);
        w.u32(self.metadata.len());
        for (k, v) in &self.metadata {
            w.str(k);
            w.str(v);
        }
        w.dims(self.network.input_shape());
        w.u32(self.network.layers().len());
        for (layer, p) in self.network.layers().iter().zip(&self.params.layers) {
            w.0.push(layer.kind.code());
            w.dims(&layer.inputs);
            match &layer.kind {
                LayerKind::Conv3x3 { cin, cout } | LayerKind::TransposeConv2 { cin, cout } => {
                    w.u32(*cin);
                    w.u32(*cout);
                }
                LayerKind::ConvHead { cin, cout, kernel } => {
                    w.u32(*cin);
                    w.u32(*cout);
                    w.u32(*kernel);
                }
                LayerKind::BatchNorm { channels } => w.u32(*channels),
                LayerKind::LeakyRelu { negative_slope } => w.f64(*negative_slope),
                LayerKind::Reshape { shape } => w.dims(shape),
                LayerKind::MaxPool2
                | LayerKind::ResidualAdd
                | LayerKind::Sigmoid
                | LayerKind::SoftmaxChannel
                | LayerKind::Concat => {}
            }
            w.u32(p.params.len());
            p.params.iter().for_each(|t| w.tensor(t));
            w.u32(p.buffers.len());
            p.buffers.iter().for_each(|t| w.tensor(t));
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::format(path, "missing LTNN magic"));
        }
        let version = r.u32()? as u32;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            let v = r.str()?;
            metadata.insert(k, v);
        }
        let input_shape = r.dims()?;
        let n_layers = r.u32()?;
        let mut layers = Vec::with_capacity(n_layers.min(4096));
        let mut params = Vec::with_capacity(n_layers.min(4096));
        for _ in 0..n_layers {
            let code = r.u8()?;
            let inputs = r.dims()?;
            let kind = match code {
                1 => LayerKind::Conv3x3 {
                    cin: r.u32()?,
                    cout: r.u32()?,
                },
                2 => LayerKind::BatchNorm { channels: r.u32()? },
                3 => LayerKind::LeakyRelu {
                    negative_slope: r.f64()?,
                },
                4 => LayerKind::MaxPool2,
                5 => LayerKind::ResidualAdd,
                6 => LayerKind::ConvHead {
                    cin: r.u32()?,
                    cout: r.u32()?,
                    kernel: r.u32()?,
                },
                7 => LayerKind::TransposeConv2 {
                    cin: r.u32()?,
                    cout: r.u32()?,
                },
                8 => LayerKind::Sigmoid,
                9 => LayerKind::SoftmaxChannel,
                10 => LayerKind::Concat,
                11 => LayerKind::Reshape { shape: r.dims()? },
                other => return Err(Error::format(path, format!("unknown layer kind {other}"))),
            };
            layers.push(LayerSpec { kind, inputs });
            params.push(LayerParams {
                params: r.tensors()?,
                buffers: r.tensors()?,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after layer table"));
        }
        let network =
            Network::new(input_shape, layers).map_err(|e| Error::format(path, e.to_string()))?;
        let fresh = ModelParams::init(&network, &mut rand::rngs::mock::StepRng::new(0, 0));
        for (i, (a, b)) in params.iter().zip(&fresh.layers).enumerate() {
            let shapes = |l: &LayerParams| -> Vec<Vec<usize>> {
                l.params
                    .iter()
                    .chain(&l.buffers)
                    .map(|t| t.shape().to_vec())
                    .collect()
            };
            if shapes(a) != shapes(b) {
                return Err(Error::format(
                    path,
                    format!("parameter shapes of layer {i} do not match its kind"),
                ));
            }
        }
        Ok(ModelFile {
            network,
            params: ModelParams { layers: params },
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
