//! Binary model files: magic, version, network description, per-layer
//! tagged payloads of little-endian f32, trailing CRC32.

use std::fs;
use std::path::Path;

use fontid_core::compress::FactorizedLayer;
use fontid_core::network::{LayerParams, LayerSpec, Model, NetworkSpec, Weights};
use fontid_core::numerics::Tensor;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"DFNT";
pub const VERSION: u32 = 1;

const DENSE: u8 = 0;
const FACTORED: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_floats(out: &mut Vec<u8>, vals: &[f64]) {
    put_u32(out, vals.len());
    for v in vals {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn put_layer(out: &mut Vec<u8>, l: &LayerSpec) {
    let (tag, args): (u8, Vec<usize>) = match *l {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            pad,
        } => (0, vec![out_channels, kernel, stride, pad]),
        LayerSpec::Pool { window, stride } => (1, vec![window, stride]),
        LayerSpec::Relu => (2, vec![]),
        LayerSpec::Fc { out } => (3, vec![out]),
        LayerSpec::Dropout { p } => {
            out.push(4);
            out.extend_from_slice(&p.to_le_bytes());
            return;
        }
        LayerSpec::Softmax => (5, vec![]),
        LayerSpec::Upsample { height, width } => (6, vec![height, width]),
        LayerSpec::Reshape {
            channels,
            height,
            width,
        } => (7, vec![channels, height, width]),
    };
    out.push(tag);
    for a in args {
        put_u32(out, a);
    }
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    let spec = &model.spec;
    for v in [
        spec.input.0,
        spec.input.1,
        spec.input.2,
        spec.k_split,
        spec.n_classes,
        spec.layers.len(),
    ] {
        put_u32(&mut out, v);
    }
    for l in &spec.layers {
        put_layer(&mut out, l);
    }
    for p in &model.params {
        match &p.weights {
            Weights::Dense(w) => {
                out.push(DENSE);
                out.push(p.frozen as u8);
                put_floats(&mut out, w.data());
            }
            Weights::Factored(f) => {
                out.push(FACTORED);
                out.push(p.frozen as u8);
                put_u32(&mut out, f.k());
                put_floats(&mut out, f.u.data());
                put_floats(&mut out, &f.s);
                put_floats(&mut out, f.v.data());
            }
        }
        put_floats(&mut out, &p.bias);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CheckpointError::Truncated)?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let n = self.u32()?;
        if n != expected {
            return Err(CheckpointError::Malformed(format!(
                "payload of {n} values, expected {expected}"
            )));
        }
        let bytes = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn layer(&mut self) -> Result<LayerSpec> {
        Ok(match self.u8()? {
            0 => LayerSpec::Conv {
                out_channels: self.u32()?,
                kernel: self.u32()?,
                stride: self.u32()?,
                pad: self.u32()?,
            },
            1 => LayerSpec::Pool {
                window: self.u32()?,
                stride: self.u32()?,
            },
            2 => LayerSpec::Relu,
            3 => LayerSpec::Fc { out: self.u32()? },
            4 => LayerSpec::Dropout {
                p: f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")),
            },
            5 => LayerSpec::Softmax,
            6 => LayerSpec::Upsample {
                height: self.u32()?,
                width: self.u32()?,
            },
            7 => LayerSpec::Reshape {
                channels: self.u32()?,
                height: self.u32()?,
                width: self.u32()?,
            },
            t => return Err(CheckpointError::Malformed(format!("unknown layer tag {t}"))),
        })
    }
}

fn malformed(e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Malformed(e.to_string())
}

pub fn decode(buf: &[u8]) -> Result<Model> {
    if buf.len() < 8 + 4 {
        return Err(if buf.len() >= 4 && &buf[..4] != MAGIC {
            CheckpointError::BadMagic
        } else {
            CheckpointError::Truncated
        });
    }
    if &buf[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    let mut r = Reader { buf: body, at: 4 };
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let input = (r.u32()?, r.u32()?, r.u32()?);
    let (k_split, n_classes, n_layers) = (r.u32()?, r.u32()?, r.u32()?);
    let layers = (0..n_layers)
        .map(|_| r.layer())
        .collect::<Result<Vec<_>>>()?;
    let spec = NetworkSpec {
        input,
        layers,
        k_split,
        n_classes,
    };
    spec.validate().map_err(malformed)?;
    let shapes = spec.weight_shapes().map_err(malformed)?;
    let mut params = Vec::with_capacity(shapes.len());
    for (shape, n_bias) in shapes {
        let tag = r.u8()?;
        let frozen = match r.u8()? {
            0 => false,
            1 => true,
            f => return Err(malformed(format!("frozen flag {f}"))),
        };
        let count: usize = shape.iter().product();
        let weights = match tag {
            DENSE => Weights::Dense(Tensor::new(shape, r.floats(count)?).map_err(malformed)?),
            FACTORED if shape.len() == 2 => {
                let (m, n) = (shape[0], shape[1]);
                let k = r.u32()?;
                let u = Tensor::new(vec![m, k], r.floats(m * k)?).map_err(malformed)?;
                let s = r.floats(k)?;
                let v = Tensor::new(vec![n, k], r.floats(n * k)?).map_err(malformed)?;
                Weights::Factored(FactorizedLayer::new(u, s, v).map_err(malformed)?)
            }
            t => return Err(malformed(format!("weight tag {t}"))),
        };
        let bias = r.floats(n_bias)?;
        params.push(LayerParams {
            weights,
            bias,
            frozen,
        });
    }
    if r.at != body.len() {
        return Err(malformed("trailing bytes"));
    }
    Ok(Model { spec, params })
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    decode(&fs::read(path)?)
}
