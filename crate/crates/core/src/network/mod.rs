//! Layer specifications, the classification CNN presets, the mirrored
//! convolutional auto-encoder and the C_u / C_s split.

mod model;

pub use model::{
    backward, forward, forward_until, import_cu, reassemble, split, Activations, Gradients,
    LayerParams, Mode, Model, ModelFragment, Weights,
};

use thiserror::Error;

use crate::image::LINE_HEIGHT;
use crate::numerics::{window_extent, NumericsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("k_split {k} outside [1, {n})")]
    KSplit { k: usize, n: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full-scale topology, used for parameter accounting only.
    Full,
    /// Small topology trained on a desk.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Pool {
        window: usize,
        stride: usize,
    },
    Relu,
    Fc {
        out: usize,
    },
    Dropout {
        p: f64,
    },
    Softmax,
    /// Nearest-neighbour resize to a fixed spatial size.
    Upsample {
        height: usize,
        width: usize,
    },
    /// Flat vector back to channels × height × width.
    Reshape {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl LayerSpec {
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Fc { .. })
    }
}

/// Activation shape of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Chw(c, h, w) => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    /// Batched tensor shape.
    pub fn batched(&self, b: usize) -> Vec<usize> {
        match *self {
            Shape::Chw(c, h, w) => vec![b, c, h, w],
            Shape::Flat(n) => vec![b, n],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    /// Number of leading weighted layers forming C_u.
    pub k_split: usize,
    /// Zero for auto-encoders.
    pub n_classes: usize,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, k_split: usize, n_classes: usize) -> Result<Self> {
        let spec = Self {
            input: (1, LINE_HEIGHT, LINE_HEIGHT),
            layers,
            k_split,
            n_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_weighted();
        if self.k_split == 0 || self.k_split >= n {
            return Err(NetworkError::KSplit { k: self.k_split, n });
        }
        for l in &self.layers {
            let ok = match *l {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => out_channels > 0 && kernel > 0 && stride > 0,
                LayerSpec::Pool { window, stride } => window > 0 && stride > 0,
                LayerSpec::Fc { out } => out > 0,
                LayerSpec::Dropout { p } => (0.0..1.0).contains(&p),
                LayerSpec::Upsample { height, width } => height > 0 && width > 0,
                LayerSpec::Reshape {
                    channels,
                    height,
                    width,
                } => channels * height * width > 0,
                LayerSpec::Relu | LayerSpec::Softmax => true,
            };
            if !ok {
                return Err(NetworkError::Invalid(format!("bad parameters in {l:?}")));
            }
        }
        self.shapes()?;
        Ok(())
    }

    /// Activation shapes: the input followed by each layer's output.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let (c, h, w) = self.input;
        let mut cur = Shape::Chw(c, h, w);
        let mut out = vec![cur];
        for (i, l) in self.layers.iter().enumerate() {
            let bad = |msg: String| NetworkError::Shape(format!("layer {i} ({l:?}): {msg}"));
            cur = match (*l, cur) {
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                        stride,
                        pad,
                    },
                    Shape::Chw(_, h, w),
                ) => {
                    let oh = window_extent(h, kernel, stride, pad);
                    let ow = window_extent(w, kernel, stride, pad);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => Shape::Chw(out_channels, oh, ow),
                        _ => return Err(bad(format!("kernel does not fit {h}×{w}"))),
                    }
                }
                (LayerSpec::Pool { window, stride }, Shape::Chw(c, h, w)) => {
                    match (
                        window_extent(h, window, stride, 0),
                        window_extent(w, window, stride, 0),
                    ) {
                        (Some(oh), Some(ow)) => Shape::Chw(c, oh, ow),
                        _ => return Err(bad(format!("window does not fit {h}×{w}"))),
                    }
                }
                (LayerSpec::Upsample { height, width }, Shape::Chw(c, _, _)) => {
                    Shape::Chw(c, height, width)
                }
                (LayerSpec::Fc { out }, _) => Shape::Flat(out),
                (
                    LayerSpec::Reshape {
                        channels,
                        height,
                        width,
                    },
                    s,
                ) => {
                    if s.size() != channels * height * width {
                        return Err(bad(format!("cannot reshape {} values", s.size())));
                    }
                    Shape::Chw(channels, height, width)
                }
                (LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::Softmax, s) => s,
                (_, s) => return Err(bad(format!("needs a spatial input, got {s:?}"))),
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn n_weighted(&self) -> usize {
        self.layers.iter().filter(|l| l.is_weighted()).count()
    }

    /// Layer positions of the weighted layers.
    pub fn weighted_positions(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_weighted())
            .collect()
    }

    /// `conv1`, `conv2`, …, `fc6`, … numbered by weighted index.
    pub fn weighted_names(&self) -> Vec<String> {
        self.weighted_positions()
            .iter()
            .enumerate()
            .map(|(i, &p)| match self.layers[p] {
                LayerSpec::Conv { .. } => format!("conv{}", i + 1),
                _ => format!("fc{}", i + 1),
            })
            .collect()
    }

    pub fn weighted_index(&self, name: &str) -> Option<usize> {
        self.weighted_names().iter().position(|n| n == name)
    }

    /// Weight tensor shape and bias length per weighted layer. Conv kernels
    /// are F×C×k×k; FC weights are inputs × outputs.
    pub fn weight_shapes(&self) -> Result<Vec<(Vec<usize>, usize)>> {
        let shapes = self.shapes()?;
        Ok(self
            .weighted_positions()
            .into_iter()
            .map(|p| match (&self.layers[p], shapes[p]) {
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                        ..
                    },
                    Shape::Chw(c, _, _),
                ) => (vec![*out_channels, c, *kernel, *kernel], *out_channels),
                (LayerSpec::Fc { out }, s) => (vec![s.size(), *out], *out),
                _ => unreachable!("weighted layers have validated shapes"),
            })
            .collect())
    }

    /// Weight counts (excluding biases) and bias counts per weighted layer.
    pub fn parameter_counts(&self) -> Result<Vec<(u64, u64)>> {
        Ok(self
            .weight_shapes()?
            .into_iter()
            .map(|(w, b)| (w.iter().map(|&d| d as u64).product(), b as u64))
            .collect())
    }

    /// Position one past the last layer of C_u, extended over the ReLU and
    /// pooling layers that follow the K-th weighted layer.
    pub fn cu_end(&self) -> usize {
        let pos = self.weighted_positions()[self.k_split - 1];
        let mut end = pos + 1;
        while end < self.layers.len()
            && matches!(self.layers[end], LayerSpec::Relu | LayerSpec::Pool { .. })
        {
            end += 1;
        }
        end
    }

    /// Position of the ReLU after the penultimate FC layer; its output is
    /// the similarity feature.
    pub fn feature_layer(&self) -> Option<usize> {
        let fcs: Vec<usize> = self
            .weighted_positions()
            .into_iter()
            .filter(|&p| matches!(self.layers[p], LayerSpec::Fc { .. }))
            .collect();
        let pen = *fcs.iter().rev().nth(1)?;
        match self.layers.get(pen + 1) {
            Some(LayerSpec::Relu) => Some(pen + 1),
            _ => Some(pen),
        }
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(*self.shapes()?.last().expect("input shape present"))
    }
}

fn conv(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> LayerSpec {
    LayerSpec::Conv {
        out_channels,
        kernel,
        stride,
        pad,
    }
}

const POOL2: LayerSpec = LayerSpec::Pool {
    window: 2,
    stride: 2,
};
const DROPOUT: LayerSpec = LayerSpec::Dropout { p: 0.5 };

/// Full-scale topology with configurable fc6/fc7 width.
pub fn build_full(n_classes: usize, fc_width: usize, k_split: usize) -> Result<NetworkSpec> {
    use LayerSpec::*;
    NetworkSpec::new(
        vec![
            conv(64, 5, 2, 1),
            Relu,
            POOL2,
            conv(32, 1, 1, 0),
            Relu,
            conv(16, 3, 1, 0),
            Relu,
            conv(24, 3, 1, 1),
            Relu,
            conv(64, 1, 1, 0),
            Relu,
            Fc { out: fc_width },
            Relu,
            DROPOUT,
            Fc { out: fc_width },
            Relu,
            DROPOUT,
            Fc { out: n_classes },
            Softmax,
        ],
        k_split,
        n_classes,
    )
}

pub fn build_desk(n_classes: usize, k_split: usize) -> Result<NetworkSpec> {
    use LayerSpec::*;
    NetworkSpec::new(
        vec![
            conv(16, 5, 2, 0),
            Relu,
            POOL2,
            conv(32, 3, 1, 1),
            Relu,
            POOL2,
            conv(32, 3, 1, 1),
            Relu,
            Fc { out: 256 },
            Relu,
            DROPOUT,
            Fc { out: 256 },
            Relu,
            DROPOUT,
            Fc { out: n_classes },
            Softmax,
        ],
        k_split,
        n_classes,
    )
}

pub fn build_cnn(preset: Preset, n_classes: usize, k_split: usize) -> Result<NetworkSpec> {
    if n_classes == 0 {
        return Err(NetworkError::Invalid("n_classes must be positive".into()));
    }
    match preset {
        Preset::Full => build_full(n_classes, 4096, k_split),
        Preset::Desk => build_desk(n_classes, k_split),
    }
}

/// Auto-encoder whose encoder is C_u of `spec` (split at `k_split`) and
/// whose decoder mirrors it back to the input shape.
pub fn build_scae(spec: &NetworkSpec, k_split: usize) -> Result<NetworkSpec> {
    let probe = NetworkSpec {
        k_split,
        ..spec.clone()
    };
    probe.validate()?;
    let end = probe.cu_end();
    let encoder: Vec<LayerSpec> = spec.layers[..end]
        .iter()
        .filter(|l| !matches!(l, LayerSpec::Dropout { .. }))
        .cloned()
        .collect();
    let enc_spec = NetworkSpec {
        layers: encoder.clone(),
        ..probe.clone()
    };
    let shapes = enc_spec.shapes()?;

    let mut decoder = Vec::new();
    let mut cur = *shapes.last().expect("non-empty");
    let mut remaining = k_split;
    for (i, layer) in encoder.iter().enumerate().rev() {
        let input = shapes[i];
        match (*layer, input) {
            (LayerSpec::Pool { .. }, Shape::Chw(_, h, w)) => {
                decoder.push(LayerSpec::Upsample {
                    height: h,
                    width: w,
                });
                cur = input;
            }
            (LayerSpec::Conv { kernel, pad, .. }, Shape::Chw(c, h, w)) => {
                let (th, tw) = (h + kernel - 1 - 2 * pad, w + kernel - 1 - 2 * pad);
                if !matches!(cur, Shape::Chw(_, ch, cw) if (ch, cw) == (th, tw)) {
                    decoder.push(LayerSpec::Upsample {
                        height: th,
                        width: tw,
                    });
                }
                decoder.push(conv(c, kernel, 1, pad));
                remaining -= 1;
                if remaining > 0 {
                    decoder.push(LayerSpec::Relu);
                }
                cur = input;
            }
            (LayerSpec::Fc { .. }, s) => {
                decoder.push(LayerSpec::Fc { out: s.size() });
                remaining -= 1;
                if remaining > 0 {
                    decoder.push(LayerSpec::Relu);
                }
                if let Shape::Chw(c, h, w) = s {
                    decoder.push(LayerSpec::Reshape {
                        channels: c,
                        height: h,
                        width: w,
                    });
                }
                cur = s;
            }
            (LayerSpec::Relu, _) => {}
            (l, s) => {
                return Err(NetworkError::Invalid(format!(
                    "cannot mirror {l:?} on {s:?}"
                )));
            }
        }
    }
    let mut layers = encoder;
    layers.extend(decoder);
    NetworkSpec::new(layers, k_split, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_preset_accounting() {
        let spec = build_cnn(Preset::Full, 2383, 2).unwrap();
        assert_eq!(spec.n_weighted(), 8);
        assert_eq!(
            spec.weighted_names(),
            ["conv1", "conv2", "conv3", "conv4", "conv5", "fc6", "fc7", "fc8"]
        );
        let counts = spec.parameter_counts().unwrap();
        assert_eq!(counts[5].0, 36_864 * 4_096);
        assert_eq!(counts[5].0, 150_994_944);
        let conv: u64 = counts[..5].iter().map(|c| c.0).sum();
        assert_eq!(conv, 13_248);
        let total: u64 = counts.iter().map(|c| c.0).sum();
        assert_eq!(total, 177_546_176);
    }

    #[test]
    fn desk_preset_shapes() {
        let spec = build_cnn(Preset::Desk, 10, 2).unwrap();
        assert_eq!(spec.n_weighted(), 6);
        assert_eq!(spec.output_shape().unwrap(), Shape::Flat(10));
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[1], Shape::Chw(16, 51, 51));
        assert_eq!(spec.weight_shapes().unwrap()[4].0, vec![256, 256]);
        assert_eq!(spec.weighted_index("fc5"), Some(4));
        assert_eq!(spec.feature_layer(), Some(12));
        assert!(matches!(
            build_cnn(Preset::Desk, 10, 0),
            Err(NetworkError::KSplit { .. })
        ));
        assert!(matches!(
            build_cnn(Preset::Desk, 10, 6),
            Err(NetworkError::KSplit { .. })
        ));
    }

    #[test]
    fn scae_mirrors_encoder() {
        for preset in [Preset::Desk, Preset::Full] {
            let n = if preset == Preset::Full { 8 } else { 6 };
            for k in 1..n {
                let spec = build_cnn(preset, 10, k).unwrap();
                let scae = build_scae(&spec, k).unwrap();
                assert_eq!(
                    scae.output_shape().unwrap(),
                    Shape::Chw(1, 105, 105),
                    "{preset:?} k={k}"
                );
                assert_eq!(scae.n_weighted(), 2 * k);
                let enc = &scae.weight_shapes().unwrap()[..k];
                assert_eq!(enc, &spec.weight_shapes().unwrap()[..k]);
            }
        }
        let desk = build_cnn(Preset::Desk, 10, 2).unwrap();
        let scae = build_scae(&desk, 2).unwrap();
        let convs = scae.layers[..scae.cu_end()]
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count();
        assert_eq!(convs, 2);
        assert!(!matches!(scae.layers.last(), Some(LayerSpec::Relu)));
    }
}
