use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{LayerSpec, NetworkError, NetworkSpec, Result, Shape};
use crate::compress::FactorizedLayer;
use crate::numerics::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, matmul, maxpool2d,
    maxpool2d_backward, relu, relu_backward, softmax, upsample_nearest, upsample_nearest_backward,
    ConvGeometry, Tensor,
};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum Weights {
    Dense(Tensor),
    /// FC weight stored as Ũ·diag(s̃)·Ṽᵀ.
    Factored(FactorizedLayer),
}

impl Weights {
    pub fn dense(&self) -> Option<&Tensor> {
        match self {
            Weights::Dense(t) => Some(t),
            Weights::Factored(_) => None,
        }
    }

    /// The dense matrix, reconstructed when factored.
    pub fn to_dense(&self) -> Tensor {
        match self {
            Weights::Dense(t) => t.clone(),
            Weights::Factored(f) => f.reconstruct(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Weights,
    pub bias: Vec<f64>,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    /// One entry per weighted layer.
    pub params: Vec<LayerParams>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Model {
    /// Gaussian weights, zero biases. Layers feeding a ReLU get std
    /// √(2 / fan_in), the others √(1 / fan_in).
    pub fn init(spec: NetworkSpec, rng: &mut Rng) -> Result<Self> {
        let gains: Vec<f64> = spec
            .weighted_positions()
            .into_iter()
            .map(|p| {
                let next = spec.layers[p + 1..]
                    .iter()
                    .find(|l| !matches!(l, LayerSpec::Dropout { .. }));
                if matches!(next, Some(LayerSpec::Relu)) {
                    2.0
                } else {
                    1.0
                }
            })
            .collect();
        let params = spec
            .weight_shapes()?
            .into_iter()
            .zip(gains)
            .map(|((shape, nb), gain)| {
                let fan_in = if shape.len() == 2 {
                    shape[0]
                } else {
                    shape[1..].iter().product()
                };
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(rng)).collect();
                LayerParams {
                    weights: Weights::Dense(Tensor::new(shape, data).expect("valid shape")),
                    bias: vec![0.0; nb],
                    frozen: false,
                }
            })
            .collect();
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let params = spec
            .weight_shapes()?
            .into_iter()
            .map(|(shape, nb)| LayerParams {
                weights: Weights::Dense(Tensor::zeros(&shape)),
                bias: vec![0.0; nb],
                frozen: false,
            })
            .collect();
        Ok(Self { spec, params })
    }

    /// Check every parameter against the shapes declared by the network spec.
    pub fn check_shapes(&self) -> Result<()> {
        let shapes = self.spec.weight_shapes()?;
        if shapes.len() != self.params.len() {
            return Err(NetworkError::Shape(format!(
                "{} parameter sets for {} weighted layers",
                self.params.len(),
                shapes.len()
            )));
        }
        for (i, ((shape, nb), p)) in shapes.iter().zip(&self.params).enumerate() {
            let actual = match &p.weights {
                Weights::Dense(t) => t.shape().to_vec(),
                Weights::Factored(f) => vec![f.m(), f.n()],
            };
            if &actual != shape || p.bias.len() != *nb {
                return Err(NetworkError::Shape(format!(
                    "layer {i}: weights {actual:?} / bias {} vs spec {shape:?} / {nb}",
                    p.bias.len()
                )));
            }
        }
        Ok(())
    }

    pub fn frozen_mask(&self) -> Vec<bool> {
        self.params.iter().map(|p| p.frozen).collect()
    }

    /// Convert factored layers back to dense matrices.
    pub fn densify(&mut self) {
        for p in &mut self.params {
            if let Weights::Factored(f) = &p.weights {
                p.weights = Weights::Dense(f.reconstruct());
            }
        }
    }
}

/// Activations of every layer plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct Activations {
    /// `values[0]` is the input, `values[i + 1]` the output of layer `i`.
    pub values: Vec<Tensor>,
    pool_indices: Vec<Option<Vec<usize>>>,
    dropout_masks: Vec<Option<Vec<f64>>>,
}

impl Activations {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("input present")
    }

    /// Input of the final softmax if there is one, else the output.
    pub fn logits(&self, spec: &NetworkSpec) -> &Tensor {
        match spec.layers.last() {
            Some(LayerSpec::Softmax) => &self.values[self.values.len() - 2],
            _ => self.output(),
        }
    }
}

fn geometry(stride: usize, pad: usize) -> ConvGeometry {
    ConvGeometry { stride, pad }
}

fn fc_apply(x: &Tensor, p: &LayerParams) -> Result<Tensor> {
    match &p.weights {
        Weights::Dense(w) => Ok(fc_forward(x, w, &p.bias)?),
        Weights::Factored(f) => {
            let (b, m) = x.batch_rows();
            let flat = Tensor::new(vec![b, m], x.data().to_vec())?;
            let mut xu = matmul(&flat, &f.u)?;
            let k = f.k();
            for row in xu.data_mut().chunks_mut(k) {
                for (v, s) in row.iter_mut().zip(&f.s) {
                    *v *= s;
                }
            }
            let mut out = matmul(&xu, &f.v.transpose2()?)?;
            let n = f.n();
            for row in out.data_mut().chunks_mut(n) {
                for (v, bias) in row.iter_mut().zip(&p.bias) {
                    *v += bias;
                }
            }
            Ok(out)
        }
    }
}

/// Forward pass through layers `[0, end)`.
pub fn forward_until(
    model: &Model,
    input: &Tensor,
    mode: Mode,
    rng: &mut Rng,
    end: usize,
) -> Result<Activations> {
    let (c, h, w) = model.spec.input;
    let (_, _, ih, iw) = input.dims4()?;
    if input.shape()[1] != c || (ih, iw) != (h, w) {
        return Err(NetworkError::Shape(format!(
            "input {:?} for a {c}×{h}×{w} network",
            input.shape()
        )));
    }
    let b = input.shape()[0];
    let layers = &model.spec.layers[..end];
    let mut values = Vec::with_capacity(layers.len() + 1);
    let mut pool_indices = vec![None; layers.len()];
    let mut dropout_masks = vec![None; layers.len()];
    values.push(input.clone());
    let mut widx = 0;
    for (i, layer) in layers.iter().enumerate() {
        let x = &values[i];
        let y = match *layer {
            LayerSpec::Conv { stride, pad, .. } => {
                let p = &model.params[widx];
                widx += 1;
                let k = p.weights.dense().ok_or_else(|| {
                    NetworkError::Invalid("conv layers cannot be factored".into())
                })?;
                conv2d_forward(x, k, &p.bias, geometry(stride, pad))?
            }
            LayerSpec::Fc { .. } => {
                let p = &model.params[widx];
                widx += 1;
                fc_apply(x, p)?
            }
            LayerSpec::Pool { window, stride } => {
                let (y, idx) = maxpool2d(x, window, stride)?;
                pool_indices[i] = Some(idx);
                y
            }
            LayerSpec::Relu => relu(x),
            LayerSpec::Dropout { p } => {
                if mode == Mode::Train && p > 0.0 {
                    let keep = 1.0 / (1.0 - p);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if rng.random_bool(1.0 - p) { keep } else { 0.0 })
                        .collect();
                    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    dropout_masks[i] = Some(mask);
                    Tensor::new(x.shape().to_vec(), data)?
                } else {
                    x.clone()
                }
            }
            LayerSpec::Softmax => softmax(&Tensor::new(
                vec![b, x.len() / b.max(1)],
                x.data().to_vec(),
            )?)?,
            LayerSpec::Upsample { height, width } => upsample_nearest(x, height, width)?,
            LayerSpec::Reshape {
                channels,
                height,
                width,
            } => x
                .clone()
                .reshape(&Shape::Chw(channels, height, width).batched(b))?,
        };
        values.push(y);
    }
    Ok(Activations {
        values,
        pool_indices,
        dropout_masks,
    })
}

pub fn forward(model: &Model, input: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Activations> {
    forward_until(model, input, mode, rng, model.spec.layers.len())
}

/// Per weighted layer `(dW, db)`; `None` for frozen layers.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<Option<(Tensor, Vec<f64>)>>,
    /// Gradient with respect to the network input, when every layer is
    /// trainable.
    pub input: Option<Tensor>,
}

/// Backpropagate `grad` (with respect to the logits, or the output when the
/// network has no softmax) down to the lowest trainable layer.
pub fn backward(model: &Model, acts: &Activations, grad: &Tensor) -> Result<Gradients> {
    let spec = &model.spec;
    let mut top = acts.values.len() - 1;
    if matches!(
        spec.layers.get(top.wrapping_sub(1)),
        Some(LayerSpec::Softmax)
    ) {
        top -= 1;
    }
    if grad.shape() != acts.values[top].shape() {
        return Err(NetworkError::Shape(format!(
            "gradient {:?} vs activation {:?}",
            grad.shape(),
            acts.values[top].shape()
        )));
    }
    let positions = spec.weighted_positions();
    let lowest = positions
        .iter()
        .zip(&model.params)
        .find(|(_, p)| !p.frozen)
        .map(|(&pos, _)| pos);
    let mut out = Gradients {
        layers: vec![None; model.params.len()],
        input: None,
    };
    let Some(lowest) = lowest else {
        return Ok(out);
    };
    let mut g = grad.clone();
    let mut widx = positions.iter().filter(|&&p| p < top).count();
    for i in (lowest..top).rev() {
        let x = &acts.values[i];
        g = match spec.layers[i] {
            LayerSpec::Conv { stride, pad, .. } => {
                widx -= 1;
                let p = &model.params[widx];
                let k = p.weights.dense().ok_or_else(|| {
                    NetworkError::Invalid("conv layers cannot be factored".into())
                })?;
                let cg = conv2d_backward(&g, x, k, geometry(stride, pad))?;
                if !p.frozen {
                    out.layers[widx] = Some((cg.kernel, cg.bias));
                }
                cg.input
            }
            LayerSpec::Fc { .. } => {
                widx -= 1;
                let p = &model.params[widx];
                let w = p
                    .weights
                    .dense()
                    .ok_or_else(|| NetworkError::Invalid("training needs dense weights".into()))?;
                let fg = fc_backward(&g, x, w)?;
                if !p.frozen {
                    out.layers[widx] = Some((fg.weight, fg.bias));
                }
                fg.input
            }
            LayerSpec::Pool { .. } => {
                let idx = acts.pool_indices[i]
                    .as_ref()
                    .expect("pool indices recorded");
                maxpool2d_backward(&g, idx, x.shape())?
            }
            LayerSpec::Relu => relu_backward(&g, x)?,
            LayerSpec::Dropout { .. } => match &acts.dropout_masks[i] {
                Some(mask) => {
                    let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                    Tensor::new(g.shape().to_vec(), data)?
                }
                None => g,
            },
            LayerSpec::Upsample { .. } => upsample_nearest_backward(&g, x.shape())?,
            LayerSpec::Reshape { .. } => g.reshape(x.shape())?,
            LayerSpec::Softmax => {
                return Err(NetworkError::Invalid(
                    "softmax must be the final layer".into(),
                ))
            }
        };
    }
    if lowest == 0 {
        out.input = Some(g);
    }
    Ok(out)
}

/// Parameters of a contiguous run of weighted layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFragment {
    pub names: Vec<String>,
    pub params: Vec<LayerParams>,
}

/// C_u (the first K weighted layers) and C_s (the rest).
pub fn split(model: &Model) -> (ModelFragment, ModelFragment) {
    let k = model.spec.k_split;
    let names = model.spec.weighted_names();
    (
        ModelFragment {
            names: names[..k].to_vec(),
            params: model.params[..k].to_vec(),
        },
        ModelFragment {
            names: names[k..].to_vec(),
            params: model.params[k..].to_vec(),
        },
    )
}

pub fn reassemble(spec: NetworkSpec, cu: ModelFragment, cs: ModelFragment) -> Result<Model> {
    let mut params = cu.params;
    params.extend(cs.params);
    let model = Model { spec, params };
    model.check_shapes()?;
    Ok(model)
}

/// Copy encoder weights into the first K weighted layers and freeze them.
pub fn import_cu(model: &mut Model, encoder: &ModelFragment) -> Result<()> {
    let k = model.spec.k_split;
    if encoder.params.len() < k {
        return Err(NetworkError::Shape(format!(
            "encoder has {} layers, C_u needs {k}",
            encoder.params.len()
        )));
    }
    let shapes = model.spec.weight_shapes()?;
    for (i, src) in encoder.params[..k].iter().enumerate() {
        let w = src.weights.to_dense();
        if w.shape() != shapes[i].0.as_slice() || src.bias.len() != shapes[i].1 {
            return Err(NetworkError::Shape(format!(
                "encoder layer {i} has shape {:?}, expected {:?}",
                w.shape(),
                shapes[i].0
            )));
        }
        model.params[i] = LayerParams {
            weights: Weights::Dense(w),
            bias: src.bias.clone(),
            frozen: true,
        };
    }
    Ok(())
}
