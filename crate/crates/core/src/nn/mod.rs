//! Minimal dense CNN engine: forward inference with full activation traces,
//! reverse-mode input gradients with per-layer clipping hooks, weight file
//! round-tripping, layer randomization and a small seeded trainer.
//!
//! Activations are `[channels, height, width]` tensors until the first
//! `Flatten`, then flat vectors. Models are immutable after construction and
//! safe to share across threads.

pub mod adam;
pub mod backward;
pub mod clip;
pub mod randomize;
pub mod serialize;
pub mod train;

pub use backward::{backward_category, finite_diff_gradient, GradHook};
pub use clip::{apply_clip, ClipMode};
pub use randomize::randomize_layers;
pub use serialize::{load_weights, save_weights};
pub use train::{train_fixture, FixtureConfig, TrainReport};

use crate::error::{Error, Result};
use crate::tensor::{idx3, Tensor};

/// One layer of a [`NetworkModel`].
#[derive(Debug, Clone)]
pub enum Layer {
    /// 2-D convolution; weight `[out_c, in_c, kh, kw]`, bias `[out_c]`.
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    /// Elementwise `max(x, 0)`. `feature` marks it as a feature-extraction
    /// layer eligible for gradient clipping.
    Relu { feature: bool },
    /// 2x2 max pooling with stride 2; spatial extents must be even.
    MaxPool2x2,
    /// Collapses `[c, h, w]` to a flat vector.
    Flatten,
    /// Affine map; weight `[out, in]`, bias `[out]`.
    Linear { weight: Tensor, bias: Tensor },
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu { .. } => "relu",
            Layer::MaxPool2x2 => "maxpool2x2",
            Layer::Flatten => "flatten",
            Layer::Linear { .. } => "linear",
        }
    }

    pub fn is_feature_layer(&self) -> bool {
        matches!(self, Layer::Relu { feature: true })
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Linear { .. })
    }

    /// Number of input connections feeding one output unit.
    pub fn fan_in(&self) -> Option<usize> {
        match self {
            Layer::Conv2d { weight, .. } => {
                let s = weight.shape();
                Some(s[1] * s[2] * s[3])
            }
            Layer::Linear { weight, .. } => Some(weight.shape()[1]),
            _ => None,
        }
    }

    /// Output shape for the given input shape, or an error if incompatible.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let fail = |msg: String| -> Result<Vec<usize>> {
            Err(Error::ShapeMismatch {
                location: self.kind_name().into(),
                expected: msg,
                got: format!("{input:?}"),
            })
        };
        match self {
            Layer::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => {
                let [oc, ic, kh, kw] = [
                    weight.shape()[0],
                    weight.shape()[1],
                    weight.shape()[2],
                    weight.shape()[3],
                ];
                if input.len() != 3 || input[0] != ic {
                    return fail(format!("[{ic}, h, w] input"));
                }
                let (h, w) = (input[1], input[2]);
                if h + 2 * padding < kh || w + 2 * padding < kw {
                    return fail(format!("spatial extent >= {kh}x{kw} after padding"));
                }
                let oh = (h + 2 * padding - kh) / stride + 1;
                let ow = (w + 2 * padding - kw) / stride + 1;
                Ok(vec![oc, oh, ow])
            }
            Layer::Relu { .. } => Ok(input.to_vec()),
            Layer::MaxPool2x2 => {
                if input.len() != 3 || !input[1].is_multiple_of(2) || !input[2].is_multiple_of(2) {
                    return fail("[c, even h, even w] input".into());
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Linear { weight, .. } => {
                let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
                if input != [in_dim] {
                    return fail(format!("[{in_dim}] input"));
                }
                Ok(vec![out_dim])
            }
        }
    }

    /// Applies the layer to `input` (shape already validated).
    fn forward(&self, input: &Tensor) -> Tensor {
        match self {
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => conv2d_forward(input, weight, bias, *stride, *padding),
            Layer::Relu { .. } => input.map(|v| if v > 0.0 { v } else { 0.0 }),
            Layer::MaxPool2x2 => maxpool_forward(input),
            Layer::Flatten => input
                .reshape(&[input.len()])
                .expect("flatten preserves element count"),
            Layer::Linear { weight, bias } => linear_forward(input, weight, bias),
        }
    }
}

fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Tensor {
    let [ic, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let [oc, _, kh, kw] = [
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    ];
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = Tensor::zeros(&[oc, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    let o = out.data_mut();
    for co in 0..oc {
        let base = co * oh * ow;
        o[base..base + oh * ow].fill(bias.data()[co]);
        for ci in 0..ic {
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wt[((co * ic + ci) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky).wrapping_sub(padding);
                        if iy >= h {
                            continue;
                        }
                        let orow = base + oy * ow;
                        let irow = idx3(w, h, ci, iy, 0);
                        for ox in 0..ow {
                            let ix = (ox * stride + kx).wrapping_sub(padding);
                            if ix < w {
                                o[orow + ox] += wv * x[irow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn maxpool_forward(input: &Tensor) -> Tensor {
    let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let x = input.data();
    let o = out.data_mut();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = idx3(w, h, ch, 2 * oy, 2 * ox);
                let m = x[i].max(x[i + 1]).max(x[i + w]).max(x[i + w + 1]);
                o[idx3(ow, oh, ch, oy, ox)] = m;
            }
        }
    }
    out
}

fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    let x = input.data();
    let wt = weight.data();
    let mut out = bias.data().to_vec();
    for (j, oj) in out.iter_mut().enumerate() {
        let row = &wt[j * in_dim..(j + 1) * in_dim];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *oj += acc;
    }
    Tensor::new(vec![out_dim], out).expect("linear output size")
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Ordered layer list with validated shape composition.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    num_classes: usize,
}

impl NetworkModel {
    /// Validates that consecutive layer shapes compose, that the final layer
    /// emits a flat class vector and that feature flags only appear on ReLU
    /// layers before the first `Flatten`.
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        let mut shape = input_shape.clone();
        let mut seen_flatten = false;
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| match e {
                Error::ShapeMismatch { expected, got, .. } => Error::ShapeMismatch {
                    location: format!("layer {i} ({})", layer.kind_name()),
                    expected,
                    got,
                },
                other => other,
            })?;
            if matches!(layer, Layer::Flatten) {
                seen_flatten = true;
            }
            if layer.is_feature_layer() && seen_flatten {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: feature flag not allowed after flatten"
                )));
            }
        }
        if shape.len() != 1 {
            return Err(Error::ShapeMismatch {
                location: "model output".into(),
                expected: "flat class vector".into(),
                got: format!("{shape:?}"),
            });
        }
        Ok(NetworkModel {
            num_classes: shape[0],
            layers,
            input_shape,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Indices of weighted layers (conv/linear), input to output order.
    pub fn weighted_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_weights())
            .map(|(i, _)| i)
            .collect()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut Vec<Layer> {
        &mut self.layers
    }
}

/// Everything recorded during one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    input: Tensor,
    activations: Vec<Tensor>,
    probs: Vec<f64>,
}

impl ActivationTrace {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    /// Output tensor of layer `i`.
    pub fn activation(&self, i: usize) -> &Tensor {
        &self.activations[i]
    }

    pub fn num_activations(&self) -> usize {
        self.activations.len()
    }

    pub fn logits(&self) -> &[f64] {
        self.activations
            .last()
            .expect("trace has at least one layer")
            .data()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_of(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Index of the most probable class (first one on ties).
    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }
}

/// Runs the model on `input`, recording every layer output and the softmax
/// of the final logits.
pub fn forward(model: &NetworkModel, input: &Tensor) -> Result<ActivationTrace> {
    if input.shape() != model.input_shape() {
        return Err(Error::ShapeMismatch {
            location: "forward input".into(),
            expected: format!("{:?}", model.input_shape()),
            got: format!("{:?}", input.shape()),
        });
    }
    input.ensure_finite("forward input")?;
    let mut activations = Vec::with_capacity(model.layers.len());
    let mut current = input;
    for layer in &model.layers {
        let out = layer.forward(current);
        activations.push(out);
        current = activations.last().unwrap();
    }
    let logits = activations.last().unwrap();
    logits.ensure_finite("forward logits")?;
    let probs = softmax(logits.data());
    Ok(ActivationTrace {
        input: input.clone(),
        activations,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear_model(weight: Vec<f64>, bias: Vec<f64>, in_dim: usize, out_dim: usize) -> NetworkModel {
        let layers = vec![
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::new(vec![out_dim, in_dim], weight).unwrap(),
                bias: Tensor::new(vec![out_dim], bias).unwrap(),
            },
        ];
        NetworkModel::new(layers, vec![1, 1, in_dim]).unwrap()
    }

    #[test]
    fn zero_weight_two_class_model_gives_uniform_probs() {
        let model = linear_model(vec![0.0; 6], vec![0.0; 2], 3, 2);
        let input = Tensor::new(vec![1, 1, 3], vec![0.3, -1.2, 5.0]).unwrap();
        let trace = forward(&model, &input).unwrap();
        assert_eq!(trace.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_kernel_conv_preserves_input() {
        let layers = vec![
            Layer::Conv2d {
                weight: Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
                bias: Tensor::zeros(&[1]),
                stride: 1,
                padding: 0,
            },
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::new(vec![2, 4], vec![0.0; 8]).unwrap(),
                bias: Tensor::zeros(&[2]),
            },
        ];
        let model = NetworkModel::new(layers, vec![1, 2, 2]).unwrap();
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let trace = forward(&model, &input).unwrap();
        assert_eq!(trace.activation(0).data(), input.data());
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let model = linear_model(vec![0.0; 6], vec![0.0; 2], 3, 2);
        let input = Tensor::zeros(&[1, 1, 4]);
        let err = forward(&model, &input).unwrap_err();
        assert!(err.to_string().contains("forward input"));
    }

    #[test]
    fn model_validation_names_offending_layer() {
        let layers = vec![
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::new(vec![2, 5], vec![0.0; 10]).unwrap(),
                bias: Tensor::zeros(&[2]),
            },
        ];
        let err = NetworkModel::new(layers, vec![1, 1, 3]).unwrap_err();
        assert!(err.to_string().contains("layer 1 (linear)"), "{err}");
    }

    #[test]
    fn feature_flag_after_flatten_is_rejected() {
        let layers = vec![
            Layer::Flatten,
            Layer::Relu { feature: true },
            Layer::Linear {
                weight: Tensor::new(vec![2, 3], vec![0.1; 6]).unwrap(),
                bias: Tensor::zeros(&[2]),
            },
        ];
        assert!(NetworkModel::new(layers, vec![1, 1, 3]).is_err());
    }

    #[test]
    fn maxpool_takes_window_maxima() {
        let layers = vec![
            Layer::MaxPool2x2,
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap(),
                bias: Tensor::zeros(&[2]),
            },
        ];
        let model = NetworkModel::new(layers, vec![1, 2, 2]).unwrap();
        let input = Tensor::new(vec![1, 2, 2], vec![0.5, -3.0, 2.5, 1.0]).unwrap();
        let trace = forward(&model, &input).unwrap();
        assert_eq!(trace.activation(0).data(), &[2.5]);
    }

    #[test]
    fn conv_padding_and_stride_shapes() {
        let conv = Layer::Conv2d {
            weight: Tensor::zeros(&[4, 2, 3, 3]),
            bias: Tensor::zeros(&[4]),
            stride: 2,
            padding: 1,
        };
        assert_eq!(conv.output_shape(&[2, 8, 8]).unwrap(), vec![4, 4, 4]);
        assert!(conv.output_shape(&[3, 8, 8]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_normalized_for_wide_logit_range(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..16)
        ) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "sum = {sum}");
        }
    }
}
