//! Reverse-mode gradients of the softmax category score with optional
//! clip hooks at feature layers, plus a central finite-difference oracle.

use crate::error::{Error, Result};
use crate::nn::clip::{apply_clip, ClipMode};
use crate::nn::{ActivationTrace, Layer, NetworkModel};
use crate::tensor::{idx3, Tensor};

/// Gradient-transform hook applied at feature layers during a backward pass.
///
/// `reference_trace` must come from a forward pass of the unperturbed input
/// on the same model; it supplies the `x_ref` activations the clip rules
/// compare against. Hooks always receive the gradient of the category score
/// (never a loss gradient); callers minimizing a negated score negate after
/// the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct GradHook<'a> {
    pub mode: ClipMode,
    pub reference_trace: Option<&'a ActivationTrace>,
}

impl<'a> GradHook<'a> {
    pub fn none() -> GradHook<'static> {
        GradHook {
            mode: ClipMode::None,
            reference_trace: None,
        }
    }

    pub fn new(mode: ClipMode, reference_trace: &'a ActivationTrace) -> GradHook<'a> {
        GradHook {
            mode,
            reference_trace: Some(reference_trace),
        }
    }
}

/// Per-layer parameter gradients produced by [`backward_params`].
pub(crate) struct ParamGrads {
    /// One entry per layer; `Some((weight_grad, bias_grad))` for weighted
    /// layers, `None` otherwise.
    pub grads: Vec<Option<(Tensor, Tensor)>>,
}

/// Gradient of `softmax(logits)[target]` with respect to the logits.
fn softmax_grad_row(probs: &[f64], target: usize) -> Vec<f64> {
    let pt = probs[target];
    probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| if j == target { pt * (1.0 - pt) } else { -pt * pj })
        .collect()
}

fn check_trace(model: &NetworkModel, trace: &ActivationTrace, what: &str) -> Result<()> {
    if trace.num_activations() != model.layers().len()
        || trace.input().shape() != model.input_shape()
    {
        return Err(Error::ShapeMismatch {
            location: what.into(),
            expected: format!(
                "trace of this model ({} layers, input {:?})",
                model.layers().len(),
                model.input_shape()
            ),
            got: format!(
                "{} activations, input {:?}",
                trace.num_activations(),
                trace.input().shape()
            ),
        });
    }
    Ok(())
}

/// Computes the gradient of the target class's softmax probability with
/// respect to the model input. At every feature layer the propagated
/// gradient is first transformed by the hook's clip rule (comparing the
/// trace's activations against the reference trace's) before continuing
/// toward the input.
pub fn backward_category(
    model: &NetworkModel,
    trace: &ActivationTrace,
    target_class: usize,
    hook: &GradHook,
) -> Result<Tensor> {
    if target_class >= model.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "target class {target_class} out of range for {} classes",
            model.num_classes()
        )));
    }
    check_trace(model, trace, "backward trace")?;
    let reference = match (hook.mode, hook.reference_trace) {
        (ClipMode::None, _) => None,
        (mode, None) => {
            return Err(Error::MissingReferenceTrace { mode: mode.name() })
        }
        (_, Some(r)) => {
            check_trace(model, r, "reference trace")?;
            Some(r)
        }
    };
    let seed = softmax_grad_row(trace.probs(), target_class);
    let grad = backward_sweep(model, trace, seed, hook.mode, reference, false)?
        .input_grad;
    grad.ensure_finite("backward_category output")?;
    Ok(grad)
}

/// Parameter gradients of the cross-entropy loss for `target`, used by the
/// trainer. `logit_grad` seeding uses `p - onehot(target)`; no hooks apply.
pub(crate) fn backward_params(
    model: &NetworkModel,
    trace: &ActivationTrace,
    target: usize,
) -> Result<ParamGrads> {
    let mut seed: Vec<f64> = trace.probs().to_vec();
    seed[target] -= 1.0;
    let out = backward_sweep(model, trace, seed, ClipMode::None, None, true)?;
    Ok(ParamGrads {
        grads: out.param_grads,
    })
}

struct SweepOutput {
    input_grad: Tensor,
    param_grads: Vec<Option<(Tensor, Tensor)>>,
}

/// Shared reverse sweep. `logit_grad` seeds the gradient at the final layer
/// output; clipping (when `mode != None`) fires at feature layers before the
/// layer's own backward rule.
fn backward_sweep(
    model: &NetworkModel,
    trace: &ActivationTrace,
    logit_grad: Vec<f64>,
    mode: ClipMode,
    reference: Option<&ActivationTrace>,
    want_params: bool,
) -> Result<SweepOutput> {
    let layers = model.layers();
    let mut param_grads: Vec<Option<(Tensor, Tensor)>> = vec![None; layers.len()];
    let mut g = Tensor::new(
        trace.activation(layers.len() - 1).shape().to_vec(),
        logit_grad,
    )?;
    for i in (0..layers.len()).rev() {
        let layer = &layers[i];
        if layer.is_feature_layer() && mode != ClipMode::None {
            let reference = reference.expect("checked by caller");
            let cur = trace.activation(i).data();
            let refa = reference.activation(i).data();
            let gd = g.data_mut();
            for ((gv, &xc), &xr) in gd.iter_mut().zip(cur).zip(refa) {
                *gv = apply_clip(mode, *gv, xc, xr);
            }
        }
        let input_act: &Tensor = if i == 0 {
            trace.input()
        } else {
            trace.activation(i - 1)
        };
        g = match layer {
            Layer::Relu { .. } => {
                let mut out = g;
                for (gv, &xv) in out.data_mut().iter_mut().zip(input_act.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                out
            }
            Layer::MaxPool2x2 => maxpool_backward(&g, input_act),
            Layer::Flatten => g.reshape(input_act.shape())?,
            Layer::Linear { weight, .. } => {
                if want_params {
                    param_grads[i] = Some(linear_param_grads(&g, input_act));
                }
                linear_backward(&g, weight)
            }
            Layer::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => {
                if want_params {
                    param_grads[i] =
                        Some(conv_param_grads(&g, input_act, weight, *stride, *padding));
                }
                conv_backward(&g, input_act, weight, *stride, *padding)
            }
        };
    }
    Ok(SweepOutput {
        input_grad: g,
        param_grads,
    })
}

fn maxpool_backward(g_out: &Tensor, input: &Tensor) -> Tensor {
    let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let (oh, ow) = (h / 2, w / 2);
    let mut g_in = Tensor::zeros(&[c, h, w]);
    let x = input.data();
    let go = g_out.data();
    let gi = g_in.data_mut();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = idx3(w, h, ch, 2 * oy, 2 * ox);
                // First maximum wins on ties, matching row-major window scan.
                let cand = [base, base + 1, base + w, base + w + 1];
                let mut best = cand[0];
                for &p in &cand[1..] {
                    if x[p] > x[best] {
                        best = p;
                    }
                }
                gi[best] += go[idx3(ow, oh, ch, oy, ox)];
            }
        }
    }
    g_in
}

fn linear_backward(g_out: &Tensor, weight: &Tensor) -> Tensor {
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    let wt = weight.data();
    let go = g_out.data();
    let mut g_in = vec![0.0; in_dim];
    for j in 0..out_dim {
        let gj = go[j];
        if gj == 0.0 {
            continue;
        }
        let row = &wt[j * in_dim..(j + 1) * in_dim];
        for (gi, wv) in g_in.iter_mut().zip(row) {
            *gi += wv * gj;
        }
    }
    Tensor::new(vec![in_dim], g_in).expect("linear grad size")
}

fn linear_param_grads(g_out: &Tensor, input: &Tensor) -> (Tensor, Tensor) {
    let out_dim = g_out.len();
    let in_dim = input.len();
    let x = input.data();
    let go = g_out.data();
    let mut gw = vec![0.0; out_dim * in_dim];
    for j in 0..out_dim {
        let gj = go[j];
        if gj == 0.0 {
            continue;
        }
        let row = &mut gw[j * in_dim..(j + 1) * in_dim];
        for (wv, xv) in row.iter_mut().zip(x) {
            *wv = gj * xv;
        }
    }
    (
        Tensor::new(vec![out_dim, in_dim], gw).expect("weight grad size"),
        Tensor::new(vec![out_dim], go.to_vec()).expect("bias grad size"),
    )
}

fn conv_backward(
    g_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
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
    let (oh, ow) = (g_out.shape()[1], g_out.shape()[2]);
    let mut g_in = Tensor::zeros(&[ic, h, w]);
    let wt = weight.data();
    let go = g_out.data();
    let gi = g_in.data_mut();
    for co in 0..oc {
        let obase = co * oh * ow;
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
                        let orow = obase + oy * ow;
                        let irow = idx3(w, h, ci, iy, 0);
                        for ox in 0..ow {
                            let ix = (ox * stride + kx).wrapping_sub(padding);
                            if ix < w {
                                gi[irow + ix] += wv * go[orow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    g_in
}

fn conv_param_grads(
    g_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor) {
    let [ic, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let [oc, _, kh, kw] = [
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    ];
    let (oh, ow) = (g_out.shape()[1], g_out.shape()[2]);
    let x = input.data();
    let go = g_out.data();
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; oc];
    for co in 0..oc {
        let obase = co * oh * ow;
        gb[co] = go[obase..obase + oh * ow].iter().sum();
        for ci in 0..ic {
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky).wrapping_sub(padding);
                        if iy >= h {
                            continue;
                        }
                        let orow = obase + oy * ow;
                        let irow = idx3(w, h, ci, iy, 0);
                        for ox in 0..ow {
                            let ix = (ox * stride + kx).wrapping_sub(padding);
                            if ix < w {
                                acc += go[orow + ox] * x[irow + ix];
                            }
                        }
                    }
                    gw[((co * ic + ci) * kh + ky) * kw + kx] = acc;
                }
            }
        }
    }
    (
        Tensor::new(weight.shape().to_vec(), gw).expect("conv weight grad size"),
        Tensor::new(vec![oc], gb).expect("conv bias grad size"),
    )
}

/// Central finite differences of the target softmax probability over every
/// input element, the oracle backward passes are checked against.
pub fn finite_diff_gradient(
    model: &NetworkModel,
    input: &Tensor,
    target_class: usize,
    step: f64,
) -> Result<Tensor> {
    if step <= 0.0 {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    if target_class >= model.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "target class {target_class} out of range for {} classes",
            model.num_classes()
        )));
    }
    let mut probe = input.clone();
    let mut grad = Tensor::zeros(input.shape());
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = crate::nn::forward(model, &probe)?.prob_of(target_class);
        probe.data_mut()[i] = orig - step;
        let minus = crate::nn::forward(model, &probe)?.prob_of(target_class);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::forward;

    fn two_class_linear() -> NetworkModel {
        let layers = vec![
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::new(vec![2, 3], vec![0.5, -0.2, 0.1, -0.4, 0.3, 0.2]).unwrap(),
                bias: Tensor::new(vec![2], vec![0.05, -0.05]).unwrap(),
            },
        ];
        NetworkModel::new(layers, vec![1, 1, 3]).unwrap()
    }

    #[test]
    fn linear_softmax_gradient_matches_closed_form() {
        let model = two_class_linear();
        let input = Tensor::new(vec![1, 1, 3], vec![0.3, -0.6, 0.9]).unwrap();
        let trace = forward(&model, &input).unwrap();
        let grad = backward_category(&model, &trace, 0, &GradHook::none()).unwrap();
        // d p0 / dx = p0 (1 - p0) (w0 - w1) for 2-class softmax of Wx + b.
        let p0 = trace.prob_of(0);
        let w = [0.5 - (-0.4), -0.2 - 0.3, 0.1 - 0.2];
        for (got, wv) in grad.data().iter().zip(&w) {
            let expect = p0 * (1.0 - p0) * wv;
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn missing_reference_is_rejected_for_clipping_modes() {
        let model = two_class_linear();
        let input = Tensor::new(vec![1, 1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        let trace = forward(&model, &input).unwrap();
        let hook = GradHook {
            mode: ClipMode::Vm,
            reference_trace: None,
        };
        let err = backward_category(&model, &trace, 0, &hook).unwrap_err();
        assert_eq!(err.code(), "missing-reference-trace");
    }

    #[test]
    fn constant_model_has_zero_finite_diff_gradient() {
        let model = two_class_linear();
        // Zero weights elsewhere: build one explicitly.
        let layers = vec![
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap(),
                bias: Tensor::new(vec![2], vec![0.7, -0.7]).unwrap(),
            },
        ];
        let constant = NetworkModel::new(layers, vec![1, 1, 3]).unwrap();
        let input = Tensor::new(vec![1, 1, 3], vec![0.4, 0.5, 0.6]).unwrap();
        let fd = finite_diff_gradient(&constant, &input, 0, 1e-5).unwrap();
        assert!(fd.data().iter().all(|&v| v.abs() < 1e-12));
        drop(model);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let layers = vec![
            Layer::Conv2d {
                weight: Tensor::zeros(&[2, 1, 3, 3]),
                bias: Tensor::zeros(&[2]),
                stride: 1,
                padding: 1,
            },
            Layer::Relu { feature: true },
            Layer::MaxPool2x2,
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::zeros(&[3, 18]),
                bias: Tensor::zeros(&[3]),
            },
        ];
        let base = NetworkModel::new(layers, vec![1, 6, 6]).unwrap();
        let model = crate::nn::randomize::randomize_layers(&base, 2, 77).unwrap();
        let mut rng = crate::rng::rng_from_seed(123);
        let input = Tensor::new(
            vec![1, 6, 6],
            (0..36)
                .map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0))
                .collect(),
        )
        .unwrap();
        let target = 1usize;
        let ce = |m: &NetworkModel| -> f64 {
            -forward(m, &input).unwrap().prob_of(target).ln()
        };

        let trace = forward(&model, &input).unwrap();
        let analytic = backward_params(&model, &trace, target).unwrap();
        let step = 1e-6;
        let mut worst = 0.0f64;
        for (li, entry) in analytic.grads.iter().enumerate() {
            let Some((gw, gb)) = entry else { continue };
            for (which, grad) in [(0usize, gw), (1usize, gb)] {
                for k in 0..grad.len() {
                    let mut probe = model.clone();
                    let tweak = |m: &mut NetworkModel, delta: f64| match &mut m.layers_mut()[li] {
                        Layer::Conv2d { weight, bias, .. } | Layer::Linear { weight, bias } => {
                            let t = if which == 0 { weight } else { bias };
                            t.data_mut()[k] += delta;
                        }
                        _ => unreachable!(),
                    };
                    tweak(&mut probe, step);
                    let plus = ce(&probe);
                    tweak(&mut probe, -2.0 * step);
                    let minus = ce(&probe);
                    let numeric = (plus - minus) / (2.0 * step);
                    let a = grad.data()[k];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn hook_with_equal_traces_and_vm_passes_positive_gradients() {
        // Feature ReLU inside a conv stage; reference == current trace, so
        // x_cur == x_ref everywhere and VM only zeroes negative gradients.
        let layers = vec![
            Layer::Conv2d {
                weight: Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
                bias: Tensor::zeros(&[1]),
                stride: 1,
                padding: 0,
            },
            Layer::Relu { feature: true },
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::new(vec![2, 4], vec![0.9, 0.8, 0.7, 0.6, 0.1, 0.2, 0.3, 0.4])
                    .unwrap(),
                bias: Tensor::zeros(&[2]),
            },
        ];
        let model = NetworkModel::new(layers, vec![1, 2, 2]).unwrap();
        let input = Tensor::new(vec![1, 2, 2], vec![0.5, 0.6, 0.7, 0.8]).unwrap();
        let trace = forward(&model, &input).unwrap();
        let plain = backward_category(&model, &trace, 0, &GradHook::none()).unwrap();
        // Class 0 has the larger weights, so its score gradient wrt every
        // activation is positive here.
        assert!(plain.data().iter().all(|&v| v > 0.0));
        let hook = GradHook::new(ClipMode::Vm, &trace);
        let clipped = backward_category(&model, &trace, 0, &hook).unwrap();
        assert_eq!(plain.data(), clipped.data());
    }
}
