//! Cascading layer randomization: re-draws the weights of the `count`
//! weighted layers closest to the output, leaving deeper-in layers
//! bit-identical. Used by the sanity check and for weight initialization.

use crate::error::{Error, Result};
use crate::nn::{Layer, NetworkModel};
use crate::rng::rng_for_index;
use rand::Rng;

/// Returns a copy of `model` in which the top `count` weighted layers,
/// counted from the output end (position 0 = classifier head), have weights
/// and biases re-drawn uniformly in `[-s, s]` with `s = 1/sqrt(fan_in)`.
///
/// The draw for a layer depends only on `(rng_seed, position)`, so runs with
/// increasing `count` and a fixed seed extend each other: the head drawn at
/// `count = 1` is bit-identical to the head drawn at `count = 2`.
pub fn randomize_layers(model: &NetworkModel, count: usize, rng_seed: u64) -> Result<NetworkModel> {
    let weighted = model.weighted_layer_indices();
    if count > weighted.len() {
        return Err(Error::LayerIndexOutOfRange {
            index: count,
            count: weighted.len(),
        });
    }
    let mut out = model.clone();
    for (position, &layer_idx) in weighted.iter().rev().take(count).enumerate() {
        let mut rng = rng_for_index(rng_seed, position as u64);
        let layer = &mut out.layers_mut()[layer_idx];
        let s = 1.0 / (layer.fan_in().expect("weighted layer") as f64).sqrt();
        match layer {
            Layer::Conv2d { weight, bias, .. } | Layer::Linear { weight, bias } => {
                for v in weight.data_mut() {
                    *v = rng.random_range(-s..=s);
                }
                for v in bias.data_mut() {
                    *v = rng.random_range(-s..=s);
                }
            }
            _ => unreachable!("weighted_layer_indices only yields weighted layers"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn model() -> NetworkModel {
        let layers = vec![
            Layer::Conv2d {
                weight: Tensor::full(&[2, 1, 3, 3], 0.5),
                bias: Tensor::zeros(&[2]),
                stride: 1,
                padding: 1,
            },
            Layer::Relu { feature: true },
            Layer::MaxPool2x2,
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::full(&[3, 8], -0.5),
                bias: Tensor::zeros(&[3]),
            },
        ];
        NetworkModel::new(layers, vec![1, 4, 4]).unwrap()
    }

    fn tensors(m: &NetworkModel) -> Vec<&Tensor> {
        m.layers()
            .iter()
            .flat_map(|l| match l {
                Layer::Conv2d { weight, bias, .. } | Layer::Linear { weight, bias } => {
                    vec![weight, bias]
                }
                _ => vec![],
            })
            .collect()
    }

    #[test]
    fn count_zero_leaves_model_unchanged() {
        let m = model();
        let r = randomize_layers(&m, 0, 99).unwrap();
        assert_eq!(tensors(&m), tensors(&r));
    }

    #[test]
    fn count_one_randomizes_only_the_head() {
        let m = model();
        let r = randomize_layers(&m, 1, 99).unwrap();
        let (orig, rand) = (tensors(&m), tensors(&r));
        assert_eq!(orig[0], rand[0], "conv weight untouched");
        assert_eq!(orig[1], rand[1], "conv bias untouched");
        assert_ne!(orig[2], rand[2], "head weight re-drawn");
        let s = 1.0 / (8f64).sqrt();
        assert!(rand[2].data().iter().all(|v| v.abs() <= s));
    }

    #[test]
    fn same_seed_is_deterministic_and_draws_nest() {
        let m = model();
        let a = randomize_layers(&m, 2, 7).unwrap();
        let b = randomize_layers(&m, 2, 7).unwrap();
        assert_eq!(tensors(&a), tensors(&b));
        // Head draw at count=1 matches head draw at count=2.
        let head_only = randomize_layers(&m, 1, 7).unwrap();
        assert_eq!(tensors(&head_only)[2], tensors(&a)[2]);
        assert_eq!(tensors(&head_only)[3], tensors(&a)[3]);
    }

    #[test]
    fn count_out_of_range_is_rejected() {
        let err = randomize_layers(&model(), 3, 0).unwrap_err();
        assert_eq!(err.code(), "layer-index-out-of-range");
    }
}
