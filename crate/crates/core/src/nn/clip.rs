//! Gradient clip rules applied at feature layers during attribution
//! backward passes.
//!
//! Each rule decides, per activation unit, whether the incoming gradient
//! `gamma` of the category score with respect to that unit is kept or zeroed.
//! The decision compares the current activation `x_cur` against a reference
//! activation `x_ref` recorded from an unperturbed forward pass.

use crate::error::Result;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Which clip rule a backward pass applies at feature layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// Plain gradient, no clipping.
    None,
    /// Value matching: keep only gradients that pull the activation toward
    /// its reference value from either side.
    Vm,
    /// Inhibit value matching: zero positive gradients once the activation
    /// exceeds its reference.
    Ivm,
    /// Allow value matching: zero negative gradients once the activation is
    /// at or below its reference.
    Avm,
    /// Inhibit backprop: zero positive gradients wherever the reference
    /// activation itself is non-positive.
    Ibm,
}

impl ClipMode {
    pub const ALL: [ClipMode; 5] = [
        ClipMode::None,
        ClipMode::Vm,
        ClipMode::Ivm,
        ClipMode::Avm,
        ClipMode::Ibm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ClipMode::None => "none",
            ClipMode::Vm => "vm",
            ClipMode::Ivm => "ivm",
            ClipMode::Avm => "avm",
            ClipMode::Ibm => "ibm",
        }
    }

    pub fn parse(s: &str) -> Option<ClipMode> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Some(ClipMode::None),
            "vm" => Some(ClipMode::Vm),
            "ivm" => Some(ClipMode::Ivm),
            "avm" => Some(ClipMode::Avm),
            "ibm" => Some(ClipMode::Ibm),
            _ => None,
        }
    }

    /// True when backward passes under this mode need a reference trace.
    pub fn needs_reference(&self) -> bool {
        !matches!(self, ClipMode::None)
    }
}

/// Applies one clip rule to a single unit.
///
/// `gamma` is the gradient of the category score with respect to the unit's
/// activation, `x_cur` the activation in the current (perturbed) pass and
/// `x_ref` the activation in the reference pass.
#[inline]
pub fn apply_clip(mode: ClipMode, gamma: f64, x_cur: f64, x_ref: f64) -> f64 {
    match mode {
        ClipMode::None => gamma,
        ClipMode::Vm => {
            if (gamma >= 0.0 && x_cur > x_ref) || (gamma < 0.0 && x_cur <= x_ref) {
                0.0
            } else {
                gamma
            }
        }
        ClipMode::Ivm => {
            if gamma >= 0.0 && x_cur > x_ref {
                0.0
            } else {
                gamma
            }
        }
        ClipMode::Avm => {
            if gamma < 0.0 && x_cur <= x_ref {
                0.0
            } else {
                gamma
            }
        }
        ClipMode::Ibm => {
            if gamma >= 0.0 && x_ref <= 0.0 {
                0.0
            } else {
                gamma
            }
        }
    }
}

/// Tensor form of [`apply_clip`]: clips `gamma` elementwise against the
/// perturbed and reference activations, which must share its shape.
pub fn apply_clip_tensor(
    gamma: &Tensor,
    perturbed_act: &Tensor,
    reference_act: &Tensor,
    mode: ClipMode,
) -> Result<Tensor> {
    gamma.ensure_same_shape(perturbed_act, "apply_clip perturbed activation")?;
    gamma.ensure_same_shape(reference_act, "apply_clip reference activation")?;
    let data = gamma
        .data()
        .iter()
        .zip(perturbed_act.data())
        .zip(reference_act.data())
        .map(|((&g, &xc), &xr)| apply_clip(mode, g, xc, xr))
        .collect();
    Tensor::new(gamma.shape().to_vec(), data)
}
