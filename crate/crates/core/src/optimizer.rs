//! Fractile-ensemble attribution optimization: smooth keep-probability maps
//! per fraction, parameterized by nonnegative deltas whose cumulative sums
//! stay consistent, optimized with Adam against perturbation objectives with
//! a growing area penalty, and assembled into one attribution map.

use crate::error::{Error, Result};
use crate::nn::adam::{Adam, AdamParams};
use crate::nn::backward::{backward_category, GradHook};
use crate::nn::clip::ClipMode;
use crate::nn::{forward, ActivationTrace, NetworkModel};
use crate::rng::rng_for_index;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Pixel value range all images and references live in.
pub const PIXEL_MIN: f64 = 0.0;
pub const PIXEL_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Preservation,
    Deletion,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Preservation => "preservation",
            Objective::Deletion => "deletion",
        }
    }

    pub fn parse(s: &str) -> Option<Objective> {
        match s.to_ascii_lowercase().as_str() {
            "preservation" => Some(Objective::Preservation),
            "deletion" => Some(Objective::Deletion),
            _ => None,
        }
    }
}

/// Optimization mode: the full fractile ensemble or one of its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptMode {
    /// Full schedule of descending fractions.
    Ensemble,
    /// One map, area term disabled.
    SingleMapNoArea,
    /// One map at fraction 1, where the area target is zero mass and the
    /// penalty reduces to an L1 term on alpha.
    SingleMapL1,
}

impl OptMode {
    pub fn name(&self) -> &'static str {
        match self {
            OptMode::Ensemble => "ensemble",
            OptMode::SingleMapNoArea => "single",
            OptMode::SingleMapL1 => "l1",
        }
    }

    pub fn parse(s: &str) -> Option<OptMode> {
        match s.to_ascii_lowercase().as_str() {
            "ensemble" => Some(OptMode::Ensemble),
            "single" => Some(OptMode::SingleMapNoArea),
            "l1" => Some(OptMode::SingleMapL1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ReferenceKind {
    /// Constant image, one fresh uniform draw per iteration.
    RandomMonotone,
    /// Constant mid-range image.
    Gray,
    /// Constant minimum image.
    Black,
    /// Input blurred with a separable Gaussian, reflected edges.
    GaussianBlur { sigma: f64 },
    /// Elementwise uniform noise.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub kind: ReferenceKind,
    pub rng_seed: u64,
}

impl ReferenceSpec {
    pub fn new(kind: ReferenceKind, rng_seed: u64) -> ReferenceSpec {
        ReferenceSpec { kind, rng_seed }
    }

    /// True when the reference changes between iterations.
    pub fn per_iteration(&self) -> bool {
        matches!(
            self.kind,
            ReferenceKind::RandomMonotone | ReferenceKind::Noise
        )
    }
}

/// Builds the reference image for one iteration. Deterministic in
/// `(spec.rng_seed, iteration)`.
pub fn make_reference(spec: &ReferenceSpec, x: &Tensor, iteration: u64) -> Result<Tensor> {
    match spec.kind {
        ReferenceKind::Gray => Ok(Tensor::full(
            x.shape(),
            (PIXEL_MIN + PIXEL_MAX) / 2.0,
        )),
        ReferenceKind::Black => Ok(Tensor::full(x.shape(), PIXEL_MIN)),
        ReferenceKind::RandomMonotone => {
            let mut rng = rng_for_index(spec.rng_seed, iteration);
            let v = rng.random_range(PIXEL_MIN..=PIXEL_MAX);
            Ok(Tensor::full(x.shape(), v))
        }
        ReferenceKind::Noise => {
            let mut rng = rng_for_index(spec.rng_seed, iteration);
            let mut out = Tensor::zeros(x.shape());
            for v in out.data_mut() {
                *v = rng.random_range(PIXEL_MIN..=PIXEL_MAX);
            }
            Ok(out)
        }
        ReferenceKind::GaussianBlur { sigma } => gaussian_blur(x, sigma),
    }
}

/// Separable Gaussian blur with kernel radius `ceil(3*sigma)` and
/// half-sample reflection at the edges.
pub fn gaussian_blur(x: &Tensor, sigma: f64) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    if x.shape().len() != 3 {
        return Err(Error::ShapeMismatch {
            location: "gaussian_blur".into(),
            expected: "[c, h, w]".into(),
            got: format!("{:?}", x.shape()),
        });
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for d in -radius..=radius {
        kernel.push((-((d * d) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - i - 1;
        }
        i as usize
    };
    let [c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let mut horiz = vec![0.0; x.len()];
    let data = x.data();
    for ch in 0..c {
        for y in 0..h {
            let row = ch * h * w + y * w;
            for xx in 0..w {
                let mut acc = 0.0;
                for (ki, d) in (-radius..=radius).enumerate() {
                    acc += kernel[ki] * data[row + mirror(xx as isize + d, w)];
                }
                horiz[row + xx] = acc;
            }
        }
    }
    let mut out = Tensor::zeros(x.shape());
    let od = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (ki, d) in (-radius..=radius).enumerate() {
                    let yy = mirror(y as isize + d, h);
                    acc += kernel[ki] * horiz[ch * h * w + yy * w + xx];
                }
                od[ch * h * w + y * w + xx] = acc;
            }
        }
    }
    Ok(out)
}

fn check_alpha(alpha: &Tensor, x: &Tensor, location: &str) -> Result<()> {
    let spatial = &x.shape()[1..];
    if alpha.shape() != spatial {
        return Err(Error::ShapeMismatch {
            location: location.into(),
            expected: format!("{spatial:?}"),
            got: format!("{:?}", alpha.shape()),
        });
    }
    if alpha.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!(
            "{location}: alpha values must lie in [0, 1]"
        )));
    }
    Ok(())
}

/// `alpha (.) x + (1 - alpha) (.) R`, alpha broadcast over channels: the
/// expected preservation perturbation, keeping pixels with high alpha.
pub fn blend_lower(x: &Tensor, alpha: &Tensor, reference: &Tensor) -> Result<Tensor> {
    x.ensure_same_shape(reference, "blend reference")?;
    check_alpha(alpha, x, "blend_lower alpha")?;
    let plane = alpha.len();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let a = alpha.data()[i % plane];
        *v = a * x.data()[i] + (1.0 - a) * reference.data()[i];
    }
    Ok(out)
}

/// `(1 - alpha) (.) x + alpha (.) R`: the deletion perturbation, erasing
/// pixels with high alpha.
pub fn blend_upper(x: &Tensor, alpha: &Tensor, reference: &Tensor) -> Result<Tensor> {
    x.ensure_same_shape(reference, "blend reference")?;
    check_alpha(alpha, x, "blend_upper alpha")?;
    let plane = alpha.len();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let a = alpha.data()[i % plane];
        *v = (1.0 - a) * x.data()[i] + a * reference.data()[i];
    }
    Ok(out)
}

/// Absolute deviation of the alpha mass from its target `(1 - f) * N`.
pub fn area_term(alpha: &Tensor, f: f64) -> f64 {
    (alpha.sum() - (1.0 - f) * alpha.len() as f64).abs()
}

/// Area weight at 1-based iteration `t`: `c * t`.
pub fn beta_schedule(t: usize, c: f64) -> f64 {
    c * t as f64
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grad_alpha: Tensor,
    /// Softmax probabilities of the blended input.
    pub probs: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn blend_loss(
    model: &NetworkModel,
    x: &Tensor,
    trace_ref: &ActivationTrace,
    alpha: &Tensor,
    f: f64,
    beta1: f64,
    reference: &Tensor,
    clip: ClipMode,
    target: usize,
    objective: Objective,
) -> Result<LossEval> {
    let blended = match objective {
        Objective::Preservation => blend_lower(x, alpha, reference)?,
        Objective::Deletion => blend_upper(x, alpha, reference)?,
    };
    let trace = forward(model, &blended)?;
    let phi = trace.prob_of(target);
    let delta = area_term(alpha, f);
    let loss = match objective {
        Objective::Preservation => -phi + beta1 * delta,
        Objective::Deletion => phi + beta1 * delta,
    };
    let hook = match clip {
        ClipMode::None => GradHook::none(),
        mode => GradHook::new(mode, trace_ref),
    };
    let g_input = backward_category(model, &trace, target, &hook)?;
    // d(blend)/d(alpha) is (x - R) for the lower blend and (R - x) for the
    // upper one; the loss sign flips alongside, so the network part of the
    // gradient is -(x - R) times the score gradient for both objectives.
    // The area gradient bypasses the hook.
    let plane = alpha.len();
    let area_grad = beta1 * sign(alpha.sum() - (1.0 - f) * plane as f64);
    let mut grad = Tensor::zeros(alpha.shape());
    let gd = grad.data_mut();
    for (i, &g) in g_input.data().iter().enumerate() {
        gd[i % plane] -= g * (x.data()[i] - reference.data()[i]);
    }
    for v in gd.iter_mut() {
        *v += area_grad;
    }
    Ok(LossEval {
        loss,
        grad_alpha: grad,
        probs: trace.probs().to_vec(),
    })
}

/// Preservation loss `-phi(blend_lower) + beta1 * Delta` and its alpha
/// gradient. `trace_ref` is the unperturbed input's trace; the clip hook
/// sees only the network part of the gradient.
#[allow(clippy::too_many_arguments)]
pub fn preservation_loss(
    model: &NetworkModel,
    x: &Tensor,
    trace_ref: &ActivationTrace,
    alpha: &Tensor,
    f: f64,
    beta1: f64,
    reference: &Tensor,
    clip: ClipMode,
    target: usize,
) -> Result<LossEval> {
    blend_loss(
        model,
        x,
        trace_ref,
        alpha,
        f,
        beta1,
        reference,
        clip,
        target,
        Objective::Preservation,
    )
}

/// Deletion loss `phi(blend_upper) + beta1 * Delta`, mirror of
/// [`preservation_loss`].
#[allow(clippy::too_many_arguments)]
pub fn deletion_loss(
    model: &NetworkModel,
    x: &Tensor,
    trace_ref: &ActivationTrace,
    alpha: &Tensor,
    f: f64,
    beta1: f64,
    reference: &Tensor,
    clip: ClipMode,
    target: usize,
) -> Result<LossEval> {
    blend_loss(
        model,
        x,
        trace_ref,
        alpha,
        f,
        beta1,
        reference,
        clip,
        target,
        Objective::Deletion,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FractileSchedule {
    /// Strictly descending fractions; in (0, 1) for the ensemble, a single
    /// entry (1.0 allowed) for the single-map ablations.
    pub fractions: Vec<f64>,
    pub iterations_per_fraction: usize,
    /// Per-iteration growth coefficient of the area weight.
    pub beta_coefficient: f64,
}

impl FractileSchedule {
    /// The default experimental schedule: five fractions, 100 iterations
    /// each, area weight growing by 0.01 per iteration.
    pub fn default_ensemble() -> FractileSchedule {
        FractileSchedule {
            fractions: vec![0.9, 0.7, 0.5, 0.3, 0.1],
            iterations_per_fraction: 100,
            beta_coefficient: 0.01,
        }
    }

    pub fn single(fraction: f64) -> FractileSchedule {
        FractileSchedule {
            fractions: vec![fraction],
            ..FractileSchedule::default_ensemble()
        }
    }

    pub fn l1() -> FractileSchedule {
        FractileSchedule::single(1.0)
    }

    pub fn validate(&self, mode: OptMode) -> Result<()> {
        if self.iterations_per_fraction < 1 {
            return Err(Error::InvalidArgument(
                "iterations_per_fraction must be at least 1".into(),
            ));
        }
        if self.beta_coefficient <= 0.0 {
            return Err(Error::InvalidArgument(
                "beta_coefficient must be positive".into(),
            ));
        }
        let fr = &self.fractions;
        if fr.is_empty() {
            return Err(Error::InvalidArgument("schedule needs fractions".into()));
        }
        match mode {
            OptMode::Ensemble => {
                if !fr.windows(2).all(|w| w[0] > w[1]) {
                    return Err(Error::InvalidArgument(
                        "fractions must be strictly descending".into(),
                    ));
                }
                if fr.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
                    return Err(Error::InvalidArgument(
                        "ensemble fractions must lie in (0, 1)".into(),
                    ));
                }
            }
            OptMode::SingleMapNoArea => {
                if fr.len() != 1 || !(fr[0] > 0.0 && fr[0] <= 1.0) {
                    return Err(Error::InvalidArgument(
                        "single-map mode takes one fraction in (0, 1]".into(),
                    ));
                }
            }
            OptMode::SingleMapL1 => {
                if fr.len() != 1 || fr[0] != 1.0 {
                    return Err(Error::InvalidArgument(
                        "l1 mode requires the single fraction 1.0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub clip_mode: ClipMode,
    pub objective: Objective,
    pub mode: OptMode,
    pub adam: AdamParams,
    pub rng_seed: u64,
}

impl OptimizerConfig {
    pub fn new(clip_mode: ClipMode, objective: Objective, mode: OptMode, rng_seed: u64) -> Self {
        OptimizerConfig {
            clip_mode,
            objective,
            mode,
            adam: AdamParams::mask_default(),
            rng_seed,
        }
    }
}

/// Per-fraction delta maps, their cumulative alpha maps, and the assembled
/// attribution map `M = mean of alphas`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskEnsemble {
    pub fractions: Vec<f64>,
    pub deltas: Vec<Tensor>,
    pub alphas: Vec<Tensor>,
    pub map: Tensor,
}

impl MaskEnsemble {
    /// Rebuilds alphas and the map from deltas; the constructor tests use
    /// this to cross-check cumulative-sum arithmetic.
    pub fn from_deltas(fractions: Vec<f64>, deltas: Vec<Tensor>) -> Result<MaskEnsemble> {
        if fractions.len() != deltas.len() || deltas.is_empty() {
            return Err(Error::InvalidArgument(
                "one delta map per fraction required".into(),
            ));
        }
        let shape = deltas[0].shape().to_vec();
        let mut alphas: Vec<Tensor> = Vec::with_capacity(deltas.len());
        let mut running = Tensor::zeros(&shape);
        for d in &deltas {
            d.ensure_same_shape(&running, "ensemble delta")?;
            running = running.zip_map(d, |a, b| a + b)?;
            alphas.push(running.clone());
        }
        let k = alphas.len() as f64;
        let mut map = Tensor::zeros(&shape);
        for a in &alphas {
            map = map.zip_map(a, |m, v| m + v / k)?;
        }
        Ok(MaskEnsemble {
            fractions,
            deltas,
            alphas,
            map,
        })
    }

    /// Checks boundedness and cross-fraction consistency.
    pub fn check_invariants(&self) -> Result<()> {
        let in_unit =
            |t: &Tensor| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        for (i, d) in self.deltas.iter().enumerate() {
            if !in_unit(d) {
                return Err(Error::InvalidArgument(format!("delta {i} out of [0, 1]")));
            }
        }
        for (i, a) in self.alphas.iter().enumerate() {
            if !in_unit(a) {
                return Err(Error::InvalidArgument(format!("alpha {i} out of [0, 1]")));
            }
            if i > 0 {
                let prev = &self.alphas[i - 1];
                let monotone = a
                    .data()
                    .iter()
                    .zip(prev.data())
                    .all(|(hi, lo)| hi >= lo);
                if !monotone {
                    return Err(Error::InvalidArgument(format!(
                        "alpha {i} not elementwise above alpha {}",
                        i - 1
                    )));
                }
            }
        }
        if !in_unit(&self.map) {
            return Err(Error::InvalidArgument("map out of [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FractionReport {
    pub fraction: f64,
    pub final_loss: f64,
    /// `|sum(alpha) - (1 - f) * N| / N` at termination.
    pub area_residual_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationOutcome {
    pub ensemble: MaskEnsemble,
    pub reports: Vec<FractionReport>,
    /// Blend of the final masks with the last iteration's reference.
    pub final_blend: Tensor,
    /// Model probabilities on `final_blend`.
    pub final_probs: Vec<f64>,
}

/// Runs the sequential per-fraction optimization and assembles the
/// attribution map. Deterministic given the seeds in `config` and `ref_spec`.
pub fn optimize_attribution(
    model: &NetworkModel,
    x: &Tensor,
    target: usize,
    schedule: &FractileSchedule,
    config: &OptimizerConfig,
    ref_spec: &ReferenceSpec,
) -> Result<OptimizationOutcome> {
    schedule.validate(config.mode)?;
    if target >= model.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "target class {target} out of range for {} classes",
            model.num_classes()
        )));
    }
    let trace_ref = forward(model, x)?;
    let spatial: Vec<usize> = x.shape()[1..].to_vec();
    let plane: usize = spatial.iter().product();
    let t_iters = schedule.iterations_per_fraction;
    let k = schedule.fractions.len();

    let mut deltas: Vec<Tensor> = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    let mut prefix = Tensor::zeros(&spatial);
    let mut last_reference: Option<Tensor> = None;
    let mut prev_f = 1.0;
    for (fi, &f) in schedule.fractions.iter().enumerate() {
        let mut delta = Tensor::full(&spatial, (prev_f - f).clamp(0.0, 1.0));
        // Keep the start feasible when earlier alphas already cap pixels.
        cap_delta(&mut delta, &prefix);
        let mut adam = Adam::new(plane, config.adam);
        let mut alpha = prefix.zip_map(&delta, |a, b| a + b)?;
        let mut last_loss = 0.0;
        for t in 1..=t_iters {
            let global_iter = (fi * t_iters + t - 1) as u64;
            if ref_spec.per_iteration() || last_reference.is_none() {
                last_reference = Some(make_reference(ref_spec, x, global_iter)?);
            }
            let beta1 = match config.mode {
                OptMode::SingleMapNoArea => 0.0,
                _ => beta_schedule(t, schedule.beta_coefficient),
            };
            let eval = blend_loss(
                model,
                x,
                &trace_ref,
                &alpha,
                f,
                beta1,
                last_reference.as_ref().expect("reference drawn"),
                config.clip_mode,
                target,
                config.objective,
            )?;
            if !eval.loss.is_finite() {
                return Err(Error::Diverged {
                    iteration: global_iter as usize,
                });
            }
            last_loss = eval.loss;
            adam.step(delta.data_mut(), eval.grad_alpha.data());
            for v in delta.data_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            cap_delta(&mut delta, &prefix);
            alpha = prefix.zip_map(&delta, |a, b| a + b)?;
        }
        reports.push(FractionReport {
            fraction: f,
            final_loss: last_loss,
            area_residual_fraction: area_term(&alpha, f) / plane as f64,
        });
        prefix = alpha;
        deltas.push(delta);
        prev_f = f;
    }

    let ensemble = MaskEnsemble::from_deltas(schedule.fractions.clone(), deltas)?;
    let final_alpha = ensemble.alphas.last().expect("nonempty schedule");
    let last_reference = last_reference.expect("at least one iteration ran");
    let final_blend = match config.objective {
        Objective::Preservation => blend_lower(x, final_alpha, &last_reference)?,
        Objective::Deletion => blend_upper(x, final_alpha, &last_reference)?,
    };
    let final_probs = forward(model, &final_blend)?.probs().to_vec();
    Ok(OptimizationOutcome {
        ensemble,
        reports,
        final_blend,
        final_probs,
    })
}

/// Caps `delta` so the cumulative alpha never exceeds 1.
fn cap_delta(delta: &mut Tensor, prefix: &Tensor) {
    for (d, &p) in delta.data_mut().iter_mut().zip(prefix.data()) {
        let room = 1.0 - p;
        if *d > room {
            *d = room;
        }
    }
}
