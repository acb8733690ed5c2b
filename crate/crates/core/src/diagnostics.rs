//! Non-curve evaluations: image reconstruction from clipped gradients,
//! black-image defense rate, and the cascading-randomization sanity check
//! scored by Spearman rank correlation.

use crate::error::{Error, Result};
use crate::nn::clip::ClipMode;
use crate::nn::{backward_category, forward, randomize_layers, GradHook, NetworkModel};
use crate::optimizer::{
    optimize_attribution, FractileSchedule, OptimizerConfig, ReferenceSpec, PIXEL_MAX, PIXEL_MIN,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub clip_mode: ClipMode,
    pub noise_seed: u64,
    pub range: (f64, f64),
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            iterations: 300,
            learning_rate: 0.05,
            clip_mode: ClipMode::Vm,
            noise_seed: 0,
            range: (PIXEL_MIN, PIXEL_MAX),
        }
    }
}

/// Mean squared difference between two same-shape tensors.
pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// Regenerates an image from seeded noise by ascending the target score,
/// with gradients clipped against the original image's trace; the input is
/// clamped to the pixel range after every step.
///
/// Ascent moves each pixel by `learning_rate * sign(clipped gradient)`. The
/// magnitude of the probability gradient collapses with `p (1 - p)` (below
/// 1e-30 on far out-of-distribution inputs such as the noise init), so any
/// magnitude-proportional step stalls; the sign still encodes the clipped
/// ascent direction exactly, and a zeroed gradient keeps its pixel frozen,
/// which is the behavioral content of the clip rules.
pub fn reconstruct(
    model: &NetworkModel,
    original: &Tensor,
    target: usize,
    cfg: &ReconstructionConfig,
) -> Result<Tensor> {
    let (lo, hi) = cfg.range;
    if lo >= hi || lo.is_nan() || hi.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "invalid pixel range [{lo}, {hi}]"
        )));
    }
    let reference_trace = forward(model, original)?;
    let mut rng = rng_from_seed(cfg.noise_seed);
    let mut x = Tensor::zeros(original.shape());
    for v in x.data_mut() {
        *v = rng.random_range(lo..=hi);
    }
    for iter in 0..cfg.iterations {
        let trace = forward(model, &x)?;
        let hook = match cfg.clip_mode {
            ClipMode::None => GradHook::none(),
            mode => GradHook::new(mode, &reference_trace),
        };
        let grad = backward_category(model, &trace, target, &hook)?;
        for (v, &g) in x.data_mut().iter_mut().zip(grad.data()) {
            // signum maps +-0.0 to +-1.0; clipped pixels must stay frozen.
            if g != 0.0 {
                *v = (*v + cfg.learning_rate * g.signum()).clamp(lo, hi);
            }
        }
        x.ensure_finite(&format!("reconstruction iteration {iter}"))
            .map_err(|_| Error::Diverged { iteration: iter })?;
    }
    Ok(x)
}

/// When an optimization toward class `c` counts as having produced an
/// explanation of the black image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum SuccessRule {
    /// Target becomes the argmax class of the final blended input.
    Argmax,
    /// Target probability on the final blended input reaches a threshold.
    ProbThreshold { threshold: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseEntry {
    pub clip_mode: ClipMode,
    pub per_class_success: Vec<bool>,
    pub successes: usize,
    pub attempts: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseReport {
    pub rule: SuccessRule,
    pub entries: Vec<DefenseEntry>,
}

impl DefenseReport {
    pub fn rate_of(&self, mode: ClipMode) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.clip_mode == mode)
            .map(|e| e.rate)
    }
}

/// Runs the attribution optimizer on an all-black image toward every class
/// under each clip mode and reports how often an explanation appears.
/// Per-class seeds are shared across modes so rates are comparable.
pub fn defense_test(
    model: &NetworkModel,
    clip_modes: &[ClipMode],
    schedule: &FractileSchedule,
    ref_spec: &ReferenceSpec,
    seed: u64,
    rule: SuccessRule,
) -> Result<DefenseReport> {
    let black = Tensor::full(model.input_shape(), PIXEL_MIN);
    let classes = model.num_classes();
    let cells: Vec<(usize, usize)> = (0..clip_modes.len())
        .flat_map(|m| (0..classes).map(move |c| (m, c)))
        .collect();
    let outcomes: Vec<bool> = cells
        .par_iter()
        .map(|&(m, c)| -> Result<bool> {
            let cfg = OptimizerConfig {
                clip_mode: clip_modes[m],
                rng_seed: derive_seed(seed, c as u64, 0),
                ..OptimizerConfig::new(
                    clip_modes[m],
                    crate::optimizer::Objective::Preservation,
                    crate::optimizer::OptMode::Ensemble,
                    0,
                )
            };
            let ref_spec = ReferenceSpec {
                rng_seed: derive_seed(ref_spec.rng_seed, c as u64, 1),
                ..*ref_spec
            };
            let outcome = optimize_attribution(model, &black, c, schedule, &cfg, &ref_spec)?;
            let probs = &outcome.final_probs;
            Ok(match rule {
                SuccessRule::Argmax => {
                    let argmax = probs
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
                        .expect("nonempty probs")
                        .0;
                    argmax == c
                }
                SuccessRule::ProbThreshold { threshold } => probs[c] >= threshold,
            })
        })
        .collect::<Result<Vec<bool>>>()?;
    let entries = clip_modes
        .iter()
        .enumerate()
        .map(|(m, &mode)| {
            let per_class: Vec<bool> = (0..classes)
                .map(|c| outcomes[m * classes + c])
                .collect();
            let successes = per_class.iter().filter(|&&s| s).count();
            DefenseEntry {
                clip_mode: mode,
                successes,
                attempts: classes,
                rate: successes as f64 / classes as f64,
                per_class_success: per_class,
            }
        })
        .collect();
    Ok(DefenseReport { rule, entries })
}

/// Average ranks (1-based) with ties sharing their group's mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean of ranks i+1..=j+1.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling. Exactly 1.0
/// for identical rank vectors and -1.0 for exactly mirrored ones.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(
            "spearman needs two equal-length nonempty vectors".into(),
        ));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    if ra == rb {
        return Ok(1.0);
    }
    let mean = (ra.len() as f64 + 1.0) / 2.0;
    let da: Vec<f64> = ra.iter().map(|r| r - mean).collect();
    let db: Vec<f64> = rb.iter().map(|r| r - mean).collect();
    if da.iter().zip(&db).all(|(x, y)| *x == -*y) {
        return Ok(-1.0);
    }
    let num: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
    let va: f64 = da.iter().map(|x| x * x).sum();
    let vb: f64 = db.iter().map(|y| y * y).sum();
    if va == 0.0 || vb == 0.0 {
        // A constant map carries no ranking information.
        return Ok(0.0);
    }
    Ok(num / (va.sqrt() * vb.sqrt()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SanityStage {
    /// Number of weighted layers randomized, counted from the output end.
    pub stage: usize,
    pub spearman_vs_original: f64,
    pub map: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SanityReport {
    pub stages: Vec<SanityStage>,
}

/// Attribution settings shared by every sanity stage.
#[derive(Debug, Clone)]
pub struct SanityAttrConfig {
    pub schedule: FractileSchedule,
    pub config: OptimizerConfig,
    pub ref_spec: ReferenceSpec,
    pub randomization_seed: u64,
}

/// Stage `s` randomizes the top `s` weighted layers with a shared seed (so
/// stages extend each other), recomputes the attribution with identical
/// seeds, and scores rank agreement against the stage-0 map.
pub fn sanity_check(
    model: &NetworkModel,
    x: &Tensor,
    target: usize,
    num_stages: usize,
    attr: &SanityAttrConfig,
) -> Result<SanityReport> {
    let weighted = model.weighted_layer_indices().len();
    if num_stages > weighted {
        return Err(Error::LayerIndexOutOfRange {
            index: num_stages,
            count: weighted,
        });
    }
    let maps: Vec<Tensor> = (0..=num_stages)
        .into_par_iter()
        .map(|stage| -> Result<Tensor> {
            let staged = randomize_layers(model, stage, attr.randomization_seed)?;
            let outcome = optimize_attribution(
                &staged,
                x,
                target,
                &attr.schedule,
                &attr.config,
                &attr.ref_spec,
            )?;
            Ok(outcome.ensemble.map)
        })
        .collect::<Result<Vec<Tensor>>>()?;
    let original = &maps[0];
    let stages = maps
        .iter()
        .enumerate()
        .map(|(stage, map)| -> Result<SanityStage> {
            Ok(SanityStage {
                stage,
                spearman_vs_original: spearman(map.data(), original.data())?,
                map: map.clone(),
            })
        })
        .collect::<Result<Vec<SanityStage>>>()?;
    Ok(SanityReport { stages })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_definition_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(spearman(&a, &b).unwrap(), 1.0);
        let rev = [40.0, 30.0, 20.0, 10.0];
        assert_eq!(spearman(&a, &rev).unwrap(), -1.0);
        let c = [1.0, 3.0, 2.0, 4.0];
        let r = spearman(&a, &c).unwrap();
        assert!(r > 0.0 && r < 1.0, "r = {r}");
    }

    #[test]
    fn spearman_matches_direct_rank_then_pearson() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(77);
        for _ in 0..200 {
            let n = rng.random_range(3..20usize);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let got = spearman(&a, &b).unwrap();
            let (ra, rb) = (average_ranks(&a), average_ranks(&b));
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (ma, mb) = (mean(&ra), mean(&rb));
            let num: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
            let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
            let direct = num / (va.sqrt() * vb.sqrt());
            assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
        }
    }

    #[test]
    fn average_ranks_handle_ties() {
        let r = average_ranks(&[2.0, 1.0, 2.0, 5.0]);
        assert_eq!(r, vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn constant_vector_has_zero_correlation_against_varying() {
        let a = [1.0, 1.0, 1.0];
        let b = [1.0, 2.0, 3.0];
        assert_eq!(spearman(&a, &b).unwrap(), 0.0);
        // Two constants have identical ranks: correlation 1 by fast path.
        assert_eq!(spearman(&a, &[5.0, 5.0, 5.0]).unwrap(), 1.0);
    }

    #[test]
    fn mse_basics() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![2.0, 4.0]).unwrap();
        assert_eq!(mse(&a, &a), 0.0);
        assert!((mse(&a, &b) - 2.5).abs() < 1e-12);
    }
}
