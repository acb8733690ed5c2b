use fei_core::metrics::AttributionMap;
use fei_core::optimizer::FractionReport;
use fei_core::rng::derive_seed;
use fei_core::vizio::{render_heatmap, write_pgm, write_ppm};
use fei_core::{
    load_weights, optimize_attribution, FractileSchedule, OptMode, OptimizerConfig, ReferenceKind,
    ReferenceSpec, Result,
};
use serde::{Deserialize, Serialize};

use crate::manifest::{write_json, RunManifest};
use crate::{AttributeArgs, FractionList};

const HEATMAP_OVERLAY_ALPHA: f64 = 0.6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionSidecar {
    pub clip: String,
    pub objective: String,
    pub mode: String,
    pub target: usize,
    pub fractions: Vec<f64>,
    pub iterations_per_fraction: usize,
    pub beta_coefficient: f64,
    pub seed: u64,
    pub reports: Vec<FractionReport>,
    pub final_probs: Vec<f64>,
}

/// Fractions actually optimized: the flag if given, otherwise the mode's
/// default; l1 always reduces to the single fraction 1.
pub fn resolve_fractions(mode: OptMode, flag: &Option<FractionList>) -> Vec<f64> {
    match (mode, flag) {
        (OptMode::SingleMapL1, _) => vec![1.0],
        (_, Some(list)) => list.0.clone(),
        (OptMode::Ensemble, None) => FractileSchedule::default_ensemble().fractions,
        (OptMode::SingleMapNoArea, None) => vec![0.5],
    }
}

pub fn run(args: &AttributeArgs) -> Result<()> {
    super::ensure_out_dir(&args.out)?;
    let model = load_weights(&args.model)?;
    let image = super::load_image(&args.image)?;
    let target = super::resolve_target(&model, &image, args.target)?;

    let fractions = resolve_fractions(args.mode, &args.fractions);
    let schedule = FractileSchedule {
        fractions: fractions.clone(),
        iterations_per_fraction: args.iters,
        ..FractileSchedule::default_ensemble()
    };
    let config = OptimizerConfig::new(args.clip, args.objective, args.mode, args.seed);
    let ref_spec = ReferenceSpec::new(ReferenceKind::RandomMonotone, derive_seed(args.seed, 1, 0));
    let outcome = optimize_attribution(&model, &image, target, &schedule, &config, &ref_spec)?;

    write_pgm(&outcome.ensemble.map, &args.out.join("M.pgm"))?;
    for (f, alpha) in fractions.iter().zip(&outcome.ensemble.alphas) {
        write_pgm(alpha, &args.out.join(format!("alpha_{f}.pgm")))?;
    }
    let method = format!("fei-{}-{}", args.clip.name(), args.mode.name());
    let map = AttributionMap::new(outcome.ensemble.map.clone(), method, args.seed)?;
    let heatmap = render_heatmap(&map, &image, HEATMAP_OVERLAY_ALPHA)?;
    write_ppm(&heatmap, &args.out.join("heatmap.ppm"))?;

    let sidecar = AttributionSidecar {
        clip: args.clip.name().to_string(),
        objective: args.objective.name().to_string(),
        mode: args.mode.name().to_string(),
        target,
        fractions: fractions.clone(),
        iterations_per_fraction: args.iters,
        beta_coefficient: schedule.beta_coefficient,
        seed: args.seed,
        reports: outcome.reports.clone(),
        final_probs: outcome.final_probs.clone(),
    };
    write_json(&args.out.join("attribution.json"), &sidecar)?;

    let mut manifest = RunManifest::new("attribute");
    manifest
        .flag("model", args.model.display())
        .flag("image", args.image.display())
        .flag("target", args.target)
        .flag("clip", args.clip.name())
        .flag("objective", args.objective.name())
        .flag("mode", args.mode.name())
        .flag("fractions", FractionList(fractions))
        .flag("iters", args.iters)
        .flag("seed", args.seed)
        .flag("out", args.out.display())
        .seed("seed", args.seed);
    manifest.hash_input("model", &args.model)?;
    manifest.hash_input("image", &args.image)?;
    manifest.write_into(&args.out)
}
