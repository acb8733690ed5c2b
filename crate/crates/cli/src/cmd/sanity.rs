use std::fs;

use fei_core::diagnostics::{sanity_check, SanityAttrConfig};
use fei_core::rng::derive_seed;
use fei_core::vizio::write_pgm;
use fei_core::{
    load_weights, FractileSchedule, Objective, OptMode, OptimizerConfig, ReferenceKind,
    ReferenceSpec, Result,
};
use serde::{Deserialize, Serialize};

use crate::manifest::{write_json, RunManifest};
use crate::SanityArgs;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SanityStageRow {
    pub stage: usize,
    pub spearman_vs_original: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SanitySidecar {
    pub clip: String,
    pub target: usize,
    pub stages: Vec<SanityStageRow>,
}

pub fn run(args: &SanityArgs) -> Result<()> {
    super::ensure_out_dir(&args.out)?;
    let model = load_weights(&args.model)?;
    let image = super::load_image(&args.image)?;
    let target = super::resolve_target(&model, &image, args.target)?;

    let attr = SanityAttrConfig {
        schedule: FractileSchedule {
            iterations_per_fraction: args.iters,
            ..FractileSchedule::default_ensemble()
        },
        config: OptimizerConfig::new(args.clip, Objective::Preservation, OptMode::Ensemble, args.seed),
        ref_spec: ReferenceSpec::new(ReferenceKind::RandomMonotone, derive_seed(args.seed, 1, 0)),
        randomization_seed: derive_seed(args.seed, 2, 0),
    };
    let report = sanity_check(&model, &image, target, args.stages, &attr)?;

    let mut csv = String::from("stage,spearman\n");
    for stage in &report.stages {
        csv.push_str(&format!(
            "{},{:.6}\n",
            stage.stage, stage.spearman_vs_original
        ));
        write_pgm(&stage.map, &args.out.join(format!("map_stage_{}.pgm", stage.stage)))?;
    }
    fs::write(args.out.join("sanity.csv"), csv)?;
    let sidecar = SanitySidecar {
        clip: args.clip.name().to_string(),
        target,
        stages: report
            .stages
            .iter()
            .map(|s| SanityStageRow {
                stage: s.stage,
                spearman_vs_original: s.spearman_vs_original,
            })
            .collect(),
    };
    write_json(&args.out.join("sanity.json"), &sidecar)?;

    let mut manifest = RunManifest::new("sanity");
    manifest
        .flag("model", args.model.display())
        .flag("image", args.image.display())
        .flag("target", args.target)
        .flag("stages", args.stages)
        .flag("clip", args.clip.name())
        .flag("iters", args.iters)
        .flag("seed", args.seed)
        .flag("out", args.out.display())
        .seed("seed", args.seed);
    manifest.hash_input("model", &args.model)?;
    manifest.hash_input("image", &args.image)?;
    manifest.write_into(&args.out)
}
