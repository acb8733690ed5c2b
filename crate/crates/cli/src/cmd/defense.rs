use std::fs;

use fei_core::diagnostics::defense_test;
use fei_core::rng::derive_seed;
use fei_core::{load_weights, FractileSchedule, ReferenceKind, ReferenceSpec, Result};

use crate::manifest::{write_json, RunManifest};
use crate::{rule_token, DefenseArgs};

pub fn run(args: &DefenseArgs) -> Result<()> {
    super::ensure_out_dir(&args.out)?;
    let model = load_weights(&args.model)?;
    let schedule = FractileSchedule {
        iterations_per_fraction: args.iters,
        ..FractileSchedule::default_ensemble()
    };
    let ref_spec = ReferenceSpec::new(ReferenceKind::RandomMonotone, derive_seed(args.seed, 1, 0));
    let report = defense_test(&model, &args.clips.0, &schedule, &ref_spec, args.seed, args.rule)?;

    let mut csv = String::from("clip_mode,successes,attempts,rate\n");
    for entry in &report.entries {
        csv.push_str(&format!(
            "{},{},{},{:.6}\n",
            entry.clip_mode.name(),
            entry.successes,
            entry.attempts,
            entry.rate
        ));
    }
    fs::write(args.out.join("defense.csv"), csv)?;
    write_json(&args.out.join("defense.json"), &report)?;

    let mut manifest = RunManifest::new("defense");
    manifest
        .flag("model", args.model.display())
        .flag("clips", &args.clips)
        .flag("rule", rule_token(args.rule))
        .flag("iters", args.iters)
        .flag("seed", args.seed)
        .flag("out", args.out.display())
        .seed("seed", args.seed);
    manifest.hash_input("model", &args.model)?;
    manifest.write_into(&args.out)
}
