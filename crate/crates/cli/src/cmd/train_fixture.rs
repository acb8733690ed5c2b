use fei_core::nn::FixtureConfig;
use fei_core::{save_weights, train_fixture, Result};

use crate::manifest::{write_json, RunManifest};
use crate::TrainFixtureArgs;

pub fn run(args: &TrainFixtureArgs) -> Result<()> {
    super::ensure_out_dir(&args.out)?;
    let cfg = FixtureConfig {
        dataset_seed: args.dataset_seed,
        weight_seed: args.weight_seed,
        train_count: args.train_count,
        test_count: args.test_count,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        accuracy_target: args.accuracy_target,
    };
    let (model, report) = train_fixture(&cfg)?;
    save_weights(&model, &args.out.join("fixture.weights"))?;
    write_json(&args.out.join("train_report.json"), &report)?;

    let mut manifest = RunManifest::new("train-fixture");
    manifest
        .flag("dataset-seed", args.dataset_seed)
        .flag("weight-seed", args.weight_seed)
        .flag("train-count", args.train_count)
        .flag("test-count", args.test_count)
        .flag("epochs", args.epochs)
        .flag("batch-size", args.batch_size)
        .flag("lr", args.lr)
        .flag("accuracy-target", args.accuracy_target)
        .flag("out", args.out.display())
        .seed("dataset-seed", args.dataset_seed)
        .seed("weight-seed", args.weight_seed);
    manifest.write_into(&args.out)
}
