use std::fs;
use std::path::{Path, PathBuf};

use fei_core::metrics::{compare_methods, CompareConfig, MethodSpec};
use fei_core::{load_weights, FractileSchedule, Result};

use crate::manifest::RunManifest;
use crate::EvalArgs;

/// Paths written beside the report CSV.
pub fn summary_path(out: &Path) -> PathBuf {
    out.with_file_name("summary.csv")
}

fn parent_dir(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let dir = parent_dir(&args.out);
    fs::create_dir_all(&dir)?;
    let model = load_weights(&args.model)?;
    let (_, images) = super::gen_data::load_dataset(&args.dataset)?;

    let methods: Vec<MethodSpec> = args
        .methods
        .0
        .iter()
        .map(|m| MethodSpec::new(&m.name, m.clip, m.mode))
        .collect();
    let cfg = CompareConfig {
        seeds: (1..=args.seeds).collect(),
        schedule: FractileSchedule {
            iterations_per_fraction: args.iters,
            ..FractileSchedule::default_ensemble()
        },
        ..CompareConfig::default()
    };
    let report = compare_methods(&model, &images, &methods, &cfg)?;

    fs::write(&args.out, report.rows_csv())?;
    fs::write(summary_path(&args.out), report.summary_csv())?;

    let mut manifest = RunManifest::new("eval");
    manifest
        .flag("model", args.model.display())
        .flag("dataset", args.dataset.display())
        .flag("methods", &args.methods)
        .flag("seeds", args.seeds)
        .flag("iters", args.iters)
        .flag("out", args.out.display());
    for &seed in &cfg.seeds {
        manifest.seed(&format!("seed-{seed}"), seed);
    }
    manifest.hash_input("model", &args.model)?;
    manifest.hash_input("dataset", &args.dataset.join("dataset.json"))?;
    manifest.write_into(&dir)
}
