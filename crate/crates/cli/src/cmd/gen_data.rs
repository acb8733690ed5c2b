use std::path::Path;

use fei_core::vizio::{gen_shapes, write_pgm, ShapesDataset};
use fei_core::Result;
use serde::{Deserialize, Serialize};

use crate::manifest::{write_json, RunManifest};
use crate::GenDataArgs;

/// Index of a generated dataset directory: everything `eval` needs to read
/// the images back in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub count: usize,
    pub split: String,
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
}

pub fn image_path(dir: &Path, index: usize) -> std::path::PathBuf {
    dir.join(format!("img_{index:04}.pgm"))
}

pub fn mask_path(dir: &Path, index: usize) -> std::path::PathBuf {
    dir.join(format!("mask_{index:04}.pgm"))
}

pub fn run(args: &GenDataArgs) -> Result<()> {
    super::ensure_out_dir(&args.out)?;
    let data = gen_shapes(args.seed, args.count, args.split);
    for (i, sample) in data.samples.iter().enumerate() {
        write_pgm(&sample.image, &image_path(&args.out, i))?;
        write_pgm(&sample.mask, &mask_path(&args.out, i))?;
    }
    let dataset = DatasetManifest {
        seed: args.seed,
        count: data.len(),
        split: args.split.name().to_string(),
        class_names: ShapesDataset::class_names()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        labels: data.samples.iter().map(|s| s.label).collect(),
    };
    write_json(&args.out.join("dataset.json"), &dataset)?;

    let mut manifest = RunManifest::new("gen-data");
    manifest
        .flag("seed", args.seed)
        .flag("count", args.count)
        .flag("split", args.split.name())
        .flag("out", args.out.display())
        .seed("seed", args.seed);
    manifest.write_into(&args.out)
}

/// Reads a dataset directory back; the images arrive in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<fei_core::Tensor>)> {
    let text = std::fs::read_to_string(dir.join("dataset.json"))?;
    let dataset: DatasetManifest = serde_json::from_str(&text)?;
    let images = (0..dataset.count)
        .map(|i| super::load_image(&image_path(dir, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((dataset, images))
}
