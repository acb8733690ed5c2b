use fei_core::diagnostics::{mse, reconstruct, ReconstructionConfig};
use fei_core::vizio::write_pgm;
use fei_core::{forward, load_weights, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::{write_json, RunManifest};
use crate::ReconstructArgs;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionSidecar {
    pub clip: String,
    pub target: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub noise_seed: u64,
    pub mse_to_original: f64,
    pub predicted_class: usize,
    pub probs: Vec<f64>,
}

pub fn run(args: &ReconstructArgs) -> Result<()> {
    super::ensure_out_dir(&args.out)?;
    let model = load_weights(&args.model)?;
    let image = super::load_image(&args.image)?;
    let target = super::resolve_target(&model, &image, args.target)?;

    let cfg = ReconstructionConfig {
        iterations: args.iters,
        learning_rate: args.lr,
        clip_mode: args.clip,
        noise_seed: args.noise_seed,
        range: (0.0, 1.0),
    };
    let recon = reconstruct(&model, &image, target, &cfg)?;
    write_pgm(&recon, &args.out.join("reconstruction.pgm"))?;

    let trace = forward(&model, &recon)?;
    let sidecar = ReconstructionSidecar {
        clip: args.clip.name().to_string(),
        target,
        iterations: args.iters,
        learning_rate: args.lr,
        noise_seed: args.noise_seed,
        mse_to_original: mse(&recon, &image),
        predicted_class: trace.argmax(),
        probs: trace.probs().to_vec(),
    };
    write_json(&args.out.join("reconstruction.json"), &sidecar)?;

    let mut manifest = RunManifest::new("reconstruct");
    manifest
        .flag("model", args.model.display())
        .flag("image", args.image.display())
        .flag("target", args.target)
        .flag("clip", args.clip.name())
        .flag("iters", args.iters)
        .flag("lr", args.lr)
        .flag("noise-seed", args.noise_seed)
        .flag("out", args.out.display())
        .seed("noise-seed", args.noise_seed);
    manifest.hash_input("model", &args.model)?;
    manifest.hash_input("image", &args.image)?;
    manifest.write_into(&args.out)
}
