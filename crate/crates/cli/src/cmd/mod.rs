//! One module per subcommand, plus shared loading helpers.

pub mod attribute;
pub mod defense;
pub mod eval;
pub mod gen_data;
pub mod reconstruct;
pub mod sanity;
pub mod train_fixture;

use std::fs;
use std::path::Path;

use fei_core::vizio::read_pgm;
use fei_core::{forward, Error, NetworkModel, Result, Tensor};

use crate::TargetArg;

/// Reads a PGM image into the model's `[1, h, w]` input layout.
pub(crate) fn load_image(path: &Path) -> Result<Tensor> {
    let plane = read_pgm(path)?;
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    plane.reshape(&[1, h, w])
}

/// Resolves `predicted` against the unperturbed image; validates indices.
pub(crate) fn resolve_target(
    model: &NetworkModel,
    image: &Tensor,
    target: TargetArg,
) -> Result<usize> {
    match target {
        TargetArg::Predicted => Ok(forward(model, image)?.argmax()),
        TargetArg::Class(c) if c < model.num_classes() => Ok(c),
        TargetArg::Class(c) => Err(Error::InvalidArgument(format!(
            "target class {c} out of range for {} classes",
            model.num_classes()
        ))),
    }
}

/// Creates the output directory if needed.
pub(crate) fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}
