//! Diverging blue-white-red heatmap rendering with grayscale overlay, and a
//! localization score against known shape masks.

use crate::error::{Error, Result};
use crate::metrics::{upper_fractile, AttributionMap};
use crate::tensor::Tensor;

/// Maps a normalized value to the blue (0) -> white (0.5) -> red (1) ramp.
fn colormap(t: f64) -> [f64; 3] {
    if t < 0.5 {
        let s = 2.0 * t;
        [s, s, 1.0]
    } else {
        let s = 2.0 * (t - 0.5);
        [1.0, 1.0 - s, 1.0 - s]
    }
}

fn gray_plane<'a>(image: &'a Tensor, location: &str) -> Result<(&'a [f64], usize, usize)> {
    match image.shape() {
        [h, w] => Ok((image.data(), *h, *w)),
        [1, h, w] => Ok((image.data(), *h, *w)),
        other => Err(Error::ShapeMismatch {
            location: location.into(),
            expected: "[h, w] or [1, h, w]".into(),
            got: format!("{other:?}"),
        }),
    }
}

/// Min-max normalizes the attribution, colors it, and alpha-blends it over
/// the grayscale base image. A constant map renders as the midpoint color.
pub fn render_heatmap(
    map: &AttributionMap,
    base_image: &Tensor,
    overlay_alpha: f64,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&overlay_alpha) {
        return Err(Error::InvalidArgument(format!(
            "overlay alpha must lie in [0, 1], got {overlay_alpha}"
        )));
    }
    let (base, h, w) = gray_plane(base_image, "heatmap base image")?;
    if map.values.shape() != [h, w] {
        return Err(Error::ShapeMismatch {
            location: "heatmap map".into(),
            expected: format!("[{h}, {w}]"),
            got: format!("{:?}", map.values.shape()),
        });
    }
    let vals = map.values.data();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut out = Tensor::zeros(&[3, h, w]);
    let plane = h * w;
    for p in 0..plane {
        let t = if span > 0.0 { (vals[p] - min) / span } else { 0.5 };
        let rgb = colormap(t);
        let g = base[p].clamp(0.0, 1.0);
        for (c, &channel) in rgb.iter().enumerate() {
            out.data_mut()[c * plane + p] = overlay_alpha * channel + (1.0 - overlay_alpha) * g;
        }
    }
    Ok(out)
}

/// Fraction of the upper `q`-fractile of the map that falls inside the
/// shape mask (mask nonzero = shape pixel).
pub fn localization_score(map: &AttributionMap, shape_mask: &Tensor, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "localization fraction must lie in (0, 1), got {q}"
        )));
    }
    let (mask, h, w) = gray_plane(shape_mask, "localization mask")?;
    if map.values.shape() != [h, w] {
        return Err(Error::ShapeMismatch {
            location: "localization map".into(),
            expected: format!("[{h}, {w}]"),
            got: format!("{:?}", map.values.shape()),
        });
    }
    let top = upper_fractile(map, q)?;
    if top.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "fraction {q} selects no pixels on a {h}x{w} map"
        )));
    }
    let inside = top
        .coords()
        .iter()
        .filter(|&&(y, x)| mask[y * w + x] != 0.0)
        .count();
    Ok(inside as f64 / top.len() as f64)
}
