//! Seeded synthetic dataset: one bright shape (square, disk or cross) per
//! 32x32 grayscale image on a Gaussian-noise background, with the shape's
//! pixel mask recorded for localization scoring.

use crate::rng::{derive_seed, rng_for_index};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const IMAGE_SIDE: usize = 32;
pub const NUM_CLASSES: usize = 3;

/// Background noise: mean 0.25, sigma 0.1, clamped to [0, 1].
const BG_MEAN: f64 = 0.25;
const BG_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Square,
    Disk,
    Cross,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; NUM_CLASSES] = [ShapeClass::Square, ShapeClass::Disk, ShapeClass::Cross];

    pub fn from_label(label: usize) -> ShapeClass {
        ShapeClass::ALL[label % NUM_CLASSES]
    }

    pub fn label(&self) -> usize {
        match self {
            ShapeClass::Square => 0,
            ShapeClass::Disk => 1,
            ShapeClass::Cross => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeClass::Square => "square",
            ShapeClass::Disk => "disk",
            ShapeClass::Cross => "cross",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(&self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// `[1, 32, 32]` image in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    /// `[1, 32, 32]` binary mask of the shape's pixels.
    pub mask: Tensor,
}

#[derive(Debug, Clone)]
pub struct ShapesDataset {
    pub samples: Vec<Sample>,
    pub seed: u64,
    pub split: Split,
}

impl ShapesDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_names() -> [&'static str; NUM_CLASSES] {
        ["square", "disk", "cross"]
    }
}

/// Pixel coordinates covered by one randomly sized and placed shape.
fn shape_pixels<R: Rng>(class: ShapeClass, rng: &mut R) -> Vec<(usize, usize)> {
    let side = IMAGE_SIDE;
    let mut px = Vec::new();
    match class {
        ShapeClass::Square => {
            let s = rng.random_range(8..=14usize);
            let y0 = rng.random_range(0..=side - s);
            let x0 = rng.random_range(0..=side - s);
            for y in y0..y0 + s {
                for x in x0..x0 + s {
                    px.push((y, x));
                }
            }
        }
        ShapeClass::Disk => {
            let r = rng.random_range(4..=7usize);
            let cy = rng.random_range(r..=side - 1 - r);
            let cx = rng.random_range(r..=side - 1 - r);
            let rr = (r * r) as isize;
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    let dy = y as isize - cy as isize;
                    let dx = x as isize - cx as isize;
                    if dy * dy + dx * dx <= rr {
                        px.push((y, x));
                    }
                }
            }
        }
        ShapeClass::Cross => {
            let l = rng.random_range(9..=15usize);
            let t = rng.random_range(2..=3usize);
            let y0 = rng.random_range(0..=side - l);
            let x0 = rng.random_range(0..=side - l);
            let mid = (l - t) / 2;
            for y in y0 + mid..y0 + mid + t {
                for x in x0..x0 + l {
                    px.push((y, x));
                }
            }
            for y in y0..y0 + l {
                for x in x0 + mid..x0 + mid + t {
                    if !(y0 + mid..y0 + mid + t).contains(&y) {
                        px.push((y, x));
                    }
                }
            }
        }
    }
    px
}

/// Generates `count` samples with labels cycling square, disk, cross.
/// Bit-deterministic in `(seed, split)`; each sample draws from its own
/// derived stream, so prefixes agree across different counts.
pub fn gen_shapes(seed: u64, count: usize, split: Split) -> ShapesDataset {
    let base = derive_seed(seed, split.tag(), 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let samples = (0..count)
        .map(|i| {
            let mut rng = rng_for_index(base, i as u64);
            let label = i % NUM_CLASSES;
            let pixels = shape_pixels(ShapeClass::from_label(label), &mut rng);
            let bright = rng.random_range(0.7..=1.0);
            let mut image = Tensor::zeros(&[1, IMAGE_SIDE, IMAGE_SIDE]);
            for v in image.data_mut() {
                *v = (BG_MEAN + BG_SIGMA * normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
            let mut mask = Tensor::zeros(&[1, IMAGE_SIDE, IMAGE_SIDE]);
            for &(y, x) in &pixels {
                image.data_mut()[y * IMAGE_SIDE + x] = bright;
                mask.data_mut()[y * IMAGE_SIDE + x] = 1.0;
            }
            Sample { image, label, mask }
        })
        .collect();
    ShapesDataset {
        samples,
        seed,
        split,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let a = gen_shapes(11, 9, Split::Train);
        let b = gen_shapes(11, 9, Split::Train);
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.image, sb.image);
            assert_eq!(sa.mask, sb.mask);
            assert_eq!(sa.label, sb.label);
        }
    }

    #[test]
    fn splits_and_seeds_differ() {
        let a = gen_shapes(11, 3, Split::Train);
        let b = gen_shapes(11, 3, Split::Test);
        let c = gen_shapes(12, 3, Split::Train);
        assert_ne!(a.samples[0].image, b.samples[0].image);
        assert_ne!(a.samples[0].image, c.samples[0].image);
    }

    #[test]
    fn labels_are_balanced() {
        let d = gen_shapes(5, 3, Split::Train);
        let labels: Vec<usize> = d.samples.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn masks_stay_within_regression_bounds() {
        for seed in [1, 2, 3] {
            let d = gen_shapes(seed, 30, Split::Train);
            for s in &d.samples {
                let area = s.mask.sum();
                assert!(
                    (16.0..=400.0).contains(&area),
                    "seed {seed} label {} area {area}",
                    s.label
                );
                assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn cross_pixels_are_duplicate_free() {
        let mut rng = crate::rng::rng_from_seed(3);
        for _ in 0..50 {
            let mut px = shape_pixels(ShapeClass::Cross, &mut rng);
            let n = px.len();
            px.sort_unstable();
            px.dedup();
            assert_eq!(n, px.len());
        }
    }
}
