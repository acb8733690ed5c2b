//! Dataset generation, image file I/O, and heatmap rendering.

pub mod idx;
pub mod pnm;
pub mod render;
pub mod shapes;

pub use idx::{load_idx, IdxDataset};
pub use pnm::{read_pgm, write_pgm, write_ppm};
pub use render::{localization_score, render_heatmap};
pub use shapes::{gen_shapes, Sample, ShapeClass, ShapesDataset, Split};
