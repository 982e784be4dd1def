//! Raster geometry: masks, placement transforms, edges and anchor layering.
//!
//! Every operation here is a pure function over immutable values.

mod anchor;
mod canny;
mod mask;
mod sketch;
mod transform;

pub use anchor::{compose_anchor, AnchorLayer};
pub use canny::{canny, canny_with, gaussian_kernel_5, CannyParams, EdgeMap, GrayImage, SOBEL_STEP_RESPONSE};
pub use mask::{iou, joint_mask, mask_difference, BBox, RasterMask};
pub use sketch::{
    background_mask, extract_regions, render_sketch_png, to_hex, Legend, LegendEntry, PaletteColor, Region,
    RegionSketch, BACKGROUND_RGB, CANVAS_SIZE, PALETTE,
};
pub use transform::{apply_transform, apply_transform_about, AffineTransform, MAX_SCALE};
