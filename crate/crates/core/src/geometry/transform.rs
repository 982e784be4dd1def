use serde::{Deserialize, Serialize};

use super::mask::RasterMask;
use crate::error::{Error, Result};

pub const MAX_SCALE: f64 = 16.0;

/// Uniform scale about the mask's bounding-box center, followed by an
/// integer translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub dx: i32,
    pub dy: i32,
    pub scale: f64,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        dx: 0,
        dy: 0,
        scale: 1.0,
    };

    pub fn new(dx: i32, dy: i32, scale: f64) -> Result<Self> {
        let t = AffineTransform { dx, dy, scale };
        t.validate()?;
        Ok(t)
    }

    pub fn translate(dx: i32, dy: i32) -> Self {
        AffineTransform { dx, dy, scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if self.scale > MAX_SCALE {
            return Err(Error::invalid(format!(
                "scale {} exceeds maximum {MAX_SCALE}",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// `self` followed by `next`. Scales multiply, offsets add; since scaling
    /// is about the object's own center this matches applying the two in turn
    /// up to resampling.
    pub fn then(&self, next: &AffineTransform) -> Result<Self> {
        let composed = AffineTransform {
            dx: self
                .dx
                .checked_add(next.dx)
                .ok_or_else(|| Error::invalid("translation overflow"))?,
            dy: self
                .dy
                .checked_add(next.dy)
                .ok_or_else(|| Error::invalid("translation overflow"))?,
            scale: self.scale * next.scale,
        };
        composed.validate()?;
        Ok(composed)
    }
}

/// Nearest-neighbor scale then translate, clipped to the canvas. Scaling is
/// about the mask's bounding-box center.
pub fn apply_transform(mask: &RasterMask, t: &AffineTransform) -> Result<RasterMask> {
    t.validate()?;
    match mask.bbox() {
        Some(bbox) if !t.is_identity() => apply_transform_about(mask, t, bbox.center()),
        _ => Ok(mask.clone()),
    }
}

/// Like [`apply_transform`] but scaling about an explicit `center`, so a
/// companion raster (such as the object's edges) moves with its mask.
pub fn apply_transform_about(mask: &RasterMask, t: &AffineTransform, center: (f64, f64)) -> Result<RasterMask> {
    t.validate()?;
    if t.is_identity() {
        return Ok(mask.clone());
    }
    let (w, h) = mask.dims();
    let (cx, cy) = center;
    let (dx, dy) = (t.dx as f64, t.dy as f64);
    RasterMask::from_fn(w, h, |x, y| {
        // Inverse-map the destination pixel center into the source.
        let sx = (x as f64 + 0.5 - dx - cx) / t.scale + cx;
        let sy = (y as f64 + 0.5 - dy - cy) / t.scale + cy;
        mask.get_signed(sx.floor() as i64, sy.floor() as i64)
    })
}
