use std::fmt;
use std::io::Cursor;

use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::blob::Blob;
use crate::error::{Error, Result};

/// Binary pixel region on a fixed canvas, stored row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RasterMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.max_x - self.min_x + 1
    }

    pub fn height(&self) -> u32 {
        self.max_y - self.min_y + 1
    }

    /// Center in continuous pixel coordinates (pixel `x` spans `[x, x+1)`).
    pub fn center(&self) -> (f64, f64) {
        (
            (self.min_x as f64 + self.max_x as f64 + 1.0) / 2.0,
            (self.min_y as f64 + self.max_y as f64 + 1.0) / 2.0,
        )
    }
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "mask dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

impl RasterMask {
    /// Empty mask of the given size.
    pub fn new(width: u32, height: u32) -> Result<Self> {
        check_dims(width, height)?;
        Ok(RasterMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if bits.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "mask of {width}x{height} needs {} bits, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        Ok(RasterMask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Ok(RasterMask {
            width,
            height,
            bits,
        })
    }

    /// Axis-aligned filled rectangle `[x0, x1) x [y0, y1)`, clipped to the canvas.
    pub fn rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        Self::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[self.index(x, y)]
    }

    /// Signed lookup; anything off-canvas reads as outside.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && self.get(x as u32, y as u32)
    }

    /// Panics if `(x, y)` is off-canvas.
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(
            x < self.width && y < self.height,
            "({x}, {y}) outside {}x{} mask",
            self.width,
            self.height
        );
        let i = self.index(x, y);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &RasterMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::invalid(format!(
                "mask dimensions differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &RasterMask, op: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.same_dims(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| op(a, b))
            .collect();
        Ok(RasterMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn union(&self, other: &RasterMask) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &RasterMask) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &RasterMask) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> Self {
        RasterMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// In-place union; dimensions must match.
    pub fn union_with(&mut self, other: &RasterMask) -> Result<()> {
        self.same_dims(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// In-place difference; dimensions must match.
    pub fn subtract(&mut self, other: &RasterMask) -> Result<()> {
        self.same_dims(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !b;
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &RasterMask) -> Result<usize> {
        self.same_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn is_subset_of(&self, other: &RasterMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn is_disjoint(&self, other: &RasterMask) -> bool {
        self.dims() == other.dims() && !self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut bbox: Option<BBox> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let x = (i % self.width as usize) as u32;
            let y = (i / self.width as usize) as u32;
            bbox = Some(match bbox {
                None => BBox {
                    min_x: x,
                    min_y: y,
                    max_x: x,
                    max_y: y,
                },
                Some(b) => BBox {
                    min_x: b.min_x.min(x),
                    min_y: b.min_y.min(y),
                    max_x: b.max_x.max(x),
                    max_y: b.max_y.max(y),
                },
            });
        }
        bbox
    }

    /// Mean pixel-center position of the inside pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            sx += (i % self.width as usize) as f64 + 0.5;
            sy += (i / self.width as usize) as f64 + 0.5;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Nearest-neighbor resample onto a `width x height` grid.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<Self> {
        if (width, height) == self.dims() {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Self::from_fn(width, height, |x, y| {
            let src_x = (((x as f64 + 0.5) * sx) as u32).min(self.width - 1);
            let src_y = (((y as f64 + 0.5) * sy) as u32).min(self.height - 1);
            self.get(src_x, src_y)
        })
    }

    /// Block-reduce by `factor`; a cell is inside when at least half of its
    /// covered source pixels are inside. Partial blocks at the right and
    /// bottom edges are judged on the pixels they actually cover.
    pub fn downsample_majority(&self, factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("downsample factor must be positive"));
        }
        let width = self.width.div_ceil(factor);
        let height = self.height.div_ceil(factor);
        Self::from_fn(width, height, |cx, cy| {
            let (mut inside, mut total) = (0usize, 0usize);
            for y in cy * factor..((cy + 1) * factor).min(self.height) {
                for x in cx * factor..((cx + 1) * factor).min(self.width) {
                    total += 1;
                    inside += self.get(x, y) as usize;
                }
            }
            inside * 2 >= total
        })
    }

    /// Grow by `radius` pixels (Chebyshev neighborhood).
    pub fn dilate(&self, radius: u32) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let mut out = self.clone();
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                if self.get(x as u32, y as u32) {
                    continue;
                }
                let hit = (-r..=r).any(|dy| (-r..=r).any(|dx| self.get_signed(x + dx, y + dy)));
                if hit {
                    out.set(x as u32, y as u32, true);
                }
            }
        }
        out
    }

    /// Encode as 8-bit grayscale PNG: 255 inside, 0 outside.
    pub fn to_png(&self) -> Vec<u8> {
        let img = GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        });
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("encoding into memory cannot fail");
        out.into_inner()
    }

    /// Decode a mask PNG. Any pixel with luminance >= 128 counts as inside.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::Format(format!("mask png: {e}")))?
            .to_luma8();
        let (w, h) = img.dimensions();
        Self::from_bits(w, h, img.pixels().map(|p| p.0[0] >= 128).collect())
    }
}

impl fmt::Debug for RasterMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "RasterMask({}x{}, {} set)",
            self.width,
            self.height,
            self.count()
        )
    }
}

#[derive(Serialize, Deserialize)]
struct MaskWire {
    width: u32,
    height: u32,
    png: Blob,
}

impl Serialize for RasterMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MaskWire {
            width: self.width,
            height: self.height,
            png: Blob::new(self.to_png()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RasterMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let wire = MaskWire::deserialize(deserializer)?;
        let mask = RasterMask::from_png(wire.png.as_bytes()).map_err(D::Error::custom)?;
        if mask.dims() != (wire.width, wire.height) {
            return Err(D::Error::custom("mask png dimensions disagree with header"));
        }
        Ok(mask)
    }
}

/// Intersection over union. Two empty masks score 0.
pub fn iou(a: &RasterMask, b: &RasterMask) -> Result<f64> {
    a.same_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Pixelwise union of two region masks; carries a relationship prompt.
pub fn joint_mask(a: &RasterMask, b: &RasterMask) -> Result<RasterMask> {
    a.union(b)
}

/// Pixels in `a` and not in `b`.
pub fn mask_difference(a: &RasterMask, b: &RasterMask) -> Result<RasterMask> {
    a.difference(b)
}
