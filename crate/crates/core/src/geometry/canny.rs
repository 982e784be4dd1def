use std::collections::VecDeque;

use image::ImageFormat;
use serde::{Deserialize, Serialize};

use super::mask::RasterMask;
use crate::error::{Error, Result};

/// Row-major luminance image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if values.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "{width}x{height} image needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("luminance {v} outside [0, 1]")));
        }
        Ok(GrayImage {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Result<Self> {
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, values)
    }

    /// 1.0 inside the mask, 0.0 outside.
    pub fn from_mask(mask: &RasterMask) -> Self {
        GrayImage {
            width: mask.width(),
            height: mask.height(),
            values: mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Decode any supported PNG to Rec. 601 luminance.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::Format(format!("png: {e}")))?
            .to_luma8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.pixels().map(|p| p.0[0] as f32 / 255.0).collect())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Copy with every pixel outside `mask` set to `fill`.
    pub fn masked(&self, mask: &RasterMask, fill: f32) -> Result<Self> {
        if mask.dims() != (self.width, self.height) {
            return Err(Error::invalid("image and mask dimensions differ"));
        }
        let values = self
            .values
            .iter()
            .zip(mask.bits())
            .map(|(&v, &inside)| if inside { v } else { fill })
            .collect();
        Self::new(self.width, self.height, values)
    }
}

/// Binary edge raster produced by [`canny`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeMap(pub RasterMask);

impl EdgeMap {
    pub fn empty(width: u32, height: u32) -> Result<Self> {
        RasterMask::new(width, height).map(EdgeMap)
    }

    pub fn as_mask(&self) -> &RasterMask {
        &self.0
    }

    pub fn into_mask(self) -> RasterMask {
        self.0
    }

    pub fn dims(&self) -> (u32, u32) {
        self.0.dims()
    }

    pub fn count(&self) -> usize {
        self.0.count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub low: f32,
    pub high: f32,
    /// Standard deviation of the 5x5 smoothing kernel.
    pub sigma: f32,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            low: 0.1,
            high: 0.3,
            sigma: 1.4,
        }
    }
}

/// Normalizer for gradient magnitude: the Sobel response to an unsmoothed
/// unit step is 4, so magnitudes are reported in units of that step.
pub const SOBEL_STEP_RESPONSE: f32 = 4.0;

pub fn gaussian_kernel_5(sigma: f32) -> [f32; 5] {
    let mut k = [0f32; 5];
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f32 - 2.0;
        *w = (-(d * d) / (2.0 * sigma * sigma)).exp();
    }
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Plane {
    #[inline]
    fn clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    #[inline]
    fn zero_padded(&self, x: isize, y: isize) -> f32 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }
}

fn smooth(img: &GrayImage, sigma: f32) -> Plane {
    let k = gaussian_kernel_5(sigma);
    let (w, h) = (img.width as usize, img.height as usize);
    let src = Plane {
        width: w,
        height: h,
        data: img.values.clone(),
    };
    let mut horiz = Plane {
        width: w,
        height: h,
        data: vec![0.0; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            horiz.data[y * w + x] = (0..5)
                .map(|i| k[i] * src.clamped(x as isize + i as isize - 2, y as isize))
                .sum();
        }
    }
    let mut out = Plane {
        width: w,
        height: h,
        data: vec![0.0; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = (0..5)
                .map(|i| k[i] * horiz.clamped(x as isize, y as isize + i as isize - 2))
                .sum();
        }
    }
    out
}

/// Classical canny: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression, double threshold and hysteresis tracking.
///
/// Thresholds apply to the gradient magnitude divided by
/// [`SOBEL_STEP_RESPONSE`] and must satisfy `0 <= low < high <= 1`.
pub fn canny(img: &GrayImage, low: f32, high: f32) -> Result<EdgeMap> {
    canny_with(
        img,
        &CannyParams {
            low,
            high,
            ..CannyParams::default()
        },
    )
}

pub fn canny_with(img: &GrayImage, params: &CannyParams) -> Result<EdgeMap> {
    let CannyParams { low, high, sigma } = *params;
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) {
        return Err(Error::invalid(format!(
            "canny thresholds must lie in [0, 1], got low={low} high={high}"
        )));
    }
    if low >= high {
        return Err(Error::invalid(format!(
            "canny low threshold {low} must be below high threshold {high}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }

    let (w, h) = (img.width as usize, img.height as usize);
    let smoothed = smooth(img, sigma);

    let mut magnitude = Plane {
        width: w,
        height: h,
        data: vec![0.0; w * h],
    };
    let mut sector = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| smoothed.clamped(x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y as usize * w + x as usize;
            magnitude.data[i] = gx.hypot(gy) / SOBEL_STEP_RESPONSE;
            sector[i] = quantize_direction(gx, gy);
        }
    }

    // Non-maximum suppression along the quantized gradient direction. Ties
    // are broken towards the pixel on the positive side so plateaus thin to
    // a single pixel.
    let mut thin = vec![0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = magnitude.data[i];
            if m < low {
                continue;
            }
            let (ox, oy) = match sector[i] {
                0 => (1, 0),
                1 => (1, 1),
                2 => (0, 1),
                _ => (-1, 1),
            };
            let ahead = magnitude.zero_padded(x + ox, y + oy);
            let behind = magnitude.zero_padded(x - ox, y - oy);
            if m > ahead && m >= behind {
                thin[i] = m;
            }
        }
    }

    // Hysteresis: strong pixels seed a flood over 8-connected weak pixels.
    let mut edges = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high {
            edges[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] >= low {
                    edges[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }

    RasterMask::from_bits(img.width, img.height, edges).map(EdgeMap)
}

/// 0: horizontal gradient, 1: along +x+y, 2: vertical, 3: along -x+y
/// (image coordinates, y pointing down).
fn quantize_direction(gx: f32, gy: f32) -> u8 {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        0
    } else if angle < 67.5 {
        1
    } else if angle < 112.5 {
        2
    } else {
        3
    }
}
