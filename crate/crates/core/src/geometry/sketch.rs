//! Color-coded region sketches: the fixed palette, the legend sidecar and
//! region extraction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::mask::RasterMask;
use crate::error::{Error, Result};
use crate::semantic::RegionId;

/// Default sketch canvas edge length in pixels.
pub const CANVAS_SIZE: u32 = 1024;

pub const BACKGROUND_RGB: [u8; 3] = [255, 255, 255];

/// The twelve brush colors. Palette index doubles as layer order.
pub const PALETTE: [(&str, [u8; 3]); 12] = [
    ("red", [0xe6, 0x19, 0x4b]),
    ("green", [0x3c, 0xb4, 0x4b]),
    ("yellow", [0xff, 0xe1, 0x19]),
    ("blue", [0x43, 0x63, 0xd8]),
    ("orange", [0xf5, 0x82, 0x31]),
    ("purple", [0x91, 0x1e, 0xb4]),
    ("cyan", [0x42, 0xd4, 0xf4]),
    ("magenta", [0xf0, 0x32, 0xe6]),
    ("lime", [0xbf, 0xef, 0x45]),
    ("pink", [0xfa, 0xbe, 0xd4]),
    ("teal", [0x46, 0x99, 0x90]),
    ("lavender", [0xdc, 0xbe, 0xff]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PaletteColor(usize);

impl PaletteColor {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < PALETTE.len()).then_some(PaletteColor(index))
    }

    pub fn from_rgb(rgb: [u8; 3]) -> Option<Self> {
        PALETTE.iter().position(|(_, c)| *c == rgb).map(PaletteColor)
    }

    pub fn from_hex(hex: &str) -> Result<Self> {
        let rgb = parse_hex(hex)?;
        Self::from_rgb(rgb)
            .ok_or_else(|| Error::Format(format!("color {} is not in the palette", to_hex(rgb))))
    }

    pub fn all() -> impl Iterator<Item = PaletteColor> {
        (0..PALETTE.len()).map(PaletteColor)
    }

    pub fn index(&self) -> usize {
        self.0
    }

    pub fn name(&self) -> &'static str {
        PALETTE[self.0].0
    }

    pub fn rgb(&self) -> [u8; 3] {
        PALETTE[self.0].1
    }

    pub fn hex(&self) -> String {
        to_hex(self.rgb())
    }
}

impl fmt::Display for PaletteColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.hex(), self.name())
    }
}

impl Serialize for PaletteColor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.hex())
    }
}

impl<'de> Deserialize<'de> for PaletteColor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let hex = String::deserialize(d)?;
        PaletteColor::from_hex(&hex).map_err(serde::de::Error::custom)
    }
}

pub fn to_hex(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

fn parse_hex(hex: &str) -> Result<[u8; 3]> {
    let digits = hex.trim().trim_start_matches('#');
    if digits.len() != 6 || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(Error::Format(format!("malformed hex color {hex:?}")));
    }
    let byte = |i: usize| u8::from_str_radix(&digits[i..i + 2], 16).expect("validated hex");
    Ok([byte(0), byte(2), byte(4)])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub region_id: RegionId,
    /// Object type the user typed for this color, if any.
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub user_type: Option<String>,
}

/// Sidecar mapping palette color to region. Serialized as a JSON object
/// keyed by lowercase hex color.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Legend {
    entries: BTreeMap<PaletteColor, LegendEntry>,
}

impl Legend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, color: PaletteColor, entry: LegendEntry) -> Result<()> {
        if entry.region_id.is_background() {
            return Err(Error::Format(format!(
                "region id {:?} is reserved",
                entry.region_id.as_str()
            )));
        }
        if entry.region_id.as_str().trim().is_empty() {
            return Err(Error::Format(format!("empty region id for color {color}")));
        }
        if let Some((c, _)) = self
            .entries
            .iter()
            .find(|(c, e)| **c != color && e.region_id == entry.region_id)
        {
            return Err(Error::Format(format!(
                "region id {:?} used by both {c} and {color}",
                entry.region_id.as_str()
            )));
        }
        self.entries.insert(color, entry);
        Ok(())
    }

    /// Convenience for building legends in code.
    pub fn with(mut self, color: PaletteColor, region_id: &str, user_type: Option<&str>) -> Result<Self> {
        self.insert(
            color,
            LegendEntry {
                region_id: RegionId::new(region_id),
                user_type: user_type.map(str::to_string),
            },
        )?;
        Ok(self)
    }

    pub fn get(&self, color: PaletteColor) -> Option<&LegendEntry> {
        self.entries.get(&color)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PaletteColor, &LegendEntry)> {
        self.entries.iter().map(|(c, e)| (*c, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: IndexMap<String, LegendEntry> =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("legend: {e}")))?;
        let mut legend = Legend::new();
        for (hex, entry) in raw {
            legend.insert(PaletteColor::from_hex(&hex)?, entry)?;
        }
        Ok(legend)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("legend serializes")
    }
}

impl Serialize for Legend {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(self.entries.len()))?;
        for (color, entry) in &self.entries {
            map.serialize_entry(&color.hex(), entry)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Legend {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: IndexMap<String, LegendEntry> = IndexMap::deserialize(d)?;
        let mut legend = Legend::new();
        for (hex, entry) in raw {
            let color = PaletteColor::from_hex(&hex).map_err(serde::de::Error::custom)?;
            legend.insert(color, entry).map_err(serde::de::Error::custom)?;
        }
        Ok(legend)
    }
}

/// RGB sketch raster paired with its legend.
#[derive(Debug, Clone)]
pub struct RegionSketch {
    pub image: RgbImage,
    pub legend: Legend,
}

impl RegionSketch {
    pub fn from_png(png: &[u8], legend: Legend) -> Result<Self> {
        let image = image::load_from_memory_with_format(png, ImageFormat::Png)
            .map_err(|e| Error::Format(format!("sketch png: {e}")))?
            .to_rgb8();
        Ok(RegionSketch { image, legend })
    }

    pub fn dims(&self) -> (u32, u32) {
        self.image.dimensions()
    }
}

/// One colored object area of a sketch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
    pub color: PaletteColor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_type: Option<String>,
    pub mask: RasterMask,
}

/// Split a sketch into one region per legend color present.
///
/// Every connected component of a color belongs to the same region. The
/// returned list is ordered by palette index.
pub fn extract_regions(sketch: &RegionSketch) -> Result<Vec<Region>> {
    let (w, h) = sketch.dims();
    if w == 0 || h == 0 {
        return Ok(Vec::new());
    }
    let mut masks: BTreeMap<PaletteColor, Vec<bool>> = BTreeMap::new();
    for (i, px) in sketch.image.pixels().enumerate() {
        if px.0 == BACKGROUND_RGB {
            continue;
        }
        let color = PaletteColor::from_rgb(px.0).ok_or_else(|| {
            Error::Format(format!(
                "sketch contains non-palette color {} at ({}, {})",
                to_hex(px.0),
                i as u32 % w,
                i as u32 / w
            ))
        })?;
        masks
            .entry(color)
            .or_insert_with(|| vec![false; w as usize * h as usize])[i] = true;
    }
    masks
        .into_iter()
        .map(|(color, bits)| {
            let entry = sketch.legend.get(color).ok_or_else(|| {
                Error::Format(format!("sketch color {color} has no legend entry"))
            })?;
            Ok(Region {
                id: entry.region_id.clone(),
                color,
                user_type: entry.user_type.clone(),
                mask: RasterMask::from_bits(w, h, bits)?,
            })
        })
        .collect()
}

/// Everything not covered by any region.
pub fn background_mask(width: u32, height: u32, regions: &[Region]) -> Result<RasterMask> {
    let mut covered = RasterMask::new(width, height)?;
    for r in regions {
        covered.union_with(&r.mask)?;
    }
    Ok(covered.complement())
}

/// Paint masks onto a white canvas in the given order and encode as RGB PNG.
pub fn render_sketch_png(width: u32, height: u32, layers: &[(PaletteColor, &RasterMask)]) -> Result<Vec<u8>> {
    let mut img = RgbImage::from_pixel(width, height, Rgb(BACKGROUND_RGB));
    for (color, mask) in layers {
        if mask.dims() != (width, height) {
            return Err(Error::invalid("sketch layer dimensions differ from canvas"));
        }
        for y in 0..height {
            for x in 0..width {
                if mask.get(x, y) {
                    img.put_pixel(x, y, Rgb(color.rgb()));
                }
            }
        }
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn color(i: usize) -> PaletteColor {
        PaletteColor::from_index(i).unwrap()
    }

    #[test]
    fn palette_is_distinct_and_excludes_white() {
        for (i, (_, a)) in PALETTE.iter().enumerate() {
            assert_ne!(*a, BACKGROUND_RGB);
            for (_, b) in &PALETTE[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn hex_parsing() {
        assert_eq!(PaletteColor::from_hex("#E6194B").unwrap(), color(0));
        assert_eq!(PaletteColor::from_hex("4363d8").unwrap().name(), "blue");
        assert!(PaletteColor::from_hex("#123456").is_err());
        assert!(PaletteColor::from_hex("#12zz56").is_err());
    }

    #[test]
    fn legend_json_round_trip() {
        let legend = Legend::new()
            .with(color(0), "girl", Some("girl"))
            .unwrap()
            .with(color(3), "cat", None)
            .unwrap();
        let json = legend.to_json();
        assert!(json.contains("\"#e6194b\""));
        assert_eq!(Legend::from_json(&json).unwrap(), legend);
    }

    #[test]
    fn legend_rejects_reserved_and_duplicate_ids() {
        assert!(Legend::new().with(color(0), "background", None).is_err());
        let l = Legend::new().with(color(0), "a", None).unwrap();
        assert!(l.with(color(1), "a", None).is_err());
    }

    #[test]
    fn blank_canvas_has_no_regions() {
        let png = render_sketch_png(16, 16, &[]).unwrap();
        let sketch = RegionSketch::from_png(&png, Legend::new()).unwrap();
        assert!(extract_regions(&sketch).unwrap().is_empty());
    }

    #[test]
    fn same_color_components_merge() {
        let a = RasterMask::rect(32, 32, 1, 1, 6, 6).unwrap();
        let b = RasterMask::rect(32, 32, 20, 20, 30, 28).unwrap();
        let png = render_sketch_png(32, 32, &[(color(0), &a), (color(0), &b)]).unwrap();
        let legend = Legend::new().with(color(0), "dog", None).unwrap();
        let regions = extract_regions(&RegionSketch::from_png(&png, legend).unwrap()).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].mask, a.union(&b).unwrap());
    }

    #[test]
    fn non_palette_color_named_in_error() {
        let mut img = RgbImage::from_pixel(4, 4, Rgb(BACKGROUND_RGB));
        img.put_pixel(2, 1, Rgb([1, 2, 3]));
        let sketch = RegionSketch {
            image: img,
            legend: Legend::new(),
        };
        let err = extract_regions(&sketch).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains("#010203")), "{err}");
    }

    #[test]
    fn color_missing_from_legend_is_format_error() {
        let a = RasterMask::rect(8, 8, 1, 1, 3, 3).unwrap();
        let png = render_sketch_png(8, 8, &[(color(2), &a)]).unwrap();
        let sketch = RegionSketch::from_png(&png, Legend::new()).unwrap();
        assert!(matches!(extract_regions(&sketch), Err(Error::Format(_))));
    }
}
