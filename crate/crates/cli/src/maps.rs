//! Binary change maps as 8-bit grayscale PNG: 255 marks change, 0 no change.

use std::path::Path;

use anyhow::{Context, Result};
use image::GrayImage;

use hetcd::model::ChangeMap;

pub fn write_png(path: impl AsRef<Path>, map: &ChangeMap) -> Result<()> {
    let path = path.as_ref();
    let pixels = map.data().iter().map(|&c| if c { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(map.width() as u32, map.height() as u32, pixels).context("map buffer size")?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Any gray level above 127 counts as change.
pub fn read_png(path: impl AsRef<Path>) -> Result<ChangeMap> {
    let path = path.as_ref();
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?.to_luma8();
    let data = img.pixels().map(|p| p.0[0] > 127).collect();
    Ok(ChangeMap::new(img.height() as usize, img.width() as usize, data)?)
}
