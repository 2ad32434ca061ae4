//! Readers and writers for depth grids (`.npy` f32, 16-bit PNG), binary
//! masks, and 16-bit instance-ID maps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};
use ndarray::Array2;
use ndarray_npy::{read_npy, write_npy};
use serde::{Deserialize, Serialize};

use crate::depth::{check_dims, BinaryMask, DepthMap, DepthUnit};
use crate::error::{Error, Result};

/// On-disk encoding of a depth grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DepthFormat {
    #[serde(rename = "npy-f32")]
    NpyF32,
    #[serde(rename = "png-16")]
    Png16,
}

impl DepthFormat {
    /// Guess from a file extension (`.npy` or `.png`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "npy" => Some(Self::NpyF32),
            "png" => Some(Self::Png16),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NpyF32 => "npy-f32",
            Self::Png16 => "png-16",
        }
    }
}

impl fmt::Display for DepthFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DepthFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "npy-f32" | "npy" => Ok(Self::NpyF32),
            "png-16" | "png" => Ok(Self::Png16),
            other => Err(Error::invalid(format!("unknown depth format `{other}`"))),
        }
    }
}

/// 16-bit instance-ID grid; ID 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMap {
    pub height: usize,
    pub width: usize,
    pub ids: Vec<u16>,
}

impl InstanceMap {
    pub fn new(height: usize, width: usize, ids: Vec<u16>) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::invalid(format!(
                "instance map has {} values, expected {}x{}",
                ids.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, ids })
    }

    pub fn mask_of(&self, id: u16) -> BinaryMask {
        BinaryMask::new(self.height, self.width, self.ids.iter().map(|&v| v == id).collect())
            .expect("dimensions match by construction")
    }
}

/// Decode a depth file. PNG counts are multiplied by `depth_scale` and count
/// 0 becomes NaN; npy values are widened unchanged (`depth_scale` ignored).
pub fn decode_depth(path: &Path, format: DepthFormat, depth_scale: f64) -> Result<DepthMap> {
    match format {
        DepthFormat::NpyF32 => {
            let arr: Array2<f32> = read_npy(path).map_err(|e| Error::decode(path, e))?;
            let (h, w) = arr.dim();
            let values = arr.iter().map(|&v| v as f64).collect();
            DepthMap::new(h, w, values, DepthUnit::Metric)
        }
        DepthFormat::Png16 => {
            let img = open_image(path)?;
            let DynamicImage::ImageLuma16(buf) = img else {
                return Err(Error::decode(
                    path,
                    format!("expected single-channel 16-bit PNG, found {:?}", img.color()),
                ));
            };
            let (w, h) = buf.dimensions();
            let values = buf
                .into_raw()
                .into_iter()
                .map(|c| if c == 0 { f64::NAN } else { c as f64 * depth_scale })
                .collect();
            DepthMap::new(h as usize, w as usize, values, DepthUnit::Metric)
        }
    }
}

/// [`decode_depth`] plus a dimension check, reported against the path.
pub fn decode_depth_checked(
    path: &Path,
    format: DepthFormat,
    depth_scale: f64,
    dims: (usize, usize),
) -> Result<DepthMap> {
    let depth = decode_depth(path, format, depth_scale)?;
    check_dims("depth", depth.dims(), dims).map_err(|e| Error::decode(path, e))?;
    Ok(depth)
}

/// Decode a target mask. 8-bit images: nonzero is true, and `instance_id`
/// must be absent. 16-bit images: pixels equal to `instance_id`, or nonzero
/// when no id is given.
pub fn decode_mask(path: &Path, instance_id: Option<u16>) -> Result<BinaryMask> {
    match open_image(path)? {
        DynamicImage::ImageLuma8(buf) => {
            if instance_id.is_some() {
                return Err(Error::decode(path, "instance id given for an 8-bit mask"));
            }
            let (w, h) = buf.dimensions();
            BinaryMask::new(
                h as usize,
                w as usize,
                buf.into_raw().into_iter().map(|v| v != 0).collect(),
            )
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let raw = buf.into_raw();
            let bits: Vec<bool> = match instance_id {
                Some(id) => raw.iter().map(|&v| v == id).collect(),
                None => raw.iter().map(|&v| v != 0).collect(),
            };
            if let Some(id) = instance_id {
                if !bits.iter().any(|&b| b) {
                    return Err(Error::decode(path, format!("instance {id} absent")));
                }
            }
            BinaryMask::new(h as usize, w as usize, bits)
        }
        other => Err(Error::decode(
            path,
            format!("expected 8- or 16-bit grayscale PNG, found {:?}", other.color()),
        )),
    }
}

/// Decode a 16-bit instance-ID PNG. 8-bit inputs are accepted and widened.
pub fn decode_instance_map(path: &Path) -> Result<InstanceMap> {
    match open_image(path)? {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            InstanceMap::new(h as usize, w as usize, buf.into_raw())
        }
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            InstanceMap::new(
                h as usize,
                w as usize,
                buf.into_raw().into_iter().map(u16::from).collect(),
            )
        }
        other => Err(Error::decode(
            path,
            format!("expected grayscale instance map, found {:?}", other.color()),
        )),
    }
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::decode(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::decode(path, e))?
        .decode()
        .map_err(|e| Error::decode(path, e))
}

/// Write a depth grid as a C-order little-endian f32 `.npy`.
pub fn write_depth_npy(path: &Path, depth: &DepthMap) -> Result<()> {
    let arr = Array2::from_shape_vec(depth.dims(), depth.values().iter().map(|&v| v as f32).collect())
        .map_err(|e| Error::invalid(e.to_string()))?;
    write_npy(path, &arr).map_err(|e| Error::decode(path, e))
}

/// Write a 16-bit depth PNG, quantizing `value / depth_scale`. Non-finite and
/// nonpositive values become count 0.
pub fn write_depth_png16(path: &Path, depth: &DepthMap, depth_scale: f64) -> Result<()> {
    let counts: Vec<u16> = depth
        .values()
        .iter()
        .map(|&v| {
            if v.is_finite() && v > 0.0 {
                (v / depth_scale).round().clamp(1.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, counts)
            .ok_or_else(|| Error::invalid("depth buffer size"))?;
    buf.save(path).map_err(|e| Error::decode(path, e))
}

/// Write an 8-bit mask PNG (255 for true).
pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let raw: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .ok_or_else(|| Error::invalid("mask buffer size"))?;
    buf.save(path).map_err(|e| Error::decode(path, e))
}

/// Write a 16-bit instance-ID PNG.
pub fn write_instance_png(path: &Path, map: &InstanceMap) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, map.ids.clone())
            .ok_or_else(|| Error::invalid("instance buffer size"))?;
    buf.save(path).map_err(|e| Error::decode(path, e))
}

/// Write an f64 matrix as `.npy`.
pub fn write_matrix_npy(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    write_npy(path, matrix).map_err(|e| Error::decode(path, e))
}

/// Read an f64 matrix from `.npy`.
pub fn read_matrix_npy(path: &Path) -> Result<Array2<f64>> {
    read_npy(path).map_err(|e| Error::decode(path, e))
}
