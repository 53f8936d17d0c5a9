//! PNG and JSON file helpers with pinned encoder settings, so identical
//! inputs always produce byte-identical files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{GrayImage, LabelMap, Raster, RgbImage};

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
        }
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::file(path, e))
}

fn encode(path: &Path, bytes: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<()> {
    let mut out = create(path)?;
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(bytes, w as u32, h as u32, color)?;
    out.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| {
        Error::format(format!("{}: {e}", path.display()))
    })
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    img.require_single_channel("write_gray_png")?;
    encode(path, img.data(), img.width(), img.height(), ExtendedColorType::L8)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::invalid("write_rgb_png expects 3 channels"));
    }
    encode(path, img.data(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

/// Any PNG, converted to 8-bit luma.
pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    let img = open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Raster::new(w as usize, h as usize, 1, img.into_raw())
}

/// Any PNG, converted to 8-bit RGB.
pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    Raster::new(w as usize, h as usize, 3, img.into_raw())
}

/// 16-bit single-channel PNG; pixel value is the region id.
pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<()> {
    labels.require_single_channel("write_label_png")?;
    let mut bytes = Vec::with_capacity(labels.len() * 2);
    for &l in labels.data() {
        let v = u16::try_from(l)
            .map_err(|_| Error::invalid(format!("label {l} does not fit a 16-bit PNG")))?;
        // The encoder takes native-endian samples and swaps them itself.
        bytes.extend_from_slice(&v.to_ne_bytes());
    }
    encode(path, &bytes, labels.width(), labels.height(), ExtendedColorType::L16)
}

pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<u32> = match img {
        image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        // 8-bit label maps keep their raw values.
        image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::format(format!(
                "{}: label maps must be single-channel, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Raster::new(w, h, 1, data)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::file(path, e))?;
    out.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(bytes).map_err(|e| Error::file(path, e))?;
    out.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}
