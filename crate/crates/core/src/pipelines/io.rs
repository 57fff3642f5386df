//! File formats: PGM images, scatter CSV and `result.json`.

use std::fs::File;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{RdeError, Result};
use crate::types::{Shape, Signal};

fn image_error(e: image::ImageError) -> RdeError {
    RdeError::Image(e.to_string())
}

/// Reads an 8-bit PGM (P2 or P5) into a greyscale signal in `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Signal> {
    let bytes = std::fs::read(path)?;
    decode_pgm(&bytes)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Signal> {
    let decoder = PnmDecoder::new(Cursor::new(bytes)).map_err(image_error)?;
    let img = DynamicImage::from_decoder(decoder).map_err(image_error)?;
    if img.color().has_color() {
        return Err(RdeError::Image("expected a greyscale image".into()));
    }
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    let values = luma.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Signal::new(values, Shape::image(h as usize, w as usize, 1))
}

fn quantize(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Writes values in `[0, 1]` (clamped) as an 8-bit PGM.
pub fn write_pgm(path: &Path, values: &[f64], height: usize, width: usize, ascii: bool) -> Result<()> {
    if values.len() != height * width {
        return Err(RdeError::Shape(format!(
            "{} values for a {height}x{width} image",
            values.len()
        )));
    }
    let encoding = if ascii { SampleEncoding::Ascii } else { SampleEncoding::Binary };
    let writer = BufWriter::new(File::create(path)?);
    PnmEncoder::new(writer)
        .with_subtype(PnmSubtype::Graymap(encoding))
        .write_image(&quantize(values), width as u32, height as u32, ExtendedColorType::L8)
        .map_err(image_error)
}

/// Masks are always written as ASCII PGM.
pub fn write_mask_pgm(path: &Path, values: &[f64], height: usize, width: usize) -> Result<()> {
    write_pgm(path, values, height, width, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub image_id: String,
    pub method: String,
    pub l1_normalized: f64,
    pub distortion_mean: f64,
    pub distortion_stderr: f64,
}

pub const SCATTER_HEADER: [&str; 5] = [
    "image_id",
    "method",
    "l1_normalized",
    "distortion_mean",
    "distortion_stderr",
];

pub fn scatter_csv(rows: &[ScatterRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(vec![]);
    w.write_record(SCATTER_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| RdeError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_scatter_csv(text: &str) -> Result<Vec<ScatterRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(RdeError::from)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
