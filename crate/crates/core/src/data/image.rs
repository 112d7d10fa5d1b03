use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// An 8-bit image with interleaved channels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "{} bytes do not form a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(RawImage {
            width,
            height,
            channels: 3,
            data,
        })
    }
}

/// Maps bytes to `v / 127.5 - 1`, giving a `(1, 3, H, W)` tensor in `[-1, 1]`.
pub fn normalize_image(raw: &RawImage) -> Result<Tensor> {
    if raw.channels != 3 {
        return Err(Error::Format(format!("expected 3 channels, got {}", raw.channels)));
    }
    let plane = raw.width * raw.height;
    if raw.data.len() != plane * 3 {
        return Err(Error::Format(format!(
            "{} bytes do not form a {}x{} RGB image",
            raw.data.len(),
            raw.width,
            raw.height
        )));
    }
    let mut data = vec![0.0f32; plane * 3];
    for (i, px) in raw.data.chunks_exact(3).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * plane + i] = f32::from(v) / 127.5 - 1.0;
        }
    }
    Tensor::new(Shape::new(1, 3, raw.height, raw.width), data)
}

/// Inverse of [`normalize_image`] for one sample: clamps to `[-1, 1]` and
/// maps `v` to `round((v + 1) * 127.5)`.
pub fn denormalize_image(t: &Tensor) -> Result<RawImage> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::dim("N/C", format!("expected (1, 3, H, W), got {s}")));
    }
    let plane = s.plane();
    let mut data = vec![0u8; plane * 3];
    for (c, src) in t.data().chunks_exact(plane).enumerate() {
        for (i, &v) in src.iter().enumerate() {
            // NaN clamps to the low end rather than propagating.
            let v = if v.is_nan() { -1.0 } else { v.clamp(-1.0, 1.0) };
            data[i * 3 + c] = ((v + 1.0) * 127.5).round() as u8;
        }
    }
    Ok(RawImage {
        width: s.w,
        height: s.h,
        channels: 3,
        data,
    })
}

/// Decodes a PNG, expanding palettes and stripping 16-bit depth. The
/// channel count is whatever the file stores.
pub fn read_png(path: &Path) -> Result<RawImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let bad = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let channels = info.color_type.samples();
    let (width, height) = (info.width as usize, info.height as usize);
    let row = width * channels;
    let mut data = Vec::with_capacity(row * height);
    for line in buf.chunks(info.line_size).take(height) {
        data.extend_from_slice(&line[..row]);
    }
    Ok(RawImage {
        width,
        height,
        channels,
        data,
    })
}

/// Writes an 8-bit RGB PNG.
pub fn write_png(path: &Path, image: &RawImage) -> Result<()> {
    if image.channels != 3 {
        return Err(Error::Format(format!("expected 3 channels, got {}", image.channels)));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let bad = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(bad)?;
    writer.write_image_data(&image.data).map_err(bad)?;
    writer.finish().map_err(bad)
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    normalize_image(&read_png(path)?)
}

pub fn save_image(path: &Path, t: &Tensor) -> Result<()> {
    write_png(path, &denormalize_image(t)?)
}
