//! 8-bit PNG frames and masks.
//!
//! Written files carry the producing run's config hash in a `tEXt` chunk
//! under [`HASH_KEY`].

use std::io::{BufReader, Cursor};
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType, Decoder, Encoder};
use vvt_core::raster::{Image, Mask};

use crate::error::{Result, VvtError};
use crate::fsio;

pub const HASH_KEY: &str = "vvt-config-hash";

#[derive(Debug, Clone, PartialEq)]
pub struct Png {
    pub image: Image,
    pub config_hash: Option<String>,
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn encode(
    width: usize,
    height: usize,
    color: ColorType,
    data: &[u8],
    hash: Option<&str>,
) -> std::result::Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(BitDepth::Eight);
        if let Some(h) = hash {
            enc.add_text_chunk(HASH_KEY.to_string(), h.to_string())?;
        }
        let mut w = enc.write_header()?;
        w.write_image_data(data)?;
    }
    Ok(out)
}

/// Writes a 1- or 3-channel image, rounding and clamping to 0..=255.
pub fn write_image(path: &Path, img: &Image, hash: Option<&str>) -> Result<()> {
    let color = match img.channels {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        c => return Err(VvtError::format(path, format!("cannot write {c}-channel image"))),
    };
    let data: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let bytes = encode(img.width, img.height, color, &data, hash).map_err(|e| VvtError::format(path, e))?;
    fsio::write(path, &bytes)
}

/// Reads gray, RGB, or RGBA (alpha dropped) 8-bit PNGs.
pub fn read_image(path: &Path) -> Result<Png> {
    let bytes = fsio::read(path)?;
    let fmt = |e: png::DecodingError| VvtError::format(path, e);
    let mut dec = Decoder::new(BufReader::new(Cursor::new(bytes)));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(fmt)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| VvtError::format(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.bit_depth != BitDepth::Eight {
        return Err(VvtError::format(path, "only 8-bit images are supported"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let src_ch = info.color_type.samples();
    let ch = match info.color_type {
        ColorType::Grayscale | ColorType::GrayscaleAlpha => 1,
        _ => 3,
    };
    let mut data = Vec::with_capacity(w * h * ch);
    for px in buf[..info.buffer_size()].chunks(src_ch) {
        data.extend(px[..ch].iter().map(|&v| f64::from(v)));
    }
    let config_hash =
        reader.info().uncompressed_latin1_text.iter().find(|t| t.keyword == HASH_KEY).map(|t| t.text.clone());
    Ok(Png { image: Image { width: w, height: h, channels: ch, data }, config_hash })
}

pub fn read_rgb(path: &Path) -> Result<Image> {
    let img = read_image(path)?.image;
    if img.channels == 3 {
        return Ok(img);
    }
    Ok(Image::from_fn(img.width, img.height, 3, |x, y, _| img.get(x, y, 0)))
}

/// Masks are 8-bit gray with values {0, 255}; anything else is rejected.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = read_image(path)?.image;
    if img.channels != 1 {
        return Err(VvtError::format(path, "mask must be single-channel"));
    }
    if let Some(v) = img.data.iter().find(|&&v| v != 0.0 && v != 255.0) {
        return Err(VvtError::format(path, format!("mask value {v} is not 0 or 255")));
    }
    Ok(Mask::from_fn(img.width, img.height, |x, y| img.get(x, y, 0) == 255.0))
}

pub fn write_mask(path: &Path, mask: &Mask, hash: Option<&str>) -> Result<()> {
    let data: Vec<u8> = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let bytes =
        encode(mask.width, mask.height, ColorType::Grayscale, &data, hash).map_err(|e| VvtError::format(path, e))?;
    fsio::write(path, &bytes)
}

pub fn frame_name(i: usize) -> String {
    format!("{i:05}.png")
}

pub fn write_frames(dir: &Path, frames: &[Image], hash: Option<&str>) -> Result<Vec<PathBuf>> {
    fsio::create_dir(dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = dir.join(frame_name(i));
            write_image(&p, f, hash).map(|_| p)
        })
        .collect()
}

pub fn write_masks(dir: &Path, masks: &[Mask], hash: Option<&str>) -> Result<Vec<PathBuf>> {
    fsio::create_dir(dir)?;
    masks
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let p = dir.join(frame_name(i));
            write_mask(&p, m, hash).map(|_| p)
        })
        .collect()
}

pub fn read_frames(dir: &Path) -> Result<Vec<Image>> {
    let files = fsio::list_files(dir, "png")?;
    if files.is_empty() {
        return Err(VvtError::format(dir, "no PNG frames"));
    }
    files.iter().map(|p| read_rgb(p)).collect()
}

pub fn read_frames_with_hashes(dir: &Path) -> Result<Vec<Png>> {
    let files = fsio::list_files(dir, "png")?;
    if files.is_empty() {
        return Err(VvtError::format(dir, "no PNG frames"));
    }
    files.iter().map(|p| read_image(p)).collect()
}

pub fn read_masks(dir: &Path) -> Result<Vec<Mask>> {
    let files = fsio::list_files(dir, "png")?;
    if files.is_empty() {
        return Err(VvtError::format(dir, "no PNG masks"));
    }
    files.iter().map(|p| read_mask(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_and_mask_roundtrip_with_hash() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 3, 3, |x, y, c| (x * 40 + y * 7 + c) as f64);
        let p = dir.path().join("a.png");
        write_image(&p, &img, Some("abc")).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.image, img);
        assert_eq!(back.config_hash.as_deref(), Some("abc"));

        let m = Mask::from_fn(4, 4, |x, y| x > y);
        let mp = dir.path().join("m.png");
        write_mask(&mp, &m, None).unwrap();
        assert_eq!(read_mask(&mp).unwrap(), m);

        let gray = Image::filled(2, 2, 1, 17.0);
        write_image(&mp, &gray, None).unwrap();
        assert!(read_mask(&mp).is_err());
    }
}
