//! Laplacian-pyramid blending of generated crops into source frames.
//!
//! Filters are written as "centre plus weighted differences" so constant
//! regions stay exactly constant through blur, decimation and upsampling.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::raster::{Image, PixelRect};

pub const DEFAULT_LEVELS: usize = 4;

/// Band-pass levels, finest first; the last level is the low-pass residual.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPyramid {
    pub levels: Vec<Image>,
}

/// 5-tap binomial `[1, 4, 6, 4, 1] / 16` along one axis with edge clamping.
fn blur_axis(src: &Image, horizontal: bool) -> Image {
    let (w, h) = (src.width as isize, src.height as isize);
    Image::from_fn(src.width, src.height, src.channels, |x, y, c| {
        let centre = src.get(x, y, c);
        let at = |d: isize| {
            let (xx, yy) = if horizontal {
                ((x as isize + d).clamp(0, w - 1), y as isize)
            } else {
                (x as isize, (y as isize + d).clamp(0, h - 1))
            };
            src.get(xx as usize, yy as usize, c) - centre
        };
        centre + ((at(-2) + at(2)) + 4.0 * (at(-1) + at(1))) / 16.0
    })
}

fn blur(src: &Image) -> Image {
    blur_axis(&blur_axis(src, true), false)
}

pub fn downsample(src: &Image) -> Image {
    let b = blur(src);
    Image::from_fn(src.width.div_ceil(2), src.height.div_ceil(2), src.channels, |x, y, c| b.get(2 * x, 2 * y, c))
}

/// Interpolating upsample matching the binomial kernel: even samples get
/// `(s[i−1] + 6 s[i] + s[i+1]) / 8`, odd samples `(s[i] + s[i+1]) / 2`.
fn upsample_axis(src: &Image, horizontal: bool, target: usize) -> Image {
    let n = if horizontal { src.width } else { src.height } as isize;
    let (ow, oh) = if horizontal { (target, src.height) } else { (src.width, target) };
    Image::from_fn(ow, oh, src.channels, |x, y, c| {
        let o = if horizontal { x } else { y };
        let i = (o / 2) as isize;
        let get = |k: isize| {
            let k = k.clamp(0, n - 1) as usize;
            if horizontal {
                src.get(k, y, c)
            } else {
                src.get(x, k, c)
            }
        };
        let s = get(i);
        if o % 2 == 0 {
            s + ((get(i - 1) - s) + (get(i + 1) - s)) / 8.0
        } else {
            s + (get(i + 1) - s) / 2.0
        }
    })
}

pub fn upsample(src: &Image, width: usize, height: usize) -> Image {
    upsample_axis(&upsample_axis(src, true, width), false, height)
}

fn check_levels(img: &Image, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidArgument("pyramid needs at least one level".into()));
    }
    let div = 1usize << (levels - 1);
    if !img.width.is_multiple_of(div) || !img.height.is_multiple_of(div) {
        return Err(Error::Shape(format!(
            "{}x{} not divisible by 2^{} for a {levels}-level pyramid",
            img.width,
            img.height,
            levels - 1
        )));
    }
    Ok(())
}

pub fn gaussian_pyramid(img: &Image, levels: usize) -> Result<Vec<Image>> {
    check_levels(img, levels)?;
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for _ in 1..levels {
        let next = downsample(out.last().unwrap());
        out.push(next);
    }
    Ok(out)
}

fn zip_with(a: &Image, b: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
    Image { data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(), ..a.clone() }
}

pub fn build_pyramid(img: &Image, levels: usize) -> Result<LaplacianPyramid> {
    let gauss = gaussian_pyramid(img, levels)?;
    let mut bands = Vec::with_capacity(levels);
    for l in 0..levels - 1 {
        let up = upsample(&gauss[l + 1], gauss[l].width, gauss[l].height);
        bands.push(zip_with(&gauss[l], &up, |a, b| a - b));
    }
    bands.push(gauss[levels - 1].clone());
    Ok(LaplacianPyramid { levels: bands })
}

pub fn reconstruct(pyr: &LaplacianPyramid) -> Image {
    let mut img = pyr.levels.last().expect("pyramid has levels").clone();
    for band in pyr.levels.iter().rev().skip(1) {
        let up = upsample(&img, band.width, band.height);
        img = zip_with(band, &up, |a, b| a + b);
    }
    img
}

/// Blends `generated` into `original` at `window`.
///
/// Per level the band is `m·g + (1 − m)·o`, written as `o + m·(g − o)`;
/// the crop is reconstructed as `o + reconstruct(m·(g − o))`, so a zero
/// mask leaves the frame bit-identical. `mask` is a one-channel soft mask
/// in [0, 1] at crop resolution.
pub fn pyramid_fuse(
    original: &Image,
    generated: &Image,
    mask: &Image,
    window: PixelRect,
    levels: usize,
) -> Result<Image> {
    if window.x + window.width > original.width || window.y + window.height > original.height {
        return Err(Error::WindowOutsideFrame(format!("{window:?} in a {}x{} frame", original.width, original.height)));
    }
    if (generated.width, generated.height) != (window.width, window.height) || generated.channels != original.channels {
        return Err(Error::Shape(format!(
            "generated crop {}x{}x{} does not fit window {}x{}",
            generated.width, generated.height, generated.channels, window.width, window.height
        )));
    }
    if (mask.width, mask.height, mask.channels) != (window.width, window.height, 1) {
        return Err(Error::Shape("mask must be one channel at crop resolution".into()));
    }
    let o = original.crop(window)?;
    let po = build_pyramid(&o, levels)?;
    let pg = build_pyramid(generated, levels)?;
    let pm = gaussian_pyramid(mask, levels)?;
    let delta = LaplacianPyramid {
        levels: (0..levels)
            .map(|l| {
                let (ol, gl, ml) = (&po.levels[l], &pg.levels[l], &pm[l]);
                Image::from_fn(ol.width, ol.height, ol.channels, |x, y, c| {
                    ml.get(x, y, 0) * (gl.get(x, y, c) - ol.get(x, y, c))
                })
            })
            .collect(),
    };
    let d = reconstruct(&delta);
    let fused = zip_with(&o, &d, |a, b| a + b);
    let mut out = original.clone();
    out.paste(&fused, window.x, window.y)?;
    Ok(out)
}

/// Hard paste of `generated` where `mask > 0.5`.
pub fn hard_paste(original: &Image, generated: &Image, mask: &Image, window: PixelRect) -> Result<Image> {
    let o = original.crop(window)?;
    if !generated.same_shape(&o) {
        return Err(Error::Shape("generated crop does not fit window".into()));
    }
    let fused = Image::from_fn(o.width, o.height, o.channels, |x, y, c| {
        if mask.get(x, y, 0) > 0.5 {
            generated.get(x, y, c)
        } else {
            o.get(x, y, c)
        }
    });
    let mut out = original.clone();
    out.paste(&fused, window.x, window.y)?;
    Ok(out)
}

/// Largest `|I(p−1) − 2 I(p) + I(p+1)|` over horizontal and vertical
/// triples whose centre has a neighbour on the other side of the mask.
pub fn seam_energy(img: &Image, mask: &Image) -> f64 {
    let on = |x: usize, y: usize| mask.get(x, y, 0) > 0.5;
    let mut worst: f64 = 0.0;
    for y in 0..img.height {
        for x in 0..img.width {
            for (dx, dy) in [(1usize, 0usize), (0, 1)] {
                if x < dx || y < dy || x + dx >= img.width || y + dy >= img.height {
                    continue;
                }
                let (px, py, nx, ny) = (x - dx, y - dy, x + dx, y + dy);
                if on(px, py) == on(x, y) && on(x, y) == on(nx, ny) {
                    continue;
                }
                for c in 0..img.channels {
                    let d2 = img.get(px, py, c) - 2.0 * img.get(x, y, c) + img.get(nx, ny, c);
                    worst = worst.max(d2.abs());
                }
            }
        }
    }
    worst
}
