//! Plain row-major rasters.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Interleaved `height × width × channels` raster of `f64` samples.
///
/// Pixel images use the 0..=255 scale; codec inputs use [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, channels, data }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Extracts a single channel as a one-channel image.
    pub fn channel(&self, c: usize) -> Image {
        Image::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, c))
    }

    pub fn crop(&self, rect: PixelRect) -> Result<Image> {
        if rect.x + rect.width > self.width || rect.y + rect.height > self.height {
            return Err(Error::WindowOutsideFrame(format!("{rect:?}")));
        }
        Ok(Image::from_fn(rect.width, rect.height, self.channels, |x, y, c| self.get(rect.x + x, rect.y + y, c)))
    }

    /// Writes `patch` into `self` with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, patch: &Image, x0: usize, y0: usize) -> Result<()> {
        if patch.channels != self.channels || x0 + patch.width > self.width || y0 + patch.height > self.height {
            return Err(Error::WindowOutsideFrame(format!("{}x{} at ({x0},{y0})", patch.width, patch.height)));
        }
        for y in 0..patch.height {
            let src = patch.index(0, y, 0);
            let dst = self.index(x0, y0 + y, 0);
            let n = patch.width * patch.channels;
            self.data[dst..dst + n].copy_from_slice(&patch.data[src..src + n]);
        }
        Ok(())
    }

    /// Bilinear resample with pixel-centre alignment and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        Image::from_fn(width, height, self.channels, |x, y, c| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let x0 = fx as usize;
            let y0 = fy as usize;
            let x1 = (x0 + 1).min(self.width - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let ax = fx - x0 as f64;
            let ay = fy - y0 as f64;
            let top = self.get(x0, y0, c) * (1.0 - ax) + self.get(x1, y0, c) * ax;
            let bottom = self.get(x0, y1, c) * (1.0 - ax) + self.get(x1, y1, c) * ax;
            top * (1.0 - ay) + bottom * ay
        })
    }
}

/// Binary raster: 1 = selected, 0 = not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![u8::from(value); width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| a == 0 || b != 0)
    }

    /// Tight bounding rectangle of the set pixels.
    pub fn bounding_rect(&self) -> Option<PixelRect> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| PixelRect { x: x0, y: y0, width: x1 - x0 + 1, height: y1 - y0 + 1 })
    }

    pub fn crop(&self, rect: PixelRect) -> Result<Mask> {
        if rect.x + rect.width > self.width || rect.y + rect.height > self.height {
            return Err(Error::WindowOutsideFrame(format!("{rect:?}")));
        }
        Ok(Mask::from_fn(rect.width, rect.height, |x, y| self.get(rect.x + x, rect.y + y)))
    }

    pub fn resize_nearest(&self, width: usize, height: usize) -> Mask {
        Mask::from_fn(width, height, |x, y| {
            let sx = ((x * self.width) / width).min(self.width - 1);
            let sy = ((y * self.height) / height).min(self.height - 1);
            self.get(sx, sy)
        })
    }

    /// One-channel image with values 0.0 / 1.0.
    pub fn to_image(&self) -> Image {
        Image::from_fn(self.width, self.height, 1, |x, y, _| if self.get(x, y) { 1.0 } else { 0.0 })
    }
}

/// Axis-aligned rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

/// Integer rectangle on the pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}
