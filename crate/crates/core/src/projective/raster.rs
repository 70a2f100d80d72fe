use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{GeometryError, Homography};

const EDGE_SLACK: f64 = 1e-9;

/// Row-major 8-bit image with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidImage("dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(GeometryError::InvalidImage(format!(
                "unsupported channel count {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(GeometryError::InvalidImage(format!(
                "expected {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32, channels: u8) -> Result<Self, GeometryError> {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![0; len])
    }

    /// Builds an image by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: u32,
        height: u32,
        channels: u8,
        mut f: impl FnMut(u32, u32, u8) -> u8,
    ) -> Result<Self, GeometryError> {
        let mut data = Vec::with_capacity(width as usize * height as usize * channels as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.index(x, y) + c as usize]
    }

    fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    /// Reads PNG or binary PGM/PPM. Gray inputs stay single-channel; anything
    /// else is converted to RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let img = image::open(path)?;
        let (width, height) = (img.width(), img.height());
        if img.color().has_color() {
            Self::new(width, height, 3, img.into_rgb8().into_raw())
        } else {
            Self::new(width, height, 1, img.into_luma8().into_raw())
        }
    }

    /// Writes the image; the format follows the file extension (png, pgm, ppm).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GeometryError> {
        self.to_dynamic().save(path)?;
        Ok(())
    }

    fn to_dynamic(&self) -> DynamicImage {
        let data = self.data.clone();
        match self.channels {
            1 => DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, _>::from_raw(self.width, self.height, data)
                    .expect("length checked at construction"),
            ),
            _ => DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(self.width, self.height, data)
                    .expect("length checked at construction"),
            ),
        }
    }

    /// Bilinear sample at a continuous position; `None` outside the image.
    fn sample(&self, sx: f64, sy: f64, out: &mut [u8]) -> bool {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(sx >= -EDGE_SLACK && sx <= max_x + EDGE_SLACK && sy >= -EDGE_SLACK && sy <= max_y + EDGE_SLACK) {
            return false;
        }
        let sx = sx.clamp(0.0, max_x);
        let sy = sy.clamp(0.0, max_y);
        let x0 = sx.floor() as u32;
        let y0 = sy.floor() as u32;
        let fx = sx - x0 as f64;
        let fy = sy - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (i00, i10) = (self.index(x0, y0), self.index(x1, y0));
        let (i01, i11) = (self.index(x0, y1), self.index(x1, y1));
        for (c, slot) in out.iter_mut().enumerate() {
            let v = (1.0 - fx) * (1.0 - fy) * self.data[i00 + c] as f64
                + fx * (1.0 - fy) * self.data[i10 + c] as f64
                + (1.0 - fx) * fy * self.data[i01 + c] as f64
                + fx * fy * self.data[i11 + c] as f64;
            *slot = v.round().clamp(0.0, 255.0) as u8;
        }
        true
    }
}

/// Warps `img` by `h` using inverse mapping: output pixel `q` takes the
/// bilinear sample of the input at `h^-1 q`. Samples falling outside the
/// input are filled with zero; the output keeps the input dimensions.
pub fn warp_image(img: &RasterImage, h: &Homography) -> Result<RasterImage, GeometryError> {
    let inv = *h.inverse()?.matrix();
    let mut out = RasterImage::zeros(img.width, img.height, img.channels)?;
    let ch = img.channels as usize;
    let mut px = [0u8; 3];
    for y in 0..img.height {
        for x in 0..img.width {
            let (xf, yf) = (x as f64, y as f64);
            let w = inv[(2, 0)] * xf + inv[(2, 1)] * yf + inv[(2, 2)];
            if w.abs() <= 1e-12 {
                continue;
            }
            let sx = (inv[(0, 0)] * xf + inv[(0, 1)] * yf + inv[(0, 2)]) / w;
            let sy = (inv[(1, 0)] * xf + inv[(1, 1)] * yf + inv[(1, 2)]) / w;
            if img.sample(sx, sy, &mut px[..ch]) {
                let i = out.index(x, y);
                out.data[i..i + ch].copy_from_slice(&px[..ch]);
            }
        }
    }
    Ok(out)
}
