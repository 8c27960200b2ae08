//! Raster sampling, normalization and photometric augmentation.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::RgbImage;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Normalized value used for pixels outside the world image.
pub const FILL: f32 = 0.0;

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingImage(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_rgb8())
}

/// A `3 x height x width` planar image with values `pixel / 255 - 0.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct Planar {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Planar {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (width, height) = (img.width() as usize, img.height() as usize);
        let plane = width * height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in img.pixels().enumerate() {
            for ch in 0..3 {
                data[ch * plane + i] = px[ch] as f32 / 255.0 - 0.5;
            }
        }
        Planar { width, height, data }
    }

    /// The `w x h` window whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Planar> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "window {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let (src_plane, plane) = (self.width * self.height, w * h);
        let mut data = Vec::with_capacity(3 * plane);
        for ch in 0..3 {
            for y in y0..y0 + h {
                let start = ch * src_plane + y * self.width + x0;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Ok(Planar { width: w, height: h, data })
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.data.clone(), (3, self.height, self.width), device)?.to_dtype(dtype)?)
    }

    pub fn to_rgb(&self) -> RgbImage {
        let plane = self.width * self.height;
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            let px = |c: usize| ((self.data[c * plane + i] + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }
}

/// Stacks planar images of one size into a `[B, 3, H, W]` tensor.
pub fn batch_tensor(images: &[Planar], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for im in images {
        if (im.width, im.height) != (first.width, first.height) {
            return Err(Error::Shape(format!(
                "image {}x{} in a {}x{} batch",
                im.width, im.height, first.width, first.height
            )));
        }
        data.extend_from_slice(&im.data);
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, first.height, first.width), device)?.to_dtype(dtype)?)
}

/// Bilinearly resamples the world-normalized `region` of `img` onto an
/// `out_w x out_h` raster. Samples falling outside the image read [`FILL`].
pub fn sample_region(img: &RgbImage, region: &BBox, out_w: usize, out_h: usize) -> Planar {
    let (iw, ih) = (img.width() as usize, img.height() as usize);
    let c = region.corners();
    let plane = out_w * out_h;
    let mut data = vec![FILL; 3 * plane];
    let raw = img.as_raw();
    let fetch = |x: isize, y: isize, ch: usize| -> f32 {
        if x < 0 || y < 0 || x >= iw as isize || y >= ih as isize {
            FILL
        } else {
            raw[(y as usize * iw + x as usize) * 3 + ch] as f32 / 255.0 - 0.5
        }
    };
    for oy in 0..out_h {
        let v = c.y1 + (oy as f64 + 0.5) / out_h as f64 * (c.y2 - c.y1);
        let py = v * ih as f64 - 0.5;
        let y0 = py.floor();
        let fy = (py - y0) as f32;
        for ox in 0..out_w {
            let u = c.x1 + (ox as f64 + 0.5) / out_w as f64 * (c.x2 - c.x1);
            let px = u * iw as f64 - 0.5;
            let x0 = px.floor();
            let fx = (px - x0) as f32;
            // Points beyond the outer pixel centers but still inside the image
            // clamp to the edge; points outside the image read the fill value.
            let inside = (0.0..1.0).contains(&u) && (0.0..1.0).contains(&v);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..3 {
                let value = if !inside {
                    FILL
                } else {
                    let clamp_x = |x: isize| x.clamp(0, iw as isize - 1);
                    let clamp_y = |y: isize| y.clamp(0, ih as isize - 1);
                    let p00 = fetch(clamp_x(x0), clamp_y(y0), ch);
                    let p10 = fetch(clamp_x(x0 + 1), clamp_y(y0), ch);
                    let p01 = fetch(clamp_x(x0), clamp_y(y0 + 1), ch);
                    let p11 = fetch(clamp_x(x0 + 1), clamp_y(y0 + 1), ch);
                    let top = p00 + (p10 - p00) * fx;
                    let bottom = p01 + (p11 - p01) * fx;
                    top + (bottom - top) * fy
                };
                data[ch * plane + oy * out_w + ox] = value;
            }
        }
    }
    Planar { width: out_w, height: out_h, data }
}

/// Photometric and resolution jitter applied to training inputs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Augment {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Lower bound of the down-then-up resize factor; 1 disables it.
    pub min_resize: f64,
}

impl Default for Augment {
    fn default() -> Self {
        Self { brightness: 0.2, contrast: 0.2, saturation: 0.2, min_resize: 0.6 }
    }
}

impl Augment {
    pub const NONE: Augment = Augment { brightness: 0.0, contrast: 0.0, saturation: 0.0, min_resize: 1.0 };

    pub fn apply(&self, img: &mut Planar, rng: &mut impl Rng) {
        fn jitter(rng: &mut impl Rng, s: f32) -> f32 {
            if s > 0.0 {
                1.0 + rng.gen_range(-s..=s)
            } else {
                1.0
            }
        }
        let b = jitter(rng, self.brightness);
        let c = jitter(rng, self.contrast);
        let s = jitter(rng, self.saturation);
        let plane = img.width * img.height;
        let mean = img.data.iter().sum::<f32>() / img.data.len().max(1) as f32;
        for i in 0..plane {
            let rgb = [img.data[i], img.data[plane + i], img.data[2 * plane + i]].map(|v| v + 0.5);
            let gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
            for (ch, v) in rgb.into_iter().enumerate() {
                let v = (gray + (v - gray) * s) * b;
                let v = (mean + 0.5) + (v - (mean + 0.5)) * c;
                img.data[ch * plane + i] = v.clamp(0.0, 1.0) - 0.5;
            }
        }
        if self.min_resize < 1.0 {
            let f = rng.gen_range(self.min_resize..=1.0);
            let (sw, sh) = (((img.width as f64) * f).round().max(1.0) as usize, ((img.height as f64) * f).round().max(1.0) as usize);
            if (sw, sh) != (img.width, img.height) {
                let small = resample(img, sw, sh);
                *img = resample(&small, img.width, img.height);
            }
        }
    }
}

/// Bilinear resize of a planar image with edge clamping.
pub fn resample(img: &Planar, out_w: usize, out_h: usize) -> Planar {
    let (iw, ih) = (img.width, img.height);
    let (in_plane, out_plane) = (iw * ih, out_w * out_h);
    let mut data = vec![0.0; 3 * out_plane];
    for oy in 0..out_h {
        let py = ((oy as f64 + 0.5) * ih as f64 / out_h as f64 - 0.5).clamp(0.0, (ih - 1) as f64);
        let y0 = py.floor() as usize;
        let y1 = (y0 + 1).min(ih - 1);
        let fy = (py - y0 as f64) as f32;
        for ox in 0..out_w {
            let px = ((ox as f64 + 0.5) * iw as f64 / out_w as f64 - 0.5).clamp(0.0, (iw - 1) as f64);
            let x0 = px.floor() as usize;
            let x1 = (x0 + 1).min(iw - 1);
            let fx = (px - x0 as f64) as f32;
            for ch in 0..3 {
                let at = |x: usize, y: usize| img.data[ch * in_plane + y * iw + x];
                let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
                let bottom = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
                data[ch * out_plane + oy * out_w + ox] = top + (bottom - top) * fy;
            }
        }
    }
    Planar { width: out_w, height: out_h, data }
}
