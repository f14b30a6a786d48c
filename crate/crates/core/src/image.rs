//! Linear-RGB rasters and per-image statistics.
//!
//! Samples are stored as `f32` in row-major, channel-interleaved order
//! (R, G, B). All reductions accumulate in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Luminance weights for R, G and B. They sum to exactly one.
pub const LUMA: [f64; 3] = [0.27, 0.67, 0.06];

/// H×W×3 linear-RGB image with nominal range [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} samples for {width}x{height}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    /// Constant image with every sample equal to `value`.
    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        Image {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    /// Builds an image from a per-pixel closure returning (R, G, B).
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    /// Converts a 64-bit buffer, rounding each sample to `f32`.
    pub fn from_f64(height: usize, width: usize, data: &[f64]) -> Result<Self> {
        Image::new(height, width, data.iter().map(|&v| v as f32).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-channel means (R, G, B).
    pub fn channel_means(&self) -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c] as f64;
            }
        }
        let n = self.pixel_count() as f64;
        acc.map(|v| v / n)
    }

    pub fn mean_luminance(&self) -> f64 {
        let n = self.pixel_count() as f64;
        self.data
            .chunks_exact(3)
            .map(|px| pixel_luminance(px[0] as f64, px[1] as f64, px[2] as f64))
            .sum::<f64>()
            / n
    }
}

/// Gradient with the shape of an [`Image`], kept in 64-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct GradImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GradImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        GradImage {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn zeros_like(img: &Image) -> Self {
        GradImage::zeros(img.height(), img.width())
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{}", height * width * 3),
                got: format!("{}", data.len()),
            });
        }
        Ok(GradImage {
            height,
            width,
            data,
        })
    }

    pub fn matches(&self, img: &Image) -> bool {
        self.height == img.height() && self.width == img.width()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn pixel_luminance(r: f64, g: f64, b: f64) -> f64 {
    LUMA[0] * r + LUMA[1] * g + LUMA[2] * b
}

/// Luminance plane (H×W) of an image.
pub fn luminance(img: &Image) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|px| pixel_luminance(px[0] as f64, px[1] as f64, px[2] as f64))
        .collect()
}

/// 4-neighbour Laplacian with replicated border.
pub fn laplacian(plane: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(height - 1);
        for x in 0..width {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(width - 1);
            let c = plane[y * width + x];
            out[y * width + x] = plane[up * width + x]
                + plane[down * width + x]
                + plane[y * width + left]
                + plane[y * width + right]
                - 4.0 * c;
        }
    }
    out
}

/// Transpose of [`laplacian`]: scatters `grad` back onto the source plane.
pub fn laplacian_transpose(grad: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    for y in 0..height {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(height - 1);
        for x in 0..width {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(width - 1);
            let g = grad[y * width + x];
            out[up * width + x] += g;
            out[down * width + x] += g;
            out[y * width + left] += g;
            out[y * width + right] += g;
            out[y * width + x] -= 4.0 * g;
        }
    }
    out
}

/// HSV saturation of one pixel; zero for black.
#[inline]
pub fn pixel_saturation(r: f64, g: f64, b: f64) -> f64 {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub mean_luminance: f64,
    /// Population standard deviation of luminance.
    pub contrast: f64,
    pub mean_saturation: f64,
    /// Mean squared Laplacian of luminance.
    pub edge_energy: f64,
}

pub fn compute_stats(img: &Image) -> ImageStats {
    let lum = luminance(img);
    let n = lum.len() as f64;
    let mean = lum.iter().sum::<f64>() / n;
    let var = lum.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    let sat = img
        .data()
        .chunks_exact(3)
        .map(|px| pixel_saturation(px[0] as f64, px[1] as f64, px[2] as f64))
        .sum::<f64>()
        / n;
    let lap = laplacian(&lum, img.height(), img.width());
    let edge = lap.iter().map(|v| v * v).sum::<f64>() / n;
    ImageStats {
        mean_luminance: mean,
        contrast: var.max(0.0).sqrt(),
        mean_saturation: sat,
        edge_energy: edge,
    }
}

/// Pads the shorter axis by edge replication so the result is square.
/// The original content is centred.
pub fn letterbox(img: &Image) -> Image {
    let side = img.height().max(img.width());
    if img.height() == img.width() {
        return img.clone();
    }
    let top = (side - img.height()) / 2;
    let left = (side - img.width()) / 2;
    Image::from_fn(side, side, |y, x| {
        let sy = y.saturating_sub(top).min(img.height() - 1);
        let sx = x.saturating_sub(left).min(img.width() - 1);
        img.pixel(sy, sx)
    })
}

/// 1-D overlap weights of area resampling `src` cells onto `dst` cells.
/// Each entry is (first source index, weights); weights sum to one.
fn area_weights(src: usize, dst: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let w: Vec<f64> = (first..last)
                .map(|i| {
                    let a = lo.max(i as f64);
                    let b = hi.min((i + 1) as f64);
                    (b - a).max(0.0) / scale
                })
                .collect();
            (first, w)
        })
        .collect()
}

/// Area-average resampling to an arbitrary smaller or equal size.
pub fn area_resample(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidImage("target size must be positive".into()));
    }
    if out_h > img.height() {
        return Err(Error::UpsampleUnsupported {
            requested: out_h,
            available: img.height(),
        });
    }
    if out_w > img.width() {
        return Err(Error::UpsampleUnsupported {
            requested: out_w,
            available: img.width(),
        });
    }
    let wy = area_weights(img.height(), out_h);
    let wx = area_weights(img.width(), out_w);
    let src = img.data();
    let w = img.width();

    // Horizontal pass into an out_w-wide intermediate, then vertical.
    let mut tmp = vec![0.0f64; img.height() * out_w * 3];
    for y in 0..img.height() {
        for (ox, (first, weights)) in wx.iter().enumerate() {
            let mut acc = [0.0f64; 3];
            for (k, &wt) in weights.iter().enumerate() {
                let i = (y * w + first + k) * 3;
                for c in 0..3 {
                    acc[c] += wt * src[i + c] as f64;
                }
            }
            tmp[(y * out_w + ox) * 3..(y * out_w + ox) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0f32; out_h * out_w * 3];
    for (oy, (first, weights)) in wy.iter().enumerate() {
        for ox in 0..out_w {
            let mut acc = [0.0f64; 3];
            for (k, &wt) in weights.iter().enumerate() {
                let i = ((first + k) * out_w + ox) * 3;
                for c in 0..3 {
                    acc[c] += wt * tmp[i + c];
                }
            }
            for c in 0..3 {
                out[(oy * out_w + ox) * 3 + c] = acc[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    Image::new(out_h, out_w, out)
}

/// Letterboxes to square and area-resamples to `side`×`side`.
pub fn downsample(img: &Image, side: usize) -> Result<Image> {
    if side < 8 {
        return Err(Error::InvalidImage(format!(
            "downsample side must be at least 8, got {side}"
        )));
    }
    let square = letterbox(img);
    if side > square.height() {
        return Err(Error::UpsampleUnsupported {
            requested: side,
            available: square.height(),
        });
    }
    area_resample(&square, side, side)
}
