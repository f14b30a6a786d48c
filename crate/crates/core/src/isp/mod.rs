//! The ten differentiable RGB-domain ISP modules.
//!
//! Every module is a map `(params, image) -> image` followed by a clamp to
//! [0, 1]. Forward and vector-Jacobian products are computed on `f64`
//! buffers; the [`Image`] entry points round the result back to `f32`.

mod params;
mod pointwise;
mod spatial;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GradImage, Image};

pub use params::{map_raw_params, raw_params_vjp, ParamVector};
pub use spatial::{BLUR_KERNEL, NLM_H_MAX, NLM_H_MIN, NLM_PATCH_RADIUS, NLM_SEARCH_RADIUS};

/// Number of module kinds.
pub const NUM_KINDS: usize = 10;

/// Guard used by gamma, contrast and saturation at zero.
pub const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Exposure,
    WhiteBalance,
    Ccm,
    Gamma,
    Denoise,
    SharpenBlur,
    ToneMapping,
    Contrast,
    Saturation,
    Desaturation,
}

impl ModuleKind {
    /// All kinds in their fixed canonical order.
    pub const ALL: [ModuleKind; NUM_KINDS] = [
        ModuleKind::Exposure,
        ModuleKind::WhiteBalance,
        ModuleKind::Ccm,
        ModuleKind::Gamma,
        ModuleKind::Denoise,
        ModuleKind::SharpenBlur,
        ModuleKind::ToneMapping,
        ModuleKind::Contrast,
        ModuleKind::Saturation,
        ModuleKind::Desaturation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ModuleKind> {
        ModuleKind::ALL.get(i).copied()
    }

    pub fn param_count(self) -> usize {
        match self {
            ModuleKind::WhiteBalance => 3,
            ModuleKind::Ccm => 9,
            ModuleKind::ToneMapping => 8,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Exposure => "exposure",
            ModuleKind::WhiteBalance => "white_balance",
            ModuleKind::Ccm => "ccm",
            ModuleKind::Gamma => "gamma",
            ModuleKind::Denoise => "denoise",
            ModuleKind::SharpenBlur => "sharpen_blur",
            ModuleKind::ToneMapping => "tone_mapping",
            ModuleKind::Contrast => "contrast",
            ModuleKind::Saturation => "saturation",
            ModuleKind::Desaturation => "desaturation",
        }
    }

    /// Short alias accepted on the command line.
    pub fn short(self) -> &'static str {
        match self {
            ModuleKind::Exposure => "E",
            ModuleKind::WhiteBalance => "WB",
            ModuleKind::Ccm => "CCM",
            ModuleKind::Gamma => "G",
            ModuleKind::Denoise => "DN",
            ModuleKind::SharpenBlur => "SB",
            ModuleKind::ToneMapping => "TM",
            ModuleKind::Contrast => "C",
            ModuleKind::Saturation => "S",
            ModuleKind::Desaturation => "DS",
        }
    }

    /// Closed physical range of each scalar parameter. `None` for CCM,
    /// which is constrained only through its row sums.
    pub fn param_range(self) -> Option<(f64, f64)> {
        Some(match self {
            ModuleKind::Exposure => (-3.5, 3.5),
            ModuleKind::WhiteBalance => ((-0.5f64).exp(), 0.5f64.exp()),
            ModuleKind::Ccm => return None,
            ModuleKind::Gamma => (1.0 / 3.0, 3.0),
            ModuleKind::Denoise => (0.0, 1.0),
            ModuleKind::SharpenBlur => (0.0, 2.0),
            ModuleKind::ToneMapping => (0.5, 2.0),
            ModuleKind::Contrast => (-1.0, 1.0),
            ModuleKind::Saturation => (0.0, 1.0),
            ModuleKind::Desaturation => (0.0, 1.0),
        })
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        ModuleKind::ALL
            .into_iter()
            .find(|k| k.name() == t || k.short().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Config(format!("unknown module kind {t:?}")))
    }
}

/// Gradients of a scalar loss through one module.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleVjp {
    /// With respect to the physical parameters.
    pub grad_params: Vec<f64>,
    pub grad_image: GradImage,
}

/// Unclamped forward map on a 64-bit buffer.
fn forward_raw(kind: ModuleKind, p: &[f64], x: &[f64], h: usize, w: usize) -> Vec<f64> {
    match kind {
        ModuleKind::Exposure => pointwise::exposure(p[0], x),
        ModuleKind::WhiteBalance => pointwise::white_balance(p, x),
        ModuleKind::Ccm => pointwise::ccm(p, x),
        ModuleKind::Gamma => pointwise::gamma(p[0], x),
        ModuleKind::Denoise => spatial::denoise(p[0], x, h, w),
        ModuleKind::SharpenBlur => spatial::sharpen_blur(p[0], x, h, w),
        ModuleKind::ToneMapping => pointwise::tone_mapping(p, x),
        ModuleKind::Contrast => pointwise::contrast(p[0], x),
        ModuleKind::Saturation => pointwise::saturation(p[0], x),
        ModuleKind::Desaturation => pointwise::desaturation(p[0], x),
    }
}

fn check_buffer(x: &[f64], h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || x.len() != h * w * 3 {
        return Err(Error::ShapeMismatch {
            expected: format!("{h}x{w}x3"),
            got: format!("{} samples", x.len()),
        });
    }
    Ok(())
}

/// Clamped forward map on a 64-bit buffer.
pub fn forward_f64(params: &ParamVector, x: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    params.validate()?;
    check_buffer(x, h, w)?;
    Ok(forward_unchecked(params.kind(), params.physical(), x, h, w))
}

/// Clamped forward map without parameter validation.
///
/// Finite-difference probes use this to step a single CCM entry, which
/// temporarily breaks the row-sum constraint.
pub fn forward_unchecked(kind: ModuleKind, physical: &[f64], x: &[f64], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(physical.len(), kind.param_count(), "parameter count");
    assert_eq!(x.len(), h * w * 3, "buffer shape");
    let mut y = forward_raw(kind, physical, x, h, w);
    for v in &mut y {
        *v = v.clamp(0.0, 1.0);
    }
    y
}

/// Unclamped forward map without validation; used to test interior points.
pub fn forward_preclamp(kind: ModuleKind, physical: &[f64], x: &[f64], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(physical.len(), kind.param_count(), "parameter count");
    assert_eq!(x.len(), h * w * 3, "buffer shape");
    forward_raw(kind, physical, x, h, w)
}

/// Vector-Jacobian product of the clamped forward map on a 64-bit buffer.
/// Returns (grad w.r.t. physical params, grad w.r.t. input).
pub fn vjp_f64(
    params: &ParamVector,
    x: &[f64],
    h: usize,
    w: usize,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    check_buffer(x, h, w)?;
    if upstream.len() != x.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} upstream samples", x.len()),
            got: format!("{}", upstream.len()),
        });
    }
    let y = forward_raw(params.kind(), params.physical(), x, h, w);
    // Clamp subgradient: zero where the clamp was active.
    let g: Vec<f64> = upstream
        .iter()
        .zip(&y)
        .map(|(&g, &v)| if (0.0..=1.0).contains(&v) { g } else { 0.0 })
        .collect();
    let p = params.physical();
    Ok(match params.kind() {
        ModuleKind::Exposure => pointwise::exposure_vjp(p[0], x, &g),
        ModuleKind::WhiteBalance => pointwise::white_balance_vjp(p, x, &g),
        ModuleKind::Ccm => pointwise::ccm_vjp(p, x, &g),
        ModuleKind::Gamma => pointwise::gamma_vjp(p[0], x, &g),
        ModuleKind::Denoise => spatial::denoise_vjp(p[0], x, h, w, &g),
        ModuleKind::SharpenBlur => spatial::sharpen_blur_vjp(p[0], x, h, w, &g),
        ModuleKind::ToneMapping => pointwise::tone_mapping_vjp(p, x, &g),
        ModuleKind::Contrast => pointwise::contrast_vjp(p[0], x, &g),
        ModuleKind::Saturation => pointwise::saturation_vjp(p[0], x, &g),
        ModuleKind::Desaturation => pointwise::desaturation_vjp(p[0], x, &g),
    })
}

/// Applies one module to an image.
pub fn apply(params: &ParamVector, img: &Image) -> Result<Image> {
    let y = forward_f64(params, &img.to_f64(), img.height(), img.width())?;
    Image::from_f64(img.height(), img.width(), &y)
}

/// Jacobian-transpose products of one module w.r.t. its physical
/// parameters and its input image.
pub fn module_vjp(params: &ParamVector, img: &Image, upstream: &GradImage) -> Result<ModuleVjp> {
    if !upstream.matches(img) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", img.height(), img.width()),
            got: format!("{}x{}", upstream.height, upstream.width),
        });
    }
    let (gp, gx) = vjp_f64(params, &img.to_f64(), img.height(), img.width(), &upstream.data)?;
    Ok(ModuleVjp {
        grad_params: gp,
        grad_image: GradImage::from_vec(img.height(), img.width(), gx)?,
    })
}

fn apply_kind(kind: ModuleKind, physical: Vec<f64>, img: &Image) -> Result<Image> {
    apply(&ParamVector::from_physical(kind, physical)?, img)
}

pub fn apply_exposure(img: &Image, p: f64) -> Result<Image> {
    apply_kind(ModuleKind::Exposure, vec![p], img)
}

pub fn apply_white_balance(img: &Image, gains: [f64; 3]) -> Result<Image> {
    apply_kind(ModuleKind::WhiteBalance, gains.to_vec(), img)
}

pub fn apply_ccm(img: &Image, matrix: [[f64; 3]; 3]) -> Result<Image> {
    apply_kind(ModuleKind::Ccm, matrix.concat(), img)
}

pub fn apply_gamma(img: &Image, p: f64) -> Result<Image> {
    apply_kind(ModuleKind::Gamma, vec![p], img)
}

pub fn apply_denoise(img: &Image, strength: f64) -> Result<Image> {
    apply_kind(ModuleKind::Denoise, vec![strength], img)
}

pub fn apply_sharpen_blur(img: &Image, p: f64) -> Result<Image> {
    apply_kind(ModuleKind::SharpenBlur, vec![p], img)
}

pub fn apply_tone_mapping(img: &Image, slopes: [f64; 8]) -> Result<Image> {
    apply_kind(ModuleKind::ToneMapping, slopes.to_vec(), img)
}

pub fn apply_contrast(img: &Image, p: f64) -> Result<Image> {
    apply_kind(ModuleKind::Contrast, vec![p], img)
}

pub fn apply_saturation(img: &Image, p: f64) -> Result<Image> {
    apply_kind(ModuleKind::Saturation, vec![p], img)
}

pub fn apply_desaturation(img: &Image, p: f64) -> Result<Image> {
    apply_kind(ModuleKind::Desaturation, vec![p], img)
}
