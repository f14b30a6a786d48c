//! Central finite-difference checks of the analytic VJPs.
//!
//! Each check draws random interior points: parameters away from their
//! range ends and images whose samples sit away from every kink of the
//! module (clamp edges, tone-curve breakpoints, HSV max/min switches). At
//! such points the forward map is smooth within one step, so the central
//! difference is a valid oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::isp::{forward_preclamp, forward_unchecked, map_raw_params, vjp_f64, ModuleKind, ParamVector};
use crate::score::{proxy_eval, ProxyTargets};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub points: usize,
    pub step: f64,
    pub tolerance: f64,
    pub height: usize,
    pub width: usize,
    /// Image samples probed per point.
    pub image_probes: usize,
    pub seed: u64,
    /// Test hook: scales every analytic gradient by `1 + corrupt`.
    pub corrupt: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            points: 20,
            step: 1e-3,
            tolerance: 1e-3,
            height: 8,
            width: 8,
            image_probes: 24,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Module name, or "proxy".
    pub target: String,
    pub points: usize,
    /// Worst relative error per parameter (empty for the proxy).
    pub param_errors: Vec<f64>,
    pub image_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.param_errors.iter().copied().fold(self.image_error, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

const OUT_MARGIN: f64 = 0.02;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn interior_params(kind: ModuleKind, rng: &mut ChaCha8Rng) -> ParamVector {
    match kind {
        ModuleKind::Ccm => {
            let raw: Vec<f64> = (0..9).map(|_| rng.random_range(-0.9..0.9)).collect();
            map_raw_params(kind, &raw).expect("raw inside (-1, 1)")
        }
        ModuleKind::Denoise => {
            ParamVector::from_physical(kind, vec![rng.random_range(0.05..0.95)]).expect("in range")
        }
        _ => {
            let (lo, hi) = kind.param_range().expect("scalar ranges");
            let pad = 0.05 * (hi - lo);
            let p = (0..kind.param_count())
                .map(|_| rng.random_range(lo + pad..hi - pad))
                .collect();
            ParamVector::from_physical(kind, p).expect("in range")
        }
    }
}

fn lum(px: &[f64]) -> f64 {
    0.27 * px[0] + 0.67 * px[1] + 0.06 * px[2]
}

/// Kind-specific distance-to-kink test for a single input pixel.
fn pixel_is_smooth(kind: ModuleKind, px: &[f64]) -> bool {
    match kind {
        ModuleKind::Gamma => px.iter().all(|&v| v > 0.05),
        ModuleKind::ToneMapping => px.iter().all(|&v| {
            let s = 8.0 * v;
            (s - s.round()).abs() > 0.04 && v > 0.01 && v < 0.99
        }),
        ModuleKind::Contrast => lum(px) > 0.02,
        ModuleKind::Saturation => {
            let mut s = [px[0], px[1], px[2]];
            s.sort_by(f64::total_cmp);
            s[1] - s[0] > 0.02 && s[2] - s[1] > 0.02 && (s[2] - 0.5).abs() > 0.02 && lum(px) > 0.02
        }
        _ => true,
    }
}

fn interior_image(kind: ModuleKind, params: &ParamVector, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = params.physical();
    let in_margin = |v: &f64| (OUT_MARGIN..=1.0 - OUT_MARGIN).contains(v);
    match kind {
        ModuleKind::Denoise | ModuleKind::SharpenBlur => {
            let (lo, hi) = if kind == ModuleKind::Denoise { (0.1, 0.9) } else { (0.35, 0.65) };
            loop {
                let x: Vec<f64> = (0..h * w * 3).map(|_| rng.random_range(lo..hi)).collect();
                if forward_preclamp(kind, p, &x, h, w).iter().all(in_margin) {
                    return x;
                }
            }
        }
        _ => {
            let mut x = Vec::with_capacity(h * w * 3);
            for _ in 0..h * w {
                loop {
                    let px = [rng.random(), rng.random(), rng.random()];
                    if pixel_is_smooth(kind, &px) && forward_preclamp(kind, p, &px, 1, 1).iter().all(in_margin) {
                        x.extend_from_slice(&px);
                        break;
                    }
                }
            }
            x
        }
    }
}

fn probe_indices(len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    rand::seq::index::sample(rng, len, count).into_vec()
}

fn target_seed(seed: u64, target: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(target as u64 + 1)
}

/// Checks `grad_params` and `grad_image` of one module kind.
pub fn check_module(kind: ModuleKind, cfg: &GradCheckConfig) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(target_seed(cfg.seed, kind.index()));
    let (h, w) = (cfg.height, cfg.width);
    let scale = 1.0 + cfg.corrupt.unwrap_or(0.0);
    let mut param_errors = vec![0.0f64; kind.param_count()];
    let mut image_error = 0.0f64;

    for _ in 0..cfg.points {
        let params = interior_params(kind, &mut rng);
        let x = interior_image(kind, &params, h, w, &mut rng);
        let u: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (gp, gx) = vjp_f64(&params, &x, h, w, &u).expect("valid inputs");
        let loss = |p: &[f64], x: &[f64]| dot(&u, &forward_unchecked(kind, p, x, h, w));

        let p0 = params.physical().to_vec();
        for (j, err) in param_errors.iter_mut().enumerate() {
            let (mut pp, mut pm) = (p0.clone(), p0.clone());
            pp[j] += cfg.step;
            pm[j] -= cfg.step;
            let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * cfg.step);
            *err = err.max(relative_error(scale * gp[j], fd));
        }
        for i in probe_indices(x.len(), cfg.image_probes, &mut rng) {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += cfg.step;
            xm[i] -= cfg.step;
            let fd = (loss(&p0, &xp) - loss(&p0, &xm)) / (2.0 * cfg.step);
            image_error = image_error.max(relative_error(scale * gx[i], fd));
        }
    }
    GradCheckReport {
        target: kind.name().to_owned(),
        points: cfg.points,
        param_errors,
        image_error,
        tolerance: cfg.tolerance,
    }
}

/// Checks the proxy score gradient on random images.
pub fn check_proxy(targets: &ProxyTargets, cfg: &GradCheckConfig) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(target_seed(cfg.seed, usize::MAX - 1));
    let (h, w) = (cfg.height, cfg.width);
    let scale = 1.0 + cfg.corrupt.unwrap_or(0.0);
    let value = |x: &[f64]| proxy_eval(x, h, w, targets).0.total();
    let mut image_error = 0.0f64;
    for _ in 0..cfg.points {
        let x: Vec<f64> = (0..h * w * 3).map(|_| rng.random()).collect();
        let (_, grad) = proxy_eval(&x, h, w, targets);
        for i in probe_indices(x.len(), cfg.image_probes, &mut rng) {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += cfg.step;
            xm[i] -= cfg.step;
            let fd = (value(&xp) - value(&xm)) / (2.0 * cfg.step);
            image_error = image_error.max(relative_error(scale * grad[i], fd));
        }
    }
    GradCheckReport {
        target: "proxy".to_owned(),
        points: cfg.points,
        param_errors: Vec::new(),
        image_error,
        tolerance: cfg.tolerance,
    }
}

/// All ten modules followed by the proxy scorer.
pub fn check_all(targets: &ProxyTargets, cfg: &GradCheckConfig) -> Vec<GradCheckReport> {
    let mut reports: Vec<GradCheckReport> = ModuleKind::ALL.iter().map(|&k| check_module(k, cfg)).collect();
    reports.push(check_proxy(targets, cfg));
    reports
}
