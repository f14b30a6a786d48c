//! Per-pixel modules. Inputs are interleaved RGB `f64` buffers; outputs are
//! unclamped. VJP functions receive the upstream gradient already masked by
//! the clamp and return (grad params, grad input).

use std::f64::consts::{LN_2, PI};

use super::EPS;
use crate::image::LUMA;

const TONE_SEGMENTS: usize = 8;

#[inline]
fn lum(px: &[f64]) -> f64 {
    LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]
}

pub fn exposure(p: f64, x: &[f64]) -> Vec<f64> {
    let k = 2f64.powf(p);
    x.iter().map(|v| v * k).collect()
}

pub fn exposure_vjp(p: f64, x: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = 2f64.powf(p);
    let gp = x.iter().zip(g).map(|(v, g)| g * v * k).sum::<f64>() * LN_2;
    (vec![gp], g.iter().map(|g| g * k).collect())
}

pub fn white_balance(gains: &[f64], x: &[f64]) -> Vec<f64> {
    x.chunks_exact(3)
        .flat_map(|px| [px[0] * gains[0], px[1] * gains[1], px[2] * gains[2]])
        .collect()
}

pub fn white_balance_vjp(gains: &[f64], x: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gp = vec![0.0; 3];
    let mut gx = vec![0.0; x.len()];
    for ((px, gpx), out) in x.chunks_exact(3).zip(g.chunks_exact(3)).zip(gx.chunks_exact_mut(3)) {
        for c in 0..3 {
            gp[c] += gpx[c] * px[c];
            out[c] = gpx[c] * gains[c];
        }
    }
    (gp, gx)
}

/// `m` is row-major 3×3; output channel i = row i · (R, G, B).
pub fn ccm(m: &[f64], x: &[f64]) -> Vec<f64> {
    x.chunks_exact(3)
        .flat_map(|px| {
            let row = |i: usize| m[i * 3] * px[0] + m[i * 3 + 1] * px[1] + m[i * 3 + 2] * px[2];
            [row(0), row(1), row(2)]
        })
        .collect()
}

pub fn ccm_vjp(m: &[f64], x: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gp = vec![0.0; 9];
    let mut gx = vec![0.0; x.len()];
    for ((px, gpx), out) in x.chunks_exact(3).zip(g.chunks_exact(3)).zip(gx.chunks_exact_mut(3)) {
        for i in 0..3 {
            for j in 0..3 {
                gp[i * 3 + j] += gpx[i] * px[j];
                out[j] += m[i * 3 + j] * gpx[i];
            }
        }
    }
    (gp, gx)
}

pub fn gamma(p: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(EPS).powf(p)).collect()
}

pub fn gamma_vjp(p: f64, x: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gp = 0.0;
    let gx = x
        .iter()
        .zip(g)
        .map(|(&v, &g)| {
            let b = v.max(EPS);
            gp += g * b.powf(p) * b.ln();
            if v > EPS {
                g * p * v.powf(p - 1.0)
            } else {
                0.0
            }
        })
        .collect();
    (vec![gp], gx)
}

/// Piecewise-linear curve through (k/L, P_k/P_L) with slopes `p`.
pub fn tone_mapping(p: &[f64], x: &[f64]) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    x.iter()
        .map(|&v| {
            let v = v.clamp(0.0, 1.0);
            let acc: f64 = (0..TONE_SEGMENTS)
                .map(|i| (TONE_SEGMENTS as f64 * v - i as f64).clamp(0.0, 1.0) * p[i])
                .sum();
            acc / total
        })
        .collect()
}

pub fn tone_mapping_vjp(p: &[f64], x: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = TONE_SEGMENTS as f64;
    let total: f64 = p.iter().sum();
    let mut gp = vec![0.0; TONE_SEGMENTS];
    let gx = x
        .iter()
        .zip(g)
        .map(|(&raw, &g)| {
            let v = raw.clamp(0.0, 1.0);
            let clips: Vec<f64> = (0..TONE_SEGMENTS)
                .map(|i| (l * v - i as f64).clamp(0.0, 1.0))
                .collect();
            let y: f64 = clips.iter().zip(p).map(|(c, p)| c * p).sum::<f64>() / total;
            for i in 0..TONE_SEGMENTS {
                gp[i] += g * (clips[i] - y) / total;
            }
            if !(0.0..=1.0).contains(&raw) {
                return 0.0;
            }
            let seg = ((l * v).floor() as usize).min(TONE_SEGMENTS - 1);
            g * l * p[seg] / total
        })
        .collect();
    (gp, gx)
}

/// Enhanced luminance ratio `0.5(1 - cos(pi*l)) / max(l, eps)` and its
/// derivative in `l`.
#[inline]
fn contrast_ratio(l: f64) -> (f64, f64) {
    let e = 0.5 * (1.0 - (PI * l).cos());
    let de = 0.5 * PI * (PI * l).sin();
    if l > EPS {
        (e / l, de / l - e / (l * l))
    } else {
        (e / EPS, de / EPS)
    }
}

pub fn contrast(p: f64, x: &[f64]) -> Vec<f64> {
    x.chunks_exact(3)
        .flat_map(|px| {
            let (ratio, _) = contrast_ratio(lum(px));
            let f = (1.0 - p) + p * ratio;
            [px[0] * f, px[1] * f, px[2] * f]
        })
        .collect()
}

pub fn contrast_vjp(p: f64, x: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gp = 0.0;
    let mut gx = vec![0.0; x.len()];
    for ((px, gpx), out) in x.chunks_exact(3).zip(g.chunks_exact(3)).zip(gx.chunks_exact_mut(3)) {
        let (ratio, dratio) = contrast_ratio(lum(px));
        let gdotx: f64 = (0..3).map(|c| gpx[c] * px[c]).sum();
        gp += gdotx * (ratio - 1.0);
        let through_lum = p * gdotx * dratio;
        for c in 0..3 {
            out[c] = gpx[c] * ((1.0 - p) + p * ratio) + through_lum * LUMA[c];
        }
    }
    (vec![gp], gx)
}

/// Saturation target `I'`: RGB→HSV, boost S, HSV→RGB with hue and value
/// unchanged. Returns `I'` and its Jacobian `J[c][k] = dI'_c / dx_k`.
///
/// Achromatic pixels take hue 0. Ties for the maximum go to the earliest
/// channel (R first).
pub(crate) fn saturation_target(px: &[f64]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut imax = 0;
    let mut imin = 0;
    for c in 1..3 {
        if px[c] > px[imax] {
            imax = c;
        }
        if px[c] < px[imin] {
            imin = c;
        }
    }
    let v = px[imax];
    let m = px[imin];
    let q = 0.5 - (0.5 - v).abs();
    let dq = if v < 0.5 { 1.0 } else { -1.0 };
    let mut jac = [[0.0; 3]; 3];

    if v - m <= 0.0 {
        // Hue 0: (V, V(1-S'), V(1-S')) with S = 0.
        let s2 = 0.8 * q;
        let out = [v, v * (1.0 - s2), v * (1.0 - s2)];
        let d_rest = (1.0 - s2) - v * 0.8 * dq;
        jac[0][imax] = 1.0;
        jac[1][imax] = d_rest;
        jac[2][imax] = d_rest;
        return (out, jac);
    }

    let d = v - m;
    let s = d / v;
    let ds_dv = m / (v * v);
    let ds_dm = -1.0 / v;
    let s2 = s + (1.0 - s) * 0.8 * q;
    let ds2_ds = 1.0 - 0.8 * q;
    let ds2_dv = ds2_ds * ds_dv + (1.0 - s) * 0.8 * dq;
    let ds2_dm = ds2_ds * ds_dm;
    // I'_c = V - A (V - x_c), A = S' V / D.
    let a = s2 * v / d;
    let da_dv = (ds2_dv * v + s2) / d - s2 * v / (d * d);
    let da_dm = ds2_dm * v / d + s2 * v / (d * d);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let gap = v - px[c];
        out[c] = v - a * gap;
        jac[c][imax] += 1.0 - da_dv * gap - a;
        jac[c][imin] += -da_dm * gap;
        jac[c][c] += a;
    }
    (out, jac)
}

pub fn saturation(p: f64, x: &[f64]) -> Vec<f64> {
    x.chunks_exact(3)
        .flat_map(|px| {
            let (target, _) = saturation_target(px);
            let l = lum(px).max(EPS);
            let mut out = [0.0; 3];
            for c in 0..3 {
                let e = 0.5 * (1.0 - (PI * target[c]).cos());
                out[c] = (1.0 - p) * px[c] + p * px[c] * e / l;
            }
            out
        })
        .collect()
}

pub fn saturation_vjp(p: f64, x: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gp = 0.0;
    let mut gx = vec![0.0; x.len()];
    for ((px, gpx), out) in x.chunks_exact(3).zip(g.chunks_exact(3)).zip(gx.chunks_exact_mut(3)) {
        let (target, jac) = saturation_target(px);
        let raw_l = lum(px);
        let l = raw_l.max(EPS);
        let mut dl = 0.0;
        for c in 0..3 {
            let e = 0.5 * (1.0 - (PI * target[c]).cos());
            let de = 0.5 * PI * (PI * target[c]).sin();
            gp += gpx[c] * (px[c] * e / l - px[c]);
            out[c] += gpx[c] * ((1.0 - p) + p * e / l);
            let d_target = gpx[c] * p * px[c] * de / l;
            for k in 0..3 {
                out[k] += d_target * jac[c][k];
            }
            dl -= gpx[c] * p * px[c] * e / (l * l);
        }
        if raw_l > EPS {
            for k in 0..3 {
                out[k] += dl * LUMA[k];
            }
        }
    }
    (vec![gp], gx)
}

pub fn desaturation(p: f64, x: &[f64]) -> Vec<f64> {
    x.chunks_exact(3)
        .flat_map(|px| {
            let l = lum(px);
            [
                (1.0 - p) * px[0] + p * l,
                (1.0 - p) * px[1] + p * l,
                (1.0 - p) * px[2] + p * l,
            ]
        })
        .collect()
}

pub fn desaturation_vjp(p: f64, x: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gp = 0.0;
    let mut gx = vec![0.0; x.len()];
    for ((px, gpx), out) in x.chunks_exact(3).zip(g.chunks_exact(3)).zip(gx.chunks_exact_mut(3)) {
        let l = lum(px);
        let gsum: f64 = gpx.iter().sum();
        for c in 0..3 {
            gp += gpx[c] * (l - px[c]);
            out[c] = (1.0 - p) * gpx[c] + p * LUMA[c] * gsum;
        }
    }
    (vec![gp], gx)
}
