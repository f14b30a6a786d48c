//! Neighbourhood modules: soft non-local means and sharpen/blur.

/// Blur kernel weights (row-major 3×3), normalised by 13.
pub const BLUR_KERNEL: [f64; 9] = [1.0, 1.0, 1.0, 1.0, 5.0, 1.0, 1.0, 1.0, 1.0];
const BLUR_NORM: f64 = 13.0;

pub const NLM_PATCH_RADIUS: usize = 1;
pub const NLM_SEARCH_RADIUS: usize = 3;
pub const NLM_H_MIN: f64 = 0.02;
pub const NLM_H_MAX: f64 = 0.25;

#[inline]
fn clamp_idx(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

fn blur(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for y in 0..h {
        for xx in 0..w {
            let mut acc = [0.0; 3];
            for ky in 0..3 {
                let sy = clamp_idx(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let sx = clamp_idx(xx as isize + kx as isize - 1, w);
                    let k = BLUR_KERNEL[ky * 3 + kx];
                    let i = (sy * w + sx) * 3;
                    for c in 0..3 {
                        acc[c] += k * x[i + c];
                    }
                }
            }
            let o = (y * w + xx) * 3;
            for c in 0..3 {
                out[o + c] = acc[c] / BLUR_NORM;
            }
        }
    }
    out
}

fn blur_transpose(g: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for y in 0..h {
        for xx in 0..w {
            let o = (y * w + xx) * 3;
            for ky in 0..3 {
                let sy = clamp_idx(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let sx = clamp_idx(xx as isize + kx as isize - 1, w);
                    let k = BLUR_KERNEL[ky * 3 + kx] / BLUR_NORM;
                    let i = (sy * w + sx) * 3;
                    for c in 0..3 {
                        out[i + c] += k * g[o + c];
                    }
                }
            }
        }
    }
    out
}

/// `p * I + (1 - p) * (I * K)`.
pub fn sharpen_blur(p: f64, x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let b = blur(x, h, w);
    x.iter().zip(&b).map(|(v, b)| p * v + (1.0 - p) * b).collect()
}

pub fn sharpen_blur_vjp(p: f64, x: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let b = blur(x, h, w);
    let gp = g.iter().zip(x.iter().zip(&b)).map(|(g, (v, b))| g * (v - b)).sum();
    let bt = blur_transpose(g, h, w);
    let gx = g.iter().zip(&bt).map(|(g, bt)| p * g + (1.0 - p) * bt).collect();
    (vec![gp], gx)
}

/// Geometry shared by the NLM forward and backward passes.
struct Nlm<'a> {
    x: &'a [f64],
    h: usize,
    w: usize,
    inv_two_h2: f64,
}

impl Nlm<'_> {
    const PATCH_LEN: f64 = ((2 * NLM_PATCH_RADIUS + 1) * (2 * NLM_PATCH_RADIUS + 1) * 3) as f64;

    fn offsets() -> impl Iterator<Item = (isize, isize)> {
        let r = NLM_PATCH_RADIUS as isize;
        (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (dy, dx)))
    }

    #[inline]
    fn at(&self, y: isize, x: isize) -> usize {
        (clamp_idx(y, self.h) * self.w + clamp_idx(x, self.w)) * 3
    }

    /// Mean squared patch difference between centres p and q.
    fn distance(&self, p: (usize, usize), q: (usize, usize)) -> f64 {
        let mut acc = 0.0;
        for (dy, dx) in Self::offsets() {
            let a = self.at(p.0 as isize + dy, p.1 as isize + dx);
            let b = self.at(q.0 as isize + dy, q.1 as isize + dx);
            for c in 0..3 {
                let d = self.x[a + c] - self.x[b + c];
                acc += d * d;
            }
        }
        acc / Self::PATCH_LEN
    }

    fn window(&self, y: usize, x: usize) -> impl Iterator<Item = (usize, usize)> {
        let r = NLM_SEARCH_RADIUS;
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(self.h - 1));
        let (x0, x1) = (x.saturating_sub(r), (x + r).min(self.w - 1));
        (y0..=y1).flat_map(move |qy| (x0..=x1).map(move |qx| (qy, qx)))
    }

    /// Weighted mean over the search window and the weight total.
    fn mean(&self, y: usize, x: usize) -> ([f64; 3], f64) {
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for q in self.window(y, x) {
            let wgt = (-self.distance((y, x), q) * self.inv_two_h2).exp();
            let i = (q.0 * self.w + q.1) * 3;
            for c in 0..3 {
                acc[c] += wgt * self.x[i + c];
            }
            total += wgt;
        }
        (acc.map(|v| v / total), total)
    }
}

fn nlm_bandwidth(strength: f64) -> f64 {
    NLM_H_MIN + strength * (NLM_H_MAX - NLM_H_MIN)
}

/// Residual blend `(1 - s) * I + s * NLM_h(s)(I)`; strength 0 is the identity.
pub fn denoise(strength: f64, x: &[f64], h: usize, w: usize) -> Vec<f64> {
    if strength == 0.0 {
        return x.to_vec();
    }
    let bw = nlm_bandwidth(strength);
    let nlm = Nlm {
        x,
        h,
        w,
        inv_two_h2: 1.0 / (2.0 * bw * bw),
    };
    let mut out = vec![0.0; x.len()];
    for y in 0..h {
        for xx in 0..w {
            let (mean, _) = nlm.mean(y, xx);
            let o = (y * w + xx) * 3;
            for c in 0..3 {
                out[o + c] = (1.0 - strength) * x[o + c] + strength * mean[c];
            }
        }
    }
    out
}

pub fn denoise_vjp(strength: f64, x: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let bw = nlm_bandwidth(strength);
    let inv_two_h2 = 1.0 / (2.0 * bw * bw);
    let nlm = Nlm { x, h, w, inv_two_h2 };
    let dh_ds = NLM_H_MAX - NLM_H_MIN;
    let mut gx: Vec<f64> = g.iter().map(|g| (1.0 - strength) * g).collect();
    let mut gs = 0.0;
    let mut d_bw = 0.0;
    for y in 0..h {
        for xx in 0..w {
            let o = (y * w + xx) * 3;
            let (mean, total) = nlm.mean(y, xx);
            for c in 0..3 {
                gs += g[o + c] * (mean[c] - x[o + c]);
            }
            let g_mean = [strength * g[o], strength * g[o + 1], strength * g[o + 2]];
            if g_mean == [0.0; 3] {
                continue;
            }
            for q in nlm.window(y, xx) {
                let d2 = nlm.distance((y, xx), q);
                let wgt = (-d2 * inv_two_h2).exp();
                let qi = (q.0 * w + q.1) * 3;
                let mut g_w = 0.0;
                for c in 0..3 {
                    gx[qi + c] += g_mean[c] * wgt / total;
                    g_w += g_mean[c] * (x[qi + c] - mean[c]) / total;
                }
                // d w / d h = w * d2 / h^3
                d_bw += g_w * wgt * d2 / (bw * bw * bw);
                let g_d2 = -g_w * wgt * inv_two_h2;
                if g_d2 == 0.0 {
                    continue;
                }
                let scale = 2.0 * g_d2 / Nlm::PATCH_LEN;
                for (dy, dx) in Nlm::offsets() {
                    let a = nlm.at(y as isize + dy, xx as isize + dx);
                    let b = nlm.at(q.0 as isize + dy, q.1 as isize + dx);
                    for c in 0..3 {
                        let diff = x[a + c] - x[b + c];
                        gx[a + c] += scale * diff;
                        gx[b + c] -= scale * diff;
                    }
                }
            }
        }
    }
    gs += d_bw * dh_ds;
    (vec![gs], gx)
}
