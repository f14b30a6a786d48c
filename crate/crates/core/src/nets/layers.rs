//! Conv trunk + linear heads with a flat parameter vector and hand-written
//! backprop.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KERNEL: usize = 4;
pub const LEAK: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    None,
    /// Per-sample, per-channel statistics followed by a learned affine.
    Instance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Input planes are `side × side`.
    pub side: usize,
    pub in_channels: usize,
    /// Output channels of each stride-2 conv stage.
    pub channels: Vec<usize>,
    /// Width of the fully connected feature layer.
    pub features: usize,
    pub norm: Norm,
    /// Dropout rate applied to the flattened conv output in train mode.
    pub dropout: f64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("net needs at least one conv stage with channels > 0".into()));
        }
        if self.in_channels == 0 || self.features == 0 {
            return Err(Error::Config("net input channels and features must be > 0".into()));
        }
        let div = 1usize << self.channels.len();
        if self.side < div || self.side % div != 0 {
            return Err(Error::Config(format!(
                "side {} not divisible by 2^{}",
                self.side,
                self.channels.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn out_side(&self) -> usize {
        self.side >> self.channels.len()
    }

    pub fn flat_len(&self) -> usize {
        let s = self.out_side();
        s * s * self.channels.last().copied().unwrap_or(0)
    }

    pub fn input_len(&self) -> usize {
        self.side * self.side * self.in_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayout {
    in_c: usize,
    out_c: usize,
    in_side: usize,
    w: usize,
    b: usize,
    affine: Option<(usize, usize)>,
}

impl ConvLayout {
    fn out_side(&self) -> usize {
        self.in_side / 2
    }
    fn k(&self) -> usize {
        self.in_c * KERNEL * KERNEL
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DenseLayout {
    inp: usize,
    out: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    convs: Vec<ConvLayout>,
    fc: DenseLayout,
    heads: Vec<DenseLayout>,
    total: usize,
}

fn layout(cfg: &NetConfig, heads: &[usize]) -> Layout {
    let mut off = 0;
    let mut take = |n: usize| {
        let o = off;
        off += n;
        o
    };
    let mut convs = Vec::new();
    let (mut c, mut s) = (cfg.in_channels, cfg.side);
    for &oc in &cfg.channels {
        let w = take(oc * c * KERNEL * KERNEL);
        let b = take(oc);
        let affine = match cfg.norm {
            Norm::None => None,
            Norm::Instance => Some((take(oc), take(oc))),
        };
        convs.push(ConvLayout {
            in_c: c,
            out_c: oc,
            in_side: s,
            w,
            b,
            affine,
        });
        c = oc;
        s /= 2;
    }
    let mut dense = |inp: usize, out: usize| DenseLayout {
        inp,
        out,
        w: take(inp * out),
        b: take(out),
    };
    let fc = dense(cfg.flat_len(), cfg.features);
    let heads = heads.iter().map(|&h| dense(cfg.features, h)).collect();
    Layout {
        convs,
        fc,
        heads,
        total: off,
    }
}

#[derive(Debug, Clone, Default)]
struct ConvCache {
    cols: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    pre_act: Vec<f64>,
}

/// Activations saved by [`Net::forward`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct NetCache {
    convs: Vec<ConvCache>,
    drop_mask: Option<Vec<f64>>,
    flat: Vec<f64>,
    fc_pre: Vec<f64>,
    features: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
}

/// A conv trunk, one fully connected feature layer and any number of
/// linear heads. All weights live in `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub config: NetConfig,
    pub heads: Vec<usize>,
    pub params: Vec<f64>,
    layout: Layout,
}

/// `c[m×n] += a[m×k] · b[k×n]`
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
fn gemm_bt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_at(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in c[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Unfolds 4×4 stride-2 pad-1 patches: rows are (channel, ky, kx), columns
/// output positions.
fn im2col(x: &[f64], c: usize, s: usize) -> Vec<f64> {
    let so = s / 2;
    let mut cols = vec![0.0; c * KERNEL * KERNEL * so * so];
    for ch in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * so * so..(row + 1) * so * so];
                for oy in 0..so {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= s as isize {
                        continue;
                    }
                    for ox in 0..so {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < s as isize {
                            dst[oy * so + ox] = x[(ch * s + iy as usize) * s + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, s: usize) -> Vec<f64> {
    let so = s / 2;
    let mut x = vec![0.0; c * s * s];
    for ch in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * so * so..(row + 1) * so * so];
                for oy in 0..so {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= s as isize {
                        continue;
                    }
                    for ox in 0..so {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < s as isize {
                            x[(ch * s + iy as usize) * s + ix as usize] += src[oy * so + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn lrelu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAK * v
    }
}

fn lrelu_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        LEAK
    }
}

impl Net {
    /// Fan-in scaled normal init for the trunk. Heads start at zero weights
    /// scaled by `head_scale` (0 gives exactly-zero heads).
    pub fn new(config: NetConfig, heads: Vec<usize>, head_scale: f64, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if heads.is_empty() || heads.contains(&0) {
            return Err(Error::Config("net needs non-empty heads".into()));
        }
        let layout = layout(&config, &heads);
        let mut params = vec![0.0; layout.total];
        let gain = (2.0 / (1.0 + LEAK * LEAK)).sqrt();
        let mut fill = |params: &mut [f64], off: usize, n: usize, fan_in: usize, scale: f64| {
            if scale == 0.0 {
                return;
            }
            let dist = Normal::new(0.0, scale / (fan_in as f64).sqrt()).expect("valid std");
            for p in &mut params[off..off + n] {
                *p = dist.sample(rng);
            }
        };
        for c in &layout.convs {
            fill(&mut params, c.w, c.out_c * c.k(), c.k(), gain);
            if let Some((g, _)) = c.affine {
                params[g..g + c.out_c].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        fill(&mut params, layout.fc.w, layout.fc.inp * layout.fc.out, layout.fc.inp, gain);
        for h in &layout.heads {
            fill(&mut params, h.w, h.inp * h.out, h.inp, head_scale);
        }
        let mut net = Net {
            config,
            heads,
            params,
            layout,
        };
        net.round_to_f32();
        Ok(net)
    }

    pub fn from_params(config: NetConfig, heads: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = layout(&config, &heads);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} weights, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Net {
            config,
            heads,
            params,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Weights are kept exactly representable in 32 bits so checkpoints
    /// round-trip losslessly.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    /// `input` is channel-major `in_channels × side × side`. Dropout is
    /// drawn from `rng` only when it is given.
    pub fn forward(&self, input: &[f32], rng: Option<&mut dyn rand::RngCore>) -> Result<NetCache> {
        let cfg = &self.config;
        if input.len() != cfg.input_len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}×{}×{} input", cfg.in_channels, cfg.side, cfg.side),
                got: format!("{} values", input.len()),
            });
        }
        let p = &self.params;
        let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        let mut cache = NetCache::default();
        for c in &self.layout.convs {
            let so = c.out_side();
            let np = so * so;
            let cols = im2col(&x, c.in_c, c.in_side);
            let mut z = vec![0.0; c.out_c * np];
            for (o, row) in z.chunks_exact_mut(np).enumerate() {
                row.fill(p[c.b + o]);
            }
            gemm(c.out_c, c.k(), np, &p[c.w..c.w + c.out_c * c.k()], &cols, &mut z);
            let mut cc = ConvCache {
                cols,
                ..Default::default()
            };
            let pre = if let Some((g, b)) = c.affine {
                let mut xhat = vec![0.0; z.len()];
                let mut pre = vec![0.0; z.len()];
                for o in 0..c.out_c {
                    let row = &z[o * np..(o + 1) * np];
                    let mean = row.iter().sum::<f64>() / np as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / np as f64;
                    let inv = 1.0 / (var + NORM_EPS).sqrt();
                    cc.inv_std.push(inv);
                    for i in 0..np {
                        let xh = (row[i] - mean) * inv;
                        xhat[o * np + i] = xh;
                        pre[o * np + i] = p[g + o] * xh + p[b + o];
                    }
                }
                cc.xhat = xhat;
                pre
            } else {
                z
            };
            x = pre.iter().map(|&v| lrelu(v)).collect();
            cc.pre_act = pre;
            cache.convs.push(cc);
        }
        if let (Some(rng), true) = (rng, cfg.dropout > 0.0) {
            let keep = 1.0 - cfg.dropout;
            let mask: Vec<f64> = (0..x.len())
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            cache.drop_mask = Some(mask);
        }
        let fc = &self.layout.fc;
        let mut fc_pre = p[fc.b..fc.b + fc.out].to_vec();
        gemm(fc.out, fc.inp, 1, &p[fc.w..fc.w + fc.out * fc.inp], &x, &mut fc_pre);
        let features: Vec<f64> = fc_pre.iter().map(|&v| lrelu(v)).collect();
        for h in &self.layout.heads {
            let mut out = p[h.b..h.b + h.out].to_vec();
            gemm(h.out, h.inp, 1, &p[h.w..h.w + h.out * h.inp], &features, &mut out);
            cache.outputs.push(out);
        }
        cache.flat = x;
        cache.fc_pre = fc_pre;
        cache.features = features;
        Ok(cache)
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂output` for the heads
    /// that received a gradient.
    pub fn backward(&self, cache: &NetCache, head_grads: &[Option<&[f64]>], grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.layout.total || head_grads.len() != self.layout.heads.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} weights and {} heads", self.layout.total, self.layout.heads.len()),
                got: format!("{} and {}", grad.len(), head_grads.len()),
            });
        }
        let p = &self.params;
        let mut d_feat = vec![0.0; self.config.features];
        let mut any = false;
        for (h, g) in self.layout.heads.iter().zip(head_grads) {
            let Some(g) = g else { continue };
            if g.len() != h.out {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} head outputs", h.out),
                    got: g.len().to_string(),
                });
            }
            any = true;
            gemm(h.out, 1, h.inp, g, &cache.features, &mut grad[h.w..h.w + h.out * h.inp]);
            grad[h.b..h.b + h.out].iter_mut().zip(*g).for_each(|(a, b)| *a += b);
            gemm_at(h.out, h.inp, 1, &p[h.w..h.w + h.out * h.inp], g, &mut d_feat);
        }
        if !any {
            return Ok(());
        }
        let fc = &self.layout.fc;
        let d_pre: Vec<f64> = d_feat
            .iter()
            .zip(&cache.fc_pre)
            .map(|(d, z)| d * lrelu_grad(*z))
            .collect();
        gemm(fc.out, 1, fc.inp, &d_pre, &cache.flat, &mut grad[fc.w..fc.w + fc.out * fc.inp]);
        grad[fc.b..fc.b + fc.out].iter_mut().zip(&d_pre).for_each(|(a, b)| *a += b);
        let mut dx = vec![0.0; fc.inp];
        gemm_at(fc.out, fc.inp, 1, &p[fc.w..fc.w + fc.out * fc.inp], &d_pre, &mut dx);
        if let Some(mask) = &cache.drop_mask {
            dx.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        for (i, c) in self.layout.convs.iter().enumerate().rev() {
            let cc = &cache.convs[i];
            let np = c.out_side() * c.out_side();
            let mut dz: Vec<f64> = dx
                .iter()
                .zip(&cc.pre_act)
                .map(|(d, z)| d * lrelu_grad(*z))
                .collect();
            if let Some((g, b)) = c.affine {
                for o in 0..c.out_c {
                    let dy = &mut dz[o * np..(o + 1) * np];
                    let xh = &cc.xhat[o * np..(o + 1) * np];
                    let dg: f64 = dy.iter().zip(xh).map(|(a, b)| a * b).sum();
                    let db: f64 = dy.iter().sum();
                    grad[g + o] += dg;
                    grad[b + o] += db;
                    let gamma = p[g + o];
                    let m1 = gamma * db / np as f64;
                    let m2 = gamma * dg / np as f64;
                    for j in 0..np {
                        dy[j] = cc.inv_std[o] * (gamma * dy[j] - m1 - xh[j] * m2);
                    }
                }
            }
            for o in 0..c.out_c {
                grad[c.b + o] += dz[o * np..(o + 1) * np].iter().sum::<f64>();
            }
            gemm_bt(c.out_c, np, c.k(), &dz, &cc.cols, &mut grad[c.w..c.w + c.out_c * c.k()]);
            if i > 0 {
                let mut dcols = vec![0.0; c.k() * np];
                gemm_at(c.out_c, c.k(), np, &p[c.w..c.w + c.out_c * c.k()], &dz, &mut dcols);
                dx = col2im(&dcols, c.in_c, c.in_side);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as an independent reference.
    fn conv_reference(x: &[f64], c: usize, s: usize, w: &[f64], oc: usize) -> Vec<f64> {
        let so = s / 2;
        let mut out = vec![0.0; oc * so * so];
        for o in 0..oc {
            for oy in 0..so {
                for ox in 0..so {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for ky in 0..4 {
                            for kx in 0..4 {
                                let iy = 2 * oy as i64 + ky as i64 - 1;
                                let ix = 2 * ox as i64 + kx as i64 - 1;
                                if iy < 0 || ix < 0 || iy >= s as i64 || ix >= s as i64 {
                                    continue;
                                }
                                acc += w[((o * c + ch) * 4 + ky) * 4 + kx] * x[(ch * s + iy as usize) * s + ix as usize];
                            }
                        }
                    }
                    out[(o * so + oy) * so + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, s, oc) = (3, 8, 5);
        let x: Vec<f64> = (0..c * s * s).map(|_| rng.random::<f64>() - 0.5).collect();
        let w: Vec<f64> = (0..oc * c * 16).map(|_| rng.random::<f64>() - 0.5).collect();
        let cols = im2col(&x, c, s);
        let mut z = vec![0.0; oc * 16];
        gemm(oc, c * 16, 16, &w, &cols, &mut z);
        let r = conv_reference(&x, c, s, &w, oc);
        for (a, b) in z.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, s) = (2, 8);
        let x: Vec<f64> = (0..c * s * s).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..c * 16 * 16).map(|_| rng.random()).collect();
        let lhs: f64 = im2col(&x, c, s).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, c, s)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_shapes() {
        let cfg = NetConfig {
            side: 12,
            in_channels: 2,
            channels: vec![4, 4, 4],
            features: 8,
            norm: Norm::None,
            dropout: 0.0,
        };
        assert!(cfg.validate().is_err());
        let cfg = NetConfig { side: 8, ..cfg };
        let net = Net::new(cfg, vec![2], 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(net.forward(&[0.0; 10], None).is_err());
    }

    #[test]
    fn zero_head_scale_gives_zero_outputs() {
        let cfg = NetConfig {
            side: 8,
            in_channels: 2,
            channels: vec![4, 4],
            features: 8,
            norm: Norm::Instance,
            dropout: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Net::new(cfg, vec![3], 0.0, &mut rng).unwrap();
        let x: Vec<f32> = (0..128).map(|_| rng.random()).collect();
        let c = net.forward(&x, Some(&mut rng)).unwrap();
        assert_eq!(c.outputs[0], vec![0.0; 3]);
    }
}
