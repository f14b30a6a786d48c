//! Policy and value networks with hand-written backprop, Adam and
//! checkpoints.
//!
//! The module-selection net and the shared parameter-prediction net each
//! have their own trunk; the value net has a third. All three share one
//! [`ArchConfig`].

pub mod checkpoint;
pub mod layers;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{Planes, POLICY_PLANES, VALUE_PLANES};
use crate::error::{Error, Result};
use crate::isp::{ModuleKind, NUM_KINDS};
pub use layers::{Net, NetCache, NetConfig, Norm};

/// Raw parameters are `SQUASH · tanh(u)`, strictly inside (−1, 1).
pub const SQUASH: f64 = 1.0 - 1e-5;
pub const BASE_LR: f64 = 3e-5;
pub const CLIP_NORM: f64 = 5.0;
pub const VALUE_LOSS_COEF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub side: usize,
    pub channels: Vec<usize>,
    pub features: usize,
    pub norm: Norm,
    /// Dropout rate of the policy trunks; the value net never drops.
    pub dropout: f64,
    /// Init scale of the parameter heads (0 starts every raw value at 0).
    pub param_head_scale: f64,
}

impl Default for ArchConfig {
    /// 64×64 input, four conv stages 32/64/128/256, 128 features.
    fn default() -> Self {
        ArchConfig {
            side: 64,
            channels: vec![32, 64, 128, 256],
            features: 128,
            norm: Norm::None,
            dropout: 0.5,
            param_head_scale: 0.1,
        }
    }
}

impl ArchConfig {
    /// A narrow 16×16 variant used for desk-scale training runs.
    pub fn small() -> Self {
        ArchConfig {
            side: 16,
            channels: vec![8, 16, 16, 32],
            features: 64,
            norm: Norm::None,
            dropout: 0.1,
            param_head_scale: 0.1,
        }
    }

    pub fn net_config(&self, in_channels: usize, dropout: f64) -> NetConfig {
        NetConfig {
            side: self.side,
            in_channels,
            channels: self.channels.clone(),
            features: self.features,
            norm: self.norm,
            dropout,
        }
    }
}

pub fn lr_at(base: f64, iter: usize, total: usize) -> f64 {
    base * 0.1f64.powf(3.0 * iter as f64 / total.max(1) as f64)
}

/// Linear decay from 1 at the first iteration to 0 at the last.
pub fn entropy_coeff(iter: usize, total: usize) -> f64 {
    (1.0 - iter as f64 / total.max(1) as f64).clamp(0.0, 1.0)
}

pub fn pool_mask(pool: &[ModuleKind]) -> [bool; NUM_KINDS] {
    let mut m = [false; NUM_KINDS];
    for k in pool {
        m[k.index()] = true;
    }
    m
}

/// Softmax over the masked entries; masked-out entries get probability 0.
pub fn softmax_masked(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, m)| if *m { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// One probability per kind in [`ModuleKind::ALL`] order; zero outside
    /// the pool.
    pub module_dist: Vec<f64>,
    pub raw_params: Vec<Vec<f64>>,
}

impl PolicyOutput {
    pub fn argmax(&self) -> ModuleKind {
        let mut best = 0;
        for (i, p) in self.module_dist.iter().enumerate() {
            if *p > self.module_dist[best] {
                best = i;
            }
        }
        ModuleKind::from_index(best).expect("index in range")
    }

    /// Inverse-CDF draw from the module distribution.
    pub fn sample(&self, rng: &mut impl Rng) -> ModuleKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, p) in self.module_dist.iter().enumerate() {
            if *p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return ModuleKind::from_index(i).expect("index in range");
                }
            }
        }
        ModuleKind::from_index(last).expect("index in range")
    }
}

/// A policy forward pass with everything backprop needs.
#[derive(Debug, Clone)]
pub struct PolicyPass {
    pub output: PolicyOutput,
    module_cache: NetCache,
    param_cache: NetCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub module_net: Net,
    pub param_net: Net,
}

impl PolicyNet {
    pub fn new(arch: &ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        let cfg = arch.net_config(POLICY_PLANES, arch.dropout);
        let module_net = Net::new(cfg.clone(), vec![NUM_KINDS], 0.0, rng)?;
        let heads = ModuleKind::ALL.iter().map(|k| k.param_count()).collect();
        let param_net = Net::new(cfg, heads, arch.param_head_scale, rng)?;
        Ok(PolicyNet { module_net, param_net })
    }

    /// Dropout is active only when `rng` is given (train mode).
    pub fn forward(&self, planes: &Planes, mask: &[bool; NUM_KINDS], rng: Option<&mut dyn RngCore>) -> Result<PolicyPass> {
        if !mask.iter().any(|m| *m) {
            return Err(Error::Config("empty module pool".into()));
        }
        let x = &planes.data;
        let (module_cache, param_cache) = match rng {
            Some(r) => (self.module_net.forward(x, Some(&mut *r))?, self.param_net.forward(x, Some(r))?),
            None => (self.module_net.forward(x, None)?, self.param_net.forward(x, None)?),
        };
        let module_dist = softmax_masked(&module_cache.outputs[0], mask);
        let raw_params = param_cache
            .outputs
            .iter()
            .map(|u| u.iter().map(|v| SQUASH * v.tanh()).collect())
            .collect();
        Ok(PolicyPass {
            output: PolicyOutput { module_dist, raw_params },
            module_cache,
            param_cache,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub net: Net,
}

impl ValueNet {
    pub fn new(arch: &ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        let net = Net::new(arch.net_config(VALUE_PLANES, 0.0), vec![1], 1.0, rng)?;
        Ok(ValueNet { net })
    }

    pub fn forward(&self, planes: &Planes) -> Result<(f64, NetCache)> {
        let cache = self.net.forward(&planes.data, None)?;
        Ok((cache.outputs[0][0], cache))
    }

    /// Gradient of `VALUE_LOSS_COEF · (target − V)²`, scaled by `weight`.
    pub fn backprop(&self, cache: &NetCache, target: f64, weight: f64, grad: &mut [f64]) -> Result<()> {
        let v = cache.outputs[0][0];
        let g = [weight * VALUE_LOSS_COEF * 2.0 * (v - target)];
        self.net.backward(cache, &[Some(&g)], grad)
    }
}

/// One step's contribution to the policy gradient.
#[derive(Debug, Clone, Copy)]
pub struct PolicyStepInput<'a> {
    pub pass: &'a PolicyPass,
    pub action: ModuleKind,
    pub advantage: f64,
    /// `∂D(s_{t+1})/∂raw` for the selected module.
    pub raw_grad: &'a [f64],
    /// λ_e of the entropy term inside this step's reward.
    pub entropy_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub module: Vec<f64>,
    pub params: Vec<f64>,
}

impl PolicyGrads {
    pub fn zeros(policy: &PolicyNet) -> Self {
        PolicyGrads {
            module: vec![0.0; policy.module_net.param_count()],
            params: vec![0.0; policy.param_net.param_count()],
        }
    }
}

/// Accumulates `Σ_t −A_t ∇log π(a_t|s_t) + param_coef · Σ_t ∇D(s_{t+1})`,
/// each scaled by `weight`. Only the selected module's parameter head
/// receives a gradient.
///
/// The reward's entropy term depends on the module head directly, so its
/// exact derivative `λ_e ∇Σ p ln p` is added as well.
pub fn backprop_policy(
    policy: &PolicyNet,
    steps: &[PolicyStepInput],
    param_coef: f64,
    weight: f64,
    grads: &mut PolicyGrads,
) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::IncompleteTrajectory("no steps".into()));
    }
    for s in steps {
        let k = s.action;
        if !s.advantage.is_finite() {
            return Err(Error::IncompleteTrajectory("non-finite advantage".into()));
        }
        if s.raw_grad.len() != k.param_count() {
            return Err(Error::IncompleteTrajectory(format!(
                "{k} task gradient has {} entries, expected {}",
                s.raw_grad.len(),
                k.param_count()
            )));
        }
        let dist = &s.pass.output.module_dist;
        if dist[k.index()] <= 0.0 {
            return Err(Error::IncompleteTrajectory(format!("{k} is outside the pool")));
        }
        // d(−A log p_a)/d logit_j = −A (1[j=a] − p_j), zero for masked logits.
        // d(Σ p ln p)/d logit_j = p_j (ln p_j − Σ p ln p).
        let neg_h: f64 = dist.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum();
        let d_logits: Vec<f64> = dist
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let onehot = if j == k.index() { 1.0 } else { 0.0 };
                if *p > 0.0 {
                    weight * (-s.advantage * (onehot - p) + s.entropy_weight * p * (p.ln() - neg_h))
                } else {
                    0.0
                }
            })
            .collect();
        policy
            .module_net
            .backward(&s.pass.module_cache, &[Some(&d_logits)], &mut grads.module)?;

        let u = &s.pass.param_cache.outputs[k.index()];
        let d_u: Vec<f64> = u
            .iter()
            .zip(s.raw_grad)
            .map(|(u, g)| {
                let t = u.tanh();
                weight * param_coef * g * SQUASH * (1.0 - t * t)
            })
            .collect();
        let mut heads: Vec<Option<&[f64]>> = vec![None; NUM_KINDS];
        heads[k.index()] = Some(&d_u);
        policy.param_net.backward(&s.pass.param_cache, &heads, &mut grads.params)?;
    }
    Ok(())
}

/// Rescales `grad` to at most `max_norm` and returns the norm before.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Refuses the whole step if any gradient is non-finite. Updated
    /// weights are rounded to f32 precision.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} weights", self.m.len()),
                got: format!("{} params, {} grads", params.len(), grads.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient("optimizer step".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            if g == 0.0 && self.m[i] == 0.0 {
                continue;
            }
            let update = lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps);
            params[i] = (params[i] - update) as f32 as f64;
        }
        Ok(())
    }
}

/// Everything a trained searcher needs at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub arch: ArchConfig,
    pub pool: Vec<ModuleKind>,
    pub policy: PolicyNet,
    pub value: ValueNet,
}

impl Agent {
    pub fn new(arch: ArchConfig, pool: Vec<ModuleKind>, rng: &mut impl Rng) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Config("empty module pool".into()));
        }
        let mut pool = pool;
        pool.sort();
        pool.dedup();
        let policy = PolicyNet::new(&arch, rng)?;
        let value = ValueNet::new(&arch, rng)?;
        Ok(Agent {
            arch,
            pool,
            policy,
            value,
        })
    }

    pub fn mask(&self) -> [bool; NUM_KINDS] {
        pool_mask(&self.pool)
    }
}
