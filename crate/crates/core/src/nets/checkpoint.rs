//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "AISP1"
//! u32 pool bitmask (bit i = ModuleKind::ALL[i])
//! u32 side, u32 features, u32 norm (0 none, 1 instance), f64 dropout,
//! f64 param_head_scale, u32 stage count, u32 channels per stage
//! then for the module, parameter and value nets in that order:
//!   u32 input channels, u32 head count, u32 width per head,
//!   u64 weight count, f32 weights
//! ```
//!
//! The loader rejects trailing or missing bytes.

use std::path::Path;

use super::{Agent, ArchConfig, Net, Norm, PolicyNet, ValueNet};
use crate::error::{Error, Result};
use crate::env::{POLICY_PLANES, VALUE_PLANES};
use crate::isp::{ModuleKind, NUM_KINDS};

pub const MAGIC: &[u8; 5] = b"AISP1";

pub fn encode(agent: &Agent) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    let mask: u32 = agent.pool.iter().map(|k| 1u32 << k.index()).sum();
    out.extend_from_slice(&mask.to_le_bytes());
    let a = &agent.arch;
    u32le(&mut out, a.side);
    u32le(&mut out, a.features);
    u32le(&mut out, matches!(a.norm, Norm::Instance) as usize);
    out.extend_from_slice(&a.dropout.to_le_bytes());
    out.extend_from_slice(&a.param_head_scale.to_le_bytes());
    u32le(&mut out, a.channels.len());
    for &c in &a.channels {
        u32le(&mut out, c);
    }
    for net in [&agent.policy.module_net, &agent.policy.param_net, &agent.value.net] {
        u32le(&mut out, net.config.in_channels);
        u32le(&mut out, net.heads.len());
        for &h in &net.heads {
            u32le(&mut out, h);
        }
        out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
        for p in &net.params {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Agent> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mask = r.u32()?;
    let pool: Vec<ModuleKind> = ModuleKind::ALL
        .into_iter()
        .filter(|k| mask & (1 << k.index()) != 0)
        .collect();
    if pool.is_empty() || mask >> ModuleKind::ALL.len() != 0 {
        return Err(Error::Checkpoint(format!("invalid pool mask {mask:#x}")));
    }
    let side = r.u32()?;
    let features = r.u32()?;
    let norm = match r.u32()? {
        0 => Norm::None,
        1 => Norm::Instance,
        n => return Err(Error::Checkpoint(format!("unknown norm code {n}"))),
    };
    let dropout = r.f64()?;
    let param_head_scale = r.f64()?;
    let stages = r.u32()?;
    if stages == 0 || stages > 16 {
        return Err(Error::Checkpoint(format!("implausible stage count {stages}")));
    }
    let channels = (0..stages).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let arch = ArchConfig {
        side,
        channels,
        features,
        norm,
        dropout,
        param_head_scale,
    };
    let param_heads: Vec<usize> = ModuleKind::ALL.iter().map(|k| k.param_count()).collect();
    let expected = [
        (POLICY_PLANES, vec![NUM_KINDS]),
        (POLICY_PLANES, param_heads),
        (VALUE_PLANES, vec![1]),
    ];
    let mut nets = Vec::new();
    for (i, drop) in [dropout, dropout, 0.0].into_iter().enumerate() {
        let in_c = r.u32()?;
        let nh = r.u32()?;
        if nh == 0 || nh > 64 {
            return Err(Error::Checkpoint(format!("net {i}: implausible head count {nh}")));
        }
        let heads = (0..nh).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = r.u64()?;
        if n.checked_mul(4).is_none_or(|b| b > buf.len()) {
            return Err(Error::Checkpoint(format!("net {i}: weight count {n} exceeds file size")));
        }
        let params = (0..n).map(|_| r.f32().map(|v| v as f64)).collect::<Result<Vec<_>>>()?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint(format!("net {i}: non-finite weight")));
        }
        if (in_c, &heads) != (expected[i].0, &expected[i].1) {
            return Err(Error::Checkpoint(format!("net {i}: unexpected input or head layout")));
        }
        nets.push(Net::from_params(arch.net_config(in_c, drop), heads, params)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let value = nets.pop().expect("three nets");
    let param_net = nets.pop().expect("three nets");
    let module_net = nets.pop().expect("three nets");
    Ok(Agent {
        arch,
        pool,
        policy: PolicyNet { module_net, param_net },
        value: ValueNet { net: value },
    })
}

pub fn save(agent: &Agent, path: &Path) -> Result<()> {
    std::fs::write(path, encode(agent)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Agent> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
