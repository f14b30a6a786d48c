use serde::{Deserialize, Serialize};

use super::ModuleKind;
use crate::error::{Error, Result};

const RANGE_TOL: f64 = 1e-9;
const ROW_SUM_TOL: f64 = 1e-6;

/// Parameters of one module: physical values and, when they came from the
/// policy, the squashed raw values that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    kind: ModuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw: Option<Vec<f64>>,
    physical: Vec<f64>,
}

impl ParamVector {
    /// Validates physical values against the kind's published ranges.
    pub fn from_physical(kind: ModuleKind, physical: Vec<f64>) -> Result<Self> {
        let pv = ParamVector {
            kind,
            raw: None,
            physical,
        };
        pv.validate()?;
        Ok(pv)
    }

    /// Parameters that leave the image unchanged.
    pub fn identity(kind: ModuleKind) -> Self {
        let physical = match kind {
            ModuleKind::Exposure => vec![0.0],
            ModuleKind::WhiteBalance => vec![1.0; 3],
            ModuleKind::Ccm => vec![1., 0., 0., 0., 1., 0., 0., 0., 1.],
            ModuleKind::Gamma => vec![1.0],
            ModuleKind::Denoise => vec![0.0],
            ModuleKind::SharpenBlur => vec![1.0],
            ModuleKind::ToneMapping => vec![1.0; 8],
            ModuleKind::Contrast => vec![0.0],
            ModuleKind::Saturation => vec![0.0],
            ModuleKind::Desaturation => vec![0.0],
        };
        ParamVector {
            kind,
            raw: None,
            physical,
        }
    }

    pub fn kind(&self) -> ModuleKind {
        self.kind
    }

    pub fn physical(&self) -> &[f64] {
        &self.physical
    }

    pub fn raw(&self) -> Option<&[f64]> {
        self.raw.as_deref()
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        if self.physical.len() != kind.param_count() {
            return Err(Error::ParamCount {
                kind,
                expected: kind.param_count(),
                got: self.physical.len(),
            });
        }
        match kind.param_range() {
            Some((min, max)) => {
                for (index, &value) in self.physical.iter().enumerate() {
                    if !(value >= min - RANGE_TOL && value <= max + RANGE_TOL) {
                        return Err(Error::ParamRange {
                            kind,
                            index,
                            value,
                            min,
                            max,
                        });
                    }
                }
            }
            None => {
                if let Some((index, &value)) =
                    self.physical.iter().enumerate().find(|(_, v)| !v.is_finite())
                {
                    return Err(Error::ParamRange {
                        kind,
                        index,
                        value,
                        min: f64::NEG_INFINITY,
                        max: f64::INFINITY,
                    });
                }
                for row in 0..3 {
                    let sum: f64 = self.physical[row * 3..row * 3 + 3].iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(Error::CcmRowSum { row, sum });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Maps squashed network outputs in (-1, 1) to physical parameters.
///
/// Raw zero is the identity for exposure, white balance, CCM, gamma,
/// sharpen/blur, tone mapping and contrast.
pub fn map_raw_params(kind: ModuleKind, raw: &[f64]) -> Result<ParamVector> {
    if raw.len() != kind.param_count() {
        return Err(Error::ParamCount {
            kind,
            expected: kind.param_count(),
            got: raw.len(),
        });
    }
    if let Some(&value) = raw.iter().find(|z| !(z.abs() < 1.0)) {
        return Err(Error::UnsquashedParameter { kind, value });
    }
    let physical: Vec<f64> = match kind {
        ModuleKind::Exposure => vec![3.5 * raw[0]],
        ModuleKind::WhiteBalance => raw.iter().map(|z| (z / 2.0).exp()).collect(),
        ModuleKind::Ccm => {
            let mut m = vec![0.0; 9];
            for i in 0..3 {
                let row = &raw[i * 3..i * 3 + 3];
                let mean = row.iter().sum::<f64>() / 3.0;
                for j in 0..3 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    m[i * 3 + j] = delta + (row[j] - mean) * 0.5;
                }
            }
            m
        }
        ModuleKind::Gamma => vec![3f64.powf(raw[0])],
        ModuleKind::SharpenBlur => vec![raw[0] + 1.0],
        ModuleKind::ToneMapping => raw.iter().map(|z| 2f64.powf(*z)).collect(),
        ModuleKind::Contrast => vec![raw[0]],
        ModuleKind::Denoise | ModuleKind::Saturation | ModuleKind::Desaturation => {
            vec![(raw[0] + 1.0) / 2.0]
        }
    };
    let pv = ParamVector {
        kind,
        raw: Some(raw.to_vec()),
        physical,
    };
    pv.validate()?;
    Ok(pv)
}

/// Chains a gradient w.r.t. physical parameters back to the raw values.
pub fn raw_params_vjp(kind: ModuleKind, raw: &[f64], grad_physical: &[f64]) -> Vec<f64> {
    debug_assert_eq!(raw.len(), kind.param_count());
    debug_assert_eq!(grad_physical.len(), kind.param_count());
    let ln2 = std::f64::consts::LN_2;
    match kind {
        ModuleKind::Exposure => vec![3.5 * grad_physical[0]],
        ModuleKind::WhiteBalance => raw
            .iter()
            .zip(grad_physical)
            .map(|(z, g)| g * 0.5 * (z / 2.0).exp())
            .collect(),
        ModuleKind::Ccm => {
            let mut out = vec![0.0; 9];
            for i in 0..3 {
                let row = &grad_physical[i * 3..i * 3 + 3];
                let mean = row.iter().sum::<f64>() / 3.0;
                for k in 0..3 {
                    out[i * 3 + k] = 0.5 * (row[k] - mean);
                }
            }
            out
        }
        ModuleKind::Gamma => vec![grad_physical[0] * 3f64.ln() * 3f64.powf(raw[0])],
        ModuleKind::SharpenBlur | ModuleKind::Contrast => vec![grad_physical[0]],
        ModuleKind::ToneMapping => raw
            .iter()
            .zip(grad_physical)
            .map(|(z, g)| g * ln2 * 2f64.powf(*z))
            .collect(),
        ModuleKind::Denoise | ModuleKind::Saturation | ModuleKind::Desaturation => {
            vec![grad_physical[0] * 0.5]
        }
    }
}
