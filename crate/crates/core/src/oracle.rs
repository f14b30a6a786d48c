//! Exhaustive search over short module sequences and parameter grids.
//!
//! Deliberately naive: every sequence, every grid point, no pruning. It is
//! the ground truth the learned policy is compared against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::isp::{apply, ModuleKind, ParamVector};
use crate::pipeline::Pipeline;
use crate::score::Scorer;

pub const MAX_POOL: usize = 4;
pub const MAX_ORACLE_STAGES: usize = 3;
/// Upper bound on leaf evaluations for a single image.
pub const MAX_EVALUATIONS: u64 = 2_000_000;
/// Off-diagonal CCM perturbation magnitudes.
pub const CCM_STEPS: [f64; 3] = [0.1, 0.2, 0.3];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub pool: Vec<ModuleKind>,
    pub max_stages: usize,
    /// Points per scalar parameter.
    pub grid: usize,
    pub allow_reuse: bool,
}

impl SearchSpace {
    pub fn new(pool: Vec<ModuleKind>, max_stages: usize, grid: usize) -> Self {
        SearchSpace {
            pool,
            max_stages,
            grid,
            allow_reuse: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.pool.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.pool.len() {
            return Err(Error::Config("search pool contains duplicates".into()));
        }
        if self.grid < 2 {
            return Err(Error::Config(format!("grid must be >= 2, got {}", self.grid)));
        }
        if self.pool.len() > MAX_POOL || self.max_stages > MAX_ORACLE_STAGES {
            return Err(Error::SearchSpaceTooLarge(format!(
                "pool of {} with {} stages (limits {MAX_POOL} and {MAX_ORACLE_STAGES}); about {} evaluations",
                self.pool.len(),
                self.max_stages,
                self.evaluation_count()
            )));
        }
        let n = self.evaluation_count();
        if n > MAX_EVALUATIONS {
            return Err(Error::SearchSpaceTooLarge(format!(
                "{n} evaluations exceed the limit of {MAX_EVALUATIONS}"
            )));
        }
        Ok(())
    }

    /// Pipelines scored by an exhaustive search (all sequences × grids).
    pub fn evaluation_count(&self) -> u64 {
        sequences_unchecked(self)
            .iter()
            .map(|seq| {
                seq.iter()
                    .map(|k| grid_size(*k, self.grid))
                    .fold(1u64, |a, b| a.saturating_mul(b))
            })
            .fold(0u64, |a, b| a.saturating_add(b))
    }
}

fn sequences_unchecked(space: &SearchSpace) -> Vec<Vec<ModuleKind>> {
    let mut pool = space.pool.clone();
    pool.sort();
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<Vec<ModuleKind>> = vec![Vec::new()];
    for _ in 0..space.max_stages {
        let mut next = Vec::new();
        for seq in &frontier {
            for &k in &pool {
                if space.allow_reuse || !seq.contains(&k) {
                    let mut s = seq.clone();
                    s.push(k);
                    next.push(s);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// All sequences of length 0..=max_stages, shorter first, then in
/// lexicographic kind order.
pub fn enumerate_sequences(space: &SearchSpace) -> Result<Vec<Vec<ModuleKind>>> {
    space.validate()?;
    Ok(sequences_unchecked(space))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn grid_size(kind: ModuleKind, grid: usize) -> u64 {
    let g = grid as u64;
    match kind {
        ModuleKind::Ccm => 1 + 6 * 2 * CCM_STEPS.len() as u64,
        ModuleKind::WhiteBalance => g * g * g,
        ModuleKind::ToneMapping => g * g,
        _ => g,
    }
}

/// Candidate parameter vectors of one kind.
///
/// Scalars use `grid` evenly spaced points over the range; white balance
/// takes the per-channel product. Tone mapping uses one slope for the
/// lower four segments and one for the upper four (a grid²); CCM is the
/// identity plus every single off-diagonal perturbation, compensated on
/// the diagonal.
pub fn param_grid(kind: ModuleKind, grid: usize) -> Vec<ParamVector> {
    let mk = |p: Vec<f64>| ParamVector::from_physical(kind, p).expect("grid points are in range");
    match kind {
        ModuleKind::Ccm => {
            let mut out = vec![ParamVector::identity(kind)];
            for i in 0..3 {
                for j in 0..3 {
                    if i == j {
                        continue;
                    }
                    for &m in &CCM_STEPS {
                        for d in [-m, m] {
                            let mut p = ParamVector::identity(kind).physical().to_vec();
                            p[i * 3 + j] += d;
                            p[i * 3 + i] -= d;
                            out.push(mk(p));
                        }
                    }
                }
            }
            out
        }
        ModuleKind::WhiteBalance => {
            let (lo, hi) = kind.param_range().expect("range");
            let axis = linspace(lo, hi, grid);
            let mut out = Vec::new();
            for &r in &axis {
                for &g in &axis {
                    for &b in &axis {
                        out.push(mk(vec![r, g, b]));
                    }
                }
            }
            out
        }
        ModuleKind::ToneMapping => {
            let (lo, hi) = kind.param_range().expect("range");
            let axis = linspace(lo, hi, grid);
            let mut out = Vec::new();
            for &a in &axis {
                for &b in &axis {
                    out.push(mk(vec![a, a, a, a, b, b, b, b]));
                }
            }
            out
        }
        _ => {
            let (lo, hi) = kind.param_range().expect("range");
            linspace(lo, hi, grid).into_iter().map(|v| mk(vec![v])).collect()
        }
    }
}

/// Nearest grid candidate to `params` (Euclidean in physical units; ties
/// to the earlier candidate).
pub fn snap_to_grid(params: &ParamVector, grid: usize) -> ParamVector {
    let dist = |c: &ParamVector| -> f64 {
        c.physical()
            .iter()
            .zip(params.physical())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let mut best: Option<(f64, ParamVector)> = None;
    for c in param_grid(params.kind(), grid) {
        let d = dist(&c);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, c));
        }
    }
    best.expect("non-empty grid").1
}

pub fn snap_pipeline(pipeline: &Pipeline, grid: usize) -> Pipeline {
    Pipeline::from_params(pipeline.steps.iter().map(|s| snap_to_grid(&s.params, grid)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub pipeline: Pipeline,
    pub value: f64,
    pub evaluated: u64,
}

struct Search<'a> {
    scorer: &'a dyn Scorer,
    grids: Vec<(ModuleKind, Vec<ParamVector>)>,
    best: Option<(f64, Vec<ParamVector>)>,
    evaluated: u64,
}

impl Search<'_> {
    fn grid(&self, kind: ModuleKind) -> &[ParamVector] {
        &self.grids.iter().find(|(k, _)| *k == kind).expect("pool kind").1
    }

    /// Depth-first over one sequence. Candidates are visited in key order,
    /// so a strict `<` keeps the first minimum under the tie-break.
    fn visit(&mut self, img: &Image, seq: &[ModuleKind], chosen: &mut Vec<ParamVector>) -> Result<()> {
        if chosen.len() == seq.len() {
            let d = self.scorer.value(img)?;
            self.evaluated += 1;
            if self.best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                self.best = Some((d, chosen.clone()));
            }
            return Ok(());
        }
        let kind = seq[chosen.len()];
        let candidates = self.grid(kind).to_vec();
        for p in candidates {
            let next = apply(&p, img)?;
            chosen.push(p);
            self.visit(&next, seq, chosen)?;
            chosen.pop();
        }
        Ok(())
    }
}

/// Minimum task error over the space.
///
/// Ties go to the shorter pipeline, then the lexicographically smaller
/// kind sequence, then the earlier grid point.
pub fn oracle_best(img: &Image, space: &SearchSpace, scorer: &dyn Scorer) -> Result<OracleResult> {
    let seqs = enumerate_sequences(space)?;
    let mut search = Search {
        scorer,
        grids: space.pool.iter().map(|&k| (k, param_grid(k, space.grid))).collect(),
        best: None,
        evaluated: 0,
    };
    for seq in &seqs {
        search.visit(img, seq, &mut Vec::new())?;
    }
    let (value, params) = search.best.expect("the empty sequence is always scored");
    Ok(OracleResult {
        pipeline: Pipeline::from_params(params),
        value,
        evaluated: search.evaluated,
    })
}
