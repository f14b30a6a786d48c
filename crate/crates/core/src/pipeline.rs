//! Ordered module composition, the static cost model, and JSON configs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::isp::{apply, ModuleKind, ParamVector, NUM_KINDS};

/// Maximum number of stages of an episode.
pub const MAX_STAGES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStep {
    pub params: ParamVector,
}

impl PipelineStep {
    pub fn new(params: ParamVector) -> Self {
        PipelineStep { params }
    }

    pub fn kind(&self) -> ModuleKind {
        self.params.kind()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub steps: Vec<PipelineStep>,
}

impl Pipeline {
    pub fn new(steps: Vec<PipelineStep>) -> Self {
        Pipeline { steps }
    }

    pub fn from_params(params: impl IntoIterator<Item = ParamVector>) -> Self {
        Pipeline {
            steps: params.into_iter().map(PipelineStep::new).collect(),
        }
    }

    /// All ten kinds in canonical order with identity parameters.
    pub fn identity_all() -> Self {
        Pipeline::from_params(ModuleKind::ALL.map(ParamVector::identity))
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn kinds(&self) -> Vec<ModuleKind> {
        self.steps.iter().map(PipelineStep::kind).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.steps.iter().try_for_each(|s| s.params.validate())
    }
}

/// Per-kind module cost in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    ms: [f64; NUM_KINDS],
}

impl Default for CostModel {
    fn default() -> Self {
        let mut ms = [0.0; NUM_KINDS];
        for (kind, v) in [
            (ModuleKind::Exposure, 1.7),
            (ModuleKind::Gamma, 2.0),
            (ModuleKind::Ccm, 1.9),
            (ModuleKind::SharpenBlur, 6.3),
            (ModuleKind::Denoise, 10.0),
            (ModuleKind::ToneMapping, 2.7),
            (ModuleKind::Contrast, 2.1),
            (ModuleKind::Saturation, 2.0),
            (ModuleKind::Desaturation, 1.9),
            (ModuleKind::WhiteBalance, 1.7),
        ] {
            ms[kind.index()] = v;
        }
        CostModel { ms }
    }
}

impl CostModel {
    pub fn new(ms: [f64; NUM_KINDS]) -> Result<Self> {
        if let Some(k) = ModuleKind::ALL.iter().find(|k| !(ms[k.index()] > 0.0 && ms[k.index()].is_finite())) {
            return Err(Error::Config(format!("cost of {k} must be positive, got {}", ms[k.index()])));
        }
        Ok(CostModel { ms })
    }

    pub fn cost(&self, kind: ModuleKind) -> f64 {
        self.ms[kind.index()]
    }

    pub fn as_array(&self) -> [f64; NUM_KINDS] {
        self.ms
    }

    /// Replaces the listed kinds' costs.
    pub fn with_overrides(&self, overrides: &BTreeMap<ModuleKind, f64>) -> Result<Self> {
        let mut ms = self.ms;
        for (k, v) in overrides {
            ms[k.index()] = *v;
        }
        CostModel::new(ms)
    }

    fn to_map(self) -> BTreeMap<ModuleKind, f64> {
        ModuleKind::ALL.iter().map(|&k| (k, self.cost(k))).collect()
    }
}

/// Summed cost of every executed step.
pub fn pipeline_cost(pipeline: &Pipeline, costs: &CostModel) -> f64 {
    pipeline.steps.iter().map(|s| costs.cost(s.kind())).sum()
}

/// Applies the steps left to right. Returns the final image and one
/// intermediate per step (the last equals the final image).
pub fn run_pipeline(pipeline: &Pipeline, img: &Image) -> Result<(Image, Vec<Image>)> {
    let mut intermediates = Vec::with_capacity(pipeline.len());
    let mut cur = img.clone();
    for step in &pipeline.steps {
        cur = apply(&step.params, &cur)?;
        intermediates.push(cur.clone());
    }
    Ok((cur, intermediates))
}

/// Median wall-clock milliseconds of each step over `repetitions` runs.
pub fn measure_runtime(pipeline: &Pipeline, img: &Image, repetitions: usize) -> Result<Vec<f64>> {
    if repetitions < 3 {
        return Err(Error::Config(format!(
            "runtime measurement needs at least 3 repetitions, got {repetitions}"
        )));
    }
    let mut per_step = Vec::with_capacity(pipeline.len());
    let mut cur = img.clone();
    for step in &pipeline.steps {
        let mut times = Vec::with_capacity(repetitions);
        let mut out = None;
        for _ in 0..repetitions {
            let t = Instant::now();
            let y = apply(&step.params, &cur)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
            out = Some(y);
        }
        times.sort_by(f64::total_cmp);
        per_step.push(times[times.len() / 2].max(f64::MIN_POSITIVE));
        cur = out.expect("at least one repetition");
    }
    Ok(per_step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageConfig {
    module: ModuleKind,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    stages: Vec<StageConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cost_model: Option<BTreeMap<ModuleKind, f64>>,
}

/// A pipeline with its cost model, as stored in a JSON config.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub pipeline: Pipeline,
    pub cost_model: CostModel,
}

impl PipelineConfig {
    pub fn new(pipeline: Pipeline) -> Self {
        PipelineConfig {
            pipeline,
            cost_model: CostModel::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ConfigFile = serde_json::from_str(text)?;
        let steps = file
            .stages
            .into_iter()
            .map(|s| ParamVector::from_physical(s.module, s.params).map(PipelineStep::new))
            .collect::<Result<Vec<_>>>()?;
        let cost_model = match file.cost_model {
            Some(overrides) => CostModel::default().with_overrides(&overrides)?,
            None => CostModel::default(),
        };
        Ok(PipelineConfig {
            pipeline: Pipeline::new(steps),
            cost_model,
        })
    }

    pub fn to_json(&self) -> String {
        let file = ConfigFile {
            stages: self
                .pipeline
                .steps
                .iter()
                .map(|s| StageConfig {
                    module: s.kind(),
                    params: s.params.physical().to_vec(),
                })
                .collect(),
            cost_model: (self.cost_model != CostModel::default()).then(|| self.cost_model.to_map()),
        };
        serde_json::to_string_pretty(&file).expect("config serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(kind: ModuleKind, p: &[f64]) -> ParamVector {
        ParamVector::from_physical(kind, p.to_vec()).unwrap()
    }

    #[test]
    fn empty_pipeline_is_identity() {
        let img = Image::filled(3, 3, 0.2);
        let (out, mids) = run_pipeline(&Pipeline::default(), &img).unwrap();
        assert_eq!(out, img);
        assert!(mids.is_empty());
    }

    #[test]
    fn exposure_then_desaturation() {
        let img = Image::new(1, 1, vec![0.2, 0.1, 0.0]).unwrap();
        let p = Pipeline::from_params([pv(ModuleKind::Exposure, &[1.0]), pv(ModuleKind::Desaturation, &[1.0])]);
        let (out, mids) = run_pipeline(&p, &img).unwrap();
        assert_eq!(mids.len(), 2);
        assert_eq!(mids[1], out);
        for (a, b) in mids[0].data().iter().zip([0.4, 0.2, 0.0]) {
            assert!((*a as f64 - b).abs() < 1e-7);
        }
        assert!(out.data().iter().all(|v| (*v as f64 - 0.242).abs() < 1e-6));
    }

    #[test]
    fn identity_pipeline_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Image::from_fn(12, 10, |_, _| [rng.random(), rng.random(), rng.random()]);
        let (out, _) = run_pipeline(&Pipeline::identity_all(), &img).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn costs() {
        let m = CostModel::default();
        assert_eq!(pipeline_cost(&Pipeline::default(), &m), 0.0);
        let p = Pipeline::from_params([ParamVector::identity(ModuleKind::Ccm), ParamVector::identity(ModuleKind::SharpenBlur)]);
        assert!((pipeline_cost(&p, &m) - 8.2).abs() < 1e-9);
        assert!((pipeline_cost(&Pipeline::identity_all(), &m) - 32.3).abs() < 1e-9);
        let mut rev = Pipeline::identity_all();
        rev.steps.reverse();
        assert!((pipeline_cost(&rev, &m) - pipeline_cost(&Pipeline::identity_all(), &m)).abs() < 1e-12);
        assert!(CostModel::new([0.0; NUM_KINDS]).is_err());
    }

    #[test]
    fn runtime_needs_repetitions() {
        let img = Image::filled(8, 8, 0.5);
        let p = Pipeline::identity_all();
        assert!(measure_runtime(&p, &img, 0).is_err());
        let t = measure_runtime(&p, &img, 3).unwrap();
        assert_eq!(t.len(), 10);
        assert!(t.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn config_round_trip() {
        let p = Pipeline::from_params([
            pv(ModuleKind::Gamma, &[0.7]),
            pv(ModuleKind::WhiteBalance, &[1.1, 0.9, 1.3]),
            pv(ModuleKind::ToneMapping, &[1.0, 1.5, 0.5, 2.0, 1.0, 0.8, 1.2, 1.9]),
        ]);
        let mut cfg = PipelineConfig::new(p);
        let mut costs = cfg.cost_model.as_array();
        costs[0] = 3.0;
        cfg.cost_model = CostModel::new(costs).unwrap();
        let back = PipelineConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_schema() {
        let text = r#"{"stages": [{"module": "exposure", "params": [1.0]}], "cost_model": {"denoise": 4.0}}"#;
        let cfg = PipelineConfig::from_json(text).unwrap();
        assert_eq!(cfg.pipeline.kinds(), vec![ModuleKind::Exposure]);
        assert_eq!(cfg.cost_model.cost(ModuleKind::Denoise), 4.0);
        assert_eq!(cfg.cost_model.cost(ModuleKind::Exposure), 1.7);
        for bad in [
            r#"{"stages": [], "extra": 1}"#,
            r#"{"stages": [{"module": "exposure", "params": [1.0], "x": 0}]}"#,
            r#"{"stages": [{"module": "blur", "params": [1.0]}]}"#,
            r#"{"stages": [{"module": "exposure", "params": [9.0]}]}"#,
            r#"{"stages": [{"module": "gamma", "params": [1.0, 2.0]}]}"#,
        ] {
            assert!(PipelineConfig::from_json(bad).is_err(), "{bad}");
        }
    }
}
