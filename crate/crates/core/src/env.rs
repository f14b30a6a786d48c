//! The pipeline-construction MDP: state assembly, stepping and penalties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{compute_stats, downsample, Image};
use crate::isp::{apply, ModuleKind, ParamVector, NUM_KINDS};
use crate::pipeline::{CostModel, MAX_STAGES};
use crate::score::{reward_for_transition, Scorer, TaskScore};

/// Episodes are truncated once the mean luminance leaves this band.
pub const LUM_MIN: f64 = 0.02;
pub const LUM_MAX: f64 = 0.95;

/// Planes fed to the policy: RGB, one usage plane per kind, stage.
pub const POLICY_PLANES: usize = 3 + NUM_KINDS + 1;
/// Policy planes plus mean luminance, contrast and saturation.
pub const VALUE_PLANES: usize = POLICY_PLANES + 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda_e: f64,
    pub lambda_c: f64,
    pub reuse_penalty: f64,
    #[serde(skip)]
    pub cost_model: CostModel,
    pub gamma: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            lambda_e: 1.0,
            lambda_c: 0.0,
            reuse_penalty: 1.0,
            cost_model: CostModel::default(),
            gamma: 1.0,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_e) {
            return Err(Error::Config(format!("lambda_e must be in [0, 1], got {}", self.lambda_e)));
        }
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            return Err(Error::Config(format!("lambda_c must be >= 0, got {}", self.lambda_c)));
        }
        if !self.reuse_penalty.is_finite() {
            return Err(Error::Config("reuse penalty must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub penalties: PenaltyConfig,
    pub t_max: usize,
    /// Side of the square planes given to the networks.
    pub side: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            penalties: PenaltyConfig::default(),
            t_max: MAX_STAGES,
            side: 64,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.penalties.validate()?;
        if !(1..=MAX_STAGES).contains(&self.t_max) {
            return Err(Error::Config(format!("t_max must be in 1..={MAX_STAGES}, got {}", self.t_max)));
        }
        if self.side < 8 {
            return Err(Error::Config(format!("plane side must be >= 8, got {}", self.side)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub image: Image,
    pub usage: [bool; NUM_KINDS],
    pub stage: usize,
    pub score: TaskScore,
    pub terminated: bool,
    pub truncated: bool,
}

impl EnvState {
    pub fn is_done(&self) -> bool {
        self.terminated || self.truncated
    }

    pub fn used_count(&self) -> usize {
        self.usage.iter().filter(|u| **u).count()
    }
}

/// The three penalty terms charged for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub reuse: f64,
    pub entropy: f64,
    pub cost: f64,
}

impl Penalties {
    pub fn total(&self) -> f64 {
        self.reuse + self.entropy + self.cost
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub penalties: Penalties,
    pub terminated: bool,
    pub truncated: bool,
}

/// Channel-major stack of constant-size planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub side: usize,
    pub data: Vec<f32>,
}

impl Planes {
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }
}

/// `lambda_e * sum p ln p` with `0 ln 0 = 0`.
pub fn entropy_penalty(dist: &[f64], lambda_e: f64) -> Result<f64> {
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || dist.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::NotNormalized(sum));
    }
    let neg_entropy: f64 = dist.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum();
    Ok(lambda_e * neg_entropy)
}

pub fn cost_penalty(kind: ModuleKind, lambda_c: f64, costs: &CostModel) -> f64 {
    lambda_c * costs.cost(kind)
}

pub fn luminance_in_bounds(img: &Image) -> bool {
    (LUM_MIN..=LUM_MAX).contains(&img.mean_luminance())
}

pub struct Env<'a> {
    pub scorer: &'a dyn Scorer,
    pub config: EnvConfig,
}

impl<'a> Env<'a> {
    pub fn new(scorer: &'a dyn Scorer, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Env { scorer, config })
    }

    pub fn reset(&self, img: &Image) -> Result<EnvState> {
        Ok(EnvState {
            image: img.clone(),
            usage: [false; NUM_KINDS],
            stage: 0,
            score: self.scorer.score(img)?,
            terminated: false,
            truncated: false,
        })
    }

    /// Applies one module. `dist` is the policy's full module distribution
    /// at this state, used for the entropy penalty.
    ///
    /// An episode ending on a luminance violation is flagged truncated
    /// only, even when it also reached the last stage.
    pub fn step(&self, state: &EnvState, params: &ParamVector, dist: &[f64]) -> Result<StepOutcome> {
        if state.is_done() || state.stage >= self.config.t_max {
            return Err(Error::EpisodeFinished { stage: state.stage });
        }
        let pc = &self.config.penalties;
        let kind = params.kind();
        let penalties = Penalties {
            reuse: if state.usage[kind.index()] { pc.reuse_penalty } else { 0.0 },
            entropy: entropy_penalty(dist, pc.lambda_e)?,
            cost: cost_penalty(kind, pc.lambda_c, &pc.cost_model),
        };
        let image = apply(params, &state.image)?;
        let score = self.scorer.score(&image)?;
        let reward = reward_for_transition(state.score.value, score.value, penalties.total());
        let mut usage = state.usage;
        usage[kind.index()] = true;
        let stage = state.stage + 1;
        let truncated = !luminance_in_bounds(&image);
        let terminated = stage == self.config.t_max && !truncated;
        Ok(StepOutcome {
            next_state: EnvState {
                image,
                usage,
                stage,
                score,
                terminated,
                truncated,
            },
            reward,
            penalties,
            terminated,
            truncated,
        })
    }

    pub fn policy_planes(&self, state: &EnvState) -> Result<Planes> {
        self.planes(state, false)
    }

    pub fn value_planes(&self, state: &EnvState) -> Result<Planes> {
        self.planes(state, true)
    }

    fn planes(&self, state: &EnvState, with_stats: bool) -> Result<Planes> {
        let side = self.config.side;
        let small = downsample(&state.image, side)?;
        let n = side * side;
        let channels = if with_stats { VALUE_PLANES } else { POLICY_PLANES };
        let mut data = Vec::with_capacity(channels * n);
        for c in 0..3 {
            data.extend(small.data().iter().skip(c).step_by(3));
        }
        for used in state.usage {
            data.extend(std::iter::repeat_n(if used { 1.0 } else { 0.0 }, n));
        }
        let stage = state.stage as f32 / self.config.t_max as f32;
        data.extend(std::iter::repeat_n(stage, n));
        if with_stats {
            let s = compute_stats(&state.image);
            for v in [s.mean_luminance, s.contrast, s.mean_saturation] {
                data.extend(std::iter::repeat_n(v as f32, n));
            }
        }
        Ok(Planes { channels, side, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{proxy_score, ProxyScorer, ProxyTargets};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(side: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(side, side, |_, _| {
            [rng.random_range(0.1..0.7), rng.random_range(0.1..0.7), rng.random_range(0.1..0.7)]
        })
    }

    fn env(scorer: &ProxyScorer) -> Env<'_> {
        let cfg = EnvConfig {
            side: 16,
            ..EnvConfig::default()
        };
        Env::new(scorer, cfg).unwrap()
    }

    fn uniform() -> Vec<f64> {
        vec![0.1; NUM_KINDS]
    }

    #[test]
    fn reset_state() {
        let scorer = ProxyScorer::default();
        let env = env(&scorer);
        let img = random_image(16, 1);
        let s = env.reset(&img).unwrap();
        assert_eq!(s.stage, 0);
        assert_eq!(s.used_count(), 0);
        assert_eq!(s.score, proxy_score(&img, &ProxyTargets::default()));
        assert_eq!(env.reset(&img).unwrap(), s);
    }

    #[test]
    fn policy_planes_layout() {
        let scorer = ProxyScorer::default();
        let env = env(&scorer);
        let s0 = env.reset(&random_image(16, 2)).unwrap();
        let p = env.policy_planes(&s0).unwrap();
        assert_eq!(p.channels, POLICY_PLANES);
        assert!((3..3 + NUM_KINDS + 1).all(|c| p.plane(c).iter().all(|v| *v == 0.0)));
        assert_eq!(p.plane(0)[5], s0.image.data()[15]);

        let gamma = ParamVector::from_physical(ModuleKind::Gamma, vec![0.9]).unwrap();
        let s1 = env.step(&s0, &gamma, &uniform()).unwrap().next_state;
        let p = env.policy_planes(&s1).unwrap();
        let ones: Vec<usize> = (0..NUM_KINDS).filter(|k| p.plane(3 + k).iter().all(|v| *v == 1.0)).collect();
        assert_eq!(ones, vec![ModuleKind::Gamma.index()]);

        let mut s3 = s1.clone();
        s3.stage = 3;
        let p = env.policy_planes(&s3).unwrap();
        assert!(p.plane(3 + NUM_KINDS).iter().all(|v| (*v - 0.6).abs() < 1e-7));
    }

    #[test]
    fn value_planes_carry_stats() {
        let scorer = ProxyScorer::default();
        let env = env(&scorer);
        let s = env.reset(&Image::filled(16, 16, 0.5)).unwrap();
        let p = env.value_planes(&s).unwrap();
        assert_eq!(p.channels, 17);
        assert!(p.plane(14).iter().all(|v| *v == 0.5));
        assert!(p.plane(15).iter().all(|v| *v == 0.0));

        let img = random_image(16, 3);
        let stats = compute_stats(&img);
        let p = env.value_planes(&env.reset(&img).unwrap()).unwrap();
        assert_eq!(p.plane(14)[0], stats.mean_luminance as f32);
        assert_eq!(p.plane(15)[7], stats.contrast as f32);
        assert_eq!(p.plane(16)[9], stats.mean_saturation as f32);
    }

    #[test]
    fn entropy_penalty_values() {
        assert!((entropy_penalty(&uniform(), 1.0).unwrap() + 10f64.ln()).abs() < 1e-12);
        let mut one_hot = vec![0.0; NUM_KINDS];
        one_hot[3] = 1.0;
        assert_eq!(entropy_penalty(&one_hot, 1.0).unwrap(), 0.0);
        assert_eq!(entropy_penalty(&uniform(), 0.0).unwrap(), 0.0);
        assert!(matches!(entropy_penalty(&[0.5, 0.6], 1.0), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn cost_penalty_values() {
        let m = CostModel::default();
        assert_eq!(cost_penalty(ModuleKind::Ccm, 0.0, &m), 0.0);
        assert!((cost_penalty(ModuleKind::Ccm, 0.01, &m) - 0.019).abs() < 1e-12);
        assert!((cost_penalty(ModuleKind::Denoise, 0.1, &m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reward_is_score_improvement_without_penalties() {
        let scorer = ProxyScorer::default();
        let mut env = env(&scorer);
        env.config.penalties.lambda_e = 0.0;
        let img = Image::from_fn(16, 16, |y, x| {
            let v = 0.3 + 0.02 * (x + y) as f32;
            [v, v, v]
        });
        let dark = crate::isp::apply_exposure(&img, -1.5).unwrap();
        let s0 = env.reset(&dark).unwrap();
        let e = ParamVector::from_physical(ModuleKind::Exposure, vec![1.5]).unwrap();
        let out = env.step(&s0, &e, &uniform()).unwrap();
        assert!((out.reward - (s0.score.value - out.next_state.score.value)).abs() < 1e-15);
        assert!(out.reward > 0.0);
    }

    #[test]
    fn reuse_costs_exactly_one() {
        let scorer = ProxyScorer::default();
        let mut env = env(&scorer);
        env.config.penalties.lambda_e = 0.0;
        let s0 = env.reset(&random_image(16, 5)).unwrap();
        let g = ParamVector::identity(ModuleKind::Gamma);
        let first = env.step(&s0, &g, &uniform()).unwrap();
        let second = env.step(&first.next_state, &g, &uniform()).unwrap();
        assert_eq!(first.penalties.reuse, 0.0);
        assert_eq!(second.penalties.reuse, 1.0);
        assert!((second.reward + 1.0).abs() < 1e-12);
    }

    #[test]
    fn overexposure_truncates() {
        let scorer = ProxyScorer::default();
        let env = env(&scorer);
        let s0 = env.reset(&Image::filled(16, 16, 0.5)).unwrap();
        let e = ParamVector::from_physical(ModuleKind::Exposure, vec![3.5]).unwrap();
        let out = env.step(&s0, &e, &uniform()).unwrap();
        assert!(out.truncated && !out.terminated);
        assert!(matches!(
            env.step(&out.next_state, &e, &uniform()),
            Err(Error::EpisodeFinished { stage: 1 })
        ));
    }

    #[test]
    fn episode_ends_at_t_max() {
        let scorer = ProxyScorer::default();
        let env = env(&scorer);
        let mut s = env.reset(&random_image(16, 6)).unwrap();
        for k in 0..MAX_STAGES {
            let out = env.step(&s, &ParamVector::identity(ModuleKind::ALL[k]), &uniform()).unwrap();
            assert_eq!(out.terminated, k + 1 == MAX_STAGES);
            s = out.next_state;
        }
        assert!(env.step(&s, &ParamVector::identity(ModuleKind::Contrast), &uniform()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn episodes_telescope_and_respect_bounds(
            seed in any::<u64>(),
            lambda_e in 0.0f64..=1.0,
            lambda_c in 0.0f64..0.2,
        ) {
            let scorer = ProxyScorer::default();
            let mut env = env(&scorer);
            env.config.penalties.lambda_e = lambda_e;
            env.config.penalties.lambda_c = lambda_c;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = env.reset(&random_image(16, seed)).unwrap();
            let d0 = s.score.value;
            let (mut rewards, mut pens) = (0.0, 0.0);
            let mut len = 0;
            while !s.is_done() {
                let kind = ModuleKind::ALL[rng.random_range(0..NUM_KINDS)];
                let raw: Vec<f64> = (0..kind.param_count()).map(|_| rng.random_range(-0.99..0.99)).collect();
                let params = crate::isp::map_raw_params(kind, &raw).unwrap();
                let mut dist: Vec<f64> = (0..NUM_KINDS).map(|_| rng.random::<f64>()).collect();
                let total: f64 = dist.iter().sum();
                dist.iter_mut().for_each(|p| *p /= total);
                let out = env.step(&s, &params, &dist).unwrap();
                prop_assert!(out.penalties.entropy <= 0.0);
                prop_assert!(out.penalties.entropy >= -lambda_e * (NUM_KINDS as f64).ln() - 1e-12);
                prop_assert_eq!(out.truncated, !luminance_in_bounds(&out.next_state.image));
                rewards += out.reward;
                pens += out.penalties.total();
                s = out.next_state;
                len += 1;
                prop_assert!(s.used_count() <= s.stage);
            }
            prop_assert!(len <= MAX_STAGES);
            prop_assert!((rewards + pens - (d0 - s.score.value)).abs() < 1e-9);
        }
    }
}
