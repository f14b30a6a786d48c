//! Actor-critic training: rollouts, returns, updates, schedules, metrics
//! and evaluation.

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, Penalties, PenaltyConfig, Planes};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::isp::{map_raw_params, module_vjp, raw_params_vjp, ModuleKind, ParamVector, NUM_KINDS};
use crate::nets::{
    backprop_policy, checkpoint, clip_grad_norm, entropy_coeff, lr_at, Adam, Agent, ArchConfig, NetCache,
    PolicyGrads, PolicyPass, PolicyStepInput, BASE_LR, CLIP_NORM,
};
use crate::pipeline::{CostModel, Pipeline, MAX_STAGES};
use crate::score::Scorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub t_max: usize,
    pub gamma: f64,
    pub lambda_c: f64,
    pub reuse_penalty: f64,
    /// Multiplier on the 1 → 0 entropy schedule.
    pub entropy_scale: f64,
    pub seed: u64,
    pub base_lr: f64,
    /// Weight of the task-gradient path relative to the module-choice term.
    pub param_coef: f64,
    pub param_grad: ParamGrad,
    pub pool: Vec<ModuleKind>,
    pub arch: ArchConfig,
    #[serde(skip)]
    pub cost_model: CostModel,
    /// Evaluate on the validation split every this many iterations (0 = never).
    pub validate_every: usize,
    /// Write the checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100_000,
            batch_size: 8,
            t_max: MAX_STAGES,
            gamma: 1.0,
            lambda_c: 0.0,
            reuse_penalty: 1.0,
            entropy_scale: 1.0,
            seed: 0,
            base_lr: BASE_LR,
            param_coef: 1.0,
            param_grad: ParamGrad::Stage,
            pool: ModuleKind::ALL.to_vec(),
            arch: ArchConfig::default(),
            cost_model: CostModel::default(),
            validate_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch size must be >= 1".into()));
        }
        if self.pool.is_empty() {
            return Err(Error::Config("empty module pool".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.base_lr)));
        }
        if !(0.0..=1.0).contains(&self.entropy_scale) {
            return Err(Error::Config("entropy scale must be in [0, 1]".into()));
        }
        self.env_config(0).validate()
    }

    pub fn env_config(&self, iter: usize) -> EnvConfig {
        EnvConfig {
            penalties: PenaltyConfig {
                lambda_e: self.entropy_scale * entropy_coeff(iter, self.iterations),
                lambda_c: self.lambda_c,
                reuse_penalty: self.reuse_penalty,
                cost_model: self.cost_model,
                gamma: self.gamma,
            },
            t_max: self.t_max,
            side: self.arch.side,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub policy_planes: Planes,
    pub value_planes: Planes,
    pub kind: ModuleKind,
    pub params: ParamVector,
    pub log_prob: f64,
    pub module_dist: Vec<f64>,
    pub value: f64,
    pub reward: f64,
    pub penalties: Penalties,
    pub d_before: f64,
    pub d_after: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// `∂D(s_{t+1})/∂raw` for the chosen module; empty outside train mode.
    pub raw_grad: Vec<f64>,
    pass: PolicyPass,
    value_cache: NetCache,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_image: Image,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn initial_d(&self) -> f64 {
        self.steps.first().map_or(f64::NAN, |s| s.d_before)
    }

    pub fn final_d(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.d_after)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn pipeline(&self) -> Pipeline {
        Pipeline::from_params(self.steps.iter().map(|s| s.params.clone()))
    }

    pub fn cost_ms(&self, costs: &CostModel) -> f64 {
        self.steps.iter().map(|s| costs.cost(s.kind)).sum()
    }

    /// Cost averaged over each step's module distribution.
    pub fn expected_cost_ms(&self, costs: &CostModel) -> f64 {
        self.steps
            .iter()
            .map(|s| {
                s.module_dist
                    .iter()
                    .zip(ModuleKind::ALL)
                    .map(|(p, k)| p * costs.cost(k))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Length in [1, t_max] and exactly one terminal flag, on the last step.
    pub fn check_complete(&self) -> Result<()> {
        let n = self.steps.len();
        if n == 0 || n > MAX_STAGES {
            return Err(Error::IncompleteTrajectory(format!("length {n}")));
        }
        for (i, s) in self.steps.iter().enumerate() {
            let flags = s.terminated as u8 + s.truncated as u8;
            let want = (i + 1 == n) as u8;
            if flags != want {
                return Err(Error::IncompleteTrajectory(format!("step {i} has {flags} terminal flags")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Draw modules from the policy distribution, with dropout on.
    Sample,
    /// Take the argmax module, no dropout.
    Greedy,
}

/// Which task error a step's parameters are trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGrad {
    /// `∂D(s_{t+1})/∂θ_t`: the error right after the step.
    Stage,
    /// `∂D(s_T)/∂θ_t`: the episode's final error, backpropagated through
    /// the later stages.
    Episode,
}

/// Rolls one episode until it terminates or truncates. Task gradients are
/// computed only when `task_grads` is given.
pub fn collect_trajectory(
    env: &Env,
    agent: &Agent,
    img: &Image,
    rng: &mut ChaCha8Rng,
    selection: Selection,
    task_grads: Option<ParamGrad>,
) -> Result<Trajectory> {
    rollout(env, agent, img, rng, selection, task_grads, None)
}

/// Like [`collect_trajectory`], with every predicted parameter vector
/// replaced by its nearest point on the oracle grid before it is applied.
pub fn collect_snapped_trajectory(env: &Env, agent: &Agent, img: &Image, grid: usize) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    rollout(env, agent, img, &mut rng, Selection::Greedy, None, Some(grid))
}

fn rollout(
    env: &Env,
    agent: &Agent,
    img: &Image,
    rng: &mut ChaCha8Rng,
    selection: Selection,
    task_grads: Option<ParamGrad>,
    snap: Option<usize>,
) -> Result<Trajectory> {
    let mask = agent.mask();
    let mut state = env.reset(img)?;
    let mut steps = Vec::new();
    let mut inputs = Vec::new();
    while !state.is_done() {
        let policy_planes = env.policy_planes(&state)?;
        let value_planes = env.value_planes(&state)?;
        let pass = match selection {
            Selection::Sample => agent.policy.forward(&policy_planes, &mask, Some(rng as &mut dyn RngCore))?,
            Selection::Greedy => agent.policy.forward(&policy_planes, &mask, None)?,
        };
        let (value, value_cache) = agent.value.forward(&value_planes)?;
        let kind = match selection {
            Selection::Sample => pass.output.sample(rng),
            Selection::Greedy => pass.output.argmax(),
        };
        let raw = &pass.output.raw_params[kind.index()];
        let mut params = map_raw_params(kind, raw)?;
        if let Some(grid) = snap {
            params = crate::oracle::snap_to_grid(&params, grid);
        }
        let dist = pass.output.module_dist.clone();
        let outcome = env.step(&state, &params, &dist)?;
        let raw_grad = if task_grads == Some(ParamGrad::Stage) {
            let g = module_vjp(&params, &state.image, &outcome.next_state.score.grad_image)?.grad_params;
            raw_params_vjp(kind, raw, &g)
        } else {
            Vec::new()
        };
        if task_grads == Some(ParamGrad::Episode) {
            inputs.push(state.image.clone());
        }
        steps.push(TrajectoryStep {
            policy_planes,
            value_planes,
            kind,
            log_prob: dist[kind.index()].ln(),
            module_dist: dist,
            params,
            value,
            reward: outcome.reward,
            penalties: outcome.penalties,
            d_before: state.score.value,
            d_after: outcome.next_state.score.value,
            terminated: outcome.terminated,
            truncated: outcome.truncated,
            raw_grad,
            pass,
            value_cache,
        });
        state = outcome.next_state;
    }
    if task_grads == Some(ParamGrad::Episode) {
        let mut upstream = state.score.grad_image.clone();
        for (step, input) in steps.iter_mut().zip(&inputs).rev() {
            let vjp = module_vjp(&step.params, input, &upstream)?;
            step.raw_grad = raw_params_vjp(step.kind, &step.pass.output.raw_params[step.kind.index()], &vjp.grad_params);
            upstream = vjp.grad_image;
        }
    }
    let traj = Trajectory {
        steps,
        final_image: state.image,
    };
    traj.check_complete()?;
    Ok(traj)
}

/// Discounted returns without bootstrapping past the episode end.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub mean_return: f64,
    #[serde(rename = "mean_final_D")]
    pub mean_final_d: f64,
    pub mean_len: f64,
    pub mean_cost_ms: f64,
    pub lambda_e: f64,
    pub lr: f64,
}

/// Deterministic train/validation split: 10% of indices (rounded down)
/// go to validation.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a17));
    let n_val = n / 10;
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub agent: Agent,
    pub metrics: Vec<MetricsRow>,
    pub validation: Vec<usize>,
}

struct MetricsSink {
    writer: Option<csv::Writer<File>>,
}

impl MetricsSink {
    fn open(path: Option<&Path>) -> Result<Self> {
        let writer = match path {
            Some(p) => Some(csv::Writer::from_writer(File::create(p).map_err(|e| Error::io(p, e))?)),
            None => None,
        };
        Ok(MetricsSink { writer })
    }

    fn push(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.serialize(row)?;
            w.flush().map_err(|e| Error::io("metrics", e))?;
        }
        Ok(())
    }
}

/// One actor-critic update from a batch of sampled episodes.
struct Update {
    policy: PolicyGrads,
    value: Vec<f64>,
}

fn accumulate(agent: &Agent, trajs: &[Trajectory], gamma: f64, lambda_e: f64, param_coef: f64) -> Result<Update> {
    let mut up = Update {
        policy: PolicyGrads::zeros(&agent.policy),
        value: vec![0.0; agent.value.net.param_count()],
    };
    let weight = 1.0 / trajs.len() as f64;
    for traj in trajs {
        traj.check_complete()?;
        let returns = compute_returns(&traj.rewards(), gamma);
        let inputs: Vec<PolicyStepInput> = traj
            .steps
            .iter()
            .zip(&returns)
            .map(|(s, g)| PolicyStepInput {
                pass: &s.pass,
                action: s.kind,
                advantage: g - s.value,
                raw_grad: &s.raw_grad,
                entropy_weight: lambda_e,
            })
            .collect();
        backprop_policy(&agent.policy, &inputs, param_coef, weight, &mut up.policy)?;
        for (s, g) in traj.steps.iter().zip(&returns) {
            agent.value.backprop(&s.value_cache, *g, weight, &mut up.value)?;
        }
    }
    Ok(up)
}

/// Trains a fresh agent on `images`, holding out a seeded 10% split.
///
/// On a non-finite update the run stops with an error; the checkpoint on
/// disk is the last one written before the failure.
pub fn train(images: &[Image], config: &TrainConfig, scorer: &dyn Scorer, outputs: &TrainOutputs) -> Result<TrainResult> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::Dataset("no training images".into()));
    }
    let (train_idx, val_idx) = split_indices(images.len(), config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = Agent::new(config.arch.clone(), config.pool.clone(), &mut rng)?;
    let mut opt_module = Adam::new(agent.policy.module_net.param_count());
    let mut opt_params = Adam::new(agent.policy.param_net.param_count());
    let mut opt_value = Adam::new(agent.value.net.param_count());
    let mut sink = MetricsSink::open(outputs.metrics.as_deref())?;
    let mut metrics = Vec::with_capacity(config.iterations);
    let val_images: Vec<Image> = val_idx.iter().map(|&i| images[i].clone()).collect();

    for iter in 0..config.iterations {
        let env_cfg = config.env_config(iter);
        let lambda_e = env_cfg.penalties.lambda_e;
        let env = Env::new(scorer, env_cfg)?;
        let lr = lr_at(config.base_lr, iter, config.iterations);
        let mut trajs = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let img = &images[train_idx[rng.random_range(0..train_idx.len())]];
            trajs.push(collect_trajectory(&env, &agent, img, &mut rng, Selection::Sample, Some(config.param_grad))?);
        }
        let mut up = accumulate(&agent, &trajs, config.gamma, lambda_e, config.param_coef)?;
        clip_grad_norm(&mut up.policy.module, CLIP_NORM);
        clip_grad_norm(&mut up.policy.params, CLIP_NORM);
        clip_grad_norm(&mut up.value, CLIP_NORM);
        opt_module.step(&mut agent.policy.module_net.params, &up.policy.module, lr)?;
        opt_params.step(&mut agent.policy.param_net.params, &up.policy.params, lr)?;
        opt_value.step(&mut agent.value.net.params, &up.value, lr)?;

        let n = trajs.len() as f64;
        let row = MetricsRow {
            iter,
            mean_return: trajs.iter().map(|t| compute_returns(&t.rewards(), config.gamma)[0]).sum::<f64>() / n,
            mean_final_d: trajs.iter().map(|t| t.final_d()).sum::<f64>() / n,
            mean_len: trajs.iter().map(|t| t.len() as f64).sum::<f64>() / n,
            mean_cost_ms: trajs.iter().map(|t| t.cost_ms(&config.cost_model)).sum::<f64>() / n,
            lambda_e,
            lr,
        };
        if !(row.mean_return.is_finite() && row.mean_final_d.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("iteration {iter} produced a non-finite loss")));
        }
        sink.push(&row)?;
        metrics.push(row);

        let done = iter + 1;
        if config.validate_every > 0 && done % config.validate_every == 0 && !val_images.is_empty() {
            let report = evaluate(&val_images, &agent, scorer, &config.env_config(config.iterations))?;
            log::info!(
                "iter {done}: validation D {:.5} -> {:.5}",
                report.mean_initial_d,
                report.mean_final_d
            );
        }
        if let Some(path) = &outputs.checkpoint {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.iterations {
                checkpoint::save(&agent, path)?;
            }
        }
    }
    if let Some(path) = &outputs.checkpoint {
        checkpoint::save(&agent, path)?;
    }
    Ok(TrainResult {
        agent,
        metrics,
        validation: val_idx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub initial_d: f64,
    pub final_d: f64,
    pub kinds: Vec<ModuleKind>,
    pub pipeline: Pipeline,
    pub d_series: Vec<f64>,
    pub cost_ms: f64,
    pub expected_cost_ms: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: usize,
    /// Mean D after this stage; finished episodes carry their final D.
    pub mean_d: f64,
    pub marginal_improvement: f64,
    pub cumulative_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub mean_initial_d: f64,
    pub mean_final_d: f64,
    /// Fraction of episodes whose pipeline contains each kind.
    pub frequencies: [f64; NUM_KINDS],
    pub mean_cost_ms: f64,
    pub mean_expected_cost_ms: f64,
    pub mean_len: f64,
    pub stages: Vec<StageRow>,
    pub episodes: Vec<EpisodeSummary>,
}

impl EvalReport {
    pub fn total_improvement(&self) -> f64 {
        self.mean_initial_d - self.mean_final_d
    }
}

/// Greedy rollouts over `images`.
pub fn evaluate(images: &[Image], agent: &Agent, scorer: &dyn Scorer, env_cfg: &EnvConfig) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::Dataset("no evaluation images".into()));
    }
    let env = Env::new(scorer, env_cfg.clone())?;
    let costs = &env_cfg.penalties.cost_model;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut episodes = Vec::with_capacity(images.len());
    for img in images {
        let t = collect_trajectory(&env, agent, img, &mut rng, Selection::Greedy, None)?;
        let mut d_series = vec![t.initial_d()];
        d_series.extend(t.steps.iter().map(|s| s.d_after));
        episodes.push(EpisodeSummary {
            initial_d: t.initial_d(),
            final_d: t.final_d(),
            kinds: t.steps.iter().map(|s| s.kind).collect(),
            pipeline: t.pipeline(),
            d_series,
            cost_ms: t.cost_ms(costs),
            expected_cost_ms: t.expected_cost_ms(costs),
            truncated: t.steps.last().is_some_and(|s| s.truncated),
        });
    }
    let n = episodes.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeSummary) -> f64| episodes.iter().map(f).sum::<f64>() / n;
    let mut frequencies = [0.0; NUM_KINDS];
    for e in &episodes {
        for k in ModuleKind::ALL {
            if e.kinds.contains(&k) {
                frequencies[k.index()] += 1.0 / n;
            }
        }
    }
    let mean_initial_d = mean(&|e| e.initial_d);
    let mut stages = Vec::new();
    let mut prev = mean_initial_d;
    for stage in 1..=env_cfg.t_max {
        let mean_d = mean(&|e| e.d_series[stage.min(e.d_series.len() - 1)]);
        stages.push(StageRow {
            stage,
            mean_d,
            marginal_improvement: prev - mean_d,
            cumulative_improvement: mean_initial_d - mean_d,
        });
        prev = mean_d;
    }
    Ok(EvalReport {
        images: episodes.len(),
        mean_initial_d,
        mean_final_d: mean(&|e| e.final_d),
        frequencies,
        mean_cost_ms: mean(&|e| e.cost_ms),
        mean_expected_cost_ms: mean(&|e| e.expected_cost_ms),
        mean_len: mean(&|e| e.kinds.len() as f64),
        stages,
        episodes,
    })
}

/// Reads every `.pfm`/`.ppm` image in `dir`, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<Image>> {
    crate::synth::list_base_images(dir)?
        .iter()
        .map(|p| crate::synth::read_base_image(p))
        .collect()
}
