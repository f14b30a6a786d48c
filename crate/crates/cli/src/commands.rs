use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use ispsearch::env::EnvConfig;
use ispsearch::gradcheck::{check_module, check_proxy, GradCheckConfig, GradCheckReport};
use ispsearch::io::{read_pfm, write_pfm, write_ppm};
use ispsearch::nets::{checkpoint, ArchConfig};
use ispsearch::oracle::{oracle_best, SearchSpace};
use ispsearch::pipeline::{measure_runtime, run_pipeline, PipelineConfig};
use ispsearch::score::{ExternalScorer, ProxyScorer, ProxyTargets, Scorer};
use ispsearch::synth::{make_dataset, write_base_scenes, Family};
use ispsearch::trainer::{evaluate, load_dataset, train, EvalReport, ParamGrad, TrainConfig, TrainOutputs};
use ispsearch::{Image, ModuleKind};
use serde::Serialize;

use crate::args::*;
use crate::UserError;

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Search(a) => cmd_search(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Tradeoff(a) => cmd_tradeoff(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

fn parse_pool(names: &[String]) -> Result<Vec<ModuleKind>> {
    names.iter().map(|n| n.parse::<ModuleKind>().map_err(Into::into)).collect()
}

fn make_scorer(a: &ScorerArgs) -> Result<Box<dyn Scorer>> {
    match &a.scorer {
        None => Ok(Box::new(ProxyScorer::default())),
        Some(cmd) => {
            if !(a.scorer_timeout > 0.0 && a.scorer_timeout.is_finite()) {
                return Err(user(format!("--scorer-timeout must be > 0, got {}", a.scorer_timeout)));
            }
            let s = ExternalScorer::from_command_line(cmd)?.with_timeout(Duration::from_secs_f64(a.scorer_timeout));
            Ok(Box::new(s))
        }
    }
}

fn load_images(dirs: &[PathBuf]) -> Result<Vec<Image>> {
    let mut images = Vec::new();
    for d in dirs {
        images.extend(load_dataset(d).with_context(|| format!("loading images from {}", d.display()))?);
    }
    if images.is_empty() {
        return Err(user("dataset is empty"));
    }
    Ok(images)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct StageReport {
    stage: usize,
    module: ModuleKind,
    params: Vec<f64>,
    cost_model_ms: f64,
    measured_ms: Option<f64>,
    d: f64,
    improvement: f64,
}

#[derive(Serialize)]
struct RunReport {
    initial_d: f64,
    final_d: f64,
    total_improvement: f64,
    total_cost_model_ms: f64,
    total_measured_ms: Option<f64>,
    stages: Vec<StageReport>,
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let cfg = PipelineConfig::read(&a.pipeline)?;
    cfg.pipeline.validate()?;
    let img = read_pfm(&a.input)?;
    let (out, intermediates) = run_pipeline(&cfg.pipeline, &img)?;
    write_pfm(&a.out, &out)?;
    if let Some(p) = &a.ppm {
        write_ppm(p, &out)?;
    }
    let targets = ProxyTargets::default();
    let d = |im: &Image| ispsearch::score::proxy_terms(im, &targets).total();
    let initial_d = d(&img);
    let measured = match a.timing_reps {
        0 => None,
        n => Some(measure_runtime(&cfg.pipeline, &img, n.max(3))?),
    };
    let mut prev = initial_d;
    let mut stages = Vec::with_capacity(cfg.pipeline.len());
    for (i, (step, im)) in cfg.pipeline.steps.iter().zip(&intermediates).enumerate() {
        let di = d(im);
        stages.push(StageReport {
            stage: i + 1,
            module: step.kind(),
            params: step.params.physical().to_vec(),
            cost_model_ms: cfg.cost_model.cost(step.kind()),
            measured_ms: measured.as_ref().map(|m| m[i]),
            d: di,
            improvement: prev - di,
        });
        prev = di;
    }
    let report = RunReport {
        initial_d,
        final_d: prev,
        total_improvement: initial_d - prev,
        total_cost_model_ms: stages.iter().map(|s| s.cost_model_ms).sum(),
        total_measured_ms: measured.map(|m| m.iter().sum()),
        stages,
    };
    println!(
        "{} stages, D {:.6} -> {:.6}, cost {:.1} ms",
        report.stages.len(),
        report.initial_d,
        report.final_d,
        report.total_cost_model_ms
    );
    if let Some(p) = &a.report {
        write_text(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let images = load_images(&a.data)?;
    let scorer = make_scorer(&a.scorer)?;
    let mut arch = match a.arch {
        ArchPreset::Full => ArchConfig::default(),
        ArchPreset::Small => ArchConfig::small(),
    };
    if let Some(side) = a.side {
        arch.side = side;
    }
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        iterations: a.iters,
        batch_size: a.batch,
        t_max: a.t_max,
        lambda_c: a.lambda_c,
        entropy_scale: a.entropy_scale,
        seed: a.seed,
        base_lr: a.lr.unwrap_or(defaults.base_lr),
        param_grad: match a.param_grad {
            ParamGradArg::Stage => ParamGrad::Stage,
            ParamGradArg::Episode => ParamGrad::Episode,
        },
        pool: match &a.pool {
            Some(p) => parse_pool(p)?,
            None => ModuleKind::ALL.to_vec(),
        },
        arch,
        validate_every: a.validate_every,
        checkpoint_every: a.checkpoint_every,
        ..defaults
    };
    config.validate()?;
    let metrics = a.metrics.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".metrics.csv");
        p.into()
    });
    let outputs = TrainOutputs {
        checkpoint: Some(a.out.clone()),
        metrics: Some(metrics.clone()),
    };
    let result = train(&images, &config, scorer.as_ref(), &outputs)?;
    if let Some(last) = result.metrics.last() {
        println!(
            "trained {} iterations on {} images: mean return {:.6}, mean final D {:.6}, mean cost {:.2} ms",
            config.iterations,
            images.len() - result.validation.len(),
            last.mean_return,
            last.mean_final_d,
            last.mean_cost_ms
        );
    }
    println!("checkpoint {}", a.out.display());
    println!("metrics {}", metrics.display());
    Ok(())
}

fn eval_env(side: usize, t_max: usize, lambda_c: f64) -> EnvConfig {
    let mut env = EnvConfig {
        t_max,
        side,
        ..EnvConfig::default()
    };
    env.penalties.lambda_c = lambda_c;
    env.penalties.lambda_e = 0.0;
    env
}

fn stage_table(report: &EvalReport) -> String {
    let mut s = String::from("stage,mean_D,marginal_improvement,cumulative_improvement\n");
    for r in &report.stages {
        let _ = writeln!(s, "{},{},{},{}", r.stage, r.mean_d, r.marginal_improvement, r.cumulative_improvement);
    }
    s
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let images = load_images(&a.data)?;
    let agent = checkpoint::load(&a.ckpt)?;
    let scorer = make_scorer(&a.scorer)?;
    let env = eval_env(agent.arch.side, a.t_max, a.lambda_c);
    env.validate()?;
    let report = evaluate(&images, &agent, scorer.as_ref(), &env)?;
    println!(
        "images {} mean D {} -> {} mean len {} mean cost {} ms",
        report.images, report.mean_initial_d, report.mean_final_d, report.mean_len, report.mean_cost_ms
    );
    let freq: Vec<String> = ModuleKind::ALL
        .iter()
        .zip(report.frequencies)
        .map(|(k, f)| format!("{}={f}", k.short()))
        .collect();
    println!("frequencies {}", freq.join(" "));
    print!("{}", stage_table(&report));
    if let Some(p) = &a.report {
        write_text(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let img = read_pfm(&a.input)?;
    let mut space = SearchSpace::new(parse_pool(&a.pool)?, a.max_stages, a.grid);
    space.allow_reuse = a.allow_reuse;
    space.validate()?;
    let best = oracle_best(&img, &space, &ProxyScorer::default())?;
    let cfg = PipelineConfig::new(best.pipeline);
    println!("{}", cfg.to_json());
    println!("D {}", best.value);
    println!("evaluated {}", best.evaluated);
    if let Some(p) = &a.out {
        cfg.write(p)?;
    }
    Ok(())
}

fn format_report(r: &GradCheckReport) -> String {
    let params: Vec<String> = r.param_errors.iter().map(|e| format!("{e:.3e}")).collect();
    format!(
        "{:<14} {:<4} params [{}] image {:.3e} max {:.3e}",
        r.target,
        if r.passed() { "PASS" } else { "FAIL" },
        params.join(", "),
        r.image_error,
        r.max_error()
    )
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.points == 0 {
        return Err(user("--points must be >= 1"));
    }
    let cfg = GradCheckConfig {
        points: a.points,
        seed: a.seed,
        corrupt: a.corrupt_vjp,
        ..GradCheckConfig::default()
    };
    let kinds = match &a.module {
        Some(m) => vec![m.parse::<ModuleKind>()?],
        None => ModuleKind::ALL.to_vec(),
    };
    let mut reports: Vec<GradCheckReport> = kinds.iter().map(|&k| check_module(k, &cfg)).collect();
    reports.push(check_proxy(&ProxyTargets::default(), &cfg));
    for r in &reports {
        println!("{}", format_report(r));
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.target.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed (tolerance {:e})", reports.len(), cfg.tolerance);
        Ok(())
    } else {
        Err(user(format!("gradient check failed for {}", failed.join(", "))))
    }
}

/// Columns: lambda_c, mean_final_D, mean_cost_ms, one frequency per kind.
pub fn tradeoff_header() -> String {
    let mut cols = vec!["lambda_c".to_owned(), "mean_final_D".into(), "mean_cost_ms".into()];
    cols.extend(ModuleKind::ALL.iter().map(|k| format!("freq_{}", k.name())));
    cols.join(",")
}

fn cmd_tradeoff(a: TradeoffArgs) -> Result<()> {
    if a.ckpts.len() != a.lambdas.len() {
        return Err(user(format!(
            "{} checkpoints but {} lambda values; the lists must pair up",
            a.ckpts.len(),
            a.lambdas.len()
        )));
    }
    let images = load_images(&a.data)?;
    let scorer = make_scorer(&a.scorer)?;
    let mut csv = tradeoff_header() + "\n";
    for (ckpt, &lambda) in a.ckpts.iter().zip(&a.lambdas) {
        let agent = checkpoint::load(ckpt)?;
        let env = eval_env(agent.arch.side, a.t_max, lambda);
        env.validate()?;
        let r = evaluate(&images, &agent, scorer.as_ref(), &env)?;
        let mut row = vec![lambda.to_string(), r.mean_final_d.to_string(), r.mean_cost_ms.to_string()];
        row.extend(r.frequencies.iter().map(f64::to_string));
        csv += &row.join(",");
        csv.push('\n');
    }
    match &a.out {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let family: Family = a.family.parse()?;
    if a.count == 0 {
        return Err(user("--count must be >= 1"));
    }
    if let Some(n) = a.generate_base {
        write_base_scenes(&a.base, n, a.side, a.seed)?;
    }
    let rows = make_dataset(&a.base, &a.out, family, a.count, a.seed)?;
    println!("wrote {} {} images to {}", rows.len(), family.name(), a.out.display());
    Ok(())
}
