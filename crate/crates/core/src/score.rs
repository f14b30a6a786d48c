//! Task error `D` and its image gradient.
//!
//! [`ProxyScorer`] is a built-in statistics-matching stand-in for a frozen
//! detector. [`ExternalScorer`] runs any program that speaks the PFM/SCORE
//! protocol, so a real detector can be attached without linking it.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ScorerError};
use crate::image::{laplacian, laplacian_transpose, GradImage, Image, LUMA};
use crate::io::{decode_pfm, write_pfm};

/// Median edge energy of the linearized clean corpus produced by
/// [`crate::synth::generate_base_scenes`] (64×64, seed 0, 64 scenes).
pub const DEFAULT_EDGE_TARGET: f64 = 0.0234;

/// A task error value with its gradient w.r.t. the scored image.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskScore {
    pub value: f64,
    pub grad_image: GradImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyTargets {
    pub target_luminance: f64,
    pub target_contrast: f64,
    pub target_edge_energy: f64,
    /// Weights of the luminance, contrast, colour-cast and edge terms.
    pub weights: [f64; 4],
}

impl Default for ProxyTargets {
    fn default() -> Self {
        ProxyTargets {
            target_luminance: 0.45,
            target_contrast: 0.18,
            target_edge_energy: DEFAULT_EDGE_TARGET,
            weights: [1.0, 1.0, 0.5, 2.0],
        }
    }
}

impl ProxyTargets {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("proxy weights must be finite and >= 0".into()));
        }
        if !self.weights.iter().any(|w| *w > 0.0) {
            return Err(Error::Config("at least one proxy weight must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted terms of the proxy error; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyTerms {
    pub luminance: f64,
    pub contrast: f64,
    pub cast: f64,
    pub edge: f64,
}

impl ProxyTerms {
    pub fn total(&self) -> f64 {
        self.luminance + self.contrast + self.cast + self.edge
    }
}

/// Evaluates the proxy on a 64-bit buffer. Returns the weighted terms and
/// the gradient of their sum w.r.t. every sample.
pub fn proxy_eval(x: &[f64], h: usize, w: usize, t: &ProxyTargets) -> (ProxyTerms, Vec<f64>) {
    let n = (h * w) as f64;
    let [w_lum, w_con, w_cast, w_edge] = t.weights;

    let lum: Vec<f64> = x
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .collect();
    let mean = lum.iter().sum::<f64>() / n;
    let var = lum.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    let std = var.max(0.0).sqrt();
    let mut ch = [0.0f64; 3];
    for p in x.chunks_exact(3) {
        for c in 0..3 {
            ch[c] += p[c];
        }
    }
    let ch = ch.map(|v| v / n);
    let lap = laplacian(&lum, h, w);
    let edge = lap.iter().map(|v| v * v).sum::<f64>() / n;

    let d_lum = mean - t.target_luminance;
    let d_con = std - t.target_contrast;
    let (rg, bg) = (ch[0] - ch[1], ch[2] - ch[1]);
    let d_edge = edge - t.target_edge_energy;
    let terms = ProxyTerms {
        luminance: w_lum * d_lum * d_lum,
        contrast: w_con * d_con * d_con,
        cast: w_cast * (rg * rg + bg * bg),
        edge: w_edge * d_edge * d_edge,
    };

    // Gradient w.r.t. the luminance plane.
    let g_mean = 2.0 * w_lum * d_lum / n;
    let g_std = 2.0 * w_con * d_con;
    let lap_t = laplacian_transpose(&lap, h, w);
    let g_edge = 2.0 * w_edge * d_edge * 2.0 / n;
    // Cast term is linear in the channel means.
    let g_ch = [
        2.0 * w_cast * rg / n,
        -2.0 * w_cast * (rg + bg) / n,
        2.0 * w_cast * bg / n,
    ];
    let mut grad = vec![0.0; x.len()];
    for (i, l) in lum.iter().enumerate() {
        let mut g_l = g_mean + g_edge * lap_t[i];
        if std > 0.0 {
            g_l += g_std * (l - mean) / (n * std);
        }
        for c in 0..3 {
            grad[i * 3 + c] = g_l * LUMA[c] + g_ch[c];
        }
    }
    (terms, grad)
}

pub fn proxy_terms(img: &Image, targets: &ProxyTargets) -> ProxyTerms {
    proxy_eval(&img.to_f64(), img.height(), img.width(), targets).0
}

/// The proxy task error and its analytic image gradient.
pub fn proxy_score(img: &Image, targets: &ProxyTargets) -> TaskScore {
    let (terms, grad) = proxy_eval(&img.to_f64(), img.height(), img.width(), targets);
    TaskScore {
        value: terms.total(),
        grad_image: GradImage {
            height: img.height(),
            width: img.width(),
            data: grad,
        },
    }
}

/// Anything that can score an image. Implementations must be reentrant.
pub trait Scorer: Send + Sync {
    fn score(&self, img: &Image) -> Result<TaskScore>;

    /// Value only; scorers may override when the gradient is expensive.
    fn value(&self, img: &Image) -> Result<f64> {
        Ok(self.score(img)?.value)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProxyScorer {
    pub targets: ProxyTargets,
}

impl ProxyScorer {
    pub fn new(targets: ProxyTargets) -> Result<Self> {
        targets.validate()?;
        Ok(ProxyScorer { targets })
    }
}

impl Scorer for ProxyScorer {
    fn score(&self, img: &Image) -> Result<TaskScore> {
        Ok(proxy_score(img, &self.targets))
    }

    fn value(&self, img: &Image) -> Result<f64> {
        Ok(proxy_terms(img, &self.targets).total())
    }
}

pub const DEFAULT_SCORER_TIMEOUT: Duration = Duration::from_secs(30);

/// Scores by running `<program> [args..] <in.pfm> <grad_out.pfm>`.
///
/// The child must print a line `SCORE <decimal>` on stdout and write the
/// gradient of the score as a PFM with the input's dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScorer {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ExternalScorer {
    /// Splits a command line on whitespace.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty scorer command".into()))?;
        Ok(ExternalScorer {
            program,
            args: parts.collect(),
            timeout: DEFAULT_SCORER_TIMEOUT,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn command_string(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn run(&self, img: &Image, dir: &Path) -> Result<TaskScore, ScorerError> {
        let input = dir.join("in.pfm");
        let grad_out = dir.join("grad_out.pfm");
        write_pfm(&input, img).map_err(|e| ScorerError::Io(std::io::Error::other(e.to_string())))?;

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&grad_out)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| ScorerError::Spawn {
                command: self.command_string(),
                source,
            })?;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });

        let start = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if start.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ScorerError::Timeout(self.timeout.as_secs_f64()));
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(ScorerError::NonZeroExit {
                code: status.code(),
                stderr: stderr.trim().to_owned(),
            });
        }

        let value = parse_score(&stdout)?;
        let bytes = std::fs::read(&grad_out)
            .map_err(|e| ScorerError::BadGradient(format!("{}: {e}", grad_out.display())))?;
        let grad = decode_pfm(&bytes).map_err(|e| ScorerError::BadGradient(e.to_string()))?;
        if !grad.same_shape(img) {
            return Err(ScorerError::DimensionMismatch {
                want_w: img.width(),
                want_h: img.height(),
                got_w: grad.width(),
                got_h: grad.height(),
            });
        }
        Ok(TaskScore {
            value,
            grad_image: GradImage {
                height: img.height(),
                width: img.width(),
                data: grad.to_f64(),
            },
        })
    }
}

/// Finds the first `SCORE <decimal>` line.
fn parse_score(stdout: &str) -> Result<f64, ScorerError> {
    let line = stdout
        .lines()
        .map(str::trim)
        .find(|l| l.split_whitespace().next() == Some("SCORE"))
        .ok_or(ScorerError::MissingScore)?;
    let mut parts = line.split_whitespace().skip(1);
    match (parts.next().map(str::parse::<f64>), parts.next()) {
        (Some(Ok(v)), None) if v.is_finite() => Ok(v),
        _ => Err(ScorerError::MalformedScore {
            line: line.to_owned(),
        }),
    }
}

impl Scorer for ExternalScorer {
    fn score(&self, img: &Image) -> Result<TaskScore> {
        let dir = tempfile::Builder::new()
            .prefix("ispsearch-score-")
            .tempdir()
            .map_err(ScorerError::Io)?;
        match self.run(img, dir.path()) {
            Ok(score) => Ok(score),
            Err(e) => {
                let kept = dir.keep();
                log::warn!("scorer failed ({}); inputs kept in {}", e.class(), kept.display());
                Err(e.into())
            }
        }
    }
}

/// One-step reward: improvement in task error minus penalties.
pub fn reward_for_transition(d_prev: f64, d_next: f64, penalties: f64) -> f64 {
    d_prev - d_next - penalties
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::compute_stats;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn edge_target_is_corpus_median() {
        let mut e: Vec<f64> = crate::synth::generate_base_scenes(64, 64, 0)
            .iter()
            .map(|b| compute_stats(&crate::synth::linearize(b)).edge_energy)
            .collect();
        e.sort_by(f64::total_cmp);
        let median = (e[31] + e[32]) / 2.0;
        assert!((median - DEFAULT_EDGE_TARGET).abs() < 1e-4, "{median}");
    }

    #[test]
    fn exact_match_scores_zero() {
        let img = Image::filled(8, 8, 0.45);
        let t = ProxyTargets {
            target_luminance: 0.45,
            target_contrast: 0.0,
            target_edge_energy: 0.0,
            ..ProxyTargets::default()
        };
        let s = proxy_score(&img, &t);
        assert!(s.value.abs() < 1e-12);
        assert!(s.grad_image.data.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn black_image_luminance_term() {
        let t = ProxyTargets::default();
        let terms = proxy_terms(&Image::filled(6, 6, 0.0), &t);
        assert!((terms.luminance - 0.2025).abs() < 1e-12);
        assert_eq!(terms.cast, 0.0);
    }

    #[test]
    fn terms_follow_definitions() {
        let img = random_image(10, 12, 4);
        let t = ProxyTargets::default();
        let terms = proxy_terms(&img, &t);
        let s = compute_stats(&img);
        let m = img.channel_means();
        assert!((terms.luminance - (s.mean_luminance - 0.45).powi(2)).abs() < 1e-12);
        assert!((terms.contrast - (s.contrast - 0.18).powi(2)).abs() < 1e-12);
        let cast = 0.5 * ((m[0] - m[1]).powi(2) + (m[2] - m[1]).powi(2));
        assert!((terms.cast - cast).abs() < 1e-12);
        let edge = 2.0 * (s.edge_energy - t.target_edge_energy).powi(2);
        assert!((terms.edge - edge).abs() < 1e-12);
        assert!(terms.total() >= 0.0);
    }

    #[test]
    fn luminance_and_cast_terms_ignore_pixel_order() {
        let img = random_image(9, 9, 8);
        let mut pixels: Vec<[f32; 3]> = img.data().chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
        pixels.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let shuffled = Image::new(9, 9, pixels.concat()).unwrap();
        let t = ProxyTargets::default();
        let (a, b) = (proxy_terms(&img, &t), proxy_terms(&shuffled, &t));
        assert!((a.luminance - b.luminance).abs() < 1e-12);
        assert!((a.cast - b.cast).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (h, w) = (7, 6);
        let img = random_image(h, w, 21);
        let x = img.to_f64();
        let t = ProxyTargets::default();
        let (_, grad) = proxy_eval(&x, h, w, &t);
        let step = 1e-3;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            let fd = (proxy_eval(&xp, h, w, &t).0.total() - proxy_eval(&xm, h, w, &t).0.total()) / (2.0 * step);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(rel <= 1e-3, "sample {i}: fd {fd} analytic {}", grad[i]);
        }
    }

    #[test]
    fn reward_arithmetic() {
        assert!((reward_for_transition(0.8, 0.5, 0.0) - 0.3).abs() < 1e-12);
        assert!((reward_for_transition(0.5, 0.5, 0.1) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn rewards_telescope() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        let sum: f64 = ds.windows(2).map(|w| reward_for_transition(w[0], w[1], 0.0)).sum();
        assert!((sum - (ds[0] - ds[5])).abs() < 1e-12);
    }

    #[test]
    fn score_line_parsing() {
        assert_eq!(parse_score("noise\nSCORE 0.5\n").unwrap(), 0.5);
        assert!(matches!(parse_score("SCORE abc"), Err(ScorerError::MalformedScore { .. })));
        assert!(matches!(parse_score("SCORE 1 2"), Err(ScorerError::MalformedScore { .. })));
        assert!(matches!(parse_score("nothing"), Err(ScorerError::MissingScore)));
    }
}
