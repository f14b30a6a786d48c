//! Synthetic degraded scenes: procedural clean bases plus a simple
//! unprocessing model (linearize, exposure drop, colour cast, noise).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{pixel_luminance, Image};
use crate::io::{decode_ppm, read_pfm, write_pfm, DISPLAY_GAMMA};

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LowlightNoisy,
    NormalCast,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::LowlightNoisy, Family::NormalCast];

    pub fn name(self) -> &'static str {
        match self {
            Family::LowlightNoisy => "lowlight_noisy",
            Family::NormalCast => "normal_cast",
        }
    }

    /// Draws a recipe from this family's ranges.
    pub fn sample_recipe(self, rng: &mut impl Rng) -> DegradationRecipe {
        match self {
            Family::LowlightNoisy => DegradationRecipe {
                ev_drop: rng.random_range(-3.0..=-1.5),
                gains: [
                    rng.random_range(0.7..=1.3),
                    1.0,
                    rng.random_range(0.7..=1.3),
                ],
                noise_sigma: rng.random_range(0.03..=0.1),
                shot_scale: rng.random_range(0.0..=0.05),
                seed: rng.random(),
            },
            Family::NormalCast => {
                // One of R/B pushed hard, the other pulled.
                let strong = rng.random_range(1.2..=1.4);
                let weak = rng.random_range(0.6..=0.8);
                let gains = if rng.random::<bool>() {
                    [strong, rng.random_range(0.9..=1.1), weak]
                } else {
                    [weak, rng.random_range(0.9..=1.1), strong]
                };
                DegradationRecipe {
                    ev_drop: rng.random_range(-0.5..=0.0),
                    gains,
                    noise_sigma: rng.random_range(0.0..=0.01),
                    shot_scale: rng.random_range(0.0..=0.002),
                    seed: rng.random(),
                }
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown family {s:?} (lowlight_noisy or normal_cast)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub ev_drop: f64,
    pub gains: [f64; 3],
    /// Read-noise standard deviation.
    pub noise_sigma: f64,
    /// Shot-noise variance per unit of signal.
    pub shot_scale: f64,
    pub seed: u64,
}

impl DegradationRecipe {
    pub fn identity() -> Self {
        DegradationRecipe {
            ev_drop: 0.0,
            gains: [1.0; 3],
            noise_sigma: 0.0,
            shot_scale: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("recipe {what} out of range: {v}")));
        if !(-3.0..=0.0).contains(&self.ev_drop) {
            return bad("ev_drop", self.ev_drop);
        }
        if let Some(g) = self.gains.iter().find(|g| !(0.6..=1.4).contains(*g)) {
            return bad("gain", *g);
        }
        if !(0.0..=0.1).contains(&self.noise_sigma) {
            return bad("noise_sigma", self.noise_sigma);
        }
        if !(0.0..=0.05).contains(&self.shot_scale) {
            return bad("shot_scale", self.shot_scale);
        }
        Ok(())
    }
}

/// Display-referred to linear: `v^2.2`.
pub fn linearize(img: &Image) -> Image {
    let data = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) as f64).powf(DISPLAY_GAMMA) as f32)
        .collect();
    Image::new(img.height(), img.width(), data).expect("same shape")
}

/// Applies a recipe to a clean display-referred image.
pub fn degrade(img: &Image, recipe: &DegradationRecipe) -> Result<Image> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let scale = 2f64.powf(recipe.ev_drop);
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let mut out = [0.0f32; 3];
            for c in 0..3 {
                let lin = (px[c].clamp(0.0, 1.0) as f64).powf(DISPLAY_GAMMA);
                let signal = lin * scale * recipe.gains[c];
                let var = recipe.noise_sigma.powi(2) + recipe.shot_scale * signal;
                let z: f64 = StandardNormal.sample(&mut rng);
                out[c] = (signal + var.sqrt() * z).clamp(0.0, 1.0) as f32;
            }
            out
        })
        .collect();
    Image::new(img.height(), img.width(), data)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// One procedural clean scene: a tinted gradient backdrop, a few flat
/// rectangles and discs, and faint texture. The result is balanced so
/// that its linearized channel means are equal and its linearized mean
/// luminance lies in [0.4, 0.5].
pub fn base_scene(side: usize, rng: &mut impl Rng) -> Image {
    let colour = |rng: &mut dyn rand::RngCore| {
        hsv_to_rgb(rng.random(), rng.random_range(0.0..0.6), rng.random_range(0.3..1.0))
    };
    let top = colour(rng);
    let bottom = colour(rng);
    let n = side as f64;
    let shapes: Vec<(bool, [f64; 4], [f64; 3])> = (0..rng.random_range(3..8))
        .map(|_| {
            let cx = rng.random_range(0.0..n);
            let cy = rng.random_range(0.0..n);
            let a = rng.random_range(0.08..0.3) * n;
            let b = rng.random_range(0.08..0.3) * n;
            (rng.random::<bool>(), [cx, cy, a, b], colour(rng))
        })
        .collect();
    let freq = rng.random_range(0.2..0.8);
    let amp = rng.random_range(0.0..0.04);

    let mut lin = vec![0.0f64; side * side * 3];
    for y in 0..side {
        for x in 0..side {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let t = fy / n;
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = top[k] * (1.0 - t) + bottom[k] * t;
            }
            for (disc, [cx, cy, a, b], col) in &shapes {
                let inside = if *disc {
                    ((fx - cx) / a).powi(2) + ((fy - cy) / b).powi(2) <= 1.0
                } else {
                    (fx - cx).abs() <= *a && (fy - cy).abs() <= *b
                };
                if inside {
                    c = *col;
                }
            }
            let tex = amp * ((fx * freq).sin() * (fy * freq * 0.7).cos());
            for k in 0..3 {
                lin[(y * side + x) * 3 + k] = (c[k] + tex).clamp(0.0, 1.0).powf(DISPLAY_GAMMA);
            }
        }
    }

    // Grey-world balance and luminance normalisation. Clipping at 1 shifts
    // the means, so a few passes are needed.
    let target = rng.random_range(0.4..0.5);
    let pixels = (side * side) as f64;
    for _ in 0..4 {
        let mut means = [0.0; 3];
        for px in lin.chunks_exact(3) {
            for k in 0..3 {
                means[k] += px[k] / pixels;
            }
        }
        let lum = pixel_luminance(means[0], means[1], means[2]);
        let gains = means.map(|m| if m > 1e-6 { lum / m } else { 1.0 });
        let scale = if lum > 1e-6 { target / lum } else { 1.0 };
        for px in lin.chunks_exact_mut(3) {
            for k in 0..3 {
                px[k] = (px[k] * gains[k] * scale).min(1.0);
            }
        }
    }
    let display: Vec<f32> = lin.iter().map(|v| v.powf(1.0 / DISPLAY_GAMMA) as f32).collect();
    Image::new(side, side, display).expect("square scene")
}

pub fn generate_base_scenes(count: usize, side: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| base_scene(side, &mut rng)).collect()
}

/// Writes `base_0000.pfm`, ... into `dir`.
pub fn write_base_scenes(dir: &Path, count: usize, side: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    generate_base_scenes(count, side, seed)
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let path = dir.join(format!("base_{i:04}.pfm"));
            write_pfm(&path, img)?;
            Ok(path)
        })
        .collect()
}

/// Readable base images (`.pfm` or `.ppm`) in `dir`, sorted by file name.
pub fn list_base_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("pfm") || e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no .pfm or .ppm images in {}", dir.display())));
    }
    Ok(paths)
}

/// Loads a base image as display-referred values.
pub fn read_base_image(path: &Path) -> Result<Image> {
    let is_ppm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_ppm(&bytes)
    } else {
        read_pfm(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub filename: String,
    pub family: Family,
    pub ev_drop: f64,
    pub gain_r: f64,
    pub gain_g: f64,
    pub gain_b: f64,
    pub noise_sigma: f64,
    pub shot_scale: f64,
    pub seed: u64,
}

impl ManifestRow {
    pub fn recipe(&self) -> DegradationRecipe {
        DegradationRecipe {
            ev_drop: self.ev_drop,
            gains: [self.gain_r, self.gain_g, self.gain_b],
            noise_sigma: self.noise_sigma,
            shot_scale: self.shot_scale,
            seed: self.seed,
        }
    }
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Generates `count` degraded images of one family into `out_dir`. Image
/// `i` uses the `i mod n`-th base (sorted by name). Returns the manifest.
pub fn make_dataset(base_dir: &Path, out_dir: &Path, family: Family, count: usize, seed: u64) -> Result<Vec<ManifestRow>> {
    let bases = list_base_images(base_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    let mut cache: Vec<Option<Image>> = vec![None; bases.len()];
    for i in 0..count {
        let b = i % bases.len();
        if cache[b].is_none() {
            cache[b] = Some(read_base_image(&bases[b])?);
        }
        let recipe = family.sample_recipe(&mut rng);
        let img = degrade(cache[b].as_ref().expect("loaded"), &recipe)?;
        let filename = format!("{}_{i:04}.pfm", family.name());
        write_pfm(out_dir.join(&filename), &img)?;
        rows.push(ManifestRow {
            filename,
            family,
            ev_drop: recipe.ev_drop,
            gain_r: recipe.gains[0],
            gain_g: recipe.gains[1],
            gain_b: recipe.gains[2],
            noise_sigma: recipe.noise_sigma,
            shot_scale: recipe.shot_scale,
            seed: recipe.seed,
        });
    }
    write_manifest(&out_dir.join(MANIFEST_NAME), &rows)?;
    Ok(rows)
}

/// Rebuilds every image of a manifest; row `i` used base `i mod n`.
pub fn regenerate(base_dir: &Path, rows: &[ManifestRow]) -> Result<Vec<Image>> {
    let bases = list_base_images(base_dir)?
        .iter()
        .map(|p| read_base_image(p))
        .collect::<Result<Vec<_>>>()?;
    rows.iter()
        .enumerate()
        .map(|(i, row)| degrade(&bases[i % bases.len()], &row.recipe()))
        .collect()
}

/// In-memory degraded set: each image paired with its family.
pub fn synthetic_set(bases: &[Image], family: Family, count: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let recipe = family.sample_recipe(&mut rng);
            degrade(&bases[i % bases.len()], &recipe).expect("sampled recipes are valid")
        })
        .collect()
}
