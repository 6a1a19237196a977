//! Paired desk-scale data: brain-like phantoms and image-domain artifacts
//! (cupping, rings, low-order inhomogeneity, motion ghosting, noise).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::volume::{window_slice, WindowSpec};

pub const AIR_HU: f32 = -1000.0;
pub const MIN_PHANTOM_SIDE: usize = 16;
pub const MAX_GHOST_WEIGHT: f64 = 0.5;
pub const MAX_INHOMOGENEITY_MODES: usize = 3;

/// Mean and spread of a tissue class; the spread applies to the per-phantom mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueBand {
    pub mean_hu: f64,
    pub std_hu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueParams {
    pub background_hu: f64,
    pub gray: TissueBand,
    pub white: TissueBand,
    pub lesion_min_hu: f64,
    pub lesion_max_hu: f64,
    pub lesion_probability: f64,
}

impl Default for TissueParams {
    fn default() -> Self {
        TissueParams {
            background_hu: AIR_HU as f64,
            gray: TissueBand { mean_hu: 38.0, std_hu: 2.0 },
            white: TissueBand { mean_hu: 30.0, std_hu: 2.0 },
            lesion_min_hu: 65.0,
            lesion_max_hu: 80.0,
            lesion_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub clean: Array2<f32>,
    pub lesion_mask: Array2<bool>,
    /// Points inside the brain ellipse.
    pub brain_mask: Array2<bool>,
    pub seed: u64,
    pub tissue: TissueParams,
    /// Per-phantom draws of the gray and white means.
    pub gray_hu: f64,
    pub white_hu: f64,
    pub lesion_hu: Option<f64>,
}

impl Phantom {
    pub fn has_lesion(&self) -> bool {
        self.lesion_hu.is_some()
    }
}

/// Deterministic elliptical brain phantom with an optional hyperdense lesion.
pub fn make_phantom(seed: u64, side: usize) -> Result<Phantom> {
    make_phantom_with(seed, side, &TissueParams::default())
}

pub fn make_phantom_with(seed: u64, side: usize, tissue: &TissueParams) -> Result<Phantom> {
    if side < MIN_PHANTOM_SIDE {
        return Err(Error::validation(format!(
            "phantom side {side} below minimum {MIN_PHANTOM_SIDE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = side as f64;
    let cx = s / 2.0 + rng.random_range(-0.04..0.04) * s;
    let cy = s / 2.0 + rng.random_range(-0.04..0.04) * s;
    let ax = rng.random_range(0.32..0.42) * s;
    let ay = rng.random_range(0.30..0.40) * s;
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (sin, cos) = theta.sin_cos();
    let gray = draw_band(&mut rng, tissue.gray);
    let white = draw_band(&mut rng, tissue.white);
    // Deep gray nucleus, offset from the center along the minor axis.
    let nucleus_r = rng.random_range(0.18..0.28);
    let nucleus_off = rng.random_range(-0.25..0.25);
    let cortex = rng.random_range(0.72..0.82);

    // Normalized elliptical radius and rotated coordinates of a pixel center.
    let rho = |y: usize, x: usize| -> (f64, f64, f64) {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        let u = (cos * dx + sin * dy) / ax;
        let v = (-sin * dx + cos * dy) / ay;
        ((u * u + v * v).sqrt(), u, v)
    };

    let mut clean = Array2::from_elem((side, side), tissue.background_hu as f32);
    let mut brain = Array2::from_elem((side, side), false);
    for ((y, x), px) in clean.indexed_iter_mut() {
        let (r, u, v) = rho(y, x);
        if r > 1.0 {
            continue;
        }
        brain[[y, x]] = true;
        let dn = ((u - nucleus_off).powi(2) + v * v).sqrt();
        *px = if r > cortex || dn < nucleus_r { gray } else { white } as f32;
    }

    let mut lesion_mask = Array2::from_elem((side, side), false);
    let mut lesion_hu = None;
    if rng.random_bool(tissue.lesion_probability.clamp(0.0, 1.0)) {
        let hu = rng.random_range(tissue.lesion_min_hu..=tissue.lesion_max_hu);
        let radius = rng.random_range(0.06..0.11) * s;
        // Keep the disk well inside the ellipse.
        let reach = 0.85 - radius / ax.min(ay);
        let (lr, la) = (rng.random_range(0.0..reach.max(0.0)), rng.random_range(0.0..std::f64::consts::TAU));
        let (lu, lv) = (lr * la.cos() * ax, lr * la.sin() * ay);
        let lx = cx + cos * lu - sin * lv;
        let ly = cy + sin * lu + cos * lv;
        for ((y, x), m) in lesion_mask.indexed_iter_mut() {
            let d = ((x as f64 + 0.5 - lx).powi(2) + (y as f64 + 0.5 - ly).powi(2)).sqrt();
            if d <= radius && brain[[y, x]] {
                *m = true;
                clean[[y, x]] = hu as f32;
            }
        }
        if lesion_mask.iter().any(|&m| m) {
            lesion_hu = Some(hu);
        }
    }

    Ok(Phantom {
        clean,
        lesion_mask,
        brain_mask: brain,
        seed,
        tissue: *tissue,
        gray_hu: gray,
        white_hu: white,
        lesion_hu,
    })
}

fn draw_band(rng: &mut ChaCha8Rng, band: TissueBand) -> f64 {
    if band.std_hu > 0.0 {
        Normal::new(band.mean_hu, band.std_hu)
            .map(|n| n.sample(rng))
            .unwrap_or(band.mean_hu)
    } else {
        band.mean_hu
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub amplitude_hu: f64,
    pub radius_px: f64,
    pub width_px: f64,
}

/// One separable cosine mode `a·cos(π·kx·x/(side−1))·cos(π·ky·y/(side−1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineMode {
    pub amplitude_hu: f64,
    pub kx: u32,
    pub ky: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Motion {
    pub shift_px: f64,
    /// Direction of the shift in radians.
    pub angle: f64,
    pub ghost_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArtifactRecipe {
    pub rings: Vec<Ring>,
    pub cupping_hu: f64,
    pub inhomogeneity: Vec<CosineMode>,
    pub motion: Motion,
    pub noise_sigma_hu: f64,
}

impl ArtifactRecipe {
    pub fn validate(&self) -> Result<()> {
        let mags = self
            .rings
            .iter()
            .flat_map(|r| [r.amplitude_hu, r.radius_px, r.width_px])
            .chain(self.inhomogeneity.iter().map(|m| m.amplitude_hu))
            .chain([self.cupping_hu, self.motion.shift_px, self.motion.ghost_weight, self.noise_sigma_hu]);
        for m in mags {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::validation(format!("recipe magnitude {m} must be finite and >= 0")));
            }
        }
        if self.rings.iter().any(|r| r.width_px == 0.0 && r.amplitude_hu > 0.0) {
            return Err(Error::validation("ring width must be positive"));
        }
        if self.motion.ghost_weight > MAX_GHOST_WEIGHT {
            return Err(Error::validation(format!(
                "ghost weight {} exceeds {MAX_GHOST_WEIGHT}",
                self.motion.ghost_weight
            )));
        }
        if self.inhomogeneity.len() > MAX_INHOMOGENEITY_MODES {
            return Err(Error::validation(format!(
                "at most {MAX_INHOMOGENEITY_MODES} inhomogeneity modes"
            )));
        }
        Ok(())
    }

    /// Multiply every magnitude by `factor`; the ghost weight saturates at its bound.
    pub fn scaled(&self, factor: f64) -> ArtifactRecipe {
        ArtifactRecipe {
            rings: self
                .rings
                .iter()
                .map(|r| Ring { amplitude_hu: r.amplitude_hu * factor, ..*r })
                .collect(),
            cupping_hu: self.cupping_hu * factor,
            inhomogeneity: self
                .inhomogeneity
                .iter()
                .map(|m| CosineMode { amplitude_hu: m.amplitude_hu * factor, ..*m })
                .collect(),
            motion: Motion {
                shift_px: self.motion.shift_px * factor,
                ghost_weight: (self.motion.ghost_weight * factor).min(MAX_GHOST_WEIGHT),
                ..self.motion
            },
            noise_sigma_hu: self.noise_sigma_hu * factor,
        }
    }
}

/// Apply cupping, rings, inhomogeneity, ghosting and noise in that order.
/// Stages with zero magnitude are skipped, so an all-zero recipe is the identity.
pub fn inject_artifacts(clean: &Array2<f32>, recipe: &ArtifactRecipe, seed: u64) -> Result<Array2<f32>> {
    recipe.validate()?;
    let (h, w) = clean.dim();
    let mut img = clean.mapv(f64::from);
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let radius = |y: usize, x: usize| ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();

    if recipe.cupping_hu > 0.0 {
        let big_r = (cy * cy + cx * cx).sqrt();
        for ((y, x), v) in img.indexed_iter_mut() {
            *v -= recipe.cupping_hu * (radius(y, x) / big_r).powi(2);
        }
    }

    for ring in recipe.rings.iter().filter(|r| r.amplitude_hu > 0.0) {
        for ((y, x), v) in img.indexed_iter_mut() {
            let d = radius(y, x) - ring.radius_px;
            *v += ring.amplitude_hu * (-d * d / (2.0 * ring.width_px * ring.width_px)).exp();
        }
    }

    for mode in recipe.inhomogeneity.iter().filter(|m| m.amplitude_hu > 0.0) {
        let fy = std::f64::consts::PI * mode.ky as f64 / (h.max(2) - 1) as f64;
        let fx = std::f64::consts::PI * mode.kx as f64 / (w.max(2) - 1) as f64;
        for ((y, x), v) in img.indexed_iter_mut() {
            *v += mode.amplitude_hu * (fy * y as f64).cos() * (fx * x as f64).cos();
        }
    }

    let g = recipe.motion.ghost_weight;
    if g > 0.0 {
        let (dy, dx) = (
            recipe.motion.shift_px * recipe.motion.angle.sin(),
            recipe.motion.shift_px * recipe.motion.angle.cos(),
        );
        let shifted = shift_bilinear(&img, dy, dx);
        img.zip_mut_with(&shifted, |v, &s| *v = (1.0 - g) * *v + g * s);
    }

    if recipe.noise_sigma_hu > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, recipe.noise_sigma_hu).map_err(|e| Error::validation(e.to_string()))?;
        for v in img.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }

    Ok(img.mapv(|v| v as f32))
}

/// `out(y, x) = img(y − dy, x − dx)` with bilinear interpolation and edge replication.
fn shift_bilinear(img: &Array2<f64>, dy: f64, dx: f64) -> Array2<f64> {
    let (h, w) = img.dim();
    let at = |y: isize, x: isize| img[[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]];
    Array2::from_shape_fn((h, w), |(y, x)| {
        let sy = y as f64 - dy;
        let sx = x as f64 - dx;
        let (y0, x0) = (sy.floor(), sx.floor());
        let (fy, fx) = (sy - y0, sx - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
        let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Ranges from which per-case recipes are drawn. Lengths are fractions of the side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeDistribution {
    pub max_rings: usize,
    pub ring_amplitude_hu: (f64, f64),
    pub ring_width_px: (f64, f64),
    pub cupping_hu: (f64, f64),
    pub inhomogeneity_modes: usize,
    pub inhomogeneity_hu: (f64, f64),
    pub motion_shift_frac: (f64, f64),
    pub ghost_weight: (f64, f64),
    pub noise_sigma_hu: (f64, f64),
}

impl Default for RecipeDistribution {
    fn default() -> Self {
        RecipeDistribution {
            max_rings: 3,
            ring_amplitude_hu: (5.0, 15.0),
            ring_width_px: (0.5, 1.5),
            cupping_hu: (10.0, 40.0),
            inhomogeneity_modes: 2,
            inhomogeneity_hu: (0.0, 10.0),
            motion_shift_frac: (0.0, 0.06),
            ghost_weight: (0.0, 0.25),
            noise_sigma_hu: (2.0, 6.0),
        }
    }
}

impl RecipeDistribution {
    /// Distribution producing only all-zero recipes.
    pub fn zero() -> Self {
        RecipeDistribution {
            max_rings: 0,
            ring_amplitude_hu: (0.0, 0.0),
            ring_width_px: (1.0, 1.0),
            cupping_hu: (0.0, 0.0),
            inhomogeneity_modes: 0,
            inhomogeneity_hu: (0.0, 0.0),
            motion_shift_frac: (0.0, 0.0),
            ghost_weight: (0.0, 0.0),
            noise_sigma_hu: (0.0, 0.0),
        }
    }

    pub fn draw(&self, rng: &mut impl Rng, side: usize) -> ArtifactRecipe {
        let s = side as f64;
        let mut uni = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let n_rings = if self.max_rings > 0 { uni((0.0, self.max_rings as f64 + 1.0)) as usize } else { 0 };
        let rings = (0..n_rings)
            .map(|_| Ring {
                amplitude_hu: uni(self.ring_amplitude_hu),
                radius_px: uni((0.05 * s, 0.45 * s)),
                width_px: uni(self.ring_width_px),
            })
            .collect();
        let cupping_hu = uni(self.cupping_hu);
        let modes = self.inhomogeneity_modes.min(MAX_INHOMOGENEITY_MODES);
        let inhomogeneity = (0..modes)
            .map(|_| CosineMode {
                amplitude_hu: uni(self.inhomogeneity_hu),
                kx: uni((0.0, 3.0)) as u32,
                ky: uni((1.0, 3.0)) as u32,
            })
            .collect();
        let motion = Motion {
            shift_px: uni(self.motion_shift_frac) * s,
            angle: uni((0.0, std::f64::consts::TAU)),
            ghost_weight: uni(self.ghost_weight).min(MAX_GHOST_WEIGHT),
        };
        let noise_sigma_hu = uni(self.noise_sigma_hu);
        ArtifactRecipe { rings, cupping_hu, inhomogeneity, motion, noise_sigma_hu }
    }
}

/// Windowed training pair: FDCT-like condition and MDCT-like target, both in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub condition: Array2<f32>,
    pub target: Array2<f32>,
    pub lesion_mask: Array2<bool>,
    pub case_id: String,
}

/// Everything generated for one case before windowing.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCase {
    pub case_id: String,
    pub seed: u64,
    pub phantom: Phantom,
    pub recipe: ArtifactRecipe,
    pub corrupted: Array2<f32>,
}

impl SimulatedCase {
    pub fn to_paired(&self, w: &WindowSpec) -> Result<PairedSample> {
        Ok(PairedSample {
            condition: window_slice(self.corrupted.view(), w)?,
            target: window_slice(self.phantom.clean.view(), w)?,
            lesion_mask: self.phantom.lesion_mask.clone(),
            case_id: self.case_id.clone(),
        })
    }
}

pub fn case_id(index: usize) -> String {
    format!("case-{index:05}")
}

/// Generate case `index` of a dataset; independent of the other cases.
pub fn simulate_case(index: usize, side: usize, seed: u64, dist: &RecipeDistribution) -> Result<SimulatedCase> {
    let case_seed = derive_seed(seed, index as u64);
    let phantom = make_phantom(derive_seed(case_seed, 0), side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(case_seed, 1));
    let recipe = dist.draw(&mut rng, side);
    let corrupted = inject_artifacts(&phantom.clean, &recipe, derive_seed(case_seed, 2))?;
    Ok(SimulatedCase {
        case_id: case_id(index),
        seed: case_seed,
        phantom,
        recipe,
        corrupted,
    })
}

pub fn simulate_cases(n: usize, side: usize, seed: u64, dist: &RecipeDistribution) -> Result<Vec<SimulatedCase>> {
    if n == 0 {
        return Err(Error::validation("dataset size must be at least 1"));
    }
    (0..n).map(|i| simulate_case(i, side, seed, dist)).collect()
}

/// `n` windowed pairs with independently drawn recipes.
pub fn make_paired_dataset(n: usize, side: usize, seed: u64, dist: &RecipeDistribution) -> Result<Vec<PairedSample>> {
    let w = WindowSpec::default();
    simulate_cases(n, side, seed, dist)?.iter().map(|c| c.to_paired(&w)).collect()
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub case_id: String,
    pub seed: u64,
    pub split: String,
    pub recipe: ArtifactRecipe,
    pub has_lesion: bool,
    pub condition: String,
    pub target: String,
    pub mask: String,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::validation(format!("manifest line {}: {e}", i + 1)))
        })
        .collect()
}
