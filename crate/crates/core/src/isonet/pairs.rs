use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv;
use crate::error::{Error, Result};
use crate::psf::{self, Kernel2D, Projection, Psf, SplitReport};
use crate::resample::{resample_image, Factor, Method};
use crate::rng::Rng;
use crate::volume::{Axis, Image2D, Plane, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyMode {
    /// h̃ = h_rot.
    Full,
    /// h̃ = h_split with h_rot = h_iso ⊗ h_split.
    Split,
    /// h̃ = δ: pure down/up-sampling.
    Delta,
}

/// The 2D degradation applied to lateral slices to synthesize inputs. The
/// kernel's blur axis is its column axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStrategy {
    pub mode: StrategyMode,
    pub kernel: Kernel2D,
    pub sigma: u32,
    pub split: Option<SplitReport>,
}

impl PsfStrategy {
    /// Derives h̃ from the acquisition PSF `h` (axial direction along z).
    pub fn from_psf(mode: StrategyMode, h: &Psf, sigma: u32, split_eps: f64) -> Result<Self> {
        if sigma == 0 {
            return Err(Error::InvalidParameter(
                "subsample factor must be at least 1".into(),
            ));
        }
        let keep = (Axis::X, Axis::Y);
        let (kernel, split) = match mode {
            StrategyMode::Delta => (Kernel2D::delta(), None),
            StrategyMode::Full => {
                let h_rot = psf::rotate_to_lateral(h);
                (psf::project_to_2d(&h_rot, keep, Projection::Sum)?, None)
            }
            StrategyMode::Split => {
                let h_rot = psf::rotate_to_lateral(h);
                let h_iso = psf::isotropic_average(h)?;
                let (h_split, report) = psf::split(&h_rot, &h_iso, split_eps)?;
                (
                    psf::project_to_2d(&h_split, keep, Projection::Sum)?,
                    Some(report),
                )
            }
        };
        Ok(PsfStrategy {
            mode,
            kernel,
            sigma,
            split,
        })
    }

    pub fn with_kernel(mode: StrategyMode, kernel: Kernel2D, sigma: u32) -> Self {
        PsfStrategy {
            mode,
            kernel,
            sigma,
            split: None,
        }
    }

    /// Synthetic degradation of a whole slice: blur with h̃, keep every σ-th column, bicubic
    /// back to the original width.
    pub fn degrade(&self, slice: &Image2D) -> Result<Image2D> {
        let (w, h) = (slice.width(), slice.height());
        let k = &self.kernel;
        let blurred = if k.is_delta() {
            slice.clone()
        } else {
            Image2D::new(
                w,
                h,
                conv::same_2d(slice.data(), w, h, &k.data, k.width, k.height),
            )
        };
        if self.sigma == 1 {
            return Ok(blurred);
        }
        let down = resample_image(&blurred, 0, Factor::down(self.sigma), Method::Nearest)?;
        let up = resample_image(&down, 0, Factor::up(self.sigma), Method::Bicubic)?;
        Ok(up.crop(0, 0, w, h))
    }
}

/// Dihedral symmetries of a square patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    Identity,
    FlipCols,
    FlipRows,
    Rot180,
    Transpose,
    Rot90,
    Rot270,
    AntiTranspose,
}

impl Symmetry {
    pub const ALL: [Symmetry; 8] = [
        Symmetry::Identity,
        Symmetry::FlipCols,
        Symmetry::FlipRows,
        Symmetry::Rot180,
        Symmetry::Transpose,
        Symmetry::Rot90,
        Symmetry::Rot270,
        Symmetry::AntiTranspose,
    ];

    /// The subgroup that maps the column axis onto itself.
    pub const AXIS_PRESERVING: [Symmetry; 4] = [
        Symmetry::Identity,
        Symmetry::FlipCols,
        Symmetry::FlipRows,
        Symmetry::Rot180,
    ];

    pub fn apply(self, img: &Image2D) -> Image2D {
        match self {
            Symmetry::Identity => img.clone(),
            Symmetry::FlipCols => img.flip_cols(),
            Symmetry::FlipRows => img.flip_rows(),
            Symmetry::Rot180 => img.flip_cols().flip_rows(),
            Symmetry::Transpose => img.transpose(),
            Symmetry::Rot90 => img.transpose().flip_cols(),
            Symmetry::Rot270 => img.transpose().flip_rows(),
            Symmetry::AntiTranspose => img.transpose().flip_cols().flip_rows(),
        }
    }
}

/// Symmetries compatible with the degradation: all eight only when h̃ is
/// isotropic in-plane and no axis is subsampled.
pub fn allowed_symmetries(strategy: &PsfStrategy) -> &'static [Symmetry] {
    if strategy.sigma == 1 && strategy.kernel.is_isotropic_in_plane(1e-9) {
        &Symmetry::ALL
    } else {
        &Symmetry::AXIS_PRESERVING
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub input: Image2D,
    pub target: Image2D,
    /// z index of the lateral slice the patch came from.
    pub slice: usize,
    pub augmentation: Symmetry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<PatchPair>,
    pub patch: usize,
    pub sigma: u32,
    /// Always the column axis of each patch.
    pub blur_axis: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub patch: usize,
    pub n_patches: usize,
    /// Target patches with variance below this fraction of the volume
    /// variance are rejected.
    pub min_var_fraction: f64,
    /// Candidate draws allowed per requested patch.
    pub attempts_per_patch: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            patch: 64,
            n_patches: 2000,
            min_var_fraction: 0.1,
            attempts_per_patch: 100,
        }
    }
}

/// Draws `n_patches` aligned (input, target) crops from degraded and
/// untouched lateral slices of `g`.
pub fn make_training_pairs(
    g: &Volume,
    strategy: &PsfStrategy,
    cfg: &PairConfig,
    seed: u64,
) -> Result<PairSet> {
    let [nx, ny, nz] = g.dims();
    let p = cfg.patch;
    if p == 0 || nx < p || ny < p {
        return Err(Error::Shape(format!(
            "lateral extent {nx}x{ny} is smaller than patch {p}"
        )));
    }
    if cfg.n_patches == 0 {
        return Err(Error::InvalidParameter("n_patches must be positive".into()));
    }
    let slices: Vec<Image2D> = (0..nz)
        .map(|z| g.extract_slice(Plane::XY, z))
        .collect::<Result<_>>()?;
    let degraded: Vec<Image2D> = slices
        .par_iter()
        .map(|s| strategy.degrade(s))
        .collect::<Result<_>>()?;

    let mean = g.mean();
    let var = g
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / g.len() as f64;
    let min_var = (cfg.min_var_fraction * var).max(1e-12);

    let mut rng = Rng::new(seed);
    let mut pairs = Vec::with_capacity(cfg.n_patches);
    let budget = cfg.n_patches.saturating_mul(cfg.attempts_per_patch.max(1));
    for _ in 0..budget {
        if pairs.len() == cfg.n_patches {
            break;
        }
        let z = rng.below(nz);
        let x0 = rng.below(nx - p + 1);
        let y0 = rng.below(ny - p + 1);
        let target = slices[z].crop(x0, y0, p, p);
        let (_, tv) = target.mean_var();
        let peak = target
            .data()
            .iter()
            .cloned()
            .fold(f32::NEG_INFINITY, f32::max);
        if tv < min_var || !(peak > 0.0) {
            continue;
        }
        pairs.push(PatchPair {
            input: degraded[z].crop(x0, y0, p, p),
            target,
            slice: z,
            augmentation: Symmetry::Identity,
        });
    }
    if pairs.len() < cfg.n_patches {
        return Err(Error::DegenerateHistogram(format!(
            "only {} of {} patches passed the variance filter",
            pairs.len(),
            cfg.n_patches
        )));
    }
    Ok(PairSet {
        pairs,
        patch: p,
        sigma: strategy.sigma,
        blur_axis: 0,
    })
}

/// Expands every pair by each symmetry in `symmetries`, transforming input
/// and target together.
pub fn augment(set: &PairSet, symmetries: &[Symmetry]) -> PairSet {
    let pairs = set
        .pairs
        .iter()
        .flat_map(|pp| {
            symmetries.iter().map(move |&s| PatchPair {
                input: s.apply(&pp.input),
                target: s.apply(&pp.target),
                slice: pp.slice,
                augmentation: s,
            })
        })
        .collect();
    PairSet {
        pairs,
        ..set.clone()
    }
}
