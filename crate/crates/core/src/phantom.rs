//! Synthetic ground truth (nuclei, Voronoi membranes, both combined) and
//! the acquisition model g = P[S_σ(h ⊗ f)] + η.

use serde::{Deserialize, Serialize};

use crate::conv;
use crate::error::{Error, Result};
use crate::labels::LabelVolume;
use crate::psf::{Psf, PsfSource};
use crate::resample::{resample_volume, Factor, Method};
use crate::rng::Rng;
use crate::volume::{Axis, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Nuclei,
    Membranes,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    pub n_objects: usize,
    /// Base nucleus radius range in voxels, before axis-ratio scaling.
    pub radius_range: (f64, f64),
    /// Full membrane thickness in voxels.
    pub membrane_thickness: f64,
    /// Per-nucleus intensity is 1 + jitter·U(−1, 1).
    pub intensity_jitter: f64,
    /// Membrane brightness relative to nuclei in combined phantoms.
    pub membrane_intensity: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            kind: PhantomKind::Nuclei,
            dims: [128, 128, 128],
            n_objects: 80,
            radius_range: (4.0, 8.0),
            membrane_thickness: 2.0,
            intensity_jitter: 0.1,
            membrane_intensity: 0.7,
            max_attempts: 1000,
            seed: 0,
        }
    }
}

/// Semi-axes are base radius times a ratio drawn from this range.
pub const AXIS_RATIO: (f64, f64) = (0.7, 1.3);

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("phantom spec: {m}")));
        let (rmin, rmax) = self.radius_range;
        if self.n_objects == 0 {
            return bad("n_objects must be at least 1".into());
        }
        if !(rmin >= 2.0 && rmax >= rmin) {
            return bad(format!(
                "radius range ({rmin}, {rmax}) needs 2 <= min <= max"
            ));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return bad("dims must be positive".into());
        }
        if !(self.membrane_thickness > 0.0) || !(0.0..1.0).contains(&self.intensity_jitter) {
            return bad("membrane_thickness must be positive and jitter in [0, 1)".into());
        }
        if self.kind != PhantomKind::Membranes {
            // E[r³] for r ~ U(rmin, rmax).
            let r3 = if rmax > rmin {
                (rmax.powi(4) - rmin.powi(4)) / (4.0 * (rmax - rmin))
            } else {
                rmin.powi(3)
            };
            let vol: f64 = self.dims.iter().map(|&d| d as f64).product();
            let packing = self.n_objects as f64 * 4.0 / 3.0 * std::f64::consts::PI * r3 / vol;
            if packing >= 0.5 {
                return bad(format!(
                    "expected packing fraction {packing:.2} is not below 0.5"
                ));
            }
        }
        Ok(())
    }
}

/// Generated ground truth plus how many objects could not be placed.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume,
    pub labels: LabelVolume,
    pub placed: usize,
    pub missing: usize,
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    match spec.kind {
        PhantomKind::Nuclei => generate_nuclei(spec),
        PhantomKind::Membranes => generate_membranes(spec),
        PhantomKind::Combined => generate_combined(spec),
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
    intensity: f64,
}

impl Ellipsoid {
    fn bound(&self) -> f64 {
        self.semi.iter().cloned().fold(0.0, f64::max) + EDGE_MARGIN
    }
}

/// Soft-edge margin beyond the surface, in voxels.
const EDGE_MARGIN: f64 = 1.0;
/// Rasterization reaches this far past the surface; erfc(3) < 3e-5.
const RASTER_MARGIN: f64 = 3.0;

/// 0.5·erfc(d) of the approximate signed distance d to the surface,
/// d = |x|(1 − 1/ρ) with ρ the ellipsoidal radius.
fn soft_edge(d: f64) -> f64 {
    0.5 * libm::erfc(d)
}

/// Writes `e` into the volume (maximum with existing signal) and marks
/// voxels with ρ ≤ 1 as `label`.
fn rasterize(e: &Ellipsoid, label: u32, vol: &mut Volume, labels: &mut LabelVolume) {
    let dims = vol.dims();
    let reach = e.semi.iter().cloned().fold(0.0, f64::max) + RASTER_MARGIN;
    let lo = |a: usize| ((e.center[a] - reach).floor().max(0.0)) as usize;
    let hi = |a: usize| ((e.center[a] + reach).ceil().max(0.0) as usize).min(dims[a] - 1);
    for z in lo(2)..=hi(2) {
        for y in lo(1)..=hi(1) {
            for x in lo(0)..=hi(0) {
                let p = [
                    x as f64 - e.center[0],
                    y as f64 - e.center[1],
                    z as f64 - e.center[2],
                ];
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                let rho = ((p[0] / e.semi[0]).powi(2)
                    + (p[1] / e.semi[1]).powi(2)
                    + (p[2] / e.semi[2]).powi(2))
                .sqrt();
                let d = if rho > 0.0 {
                    r * (1.0 - 1.0 / rho)
                } else {
                    -e.semi.iter().cloned().fold(f64::MAX, f64::min)
                };
                let v = (e.intensity * soft_edge(d)) as f32;
                let i = vol.index(x, y, z);
                if v > vol.data()[i] {
                    vol.data_mut()[i] = v;
                }
                if rho <= 1.0 {
                    labels.data_mut()[i] = label;
                }
            }
        }
    }
}

fn draw_semi_axes(rng: &mut Rng, spec: &PhantomSpec) -> [f64; 3] {
    let (rmin, rmax) = spec.radius_range;
    let r = rng.uniform_range(rmin, rmax);
    [0; 3].map(|_| r * rng.uniform_range(AXIS_RATIO.0, AXIS_RATIO.1))
}

fn draw_intensity(rng: &mut Rng, spec: &PhantomSpec) -> f64 {
    1.0 + spec.intensity_jitter * rng.uniform_range(-1.0, 1.0)
}

/// Non-overlapping random ellipsoids placed by rejection sampling on their
/// bounding spheres. Objects lie entirely inside the volume.
pub fn generate_nuclei(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let mut placed: Vec<Ellipsoid> = Vec::with_capacity(spec.n_objects);
    for _ in 0..spec.n_objects {
        for _ in 0..spec.max_attempts {
            let semi = draw_semi_axes(&mut rng, spec);
            let intensity = draw_intensity(&mut rng, spec);
            let mut e = Ellipsoid {
                center: [0.0; 3],
                semi,
                intensity,
            };
            let b = e.bound();
            if spec.dims.iter().any(|&d| (d as f64) < 2.0 * b + 1.0) {
                continue;
            }
            e.center = [0, 1, 2].map(|a| rng.uniform_range(b, spec.dims[a] as f64 - 1.0 - b));
            let clear = placed
                .iter()
                .all(|o| dist(o.center, e.center) >= o.bound() + b);
            if clear {
                placed.push(e);
                break;
            }
        }
    }
    let missing = spec.n_objects - placed.len();
    if missing > 0 {
        log::warn!("placed {} of {} nuclei", placed.len(), spec.n_objects);
    }
    let mut vol = Volume::zeros(spec.dims);
    let mut labels = LabelVolume::zeros(spec.dims);
    for (i, e) in placed.iter().enumerate() {
        rasterize(e, i as u32 + 1, &mut vol, &mut labels);
    }
    Ok(Phantom {
        volume: vol,
        labels: labels.relabel_sequential(),
        placed: placed.len(),
        missing,
    })
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn draw_seeds(rng: &mut Rng, n: usize, dims: [usize; 3]) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [0, 1, 2].map(|a| rng.uniform_range(0.0, dims[a] as f64 - 1.0)))
        .collect()
}

/// Nearest seed and distance to the nearest Voronoi boundary of a point.
/// The boundary between cells a and b lies at (|x−b|² − |x−a|²)/(2|a−b|)
/// from x.
pub fn voronoi_query(p: [f64; 3], seeds: &[[f64; 3]]) -> (usize, f64) {
    let d2 = |s: &[f64; 3]| (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2) + (p[2] - s[2]).powi(2);
    let mut best = 0;
    let mut best_d2 = f64::INFINITY;
    for (i, s) in seeds.iter().enumerate() {
        let d = d2(s);
        if d < best_d2 {
            best = i;
            best_d2 = d;
        }
    }
    let a = seeds[best];
    let mut boundary = f64::INFINITY;
    for (i, b) in seeds.iter().enumerate() {
        if i == best {
            continue;
        }
        let ab = dist(a, *b);
        if ab > 0.0 {
            boundary = boundary.min((d2(b) - best_d2) / (2.0 * ab));
        }
    }
    (best, boundary)
}

struct Tessellation {
    seeds: Vec<[f64; 3]>,
    /// Membrane signal in [0, 1].
    signal: Volume,
    cells: LabelVolume,
}

fn tessellate(spec: &PhantomSpec, rng: &mut Rng) -> Tessellation {
    let seeds = draw_seeds(rng, spec.n_objects, spec.dims);
    let half = spec.membrane_thickness / 2.0;
    let mut signal = Volume::zeros(spec.dims);
    let mut cells = LabelVolume::zeros(spec.dims);
    let [nx, ny, _] = spec.dims;
    let plane = nx * ny;
    use rayon::prelude::*;
    signal
        .data_mut()
        .par_chunks_mut(plane)
        .zip(cells.data_mut().par_chunks_mut(plane))
        .enumerate()
        .for_each(|(z, (sig, lab))| {
            for y in 0..ny {
                for x in 0..nx {
                    let (cell, d) = voronoi_query([x as f64, y as f64, z as f64], &seeds);
                    let i = y * nx + x;
                    lab[i] = cell as u32 + 1;
                    sig[i] = soft_edge(d - half) as f32;
                }
            }
        });
    Tessellation {
        seeds,
        signal,
        cells,
    }
}

/// Voronoi tessellation of `n_objects` uniform seeds; signal marks the
/// band of total width `membrane_thickness` around cell boundaries.
pub fn generate_membranes(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let t = tessellate(spec, &mut rng);
    let labels = t.cells.relabel_sequential();
    let placed = labels.max_label() as usize;
    Ok(Phantom {
        volume: t.signal,
        labels,
        placed,
        missing: spec.n_objects - placed,
    })
}

/// Fraction of voxels within `thickness / 2` of a Voronoi boundary.
pub fn membrane_fraction(seeds: &[[f64; 3]], dims: [usize; 3], thickness: f64) -> f64 {
    let mut n = 0usize;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if voronoi_query([x as f64, y as f64, z as f64], seeds).1 <= thickness / 2.0 {
                    n += 1;
                }
            }
        }
    }
    n as f64 / dims.iter().product::<usize>() as f64
}

/// Membranes at `membrane_intensity` plus one nucleus per cell, centred on
/// the cell seed and shrunk to stay clear of the membrane and the volume
/// border. Labels are the nuclei.
pub fn generate_combined(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let t = tessellate(spec, &mut rng);
    let mut vol = t.signal.map(|v| v * spec.membrane_intensity as f32);
    let mut labels = LabelVolume::zeros(spec.dims);
    let mut placed = 0;
    for (i, &c) in t.seeds.iter().enumerate() {
        let mut semi = draw_semi_axes(&mut rng, spec);
        let intensity = draw_intensity(&mut rng, spec);
        // Inscribed radius of the cell around its seed, minus the membrane
        // band and the soft edge.
        let to_boundary = t
            .seeds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, s)| dist(c, *s) / 2.0)
            .fold(f64::INFINITY, f64::min);
        let to_border = [0, 1, 2]
            .map(|a| c[a].min(spec.dims[a] as f64 - 1.0 - c[a]))
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let limit = to_boundary.min(to_border) - spec.membrane_thickness / 2.0 - EDGE_MARGIN;
        let largest = semi.iter().cloned().fold(0.0, f64::max);
        if largest > limit {
            let s = limit / largest;
            semi = semi.map(|r| r * s);
        }
        if semi.iter().cloned().fold(f64::INFINITY, f64::min) < 1.0 {
            continue;
        }
        placed += 1;
        let e = Ellipsoid {
            center: c,
            semi,
            intensity,
        };
        let mut nucleus = Volume::zeros(spec.dims);
        rasterize(&e, placed as u32, &mut nucleus, &mut labels);
        for (v, n) in vol.data_mut().iter_mut().zip(nucleus.data()) {
            *v += n;
        }
    }
    Ok(Phantom {
        volume: vol,
        labels: labels.relabel_sequential(),
        placed,
        missing: spec.n_objects - placed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSpec {
    pub psf: PsfSource,
    /// Keep every σ-th z-plane.
    pub subsample: u32,
    /// Expected photons at intensity 1; `None` disables shot noise.
    pub photon_scale: Option<f64>,
    #[serde(default)]
    pub detector_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subsample == 0 {
            return Err(Error::InvalidParameter(
                "subsample must be at least 1".into(),
            ));
        }
        if let Some(l) = self.photon_scale {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "photon_scale must be positive, got {l}"
                )));
            }
        }
        if !(self.detector_sigma >= 0.0) {
            return Err(Error::InvalidParameter(
                "detector_sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn check_kernel(f: &Volume, h: &Psf) -> Result<()> {
    for a in 0..3 {
        if h.dims()[a] > f.dims()[a] {
            return Err(Error::KernelTooLarge {
                extent: h.dims()[a],
                max: f.dims()[a],
            });
        }
    }
    Ok(())
}

/// Noiseless h ⊗ f with zero padding; direct summation for small kernels,
/// FFT otherwise.
pub fn blur(f: &Volume, h: &Psf) -> Result<Volume> {
    check_kernel(f, h)?;
    let data = conv::same(f.data(), f.dims(), h.data(), h.dims());
    Volume::new(f.dims(), f.spacing(), data)
}

/// S_σ: keeps z-planes 0, σ, 2σ, ….
pub fn subsample_z(v: &Volume, sigma: u32) -> Result<Volume> {
    if sigma == 1 {
        return Ok(v.clone());
    }
    resample_volume(v, Axis::Z, Factor::down(sigma), Method::Nearest)
}

/// g = N(Poisson(S_σ(h ⊗ f)·λ)/λ, detector_sigma). Negative blurred values
/// (possible only with signed kernels) have zero photon rate.
pub fn acquire(f: &Volume, acq: &AcquisitionSpec) -> Result<Volume> {
    acq.validate()?;
    let h = acq.psf.build()?;
    let clean = subsample_z(&blur(f, &h)?, acq.subsample)?;
    Ok(add_noise(
        &clean,
        acq.photon_scale,
        acq.detector_sigma,
        acq.seed,
    ))
}

pub fn add_noise(
    clean: &Volume,
    photon_scale: Option<f64>,
    detector_sigma: f64,
    seed: u64,
) -> Volume {
    let mut rng = Rng::new(seed);
    let mut g = clean.clone();
    for v in g.data_mut() {
        let mut x = *v as f64;
        if let Some(l) = photon_scale {
            x = rng.poisson(x.max(0.0) * l) / l;
        }
        if detector_sigma > 0.0 {
            x += detector_sigma * rng.normal();
        }
        *v = x as f32;
    }
    g
}

/// Noiseless h_iso ⊗ f at full sampling.
pub fn isotropic_reference(f: &Volume, h_iso: &Psf) -> Result<Volume> {
    blur(f, h_iso)
}
