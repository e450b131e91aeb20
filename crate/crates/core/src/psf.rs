//! Point-spread functions: parametric construction, rotation into the
//! lateral plane, isotropic averaging, the split factorization
//! `h_rot = h_iso ⊗ h_split`, and reduction to 2D blur kernels.

use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::conv::{self, fast_len, Grid3};
use crate::error::{Error, Result};
use crate::io;
use crate::volume::{Axis, Volume};

/// Kernels larger than this along any axis are rejected.
pub const DEFAULT_MAX_EXTENT: usize = 257;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsfKind {
    Gaussian,
    ConfocalApprox,
    LightsheetApprox,
    FromFile,
    Delta,
    Rotated,
    IsotropicAverage,
    DerivedSplit,
}

/// A normalized 3D kernel with odd extents, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    dims: [usize; 3],
    data: Vec<f64>,
    spacing: [f32; 3],
    kind: PsfKind,
}

impl Psf {
    /// Wraps raw kernel values, checking odd extents and normalizing to sum 1.
    pub fn from_values(
        dims: [usize; 3],
        data: Vec<f64>,
        spacing: [f32; 3],
        kind: PsfKind,
    ) -> Result<Psf> {
        if dims.iter().any(|&d| d % 2 == 0) {
            return Err(Error::Shape(format!(
                "PSF extents must be odd, got {dims:?}"
            )));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(
                "PSF data length does not match extents".into(),
            ));
        }
        if kind != PsfKind::DerivedSplit && data.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("negative PSF entries".into()));
        }
        let sum: f64 = data.iter().sum();
        if !(sum.abs() > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidParameter(
                "PSF does not have a finite nonzero sum".into(),
            ));
        }
        Ok(Psf {
            dims,
            data: data.into_iter().map(|v| v / sum).collect(),
            spacing,
            kind,
        })
    }

    pub fn delta() -> Psf {
        Psf {
            dims: [1, 1, 1],
            data: vec![1.0],
            spacing: [1.0; 3],
            kind: PsfKind::Delta,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn kind(&self) -> PsfKind {
        self.kind
    }

    pub fn center(&self) -> [usize; 3] {
        self.dims.map(|d| (d - 1) / 2)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[(z * self.dims[1] + y) * self.dims[0] + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// True when any entry is negative (only possible for split kernels).
    pub fn is_signed(&self) -> bool {
        self.data.iter().any(|&v| v < 0.0)
    }

    pub fn l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Intensity-weighted centroid in voxel coordinates.
    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        let mut w = 0.0;
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let v = self.get(x, y, z);
                    c[0] += v * x as f64;
                    c[1] += v * y as f64;
                    c[2] += v * z as f64;
                    w += v;
                }
            }
        }
        c.map(|v| v / w)
    }

    /// Square root of the second central moment per axis, in voxels (the
    /// Gaussian σ for Gaussian kernels). NaN along axes where a signed
    /// kernel has a negative second moment.
    pub fn moment_sigma(&self) -> [f64; 3] {
        let c = self.centroid();
        let mut m = [0.0; 3];
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let v = self.get(x, y, z);
                    m[0] += v * (x as f64 - c[0]).powi(2);
                    m[1] += v * (y as f64 - c[1]).powi(2);
                    m[2] += v * (z as f64 - c[2]).powi(2);
                }
            }
        }
        m.map(f64::sqrt)
    }

    /// Zero-pads symmetrically to `dims` (each ≥ current, same parity).
    pub fn padded(&self, dims: [usize; 3]) -> Psf {
        assert!((0..3).all(|i| dims[i] >= self.dims[i] && dims[i] % 2 == 1));
        let off = [0, 1, 2].map(|i| (dims[i] - self.dims[i]) / 2);
        let mut data = vec![0.0; dims.iter().product()];
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    data[((z + off[2]) * dims[1] + y + off[1]) * dims[0] + x + off[0]] =
                        self.get(x, y, z);
                }
            }
        }
        Psf {
            dims,
            data,
            spacing: self.spacing,
            kind: self.kind,
        }
    }

    /// Centre crop to `dims` (each ≤ current, odd).
    pub fn cropped(&self, dims: [usize; 3]) -> Psf {
        assert!((0..3).all(|i| dims[i] <= self.dims[i] && dims[i] % 2 == 1));
        let off = [0, 1, 2].map(|i| (self.dims[i] - dims[i]) / 2);
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(self.get(x + off[0], y + off[1], z + off[2]));
                }
            }
        }
        Psf {
            dims,
            data,
            spacing: self.spacing,
            kind: self.kind,
        }
    }

    /// Permutes kernel axes: output axis `i` is input axis `perm[i]`.
    pub fn permute_axes(&self, perm: [Axis; 3]) -> Psf {
        let p = perm.map(Axis::index);
        let dims = [self.dims[p[0]], self.dims[p[1]], self.dims[p[2]]];
        let strides = [1, self.dims[0], self.dims[0] * self.dims[1]];
        let mut data = Vec::with_capacity(self.data.len());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(self.data[i * strides[p[0]] + j * strides[p[1]] + k * strides[p[2]]]);
                }
            }
        }
        Psf {
            dims,
            data,
            spacing: [self.spacing[p[0]], self.spacing[p[1]], self.spacing[p[2]]],
            kind: self.kind,
        }
    }

    /// The kernel point-mirrored through its centre (adjoint for convolution).
    pub fn mirrored(&self) -> Psf {
        let mut data = self.data.clone();
        data.reverse();
        Psf {
            data,
            ..self.clone()
        }
    }

    /// Trilinear interpolation at continuous voxel coordinates, zero outside.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> f64 {
        let base = p.map(libm::floor);
        let t = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut idx = [0isize; 3];
            let mut w = 1.0;
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                idx[a] = base[a] as isize + bit as isize;
                w *= if bit == 1 { t[a] } else { 1.0 - t[a] };
            }
            if w == 0.0 {
                continue;
            }
            if (0..3).all(|a| idx[a] >= 0 && (idx[a] as usize) < self.dims[a]) {
                acc += w * self.get(idx[0] as usize, idx[1] as usize, idx[2] as usize);
            }
        }
        acc
    }

    /// Separable Catmull-Rom (tricubic) interpolation of `ln h`, with
    /// values below `floor` (and everything outside the kernel) clamped to
    /// `ln floor`. Catmull-Rom reproduces quadratics, so Gaussians are
    /// interpolated exactly.
    pub fn sample_log_tricubic(&self, log_h: &[f64], floor: f64, p: [f64; 3]) -> f64 {
        let log_floor = floor.ln();
        let base = p.map(libm::floor);
        let mut w = [[0.0f64; 4]; 3];
        let mut idx = [[0isize; 4]; 3];
        for a in 0..3 {
            let t = p[a] - base[a];
            for k in 0..4 {
                let off = k as f64 - 1.0;
                w[a][k] = crate::resample::catmull_rom(t - off);
                idx[a][k] = base[a] as isize + k as isize - 1;
            }
        }
        let inside = |a: usize, i: isize| i >= 0 && (i as usize) < self.dims[a];
        let mut acc = 0.0;
        for (kz, &iz) in idx[2].iter().enumerate() {
            for (ky, &iy) in idx[1].iter().enumerate() {
                let wzy = w[2][kz] * w[1][ky];
                if wzy == 0.0 {
                    continue;
                }
                for (kx, &ix) in idx[0].iter().enumerate() {
                    let v = if inside(0, ix) && inside(1, iy) && inside(2, iz) {
                        log_h[(iz as usize * self.dims[1] + iy as usize) * self.dims[0]
                            + ix as usize]
                    } else {
                        log_floor
                    };
                    acc += wzy * w[0][kx] * v;
                }
            }
        }
        if acc <= log_floor {
            0.0
        } else {
            acc.exp()
        }
    }

    pub fn to_volume(&self) -> Volume {
        Volume::new(
            self.dims,
            self.spacing,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("kernel values are finite")
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &PsfMeta) -> Result<()> {
        let path = path.as_ref();
        io::write_volume(&self.to_volume(), path)?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
        Ok(())
    }

    /// Loads a PSF from an ISOV file. When a JSON sidecar is present its
    /// kind is used, otherwise the kernel is tagged `from-file`.
    pub fn load(path: impl AsRef<Path>) -> Result<(Psf, Option<PsfMeta>)> {
        let path = path.as_ref();
        let vol = io::read_volume(path)?;
        let side = sidecar_path(path);
        let meta: Option<PsfMeta> = if side.exists() {
            Some(serde_json::from_str(&std::fs::read_to_string(side)?)?)
        } else {
            None
        };
        let kind = meta.as_ref().map_or(PsfKind::FromFile, |m| m.kind);
        let data = vol.data().iter().map(|&v| v as f64).collect();
        Ok((
            Psf::from_values(vol.dims(), data, vol.spacing(), kind)?,
            meta,
        ))
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// JSON sidecar stored next to a serialized PSF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsfMeta {
    pub kind: PsfKind,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitReport>,
}

fn auto_extent(sigma: f64) -> usize {
    2 * (4.0 * sigma).ceil() as usize + 1
}

/// Separable sampled Gaussian with per-axis σ in voxels.
///
/// `extent: None` uses `2⌈4σ⌉ + 1` per axis.
pub fn gaussian(sigma: [f64; 3], extent: Option<[usize; 3]>, max_extent: usize) -> Result<Psf> {
    if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "σ must be positive, got {sigma:?}"
        )));
    }
    let dims = extent.unwrap_or_else(|| sigma.map(auto_extent));
    if let Some(&big) = dims.iter().find(|&&d| d > max_extent) {
        return Err(Error::KernelTooLarge {
            extent: big,
            max: max_extent,
        });
    }
    let profiles: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            let c = (dims[a] as f64 - 1.0) / 2.0;
            (0..dims[a])
                .map(|i| {
                    let d = i as f64 - c;
                    libm::exp(-d * d / (2.0 * sigma[a] * sigma[a]))
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                data.push(profiles[0][x] * profiles[1][y] * profiles[2][z]);
            }
        }
    }
    Psf::from_values(dims, data, [1.0; 3], PsfKind::Gaussian)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Confocal,
    Lightsheet,
}

/// Optical parameters for the Gaussian microscope approximations.
/// Lengths are in physical units (e.g. µm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroscopeParams {
    pub modality: Modality,
    pub na_detect: f64,
    #[serde(default)]
    pub na_illum: Option<f64>,
    pub wavelength: f64,
    pub refr_index: f64,
}

impl MicroscopeParams {
    /// (σ_lateral, σ_axial) in physical units.
    ///
    /// σ_lateral = 0.21 λ / NA, σ_axial = 0.75 λ n / NA²; a light sheet of
    /// width 0.21 λ / NA_illum combines with the detection axial width as
    /// σ_axial⁻² = σ_det⁻² + σ_sheet⁻².
    pub fn sigmas(&self) -> Result<(f64, f64)> {
        let n = self.refr_index;
        let check = |na: f64, what: &str| {
            if !(na > 0.0 && na < n) {
                Err(Error::InvalidParameter(format!(
                    "{what} must satisfy 0 < NA < n = {n}, got {na}"
                )))
            } else {
                Ok(())
            }
        };
        check(self.na_detect, "NA_detect")?;
        if !(self.wavelength > 0.0) {
            return Err(Error::InvalidParameter(
                "wavelength must be positive".into(),
            ));
        }
        let lam = self.wavelength;
        let lateral = 0.21 * lam / self.na_detect;
        let det_axial = 0.75 * lam * n / (self.na_detect * self.na_detect);
        let axial = match self.modality {
            Modality::Confocal => det_axial,
            Modality::Lightsheet => {
                let na_i = self
                    .na_illum
                    .ok_or_else(|| Error::InvalidParameter("light-sheet needs NA_illum".into()))?;
                check(na_i, "NA_illum")?;
                if na_i >= self.na_detect {
                    return Err(Error::InvalidParameter(format!(
                        "NA_illum ({na_i}) must be below NA_detect ({})",
                        self.na_detect
                    )));
                }
                let sheet = 0.21 * lam / na_i;
                (det_axial.powi(-2) + sheet.powi(-2)).powf(-0.5)
            }
        };
        Ok((lateral, axial))
    }
}

/// Samples the Gaussian microscope approximation on `spacing`.
pub fn microscope(params: &MicroscopeParams, spacing: [f32; 3], max_extent: usize) -> Result<Psf> {
    let (lat, ax) = params.sigmas()?;
    let sigma = [
        lat / spacing[0] as f64,
        lat / spacing[1] as f64,
        ax / spacing[2] as f64,
    ];
    let mut psf = gaussian(sigma, None, max_extent)?;
    psf.spacing = spacing;
    psf.kind = match params.modality {
        Modality::Confocal => PsfKind::ConfocalApprox,
        Modality::Lightsheet => PsfKind::LightsheetApprox,
    };
    Ok(psf)
}

/// Rotates the PSF by 90° so that its axial (z) direction lies along x.
/// This is the axis exchange x ↔ z; it is its own inverse.
pub fn rotate_to_lateral(h: &Psf) -> Psf {
    let mut r = h.permute_axes([Axis::Z, Axis::Y, Axis::X]);
    if r.kind != PsfKind::DerivedSplit {
        r.kind = PsfKind::Rotated;
    }
    r
}

/// Quasi-uniform unit directions closed under the 48 axis permutations
/// and sign flips, so that averages over them are exactly symmetric.
pub fn symmetric_directions(base: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut dirs = Vec::with_capacity(base * 48);
    for i in 0..base {
        // Fibonacci points restricted to the positive octant
        let z = 1.0 - (i as f64 + 0.5) / base as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = (golden * i as f64).rem_euclid(std::f64::consts::FRAC_PI_2);
        let d = [r * libm::cos(phi), r * libm::sin(phi), z];
        for p in perms {
            for signs in 0..8 {
                let s = |a: usize| if (signs >> a) & 1 == 1 { -1.0 } else { 1.0 };
                dirs.push([s(0) * d[p[0]], s(1) * d[p[1]], s(2) * d[p[2]]]);
            }
        }
    }
    dirs
}

/// Number of octant directions; the full set has 48× as many.
pub const ISO_BASE_DIRECTIONS: usize = 24;
/// Radial profile resolution in voxels.
pub const ISO_RADIAL_STEP: f64 = 0.0625;

/// Radially symmetric average of `h`: the value at radius r is the mean
/// of `h` over the sphere of radius r, sampled along quasi-uniform
/// directions, and is supported on the ball inscribed in the output cube,
/// whose side is the largest input extent. Samples are interpolated tricubically in the log domain:
/// trilinear sampling of the raw kernel blurs it by several percent at
/// σ ≈ 2 voxels, which breaks the fixed-point property on isotropic input.
pub fn isotropic_average(h: &Psf) -> Result<Psf> {
    let c = h.center().map(|v| v as f64);
    let cen = h.centroid();
    if (0..3).any(|a| (cen[a] - c[a]).abs() > 0.5) {
        return Err(Error::InvalidParameter(format!(
            "PSF centroid {cen:?} is more than half a voxel from the centre {c:?}"
        )));
    }
    let side = *h.dims.iter().max().unwrap();
    let half = (side - 1) / 2;
    let r_max = half as f64 + 1.0;
    let dirs = symmetric_directions(ISO_BASE_DIRECTIONS);
    let max = h.data.iter().fold(0.0f64, |m, &v| m.max(v));
    let floor = max * 1e-12;
    let log_h: Vec<f64> = h.data.iter().map(|&v| v.max(floor).ln()).collect();
    let n_r = (r_max / ISO_RADIAL_STEP).ceil() as usize + 2;
    let profile: Vec<f64> = (0..n_r)
        .map(|k| {
            let r = k as f64 * ISO_RADIAL_STEP;
            let s: f64 = dirs
                .iter()
                .map(|d| {
                    h.sample_log_tricubic(
                        &log_h,
                        floor,
                        [c[0] + r * d[0], c[1] + r * d[1], c[2] + r * d[2]],
                    )
                })
                .sum();
            s / dirs.len() as f64
        })
        .collect();
    let mut data = Vec::with_capacity(side * side * side);
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let d = [x, y, z].map(|v| v as f64 - half as f64);
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if r > half as f64 {
                    data.push(0.0);
                    continue;
                }
                let r = r / ISO_RADIAL_STEP;
                let k = r.floor() as usize;
                let t = r - k as f64;
                data.push(profile[k] * (1.0 - t) + profile[k + 1] * t);
            }
        }
    }
    let mut out = Psf::from_values([side; 3], data, h.spacing, PsfKind::IsotropicAverage)?;
    out.spacing = h.spacing;
    Ok(out)
}

/// Diagnostics of a split factorization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub eps: f64,
    /// ‖h_iso ⊗ h_split − h_rot‖₂ / ‖h_rot‖₂
    pub residual: f64,
    /// Sum of |negative entries| of the normalized split kernel.
    pub negative_mass: f64,
}

pub const DEFAULT_SPLIT_EPS: f64 = 1e-5;

/// Places a centred kernel so its centre sits at the grid origin (wrapping).
fn embed_centered(h: &Psf, grid: [usize; 3]) -> Grid3 {
    let mut g = Grid3::zeros(grid);
    let c = h.center();
    for z in 0..h.dims[2] {
        for y in 0..h.dims[1] {
            for x in 0..h.dims[0] {
                let p = [x, y, z];
                let q = [0, 1, 2].map(|a| (p[a] + grid[a] - c[a]) % grid[a]);
                g.data[(q[2] * grid[1] + q[1]) * grid[0] + q[0]] =
                    Complex64::new(h.get(x, y, z), 0.0);
            }
        }
    }
    g
}

/// Solves `h_rot = h_iso ⊗ h_split` by Tikhonov-regularized Fourier
/// division, crops the result to the common (padded) extent of both inputs
/// and renormalizes.
///
/// The isotropic average of an elongated PSF has a heavy spectral tail, so
/// `h_split` sharpens across the elongated axis and carries negative
/// lobes; a small `eps` is needed for a faithful factorization.
pub fn split(h_rot: &Psf, h_iso: &Psf, eps: f64) -> Result<(Psf, SplitReport)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("split eps must be positive".into()));
    }
    let ext = [0, 1, 2].map(|a| h_rot.dims[a].max(h_iso.dims[a]));
    let grid = ext.map(|e| fast_len(2 * e));
    let mut fr = embed_centered(h_rot, grid);
    let mut fi = embed_centered(h_iso, grid);
    fr.forward();
    fi.forward();
    let max_pow = fi.data.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    let reg = eps * max_pow;
    for (r, i) in fr.data.iter_mut().zip(&fi.data) {
        *r = *r * i.conj() / (i.norm_sqr() + reg);
    }
    fr.inverse();
    let out_dims = ext;
    let c = ext.map(|e| (e - 1) / 2);
    let mut data = Vec::with_capacity(out_dims.iter().product());
    for z in 0..out_dims[2] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                let p = [x, y, z];
                let q = [0, 1, 2].map(|a| (p[a] + grid[a] - c[a]) % grid[a]);
                data.push(fr.data[(q[2] * grid[1] + q[1]) * grid[0] + q[0]].re);
            }
        }
    }
    let h_split = Psf::from_values(out_dims, data, h_rot.spacing, PsfKind::DerivedSplit)?;
    let residual = split_residual(h_rot, h_iso, &h_split);
    let negative_mass = h_split.data.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    if negative_mass > 0.0 {
        log::debug!("split PSF has negative lobes (mass {negative_mass:.3e})");
    }
    Ok((
        h_split,
        SplitReport {
            eps,
            residual,
            negative_mass,
        },
    ))
}

/// ‖h_iso ⊗ h_split − h_rot‖₂ / ‖h_rot‖₂ with centres aligned.
pub fn split_residual(h_rot: &Psf, h_iso: &Psf, h_split: &Psf) -> f64 {
    let (full, fdims) = conv::full_fft(&h_iso.data, h_iso.dims, &h_split.data, h_split.dims);
    // centre of the full convolution is the sum of the two centres
    let fc = [0, 1, 2].map(|a| h_iso.center()[a] + h_split.center()[a]);
    let rc = h_rot.center();
    let mut diff = 0.0;
    let mut covered = 0.0;
    for z in 0..fdims[2] {
        for y in 0..fdims[1] {
            for x in 0..fdims[0] {
                let v = full[(z * fdims[1] + y) * fdims[0] + x];
                let p = [x, y, z];
                let q = [0, 1, 2].map(|a| p[a] as isize - fc[a] as isize + rc[a] as isize);
                let r = if (0..3).all(|a| q[a] >= 0 && (q[a] as usize) < h_rot.dims[a]) {
                    covered += 1.0;
                    h_rot.get(q[0] as usize, q[1] as usize, q[2] as usize)
                } else {
                    0.0
                };
                diff += (v - r) * (v - r);
            }
        }
    }
    debug_assert!(covered > 0.0);
    diff.sqrt() / h_rot.l2()
}

/// Odd-extent 2D kernel, row-major with `width` columns. Signed entries
/// are allowed for kernels derived from a split PSF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Kernel2D {
    pub fn delta() -> Self {
        Kernel2D {
            width: 1,
            height: 1,
            data: vec![1.0],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_signed(&self) -> bool {
        self.data.iter().any(|&v| v < 0.0)
    }

    pub fn is_delta(&self) -> bool {
        let c = (self.height / 2) * self.width + self.width / 2;
        self.data.iter().enumerate().all(|(i, &v)| {
            if i == c {
                (v - 1.0).abs() < 1e-12
            } else {
                v == 0.0
            }
        })
    }

    /// Second central moment along columns and rows.
    pub fn moment_sigma(&self) -> (f64, f64) {
        let (cc, cr) = ((self.width / 2) as f64, (self.height / 2) as f64);
        let (mut mc, mut mr) = (0.0, 0.0);
        for r in 0..self.height {
            for c in 0..self.width {
                let v = self.get(c, r);
                mc += v * (c as f64 - cc).powi(2);
                mr += v * (r as f64 - cr).powi(2);
            }
        }
        (mc.sqrt(), mr.sqrt())
    }

    pub fn transpose(&self) -> Kernel2D {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.width {
            for r in 0..self.height {
                data.push(self.get(c, r));
            }
        }
        Kernel2D {
            width: self.height,
            height: self.width,
            data,
        }
    }

    /// Whether the kernel equals its 90° rotation within `tol` (relative to max).
    pub fn is_isotropic_in_plane(&self, tol: f64) -> bool {
        if self.width != self.height {
            return false;
        }
        let max = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let n = self.width;
        (0..n).all(|r| (0..n).all(|c| (self.get(c, r) - self.get(n - 1 - r, c)).abs() <= tol * max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    /// Sum over the dropped axis (line-spread reduction).
    Sum,
    /// The central plane orthogonal to the dropped axis.
    CentralSlice,
}

/// Reduces a 3D kernel to 2D, keeping `(cols, rows)` axes, and renormalizes.
pub fn project_to_2d(h: &Psf, keep: (Axis, Axis), mode: Projection) -> Result<Kernel2D> {
    let (ca, ra) = (keep.0.index(), keep.1.index());
    if ca == ra {
        return Err(Error::InvalidParameter(
            "projection axes must differ".into(),
        ));
    }
    let drop = 3 - ca - ra;
    let (w, hgt) = (h.dims[ca], h.dims[ra]);
    let mut data = vec![0.0; w * hgt];
    let dc = h.center()[drop];
    for z in 0..h.dims[2] {
        for y in 0..h.dims[1] {
            for x in 0..h.dims[0] {
                let p = [x, y, z];
                if mode == Projection::CentralSlice && p[drop] != dc {
                    continue;
                }
                data[p[ra] * w + p[ca]] += h.get(x, y, z);
            }
        }
    }
    let s: f64 = data.iter().sum();
    if s.abs() < 1e-300 {
        return Err(Error::InvalidParameter(
            "projected kernel sums to zero".into(),
        ));
    }
    for v in &mut data {
        *v /= s;
    }
    Ok(Kernel2D {
        width: w,
        height: hgt,
        data,
    })
}

/// Serializable description of where a PSF comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PsfSource {
    Delta,
    Gaussian {
        sigma: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        extent: Option<[usize; 3]>,
    },
    Microscope {
        params: MicroscopeParams,
        spacing: [f32; 3],
    },
    File {
        path: std::path::PathBuf,
    },
}

impl PsfSource {
    pub fn build(&self) -> Result<Psf> {
        match self {
            PsfSource::Delta => Ok(Psf::delta()),
            PsfSource::Gaussian { sigma, extent } => gaussian(*sigma, *extent, DEFAULT_MAX_EXTENT),
            PsfSource::Microscope { params, spacing } => {
                microscope(params, *spacing, DEFAULT_MAX_EXTENT)
            }
            PsfSource::File { path } => Ok(Psf::load(path)?.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fwhm_along(profile: &[f64]) -> f64 {
        let c = profile.len() / 2;
        let half = profile[c] / 2.0;
        let mut i = c;
        while i + 1 < profile.len() && profile[i + 1] > half {
            i += 1;
        }
        // linear interpolation of the half-maximum crossing
        let t = (profile[i] - half) / (profile[i] - profile[i + 1]);
        2.0 * (i - c) as f64 + 2.0 * t
    }

    #[test]
    fn gaussian_fwhm_ratio() {
        let h = gaussian([2.0, 2.0, 8.0], None, DEFAULT_MAX_EXTENT).unwrap();
        let c = h.center();
        let lat: Vec<f64> = (0..h.dims[0]).map(|x| h.get(x, c[1], c[2])).collect();
        let ax: Vec<f64> = (0..h.dims[2]).map(|z| h.get(c[0], c[1], z)).collect();
        let ratio = fwhm_along(&ax) / fwhm_along(&lat);
        assert!((ratio - 4.0).abs() < 0.08, "ratio {ratio}");
    }

    #[test]
    fn gaussian_center_to_neighbour() {
        let h = gaussian([1.0; 3], None, DEFAULT_MAX_EXTENT).unwrap();
        let c = h.center();
        let r = h.get(c[0], c[1], c[2]) / h.get(c[0] + 1, c[1], c[2]);
        assert!((r - 0.5f64.exp()).abs() < 1e-12);
        assert_eq!(h.dims(), [9, 9, 9]);
    }

    #[test]
    fn gaussian_normalized_and_bounded() {
        for s in [[0.3, 0.7, 1.0], [2.0, 2.0, 8.0], [5.0, 1.0, 3.5]] {
            let h = gaussian(s, None, DEFAULT_MAX_EXTENT).unwrap();
            assert!((h.sum() - 1.0).abs() < 1e-6);
            assert!(h.dims().iter().all(|d| d % 2 == 1));
        }
        assert!(matches!(
            gaussian([100.0, 1.0, 1.0], None, 257),
            Err(Error::KernelTooLarge { .. })
        ));
        assert!(gaussian([0.0, 1.0, 1.0], None, 257).is_err());
    }

    #[test]
    fn confocal_sigmas() {
        let p = MicroscopeParams {
            modality: Modality::Confocal,
            na_detect: 1.1,
            na_illum: None,
            wavelength: 0.5,
            refr_index: 1.33,
        };
        let (lat, ax) = p.sigmas().unwrap();
        assert!((lat - 0.21 * 0.5 / 1.1).abs() < 1e-12);
        assert!((ax - 0.75 * 0.5 * 1.33 / 1.21).abs() < 1e-12);
        assert!((lat - 0.095).abs() < 5e-4 && (ax - 0.412).abs() < 5e-4);
        let h = microscope(&p, [0.1; 3], DEFAULT_MAX_EXTENT).unwrap();
        assert_eq!(h.kind(), PsfKind::ConfocalApprox);
        let s = h.moment_sigma();
        assert!(s[2] > s[0]);
    }

    #[test]
    fn thick_sheet_limit_is_detection_psf() {
        let mut p = MicroscopeParams {
            modality: Modality::Lightsheet,
            na_detect: 0.8,
            na_illum: Some(1e-9),
            wavelength: 0.5,
            refr_index: 1.33,
        };
        let (_, ax) = p.sigmas().unwrap();
        p.modality = Modality::Confocal;
        let (_, det) = p.sigmas().unwrap();
        assert!((ax - det).abs() / det < 1e-9);
    }

    #[test]
    fn invalid_na() {
        let p = MicroscopeParams {
            modality: Modality::Lightsheet,
            na_detect: 0.8,
            na_illum: Some(0.9),
            wavelength: 0.5,
            refr_index: 1.33,
        };
        assert!(p.sigmas().is_err());
        let q = MicroscopeParams {
            na_detect: 1.5,
            modality: Modality::Confocal,
            ..p
        };
        assert!(q.sigmas().is_err());
    }

    #[test]
    fn rotation_swaps_x_and_z() {
        let h = gaussian([2.0, 2.0, 8.0], None, DEFAULT_MAX_EXTENT).unwrap();
        let r = rotate_to_lateral(&h);
        let expected = gaussian([8.0, 2.0, 2.0], None, DEFAULT_MAX_EXTENT).unwrap();
        assert_eq!(r.dims(), expected.dims());
        for (a, b) in r.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let c = h.center();
        let rc = r.center();
        assert_eq!(h.get(c[0], c[1], c[2]), r.get(rc[0], rc[1], rc[2]));
        assert_eq!(rotate_to_lateral(&r).data(), h.data());
        assert!((r.l2() - h.l2()).abs() < 1e-15);
    }

    #[test]
    fn isotropic_fixed_point() {
        // 5σ support so the cube-corner tail mass is negligible
        let h = gaussian([2.0; 3], Some([21; 3]), DEFAULT_MAX_EXTENT).unwrap();
        let iso = isotropic_average(&h).unwrap();
        let err: f64 = h
            .data()
            .iter()
            .zip(iso.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err / h.l2() < 1e-3, "{}", err / h.l2());
    }

    #[test]
    fn isotropic_rejects_off_centre() {
        let mut data = vec![0.0; 27];
        data[0] = 1.0;
        let h = Psf::from_values([3, 3, 3], data, [1.0; 3], PsfKind::FromFile).unwrap();
        assert!(isotropic_average(&h).is_err());
    }

    #[test]
    fn split_with_delta_is_identity() {
        let h_rot =
            rotate_to_lateral(&gaussian([1.0, 1.0, 3.0], None, DEFAULT_MAX_EXTENT).unwrap());
        let (s, rep) = split(&h_rot, &Psf::delta(), 1e-6).unwrap();
        for (a, b) in s.data().iter().zip(h_rot.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(rep.residual < 1e-5);
    }

    #[test]
    fn projection_of_gaussian_is_marginal() {
        let h = gaussian([8.0, 2.0, 2.0], None, DEFAULT_MAX_EXTENT).unwrap();
        let k = project_to_2d(&h, (Axis::X, Axis::Y), Projection::Sum).unwrap();
        let expected = gaussian([8.0, 2.0, 1.0], Some([h.dims()[0], h.dims()[1], 1]), 257).unwrap();
        assert_eq!((k.width, k.height), (h.dims()[0], h.dims()[1]));
        for (a, b) in k.data.iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((k.sum() - 1.0).abs() < 1e-6);
        let d = project_to_2d(&Psf::delta(), (Axis::X, Axis::Y), Projection::Sum).unwrap();
        assert!(d.is_delta());
        let cs = project_to_2d(&h, (Axis::X, Axis::Y), Projection::CentralSlice).unwrap();
        assert!((cs.sum() - 1.0).abs() < 1e-9);
    }
}
