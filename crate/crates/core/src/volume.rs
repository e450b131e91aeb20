//! Dense 3D scalar volumes and 2D images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Axis {
        match i {
            0 => Axis::X,
            1 => Axis::Y,
            2 => Axis::Z,
            _ => panic!("axis index {i} out of range"),
        }
    }
}

/// Slice orientation. The named axes are the in-plane axes, the first one
/// running along image columns and the second along image rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plane {
    XY,
    XZ,
    YZ,
}

impl Plane {
    /// The axis orthogonal to the plane.
    pub fn normal(self) -> Axis {
        match self {
            Plane::XY => Axis::Z,
            Plane::XZ => Axis::Y,
            Plane::YZ => Axis::X,
        }
    }

    /// (column axis, row axis)
    pub fn in_plane(self) -> (Axis, Axis) {
        match self {
            Plane::XY => (Axis::X, Axis::Y),
            Plane::XZ => (Axis::X, Axis::Z),
            Plane::YZ => (Axis::Y, Axis::Z),
        }
    }
}

/// A 3D scalar field stored x-fastest: `data[(z * ny + y) * nx + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::Shape(format!("{dims:?} overflows")))?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite intensity".into()));
        }
        Ok(Volume {
            dims,
            spacing,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: [usize; 3], value: f32) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "zero extent in {dims:?}");
        Volume {
            dims,
            spacing: [1.0; 3],
            data: vec![value; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume {
            dims,
            spacing: [1.0; 3],
            data,
        }
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        assert!(spacing.iter().all(|&s| s > 0.0), "spacing must be positive");
        self.spacing = spacing;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn nx(&self) -> usize {
        self.dims[0]
    }

    pub fn ny(&self) -> usize {
        self.dims[1]
    }

    pub fn nz(&self) -> usize {
        self.dims[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Stride between neighbours along `axis` in the flat buffer.
    pub fn stride(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => 1,
            Axis::Y => self.dims[0],
            Axis::Z => self.dims[0] * self.dims[1],
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Volume {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Copies the plane orthogonal to `plane.normal()` at `index`.
    pub fn extract_slice(&self, plane: Plane, index: usize) -> Result<Image2D> {
        let extent = self.dims[plane.normal().index()];
        if index >= extent {
            return Err(Error::IndexOutOfRange { index, extent });
        }
        let [nx, ny, nz] = self.dims;
        let img = match plane {
            Plane::XY => {
                let start = index * nx * ny;
                Image2D::new(nx, ny, self.data[start..start + nx * ny].to_vec())
            }
            Plane::XZ => {
                let mut data = Vec::with_capacity(nx * nz);
                for z in 0..nz {
                    let start = self.index(0, index, z);
                    data.extend_from_slice(&self.data[start..start + nx]);
                }
                Image2D::new(nx, nz, data)
            }
            Plane::YZ => {
                let mut data = Vec::with_capacity(ny * nz);
                for z in 0..nz {
                    for y in 0..ny {
                        data.push(self.get(index, y, z));
                    }
                }
                Image2D::new(ny, nz, data)
            }
        };
        Ok(img)
    }

    /// Writes `img` back into the plane at `index`. Inverse of [`Volume::extract_slice`].
    pub fn insert_slice(&mut self, plane: Plane, index: usize, img: &Image2D) -> Result<()> {
        let extent = self.dims[plane.normal().index()];
        if index >= extent {
            return Err(Error::IndexOutOfRange { index, extent });
        }
        let (ca, ra) = plane.in_plane();
        let (w, h) = (self.dims[ca.index()], self.dims[ra.index()]);
        if img.width() != w || img.height() != h {
            return Err(Error::Shape(format!(
                "slice is {}x{}, plane needs {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        for r in 0..h {
            for c in 0..w {
                let v = img.get(c, r);
                match plane {
                    Plane::XY => self.set(c, r, index, v),
                    Plane::XZ => self.set(c, index, r, v),
                    Plane::YZ => self.set(index, c, r, v),
                }
            }
        }
        Ok(())
    }

    /// Stacks equally sized slices along the plane normal.
    pub fn from_slices(plane: Plane, slices: &[Image2D], spacing: [f32; 3]) -> Result<Volume> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Shape("no slices to stack".into()))?;
        let (ca, ra) = plane.in_plane();
        let mut dims = [0usize; 3];
        dims[ca.index()] = first.width();
        dims[ra.index()] = first.height();
        dims[plane.normal().index()] = slices.len();
        let mut vol = Volume::zeros(dims).with_spacing(spacing);
        for (i, s) in slices.iter().enumerate() {
            vol.insert_slice(plane, i, s)?;
        }
        Ok(vol)
    }

    /// Relabels axes: output axis `i` is input axis `perm[i]`.
    pub fn permute_axes(&self, perm: [Axis; 3]) -> Result<Volume> {
        let p = perm.map(Axis::index);
        let mut seen = [false; 3];
        for &a in &p {
            seen[a] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter(format!(
                "{perm:?} is not a permutation"
            )));
        }
        let dims = [self.dims[p[0]], self.dims[p[1]], self.dims[p[2]]];
        let spacing = [self.spacing[p[0]], self.spacing[p[1]], self.spacing[p[2]]];
        let strides = [
            self.stride(perm[0]),
            self.stride(perm[1]),
            self.stride(perm[2]),
        ];
        let mut data = Vec::with_capacity(self.data.len());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                let base = j * strides[1] + k * strides[2];
                for i in 0..dims[0] {
                    data.push(self.data[base + i * strides[0]]);
                }
            }
        }
        Ok(Volume {
            dims,
            spacing,
            data,
        })
    }

    /// Affine percentile normalization clipped to [-0.5, 1.5].
    pub fn normalize_percentile(&self, p_low: f64, p_high: f64) -> Result<(Volume, Normalization)> {
        if !(0.0..100.0).contains(&p_low) || !(p_low < p_high && p_high <= 100.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= p_low < p_high <= 100, got ({p_low}, {p_high})"
            )));
        }
        let mut sorted: Vec<f32> = self.data.clone();
        sorted.sort_by(f32::total_cmp);
        let lo = percentile_sorted(&sorted, p_low);
        let hi = percentile_sorted(&sorted, p_high);
        let norm = Normalization {
            p_low,
            p_high,
            lo,
            hi,
            degenerate: !(hi > lo),
        };
        Ok((norm.apply(self), norm))
    }
}

/// Linear-interpolated percentile of an ascending slice.
pub fn percentile_sorted(sorted: &[f32], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0] as f64;
    }
    let pos = p / 100.0 * (n - 1) as f64;
    let i = (pos.floor() as usize).min(n - 1);
    let j = (i + 1).min(n - 1);
    let t = pos - i as f64;
    sorted[i] as f64 * (1.0 - t) + sorted[j] as f64 * t
}

pub const NORM_CLIP: (f32, f32) = (-0.5, 1.5);

/// Parameters of a percentile normalization, kept for provenance and for
/// mapping restored data back to the input's intensity scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub p_low: f64,
    pub p_high: f64,
    pub lo: f64,
    pub hi: f64,
    /// All voxels equal; `apply` yields zeros.
    pub degenerate: bool,
}

impl Normalization {
    pub fn apply(&self, vol: &Volume) -> Volume {
        if self.degenerate {
            log::warn!("degenerate volume: percentile range is empty, normalizing to zeros");
            return vol.map(|_| 0.0);
        }
        let (lo, scale) = (self.lo, 1.0 / (self.hi - self.lo));
        vol.map(|v| (((v as f64 - lo) * scale) as f32).clamp(NORM_CLIP.0, NORM_CLIP.1))
    }

    pub fn invert(&self, vol: &Volume) -> Volume {
        if self.degenerate {
            return vol.map(|_| self.lo as f32);
        }
        let (lo, scale) = (self.lo, self.hi - self.lo);
        vol.map(|v| (v as f64 * scale + lo) as f32)
    }
}

/// A row-major 2D image, `data[row * width + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "image data length");
        Image2D {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image2D::new(width, height, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    pub fn transpose(&self) -> Image2D {
        let mut out = Image2D::zeros(self.height, self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r, c, self.get(c, r));
            }
        }
        out
    }

    pub fn crop(&self, col: usize, row: usize, w: usize, h: usize) -> Image2D {
        assert!(
            col + w <= self.width && row + h <= self.height,
            "crop out of bounds"
        );
        let mut data = Vec::with_capacity(w * h);
        for r in row..row + h {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + w]);
        }
        Image2D::new(w, h, data)
    }

    pub fn flip_cols(&self) -> Image2D {
        let mut out = self.clone();
        for r in 0..self.height {
            out.data[r * self.width..(r + 1) * self.width].reverse();
        }
        out
    }

    pub fn flip_rows(&self) -> Image2D {
        let mut data = Vec::with_capacity(self.data.len());
        for r in (0..self.height).rev() {
            data.extend_from_slice(&self.data[r * self.width..(r + 1) * self.width]);
        }
        Image2D::new(self.width, self.height, data)
    }

    pub fn mean_var(&self) -> (f64, f64) {
        let n = self.data.len() as f64;
        let m = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let v = self
            .data
            .iter()
            .map(|&x| (x as f64 - m) * (x as f64 - m))
            .sum::<f64>()
            / n;
        (m, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_z() -> Volume {
        Volume::from_fn([3, 3, 3], |_, _, z| z as f32 * 10.0)
    }

    #[test]
    fn xy_slice_of_z_ramp_is_constant() {
        let v = ramp_z();
        let s = v.extract_slice(Plane::XY, 1).unwrap();
        assert_eq!((s.width(), s.height()), (3, 3));
        assert!(s.data().iter().all(|&p| p == 10.0));
    }

    #[test]
    fn xz_slice_single_voxel() {
        let mut v = Volume::zeros([3, 3, 3]);
        v.set(1, 2, 0, 5.0);
        let s = v.extract_slice(Plane::XZ, 2).unwrap();
        let nonzero: Vec<(usize, usize)> = (0..s.height())
            .flat_map(|r| (0..s.width()).map(move |c| (c, r)))
            .filter(|&(c, r)| s.get(c, r) != 0.0)
            .collect();
        assert_eq!(nonzero, vec![(1, 0)]);
    }

    #[test]
    fn xz_slice_count() {
        let v = Volume::zeros([64, 64, 16]);
        assert_eq!(v.dims()[Plane::XZ.normal().index()], 64);
        assert!(v.extract_slice(Plane::XZ, 63).is_ok());
        assert!(matches!(
            v.extract_slice(Plane::XZ, 64),
            Err(Error::IndexOutOfRange {
                index: 64,
                extent: 64
            })
        ));
    }

    #[test]
    fn slices_restack_exactly() {
        let v = Volume::from_fn([4, 5, 6], |x, y, z| (x * 100 + y * 10 + z) as f32);
        for plane in [Plane::XY, Plane::XZ, Plane::YZ] {
            let n = v.dims()[plane.normal().index()];
            let slices: Vec<_> = (0..n).map(|i| v.extract_slice(plane, i).unwrap()).collect();
            let back = Volume::from_slices(plane, &slices, v.spacing()).unwrap();
            assert_eq!(back, v, "{plane:?}");
        }
    }

    #[test]
    fn permute_and_inverse() {
        let v = Volume::from_fn([2, 3, 4], |x, y, z| (x + 2 * y + 7 * z) as f32)
            .with_spacing([1.0, 2.0, 3.0]);
        let perm = [Axis::Z, Axis::X, Axis::Y];
        let p = v.permute_axes(perm).unwrap();
        assert_eq!(p.dims(), [4, 2, 3]);
        assert_eq!(p.spacing(), [3.0, 1.0, 2.0]);
        assert_eq!(p.get(3, 1, 2), v.get(1, 2, 3));
        let inv = [Axis::Y, Axis::Z, Axis::X];
        assert_eq!(p.permute_axes(inv).unwrap(), v);
    }

    #[test]
    fn permute_rejects_repeats() {
        let v = Volume::zeros([2, 2, 2]);
        assert!(v.permute_axes([Axis::X, Axis::X, Axis::Z]).is_err());
    }

    #[test]
    fn normalize_full_range_is_identity() {
        let v = Volume::from_fn([5, 2, 1], |x, y, _| (x + 5 * y) as f32 / 9.0);
        let (n, _) = v.normalize_percentile(0.0, 100.0).unwrap();
        for (a, b) in n.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_matches_sorted_percentiles() {
        let v = Volume::from_fn([100, 1, 1], |x, _, _| x as f32);
        let (n, norm) = v.normalize_percentile(2.0, 98.0).unwrap();
        // brute force: sorted values are 0..99, positions 1.98 and 97.02
        assert!((norm.lo - 1.98).abs() < 1e-9);
        assert!((norm.hi - 97.02).abs() < 1e-9);
        let expected = ((50.0 - 1.98) / (97.02 - 1.98)) as f32;
        assert!((n.get(50, 0, 0) - expected).abs() < 1e-6);
        assert_eq!(n.get(0, 0, 0), -1.98 / 95.04f32);
    }

    #[test]
    fn normalize_clips() {
        let v = Volume::from_fn([100, 1, 1], |x, _, _| if x == 99 { 1e6 } else { x as f32 });
        let (n, _) = v.normalize_percentile(0.0, 50.0).unwrap();
        assert_eq!(n.get(99, 0, 0), 1.5);
    }

    #[test]
    fn normalize_degenerate_gives_zeros() {
        let v = Volume::filled([4, 4, 4], 3.0);
        let (n, norm) = v.normalize_percentile(2.0, 99.8).unwrap();
        assert!(norm.degenerate);
        assert!(n.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Volume::new([2, 2, 2], [1.0; 3], vec![0.0; 7]).is_err());
        assert!(Volume::new([2, 2, 2], [0.0, 1.0, 1.0], vec![0.0; 8]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0; 3], vec![f32::NAN]).is_err());
    }
}
