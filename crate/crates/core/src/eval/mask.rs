use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelVolume;
use crate::volume::Volume;

/// Binary voxel mask, x fastest like [`Volume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    data: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    Six,
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let n = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => n == 1,
                        Connectivity::TwentySix => n > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Neighbour indices of voxel `i` inside `dims`.
pub(crate) fn neighbours(dims: [usize; 3], i: usize, offsets: &[[isize; 3]], out: &mut Vec<usize>) {
    out.clear();
    let (x, y, z) = (
        i % dims[0],
        (i / dims[0]) % dims[1],
        i / (dims[0] * dims[1]),
    );
    for o in offsets {
        let (nx, ny, nz) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
        if nx < 0 || ny < 0 || nz < 0 {
            continue;
        }
        let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
        if nx < dims[0] && ny < dims[1] && nz < dims[2] {
            out.push((nz * dims[1] + ny) * dims[0] + nx);
        }
    }
}

impl Mask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "mask length {} does not match {dims:?}",
                data.len()
            )));
        }
        Ok(Mask { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Mask { dims, data }
    }

    /// Voxels strictly above `t`.
    pub fn threshold(vol: &Volume, t: f32) -> Self {
        Mask {
            dims: vol.dims(),
            data: vol.data().iter().map(|&v| v > t).collect(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Mask {
        Mask {
            dims: self.dims,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    /// Connected components of the true voxels, labelled 1.. in scan order.
    pub fn components(&self, conn: Connectivity) -> LabelVolume {
        let offsets = conn.offsets();
        let mut labels = vec![0u32; self.data.len()];
        let mut queue = VecDeque::new();
        let mut nb = Vec::with_capacity(26);
        let mut next = 0;
        for start in 0..self.data.len() {
            if !self.data[start] || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                neighbours(self.dims, i, &offsets, &mut nb);
                for &j in &nb {
                    if self.data[j] && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        LabelVolume::new(self.dims, labels).expect("dims preserved")
    }
}

/// Fills background regions not connected to the volume border.
/// Background connectivity is `conn`.
pub fn fill_holes(mask: &Mask, conn: Connectivity) -> Mask {
    let d = mask.dims;
    let offsets = conn.offsets();
    let mut outside = vec![false; mask.data.len()];
    let mut queue = VecDeque::new();
    for (i, &m) in mask.data.iter().enumerate() {
        let (x, y, z) = (i % d[0], (i / d[0]) % d[1], i / (d[0] * d[1]));
        let border = x == 0 || y == 0 || z == 0 || x + 1 == d[0] || y + 1 == d[1] || z + 1 == d[2];
        if border && !m {
            outside[i] = true;
            queue.push_back(i);
        }
    }
    let mut nb = Vec::with_capacity(26);
    while let Some(i) = queue.pop_front() {
        neighbours(d, i, &offsets, &mut nb);
        for &j in &nb {
            if !mask.data[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    Mask {
        dims: d,
        data: outside.iter().map(|o| !o).collect(),
    }
}

/// Separable Gaussian smoothing with zero padding, truncated at 4σ.
pub fn gaussian_smooth(values: &[f64], dims: [usize; 3], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let r = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let mut cur = values.to_vec();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis] as isize;
        let mut next = vec![0.0; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            let pos = ((i / strides[axis]) % dims[axis]) as isize;
            let mut acc = 0.0;
            for (t, k) in taps.iter().zip(-r..=r) {
                let p = pos + k;
                if p >= 0 && p < n {
                    acc += t * cur[(i as isize + k * strides[axis] as isize) as usize];
                }
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}
