//! Zero-padded linear convolution in 2D and 3D, direct and FFT-based.
//!
//! Kernels have odd extents and are centred at `(k - 1) / 2`. The "same"
//! variants return an output the size of the signal; `full` returns the
//! complete `n + k - 1` support.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Smallest 2,3,5-smooth integer ≥ n.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Complex 3D grid (x fastest) with in-place FFTs along every axis.
pub struct Grid3 {
    pub dims: [usize; 3],
    pub data: Vec<Complex64>,
}

impl Grid3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Grid3 {
            dims,
            data: vec![Complex64::new(0.0, 0.0); dims.iter().product()],
        }
    }

    /// Embeds a real array at the origin of a zero grid.
    pub fn embed(src: &[f64], src_dims: [usize; 3], dims: [usize; 3]) -> Self {
        let mut g = Grid3::zeros(dims);
        for z in 0..src_dims[2] {
            for y in 0..src_dims[1] {
                let s = (z * src_dims[1] + y) * src_dims[0];
                let d = (z * dims[1] + y) * dims[0];
                for x in 0..src_dims[0] {
                    g.data[d + x] = Complex64::new(src[s + x], 0.0);
                }
            }
        }
        g
    }

    fn transform(&mut self, inverse: bool) {
        let mut planner = FftPlanner::<f64>::new();
        let [nx, ny, nz] = self.dims;
        let strides = [1, nx, nx * ny];
        for axis in 0..3 {
            let n = self.dims[axis];
            if n == 1 {
                continue;
            }
            let fft = if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            };
            let stride = strides[axis];
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            let starts: Vec<usize> = match axis {
                0 => (0..ny * nz).map(|r| r * nx).collect(),
                1 => (0..nz)
                    .flat_map(|z| (0..nx).map(move |x| z * nx * ny + x))
                    .collect(),
                _ => (0..nx * ny).collect(),
            };
            for start in starts {
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = self.data[start + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    self.data[start + i * stride] = *v;
                }
            }
        }
        if inverse {
            let scale = 1.0 / total_len(self.dims) as f64;
            for v in &mut self.data {
                *v *= scale;
            }
        }
    }

    pub fn forward(&mut self) {
        self.transform(false);
    }

    /// Inverse transform including the 1/N normalization.
    pub fn inverse(&mut self) {
        self.transform(true);
    }
}

fn total_len(dims: [usize; 3]) -> usize {
    dims.iter().product()
}

/// Full linear convolution by FFT. Output extent is `a + b - 1` per axis.
pub fn full_fft(
    a: &[f64],
    a_dims: [usize; 3],
    b: &[f64],
    b_dims: [usize; 3],
) -> (Vec<f64>, [usize; 3]) {
    let out_dims = [0, 1, 2].map(|i| a_dims[i] + b_dims[i] - 1);
    let grid = [0, 1, 2].map(|i| fast_len(out_dims[i]));
    let mut fa = Grid3::embed(a, a_dims, grid);
    let mut fb = Grid3::embed(b, b_dims, grid);
    fa.forward();
    fb.forward();
    for (x, y) in fa.data.iter_mut().zip(&fb.data) {
        *x *= y;
    }
    fa.inverse();
    (crop_real(&fa, [0, 0, 0], out_dims), out_dims)
}

/// Real part of a sub-box of a complex grid.
pub fn crop_real(g: &Grid3, origin: [usize; 3], dims: [usize; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(total_len(dims));
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let base = ((z + origin[2]) * g.dims[1] + y + origin[1]) * g.dims[0] + origin[0];
            out.extend(g.data[base..base + dims[0]].iter().map(|c| c.re));
        }
    }
    out
}

/// Full linear convolution by direct summation.
pub fn full_direct(
    a: &[f64],
    a_dims: [usize; 3],
    b: &[f64],
    b_dims: [usize; 3],
) -> (Vec<f64>, [usize; 3]) {
    let out_dims = [0, 1, 2].map(|i| a_dims[i] + b_dims[i] - 1);
    let mut out = vec![0.0; total_len(out_dims)];
    for bz in 0..b_dims[2] {
        for by in 0..b_dims[1] {
            for bx in 0..b_dims[0] {
                let w = b[(bz * b_dims[1] + by) * b_dims[0] + bx];
                if w == 0.0 {
                    continue;
                }
                for az in 0..a_dims[2] {
                    for ay in 0..a_dims[1] {
                        let src = (az * a_dims[1] + ay) * a_dims[0];
                        let dst = ((az + bz) * out_dims[1] + ay + by) * out_dims[0] + bx;
                        for ax in 0..a_dims[0] {
                            out[dst + ax] += w * a[src + ax];
                        }
                    }
                }
            }
        }
    }
    (out, out_dims)
}

/// "Same" 3D convolution of an f32 signal with a centred f64 kernel, by
/// direct summation with f64 accumulation.
pub fn same_direct(
    signal: &[f32],
    dims: [usize; 3],
    kernel: &[f64],
    kdims: [usize; 3],
) -> Vec<f32> {
    let c = kdims.map(|k| (k - 1) / 2);
    let [nx, ny, nz] = dims;
    let mut acc = vec![0f64; signal.len()];
    for kz in 0..kdims[2] {
        for ky in 0..kdims[1] {
            for kx in 0..kdims[0] {
                let w = kernel[(kz * kdims[1] + ky) * kdims[0] + kx];
                if w == 0.0 {
                    continue;
                }
                // out[x] += w * in[x - (k - c)]
                let off = [
                    kx as isize - c[0] as isize,
                    ky as isize - c[1] as isize,
                    kz as isize - c[2] as isize,
                ];
                for z in 0..nz {
                    let sz = z as isize - off[2];
                    if sz < 0 || sz >= nz as isize {
                        continue;
                    }
                    for y in 0..ny {
                        let sy = y as isize - off[1];
                        if sy < 0 || sy >= ny as isize {
                            continue;
                        }
                        let x0 = off[0].max(0) as usize;
                        let x1 = (nx as isize + off[0]).min(nx as isize);
                        if x1 <= x0 as isize {
                            continue;
                        }
                        let drow = (z * ny + y) * nx;
                        let srow = (sz as usize * ny + sy as usize) * nx;
                        for x in x0..x1 as usize {
                            acc[drow + x] +=
                                w * signal[srow + (x as isize - off[0]) as usize] as f64;
                        }
                    }
                }
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// "Same" 3D convolution by FFT on a zero-padded grid.
pub fn same_fft(signal: &[f32], dims: [usize; 3], kernel: &[f64], kdims: [usize; 3]) -> Vec<f32> {
    let sig: Vec<f64> = signal.iter().map(|&v| v as f64).collect();
    let (full, fdims) = full_fft(&sig, dims, kernel, kdims);
    let c = kdims.map(|k| (k - 1) / 2);
    let mut out = Vec::with_capacity(signal.len());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let base = ((z + c[2]) * fdims[1] + y + c[1]) * fdims[0] + c[0];
            out.extend(full[base..base + dims[0]].iter().map(|&v| v as f32));
        }
    }
    out
}

/// Picks direct summation for small kernels and FFT otherwise.
pub fn same(signal: &[f32], dims: [usize; 3], kernel: &[f64], kdims: [usize; 3]) -> Vec<f32> {
    let taps = total_len(kdims);
    let nonzero = kernel.iter().filter(|&&w| w != 0.0).count();
    if taps <= 27 || nonzero <= 27 {
        same_direct(signal, dims, kernel, kdims)
    } else {
        same_fft(signal, dims, kernel, kdims)
    }
}

/// Precomputed kernel spectrum for repeated "same" convolutions of
/// equally sized signals (Richardson-Lucy iterations).
pub struct FftConvolver {
    dims: [usize; 3],
    kdims: [usize; 3],
    grid: [usize; 3],
    kernel_hat: Vec<Complex64>,
}

impl FftConvolver {
    pub fn new(dims: [usize; 3], kernel: &[f64], kdims: [usize; 3]) -> Self {
        let grid = [0, 1, 2].map(|i| fast_len(dims[i] + kdims[i] - 1));
        let mut k = Grid3::embed(kernel, kdims, grid);
        k.forward();
        FftConvolver {
            dims,
            kdims,
            grid,
            kernel_hat: k.data,
        }
    }

    pub fn apply(&self, signal: &[f64]) -> Vec<f64> {
        let mut g = Grid3::embed(signal, self.dims, self.grid);
        g.forward();
        for (x, k) in g.data.iter_mut().zip(&self.kernel_hat) {
            *x *= k;
        }
        g.inverse();
        let c = self.kdims.map(|k| (k - 1) / 2);
        crop_real(&g, c, self.dims)
    }
}

/// "Same" 2D convolution (rows × cols kernel centred), direct.
pub fn same_2d_direct(
    img: &[f32],
    w: usize,
    h: usize,
    kernel: &[f64],
    kw: usize,
    kh: usize,
) -> Vec<f32> {
    same_direct(img, [w, h, 1], kernel, [kw, kh, 1])
}

/// "Same" 2D convolution, FFT for large kernels.
pub fn same_2d(img: &[f32], w: usize, h: usize, kernel: &[f64], kw: usize, kh: usize) -> Vec<f32> {
    same(img, [w, h, 1], kernel, [kw, kh, 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(n: usize, rng: &mut Rng) -> Vec<f64> {
        (0..n).map(|_| rng.uniform()).collect()
    }

    #[test]
    fn fast_len_smooth() {
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(11), 12);
        assert_eq!(fast_len(97), 100);
        assert_eq!(fast_len(1), 1);
    }

    #[test]
    fn full_direct_matches_fft() {
        let mut rng = Rng::new(5);
        let a = random(5 * 4 * 3, &mut rng);
        let b = random(3 * 3 * 5, &mut rng);
        let (d, dd) = full_direct(&a, [5, 4, 3], &b, [3, 3, 5]);
        let (f, fd) = full_fft(&a, [5, 4, 3], &b, [3, 3, 5]);
        assert_eq!(dd, fd);
        for (x, y) in d.iter().zip(&f) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn same_is_true_convolution_not_correlation() {
        // asymmetric kernel [0, 0, 1] centred at 1 shifts the signal by +1
        let sig = [1.0f32, 2.0, 3.0, 4.0];
        let out = same_direct(&sig, [4, 1, 1], &[0.0, 0.0, 1.0], [3, 1, 1]);
        assert_eq!(out, vec![0.0, 1.0, 2.0, 3.0]);
        let out = same_fft(&sig, [4, 1, 1], &[0.0, 0.0, 1.0], [3, 1, 1]);
        for (a, b) in out.iter().zip([0.0, 1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn convolver_matches_same_fft() {
        let mut rng = Rng::new(8);
        let sig = random(6 * 5 * 4, &mut rng);
        let k = random(3 * 3 * 3, &mut rng);
        let c = FftConvolver::new([6, 5, 4], &k, [3, 3, 3]);
        let a = c.apply(&sig);
        let sig32: Vec<f32> = sig.iter().map(|&v| v as f32).collect();
        let b = same_direct(&sig32, [6, 5, 4], &k, [3, 3, 3]);
        for (x, y) in a.iter().zip(&b) {
            assert!((*x as f32 - y).abs() < 1e-5);
        }
    }
}
