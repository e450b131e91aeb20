//! Axis resampling: plane slicing (keep every σ-th sample) and
//! Catmull-Rom bicubic interpolation with clamped borders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Axis, Image2D, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nearest,
    Bicubic,
}

/// A positive rational resampling factor `num / den` (output per input sample).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub num: u32,
    pub den: u32,
}

impl Factor {
    pub fn up(sigma: u32) -> Self {
        Factor { num: sigma, den: 1 }
    }

    pub fn down(sigma: u32) -> Self {
        Factor { num: 1, den: sigma }
    }

    /// Output extent for an input extent `n`.
    pub fn output_extent(&self, n: usize, method: Method) -> Result<usize> {
        if self.num == 0 || self.den == 0 {
            return Err(Error::InvalidParameter(format!(
                "resampling factor {}/{} must be positive",
                self.num, self.den
            )));
        }
        let (num, den) = (self.num as usize, self.den as usize);
        if num == 1 && method == Method::Nearest {
            // plane slicing keeps indices 0, den, 2 den, ...
            return Ok(n.div_ceil(den));
        }
        if (n * num) % den != 0 {
            return Err(Error::InvalidParameter(format!(
                "extent {n} times {num}/{den} is not an integer"
            )));
        }
        Ok(n * num / den)
    }
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
pub fn catmull_rom(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample taps: four (index, weight) pairs, or a single
/// sample for nearest.
struct Plan {
    taps: Vec<[(usize, f32); 4]>,
}

fn plan(n: usize, m: usize, factor: Factor, method: Method) -> Plan {
    let step = factor.den as f64 / factor.num as f64;
    let taps = (0..m)
        .map(|j| {
            let pos = j as f64 * step;
            match method {
                Method::Nearest => {
                    let i = (libm::round(pos) as usize).min(n - 1);
                    [(i, 1.0), (i, 0.0), (i, 0.0), (i, 0.0)]
                }
                Method::Bicubic => {
                    let base = libm::floor(pos);
                    let t = pos - base;
                    let mut tap = [(0usize, 0f32); 4];
                    for (k, slot) in tap.iter_mut().enumerate() {
                        let off = k as f64 - 1.0;
                        let idx = (base + off).clamp(0.0, (n - 1) as f64) as usize;
                        *slot = (idx, catmull_rom(t - off) as f32);
                    }
                    tap
                }
            }
        })
        .collect();
    Plan { taps }
}

/// Resamples a flat buffer laid out as `[outer][n][inner]` along the middle axis.
fn resample_buffer(
    data: &[f32],
    inner: usize,
    n: usize,
    outer: usize,
    m: usize,
    plan: &Plan,
) -> Vec<f32> {
    let mut out = vec![0f32; outer * m * inner];
    for o in 0..outer {
        let src = &data[o * n * inner..(o + 1) * n * inner];
        let dst = &mut out[o * m * inner..(o + 1) * m * inner];
        for (j, tap) in plan.taps.iter().enumerate() {
            let row = &mut dst[j * inner..(j + 1) * inner];
            for &(i, w) in tap {
                if w == 0.0 {
                    continue;
                }
                let s = &src[i * inner..(i + 1) * inner];
                for (d, &v) in row.iter_mut().zip(s) {
                    *d += w * v;
                }
            }
        }
    }
    out
}

fn check_method(n: usize, method: Method) -> Result<()> {
    if method == Method::Bicubic && n < 4 {
        return Err(Error::InvalidParameter(format!(
            "bicubic resampling needs an extent of at least 4, got {n}"
        )));
    }
    Ok(())
}

/// Resamples a volume along one axis. Spacing along the axis is scaled by
/// `den / num`.
pub fn resample_volume(vol: &Volume, axis: Axis, factor: Factor, method: Method) -> Result<Volume> {
    let dims = vol.dims();
    let a = axis.index();
    let n = dims[a];
    check_method(n, method)?;
    let m = factor.output_extent(n, method)?;
    let inner: usize = dims[..a].iter().product();
    let outer: usize = dims[a + 1..].iter().product();
    let p = plan(n, m, factor, method);
    let data = resample_buffer(vol.data(), inner, n, outer, m, &p);
    let mut out_dims = dims;
    out_dims[a] = m;
    let mut spacing = vol.spacing();
    spacing[a] *= factor.den as f32 / factor.num as f32;
    Volume::new(out_dims, spacing, data)
}

/// Resamples an image along columns (`axis == 0`) or rows (`axis == 1`).
pub fn resample_image(
    img: &Image2D,
    axis: usize,
    factor: Factor,
    method: Method,
) -> Result<Image2D> {
    let dims = [img.width(), img.height()];
    assert!(axis < 2, "image axis must be 0 or 1");
    let n = dims[axis];
    check_method(n, method)?;
    let m = factor.output_extent(n, method)?;
    let (inner, outer) = if axis == 0 {
        (1, dims[1])
    } else {
        (dims[0], 1)
    };
    let p = plan(n, m, factor, method);
    let data = resample_buffer(img.data(), inner, n, outer, m, &p);
    Ok(if axis == 0 {
        Image2D::new(m, dims[1], data)
    } else {
        Image2D::new(dims[0], m, data)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let s: f64 = (-1..=2).map(|k| catmull_rom(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_upsampled_stays_constant() {
        let img = Image2D::new(6, 5, vec![2.5; 30]);
        let up = resample_image(&img, 1, Factor::up(4), Method::Bicubic).unwrap();
        assert_eq!((up.width(), up.height()), (6, 20));
        assert!(up.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn ramp_upsampled_stays_linear() {
        let n = 16;
        let vol = Volume::from_fn([n, 1, 1], |x, _, _| 0.75 * x as f32 - 3.0);
        let up = resample_volume(&vol, Axis::X, Factor::up(2), Method::Bicubic).unwrap();
        assert_eq!(up.nx(), 2 * n);
        // interior: all four taps inside the input, polynomial evaluated directly
        for j in 2..2 * n - 4 {
            let expected = 0.75 * (j as f64 / 2.0) - 3.0;
            assert!((up.get(j, 0, 0) as f64 - expected).abs() < 1e-5, "j={j}");
        }
    }

    #[test]
    fn slicing_keeps_every_sigma_th() {
        let vol = Volume::from_fn([1, 1, 16], |_, _, z| z as f32);
        let d = resample_volume(&vol, Axis::Z, Factor::down(8), Method::Nearest).unwrap();
        assert_eq!(d.data(), &[0.0, 8.0]);
        let odd = Volume::from_fn([1, 1, 17], |_, _, z| z as f32);
        let d = resample_volume(&odd, Axis::Z, Factor::down(8), Method::Nearest).unwrap();
        assert_eq!(d.data(), &[0.0, 8.0, 16.0]);
        assert_eq!(d.spacing()[2], 8.0);
    }

    #[test]
    fn errors() {
        let vol = Volume::zeros([3, 8, 8]);
        assert!(resample_volume(&vol, Axis::X, Factor::up(2), Method::Bicubic).is_err());
        assert!(
            resample_volume(&vol, Axis::Y, Factor { num: 0, den: 1 }, Method::Nearest).is_err()
        );
        assert!(
            resample_volume(&vol, Axis::Y, Factor { num: 2, den: 3 }, Method::Bicubic).is_err()
        );
    }

    #[test]
    fn nearest_upsampling_replicates() {
        let img = Image2D::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let up = resample_image(&img, 0, Factor::up(2), Method::Nearest).unwrap();
        // positions 0, .5, 1, 1.5 ... rounded half away from zero
        assert_eq!(up.data(), &[1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 4.0]);
    }
}
