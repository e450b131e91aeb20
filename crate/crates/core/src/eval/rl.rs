use crate::conv::FftConvolver;
use crate::error::{Error, Result};
use crate::psf::Psf;
use crate::resample::{resample_volume, Factor, Method};
use crate::volume::{Axis, Volume};

/// Regularizes the ratio g / (h ⊗ f).
pub const RL_EPS: f64 = 1e-9;
pub const DEFAULT_RL_ITERATIONS: usize = 50;

/// Bicubic z-upsampling by σ, negatives clipped to zero.
fn prepare(g: &Volume, sigma: u32) -> Result<Volume> {
    let up = if sigma > 1 {
        resample_volume(g, Axis::Z, Factor::up(sigma), Method::Bicubic)?
    } else {
        g.clone()
    };
    let negatives = up.data().iter().filter(|&&v| v < 0.0).count();
    if negatives > 0 {
        log::warn!("richardson-lucy: clipping {negatives} negative voxels to 0");
    }
    Ok(up.map(|v| v.max(0.0)))
}

/// f_{k+1} = f_k · (h† ⊗ (g / (h ⊗ f_k + ε))) on the upsampled grid,
/// starting from f_0 = g. `observe` sees every iterate (1-based).
pub fn richardson_lucy_observed(
    g: &Volume,
    h: &Psf,
    iterations: usize,
    sigma: u32,
    mut observe: impl FnMut(usize, &Volume),
) -> Result<Volume> {
    if iterations == 0 {
        return Err(Error::InvalidParameter(
            "richardson-lucy needs at least one iteration".into(),
        ));
    }
    let up = prepare(g, sigma)?;
    let dims = up.dims();
    for a in 0..3 {
        if h.dims()[a] > dims[a] {
            return Err(Error::KernelTooLarge {
                extent: h.dims()[a],
                max: dims[a],
            });
        }
    }
    let forward = FftConvolver::new(dims, h.data(), h.dims());
    let mirrored = h.mirrored();
    let adjoint = FftConvolver::new(dims, mirrored.data(), mirrored.dims());
    let obs: Vec<f64> = up.data().iter().map(|&v| v as f64).collect();
    // h†⊗1 is below one within a kernel radius of the border; dividing by
    // it keeps the true object a fixed point of the bounded-domain update.
    let sensitivity = adjoint.apply(&vec![1.0; obs.len()]);
    let mut f = obs.clone();
    let mut out = up.clone();
    for k in 1..=iterations {
        let blurred = forward.apply(&f);
        let ratio: Vec<f64> = obs
            .iter()
            .zip(&blurred)
            .map(|(o, b)| o / (b.max(0.0) + RL_EPS))
            .collect();
        let corr = adjoint.apply(&ratio);
        for ((v, c), s) in f.iter_mut().zip(&corr).zip(&sensitivity) {
            *v = if *s > RL_EPS {
                (*v * c / s).max(0.0)
            } else {
                0.0
            };
        }
        for (o, &v) in out.data_mut().iter_mut().zip(&f) {
            *o = v as f32;
        }
        observe(k, &out);
    }
    Ok(out)
}

pub fn richardson_lucy(g: &Volume, h: &Psf, iterations: usize, sigma: u32) -> Result<Volume> {
    richardson_lucy_observed(g, h, iterations, sigma, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_psf_is_a_fixed_point() {
        let g = Volume::from_fn([10, 9, 8], |x, y, z| {
            ((x * 3 + y * 5 + z * 7) % 11) as f32 * 0.1 + 0.05
        });
        let f = richardson_lucy(&g, &Psf::delta(), 7, 1).unwrap();
        for (a, b) in f.data().iter().zip(g.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn output_is_nonnegative_and_upsampled() {
        let g = Volume::from_fn(
            [12, 12, 8],
            |x, _, z| if (x + z) % 3 == 0 { 1.0 } else { -0.2 },
        );
        let h = crate::psf::gaussian([1.0, 1.0, 1.2], None, 257).unwrap();
        let f = richardson_lucy(&g, &h, 3, 2).unwrap();
        assert_eq!(f.dims(), [12, 12, 16]);
        assert!(f.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_iterations_is_an_error() {
        assert!(richardson_lucy(&Volume::zeros([4, 4, 4]), &Psf::delta(), 0, 1).is_err());
    }
}
