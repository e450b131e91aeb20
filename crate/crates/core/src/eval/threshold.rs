use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub const HISTOGRAM_BINS: usize = 256;
pub const MAX_SMOOTHING_PASSES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ThresholdMethod {
    /// Intermodes, falling back to Otsu when the histogram never becomes
    /// bimodal.
    Intermodes,
    Otsu,
    Fixed {
        value: f32,
    },
}

/// Histogram of `data` over [min, max] and the bin width.
fn histogram(data: &[f32]) -> Result<(Vec<f64>, f64, f64)> {
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in data.iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return Err(Error::DegenerateHistogram(format!(
            "intensity range [{lo}, {hi}] is empty"
        )));
    }
    let width = (hi as f64 - lo as f64) / HISTOGRAM_BINS as f64;
    let mut h = vec![0.0; HISTOGRAM_BINS];
    for &v in data.iter().filter(|v| v.is_finite()) {
        let b = (((v as f64 - lo as f64) / width) as usize).min(HISTOGRAM_BINS - 1);
        h[b] += 1.0;
    }
    Ok((h, lo as f64, width))
}

/// Centres of interior plateaus (runs of equal bins, possibly of length
/// one) strictly above the bins on either side. Counting only single-bin
/// peaks would miss flat-topped modes while still counting tail bumps.
fn local_maxima(h: &[f64]) -> Vec<f64> {
    let n = h.len();
    let mut out = Vec::new();
    let mut a = 1;
    while a + 1 < n {
        let mut b = a;
        while b + 1 < n && h[b + 1] == h[a] {
            b += 1;
        }
        if b + 1 < n && h[a - 1] < h[a] && h[b + 1] < h[a] {
            out.push((a + b) as f64 / 2.0);
        }
        a = b + 1;
    }
    out
}

/// 3-bin running mean with zeros outside the histogram.
fn smooth(h: &mut [f64]) {
    let n = h.len();
    let mut prev = 0.0;
    for i in 0..n {
        let cur = h[i];
        let next = if i + 1 < n { h[i + 1] } else { 0.0 };
        h[i] = (prev + cur + next) / 3.0;
        prev = cur;
    }
}

/// Midpoint bin (fractional) of the two modes and the smoothing passes used.
pub fn intermodes_bins(hist: &[f64]) -> Result<(f64, usize)> {
    let mut h = hist.to_vec();
    for pass in 0..=MAX_SMOOTHING_PASSES {
        let m = local_maxima(&h);
        if m.len() == 2 {
            return Ok(((m[0] + m[1]) / 2.0, pass));
        }
        smooth(&mut h);
    }
    Err(Error::NotBimodal(MAX_SMOOTHING_PASSES))
}

/// Global threshold halfway between the two histogram modes.
pub fn intermodes_threshold(vol: &Volume) -> Result<f32> {
    let (h, lo, w) = histogram(vol.data())?;
    let (mid, _) = intermodes_bins(&h)?;
    Ok((lo + (mid + 0.5) * w) as f32)
}

/// Otsu's between-class-variance maximizing threshold.
pub fn otsu_threshold(vol: &Volume) -> Result<f32> {
    let (h, lo, w) = histogram(vol.data())?;
    let total: f64 = h.iter().sum();
    let sum_all: f64 = h.iter().enumerate().map(|(i, c)| i as f64 * c).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0);
    for (k, &c) in h.iter().enumerate().take(HISTOGRAM_BINS - 1) {
        w0 += c;
        sum0 += k as f64 * c;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    // Foreground is bins above best_k.
    Ok((lo + (best_k + 1) as f64 * w) as f32)
}

pub fn threshold(vol: &Volume, method: ThresholdMethod) -> Result<f32> {
    match method {
        ThresholdMethod::Fixed { value } => Ok(value),
        ThresholdMethod::Otsu => otsu_threshold(vol),
        ThresholdMethod::Intermodes => match intermodes_threshold(vol) {
            Err(Error::NotBimodal(n)) => {
                log::warn!("intermodes did not converge after {n} passes; using Otsu");
                otsu_threshold(vol)
            }
            r => r,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn two_gaussians(m0: f64, m1: f64, s: f64, seed: u64) -> Volume {
        let mut rng = Rng::new(seed);
        Volume::from_fn([40, 40, 20], |x, _, _| {
            let m = if x < 28 { m0 } else { m1 };
            (m + s * rng.normal()) as f32
        })
    }

    #[test]
    fn separated_modes_threshold_between() {
        let t = intermodes_threshold(&two_gaussians(0.2, 0.8, 0.05, 1)).unwrap();
        assert!(t > 0.4 && t < 0.6, "{t}");
    }

    #[test]
    fn bimodal_histogram_needs_no_smoothing() {
        let mut h = vec![0.0; 16];
        h[3] = 5.0;
        h[11] = 2.0;
        assert_eq!(intermodes_bins(&h).unwrap(), (7.0, 0));
    }

    #[test]
    fn flat_topped_modes_count_once() {
        let mut h = vec![0.0; 16];
        h[2] = 1.0;
        h[3] = 4.0;
        h[4] = 4.0;
        h[11] = 2.0;
        assert_eq!(local_maxima(&h), vec![3.5, 11.0]);
        assert_eq!(intermodes_bins(&h).unwrap(), (7.25, 0));
        // a plateau touching the border is not interior
        assert!(local_maxima(&[3.0, 3.0, 1.0, 2.0, 0.0]) == vec![3.0]);
    }

    #[test]
    fn constant_volume_is_degenerate() {
        assert!(matches!(
            intermodes_threshold(&Volume::filled([4, 4, 4], 2.0)),
            Err(Error::DegenerateHistogram(_))
        ));
    }

    #[test]
    fn otsu_splits_two_gaussians() {
        let t = otsu_threshold(&two_gaussians(0.2, 0.8, 0.05, 2)).unwrap();
        assert!(t > 0.3 && t < 0.7, "{t}");
    }
}
