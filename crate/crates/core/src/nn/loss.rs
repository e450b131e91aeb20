use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

/// MSE floor; caps PSNR at 20·log10(peak) + 120 dB.
pub const MSE_FLOOR: f64 = 1e-12;

/// 20·log10(peak) − 10·log10(max(MSE, floor)).
pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64> {
    psnr_generic(a, b, peak)
}

pub fn psnr_generic<T: Real>(a: &[T], b: &[T], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "psnr operands have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "psnr peak must be positive, got {peak}"
        )));
    }
    let mse = mse(a, b).max(MSE_FLOOR);
    Ok(20.0 * peak.log10() - 10.0 * mse.log10())
}

fn mse<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64
}

/// Σ_n −PSNR_n over batch items, each with peak = max of its target patch.
/// Returns the loss and its gradient with respect to `pred`.
pub fn psnr_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    let mut grad = Tensor4::zeros(pred.shape());
    let mut loss = 0.0;
    let scale = 10.0 / std::f64::consts::LN_10;
    for b in 0..pred.batch() {
        let (p, t) = (pred.item(b), target.item(b));
        let peak = t
            .iter()
            .map(|v| v.to_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "target patch {b} has non-positive peak {peak}"
            )));
        }
        let raw = mse(p, t);
        loss -= psnr_generic(p, t, peak)?;
        // The floor is flat, so its gradient is zero.
        if raw > MSE_FLOOR {
            let k = scale * 2.0 / (raw * p.len() as f64);
            for ((g, &x), &y) in grad.item_mut(b).iter_mut().zip(p).zip(t) {
                *g = T::from_f64(k * (x.to_f64() - y.to_f64()));
            }
        }
    }
    Ok((loss, grad))
}
