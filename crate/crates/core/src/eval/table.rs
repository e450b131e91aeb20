use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::psnr;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsnrRow {
    pub method: String,
    /// PSNR against the isotropically blurred reference.
    pub vs_iso: f64,
    /// PSNR against the unblurred phantom.
    pub vs_gt: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PsnrTable {
    pub rows: Vec<PsnrRow>,
}

/// PSNR with the peak taken from the reference volume's maximum.
pub fn volume_psnr(x: &Volume, reference: &Volume) -> Result<f64> {
    if x.dims() != reference.dims() {
        return Err(Error::Shape(format!(
            "{:?} vs reference {:?}",
            x.dims(),
            reference.dims()
        )));
    }
    let peak = reference.min_max().1 as f64;
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(
            "reference maximum must be positive".into(),
        ));
    }
    psnr(x.data(), reference.data(), peak)
}

pub fn psnr_table(results: &[(String, Volume)], iso: &Volume, gt: &Volume) -> Result<PsnrTable> {
    let rows = results
        .iter()
        .map(|(m, v)| {
            Ok(PsnrRow {
                method: m.clone(),
                vs_iso: volume_psnr(v, iso)?,
                vs_gt: volume_psnr(v, gt)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PsnrTable { rows })
}

impl PsnrTable {
    pub fn get(&self, method: &str) -> Option<&PsnrRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_text(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut s = format!("{:<w$}  {:>10}  {:>10}\n", "method", "vs iso", "vs gt");
        for r in &self.rows {
            s += &format!("{:<w$}  {:>10.2}  {:>10.2}\n", r.method, r.vs_iso, r.vs_gt);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows_and_text() {
        let gt = Volume::from_fn([4, 4, 4], |x, _, _| x as f32);
        let noisy = gt.map(|v| v + 0.3);
        let t = psnr_table(&[("a".into(), gt.clone()), ("b".into(), noisy)], &gt, &gt).unwrap();
        assert!(t.get("a").unwrap().vs_gt > 100.0);
        // MSE 0.09, peak 3 ⇒ 10·log10(9 / 0.09) = 20 dB.
        assert!((t.get("b").unwrap().vs_iso - 20.0).abs() < 1e-5);
        assert_eq!(t.to_text().lines().count(), 3);
    }
}
