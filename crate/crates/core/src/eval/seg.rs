use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::mask::{fill_holes, Connectivity, Mask};
use crate::eval::threshold::{threshold, ThresholdMethod};
use crate::eval::watershed::{watershed_edt, WatershedConfig};
use crate::labels::LabelVolume;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub threshold: ThresholdMethod,
    pub watershed: WatershedConfig,
    /// Background connectivity used when filling holes.
    pub hole_connectivity: Connectivity,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            threshold: ThresholdMethod::Intermodes,
            watershed: WatershedConfig::default(),
            hole_connectivity: Connectivity::Six,
        }
    }
}

/// Threshold, fill holes, split touching objects with the distance
/// watershed.
pub fn segment(vol: &Volume, cfg: &SegmentConfig) -> Result<LabelVolume> {
    let t = threshold(vol, cfg.threshold)?;
    let mask = fill_holes(&Mask::threshold(vol, t), cfg.hole_connectivity);
    log::info!(
        "segmentation threshold {t:.4}: {} foreground voxels",
        mask.count()
    );
    watershed_edt(&mask, &cfg.watershed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    /// Mean IoU over ground-truth objects, unmatched objects count as 0.
    pub seg: f64,
    /// Per ground-truth label (ascending), IoU with its match or 0.
    pub per_object: Vec<(u32, f64)>,
    pub matched: usize,
    pub gt_objects: usize,
}

/// SEG score: each reference object R is matched with the predicted
/// object S covering more than half of R (at most one such S exists).
pub fn seg_score(gt: &LabelVolume, pred: &LabelVolume) -> Result<SegReport> {
    if gt.dims() != pred.dims() {
        return Err(Error::Shape(format!(
            "label dims {:?} vs {:?}",
            gt.dims(),
            pred.dims()
        )));
    }
    let gt_counts = gt.counts();
    let pred_counts = pred.counts();
    let mut inter: HashMap<(u32, u32), usize> = HashMap::new();
    for (&r, &s) in gt.data().iter().zip(pred.data()) {
        if r != 0 && s != 0 {
            *inter.entry((r, s)).or_default() += 1;
        }
    }
    let mut best: HashMap<u32, (u32, usize)> = HashMap::new();
    for (&(r, s), &n) in &inter {
        if 2 * n > gt_counts[r as usize] {
            best.insert(r, (s, n));
        }
    }
    let mut per_object = Vec::new();
    for (r, &size) in gt_counts.iter().enumerate().skip(1) {
        if size == 0 {
            continue;
        }
        let iou = match best.get(&(r as u32)) {
            Some(&(s, n)) => n as f64 / (size + pred_counts[s as usize] - n) as f64,
            None => 0.0,
        };
        per_object.push((r as u32, iou));
    }
    if per_object.is_empty() {
        return Err(Error::InvalidParameter(
            "ground truth has no objects".into(),
        ));
    }
    let seg = per_object.iter().map(|p| p.1).sum::<f64>() / per_object.len() as f64;
    Ok(SegReport {
        seg,
        matched: best.len(),
        gt_objects: per_object.len(),
        per_object,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(data: &[u32]) -> LabelVolume {
        LabelVolume::new([data.len(), 1, 1], data.to_vec()).unwrap()
    }

    #[test]
    fn identical_labels_score_one() {
        let a = labels(&[0, 1, 1, 2, 2, 2, 0, 3]);
        assert_eq!(seg_score(&a, &a).unwrap().seg, 1.0);
    }

    #[test]
    fn known_overlap() {
        // R = 4 voxels, S = 6 voxels, overlap 3 > 2 ⇒ IoU 3 / 7.
        let gt = labels(&[1, 1, 1, 1, 0, 0, 0, 0]);
        let pr = labels(&[0, 5, 5, 5, 5, 5, 5, 0]);
        let r = seg_score(&gt, &pr).unwrap();
        assert!((r.seg - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn half_overlap_does_not_match() {
        let gt = labels(&[1, 1, 1, 1]);
        let pr = labels(&[2, 2, 3, 3]);
        assert_eq!(seg_score(&gt, &pr).unwrap().seg, 0.0);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        assert!(seg_score(&labels(&[0, 0]), &labels(&[1, 1])).is_err());
    }
}
