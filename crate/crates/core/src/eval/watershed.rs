use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::edt::edt;
use crate::eval::mask::{gaussian_smooth, neighbours, Connectivity, Mask};
use crate::labels::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WatershedConfig {
    /// Gaussian σ (voxels) applied to the distance map before seeding.
    pub smoothing_sigma: f64,
    /// Minimum separation (voxels) between seeds.
    pub min_distance: f64,
    pub connectivity: Connectivity,
}

impl Default for WatershedConfig {
    fn default() -> Self {
        WatershedConfig {
            smoothing_sigma: 1.0,
            min_distance: 5.0,
            connectivity: Connectivity::Six,
        }
    }
}

/// Total order on f64 keys without NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Key(f64);
impl Eq for Key {}
impl Ord for Key {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

fn coords(dims: [usize; 3], i: usize) -> [f64; 3] {
    [
        (i % dims[0]) as f64,
        ((i / dims[0]) % dims[1]) as f64,
        (i / (dims[0] * dims[1])) as f64,
    ]
}

/// Local maxima of `d` inside the mask, greedily thinned to
/// `min_distance`, plus the peak of every component left without a seed.
fn seeds(mask: &Mask, d: &[f64], cfg: &WatershedConfig) -> Vec<usize> {
    let dims = mask.dims();
    let offsets = Connectivity::TwentySix.offsets();
    let mut nb = Vec::with_capacity(26);
    let mut cand: Vec<usize> = (0..d.len())
        .filter(|&i| mask.data()[i] && d[i] > 0.0)
        .filter(|&i| {
            neighbours(dims, i, &offsets, &mut nb);
            nb.iter().all(|&j| d[j] <= d[i])
        })
        .collect();
    cand.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let r2 = cfg.min_distance * cfg.min_distance;
    let mut chosen: Vec<usize> = Vec::new();
    for c in cand {
        let p = coords(dims, c);
        let far = chosen.iter().all(|&s| {
            let q = coords(dims, s);
            (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>() >= r2
        });
        if far {
            chosen.push(c);
        }
    }
    let comps = mask.components(cfg.connectivity);
    let n = comps.max_label() as usize;
    let mut seeded = vec![false; n + 1];
    for &s in &chosen {
        seeded[comps.data()[s] as usize] = true;
    }
    let mut best: Vec<Option<usize>> = vec![None; n + 1];
    for (i, &c) in comps.data().iter().enumerate() {
        let c = c as usize;
        if c == 0 || seeded[c] {
            continue;
        }
        if best[c].is_none_or(|b| d[i] > d[b]) {
            best[c] = Some(i);
        }
    }
    chosen.extend(best.into_iter().flatten());
    chosen
}

/// Seeded priority-flood watershed of the negated, smoothed distance
/// transform of `mask`. Every foreground voxel receives a label;
/// ties are broken by linear voxel index.
pub fn watershed_edt(mask: &Mask, cfg: &WatershedConfig) -> Result<LabelVolume> {
    if mask.count() == 0 {
        return Err(Error::InvalidParameter(
            "watershed needs a non-empty foreground".into(),
        ));
    }
    let dims = mask.dims();
    let raw: Vec<f64> = edt(&mask.not())
        .into_iter()
        .map(|v| if v.is_finite() { v } else { 0.0 })
        .collect();
    let mut d = gaussian_smooth(&raw, dims, cfg.smoothing_sigma);
    for (v, &m) in d.iter_mut().zip(mask.data()) {
        if !m {
            *v = 0.0;
        }
    }
    let seeds = seeds(mask, &d, cfg);
    let mut labels = vec![0u32; d.len()];
    let mut heap = BinaryHeap::new();
    for (k, &s) in seeds.iter().enumerate() {
        labels[s] = k as u32 + 1;
        heap.push(Reverse((Key(-d[s]), s)));
    }
    let offsets = cfg.connectivity.offsets();
    let mut nb = Vec::with_capacity(26);
    while let Some(Reverse((Key(level), i))) = heap.pop() {
        neighbours(dims, i, &offsets, &mut nb);
        for &j in &nb {
            if mask.data()[j] && labels[j] == 0 {
                labels[j] = labels[i];
                heap.push(Reverse((Key(level.max(-d[j])), j)));
            }
        }
    }
    LabelVolume::new(dims, labels)
}
