use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::ModelKind;
use super::pairs::StrategyMode;
use crate::error::{Error, Result};
use crate::nn::{Network, Tensor4};
use crate::resample::{resample_volume, Factor, Method};
use crate::volume::{Axis, Image2D, Plane, Volume};

/// Metadata stored with trained weights and checked before restoration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub strategy: StrategyMode,
    pub sigma: u32,
    /// Patch axis carrying the synthetic degradation (0 = columns).
    pub blur_axis: usize,
    /// Percentiles used to normalize the training volume, if any.
    pub normalization: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub net: Network<f32>,
    pub meta: ModelMeta,
}

impl TrainedModel {
    /// Writes `<stem>.json`, `<stem>.bin` and `<stem>.meta.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        self.net.save(stem)?;
        std::fs::write(meta_path(stem), serde_json::to_vec_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let net = Network::load(stem)?;
        let meta = serde_json::from_slice(&std::fs::read(meta_path(stem))?)?;
        Ok(TrainedModel { net, meta })
    }
}

fn meta_path(stem: &Path) -> std::path::PathBuf {
    stem.with_extension("meta.json")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestoreOptions {
    /// Also restore YZ slices and average with the XZ result.
    pub average_yz: bool,
    /// Slices per forward pass.
    pub batch: usize,
}

impl Default for RestoreOptions {
    fn default() -> Self {
        RestoreOptions {
            average_yz: false,
            batch: 4,
        }
    }
}

/// Extends an image to multiples of `m` by mirroring the last rows/columns.
fn pad_to_multiple(img: &Image2D, m: usize) -> Image2D {
    let (w, h) = (img.width(), img.height());
    let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
    if (pw, ph) == (w, h) {
        return img.clone();
    }
    let mirror = |i: usize, n: usize| if i < n { i } else { (2 * n - 2 - i).min(n - 1) };
    let mut out = Image2D::zeros(pw, ph);
    for r in 0..ph {
        for c in 0..pw {
            out.set(c, r, img.get(mirror(c, w), mirror(r, h)));
        }
    }
    out
}

/// Runs the network on images of one size, `batch` at a time.
pub fn predict_images(net: &Network<f32>, imgs: &[Image2D], batch: usize) -> Result<Vec<Image2D>> {
    let chunks: Vec<&[Image2D]> = imgs.chunks(batch.max(1)).collect();
    let out: Vec<Vec<Image2D>> = chunks
        .par_iter()
        .map(|chunk| {
            let (w, h) = (chunk[0].width(), chunk[0].height());
            let padded: Vec<Image2D> = chunk.iter().map(|i| pad_to_multiple(i, 4)).collect();
            let (pw, ph) = (padded[0].width(), padded[0].height());
            let data: Vec<f32> = padded
                .iter()
                .flat_map(|i| i.data().iter().copied())
                .collect();
            let y = net.predict(&Tensor4::new([chunk.len(), 1, ph, pw], data)?)?;
            Ok((0..chunk.len())
                .map(|b| Image2D::new(pw, ph, y.item(b).to_vec()).crop(0, 0, w, h))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Restores slices of `plane` in an upsampled volume. Slices are
/// transposed so z runs along columns, the training blur axis.
fn restore_plane(net: &Network<f32>, up: &Volume, plane: Plane, batch: usize) -> Result<Volume> {
    let n = up.dims()[plane.normal().index()];
    let slices: Vec<Image2D> = (0..n)
        .map(|i| Ok(up.extract_slice(plane, i)?.transpose()))
        .collect::<Result<_>>()?;
    let restored = predict_images(net, &slices, batch)?;
    let mut out = up.clone();
    for (i, img) in restored.iter().enumerate() {
        out.insert_slice(plane, i, &img.transpose())?;
    }
    Ok(out)
}

/// Bicubic z-upsampling by σ followed by slice-wise restoration. The
/// result has dims (nx, ny, nz·σ) and the input's intensity scale.
pub fn restore_volume(
    model: &TrainedModel,
    g: &Volume,
    sigma: u32,
    opts: &RestoreOptions,
) -> Result<Volume> {
    if sigma != model.meta.sigma {
        return Err(Error::MetadataMismatch(format!(
            "model was trained for subsample factor {}, data has {sigma}",
            model.meta.sigma
        )));
    }
    if model.meta.blur_axis != 0 {
        return Err(Error::MetadataMismatch(format!(
            "unsupported blur axis {}",
            model.meta.blur_axis
        )));
    }
    let (input, norm) = match model.meta.normalization {
        Some((lo, hi)) => {
            let (v, n) = g.normalize_percentile(lo, hi)?;
            (v, Some(n))
        }
        None => (g.clone(), None),
    };
    let up = if sigma > 1 {
        resample_volume(&input, Axis::Z, Factor::up(sigma), Method::Bicubic)?
    } else {
        input
    };
    let mut out = restore_plane(&model.net, &up, Plane::XZ, opts.batch)?;
    if opts.average_yz {
        let yz = restore_plane(&model.net, &up, Plane::YZ, opts.batch)?;
        for (a, b) in out.data_mut().iter_mut().zip(yz.data()) {
            *a = 0.5 * (*a + b);
        }
    }
    Ok(match norm {
        Some(n) => n.invert(&out),
        None => out,
    })
}
