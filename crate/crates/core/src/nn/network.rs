use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{self, Conv, ConvGrad};
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

/// One node of a feed-forward graph. Node `i` reads activation `i` and
/// writes activation `i + 1`; activation 0 is the network input.
/// `source` fields name an earlier activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { out_ch: usize, kh: usize, kw: usize },
    MaxPool { p: usize, q: usize },
    Upsample { p: usize, q: usize },
    Relu,
    Dropout { rate: f64 },
    Concat { source: usize },
    ResidualAdd { source: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub conv: Option<Conv<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active; masks derive from `seed` and the node index.
    Train {
        seed: u64,
    },
}

/// Activations and per-node caches of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub activations: Vec<Tensor4<T>>,
    argmax: Vec<Option<Vec<u32>>>,
    masks: Vec<Option<Vec<T>>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Tensor4<T> {
        self.activations.last().expect("trace holds the input")
    }
}

/// Gradients for every layer (None for parameterless layers) and the input.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub layers: Vec<Option<ConvGrad<T>>>,
    pub input: Option<Tensor4<T>>,
}

impl<T: Real> Gradients<T> {
    /// Sum of squares over all parameter gradients.
    pub fn norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.weight.iter().chain(&g.bias))
            .map(|v| v.to_f64() * v.to_f64())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    in_ch: usize,
    layers: Vec<Layer<T>>,
    /// Completed optimizer steps.
    pub step: u64,
}

impl<T: Real> Network<T> {
    /// Builds a zero-weight network, inferring every layer's input channels.
    pub fn new(in_ch: usize, specs: &[LayerSpec]) -> Result<Self> {
        let mut channels = vec![in_ch];
        let mut layers = Vec::with_capacity(specs.len());
        for (i, &spec) in specs.iter().enumerate() {
            let c = channels[i];
            let check_source = |s: usize| {
                if s > i {
                    Err(Error::InvalidParameter(format!(
                        "layer {i} refers to later activation {s}"
                    )))
                } else {
                    Ok(s)
                }
            };
            let (out, conv) = match spec {
                LayerSpec::Conv { out_ch, kh, kw } => {
                    (out_ch, Some(Conv::zeros(c, out_ch, kh, kw)?))
                }
                LayerSpec::MaxPool { p, q } | LayerSpec::Upsample { p, q } => {
                    if p == 0 || q == 0 {
                        return Err(Error::InvalidParameter(format!(
                            "layer {i} has a zero resampling factor"
                        )));
                    }
                    (c, None)
                }
                LayerSpec::Relu => (c, None),
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::InvalidParameter(format!(
                            "dropout rate {rate} outside [0, 1)"
                        )));
                    }
                    (c, None)
                }
                LayerSpec::Concat { source } => (c + channels[check_source(source)?], None),
                LayerSpec::ResidualAdd { source } => {
                    if channels[check_source(source)?] != c {
                        return Err(Error::InvalidParameter(format!(
                            "layer {i} adds activations with different channel counts"
                        )));
                    }
                    (c, None)
                }
            };
            channels.push(out);
            layers.push(Layer { spec, conv });
        }
        Ok(Network {
            in_ch,
            layers,
            step: 0,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        let mut c = vec![self.in_ch];
        for (i, l) in self.layers.iter().enumerate() {
            let next = match l.spec {
                LayerSpec::Conv { out_ch, .. } => out_ch,
                LayerSpec::Concat { source } => c[i] + c[source],
                _ => c[i],
            };
            c.push(next);
        }
        c[self.layers.len()]
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv<T>> {
        self.layers.iter().filter_map(|l| l.conv.as_ref())
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv<T>> {
        self.layers.iter_mut().filter_map(|l| l.conv.as_mut())
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(Conv::param_count).sum()
    }

    /// Copy in another precision; weights, moments and step carry over.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            in_ch: self.in_ch,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    conv: l.conv.as_ref().map(Conv::cast),
                })
                .collect(),
            step: self.step,
        }
    }

    /// He-uniform initialization, U(±√(6/fan_in)), with zero biases. Layers
    /// are drawn in order from one seeded stream.
    pub fn init_he_uniform(&mut self, seed: u64) {
        let mut rng = Rng::new(seed);
        for conv in self.convs_mut() {
            let bound = (6.0 / conv.fan_in() as f64).sqrt();
            for w in &mut conv.weight.value {
                *w = T::from_f64(rng.uniform_range(-bound, bound));
            }
            conv.bias.value.fill(T::ZERO);
        }
    }

    pub fn dropout_seed(seed: u64, layer: usize) -> u64 {
        derive_seed(seed, &format!("dropout/{layer}"))
    }

    pub fn forward(&self, x: &Tensor4<T>, mode: Mode) -> Result<Trace<T>> {
        if x.channels() != self.in_ch {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {}",
                self.in_ch,
                x.channels()
            )));
        }
        let n = self.layers.len();
        let mut acts: Vec<Tensor4<T>> = Vec::with_capacity(n + 1);
        let mut argmax = vec![None; n];
        let mut masks = vec![None; n];
        acts.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = &acts[i];
            let out = match layer.spec {
                LayerSpec::Conv { .. } => layer.conv.as_ref().expect("conv layer").forward(prev)?,
                LayerSpec::MaxPool { p, q } => {
                    let (y, a) = layers::maxpool_forward(prev, p, q)?;
                    argmax[i] = Some(a);
                    y
                }
                LayerSpec::Upsample { p, q } => layers::upsample_forward(prev, p, q)?,
                LayerSpec::Relu => layers::relu_forward(prev),
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Train { seed } if rate > 0.0 => {
                        let m = layers::dropout_mask(
                            prev.data().len(),
                            rate,
                            Self::dropout_seed(seed, i),
                        );
                        let y = layers::apply_mask(prev, &m);
                        masks[i] = Some(m);
                        y
                    }
                    _ => prev.clone(),
                },
                LayerSpec::Concat { source } => layers::concat_forward(prev, &acts[source])?,
                LayerSpec::ResidualAdd { source } => layers::residual_add(prev, &acts[source])?,
            };
            acts.push(out);
        }
        Ok(Trace {
            activations: acts,
            argmax,
            masks,
        })
    }

    /// Inference with dropout disabled.
    pub fn predict(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.predict_with(x, Mode::Eval)
    }

    pub fn predict_with(&self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        Ok(self.forward(x, mode)?.activations.pop().expect("output"))
    }

    /// ReLU signs and max-pool argmax positions of a forward pass; the
    /// network is differentiable in a neighbourhood where this is constant.
    pub fn kink_pattern(&self, trace: &Trace<T>) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l.spec {
                LayerSpec::Relu => out.extend(
                    trace.activations[i]
                        .data()
                        .iter()
                        .map(|&v| u32::from(v > T::ZERO)),
                ),
                LayerSpec::MaxPool { .. } => {
                    out.extend_from_slice(trace.argmax[i].as_deref().unwrap_or(&[]))
                }
                _ => {}
            }
        }
        out
    }

    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor4<T>,
        want_input_grad: bool,
    ) -> Result<Gradients<T>> {
        let n = self.layers.len();
        if grad_out.shape() != trace.output().shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.shape(),
                trace.output().shape()
            )));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = vec![None; n + 1];
        grads[n] = Some(grad_out.clone());
        let mut layer_grads: Vec<Option<ConvGrad<T>>> = vec![None; n];
        let accumulate = |slot: &mut Option<Tensor4<T>>, g: Tensor4<T>| match slot {
            Some(s) => s.add_assign(&g),
            None => *slot = Some(g),
        };
        for i in (0..n).rev() {
            let Some(g) = grads[i + 1].take() else {
                continue;
            };
            let x = &trace.activations[i];
            let needed = i > 0 || want_input_grad;
            let layer = &self.layers[i];
            match layer.spec {
                LayerSpec::Conv { .. } => {
                    let conv = layer.conv.as_ref().expect("conv layer");
                    let mut cg = conv.zero_grad();
                    let gx = conv.backward(x, &g, &mut cg, needed)?;
                    layer_grads[i] = Some(cg);
                    if let Some(gx) = gx {
                        accumulate(&mut grads[i], gx);
                    }
                }
                LayerSpec::MaxPool { .. } => {
                    let a = trace.argmax[i].as_ref().expect("pool cache");
                    accumulate(&mut grads[i], layers::maxpool_backward(x.shape(), a, &g));
                }
                LayerSpec::Upsample { p, q } => {
                    accumulate(&mut grads[i], layers::upsample_backward(&g, p, q));
                }
                LayerSpec::Relu => {
                    let gx = layers::relu_backward(&trace.activations[i + 1], &g);
                    accumulate(&mut grads[i], gx);
                }
                LayerSpec::Dropout { .. } => {
                    let gx = match &trace.masks[i] {
                        Some(m) => layers::apply_mask(&g, m),
                        None => g,
                    };
                    accumulate(&mut grads[i], gx);
                }
                LayerSpec::Concat { source } => {
                    let (ga, gb) = layers::concat_backward(&g, x.channels());
                    accumulate(&mut grads[i], ga);
                    accumulate(&mut grads[source], gb);
                }
                LayerSpec::ResidualAdd { source } => {
                    accumulate(&mut grads[source], g.clone());
                    accumulate(&mut grads[i], g);
                }
            }
        }
        Ok(Gradients {
            layers: layer_grads,
            input: if want_input_grad {
                grads[0].take()
            } else {
                None
            },
        })
    }
}

/// Architecture manifest stored next to a weight blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub in_channels: usize,
    pub layers: Vec<ManifestLayer>,
    pub step: u64,
    pub blob_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub spec: LayerSpec,
    /// Byte offset of the weights in the blob; biases follow immediately.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub offset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub in_ch: Option<usize>,
}

pub const WEIGHTS_FORMAT: &str = "isorestore-weights/1";

impl Network<f32> {
    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (off, in_ch) = match &l.conv {
                    Some(c) => {
                        let o = offset;
                        offset += 4 * c.param_count();
                        (Some(o), Some(c.in_ch))
                    }
                    None => (None, None),
                };
                ManifestLayer {
                    spec: l.spec,
                    offset: off,
                    in_ch,
                }
            })
            .collect();
        Manifest {
            format: WEIGHTS_FORMAT.into(),
            in_channels: self.in_ch,
            layers,
            step: self.step,
            blob_len: offset,
        }
    }

    /// Little-endian f32 weights then biases, layer by layer.
    pub fn weight_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * self.param_count());
        for c in self.convs() {
            for v in c.weight.value.iter().chain(&c.bias.value) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_parts(manifest: &Manifest, blob: &[u8]) -> Result<Self> {
        if manifest.format != WEIGHTS_FORMAT {
            return Err(Error::MetadataMismatch(format!(
                "unknown weight format {:?}",
                manifest.format
            )));
        }
        if blob.len() != manifest.blob_len {
            return Err(Error::TruncatedPayload {
                expected: manifest.blob_len as u64,
                found: blob.len() as u64,
            });
        }
        let specs: Vec<LayerSpec> = manifest.layers.iter().map(|l| l.spec).collect();
        let mut net = Network::new(manifest.in_channels, &specs)?;
        net.step = manifest.step;
        for (layer, ml) in net.layers.iter_mut().zip(&manifest.layers) {
            let Some(conv) = layer.conv.as_mut() else {
                continue;
            };
            let off = ml
                .offset
                .ok_or_else(|| Error::MetadataMismatch("convolution without blob offset".into()))?;
            let end = off + 4 * conv.param_count();
            if end > blob.len() || ml.in_ch != Some(conv.in_ch) {
                return Err(Error::MetadataMismatch(
                    "manifest layer does not match blob".into(),
                ));
            }
            let mut vals = blob[off..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
            for v in conv
                .weight
                .value
                .iter_mut()
                .chain(conv.bias.value.iter_mut())
            {
                *v = vals.next().expect("length checked");
            }
        }
        Ok(net)
    }

    /// Writes `<stem>.json` (manifest) and `<stem>.bin` (blob).
    pub fn save(&self, stem: &Path) -> Result<()> {
        std::fs::write(
            stem.with_extension("json"),
            serde_json::to_vec_pretty(&self.manifest())?,
        )?;
        std::fs::write(stem.with_extension("bin"), self.weight_blob())?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_slice(&std::fs::read(stem.with_extension("json"))?)?;
        let blob = std::fs::read(stem.with_extension("bin"))?;
        Self::from_parts(&manifest, &blob)
    }
}
