use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{LayerSpec, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Isonet1,
    Isonet2,
    /// IsoNet-1 layers trained with a delta kernel (pure down/up-sampling).
    SrcnnBaseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Isonet1 => "isonet1",
            ModelKind::Isonet2 => "isonet2",
            ModelKind::SrcnnBaseline => "srcnn-baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "isonet1" => Some(ModelKind::Isonet1),
            "isonet2" => Some(ModelKind::Isonet2),
            "srcnn-baseline" | "srcnn" => Some(ModelKind::SrcnnBaseline),
            _ => None,
        }
    }

    pub fn layers(self, dropout: f64) -> Vec<LayerSpec> {
        match self {
            ModelKind::Isonet1 | ModelKind::SrcnnBaseline => isonet1_layers(dropout),
            ModelKind::Isonet2 => isonet2_layers(dropout),
        }
    }
}

/// Appends layers and tracks the index of the activation each one produces.
struct Builder {
    specs: Vec<LayerSpec>,
    dropout: f64,
}

impl Builder {
    fn push(&mut self, s: LayerSpec) -> usize {
        self.specs.push(s);
        self.specs.len()
    }

    /// Conv → ReLU → Dropout; returns the activation after dropout.
    fn hidden(&mut self, out_ch: usize, k: usize) -> usize {
        self.push(LayerSpec::Conv {
            out_ch,
            kh: k,
            kw: k,
        });
        self.push(LayerSpec::Relu);
        self.push(LayerSpec::Dropout { rate: self.dropout })
    }
}

/// C64,9,9 → C32,5,5 → C1,5,5 → C1,1,1.
fn isonet1_layers(dropout: f64) -> Vec<LayerSpec> {
    let mut b = Builder {
        specs: Vec::new(),
        dropout,
    };
    b.hidden(64, 9);
    b.hidden(32, 5);
    b.hidden(1, 5);
    b.push(LayerSpec::Conv {
        out_ch: 1,
        kh: 1,
        kw: 1,
    });
    b.specs
}

/// Two-level U-Net with concatenating skips and an input residual.
fn isonet2_layers(dropout: f64) -> Vec<LayerSpec> {
    let mut b = Builder {
        specs: Vec::new(),
        dropout,
    };
    let skip_a = b.hidden(16, 7);
    b.push(LayerSpec::MaxPool { p: 2, q: 2 });
    let skip_b = b.hidden(32, 7);
    b.push(LayerSpec::MaxPool { p: 2, q: 2 });
    b.hidden(64, 7);
    b.push(LayerSpec::Upsample { p: 2, q: 2 });
    b.push(LayerSpec::Concat { source: skip_b });
    b.hidden(32, 7);
    b.push(LayerSpec::Upsample { p: 2, q: 2 });
    b.push(LayerSpec::Concat { source: skip_a });
    b.hidden(16, 7);
    b.push(LayerSpec::Conv {
        out_ch: 1,
        kh: 1,
        kw: 1,
    });
    b.push(LayerSpec::ResidualAdd { source: 0 });
    b.specs
}

/// He-uniform initialized model. IsoNet-2's final 1×1 convolution starts at
/// zero so the untrained network is the identity. IsoNet-1's single-weight
/// output head keeps its He magnitude with a positive sign: a negative head
/// makes driving the one-channel ReLU below it to zero the steepest descent
/// direction, which kills it within a few steps.
pub fn build_model(kind: ModelKind, dropout: f64, seed: u64) -> Result<Network<f32>> {
    let mut net = Network::new(1, &kind.layers(dropout))?;
    net.init_he_uniform(seed);
    if let Some(last) = net.convs_mut().last() {
        match kind {
            ModelKind::Isonet2 => last.weight.value.fill(0.0),
            ModelKind::Isonet1 | ModelKind::SrcnnBaseline => {
                for w in &mut last.weight.value {
                    *w = (*w as f32).abs();
                }
            }
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor4;

    #[test]
    fn isonet1_parameter_count() {
        let net = build_model(ModelKind::Isonet1, 0.2, 1).unwrap();
        assert_eq!(
            net.param_count(),
            64 * 81 + 64 + 32 * 25 * 64 + 32 + 25 * 32 + 1 + 1 + 1
        );
        assert_eq!(net.param_count(), 57_283);
    }

    #[test]
    fn isonet2_parameter_count() {
        let net = build_model(ModelKind::Isonet2, 0.2, 1).unwrap();
        let conv = |o: usize, i: usize, k: usize| o * i * k * k + o;
        let expected = conv(16, 1, 7)
            + conv(32, 16, 7)
            + conv(64, 32, 7)
            + conv(32, 96, 7)
            + conv(16, 48, 7)
            + conv(1, 16, 1);
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_model(ModelKind::Isonet2, 0.2, 7).unwrap();
        let b = build_model(ModelKind::Isonet2, 0.2, 7).unwrap();
        assert_eq!(a.weight_blob(), b.weight_blob());
        assert_ne!(
            a.weight_blob(),
            build_model(ModelKind::Isonet2, 0.2, 8)
                .unwrap()
                .weight_blob()
        );
    }

    #[test]
    fn isonet2_preserves_shape_and_starts_as_identity() {
        let net = build_model(ModelKind::Isonet2, 0.2, 3).unwrap();
        let x = Tensor4::new(
            [1, 1, 64, 64],
            (0..4096).map(|i| (i % 17) as f32 / 17.0).collect(),
        )
        .unwrap();
        let y = net.predict(&x).unwrap();
        assert_eq!(y.shape(), [1, 1, 64, 64]);
        assert_eq!(y, x);
    }

    #[test]
    fn isonet1_preserves_shape() {
        let net = build_model(ModelKind::Isonet1, 0.2, 3).unwrap();
        let y = net.predict(&Tensor4::zeros([2, 1, 12, 20])).unwrap();
        assert_eq!(y.shape(), [2, 1, 12, 20]);
    }
}
