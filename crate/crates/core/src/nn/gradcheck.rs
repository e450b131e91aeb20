use super::network::{Mode, Network};
use super::tensor::Tensor4;
use crate::error::Result;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step. Coordinates whose perturbation crosses a
    /// ReLU or max-pool kink are retried with the step divided by 10.
    pub step: f64,
    /// Coordinates probed per parameter tensor and for the input; tensors no
    /// larger than this are checked exhaustively.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            samples: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates that needed a step smaller than the configured one.
    pub reduced_steps: usize,
    /// Location of the worst coordinate, e.g. "layer 3 weight[17]".
    pub worst: String,
}

/// Relative error with the denominator floored at 1e-3 of the largest
/// analytic gradient in the same tensor, so near-zero entries are judged on
/// the tensor's own scale.
fn rel_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic
        .abs()
        .max(numeric.abs())
        .max(1e-3 * scale)
        .max(1e-12);
    (analytic - numeric).abs() / denom
}

fn param(net: &mut Network<f64>, layer: usize, weight: bool, idx: usize) -> &mut f64 {
    let conv = net.layers_mut()[layer].conv.as_mut().expect("conv layer");
    if weight {
        &mut conv.weight.value[idx]
    } else {
        &mut conv.bias.value[idx]
    }
}

/// Smallest step tried before accepting a kink-crossing difference.
const MIN_STEP: f64 = 1e-8;

/// (f(+h) − f(−h)) / 2h, shrinking h while either evaluation leaves the
/// smooth region of the starting point.
fn central_difference(
    mut h: f64,
    report: &mut GradReport,
    mut f: impl FnMut(f64) -> Result<(f64, bool)>,
) -> Result<f64> {
    let mut reduced = false;
    loop {
        let (up, smooth_up) = f(h)?;
        let (dn, smooth_dn) = f(-h)?;
        if (smooth_up && smooth_dn) || h / 10.0 < MIN_STEP {
            report.reduced_steps += usize::from(reduced);
            return Ok((up - dn) / (2.0 * h));
        }
        h /= 10.0;
        reduced = true;
    }
}

/// Compares analytic gradients of the probe loss L = Σ r·y (r fixed random
/// weights) against central finite differences. Dropout runs in training
/// mode with one fixed mask seed, so the function being differentiated is
/// deterministic.
pub fn grad_check(
    net: &Network<f64>,
    input: &Tensor4<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradReport> {
    let mode = Mode::Train {
        seed: cfg.seed ^ 0x9e37_79b9,
    };
    let mut rng = Rng::new(cfg.seed);
    let trace = net.forward(input, mode)?;
    let probe: Vec<f64> = (0..trace.output().data().len())
        .map(|_| rng.normal())
        .collect();
    let base_pattern = net.kink_pattern(&trace);
    let loss = |net: &Network<f64>, x: &Tensor4<f64>| -> Result<(f64, bool)> {
        let t = net.forward(x, mode)?;
        let v = t
            .output()
            .data()
            .iter()
            .zip(&probe)
            .map(|(a, b)| a * b)
            .sum();
        Ok((v, net.kink_pattern(&t) == base_pattern))
    };
    let grad_out = Tensor4::new(trace.output().shape(), probe.clone())?;
    let grads = net.backward(&trace, &grad_out, true)?;

    let mut report = GradReport {
        max_rel_error: 0.0,
        checked: 0,
        reduced_steps: 0,
        worst: String::new(),
    };
    let pick = |len: usize, rng: &mut Rng| -> Vec<usize> {
        if len <= cfg.samples {
            (0..len).collect()
        } else {
            (0..cfg.samples).map(|_| rng.below(len)).collect()
        }
    };
    let h = cfg.step;

    let record = |report: &mut GradReport, a: f64, n: f64, scale: f64, what: String| {
        let e = rel_error(a, n, scale);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(e);
            report.worst = what;
        }
    };

    let mut probe_net = net.clone();
    for (li, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        for (which, analytic) in [("weight", &g.weight), ("bias", &g.bias)] {
            let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for idx in pick(analytic.len(), &mut rng) {
                let is_weight = which == "weight";
                let orig = *param(&mut probe_net, li, is_weight, idx);
                let numeric = central_difference(h, &mut report, |d| {
                    *param(&mut probe_net, li, is_weight, idx) = orig + d;
                    let r = loss(&probe_net, input);
                    *param(&mut probe_net, li, is_weight, idx) = orig;
                    r
                })?;
                record(
                    &mut report,
                    analytic[idx],
                    numeric,
                    scale,
                    format!("layer {li} {which}[{idx}]"),
                );
            }
        }
    }

    let gin = grads.input.expect("input gradient requested");
    let scale = gin.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut x = input.clone();
    for idx in pick(x.data().len(), &mut rng) {
        let orig = x.data()[idx];
        let numeric = central_difference(h, &mut report, |d| {
            x.data_mut()[idx] = orig + d;
            let r = loss(net, &x);
            x.data_mut()[idx] = orig;
            r
        })?;
        record(
            &mut report,
            gin.data()[idx],
            numeric,
            scale,
            format!("input[{idx}]"),
        );
    }
    Ok(report)
}
