//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! Numeric arguments (or `ACCEPTANCE=1,4`) select a subset of criteria.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use isorestore::eval::{
    edt, intermodes_threshold, richardson_lucy, richardson_lucy_observed, seg_score, volume_psnr,
    Mask, SegmentConfig,
};
use isorestore::isonet::{build_model, ModelKind};
use isorestore::nn::{grad_check, GradCheckConfig, LayerSpec, Network, Tensor4};
use isorestore::phantom::{blur, generate, PhantomKind, PhantomSpec};
use isorestore::pipeline::{
    run_method, run_pipeline, seg_of, simulate, MethodId, PipelineConfig, Simulation,
};
use isorestore::psf::{self, Psf, DEFAULT_MAX_EXTENT, DEFAULT_SPLIT_EPS};
use isorestore::{io, LabelVolume, Rng, Volume};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn random_input(shape: [usize; 4], seed: u64, away_from_zero: bool) -> Tensor4<f64> {
    let mut rng = Rng::new(seed ^ 0xabcdef);
    let data = (0..shape.iter().product())
        .map(|_| {
            let v = rng.normal();
            if away_from_zero {
                v.signum() * (v.abs() + 0.1)
            } else {
                v
            }
        })
        .collect();
    Tensor4::new(shape, data).unwrap()
}

fn layer_net(in_ch: usize, specs: &[LayerSpec], seed: u64) -> Network<f64> {
    let mut net: Network<f32> = Network::new(in_ch, specs).unwrap();
    net.init_he_uniform(seed);
    let mut net: Network<f64> = net.cast();
    let mut rng = Rng::new(seed + 100);
    for c in net.convs_mut() {
        for b in &mut c.bias.value {
            *b = 0.1 * rng.normal();
        }
    }
    net
}

fn rel_error(net: &Network<f64>, x: &Tensor4<f64>, seed: u64, samples: usize) -> f64 {
    let cfg = GradCheckConfig {
        seed,
        samples,
        ..GradCheckConfig::default()
    };
    grad_check(net, x, &cfg).unwrap().max_rel_error
}

fn gradient_correctness() -> Outcome {
    let t0 = Instant::now();
    let conv = |o, kh, kw| LayerSpec::Conv { out_ch: o, kh, kw };
    // (name, in_ch, layers, input shape, away from zero, samples, tolerance)
    let cases: Vec<(&str, usize, Vec<LayerSpec>, [usize; 4], bool, usize, f64)> = vec![
        (
            "conv 3x5",
            1,
            vec![conv(3, 3, 5)],
            [1, 1, 8, 8],
            false,
            64,
            1e-3,
        ),
        (
            "conv 1x1",
            3,
            vec![conv(2, 1, 1)],
            [2, 3, 4, 4],
            false,
            64,
            1e-3,
        ),
        (
            "relu",
            1,
            vec![LayerSpec::Relu],
            [2, 1, 6, 6],
            true,
            72,
            1e-6,
        ),
        (
            "maxpool",
            2,
            vec![LayerSpec::MaxPool { p: 2, q: 2 }],
            [2, 2, 4, 4],
            false,
            64,
            1e-6,
        ),
        (
            "upsample",
            2,
            vec![LayerSpec::Upsample { p: 2, q: 2 }],
            [2, 2, 4, 4],
            false,
            64,
            1e-6,
        ),
        (
            "dropout",
            2,
            vec![LayerSpec::Dropout { rate: 0.2 }],
            [2, 2, 4, 4],
            false,
            64,
            1e-6,
        ),
        (
            "concat+residual",
            1,
            vec![
                conv(2, 3, 3),
                LayerSpec::Concat { source: 0 },
                conv(1, 3, 3),
                LayerSpec::ResidualAdd { source: 0 },
            ],
            [2, 1, 6, 6],
            false,
            32,
            1e-3,
        ),
    ];
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut pass = true;
    for seed in 0..10u64 {
        for (name, in_ch, specs, shape, away, samples, tol) in &cases {
            let e = rel_error(
                &layer_net(*in_ch, specs, seed),
                &random_input(*shape, seed, *away),
                seed,
                *samples,
            );
            pass &= e < *tol;
            let w = worst.entry(name).or_default();
            *w = w.max(e);
        }
        let net1: Network<f64> = build_model(ModelKind::Isonet1, 0.2, seed).unwrap().cast();
        let e1 = rel_error(&net1, &random_input([1, 1, 16, 16], seed, false), seed, 6);
        let mut net2: Network<f64> = build_model(ModelKind::Isonet2, 0.2, seed).unwrap().cast();
        let mut rng = Rng::new(seed);
        for w in &mut net2.convs_mut().last().unwrap().weight.value {
            *w = rng.uniform_range(-0.5, 0.5);
        }
        let e2 = rel_error(&net2, &random_input([1, 1, 16, 16], seed, false), seed, 6);
        pass &= e1 < 1e-2 && e2 < 1e-2;
        for (n, e) in [("isonet1", e1), ("isonet2", e2)] {
            let w = worst.entry(n).or_default();
            *w = w.max(e);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let worst: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    outcome(
        pass && secs < 60.0,
        format!(
            "10 seeds, worst rel. error: {}; {secs:.1} s",
            worst.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 2

fn psf_split_fidelity() -> Outcome {
    let h = psf::gaussian([2.0, 2.0, 8.0], None, DEFAULT_MAX_EXTENT).unwrap();
    let rot = psf::rotate_to_lateral(&h);
    let iso = psf::isotropic_average(&h).unwrap();
    let (_, rep) = psf::split(&rot, &iso, DEFAULT_SPLIT_EPS).unwrap();

    let h_rot = psf::gaussian([8.0, 3.0, 3.0], None, DEFAULT_MAX_EXTENT).unwrap();
    let h_iso = psf::gaussian([2.0; 3], None, DEFAULT_MAX_EXTENT).unwrap();
    let (s, _) = psf::split(&h_rot, &h_iso, DEFAULT_SPLIT_EPS).unwrap();
    let got = s.moment_sigma();
    let want = [60f64.sqrt(), 5f64.sqrt(), 5f64.sqrt()];
    let errs: Vec<f64> = (0..3).map(|a| (got[a] - want[a]).abs() / want[a]).collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(
        rep.residual < 0.05 && worst < 0.05,
        format!(
            "residual {:.4} (< 0.05); analytic σ_split worst axis error {:.2}% (< 5%)",
            rep.residual,
            100.0 * worst
        ),
    )
}

// ---------------------------------------------------------------- 3

fn richardson_lucy_sanity() -> Outcome {
    let t0 = Instant::now();
    let spec = PhantomSpec {
        kind: PhantomKind::Nuclei,
        dims: [32, 32, 32],
        n_objects: 8,
        radius_range: (3.0, 5.0),
        seed: 11,
        ..PhantomSpec::default()
    };
    let gt = generate(&spec).unwrap().volume;
    let h = psf::gaussian([1.0, 1.0, 2.5], None, 33).unwrap();
    let g = blur(&gt, &h).unwrap();
    let base = volume_psnr(&g, &gt).unwrap();
    let mut trace = Vec::new();
    richardson_lucy_observed(&g, &h, 25, 1, |_, f| {
        trace.push(volume_psnr(f, &gt).unwrap())
    })
    .unwrap();
    let monotone = trace[0] > base && trace.windows(2).take(9).all(|w| w[1] > w[0]);
    let gain = trace[24] - base;
    let fixed = richardson_lucy(&g, &Psf::delta(), 10, 1).unwrap();
    let drift = fixed
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        monotone && gain >= 5.0 && drift < 1e-6 && secs < 120.0,
        format!(
            "monotone over 10 iterations: {monotone}; gain {gain:.2} dB (≥ 5); delta drift {drift:.1e} (< 1e-6); {secs:.1} s"
        ),
    )
}

// ---------------------------------------------------------------- 4 & 6

fn preset(name: &str) -> PipelineConfig {
    let text = match name {
        "nuclei" => include_str!("../configs/desk-nuclei.json"),
        _ => include_str!("../configs/desk-membranes.json"),
    };
    serde_json::from_str(text).unwrap()
}

struct NucleiRun {
    sim: Simulation,
    restored: Volume,
}

fn nuclei_trend(cache: &mut Option<NucleiRun>) -> Outcome {
    let t0 = Instant::now();
    let cfg = PipelineConfig {
        methods: vec![MethodId::Isonet2Split],
        ..preset("nuclei")
    }
    .resolved();
    let sim = simulate(&cfg).unwrap();
    let run = match run_method(MethodId::Isonet2Split, &sim, &cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let bic = volume_psnr(&sim.bicubic, &sim.iso_gt).unwrap();
    let res = volume_psnr(&run.restored, &sim.iso_gt).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let detail = format!(
        "{} nuclei, {} pairs x {} epochs: bicubic {bic:.2} dB, isonet2-split {res:.2} dB vs iso-GT (gain {:.2}, need ≥ 2); {:.1} min",
        sim.phantom.placed,
        cfg.pairs.n_patches,
        cfg.train.epochs,
        res - bic,
        secs / 60.0
    );
    *cache = Some(NucleiRun {
        sim,
        restored: run.restored,
    });
    outcome(res - bic >= 2.0 && secs <= 1800.0, detail)
}

fn segmentation_trend(cache: &Option<NucleiRun>) -> Outcome {
    let Some(run) = cache else {
        return outcome(
            false,
            "needs the criterion-4 restoration, which did not complete",
        );
    };
    let t0 = Instant::now();
    let sc = SegmentConfig::default();
    let labels = &run.sim.phantom.labels;
    let seg = |v: &Volume| seg_of(v, labels, &sc).map(|r| r.seg);
    let (iso, bic, res) = match (
        seg(&run.sim.iso_gt),
        seg(&run.sim.bicubic),
        seg(&run.restored),
    ) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        (a, b, c) => return outcome(false, format!("segmentation failed: {a:?} {b:?} {c:?}")),
    };
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        res >= bic + 0.05 && iso - res <= 0.10 && secs < 600.0,
        format!(
            "SEG iso-GT {iso:.4}, bicubic {bic:.4}, restored {res:.4} (restored − bicubic {:.4} ≥ 0.05; iso − restored {:.4} ≤ 0.10); {secs:.1} s",
            res - bic,
            iso - res
        ),
    )
}

// ---------------------------------------------------------------- 5

fn membrane_trend() -> Outcome {
    let t0 = Instant::now();
    let cfg = PipelineConfig {
        methods: vec![MethodId::Isonet2Split, MethodId::SrcnnBaseline],
        ..preset("membranes")
    }
    .resolved();
    let sim = simulate(&cfg).unwrap();
    let mut psnr = BTreeMap::new();
    for m in [MethodId::Isonet2Split, MethodId::SrcnnBaseline] {
        match run_method(m, &sim, &cfg) {
            Ok(r) => psnr.insert(m, volume_psnr(&r.restored, &sim.iso_gt).unwrap()),
            Err(e) => return outcome(false, format!("{m} failed: {e}")),
        };
    }
    let (iso2, srcnn) = (
        psnr[&MethodId::Isonet2Split],
        psnr[&MethodId::SrcnnBaseline],
    );
    let bic = volume_psnr(&sim.bicubic, &sim.iso_gt).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        iso2 >= srcnn + 1.0,
        format!(
            "{} pairs x {} epochs each: isonet2-split {iso2:.2} dB, srcnn-baseline {srcnn:.2} dB (difference {:.2}, need ≥ 1), bicubic {bic:.2} dB; {:.1} min",
            cfg.pairs.n_patches,
            cfg.train.epochs,
            iso2 - srcnn,
            secs / 60.0
        ),
    )
}

// ---------------------------------------------------------------- 7

fn brute_edt(m: &Mask) -> Vec<f64> {
    let d = m.dims();
    let xyz = |i: usize| [i % d[0], (i / d[0]) % d[1], i / (d[0] * d[1])].map(|v| v as f64);
    let feats: Vec<[f64; 3]> = (0..m.data().len())
        .filter(|&i| m.data()[i])
        .map(xyz)
        .collect();
    (0..m.data().len())
        .map(|i| {
            let p = xyz(i);
            feats
                .iter()
                .map(|f| {
                    ((p[0] - f[0]).powi(2) + (p[1] - f[1]).powi(2) + (p[2] - f[2]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    let l = LabelVolume::new([3, 3, 1], vec![0, 1, 1, 2, 2, 0, 3, 3, 3]).unwrap();
    let identical = seg_score(&l, &l).unwrap().seg;

    // 2×2×2 GT cube; prediction covers 5 of its voxels plus 3 outside.
    let dims = [5, 2, 2];
    let gt = LabelVolume::new(dims, (0..20).map(|i| u32::from(i % 5 < 2)).collect()).unwrap();
    let mut pred = vec![0u32; 20];
    for i in [0, 1, 5, 6, 10, 2, 3, 4] {
        pred[i] = 7;
    }
    let iou = seg_score(&gt, &LabelVolume::new(dims, pred).unwrap())
        .unwrap()
        .seg;

    let mut rng = Rng::new(2024);
    let mut edt_ok = true;
    let mut checked = 0usize;
    for n in 1..=12usize {
        for density in [0.002, 0.05, 0.3] {
            let dims = [n, 13 - n.min(12), 12];
            let m = Mask::from_fn(dims, |_, _, _| rng.uniform() < density);
            for (a, b) in edt(&m).iter().zip(brute_edt(&m)) {
                edt_ok &= *a == b || (a - b).abs() < 1e-9;
                checked += 1;
            }
        }
    }
    let cube = Mask::from_fn([12, 12, 12], |x, y, z| (x * 7 + y * 3 + z * 5) % 97 == 0);
    edt_ok &= edt(&cube)
        .iter()
        .zip(brute_edt(&cube))
        .all(|(a, b)| (a - b).abs() < 1e-9);

    let mut inter_ok = true;
    for seed in 0..10 {
        let mut rng = Rng::new(seed);
        let v = Volume::from_fn([32, 32, 16], |x, _, _| {
            ((if x < 20 { 0.2 } else { 0.8 }) + 0.05 * rng.normal()) as f32
        });
        let t = intermodes_threshold(&v).unwrap();
        inter_ok &= t > 0.2 && t < 0.8;
    }
    outcome(
        identical == 1.0 && (iou - 5.0 / 11.0).abs() < 1e-15 && edt_ok && inter_ok,
        format!(
            "SEG(identical) {identical}; majority-overlap IoU {iou:.6} (5/11 = {:.6}); EDT vs brute force on {checked} voxels + 12³: {edt_ok}; intermodes between modes on 10 seeds: {inter_ok}",
            5.0 / 11.0
        ),
    )
}

// ---------------------------------------------------------------- 8

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn tiny_pipeline() -> PipelineConfig {
    serde_json::from_str(
        r#"{"seed": 8, "phantom": {"dims": [32, 32, 32], "n_objects": 6, "radius_range": [3.0, 5.0]},
            "acquisition": {"psf": {"type": "gaussian", "sigma": [1.0, 1.0, 2.0]}, "subsample": 4,
                            "photon_scale": 200.0, "detector_sigma": 0.01},
            "pairs": {"patch": 16, "n_patches": 24},
            "train": {"epochs": 1, "batch_size": 8, "learning_rate": 5e-4}, "rl_iterations": 3}"#,
    )
    .unwrap()
}

/// Runs every subcommand in `dir` and returns all files written.
fn cli_chain(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).unwrap();
    }
    std::fs::create_dir_all(dir).unwrap();
    let w = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    };
    let gauss = r#"{"type": "gaussian", "sigma": [1.0, 1.0, 2.0]}"#;
    let pc = w(
        "phantom.json",
        r#"{"dims": [32, 32, 32], "n_objects": 6, "radius_range": [3.0, 5.0]}"#,
    );
    let ac = w(
        "acq.json",
        &format!(
            r#"{{"psf": {gauss}, "subsample": 4, "photon_scale": 200.0, "detector_sigma": 0.01}}"#
        ),
    );
    let tc = w(
        "train.json",
        &format!(
            r#"{{"model": "isonet2", "strategy": "split", "psf": {gauss}, "subsample": 4,
                "pairs": {{"patch": 16, "n_patches": 24}}, "train": {{"epochs": 1, "batch_size": 8, "learning_rate": 5e-4}}}}"#
        ),
    );
    let rc = w(
        "rl.json",
        &format!(r#"{{"psf": {gauss}, "iterations": 3}}"#),
    );
    let sc = w("psf.json", &format!(r#"{{"psf": {gauss}}}"#));
    let o = |sub: &str| dir.join(sub).to_string_lossy().into_owned();
    let f = |sub: &str, file: &str| dir.join(sub).join(file).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec![
            "phantom".into(),
            "--config".into(),
            pc,
            "--seed".into(),
            "3".into(),
            "--out".into(),
            o("ph"),
        ],
        vec![
            "acquire".into(),
            "--config".into(),
            ac,
            "--seed".into(),
            "3".into(),
            "--out".into(),
            o("aq"),
            "--input".into(),
            f("ph", "phantom.isov"),
        ],
        vec![
            "psf".into(),
            "--config".into(),
            sc,
            "--out".into(),
            o("psf"),
        ],
        vec![
            "pairs".into(),
            "--config".into(),
            tc.clone(),
            "--seed".into(),
            "3".into(),
            "--out".into(),
            o("pairs"),
            "--input".into(),
            f("aq", "acquired.isov"),
        ],
        vec![
            "train".into(),
            "--config".into(),
            tc,
            "--seed".into(),
            "3".into(),
            "--out".into(),
            o("train"),
            "--input".into(),
            f("aq", "acquired.isov"),
        ],
        vec![
            "restore".into(),
            "--out".into(),
            o("restore"),
            "--input".into(),
            f("aq", "acquired.isov"),
            "--model".into(),
            f("train", "model"),
            "--subsample".into(),
            "4".into(),
        ],
        vec![
            "rl-deconv".into(),
            "--config".into(),
            rc,
            "--out".into(),
            o("rl"),
            "--input".into(),
            f("aq", "acquired.isov"),
        ],
        vec![
            "segment".into(),
            "--out".into(),
            o("seg"),
            "--input".into(),
            f("restore", "restored.isov"),
        ],
        vec![
            "score".into(),
            "--out".into(),
            o("score"),
            "--gt".into(),
            f("ph", "labels.isov"),
            "--pred".into(),
            f("seg", "labels.isov"),
        ],
        vec![
            "table".into(),
            "--out".into(),
            o("table"),
            "--method".into(),
            format!("restored={}", f("restore", "restored.isov")),
            "--iso".into(),
            f("rl", "rl.isov"),
            "--gt".into(),
            f("ph", "phantom.isov"),
        ],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_isorestore"))
            .arg("--quiet")
            .args(&args)
            .output()
            .unwrap();
        if !out.status.success() {
            return Err(format!(
                "{} failed: {}",
                args[0],
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(files(dir))
}

fn determinism_and_formats() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let mut notes = Vec::new();
    let mut pass = true;

    let (a, b) = (tmp.path().join("pipe-a"), tmp.path().join("pipe-b"));
    let cfg = tiny_pipeline();
    run_pipeline(&cfg, Some(&a)).unwrap();
    run_pipeline(&cfg, Some(&b)).unwrap();
    let (fa, fb) = (files(&a), files(&b));
    let same = fa == fb;
    pass &= same;
    notes.push(format!(
        "pipeline twice: {} files identical {same}",
        fa.len()
    ));

    let chain = tmp.path().join("chain");
    match (cli_chain(&chain), cli_chain(&chain)) {
        (Ok(x), Ok(y)) => {
            let same = x == y;
            pass &= same;
            notes.push(format!(
                "10 subcommands twice: {} files identical {same}",
                x.len()
            ));
        }
        (Err(e), _) | (_, Err(e)) => {
            pass = false;
            notes.push(e);
        }
    }

    let mut rng = Rng::new(77);
    let vol = Volume::from_fn([7, 5, 3], |_, _, _| (rng.normal() * 1e3) as f32)
        .with_spacing([0.1, 0.2, 0.8]);
    let vp = tmp.path().join("v.isov");
    io::write_volume(&vol, &vp).unwrap();
    let back = io::read_volume(&vp).unwrap();
    let v_ok = back.dims() == vol.dims()
        && back.spacing() == vol.spacing()
        && back
            .data()
            .iter()
            .zip(vol.data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    let labels = LabelVolume::new(
        [4, 3, 2],
        (0..24).map(|i| (i * 2654435761u64 % 97) as u32).collect(),
    )
    .unwrap();
    let lp = tmp.path().join("l.isov");
    io::write_labels(&labels, &lp).unwrap();
    let l_ok = io::read_labels(&lp).unwrap() == labels;
    let net = build_model(ModelKind::Isonet2, 0.2, 5).unwrap();
    let stem = tmp.path().join("w");
    net.save(&stem).unwrap();
    let loaded = Network::<f32>::load(&stem).unwrap();
    let w_ok = loaded.weight_blob() == net.weight_blob() && loaded.manifest() == net.manifest();
    pass &= v_ok && l_ok && w_ok;
    notes.push(format!(
        "ISOV volume {v_ok}, ISOV labels {l_ok}, weight blob {w_ok} bit-exact"
    ));
    outcome(pass, notes.join("; "))
}

// ----------------------------------------------------------------

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let mut selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    if let Ok(v) = std::env::var("ACCEPTANCE") {
        selected.extend(v.split(',').filter_map(|s| s.trim().parse::<u32>().ok()));
    }
    let want =
        |n: u32| selected.is_empty() || selected.contains(&n) || (n == 4 && selected.contains(&6));
    let mut nuclei = None;
    let mut failed = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !want(n) {
            return;
        }
        let t0 = Instant::now();
        let o = f();
        let line = format!(
            "criterion {n} {} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        println!("{line}");
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "gradient correctness", &mut gradient_correctness);
    report(2, "PSF split fidelity", &mut psf_split_fidelity);
    report(3, "Richardson-Lucy sanity", &mut richardson_lucy_sanity);
    report(4, "nuclei restoration trend", &mut || {
        nuclei_trend(&mut nuclei)
    });
    report(5, "membrane PSF-awareness trend", &mut membrane_trend);
    report(6, "segmentation trend", &mut || segmentation_trend(&nuclei));
    report(7, "metric oracles", &mut metric_oracles);
    report(8, "determinism and formats", &mut determinism_and_formats);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
