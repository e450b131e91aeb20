use std::path::Path;

use serde_json::json;

use isorestore::eval::{self, psnr_table, seg_score, SegmentConfig};
use isorestore::io::{read_labels, write_labels, write_png, write_volume};
use isorestore::isonet::{
    make_training_pairs, restore_volume, PsfStrategy, RestoreOptions, StrategyMode, TrainedModel,
};
use isorestore::phantom::{
    acquire as simulate_acquisition, generate, AcquisitionSpec, PhantomSpec,
};
use isorestore::pipeline::{run_pipeline, train_network, PipelineConfig, StageSeeds};
use isorestore::psf::{isotropic_average, rotate_to_lateral, split, PsfMeta};
use isorestore::rng::derive_seed;

use crate::config::{
    load, read_input, record, write_json, CliError, PsfConfig, RlConfig, TrainRunConfig,
};
use crate::{Global, Preset};

type Result<T> = std::result::Result<T, CliError>;

pub fn phantom(g: &Global) -> Result<()> {
    let mut spec: PhantomSpec = load(g, "{}")?;
    if let Some(s) = g.seed {
        spec.seed = derive_seed(s, "phantom");
    }
    spec.validate()?;
    record(g, "phantom", g.seed.unwrap_or(spec.seed), &spec)?;
    let p = generate(&spec)?;
    write_volume(&p.volume, g.out.join("phantom.isov"))?;
    write_labels(&p.labels, g.out.join("labels.isov"))?;
    write_json(
        &g.out.join("phantom_summary.json"),
        &json!({ "placed": p.placed, "missing": p.missing }),
    )?;
    log::info!("placed {} objects ({} missing)", p.placed, p.missing);
    Ok(())
}

pub fn psf(g: &Global) -> Result<()> {
    let cfg: PsfConfig = load(g, "{}")?;
    record(g, "psf", g.seed.unwrap_or(0), &cfg)?;
    let params = serde_json::to_value(&cfg.psf).map_err(isorestore::Error::from)?;
    let h = cfg.psf.build()?;
    let h_rot = rotate_to_lateral(&h);
    let h_iso = isotropic_average(&h)?;
    let (h_split, report) = split(&h_rot, &h_iso, cfg.split_eps)?;
    let meta = |kind, split| PsfMeta {
        kind,
        params: params.clone(),
        split,
    };
    h.save(g.out.join("psf.isov"), &meta(h.kind(), None))?;
    h_rot.save(g.out.join("psf_rot.isov"), &meta(h_rot.kind(), None))?;
    h_iso.save(g.out.join("psf_iso.isov"), &meta(h_iso.kind(), None))?;
    h_split.save(
        g.out.join("psf_split.isov"),
        &meta(h_split.kind(), Some(report)),
    )?;
    for (mode, name) in [(StrategyMode::Full, "full"), (StrategyMode::Split, "split")] {
        let s = PsfStrategy::from_psf(mode, &h, 1, cfg.split_eps)?;
        write_json(&g.out.join(format!("kernel2d_{name}.json")), &s.kernel)?;
    }
    write_json(&g.out.join("split_report.json"), &report)?;
    log::info!(
        "split residual {:.4}, negative mass {:.4}",
        report.residual,
        report.negative_mass
    );
    Ok(())
}

pub fn acquire(g: &Global, input: &Path) -> Result<()> {
    let fallback =
        serde_json::to_string(&PipelineConfig::default().acquisition).expect("serializable");
    let mut spec: AcquisitionSpec = load(g, &fallback)?;
    if let Some(s) = g.seed {
        spec.seed = derive_seed(s, "acquire");
    }
    spec.validate()?;
    record(g, "acquire", g.seed.unwrap_or(spec.seed), &spec)?;
    let f = read_input(g, input)?;
    let out = simulate_acquisition(&f, &spec)?;
    log::info!("acquired {:?} -> {:?}", f.dims(), out.dims());
    write_volume(&out, g.out.join("acquired.isov"))?;
    Ok(())
}

fn train_config(g: &Global) -> Result<TrainRunConfig> {
    let mut cfg: TrainRunConfig = load(g, "{}")?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn pairs(g: &Global, input: &Path, preview: usize) -> Result<()> {
    let cfg = train_config(g)?;
    record(g, "pairs", cfg.seed, &cfg)?;
    let vol = read_input(g, input)?;
    let h = cfg.psf.build()?;
    let strategy = PsfStrategy::from_psf(cfg.strategy, &h, cfg.subsample, cfg.split_eps)?;
    let (vn, _) = vol.normalize_percentile(cfg.normalization.0, cfg.normalization.1)?;
    let set = make_training_pairs(
        &vn,
        &strategy,
        &cfg.pairs,
        StageSeeds::from_master(cfg.seed).pairs,
    )?;
    let mut slices: Vec<usize> = set.pairs.iter().map(|p| p.slice).collect();
    slices.sort_unstable();
    slices.dedup();
    write_json(
        &g.out.join("pairs_summary.json"),
        &json!({
            "pairs": set.pairs.len(),
            "patch": set.patch,
            "sigma": set.sigma,
            "blur_axis": set.blur_axis,
            "distinct_slices": slices.len(),
            "kernel": [strategy.kernel.width, strategy.kernel.height],
            "split": strategy.split,
        }),
    )?;
    for (i, p) in set.pairs.iter().take(preview).enumerate() {
        write_png(&p.input, g.out.join(format!("pair_{i:03}_input.png")))?;
        write_png(&p.target, g.out.join(format!("pair_{i:03}_target.png")))?;
    }
    Ok(())
}

pub fn train(g: &Global, input: &Path) -> Result<()> {
    let cfg = train_config(g)?;
    let pc = cfg.to_pipeline();
    record(g, "train", cfg.seed, &cfg)?;
    let vol = read_input(g, input)?;
    let h = cfg.psf.build()?;
    let (model, history) = train_network(cfg.model, cfg.strategy, &vol, &h, &pc)?;
    model.save(&g.out.join("model"))?;
    write_json(&g.out.join("history.json"), &history)?;
    Ok(())
}

pub fn restore(g: &Global, input: &Path, model: &Path, subsample: u32) -> Result<()> {
    let opts: RestoreOptions = load(g, "{}")?;
    record(
        g,
        "restore",
        g.seed.unwrap_or(0),
        &json!({ "options": opts, "model": model, "subsample": subsample }),
    )?;
    let vol = read_input(g, input)?;
    let m = TrainedModel::load(model)?;
    let out = restore_volume(&m, &vol, subsample, &opts)?;
    write_volume(&out, g.out.join("restored.isov"))?;
    Ok(())
}

pub fn rl_deconv(g: &Global, input: &Path) -> Result<()> {
    let cfg: RlConfig = load(g, "{}")?;
    record(g, "rl-deconv", g.seed.unwrap_or(0), &cfg)?;
    let vol = read_input(g, input)?;
    let out = eval::richardson_lucy(&vol, &cfg.psf.build()?, cfg.iterations, cfg.subsample)?;
    write_volume(&out, g.out.join("rl.isov"))?;
    Ok(())
}

pub fn segment(g: &Global, input: &Path) -> Result<()> {
    let cfg: SegmentConfig = load(g, "{}")?;
    record(g, "segment", g.seed.unwrap_or(0), &cfg)?;
    let vol = read_input(g, input)?;
    let labels = eval::segment(&vol, &cfg)?;
    log::info!("{} objects", labels.max_label());
    write_labels(&labels, g.out.join("labels.isov"))?;
    Ok(())
}

pub fn score(g: &Global, gt: &Path, pred: &Path) -> Result<()> {
    record(
        g,
        "score",
        g.seed.unwrap_or(0),
        &json!({ "gt": gt, "pred": pred }),
    )?;
    let report = seg_score(&read_labels(gt)?, &read_labels(pred)?)?;
    write_json(&g.out.join("seg_report.json"), &report)?;
    println!(
        "SEG {:.6} ({}/{} matched)",
        report.seg, report.matched, report.gt_objects
    );
    Ok(())
}

pub fn table(g: &Global, methods: &[String], iso: &Path, gt: &Path) -> Result<()> {
    record(
        g,
        "table",
        g.seed.unwrap_or(0),
        &json!({ "methods": methods, "iso": iso, "gt": gt }),
    )?;
    let rows = methods
        .iter()
        .map(|m| {
            let (name, path) = m
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("expected NAME=PATH, got {m:?}")))?;
            Ok((name.to_string(), read_input(g, Path::new(path))?))
        })
        .collect::<Result<Vec<_>>>()?;
    let t = psnr_table(&rows, &read_input(g, iso)?, &read_input(g, gt)?)?;
    write_json(&g.out.join("psnr_table.json"), &t)?;
    std::fs::write(g.out.join("psnr_table.txt"), t.to_text())
        .map_err(|e| CliError::Io(g.out.clone(), e))?;
    print!("{}", t.to_text());
    Ok(())
}

pub fn preset_text(p: Preset) -> &'static str {
    match p {
        Preset::DeskNuclei => include_str!("../configs/desk-nuclei.json"),
        Preset::DeskMembranes => include_str!("../configs/desk-membranes.json"),
    }
}

pub fn pipeline(g: &Global, preset: Preset) -> Result<()> {
    let mut cfg: PipelineConfig = load(g, preset_text(preset))?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let report = run_pipeline(&cfg, Some(&g.out))?;
    print!("{}", report.psnr.to_text());
    for (name, r) in &report.seg {
        println!("SEG {name}: {:.4}", r.seg);
    }
    Ok(())
}
