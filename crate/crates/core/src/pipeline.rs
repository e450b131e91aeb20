//! End-to-end experiment: phantom, acquisition, every restoration method,
//! scoring. Each stage is a plain function so callers can run a subset.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    psnr_table, richardson_lucy, seg_score, segment, PsnrTable, SegReport, SegmentConfig,
};
use crate::io;
use crate::isonet::{
    allowed_symmetries, build_model, make_training_pairs, restore_volume, train, LossHistory,
    ModelKind, ModelMeta, PairConfig, PsfStrategy, RestoreOptions, StrategyMode, TrainedModel,
};
use crate::nn::TrainConfig;
use crate::phantom::{
    acquire, generate, isotropic_reference, AcquisitionSpec, Phantom, PhantomKind, PhantomSpec,
};
use crate::psf::{isotropic_average, Psf, PsfSource};
use crate::resample::{resample_volume, Factor, Method};
use crate::rng::derive_seed;
use crate::volume::{Axis, Volume};

/// Row name of the unrestored, bicubically upsampled acquisition.
pub const BICUBIC: &str = "bicubic";
/// Row name of the isotropic reference itself (segmentation only).
pub const ISO_GT: &str = "iso-gt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodId {
    Rl,
    SrcnnBaseline,
    Isonet1Full,
    Isonet1Split,
    Isonet2Full,
    Isonet2Split,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::Rl,
        MethodId::SrcnnBaseline,
        MethodId::Isonet1Full,
        MethodId::Isonet1Split,
        MethodId::Isonet2Full,
        MethodId::Isonet2Split,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::Rl => "rl",
            MethodId::SrcnnBaseline => "srcnn-baseline",
            MethodId::Isonet1Full => "isonet1-full",
            MethodId::Isonet1Split => "isonet1-split",
            MethodId::Isonet2Full => "isonet2-full",
            MethodId::Isonet2Split => "isonet2-split",
        }
    }

    /// Network and PSF strategy, `None` for Richardson-Lucy.
    pub fn network(self) -> Option<(ModelKind, StrategyMode)> {
        match self {
            MethodId::Rl => None,
            MethodId::SrcnnBaseline => Some((ModelKind::SrcnnBaseline, StrategyMode::Delta)),
            MethodId::Isonet1Full => Some((ModelKind::Isonet1, StrategyMode::Full)),
            MethodId::Isonet1Split => Some((ModelKind::Isonet1, StrategyMode::Split)),
            MethodId::Isonet2Full => Some((ModelKind::Isonet2, StrategyMode::Full)),
            MethodId::Isonet2Split => Some((ModelKind::Isonet2, StrategyMode::Split)),
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub acquisition: AcquisitionSpec,
    /// Percentiles mapped to 0 and 1 before training and inference.
    pub normalization: (f64, f64),
    pub split_eps: f64,
    pub pairs: PairConfig,
    pub train: TrainConfig,
    pub methods: Vec<MethodId>,
    pub rl_iterations: usize,
    pub restore: RestoreOptions,
    /// Segmentation scoring; skipped for membrane phantoms, whose labels
    /// are cells rather than bright objects.
    pub segment: Option<SegmentConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            phantom: PhantomSpec::default(),
            acquisition: AcquisitionSpec {
                psf: PsfSource::Gaussian {
                    sigma: [1.0, 1.0, 4.0],
                    extent: None,
                },
                subsample: 4,
                photon_scale: Some(200.0),
                detector_sigma: 0.01,
                seed: 0,
            },
            normalization: (2.0, 99.8),
            split_eps: 1e-5,
            pairs: PairConfig {
                patch: 32,
                ..PairConfig::default()
            },
            train: TrainConfig {
                epochs: 30,
                learning_rate: 5e-4,
                ..TrainConfig::default()
            },
            methods: MethodId::ALL.to_vec(),
            rl_iterations: crate::eval::DEFAULT_RL_ITERATIONS,
            restore: RestoreOptions::default(),
            segment: Some(SegmentConfig::default()),
        }
    }
}

/// Stage seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub phantom: u64,
    pub acquisition: u64,
    pub pairs: u64,
    pub init: u64,
    pub train: u64,
}

impl StageSeeds {
    pub fn from_master(master: u64) -> Self {
        StageSeeds {
            phantom: derive_seed(master, "phantom"),
            acquisition: derive_seed(master, "acquire"),
            pairs: derive_seed(master, "pairs"),
            init: derive_seed(master, "init"),
            train: derive_seed(master, "train"),
        }
    }
}

impl PipelineConfig {
    /// Copies derived stage seeds into the nested specs. Every method uses
    /// the same pair, init and training seeds.
    pub fn resolved(&self) -> PipelineConfig {
        let s = StageSeeds::from_master(self.seed);
        let mut c = self.clone();
        c.phantom.seed = s.phantom;
        c.acquisition.seed = s.acquisition;
        c.train.seed = s.train;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.acquisition.validate()?;
        self.train.validate()?;
        let (lo, hi) = self.normalization;
        if !(0.0..100.0).contains(&lo) || !(lo < hi && hi <= 100.0) {
            return Err(Error::InvalidParameter(format!(
                "normalization percentiles ({lo}, {hi})"
            )));
        }
        if self.methods.contains(&MethodId::Rl) && self.rl_iterations == 0 {
            return Err(Error::InvalidParameter(
                "rl_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ground truth, acquisition and references of one simulated experiment.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub phantom: Phantom,
    pub psf: Psf,
    pub h_iso: Psf,
    pub acquired: Volume,
    pub iso_gt: Volume,
    pub bicubic: Volume,
}

/// Phantom, acquisition, isotropic reference and bicubic baseline.
/// `cfg` should already be resolved.
pub fn simulate(cfg: &PipelineConfig) -> Result<Simulation> {
    let phantom = generate(&cfg.phantom)?;
    if phantom.missing > 0 {
        log::warn!(
            "phantom: {} of {} objects could not be placed",
            phantom.missing,
            cfg.phantom.n_objects
        );
    }
    let psf = cfg.acquisition.psf.build()?;
    let acquired = acquire(&phantom.volume, &cfg.acquisition)?;
    let h_iso = isotropic_average(&psf)?;
    let iso_gt = isotropic_reference(&phantom.volume, &h_iso)?;
    let bicubic = upsample(&acquired, cfg.acquisition.subsample)?;
    Ok(Simulation {
        phantom,
        psf,
        h_iso,
        acquired,
        iso_gt,
        bicubic,
    })
}

pub fn upsample(g: &Volume, sigma: u32) -> Result<Volume> {
    if sigma == 1 {
        return Ok(g.clone());
    }
    resample_volume(g, Axis::Z, Factor::up(sigma), Method::Bicubic)
}

/// Builds the PSF strategy, draws pairs from the normalized acquisition and
/// trains one network.
pub fn train_network(
    kind: ModelKind,
    mode: StrategyMode,
    g: &Volume,
    psf: &Psf,
    cfg: &PipelineConfig,
) -> Result<(TrainedModel, LossHistory)> {
    let sigma = cfg.acquisition.subsample;
    let seeds = StageSeeds::from_master(cfg.seed);
    let strategy = PsfStrategy::from_psf(mode, psf, sigma, cfg.split_eps)?;
    if let Some(r) = &strategy.split {
        log::info!(
            "split kernel: residual {:.4}, negative mass {:.4}",
            r.residual,
            r.negative_mass
        );
    }
    let (lo, hi) = cfg.normalization;
    let (gn, _) = g.normalize_percentile(lo, hi)?;
    let pairs = make_training_pairs(&gn, &strategy, &cfg.pairs, seeds.pairs)?;
    let mut net = build_model(kind, cfg.train.dropout_rate, seeds.init)?;
    log::info!(
        "training {} ({:?}): {} pairs, {} parameters",
        kind.name(),
        mode,
        pairs.pairs.len(),
        net.param_count()
    );
    let history = train(&mut net, &pairs, &cfg.train, allowed_symmetries(&strategy))?;
    let meta = ModelMeta {
        kind,
        strategy: mode,
        sigma,
        blur_axis: 0,
        normalization: Some((lo, hi)),
    };
    Ok((TrainedModel { net, meta }, history))
}

/// Output of one restoration method.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: MethodId,
    pub restored: Volume,
    pub model: Option<TrainedModel>,
    pub history: Option<LossHistory>,
    pub seconds: f64,
}

pub fn run_method(method: MethodId, sim: &Simulation, cfg: &PipelineConfig) -> Result<MethodRun> {
    let t0 = std::time::Instant::now();
    let sigma = cfg.acquisition.subsample;
    let (restored, model, history) = match method.network() {
        None => (
            richardson_lucy(&sim.acquired, &sim.psf, cfg.rl_iterations, sigma)?,
            None,
            None,
        ),
        Some((kind, mode)) => {
            let (model, history) = train_network(kind, mode, &sim.acquired, &sim.psf, cfg)?;
            let restored = restore_volume(&model, &sim.acquired, sigma, &cfg.restore)?;
            (restored, Some(model), Some(history))
        }
    };
    let seconds = t0.elapsed().as_secs_f64();
    log::info!("{method}: {seconds:.1} s");
    Ok(MethodRun {
        method,
        restored,
        model,
        history,
        seconds,
    })
}

/// Segments `vol` and scores it against `gt`.
pub fn seg_of(
    vol: &Volume,
    gt: &crate::labels::LabelVolume,
    cfg: &SegmentConfig,
) -> Result<SegReport> {
    seg_score(gt, &segment(vol, cfg)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub psnr: PsnrTable,
    /// Keyed by row name; includes the bicubic input and the isotropic
    /// reference.
    pub seg: BTreeMap<String, SegReport>,
    pub histories: BTreeMap<String, LossHistory>,
    pub seconds: BTreeMap<String, f64>,
}

/// Reproducibility record written next to pipeline outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub stage_seeds: StageSeeds,
    pub threads: usize,
}

impl Provenance {
    pub fn new(command: &str, master_seed: u64) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            master_seed,
            stage_seeds: StageSeeds::from_master(master_seed),
            threads: rayon::current_num_threads(),
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

/// Runs every configured method and, with `out`, writes volumes, models,
/// histories, the PSNR table, the SEG report, the resolved config and
/// provenance.
pub fn run_pipeline(cfg: &PipelineConfig, out: Option<&Path>) -> Result<PipelineReport> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    if let Some(dir) = out {
        for sub in ["", "restored", "models"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        write_json(&dir.join("resolved_config.json"), &cfg)?;
        write_json(
            &dir.join("provenance.json"),
            &Provenance::new("pipeline", cfg.seed),
        )?;
    }
    let sim = simulate(&cfg)?;
    if let Some(dir) = out {
        io::write_volume(&sim.phantom.volume, dir.join("phantom.isov"))?;
        io::write_labels(&sim.phantom.labels, dir.join("labels.isov"))?;
        io::write_volume(&sim.acquired, dir.join("acquired.isov"))?;
        io::write_volume(&sim.iso_gt, dir.join("iso_gt.isov"))?;
        io::write_volume(&sim.bicubic, dir.join("bicubic.isov"))?;
    }
    let mut rows = vec![(BICUBIC.to_string(), sim.bicubic.clone())];
    let mut histories = BTreeMap::new();
    let mut seconds = BTreeMap::new();
    for &m in &cfg.methods {
        let run = run_method(m, &sim, &cfg)?;
        if let Some(dir) = out {
            io::write_volume(
                &run.restored,
                dir.join("restored").join(format!("{m}.isov")),
            )?;
            if let Some(model) = &run.model {
                model.save(&dir.join("models").join(m.name()))?;
            }
        }
        if let Some(h) = run.history {
            histories.insert(m.name().to_string(), h);
        }
        seconds.insert(m.name().to_string(), run.seconds);
        rows.push((m.name().to_string(), run.restored));
    }
    let psnr = psnr_table(&rows, &sim.iso_gt, &sim.phantom.volume)?;
    let mut seg = BTreeMap::new();
    match (&cfg.segment, cfg.phantom.kind) {
        (Some(sc), PhantomKind::Nuclei) => {
            rows.push((ISO_GT.to_string(), sim.iso_gt.clone()));
            for (name, vol) in &rows {
                seg.insert(name.clone(), seg_of(vol, &sim.phantom.labels, sc)?);
            }
        }
        (Some(_), kind) => log::info!("segmentation scoring skipped for {kind:?} phantoms"),
        (None, _) => {}
    }
    let report = PipelineReport {
        psnr,
        seg,
        histories,
        seconds,
    };
    if let Some(dir) = out {
        write_json(&dir.join("psnr_table.json"), &report.psnr)?;
        std::fs::write(dir.join("psnr_table.txt"), report.psnr.to_text())?;
        write_json(&dir.join("seg_report.json"), &report.seg)?;
        write_json(&dir.join("histories.json"), &report.histories)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in MethodId::ALL {
            assert_eq!(m.name().parse::<MethodId>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.name())
            );
        }
    }

    #[test]
    fn resolution_derives_distinct_stage_seeds() {
        let c = PipelineConfig {
            seed: 9,
            ..PipelineConfig::default()
        }
        .resolved();
        assert_ne!(c.phantom.seed, c.acquisition.seed);
        assert_eq!(c.train.seed, StageSeeds::from_master(9).train);
        assert_eq!(c.resolved(), c);
    }

    #[test]
    fn default_config_round_trips_through_json() {
        let c = PipelineConfig::default();
        let back: PipelineConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 3}"#).is_err());
    }
}
