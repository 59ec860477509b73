use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use motf_core::association::{PredictorKind, PredictorSpec, StageToggles, Tracker, TrackerStats};
use motf_core::forecaster::{
    load_params, samples_from_sequence, save_params, train, ContextSource, ForecasterParams, TrainingLog,
};
use motf_core::io::{
    frames_from_detections, read_embeddings, read_mot, write_embeddings, write_mot, MotRecord, MotSequence,
    RunConfig,
};
use motf_core::metrics::{clear_mot, evaluate_forecasts, ForecastEvalConfig, ForecastReport, TrackingReport};
use motf_core::simdata::{generate, suite, SceneSpec, SUITE_NAMES};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::load_run_config;
use crate::{
    AblateArgs, EvaluateArgs, ForecastEvalArgs, PredictorArg, Preset, SimulateArgs, TrackArgs, TrainArgs,
    UsageError,
};

/// Ablation rows: (appearance + forecast fusion, box IOU, occlusion forecast).
pub const STAGE_GRID: [StageToggles; 6] = [
    toggles(true, false, false),
    toggles(true, true, false),
    toggles(false, true, false),
    toggles(false, true, true),
    toggles(true, false, true),
    toggles(true, true, true),
];

const fn toggles(motion_fusion: bool, iou: bool, occlusion: bool) -> StageToggles {
    StageToggles {
        motion_fusion,
        iou,
        occlusion,
    }
}

/// First seed of the scenes `ablate` trains on; evaluation uses the pinned suite seeds.
pub const TRAIN_SEED_BASE: u64 = 1000;

fn out_dir(dir: &Path) -> Result<&Path> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json(path: PathBuf, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_json(dir.join("config.json"), cfg)
}

fn read_scene(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let spec: SceneSpec = serde_json::from_str(&text)
        .map_err(|e| motf_core::Error::Validation(vec![format!("{}: {e}", path.display())]))?;
    Ok(spec.validated()?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn kind_of(arg: PredictorArg) -> PredictorKind {
    match arg {
        PredictorArg::Cv => PredictorKind::Cv,
        PredictorArg::Kalman => PredictorKind::Kalman,
        PredictorArg::Learned => PredictorKind::Learned,
    }
}

fn predictor_spec(kind: PredictorKind, cfg: &RunConfig, params: Option<&Arc<ForecasterParams>>) -> Result<PredictorSpec> {
    Ok(match kind {
        PredictorKind::Cv => PredictorSpec::Cv,
        PredictorKind::Kalman => PredictorSpec::Kalman(cfg.kalman),
        PredictorKind::Learned => PredictorSpec::Learned(
            params
                .cloned()
                .ok_or_else(|| UsageError("--predictor learned requires --params".into()))?,
        ),
    })
}

fn to_records(outputs: &[motf_core::TrackOutput]) -> Vec<MotRecord> {
    outputs
        .iter()
        .map(|o| MotRecord::new(o.frame, o.id as i64, o.bbox, 1.0))
        .collect()
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = load_run_config(a.common.config.as_deref(), Preset::Full)?;
    let spec = match (&a.suite, &cfg.scene) {
        (Some(name), _) => suite(name, a.seed)?,
        (None, Some(scene)) => SceneSpec {
            seed: a.seed.unwrap_or(scene.seed),
            ..scene.clone()
        },
        (None, None) => {
            return Err(UsageError(format!(
                "nothing to simulate: pass --suite (one of {}) or a `scene` section in --config",
                SUITE_NAMES.join(", ")
            ))
            .into())
        }
    };
    let scene = generate(&spec)?;
    let dir = out_dir(&a.common.out)?;
    write_mot(scene.gt.records(), &dir.join("gt.txt"))?;
    write_mot(scene.detections.records(), &dir.join("det.txt"))?;
    write_embeddings(&scene.embeddings, &dir.join("emb.csv"))?;
    write_json(dir.join("scene.json"), &spec)?;
    log::info!(
        "simulated {} frames: {} gt boxes, {} detections",
        spec.n_frames,
        scene.gt.len(),
        scene.detections.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrackSummary {
    predictor: &'static str,
    stages: StageToggles,
    #[serde(flatten)]
    stats: TrackerStats,
    output_rows: usize,
    forecasted_rows: usize,
    output_ids: usize,
}

pub fn track(a: &TrackArgs) -> Result<()> {
    let mut cfg = load_run_config(a.common.config.as_deref(), Preset::Full)?;
    if let Some(p) = a.predictor {
        cfg.tracker.predictor = kind_of(p);
    }
    if a.no_fusion {
        cfg.tracker.stages.motion_fusion = false;
    }
    if a.no_iou {
        cfg.tracker.stages.iou = false;
    }
    if a.no_occlusion {
        cfg.tracker.stages.occlusion = false;
    }
    cfg.validate()?;
    if cfg.tracker.predictor == PredictorKind::Learned && a.params.is_none() {
        return Err(UsageError("--predictor learned requires --params".into()).into());
    }
    let params = a.params.as_deref().map(load_params).transpose()?.map(Arc::new);
    let spec = predictor_spec(cfg.tracker.predictor, &cfg, params.as_ref())?;
    let scene = a.scene.as_deref().map(read_scene).transpose()?;

    let dets = read_mot(&a.det)?;
    let emb = a.emb.as_deref().map(read_embeddings).transpose()?;
    let context = |f: u32| scene.as_ref().and_then(|s| s.context_at(f));
    let frames = frames_from_detections(&dets, emb.as_ref(), scene.as_ref().map(|s| s.n_frames), &context)?;

    let mut tracker = Tracker::new(cfg.tracker.clone(), spec)?;
    let outputs = tracker.run(&frames)?;
    let records = to_records(&outputs);

    let dir = out_dir(&a.common.out)?;
    write_mot(&records, &dir.join("results.txt"))?;
    let summary = TrackSummary {
        predictor: cfg.tracker.predictor.name(),
        stages: cfg.tracker.stages,
        stats: tracker.stats(),
        output_rows: outputs.len(),
        forecasted_rows: outputs
            .iter()
            .filter(|o| o.flag == motf_core::association::OutputFlag::Forecasted)
            .count(),
        output_ids: MotSequence::from_records(records).tracks().len(),
    };
    write_json(dir.join("stats.json"), &summary)?;
    echo_config(dir, &cfg)
}

fn training_context(
    cfg: &RunConfig,
    gt_count: usize,
    scenes: &[PathBuf],
) -> Result<Vec<Option<SceneSpec>>> {
    if cfg.forecaster.context == ContextSource::Zero {
        return Ok(vec![None; gt_count]);
    }
    if scenes.len() != gt_count {
        return Err(UsageError(format!(
            "forecaster.context = scene needs one --scene per --gt ({gt_count} gt, {} scenes)",
            scenes.len()
        ))
        .into());
    }
    scenes
        .iter()
        .map(|p| {
            let s = read_scene(p)?;
            if s.context_dim != cfg.forecaster.embed_dim {
                return Err(motf_core::Error::Validation(vec![format!(
                    "{}: context_dim {} differs from forecaster.embed_dim {}",
                    p.display(),
                    s.context_dim,
                    cfg.forecaster.embed_dim
                )])
                .into());
            }
            Ok(Some(s))
        })
        .collect()
}

fn train_on(sequences: &[(MotSequence, Option<SceneSpec>)], cfg: &RunConfig) -> Result<(ForecasterParams, TrainingLog, usize)> {
    let mut samples = Vec::new();
    for (gt, scene) in sequences {
        let context = |f: u32| scene.as_ref().and_then(|s| s.context_at(f));
        samples.extend(samples_from_sequence(gt, &cfg.forecaster, cfg.training.anchor_stride, &context));
    }
    if samples.is_empty() {
        return Err(motf_core::Error::Validation(vec![
            "no usable training windows: every track is shorter than 3 boxes".into(),
        ])
        .into());
    }
    log::info!("training on {} windows", samples.len());
    let (params, log) = train(&samples, &cfg.forecaster, &cfg.training)?;
    Ok((params, log, samples.len()))
}

fn write_model(dir: &Path, params: &ForecasterParams, log: &TrainingLog, samples: usize) -> Result<()> {
    let path = dir.join("forecaster.json");
    save_params(&path, params)?;
    let digest = sha256_hex(&fs::read(&path)?);
    write(dir.join("loss.csv"), log.to_csv())?;
    write_json(dir.join("training_log.json"), log)?;
    write_json(
        dir.join("summary.json"),
        &json!({
            "samples": samples,
            "epochs": log.epochs.len(),
            "final_loss": log.epochs.last().map(|e| e.loss),
            "parameter_count": params.parameter_count(),
            "checkpoint_sha256": digest,
        }),
    )
}

pub fn train_forecaster(a: &TrainArgs) -> Result<()> {
    let cfg = load_run_config(a.common.config.as_deref(), a.preset)?;
    let scenes = training_context(&cfg, a.gt.len(), &a.scene)?;
    let sequences = a
        .gt
        .iter()
        .zip(scenes)
        .map(|(p, s)| Ok((read_mot(p)?, s)))
        .collect::<Result<Vec<_>>>()?;
    let (params, log, samples) = train_on(&sequences, &cfg)?;
    let dir = out_dir(&a.common.out)?;
    write_model(dir, &params, &log, samples)?;
    echo_config(dir, &cfg)
}

#[derive(Serialize)]
struct NamedForecastReport<'a> {
    predictor: &'a str,
    strict: bool,
    #[serde(flatten)]
    report: &'a ForecastReport,
}

pub fn forecast_eval(a: &ForecastEvalArgs) -> Result<()> {
    let mut cfg = load_run_config(a.common.config.as_deref(), Preset::Full)?;
    let kind = match (a.predictor, &a.params) {
        (Some(p), _) => kind_of(p),
        (None, Some(_)) => PredictorKind::Learned,
        (None, None) => PredictorKind::Cv,
    };
    if kind == PredictorKind::Learned && a.params.is_none() {
        return Err(UsageError("--predictor learned requires --params".into()).into());
    }
    if let Some(q) = a.q {
        cfg.forecaster.q = q;
    }
    let params = a.params.as_deref().map(load_params).transpose()?.map(Arc::new);
    let spec = predictor_spec(kind, &cfg, params.as_ref())?;
    let scene = a.scene.as_deref().map(read_scene).transpose()?;
    let gt = read_mot(&a.gt)?;
    let ecfg = ForecastEvalConfig {
        q: cfg.forecaster.q,
        strict: !a.all_anchors,
        ..ForecastEvalConfig::default()
    };
    let report = evaluate_forecasts(&gt, &spec, &ecfg, &|f| scene.as_ref().and_then(|s| s.context_at(f)))?;

    let dir = out_dir(&a.common.out)?;
    write_json(
        dir.join("forecast_report.json"),
        &NamedForecastReport {
            predictor: kind.name(),
            strict: ecfg.strict,
            report: &report,
        },
    )?;
    write(
        dir.join("forecast_report.csv"),
        format!("predictor,{}\n{},{}\n", ForecastReport::CSV_HEADER, kind.name(), report.csv_row()),
    )?;
    echo_config(dir, &cfg)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let cfg = load_run_config(a.common.config.as_deref(), Preset::Full)?;
    if !(0.0..=1.0).contains(&a.iou_thresh) {
        return Err(UsageError(format!("--iou-thresh must lie in [0, 1], got {}", a.iou_thresh)).into());
    }
    let gt = read_mot(&a.gt)?;
    let res = read_mot(&a.res)?;
    let report = clear_mot(&gt, &res, a.iou_thresh)?;
    let dir = out_dir(&a.common.out)?;
    write_json(dir.join("tracking_report.json"), &report)?;
    write(
        dir.join("tracking_report.csv"),
        format!("{}\n{}\n", TrackingReport::CSV_HEADER, report.csv_row()),
    )?;
    echo_config(dir, &cfg)
}

fn mark(on: bool) -> &'static str {
    if on {
        "✓"
    } else {
        "✗"
    }
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg = load_run_config(a.common.config.as_deref(), a.preset)?;
    let dir = out_dir(&a.common.out)?;
    let params = match &a.params {
        Some(p) => load_params(p)?,
        None => {
            let mut sequences = Vec::new();
            for k in 0..a.train_scenes.max(1) {
                let spec = suite("nonlinear-clean", Some(TRAIN_SEED_BASE + k))?;
                sequences.push((generate(&spec)?.gt, None));
            }
            let mut zero_ctx = cfg.clone();
            zero_ctx.forecaster.context = ContextSource::Zero;
            let (params, log, samples) = train_on(&sequences, &zero_ctx)?;
            write_model(dir, &params, &log, samples)?;
            params
        }
    };
    let params = Arc::new(params);
    let grid_kind = a.predictor.map(kind_of).unwrap_or(PredictorKind::Learned);
    let grid_spec = predictor_spec(grid_kind, &cfg, Some(&params))?;
    let ecfg = ForecastEvalConfig {
        q: params.config.q,
        ..ForecastEvalConfig::default()
    };

    let mut md = String::new();
    let mut t2_csv = String::from("suite,motion_fusion,iou,occlusion,id_switches,mota,idf1\n");
    let mut t1_csv = format!("suite,method,{}\n", ForecastReport::CSV_HEADER);
    let _ = writeln!(md, "# Ablation\n\nTracker predictor for the association grid: {}.\n", grid_kind.name());
    let _ = writeln!(md, "## Association components\n");
    let _ = writeln!(md, "| suite | App+Forecast | BoxIOU | Occlusion | IDs | MOTA | IDF1 |");
    let _ = writeln!(md, "|---|:-:|:-:|:-:|--:|--:|--:|");
    let mut t1_md = String::from("## Forecasting baselines\n\n| suite | method | AIOU | FIOU | ADE | FDE |\n|---|---|--:|--:|--:|--:|\n");
    for name in SUITE_NAMES {
        let spec = suite(name, None)?;
        let scene = generate(&spec)?;
        for stages in STAGE_GRID {
            let mut tcfg = cfg.tracker.clone();
            tcfg.stages = stages;
            tcfg.predictor = grid_kind;
            let mut tracker = Tracker::new(tcfg, grid_spec.clone())?;
            let hyp = MotSequence::from_records(to_records(&tracker.run(&scene.frames)?));
            let r = clear_mot(&scene.gt, &hyp, motf_core::metrics::DEFAULT_IOU_MATCH_THRESH)?;
            let _ = writeln!(
                md,
                "| {name} | {} | {} | {} | {} | {:.3} | {:.3} |",
                mark(stages.motion_fusion),
                mark(stages.iou),
                mark(stages.occlusion),
                r.id_switches,
                r.mota,
                r.idf1
            );
            let _ = writeln!(
                t2_csv,
                "{name},{},{},{},{},{:.6},{:.6}",
                stages.motion_fusion, stages.iou, stages.occlusion, r.id_switches, r.mota, r.idf1
            );
        }
        for kind in [PredictorKind::Cv, PredictorKind::Kalman, PredictorKind::Learned] {
            let spec_k = predictor_spec(kind, &cfg, Some(&params))?;
            let r = evaluate_forecasts(&scene.gt, &spec_k, &ecfg, &|f| spec.context_at(f))?;
            let _ = writeln!(
                t1_md,
                "| {name} | {} | {:.4} | {:.4} | {:.2} | {:.2} |",
                kind.name(),
                r.aiou,
                r.fiou,
                r.ade,
                r.fde
            );
            let _ = writeln!(t1_csv, "{name},{},{}", kind.name(), r.csv_row());
        }
    }
    md.push('\n');
    md.push_str(&t1_md);
    write(dir.join("ablation.md"), md)?;
    write(dir.join("association.csv"), t2_csv)?;
    write(dir.join("forecasting.csv"), t1_csv)?;
    echo_config(dir, &cfg)
}
