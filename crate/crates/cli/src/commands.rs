use crate::artifacts::{file_or_in_dir, OutDir};
use crate::error::{io_err, CliError};
use pcgkit::byol::{encode_frozen, load_encoder, pretrain, save_encoder, PretrainInit};
use pcgkit::config::RunConfig;
use pcgkit::metrics::{evaluate_run, write_predictions, CostConfig, EvaluationReport, PredictionRow};
use pcgkit::quality::{
    evaluate_quality, feature_matrix, gate_manifest, load_recordings, manifest_labels, stratified_split, train_quality,
    write_pseudo_labels, QualityModel,
};
use pcgkit::screen::{head_inputs, label_from_p, train_finetune, train_head, DemographicRecord, Fusion, ScreenError, ScreenModel, TrainMode};
use pcgkit::signal_io::{read_manifest, write_manifest, Manifest, ManifestRow};
use pcgkit::synth::make_corpus;
use pcgkit::tabular::{load_model_json, save_model_json};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

pub const MODEL_FILE: &str = "model.json";
pub const ENCODER_FILE: &str = "encoder.json";
pub const OUTCOME_CLASSES: [&str; 2] = ["normal", "abnormal"];

fn load_config(config: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match (config, seed) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(s)) => RunConfig::with_seed(s),
        (None, None) => return Err(CliError::Usage("a seed is required: pass --config or --seed".into())),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Same rows with every path made absolute, so the manifest can live in another directory.
fn absolute_rows(m: &Manifest) -> Result<Manifest, CliError> {
    let rows = m
        .rows
        .iter()
        .map(|r| {
            let p = m.resolve(r);
            let p = std::path::absolute(&p).map_err(io_err(&p))?;
            Ok(ManifestRow {
                path: p.to_string_lossy().into_owned(),
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(m.with_rows(rows))
}

fn outcome_labels(m: &Manifest) -> Result<Vec<u8>, CliError> {
    m.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.outcome.map(|o| o.class_index()).ok_or_else(|| CliError::MissingOutcome {
                row: i + 1,
                path: r.path.clone(),
            })
        })
        .collect()
}

fn demographics(m: &Manifest) -> Vec<DemographicRecord> {
    m.rows.iter().map(|r| r.demographics).collect()
}

/// Metric block keyed by the names used in published result tables, next to the full report.
#[derive(Serialize)]
struct NamedReport<'a, C: Serialize> {
    metrics: BTreeMap<&'static str, Option<f64>>,
    report: &'a EvaluationReport,
    config: &'a C,
}

fn named_report<'a, C: Serialize>(report: &'a EvaluationReport, config: &'a C) -> NamedReport<'a, C> {
    let metrics = BTreeMap::from([
        ("Accuracy", Some(report.accuracy)),
        ("Precision", Some(report.precision)),
        ("Recall (Sensitivity)", Some(report.recall)),
        ("Specificity", Some(report.specificity)),
        ("F1 score", Some(report.f1)),
        ("AUROC", report.auroc),
    ]);
    NamedReport { metrics, report, config }
}

pub fn synth(n: usize, out: &Path, seed: u64, config: Option<&Path>) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let cfg = load_config(config, Some(seed))?;
    let mut dir = OutDir::create(out)?;
    if let Some(p) = config {
        dir.input("config", p)?;
    }
    make_corpus(n, &cfg.io.synth, cfg.seed, out)?;
    dir.write_config(&cfg)?;
    dir.finish("synth")
}

pub fn quality_train(manifest: &Path, config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(Some(config), None)?;
    let m = read_manifest(manifest)?;
    let (train, test) = stratified_split(&m, cfg.quality.test_fraction, cfg.seed)?;
    let mut dir = OutDir::create(out)?;
    dir.input("manifest", manifest)?;
    dir.input("config", config)?;
    let model = train_quality(&train, &cfg.selection, &cfg.classifiers, &cfg.quality, cfg.seed)?;
    let x_test = feature_matrix(&load_recordings(&test)?, cfg.quality.pad_seconds)?;
    let y_test = manifest_labels(&test)?;
    let report = evaluate_quality(&model, &x_test, &y_test)?;
    let p = model.score_matrix(&x_test)?;
    let rows: Vec<PredictionRow> = test
        .rows
        .iter()
        .zip(&p)
        .map(|(r, &s)| PredictionRow {
            id: r.path.clone(),
            score: s,
            label: model.label(s),
        })
        .collect();
    save_model_json(&model, &dir.path(MODEL_FILE))?;
    model.selection.write_ranking_csv(&dir.path("feature_ranking.csv")).map_err(pcgkit::quality::QualityError::from)?;
    write_predictions(&rows, "p_acceptable", &dir.path("test_predictions.csv"))?;
    write_manifest(&absolute_rows(&train)?, &dir.path("train.csv"))?;
    write_manifest(&absolute_rows(&test)?, &dir.path("test.csv"))?;
    dir.write_json("report.json", &named_report(&report, &cfg))?;
    dir.write_config(&cfg)?;
    log::info!("held-out accuracy {:.4}, auroc {:?}", report.accuracy, report.auroc);
    dir.finish("quality-train")
}

#[derive(Serialize)]
struct GateConfig {
    operating_rate_hz: u32,
    pad_seconds: f64,
    decision_threshold: f64,
}

pub fn quality_gate(model: &Path, manifest: &Path, out: &Path) -> Result<(), CliError> {
    let model_path = file_or_in_dir(model, MODEL_FILE);
    let qm: QualityModel = load_model_json(&model_path)?;
    let m = read_manifest(manifest)?;
    let mut dir = OutDir::create(out)?;
    dir.input("model", &model_path)?;
    dir.input("manifest", manifest)?;
    let res = gate_manifest(&qm, &m)?;
    write_manifest(&absolute_rows(&res.kept)?, &dir.path("kept.csv"))?;
    write_manifest(&absolute_rows(&res.removed)?, &dir.path("removed.csv"))?;
    write_pseudo_labels(&res.pseudo_labels, &dir.path("pseudo_labels.csv"))?;
    dir.write_json("gate_report.json", &res.report)?;
    dir.write_config(&GateConfig {
        operating_rate_hz: qm.operating_rate_hz,
        pad_seconds: qm.pad_seconds,
        decision_threshold: qm.decision_threshold,
    })?;
    log::info!("kept {} of {} recordings", res.report.kept, res.report.total);
    dir.finish("quality-gate")
}

pub fn pretrain_cmd(manifest: &Path, config: &Path, init: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(Some(config), None)?;
    let m = read_manifest(manifest)?;
    let mut dir = OutDir::create(out)?;
    dir.input("manifest", manifest)?;
    dir.input("config", config)?;
    let init = match init {
        Some(p) => {
            dir.input("init_checkpoint", p)?;
            PretrainInit::Checkpoint(p.to_path_buf())
        }
        None => PretrainInit::Random,
    };
    let recs = load_recordings(&m)?;
    let (state, log) = pretrain(&recs, &cfg.mel, &cfg.ssl, &init, cfg.seed, Some(out))?;
    save_encoder(&state.online.encoder, &cfg.mel, &dir.path(ENCODER_FILE))?;
    let mut w = csv::Writer::from_path(dir.path("loss_log.csv"))?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in log.epoch_loss.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{l:?}")])?;
    }
    w.flush().map_err(io_err(&dir.path("loss_log.csv")))?;
    dir.write_config(&cfg)?;
    dir.finish("pretrain")
}

pub struct TrainArgs<'a> {
    pub manifest: &'a Path,
    pub encoder: &'a Path,
    pub mode: TrainMode,
    pub fusion: Fusion,
    pub out: &'a Path,
    pub config: Option<&'a Path>,
    pub seed: Option<u64>,
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config, a.seed)?;
    let m = read_manifest(a.manifest)?;
    if a.fusion == Fusion::AudioDemo && !m.has_demographics {
        return Err(ScreenError::ModalityMismatch("audio+demo fusion needs a manifest with demographic columns".into()).into());
    }
    let y = outcome_labels(&m)?;
    let encoder_path = file_or_in_dir(a.encoder, ENCODER_FILE);
    let (encoder, mel) = load_encoder(&encoder_path)?;
    if mel != cfg.mel {
        log::warn!("using the mel settings stored with the encoder, not the config's");
        cfg.mel = mel.clone();
    }
    let mut dir = OutDir::create(a.out)?;
    dir.input("manifest", a.manifest)?;
    dir.input("encoder", &encoder_path)?;
    if let Some(p) = a.config {
        dir.input("config", p)?;
    }
    let recs = load_recordings(&m)?;
    let demo = (a.fusion == Fusion::AudioDemo).then(|| demographics(&m));
    let audio_dim = encoder.shape.embed_dim;
    let (head, encoder, log) = match a.mode {
        TrainMode::Frozen => {
            let emb = encode_frozen(&encoder, &mel, &recs)?;
            let x = head_inputs(emb.view(), demo.as_deref(), a.fusion, &cfg.head.acbmi_cutoffs)?;
            let (head, log) = train_head(x.view(), &y, audio_dim, a.fusion, &cfg.head, cfg.seed)?;
            (head, encoder, log)
        }
        TrainMode::Finetune => train_finetune(&encoder, &mel, &recs, demo.as_deref(), &y, a.fusion, &cfg.head, cfg.seed)?,
    };
    let model = ScreenModel {
        encoder,
        mel,
        head,
        head_config: cfg.head.clone(),
        mode: a.mode,
    };
    model.save(&dir.path(MODEL_FILE))?;
    let log_path = dir.path("train_log.csv");
    let mut w = csv::Writer::from_path(&log_path)?;
    w.write_record(["epoch", "learning_rate", "loss"])?;
    for (i, (lr, l)) in log.epoch_lr.iter().zip(&log.epoch_loss).enumerate() {
        w.write_record([(i + 1).to_string(), format!("{lr:e}"), format!("{l:?}")])?;
    }
    w.flush().map_err(io_err(&log_path))?;
    dir.write_config(&cfg)?;
    dir.finish("train")
}

#[derive(Serialize)]
struct EvaluateConfig<'a> {
    cost: &'a CostConfig,
    fusion: Fusion,
    mode: TrainMode,
}

pub fn evaluate(model: &Path, manifest: &Path, cost_config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let model_path = file_or_in_dir(model, MODEL_FILE);
    let sm = ScreenModel::load(&model_path)?;
    let cost: CostConfig = match cost_config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).map_err(io_err(p))?)?,
        None => CostConfig::default(),
    };
    cost.validate()?;
    let m = read_manifest(manifest)?;
    if sm.head.fusion == Fusion::AudioDemo && !m.has_demographics {
        return Err(ScreenError::ModalityMismatch("multimodal model needs a manifest with demographic columns".into()).into());
    }
    let y = outcome_labels(&m)?;
    let mut dir = OutDir::create(out)?;
    dir.input("model", &model_path)?;
    dir.input("manifest", manifest)?;
    if let Some(p) = cost_config {
        dir.input("cost_config", p)?;
    }
    let recs = load_recordings(&m)?;
    let demo = (sm.head.fusion == Fusion::AudioDemo).then(|| demographics(&m));
    let p = sm.predict(&recs, demo.as_deref())?;
    let rows: Vec<PredictionRow> = m
        .rows
        .iter()
        .zip(&p)
        .map(|(r, &s)| PredictionRow {
            id: r.path.clone(),
            score: s,
            label: label_from_p(s),
        })
        .collect();
    let truth: Vec<(String, u8)> = m.rows.iter().map(|r| r.path.clone()).zip(y).collect();
    let report = evaluate_run(&rows, &truth, OUTCOME_CLASSES, Some(&cost))?;
    write_predictions(&rows, "p_abnormal", &dir.path("predictions.csv"))?;
    let cfg = EvaluateConfig {
        cost: &cost,
        fusion: sm.head.fusion,
        mode: sm.mode,
    };
    dir.write_json("report.json", &named_report(&report, &cfg))?;
    dir.write_config(&cfg)?;
    dir.finish("evaluate")
}
