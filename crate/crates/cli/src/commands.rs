//! Pipeline stages behind the subcommands.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use wiopen_core::data::{open_set_split, read_manifest, ClassId, OpenSetSplit, MANIFEST_FILE};
use wiopen_core::metrics::{risk_report, sig6, EvalReport, Prediction};
use wiopen_core::net::Tensor;
use wiopen_core::osgr::{train, DecisionModel, TrainHistory, TrainSample, SIDECAR_FILE};
use wiopen_core::preprocess::{
    preprocess_dataset, preprocess_record, ratio_stage, read_tensor_manifest, TensorEntry, TENSOR_MANIFEST,
};
use wiopen_core::synth::synth_dataset;
use wiopen_core::uncertainty::{noise_series, uncertainty_report};
use wiopen_core::{par, Error, Result};

use crate::config::{ExportFormat, RunConfig};
use crate::manifest::write_run_manifest;

pub const SPLIT_FILE: &str = "split.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const UNCERTAINTY_FILE: &str = "uncertainty.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Fails with a pointer to the stage that produces `file` when it is absent.
fn require(dir: &Path, file: &str, stage: &str) -> Result<()> {
    if dir.join(file).is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{} has no {file}: run `{stage}` first",
            dir.display()
        )))
    }
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let entries = synth_dataset(&cfg.synth, cfg.seed, out)?;
    eprintln!("synth: wrote {} records to {}", entries.len(), out.display());
    write_run_manifest(out, "synth", cfg, &[])
}

pub fn preprocess(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    require(data, MANIFEST_FILE, "synth")?;
    let summary = preprocess_dataset(data, out, &cfg.preprocess)?;
    for (path, reason) in &summary.rejected {
        eprintln!("preprocess: skipped {path}: {reason}");
    }
    eprintln!(
        "preprocess: wrote {} tensor pairs, rejected {}",
        summary.entries.len(),
        summary.rejected.len()
    );
    write_run_manifest(out, "preprocess", cfg, &[("data", data)])
}

pub fn uncertainty(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    require(data, MANIFEST_FILE, "synth")?;
    let manifest = read_manifest(data)?;
    let rows = par::map(&manifest, |e| -> Result<Option<(Vec<f64>, Vec<f64>, ClassId)>> {
        let rec = e.load(data)?;
        let ratio = match ratio_stage(&rec, &cfg.preprocess, cfg.uncertainty.noise_lowpass) {
            Ok(r) => r,
            Err(Error::RecordRejected { .. }) => return Ok(None),
            Err(err) => return Err(err),
        };
        let dfs = preprocess_record(&rec, &cfg.preprocess)?.dfs;
        Ok(Some((noise_series(&ratio), dfs.into_data(), e.label)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let rows: Vec<_> = rows.into_iter().flatten().collect();
    if rows.len() < manifest.len() {
        eprintln!("uncertainty: skipped {} rejected records", manifest.len() - rows.len());
    }
    let series: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let features: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let labels: Vec<ClassId> = rows.iter().map(|r| r.2).collect();
    let report = uncertainty_report(&series, &features, &labels, &cfg.uncertainty, cfg.seed)?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join(UNCERTAINTY_FILE))?;
    w.write_record(["metric", "value"])?;
    let counts = [
        ("samples", report.samples),
        ("failed_fits", report.failed_fits),
        ("singleton_samples", report.singleton_samples),
    ];
    for (k, v) in [("psi_n", report.psi_n), ("psi_d", report.psi_d), ("psi_total", report.psi_total)] {
        w.write_record([k, sig6(v).as_str()])?;
    }
    for (k, v) in counts {
        w.write_record([k, v.to_string().as_str()])?;
    }
    for (k, v) in &report.settings {
        w.write_record([format!("setting.{k}").as_str(), v.as_str()])?;
    }
    w.flush()?;
    eprintln!(
        "uncertainty: psi_n {} psi_d {} psi_total {}",
        sig6(report.psi_n),
        sig6(report.psi_d),
        sig6(report.psi_total)
    );
    write_run_manifest(out, "uncertainty", cfg, &[("data", data)])
}

fn load_tensors(dir: &Path) -> Result<(Vec<TensorEntry>, Vec<(Tensor, Tensor)>)> {
    require(dir, TENSOR_MANIFEST, "preprocess")?;
    let entries = read_tensor_manifest(dir)?;
    let tensors = par::map(&entries, |e| e.load(dir)).into_iter().collect::<Result<Vec<_>>>()?;
    Ok((entries, tensors))
}

fn write_history(path: &Path, h: &TrainHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "neighbor", "construction", "p_correct"])?;
    let rows = std::iter::once(("initial".to_string(), &h.initial))
        .chain(h.epochs.iter().enumerate().map(|(e, s)| ((e + 1).to_string(), s)))
        .chain(std::iter::once(("trained".to_string(), &h.trained)));
    for (e, s) in rows {
        w.write_record([
            e,
            sig6(s.loss),
            sig6(s.neighbor),
            sig6(s.construction),
            sig6(s.p_correct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn train_model(cfg: &RunConfig, tensors: &Path, out: &Path) -> Result<()> {
    let (entries, data) = load_tensors(tensors)?;
    let labels: Vec<ClassId> = entries.iter().map(|e| e.label).collect();
    let known: BTreeSet<ClassId> = cfg.known.iter().cloned().collect();
    let split = open_set_split(&labels, &known, cfg.seed, cfg.train_fraction)?;
    let samples: Vec<TrainSample> = split
        .train
        .iter()
        .map(|&i| TrainSample {
            input: data[i].0.clone(),
            dfs: data[i].1.clone(),
            label: labels[i],
        })
        .collect();
    eprintln!(
        "train: {} samples, {} known classes, {} epochs",
        samples.len(),
        split.y(),
        cfg.train.epochs
    );
    let outcome = train(&samples, &cfg.train, cfg.seed)?;
    outcome.model.save(out)?;
    split.write_csv(&out.join(SPLIT_FILE))?;
    write_history(&out.join(HISTORY_FILE), &outcome.history)?;
    eprintln!(
        "train: loss {} after training (initial {})",
        sig6(outcome.history.trained.loss),
        sig6(outcome.history.initial.loss)
    );
    eprintln!("train: threshold {}", sig6(outcome.model.threshold()));
    write_run_manifest(out, "train", cfg, &[("tensors", tensors)])
}

/// Loads a trained model and rescales its threshold to the configured ξ.
fn load_model(dir: &Path, xi: f64) -> Result<DecisionModel> {
    require(dir, SIDECAR_FILE, "train")?;
    let model = DecisionModel::load(dir)?;
    if model.config().xi == xi {
        Ok(model)
    } else {
        model.with_xi(xi)
    }
}

fn predictions(model: &DecisionModel, data: &[(Tensor, Tensor)], labels: &[ClassId], ids: &[usize]) -> Result<Vec<Prediction>> {
    par::map(ids, |&i| {
        let d = model.classify(&data[i].0)?;
        Ok(Prediction {
            truth: labels[i],
            label: d.label,
            candidate: d.candidate.label,
            score: d.score(),
        })
    })
    .into_iter()
    .collect()
}

/// Evaluates a trained model on its held-out split.
pub fn evaluate(tensors: &Path, model_dir: &Path, xi: f64) -> Result<EvalReport> {
    let model = load_model(model_dir, xi)?;
    let (entries, data) = load_tensors(tensors)?;
    let labels: Vec<ClassId> = entries.iter().map(|e| e.label).collect();
    require(model_dir, SPLIT_FILE, "train")?;
    let split = OpenSetSplit::read_csv(&model_dir.join(SPLIT_FILE), &labels)?;
    let known = predictions(&model, &data, &labels, &split.test_known)?;
    let unknown = predictions(&model, &data, &labels, &split.test_unknown)?;
    risk_report(&known, &unknown, &split.known_classes, split.q(), model.threshold())
}

pub fn eval(cfg: &RunConfig, tensors: &Path, model_dir: &Path, out: &Path) -> Result<()> {
    let report = evaluate(tensors, model_dir, cfg.train.xi)?;
    fs::create_dir_all(out)?;
    match cfg.format {
        ExportFormat::Csv => {
            report.write_metrics_csv(BufWriter::new(File::create(out.join(METRICS_FILE))?))?;
            report.write_confusion_csv(BufWriter::new(File::create(out.join(CONFUSION_FILE))?))?;
        }
        ExportFormat::Json => {
            let text = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::InvalidArgument(format!("cannot serialize report: {e}")))?;
            fs::write(out.join(REPORT_FILE), text + "\n")?;
        }
    }
    for (k, v) in report.metric_rows() {
        eprintln!("eval: {k} = {v}");
    }
    write_run_manifest(out, "eval", cfg, &[("tensors", tensors), ("model", model_dir)])
}

pub fn infer(cfg: &RunConfig, tensors: &Path, model_dir: &Path, out: &Path) -> Result<()> {
    let model = load_model(model_dir, cfg.train.xi)?;
    let (entries, data) = load_tensors(tensors)?;
    let decisions = par::map(&data, |(x, _)| model.classify(x))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join(PREDICTIONS_FILE))?;
    w.write_record(["record_id", "truth", "candidate", "vote", "score", "label"])?;
    for (e, d) in entries.iter().zip(&decisions) {
        w.write_record([
            e.record_id.to_string(),
            e.label.to_string(),
            d.candidate.label.to_string(),
            sig6(d.candidate.vote),
            sig6(d.score()),
            d.label.map_or_else(|| "unknown".to_string(), |l| l.to_string()),
        ])?;
    }
    w.flush()?;
    let rejected = decisions.iter().filter(|d| d.label.is_none()).count();
    eprintln!("infer: {} records, {rejected} rejected as unknown", decisions.len());
    write_run_manifest(out, "infer", cfg, &[("tensors", tensors), ("model", model_dir)])
}
