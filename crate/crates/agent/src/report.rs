//! Batch evaluation of the PPG pipeline against the ECG reference, and the
//! report files written by `pulse-agent evaluate`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use pulse_core::ecg::reference_hr_with;
use pulse_core::hr::{analyze_ppg, HrSeries};
use pulse_core::metrics::{
    evaluate_corpus, Agreement, BlandAltmanResult, OutlierStats, RegressionFit,
};
use pulse_core::signal::trim_calibration;
use pulse_core::{Channel, TimeSeries};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::AgentConfig;
use crate::datastore::{RecordingMeta, Store, StoreError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// A PPG recording and the ECG covering the same interval, both untrimmed
/// and starting at the same instant.
#[derive(Debug, Clone)]
pub struct RecordingPair {
    pub user_id: String,
    pub ppg_recording_id: String,
    pub ecg_recording_id: String,
    pub ppg: TimeSeries,
    pub ecg: TimeSeries,
}

#[derive(Debug, thiserror::Error)]
pub enum EvaluateError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{recording_id}: {source}")]
    Signal {
        recording_id: String,
        source: pulse_core::Error,
    },
    #[error(transparent)]
    Metrics(#[from] pulse_core::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl EvaluateError {
    pub fn code(&self) -> &'static str {
        match self {
            EvaluateError::Store(e) => e.code(),
            EvaluateError::Signal { source, .. } | EvaluateError::Metrics(source) => source.code(),
            EvaluateError::Io(_) => "IoError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsBlock {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub mape_pct: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementBlock {
    pub metrics: Option<MetricsBlock>,
    pub bland_altman: Option<BlandAltmanResult>,
    pub regression: Option<RegressionFit>,
    pub outliers: OutlierStats,
}

impl From<&Agreement> for AgreementBlock {
    fn from(a: &Agreement) -> Self {
        Self {
            metrics: a.metrics.map(|m| MetricsBlock {
                n: m.n,
                mae: m.mae,
                rmse: m.rmse,
                mape: m.mape,
                mape_pct: 100.0 * m.mape,
                mad: m.mad,
            }),
            bland_altman: a.bland_altman,
            regression: a.regression,
            outliers: a.outliers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingReport {
    pub user_id: String,
    pub ppg_recording_id: String,
    pub ecg_recording_id: String,
    pub start_epoch_s: f64,
    pub windows: usize,
    pub valid_estimates: usize,
    pub valid_reference: usize,
    pub reconstructed_gaps: usize,
    #[serde(flatten)]
    pub agreement: AgreementBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRecording {
    pub ppg_recording_id: String,
    pub reason: String,
}

/// Analysis settings echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub trim_s: f64,
    pub outlier_lo: f64,
    pub outlier_hi: f64,
    pub pipeline: pulse_core::hr::PipelineConfig,
    pub qrs: pulse_core::ecg::QrsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub pooled: AgreementBlock,
    pub recordings: Vec<RecordingReport>,
    pub skipped: Vec<SkippedRecording>,
    /// Pooled (reference, estimate) pairs, not serialized into the JSON.
    #[serde(skip)]
    pub y: Vec<f64>,
    #[serde(skip)]
    pub y_hat: Vec<f64>,
}

struct Analysed {
    est: HrSeries,
    reference: HrSeries,
    gaps: usize,
}

fn analyse(pair: &RecordingPair, config: &AgentConfig) -> Result<Analysed, EvaluateError> {
    let signal_err = |source| EvaluateError::Signal {
        recording_id: pair.ppg_recording_id.clone(),
        source,
    };
    let trim = |s: &TimeSeries| {
        if config.trim_s > 0.0 {
            trim_calibration(s, config.trim_s)
        } else {
            Ok(s.clone())
        }
    };
    let ppg = trim(&pair.ppg).map_err(signal_err)?;
    let ecg = trim(&pair.ecg).map_err(signal_err)?;
    let analysis = analyze_ppg(&ppg, &config.pipeline()).map_err(signal_err)?;
    let reference = reference_hr_with(&ecg, &config.qrs, &config.window()).map_err(signal_err)?;
    Ok(Analysed {
        est: analysis.hr,
        reference,
        gaps: analysis.repaired.len(),
    })
}

/// Runs both pipelines over every pair and aggregates the agreement.
pub fn evaluate_pairs(
    pairs: &[RecordingPair],
    config: &AgentConfig,
) -> Result<EvaluationReport, EvaluateError> {
    let analysed: Vec<Analysed> = pairs
        .par_iter()
        .map(|p| analyse(p, config))
        .collect::<Result<_, _>>()?;
    let corpus: Vec<(HrSeries, HrSeries)> = analysed
        .iter()
        .map(|a| (a.est.clone(), a.reference.clone()))
        .collect();
    let evaluation = evaluate_corpus(&corpus, config.outlier_lo, config.outlier_hi)?;
    let recordings = pairs
        .iter()
        .zip(&analysed)
        .zip(&evaluation.per_recording)
        .map(|((p, a), agreement)| RecordingReport {
            user_id: p.user_id.clone(),
            ppg_recording_id: p.ppg_recording_id.clone(),
            ecg_recording_id: p.ecg_recording_id.clone(),
            start_epoch_s: p.ppg.start_epoch_s(),
            windows: a.est.len(),
            valid_estimates: a.est.valid_count(),
            valid_reference: a.reference.valid_count(),
            reconstructed_gaps: a.gaps,
            agreement: agreement.into(),
        })
        .collect();
    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: ConfigEcho {
            trim_s: config.trim_s,
            outlier_lo: config.outlier_lo,
            outlier_hi: config.outlier_hi,
            pipeline: config.pipeline(),
            qrs: config.qrs,
        },
        pooled: (&evaluation.pooled).into(),
        recordings,
        skipped: Vec::new(),
        y: evaluation.pairs.y,
        y_hat: evaluation.pairs.y_hat,
    })
}

/// The ECG of the same user covering all of `ppg`.
fn covering_ecg<'a>(
    manifest: &'a [RecordingMeta],
    ppg: &RecordingMeta,
) -> Option<&'a RecordingMeta> {
    manifest.iter().find(|m| {
        m.user_id == ppg.user_id
            && m.modality == Channel::EcgLeadII
            && m.start_epoch_s <= ppg.start_epoch_s
            && m.end_epoch_s() >= ppg.end_epoch_s()
    })
}

/// ECG samples spanning the PPG interval, re-based to the PPG start so the
/// two window grids coincide.
fn align_ecg(ecg: &TimeSeries, ppg: &RecordingMeta) -> Result<TimeSeries, pulse_core::Error> {
    let fs = ecg.sample_rate_hz();
    let offset = ((ppg.start_epoch_s - ecg.start_epoch_s()) * fs).round() as usize;
    let len = ((ppg.duration_s * fs).round() as usize).min(ecg.len() - offset);
    TimeSeries::new(
        ecg.samples()[offset..offset + len].to_vec(),
        fs,
        ppg.start_epoch_s,
        Channel::EcgLeadII,
    )
}

/// Evaluates every PPG recording in the store that has ECG coverage.
pub fn evaluate_store(
    store: &Store,
    config: &AgentConfig,
) -> Result<EvaluationReport, EvaluateError> {
    let manifest = store.manifest()?;
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for ppg in manifest.iter().filter(|m| m.modality == Channel::Ppg) {
        let Some(ecg_meta) = covering_ecg(&manifest, ppg) else {
            skipped.push(SkippedRecording {
                ppg_recording_id: ppg.recording_id.clone(),
                reason: "no ECG recording covers this interval".into(),
            });
            continue;
        };
        let ecg =
            align_ecg(&store.load(ecg_meta)?, ppg).map_err(|source| EvaluateError::Signal {
                recording_id: ecg_meta.recording_id.clone(),
                source,
            })?;
        pairs.push(RecordingPair {
            user_id: ppg.user_id.clone(),
            ppg_recording_id: ppg.recording_id.clone(),
            ecg_recording_id: ecg_meta.recording_id.clone(),
            ppg: store.load(ppg)?,
            ecg,
        });
    }
    if pairs.is_empty() {
        return Err(pulse_core::Error::EmptyCorpus.into());
    }
    let mut report = evaluate_pairs(&pairs, config)?;
    report.skipped = skipped;
    Ok(report)
}

/// Rounds to 6 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(f) = n.as_f64() {
                *v = serde_json::Number::from_f64(round_sig(f)).map_or(Value::Null, Value::Number);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// The report as pretty JSON with every float at 6 significant digits.
pub fn report_json(report: &EvaluationReport) -> String {
    let mut value = serde_json::to_value(report).expect("report serializes");
    round_floats(&mut value);
    let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
    text.push('\n');
    text
}

fn csv_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        round_sig(x).to_string()
    }
}

pub fn scatter_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("y,y_hat\n");
    for (y, h) in report.y.iter().zip(&report.y_hat) {
        let _ = writeln!(out, "{},{}", csv_float(*y), csv_float(*h));
    }
    out
}

pub fn bland_altman_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("mean,diff\n");
    for (y, h) in report.y.iter().zip(&report.y_hat) {
        let _ = writeln!(out, "{},{}", csv_float(0.5 * (y + h)), csv_float(h - y));
    }
    out
}

pub fn per_recording_csv(report: &EvaluationReport) -> String {
    let mut out =
        String::from("ppg_recording_id,user_id,n,mae,rmse,mape,mad,bias,outliers_removed\n");
    for r in &report.recordings {
        let m = r.agreement.metrics.as_ref();
        let f = |v: Option<f64>| v.map_or(String::new(), csv_float);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.ppg_recording_id,
            r.user_id,
            m.map_or(0, |m| m.n),
            f(m.map(|m| m.mae)),
            f(m.map(|m| m.rmse)),
            f(m.map(|m| m.mape)),
            f(m.map(|m| m.mad)),
            f(r.agreement.bland_altman.map(|b| b.bias)),
            r.agreement.outliers.removed,
        );
    }
    out
}

/// Writes report.json, scatter.csv, bland_altman.csv and
/// per_recording.csv into `dir`.
pub fn write_report(dir: &Path, report: &EvaluationReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report_json(report))?;
    fs::write(dir.join("scatter.csv"), scatter_csv(report))?;
    fs::write(dir.join("bland_altman.csv"), bland_altman_csv(report))?;
    fs::write(dir.join("per_recording.csv"), per_recording_csv(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::IngestRequest;
    use crate::synth::{paired_recording, CorpusSpec};

    #[test]
    fn six_significant_digits() {
        assert_eq!(round_sig(2.8333333333), 2.83333);
        assert_eq!(round_sig(0.000123456789), 0.000123457);
        assert_eq!(round_sig(123456789.0), 123457000.0);
        assert_eq!(round_sig(-12.034999999), -12.035);
        assert_eq!(round_sig(0.0), 0.0);
        assert!(round_sig(f64::NAN).is_nan());
    }

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            recordings: 2,
            duration_s: 240.0,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn store_evaluation_matches_in_memory() {
        let spec = small_spec();
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), 60.0).unwrap();
        let mut pairs = Vec::new();
        for i in 0..spec.recordings {
            let r = paired_recording(&spec, i);
            let ppg = store
                .insert(
                    &IngestRequest {
                        user_id: r.user_id.clone(),
                        modality: Channel::Ppg,
                        start_epoch_s: r.ppg.start_epoch_s(),
                        sample_rate_hz: r.ppg.sample_rate_hz(),
                    },
                    r.ppg.samples(),
                )
                .unwrap();
            let ecg = store
                .insert(
                    &IngestRequest {
                        user_id: r.user_id.clone(),
                        modality: Channel::EcgLeadII,
                        start_epoch_s: r.ecg.start_epoch_s() - 5.0,
                        sample_rate_hz: r.ecg.sample_rate_hz(),
                    },
                    &[vec![0.0; 5 * 512], r.ecg.samples().to_vec()].concat(),
                )
                .unwrap();
            pairs.push(RecordingPair {
                user_id: r.user_id,
                ppg_recording_id: ppg.recording_id,
                ecg_recording_id: ecg.recording_id,
                ppg: r.ppg,
                ecg: r.ecg,
            });
        }
        // an uncovered PPG recording is skipped, not fatal
        store
            .insert(
                &IngestRequest {
                    user_id: "p09".into(),
                    modality: Channel::Ppg,
                    start_epoch_s: 0.0,
                    sample_rate_hz: 20.0,
                },
                &[1.0; 100],
            )
            .unwrap();
        let config = AgentConfig::default();
        let from_store = evaluate_store(&store, &config).unwrap();
        let in_memory = evaluate_pairs(&pairs, &config).unwrap();
        assert_eq!(from_store.pooled, in_memory.pooled);
        assert_eq!(from_store.skipped.len(), 1);
        assert_eq!(from_store.recordings.len(), 2);
        assert_eq!(from_store.recordings[0].windows, 4);
    }

    #[test]
    fn identical_signals_give_zero_error() {
        // the reference path on both sides: compare ECG against itself
        let spec = small_spec();
        let r = paired_recording(&spec, 0);
        let config = AgentConfig::default();
        let ecg = trim_calibration(&r.ecg, 60.0).unwrap();
        let hr = reference_hr_with(&ecg, &config.qrs, &config.window()).unwrap();
        let ev = evaluate_corpus(&[(hr.clone(), hr)], 40.0, 200.0).unwrap();
        let block = AgreementBlock::from(&ev.pooled);
        let m = block.metrics.unwrap();
        assert_eq!((m.mae, m.rmse, m.mad), (0.0, 0.0, 0.0));
        assert_eq!(block.regression.unwrap().slope, 1.0);
    }

    #[test]
    fn report_files() {
        let spec = small_spec();
        let pairs: Vec<RecordingPair> = (0..2)
            .map(|i| {
                let r = paired_recording(&spec, i);
                RecordingPair {
                    user_id: r.user_id,
                    ppg_recording_id: format!("ppg{i}"),
                    ecg_recording_id: format!("ecg{i}"),
                    ppg: r.ppg,
                    ecg: r.ecg,
                }
            })
            .collect();
        let report = evaluate_pairs(&pairs, &AgentConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &report).unwrap();
        let scatter = fs::read_to_string(dir.path().join("scatter.csv")).unwrap();
        assert_eq!(scatter.lines().count(), report.y.len() + 1);
        let ba = fs::read_to_string(dir.path().join("bland_altman.csv")).unwrap();
        assert!(ba.starts_with("mean,diff\n"));
        let json: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(json["schema_version"], 1);
        assert!(json["pooled"]["metrics"]["mae"].is_number());
        assert_eq!(json["recordings"].as_array().unwrap().len(), 2);
    }
}
