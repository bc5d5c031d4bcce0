//! Agreement between estimated and reference heart rate: pairing, outlier
//! gating, error metrics, Bland-Altman and least-squares regression.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hr::HrSeries;
use crate::stats;

/// Default plausible HR range for estimated values, inclusive.
pub const OUTLIER_LO_BPM: f64 = 40.0;
pub const OUTLIER_HI_BPM: f64 = 200.0;

/// Jointly valid windows of a reference and an estimate.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairedHr {
    /// Reference BPM.
    pub y: Vec<f64>,
    /// Estimated BPM.
    pub y_hat: Vec<f64>,
}

impl PairedHr {
    /// Pairs two equal-length slices, dropping any pair with a NaN.
    pub fn from_values(y: &[f64], y_hat: &[f64]) -> Self {
        let mut p = Self::default();
        for (a, b) in y.iter().zip(y_hat) {
            if !a.is_nan() && !b.is_nan() {
                p.y.push(*a);
                p.y_hat.push(*b);
            }
        }
        p
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn extend(&mut self, other: &PairedHr) {
        self.y.extend_from_slice(&other.y);
        self.y_hat.extend_from_slice(&other.y_hat);
    }

    /// `y_hat - y` per pair.
    pub fn differences(&self) -> Vec<f64> {
        self.y.iter().zip(&self.y_hat).map(|(y, h)| h - y).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    /// Fraction, not percent.
    pub mape: f64,
    pub mad: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlandAltmanResult {
    pub bias: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OutlierStats {
    pub total: usize,
    pub removed: usize,
    pub outlier_pct: f64,
}

impl OutlierStats {
    pub fn new(total: usize, removed: usize) -> Self {
        let outlier_pct = if total == 0 {
            0.0
        } else {
            100.0 * removed as f64 / total as f64
        };
        Self {
            total,
            removed,
            outlier_pct,
        }
    }

    pub fn merge(self, other: OutlierStats) -> Self {
        Self::new(self.total + other.total, self.removed + other.removed)
    }
}

/// Pairs two HR series on a shared window grid.
pub fn pair(est: &HrSeries, reference: &HrSeries) -> Result<PairedHr> {
    if est.window_len_s != reference.window_len_s
        || est.hop_s != reference.hop_s
        || est.window_start_s != reference.window_start_s
    {
        return Err(Error::GridMismatch);
    }
    Ok(PairedHr::from_values(&reference.bpm, &est.bpm))
}

/// Keeps values inside `[lo, hi]`.
pub fn remove_outliers(values: &[f64], lo: f64, hi: f64) -> (Vec<f64>, OutlierStats) {
    let kept: Vec<f64> = values
        .iter()
        .copied()
        .filter(|v| (lo..=hi).contains(v))
        .collect();
    let stats = OutlierStats::new(values.len(), values.len() - kept.len());
    (kept, stats)
}

/// Replaces out-of-range estimates with NaN so they drop out at pairing.
/// NaN windows are not counted in the statistics.
pub fn gate_outliers(est: &HrSeries, lo: f64, hi: f64) -> (HrSeries, OutlierStats) {
    let mut gated = est.clone();
    let mut total = 0;
    let mut removed = 0;
    for v in gated.bpm.iter_mut().filter(|v| !v.is_nan()) {
        total += 1;
        if !(lo..=hi).contains(v) {
            *v = f64::NAN;
            removed += 1;
        }
    }
    (gated, OutlierStats::new(total, removed))
}

pub fn compute_metrics(p: &PairedHr) -> Result<MetricsReport> {
    let n = p.n();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if let Some(index) = p.y.iter().position(|y| *y == 0.0) {
        return Err(Error::ZeroReference { index });
    }
    let mut abs: Vec<f64> = p.differences().iter().map(|d| d.abs()).collect();
    let mae = stats::mean(&abs);
    let rmse = libm::sqrt(abs.iter().map(|d| d * d).sum::<f64>() / n as f64);
    let mape = abs.iter().zip(&p.y).map(|(d, y)| d / y.abs()).sum::<f64>() / n as f64;
    let mad = stats::median_in_place(&mut abs);
    Ok(MetricsReport {
        mae,
        rmse,
        mape,
        mad,
        n,
    })
}

pub fn bland_altman(p: &PairedHr) -> Result<BlandAltmanResult> {
    let n = p.n();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let d = p.differences();
    let bias = stats::mean(&d);
    let ss: f64 = d.iter().map(|v| (v - bias) * (v - bias)).sum();
    let sd_diff = libm::sqrt(ss / (n - 1) as f64);
    Ok(BlandAltmanResult {
        bias,
        sd_diff,
        loa_low: bias - 1.96 * sd_diff,
        loa_high: bias + 1.96 * sd_diff,
    })
}

/// Ordinary least squares of `y_hat` on `y`. `r` is 0 when `y_hat` is
/// constant.
pub fn linear_regression(p: &PairedHr) -> Result<RegressionFit> {
    let n = p.n();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mx = stats::mean(&p.y);
    let my = stats::mean(&p.y_hat);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in p.y.iter().zip(&p.y_hat) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    Ok(RegressionFit {
        slope,
        intercept: my - slope * mx,
        r: stats::pearson(&p.y, &p.y_hat).clamp(-1.0, 1.0),
    })
}

/// Statistics of one set of pairs; fields that need more data are `None`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Agreement {
    pub metrics: Option<MetricsReport>,
    pub bland_altman: Option<BlandAltmanResult>,
    pub regression: Option<RegressionFit>,
    pub outliers: OutlierStats,
}

impl Agreement {
    pub fn of(p: &PairedHr, outliers: OutlierStats) -> Self {
        Self {
            metrics: compute_metrics(p).ok(),
            bland_altman: bland_altman(p).ok(),
            regression: linear_regression(p).ok(),
            outliers,
        }
    }
}

/// Pooled and per-recording agreement over a corpus.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusEvaluation {
    pub pooled: Agreement,
    pub per_recording: Vec<Agreement>,
    /// Every pooled pair, in recording order.
    pub pairs: PairedHr,
}

/// Gates estimated outliers, pairs each recording with its reference, and
/// computes agreement both per recording and over all windows pooled.
pub fn evaluate_corpus(
    corpus: &[(HrSeries, HrSeries)],
    lo: f64,
    hi: f64,
) -> Result<CorpusEvaluation> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut pairs = PairedHr::default();
    let mut outliers = OutlierStats::default();
    let mut per_recording = Vec::with_capacity(corpus.len());
    for (est, reference) in corpus {
        let (gated, stats) = gate_outliers(est, lo, hi);
        let p = pair(&gated, reference)?;
        per_recording.push(Agreement::of(&p, stats));
        pairs.extend(&p);
        outliers = outliers.merge(stats);
    }
    Ok(CorpusEvaluation {
        pooled: Agreement::of(&pairs, outliers),
        per_recording,
        pairs,
    })
}
