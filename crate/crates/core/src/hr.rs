//! Windowed heart rate and the composed PPG pipeline
//! (filter, assess, reconstruct, detect, aggregate).

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::filter;
use crate::peaks::{detect_peaks_with, PeakConfig, PeakList};
use crate::quality::{assess_quality_with, QualityConfig, QualityMask};
use crate::reconstruct::{reconstruct_with, ReconstructConfig, RepairedGap};
use crate::signal::{windows, Channel, TimeSeries, Window};
use crate::stats;

/// Per-window heart rate; NaN marks windows that failed the gates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HrSeries {
    pub window_len_s: f64,
    pub hop_s: f64,
    pub window_start_s: Vec<f64>,
    pub bpm: Vec<f64>,
}

impl HrSeries {
    pub fn len(&self) -> usize {
        self.bpm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bpm.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.bpm.iter().filter(|v| !v.is_nan()).count()
    }

    pub fn nan_count(&self) -> usize {
        self.len() - self.valid_count()
    }

    /// Mean over non-NaN windows; NaN when there are none.
    pub fn mean_bpm(&self) -> f64 {
        let valid: Vec<f64> = self.bpm.iter().copied().filter(|v| !v.is_nan()).collect();
        stats::mean(&valid)
    }
}

/// How inter-beat intervals inside a window are reduced to one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum IbiAggregate {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct WindowConfig {
    pub window_len_s: f64,
    pub hop_s: f64,
    /// Minimum CLEAN fraction of a window (PPG only).
    pub min_clean_coverage: f64,
    pub min_peaks: usize,
    pub aggregate: IbiAggregate,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len_s: 30.0,
            hop_s: 30.0,
            min_clean_coverage: 0.8,
            min_peaks: 2,
            aggregate: IbiAggregate::Mean,
        }
    }
}

/// Every tunable of the PPG pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PipelineConfig {
    pub highpass_cutoff_hz: f64,
    pub quality: QualityConfig,
    pub reconstruction: ReconstructConfig,
    pub peaks: PeakConfig,
    pub window: WindowConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            highpass_cutoff_hz: filter::PPG_HIGHPASS_HZ,
            quality: QualityConfig::default(),
            reconstruction: ReconstructConfig::default(),
            peaks: PeakConfig::default(),
            window: WindowConfig::default(),
        }
    }
}

pub(crate) fn check_window_fits(series: &TimeSeries, window_len_s: f64) -> Result<()> {
    if series.duration_s() < window_len_s {
        return Err(Error::SeriesTooShort {
            duration_s: series.duration_s(),
            required_s: window_len_s,
        });
    }
    Ok(())
}

/// HR per window from detected peaks.
///
/// With a mask, a window needs `min_clean_coverage` CLEAN samples, and an
/// interval counts only when no NOISY sample lies between its two peaks.
pub fn windowed_hr(
    series: &TimeSeries,
    peaks: &PeakList,
    mask: Option<&QualityMask>,
    grid: &[Window],
    config: &WindowConfig,
) -> HrSeries {
    let fs = series.sample_rate_hz();
    let mut ibis: Vec<f64> = Vec::new();
    let bpm = grid
        .iter()
        .map(|w| {
            if let Some(m) = mask {
                let coverage = m.clean_samples_in(w.range()) as f64 / w.length as f64;
                if coverage < config.min_clean_coverage {
                    return f64::NAN;
                }
            }
            let p = peaks.within(w.range());
            if p.len() < config.min_peaks.max(2) {
                return f64::NAN;
            }
            ibis.clear();
            ibis.extend(
                p.windows(2)
                    .filter(|pair| mask.is_none_or(|m| !m.any_noisy_in(pair[0]..pair[1] + 1)))
                    .map(|pair| (pair[1] - pair[0]) as f64 / fs),
            );
            if ibis.is_empty() {
                return f64::NAN;
            }
            let ibi = match config.aggregate {
                IbiAggregate::Mean => stats::mean(&ibis),
                IbiAggregate::Median => stats::median_in_place(&mut ibis),
            };
            60.0 / ibi
        })
        .collect();
    HrSeries {
        window_len_s: config.window_len_s,
        hop_s: config.hop_s,
        window_start_s: grid.iter().map(|w| w.start_time_s).collect(),
        bpm,
    }
}

/// Every intermediate of one pipeline run.
#[derive(Debug, Clone)]
pub struct PpgAnalysis {
    pub filtered: TimeSeries,
    /// Mask straight out of quality assessment.
    pub assessed: QualityMask,
    pub reconstructed: TimeSeries,
    /// Mask after repaired runs were relabelled.
    pub mask: QualityMask,
    pub repaired: Vec<RepairedGap>,
    pub peaks: PeakList,
    pub hr: HrSeries,
}

/// Runs the full PPG pipeline on a raw series.
pub fn analyze_ppg(series: &TimeSeries, config: &PipelineConfig) -> Result<PpgAnalysis> {
    if series.channel() != Channel::Ppg {
        return Err(Error::WrongChannel);
    }
    check_window_fits(series, config.window.window_len_s)?;
    let grid = windows(series, config.window.window_len_s, config.window.hop_s)?;
    let filtered = filter::highpass_filter(series, config.highpass_cutoff_hz)?;
    let assessed = assess_quality_with(&filtered, &config.quality);
    let rec = reconstruct_with(&filtered, &assessed, &config.reconstruction, &config.peaks);
    let peaks = detect_peaks_with(&rec.series, &rec.mask, &config.peaks);
    let hr = windowed_hr(&rec.series, &peaks, Some(&rec.mask), &grid, &config.window);
    Ok(PpgAnalysis {
        filtered,
        assessed,
        reconstructed: rec.series,
        mask: rec.mask,
        repaired: rec.repaired,
        peaks,
        hr,
    })
}

/// Windowed HR of a raw PPG series with default pipeline settings.
pub fn estimate_hr(series: &TimeSeries, window_len_s: f64, hop_s: f64) -> Result<HrSeries> {
    let mut config = PipelineConfig::default();
    config.window.window_len_s = window_len_s;
    config.window.hop_s = hop_s;
    analyze_ppg(series, &config).map(|a| a.hr)
}
