//! Reference heart rate from Lead-II ECG using a two-moving-average QRS
//! detector.
//!
//! The band-passed signal is squared and smoothed at two scales. Where the
//! short (QRS-length) average exceeds the long (beat-length) average plus an
//! offset, a block of interest opens; blocks at least one QRS width long
//! yield one R-peak at their maximum.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::filter::Sos;
use crate::hr::{check_window_fits, windowed_hr, HrSeries, WindowConfig};
use crate::peaks::{enforce_refractory, PeakList};
use crate::signal::{windows, Channel, TimeSeries};

/// Lowest sample rate the detector accepts.
pub const MIN_SAMPLE_RATE_HZ: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct QrsConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub band_order: usize,
    pub qrs_window_s: f64,
    pub beat_window_s: f64,
    /// Offset as a fraction of the mean squared signal.
    pub beta: f64,
    pub min_block_s: f64,
    pub refractory_s: f64,
}

impl Default for QrsConfig {
    fn default() -> Self {
        Self {
            band_low_hz: 8.0,
            band_high_hz: 20.0,
            band_order: 3,
            qrs_window_s: 0.12,
            beat_window_s: 0.6,
            beta: 0.08,
            min_block_s: 0.08,
            refractory_s: 0.2,
        }
    }
}

/// Centred moving average over `width` samples; shrinks at the edges.
fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let half = width / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix[prefix.len() - 1] + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + width - half).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn samples(seconds: f64, fs: f64) -> usize {
    (libm::round(seconds * fs) as usize).max(1)
}

/// R-peak indices of a Lead-II ECG series.
pub fn detect_qrs_with(series: &TimeSeries, config: &QrsConfig) -> Result<PeakList> {
    if series.channel() != Channel::EcgLeadII {
        return Err(Error::WrongChannel);
    }
    let fs = series.sample_rate_hz();
    if fs < MIN_SAMPLE_RATE_HZ {
        return Err(Error::InvalidSeries("ECG sample rate below 100 Hz"));
    }
    let sos = Sos::butter_bandpass(
        config.band_order,
        config.band_low_hz,
        config.band_high_hz,
        fs,
    )?;
    let filtered = sos.filtfilt(series.samples());
    let squared: Vec<f64> = filtered.iter().map(|v| v * v).collect();
    let mean_sq = squared.iter().sum::<f64>() / squared.len() as f64;
    if !(mean_sq > 0.0) {
        return Ok(PeakList::default());
    }
    let ma_qrs = moving_average(&squared, samples(config.qrs_window_s, fs));
    let ma_beat = moving_average(&squared, samples(config.beat_window_s, fs));
    let offset = config.beta * mean_sq;
    let min_block = samples(config.min_block_s, fs);

    let mut picks = Vec::new();
    let mut open: Option<usize> = None;
    for i in 0..=squared.len() {
        let inside = i < squared.len() && ma_qrs[i] > ma_beat[i] + offset;
        match (inside, open) {
            (true, None) => open = Some(i),
            (false, Some(start)) => {
                if i - start >= min_block {
                    let peak = (start..i)
                        .max_by(|&a, &b| filtered[a].total_cmp(&filtered[b]))
                        .unwrap_or(start);
                    picks.push(peak);
                }
                open = None;
            }
            _ => {}
        }
    }
    let refractory = samples(config.refractory_s, fs);
    Ok(PeakList {
        indices: enforce_refractory(picks, &filtered, refractory),
    })
}

/// [`detect_qrs_with`] using the default detector settings.
pub fn detect_qrs(series: &TimeSeries) -> Result<PeakList> {
    detect_qrs_with(series, &QrsConfig::default())
}

/// Windowed HR from R-R intervals. No quality mask is applied: only the
/// peak-count gate can produce NaN.
pub fn reference_hr_with(
    series: &TimeSeries,
    qrs: &QrsConfig,
    window: &WindowConfig,
) -> Result<HrSeries> {
    if series.channel() != Channel::EcgLeadII {
        return Err(Error::WrongChannel);
    }
    check_window_fits(series, window.window_len_s)?;
    let grid = windows(series, window.window_len_s, window.hop_s)?;
    let peaks = detect_qrs_with(series, qrs)?;
    Ok(windowed_hr(series, &peaks, None, &grid, window))
}

pub fn reference_hr(series: &TimeSeries, window_len_s: f64, hop_s: f64) -> Result<HrSeries> {
    let window = WindowConfig {
        window_len_s,
        hop_s,
        ..WindowConfig::default()
    };
    reference_hr_with(series, &QrsConfig::default(), &window)
}
