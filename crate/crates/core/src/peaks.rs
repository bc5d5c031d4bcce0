//! Adaptive-threshold systolic peak detection.
//!
//! A sample is a candidate when it is a local maximum above the rolling
//! percentile of its surrounding window. Candidates closer than the
//! refractory period compete and the larger one survives.

use alloc::vec::Vec;
use core::ops::Range;

use crate::quality::QualityMask;
use crate::signal::TimeSeries;
use crate::stats;

/// Strictly increasing sample indices of detected peaks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PeakList {
    pub indices: Vec<usize>,
}

impl PeakList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Peaks with index inside `range`.
    pub fn within(&self, range: Range<usize>) -> &[usize] {
        let lo = self.indices.partition_point(|&i| i < range.start);
        let hi = self.indices.partition_point(|&i| i < range.end);
        &self.indices[lo..hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PeakConfig {
    /// Length of the centred window for the adaptive threshold.
    pub threshold_window_s: f64,
    /// Percentile (0..1) of that window used as the threshold.
    pub threshold_percentile: f64,
    pub refractory_s: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            threshold_window_s: 2.0,
            threshold_percentile: 0.6,
            refractory_s: 0.3,
        }
    }
}

impl PeakConfig {
    /// Minimum gap between peaks, in samples.
    pub fn refractory_samples(&self, fs: f64) -> usize {
        (libm::ceil(self.refractory_s * fs - 1e-9) as usize).max(1)
    }
}

/// Keeps the larger of any two peaks closer than `refractory` samples.
pub(crate) fn enforce_refractory(
    candidates: impl IntoIterator<Item = usize>,
    x: &[f64],
    refractory: usize,
) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in candidates {
        match kept.last_mut() {
            Some(last) if i - *last < refractory => {
                if x[i] > x[*last] {
                    *last = i;
                }
            }
            _ => kept.push(i),
        }
    }
    kept
}

/// Local maxima above the rolling percentile inside `range`, before
/// refractory arbitration.
fn candidates(x: &[f64], range: Range<usize>, fs: f64, config: &PeakConfig) -> Vec<usize> {
    let n = x.len();
    let half = (libm::round(config.threshold_window_s * fs) as usize / 2).max(1);
    let mut scratch = Vec::with_capacity(2 * half + 1);
    let mut out = Vec::new();
    let start = range.start.max(1);
    let end = range.end.min(n.saturating_sub(1));
    for i in start..end {
        let v = x[i];
        if !(v > x[i - 1] && v >= x[i + 1]) {
            continue;
        }
        // full-width window, shifted inwards at the edges
        let lo = i.saturating_sub(half).min(n.saturating_sub(2 * half + 1));
        scratch.clear();
        scratch.extend_from_slice(&x[lo..(lo + 2 * half + 1).min(n)]);
        if v > stats::percentile_in_place(&mut scratch, config.threshold_percentile) {
            out.push(i);
        }
    }
    out
}

/// Peaks of `x` restricted to `range`, ignoring any quality mask.
pub(crate) fn peaks_in(x: &[f64], range: Range<usize>, fs: f64, config: &PeakConfig) -> Vec<usize> {
    let c = candidates(x, range, fs, config);
    enforce_refractory(c, x, config.refractory_samples(fs))
}

/// Systolic peaks of a filtered PPG series inside CLEAN segments.
pub fn detect_peaks_with(series: &TimeSeries, mask: &QualityMask, config: &PeakConfig) -> PeakList {
    let x = series.samples();
    let fs = series.sample_rate_hz();
    let clean = candidates(x, 0..x.len(), fs, config)
        .into_iter()
        .filter(|&i| mask.is_clean_at(i));
    PeakList {
        indices: enforce_refractory(clean, x, config.refractory_samples(fs)),
    }
}

/// [`detect_peaks_with`] using the default detector settings.
pub fn detect_peaks(series: &TimeSeries, mask: &QualityMask) -> PeakList {
    detect_peaks_with(series, mask, &PeakConfig::default())
}
