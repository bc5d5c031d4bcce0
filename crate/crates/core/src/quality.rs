//! Segment-wise signal quality assessment.
//!
//! A segment is CLEAN iff all four rules pass:
//!
//! 1. peak-to-peak amplitude within `[amp_ratio_lo, amp_ratio_hi]` times the
//!    recording's median segment amplitude,
//! 2. `|skewness| <= max_abs_skew` and `kurtosis <= max_kurtosis`,
//! 3. the lag-domain autocorrelation has a local peak `>= min_autocorr` at a
//!    lag inside the plausible heart-rate range,
//! 4. at least `min_band_power` of the spectral power lies in the cardiac
//!    band.
//!
//! Degenerate segments (flat, too short) are NOISY. Two clean-ups follow:
//! CLEAN runs shorter than `min_clean_run_s` that border a NOISY segment are
//! relabelled NOISY, then every NOISY run is widened by `guard_segments` on
//! each side. Segments only partly covered by an artifact often pass the
//! rules.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use crate::signal::TimeSeries;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "SCREAMING_SNAKE_CASE"))]
pub enum Label {
    Clean,
    Noisy,
}

/// Thresholds of the quality rules.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct QualityConfig {
    pub segment_len_s: f64,
    pub amp_ratio_lo: f64,
    pub amp_ratio_hi: f64,
    pub max_abs_skew: f64,
    pub max_kurtosis: f64,
    pub min_autocorr: f64,
    pub hr_lo_bpm: f64,
    pub hr_hi_bpm: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub min_band_power: f64,
    pub min_clean_run_s: f64,
    pub guard_segments: usize,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            segment_len_s: 2.0,
            amp_ratio_lo: 0.1,
            amp_ratio_hi: 10.0,
            max_abs_skew: 3.0,
            max_kurtosis: 10.0,
            min_autocorr: 0.45,
            hr_lo_bpm: 40.0,
            hr_hi_bpm: 200.0,
            band_lo_hz: 0.5,
            band_hi_hz: 3.5,
            min_band_power: 0.5,
            min_clean_run_s: 6.0,
            guard_segments: 2,
        }
    }
}

/// One CLEAN/NOISY label per consecutive segment of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityMask {
    segment_len_s: f64,
    segment_samples: usize,
    series_len: usize,
    labels: Vec<Label>,
}

impl QualityMask {
    /// Mask with every segment set to `label`.
    pub fn uniform(series: &TimeSeries, segment_len_s: f64, label: Label) -> Self {
        let segment_samples = series.samples_for(segment_len_s).max(1);
        let count = series.len().div_ceil(segment_samples);
        Self {
            segment_len_s,
            segment_samples,
            series_len: series.len(),
            labels: alloc::vec![label; count],
        }
    }

    /// Mask from explicit labels; `None` when the count does not match the
    /// series.
    pub fn from_labels(
        series: &TimeSeries,
        segment_len_s: f64,
        labels: Vec<Label>,
    ) -> Option<Self> {
        let mut mask = Self::uniform(series, segment_len_s, Label::Clean);
        if mask.labels.len() != labels.len() {
            return None;
        }
        mask.labels = labels;
        Some(mask)
    }

    pub fn segment_len_s(&self) -> f64 {
        self.segment_len_s
    }

    pub fn segment_samples(&self) -> usize {
        self.segment_samples
    }

    pub fn series_len(&self) -> usize {
        self.series_len
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn set(&mut self, segment: usize, label: Label) {
        self.labels[segment] = label;
    }

    pub fn segment_range(&self, segment: usize) -> Range<usize> {
        let start = segment * self.segment_samples;
        start..(start + self.segment_samples).min(self.series_len)
    }

    pub fn segment_of(&self, sample: usize) -> usize {
        sample / self.segment_samples
    }

    pub fn is_clean_at(&self, sample: usize) -> bool {
        self.labels
            .get(self.segment_of(sample))
            .is_some_and(|l| *l == Label::Clean)
    }

    /// Number of CLEAN samples inside `range`.
    pub fn clean_samples_in(&self, range: Range<usize>) -> usize {
        let end = range.end.min(self.series_len);
        if range.start >= end {
            return 0;
        }
        let mut total = 0;
        for seg in self.segment_of(range.start)..=self.segment_of(end - 1) {
            if self.labels[seg] == Label::Clean {
                let r = self.segment_range(seg);
                total += r.end.min(end) - r.start.max(range.start);
            }
        }
        total
    }

    /// True when any sample of `range` is NOISY.
    pub fn any_noisy_in(&self, range: Range<usize>) -> bool {
        self.clean_samples_in(range.clone())
            < range.end.min(self.series_len) - range.start.min(range.end)
    }

    /// Maximal runs of NOISY segments as `(first_segment, end_segment)`.
    pub fn noisy_runs(&self) -> Vec<Range<usize>> {
        let mut runs = Vec::new();
        let mut start = None;
        for (k, l) in self.labels.iter().enumerate() {
            match (l, start) {
                (Label::Noisy, None) => start = Some(k),
                (Label::Clean, Some(s)) => {
                    runs.push(s..k);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push(s..self.labels.len());
        }
        runs
    }

    /// Relabels NOISY every CLEAN run shorter than `min_segments` that
    /// borders a NOISY segment.
    pub fn remove_short_clean_runs(&mut self, min_segments: usize) {
        let n = self.labels.len();
        let mut k = 0;
        while k < n {
            if self.labels[k] == Label::Noisy {
                k += 1;
                continue;
            }
            let start = k;
            while k < n && self.labels[k] == Label::Clean {
                k += 1;
            }
            let bordered = start > 0 || k < n;
            if bordered && k - start < min_segments {
                self.labels[start..k].fill(Label::Noisy);
            }
        }
    }

    /// Widens every NOISY run by `segments` on each side.
    pub fn widen_noisy_runs(&mut self, segments: usize) {
        if segments == 0 {
            return;
        }
        let n = self.labels.len();
        for run in self.noisy_runs() {
            let lo = run.start.saturating_sub(segments);
            let hi = (run.end + segments).min(n);
            self.labels[lo..hi].fill(Label::Noisy);
        }
    }

    pub fn clean_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|l| **l == Label::Clean).count() as f64 / self.labels.len() as f64
    }
}

/// Per-segment features feeding the rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentFeatures {
    pub peak_to_peak: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub autocorr_peak: f64,
    pub band_power_fraction: f64,
}

/// The rule set bound to one recording (sampling rate and amplitude
/// reference).
#[derive(Debug, Clone)]
pub struct QualityRules {
    config: QualityConfig,
    fs: f64,
    reference_amplitude: f64,
}

fn peak_to_peak(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    hi - lo
}

impl QualityRules {
    /// Binds the rules to `series`, using the median peak-to-peak amplitude
    /// of its full segments as the amplitude reference.
    pub fn for_series(series: &TimeSeries, config: QualityConfig) -> Self {
        let seg = series.samples_for(config.segment_len_s).max(1);
        let x = series.samples();
        let mut amps: Vec<f64> = x.chunks_exact(seg).map(peak_to_peak).collect();
        if amps.is_empty() {
            amps.push(peak_to_peak(x));
        }
        Self {
            config,
            fs: series.sample_rate_hz(),
            reference_amplitude: stats::median_in_place(&mut amps),
        }
    }

    pub fn config(&self) -> &QualityConfig {
        &self.config
    }

    pub fn reference_amplitude(&self) -> f64 {
        self.reference_amplitude
    }

    fn lag_bounds(&self) -> (usize, usize) {
        let lo = libm::floor(self.fs * 60.0 / self.config.hr_hi_bpm).max(1.0) as usize;
        let hi = libm::ceil(self.fs * 60.0 / self.config.hr_lo_bpm) as usize;
        (lo, hi.max(lo))
    }

    fn autocorr_peak(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let (lo, hi) = self.lag_bounds();
        let min_overlap = (n / 4).max(4);
        if n < lo + min_overlap {
            return 0.0;
        }
        let max_lag = hi.min(n - min_overlap);
        let r = |lag: usize| stats::pearson(&x[..n - lag], &x[lag..]);
        let mut best = f64::NEG_INFINITY;
        let mut prev = r(lo - 1);
        let mut cur = r(lo);
        for lag in lo..=max_lag {
            let next = if lag < n - min_overlap {
                r(lag + 1)
            } else {
                f64::NEG_INFINITY
            };
            if cur >= prev && cur >= next {
                best = best.max(cur);
            }
            prev = cur;
            cur = next;
        }
        best
    }

    fn band_power_fraction(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let m = stats::mean(x);
        let mut band = 0.0;
        let mut total = 0.0;
        for k in 1..=n / 2 {
            let f = k as f64 * self.fs / n as f64;
            let w = -2.0 * PI * k as f64 / n as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let (s, c) = libm::sincos(w * i as f64);
                re += (v - m) * c;
                im += (v - m) * s;
            }
            let p = re * re + im * im;
            total += p;
            if f >= self.config.band_lo_hz && f <= self.config.band_hi_hz {
                band += p;
            }
        }
        if total > 0.0 {
            band / total
        } else {
            0.0
        }
    }

    /// Features of one segment; `None` when degenerate.
    pub fn features(&self, x: &[f64]) -> Option<SegmentFeatures> {
        if x.len() < 4 {
            return None;
        }
        let peak_to_peak = peak_to_peak(x);
        if !(peak_to_peak > 0.0) || !(self.reference_amplitude > 0.0) {
            return None;
        }
        let (skewness, kurtosis) = stats::skew_kurtosis(x)?;
        Some(SegmentFeatures {
            peak_to_peak,
            skewness,
            kurtosis,
            autocorr_peak: self.autocorr_peak(x),
            band_power_fraction: self.band_power_fraction(x),
        })
    }

    pub fn passes(&self, f: &SegmentFeatures) -> bool {
        let c = &self.config;
        let ratio = f.peak_to_peak / self.reference_amplitude;
        ratio >= c.amp_ratio_lo
            && ratio <= c.amp_ratio_hi
            && f.skewness.abs() <= c.max_abs_skew
            && f.kurtosis <= c.max_kurtosis
            && f.autocorr_peak >= c.min_autocorr
            && f.band_power_fraction >= c.min_band_power
    }

    pub fn is_clean(&self, x: &[f64]) -> bool {
        self.features(x).is_some_and(|f| self.passes(&f))
    }
}

/// Labels each `config.segment_len_s` segment of a filtered PPG series.
pub fn assess_quality_with(series: &TimeSeries, config: &QualityConfig) -> QualityMask {
    let rules = QualityRules::for_series(series, *config);
    let mut mask = QualityMask::uniform(series, config.segment_len_s, Label::Noisy);
    let seg = mask.segment_samples();
    let x = series.samples();
    for k in 0..mask.labels().len() {
        let r = mask.segment_range(k);
        // a short tail segment is degenerate
        if r.len() * 2 < seg {
            continue;
        }
        if rules.is_clean(&x[r]) {
            mask.set(k, Label::Clean);
        }
    }
    let min_run =
        libm::ceil(config.min_clean_run_s / config.segment_len_s - 1e-9).max(0.0) as usize;
    mask.remove_short_clean_runs(min_run);
    mask.widen_noisy_runs(config.guard_segments);
    mask
}

/// [`assess_quality_with`] using default thresholds and the given segment
/// length.
pub fn assess_quality(series: &TimeSeries, segment_len_s: f64) -> QualityMask {
    assess_quality_with(
        series,
        &QualityConfig {
            segment_len_s,
            ..QualityConfig::default()
        },
    )
}
