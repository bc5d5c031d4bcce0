//! Uniformly sampled signals and the windowing grid shared by every stage.

use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};

/// Acquisition channel of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Channel {
    #[cfg_attr(feature = "serde", serde(rename = "PPG"))]
    Ppg,
    #[cfg_attr(feature = "serde", serde(rename = "ECG_LEAD_II"))]
    EcgLeadII,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Ppg => "PPG",
            Channel::EcgLeadII => "ECG_LEAD_II",
        }
    }
}

impl core::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PPG" => Ok(Channel::Ppg),
            "ECG" | "ECG_LEAD_II" | "ECG-LEAD-II" | "LEAD_II" => Ok(Channel::EcgLeadII),
            _ => Err(Error::InvalidSeries("unknown channel")),
        }
    }
}

impl core::fmt::Display for Channel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A uniformly sampled, finite-valued signal.
///
/// Gaps and artifacts are never encoded as NaN here; they are carried by a
/// [`crate::QualityMask`] instead, so every constructor rejects non-finite
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    start_epoch_s: f64,
    channel: Channel,
}

impl TimeSeries {
    pub fn new(
        samples: Vec<f64>,
        sample_rate_hz: f64,
        start_epoch_s: f64,
        channel: Channel,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidSeries(
                "sample rate must be positive and finite",
            ));
        }
        if !start_epoch_s.is_finite() {
            return Err(Error::InvalidSeries("start epoch must be finite"));
        }
        if samples.is_empty() {
            return Err(Error::InvalidSeries("series must hold at least one sample"));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { index });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            start_epoch_s,
            channel,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn start_epoch_s(&self) -> f64 {
        self.start_epoch_s
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Timestamp (epoch seconds) of sample `index`.
    pub fn time_of(&self, index: usize) -> f64 {
        self.start_epoch_s + index as f64 / self.sample_rate_hz
    }

    /// Number of samples spanning `seconds`, rounded to the nearest sample.
    pub fn samples_for(&self, seconds: f64) -> usize {
        libm::round(seconds * self.sample_rate_hz) as usize
    }

    /// Same rate, epoch and channel with new sample values.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        TimeSeries::new(
            samples,
            self.sample_rate_hz,
            self.start_epoch_s,
            self.channel,
        )
    }

    /// Copy of the sub-range `range`, with the epoch advanced accordingly.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.samples.len() {
            return Err(Error::InvalidSeries("slice out of bounds"));
        }
        TimeSeries::new(
            self.samples[range.clone()].to_vec(),
            self.sample_rate_hz,
            self.time_of(range.start),
            self.channel,
        )
    }
}

/// A fully contained analysis window of a parent series.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Window {
    pub start_index: usize,
    pub length: usize,
    pub start_time_s: f64,
}

impl Window {
    pub fn range(&self) -> Range<usize> {
        self.start_index..self.start_index + self.length
    }
}

/// Drops the first and last `trim_s` seconds of a recording.
pub fn trim_calibration(series: &TimeSeries, trim_s: f64) -> Result<TimeSeries> {
    if !(trim_s.is_finite() && trim_s >= 0.0) {
        return Err(Error::InvalidSeries("trim must be a non-negative duration"));
    }
    let duration_s = series.duration_s();
    if duration_s <= 2.0 * trim_s {
        return Err(Error::SeriesTooShort {
            duration_s,
            required_s: 2.0 * trim_s,
        });
    }
    let drop = series.samples_for(trim_s);
    let n = series.len();
    if 2 * drop >= n {
        return Err(Error::SeriesTooShort {
            duration_s,
            required_s: 2.0 * trim_s,
        });
    }
    series.slice(drop..n - drop)
}

/// Maximal list of windows of `len_s` seconds at `hop_s` spacing.
///
/// The partial tail window is dropped.
pub fn windows(series: &TimeSeries, len_s: f64, hop_s: f64) -> Result<Vec<Window>> {
    if !(len_s.is_finite() && len_s > 0.0) {
        return Err(Error::InvalidWindowSpec("window length must be positive"));
    }
    if !(hop_s.is_finite() && hop_s > 0.0) {
        return Err(Error::InvalidWindowSpec("hop must be positive"));
    }
    let length = series.samples_for(len_s);
    let hop = series.samples_for(hop_s);
    if length == 0 || hop == 0 {
        return Err(Error::InvalidWindowSpec("window shorter than one sample"));
    }
    if length > series.len() {
        return Err(Error::InvalidWindowSpec("window longer than series"));
    }
    let count = (series.len() - length) / hop + 1;
    Ok((0..count)
        .map(|k| {
            let start_index = k * hop;
            Window {
                start_index,
                length,
                start_time_s: series.time_of(start_index),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ppg(seconds: f64, rate: f64) -> TimeSeries {
        let n = libm::round(seconds * rate) as usize;
        TimeSeries::new(vec![0.5; n], rate, 1_000.0, Channel::Ppg).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            TimeSeries::new(vec![1.0, f64::NAN], 20.0, 0.0, Channel::Ppg),
            Err(Error::NonFiniteSample { index: 1 })
        ));
        assert!(TimeSeries::new(vec![1.0], 0.0, 0.0, Channel::Ppg).is_err());
        assert!(TimeSeries::new(vec![], 20.0, 0.0, Channel::Ppg).is_err());
        assert!(TimeSeries::new(vec![f64::INFINITY], 20.0, 0.0, Channel::Ppg).is_err());
    }

    #[test]
    fn trims_sixteen_minute_recording() {
        let s = ppg(960.0, 20.0);
        assert_eq!(s.len(), 19_200);
        let t = trim_calibration(&s, 60.0).unwrap();
        assert_eq!(t.len(), 16_800);
        assert_eq!(t.start_epoch_s(), 1_060.0);
    }

    #[test]
    fn trim_boundary() {
        let t = trim_calibration(&ppg(121.0, 20.0), 60.0).unwrap();
        assert_eq!(t.duration_s(), 1.0);
        assert_eq!(t.start_epoch_s(), 1_060.0);
        assert!(matches!(
            trim_calibration(&ppg(120.0, 20.0), 60.0),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn window_counts() {
        let s = ppg(60.0, 20.0);
        assert_eq!(windows(&s, 10.0, 10.0).unwrap().len(), 6);
        // floor((60 - 10) / 5) + 1
        assert_eq!(windows(&s, 10.0, 5.0).unwrap().len(), 11);
        assert!(matches!(
            windows(&ppg(9.0, 20.0), 10.0, 10.0),
            Err(Error::InvalidWindowSpec(_))
        ));
        assert!(windows(&s, 0.0, 1.0).is_err());
        assert!(windows(&s, 1.0, -1.0).is_err());
    }

    #[test]
    fn window_times_follow_epoch() {
        let s = ppg(60.0, 20.0);
        let w = windows(&s, 30.0, 15.0).unwrap();
        let starts: Vec<f64> = w.iter().map(|w| w.start_time_s).collect();
        assert_eq!(starts, vec![1_000.0, 1_015.0, 1_030.0]);
        assert!(w.iter().all(|w| w.start_index + w.length <= s.len()));
    }

    #[test]
    fn channel_parsing() {
        assert_eq!("ppg".parse::<Channel>().unwrap(), Channel::Ppg);
        assert_eq!(
            "ECG_LEAD_II".parse::<Channel>().unwrap(),
            Channel::EcgLeadII
        );
        assert!("EEG".parse::<Channel>().is_err());
    }
}
