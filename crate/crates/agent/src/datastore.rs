//! On-disk recording store: one CSV per recording plus a JSON manifest.
//!
//! Layout under the store root:
//!
//! ```text
//! manifest.json          array of RecordingMeta, sorted
//! recordings/<id>.csv    header `t_offset_s,value`, one row per sample
//! .lock                  writer lock
//! ```
//!
//! Writers hold an exclusive lock on `.lock` and replace files by
//! write-to-temp then rename, so readers never observe a manifest entry
//! whose CSV is missing.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{FixedOffset, NaiveDateTime, TimeZone};
use pulse_core::signal::trim_calibration;
use pulse_core::{Channel, TimeSeries};
use serde::{Deserialize, Serialize};

const MANIFEST: &str = "manifest.json";
const RECORDINGS: &str = "recordings";
const LOCK: &str = ".lock";
const CSV_HEADER: &str = "t_offset_s,value";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub recording_id: String,
    pub user_id: String,
    pub modality: Channel,
    pub start_epoch_s: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Relative to the store root.
    pub source_file: PathBuf,
}

impl RecordingMeta {
    pub fn end_epoch_s(&self) -> f64 {
        self.start_epoch_s + self.duration_s
    }

    pub fn contains(&self, epoch_s: f64) -> bool {
        (self.start_epoch_s..self.end_epoch_s()).contains(&epoch_s)
    }

    fn overlaps(&self, start: f64, end: f64) -> bool {
        self.start_epoch_s < end && start < self.end_epoch_s()
    }
}

/// Metadata supplied by the caller of [`Store::ingest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRequest {
    pub user_id: String,
    pub modality: Channel,
    pub start_epoch_s: f64,
    pub sample_rate_hz: f64,
}

/// The recording nearest to a missed lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestRecording {
    pub recording_id: String,
    pub start_epoch_s: f64,
    pub end_epoch_s: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("non-finite sample on line {line}")]
    NonFiniteSample { line: usize },
    #[error("recording overlaps {existing} for the same user and modality")]
    OverlapConflict { existing: String },
    #[error("unknown user {user_id}")]
    UserNotFound { user_id: String },
    #[error("no {modality} recording of {user_id} at {requested_epoch_s}")]
    NoRecordingAtTime {
        user_id: String,
        modality: Channel,
        requested_epoch_s: f64,
        nearest: Option<NearestRecording>,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Signal(#[from] pulse_core::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Parse { .. } => "ParseError",
            StoreError::NonFiniteSample { .. } => "NonFiniteSample",
            StoreError::OverlapConflict { .. } => "OverlapConflict",
            StoreError::UserNotFound { .. } => "UserNotFound",
            StoreError::NoRecordingAtTime { .. } => "NoRecordingAtTime",
            StoreError::InvalidRequest(_) => "InvalidRequest",
            StoreError::Signal(e) => e.code(),
            StoreError::Manifest(_) => "ManifestError",
            StoreError::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// Parses an instant given either as Unix seconds or as an ISO-8601 naive
/// date-time (`2019-07-25T14:00`, seconds optional) in the zone `tz`.
pub fn parse_instant(text: &str, tz: FixedOffset) -> Result<f64> {
    let text = text.trim();
    if let Ok(epoch) = text.parse::<f64>() {
        if epoch.is_finite() {
            return Ok(epoch);
        }
    }
    let naive = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
    .ok_or_else(|| StoreError::InvalidRequest(format!("unrecognised time {text:?}")))?;
    let local = tz
        .from_local_datetime(&naive)
        .single()
        .ok_or_else(|| StoreError::InvalidRequest(format!("ambiguous time {text:?}")))?;
    Ok(local.timestamp() as f64)
}

/// Parses a `t_offset_s,value` CSV at `rate` Hz. Offsets must sit within
/// half a sample of `row / rate`.
pub fn parse_csv(reader: impl BufRead, rate: f64) -> Result<Vec<f64>> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(StoreError::Parse {
            line: 1,
            message: format!("expected header {CSV_HEADER:?}"),
        });
    }
    let mut samples = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: &str| StoreError::Parse {
            line: line_no,
            message: message.to_string(),
        };
        let (t, v) = line
            .split_once(',')
            .ok_or_else(|| parse_err("expected two fields"))?;
        let t: f64 = t.trim().parse().map_err(|_| parse_err("bad t_offset_s"))?;
        let v: f64 = v.trim().parse().map_err(|_| parse_err("bad value"))?;
        if !v.is_finite() {
            return Err(StoreError::NonFiniteSample { line: line_no });
        }
        let expected = samples.len() as f64 / rate;
        let off = (t - expected).abs();
        if off.is_nan() || off > 0.5 / rate {
            return Err(parse_err("t_offset_s is not on the uniform sample grid"));
        }
        samples.push(v);
    }
    if samples.is_empty() {
        return Err(StoreError::Parse {
            line: 2,
            message: "no samples".into(),
        });
    }
    Ok(samples)
}

/// Renders samples in the store's CSV format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn render_csv(samples: &[f64], rate: f64) -> String {
    let mut out = String::with_capacity(samples.len() * 20);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (i, v) in samples.iter().enumerate() {
        let _ = writeln!(out, "{:.6},{}", i as f64 / rate, v);
    }
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    trim_s: f64,
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`. Lookups trim
    /// `trim_s` seconds from each end of the returned series.
    pub fn open(root: impl Into<PathBuf>, trim_s: f64) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(RECORDINGS))?;
        Ok(Self { root, trim_s })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn trim_s(&self) -> f64 {
        self.trim_s
    }

    pub fn manifest(&self) -> Result<Vec<RecordingMeta>> {
        match fs::read(self.root.join(MANIFEST)) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    fn lock(&self) -> Result<File> {
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.root.join(LOCK))?;
        f.lock()?;
        Ok(f)
    }

    /// Parses a CSV file and stores it as a new recording.
    pub fn ingest(&self, file: &Path, request: &IngestRequest) -> Result<RecordingMeta> {
        check_request(request)?;
        let reader = BufReader::new(File::open(file)?);
        let samples = parse_csv(reader, request.sample_rate_hz)?;
        self.insert(request, &samples)
    }

    /// Stores already-parsed samples as a new recording.
    pub fn insert(&self, request: &IngestRequest, samples: &[f64]) -> Result<RecordingMeta> {
        check_request(request)?;
        if let Some(line) = samples.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFiniteSample { line: line + 2 });
        }
        if samples.is_empty() {
            return Err(StoreError::InvalidRequest("no samples".into()));
        }
        let _guard = self.lock()?;
        let mut manifest = self.manifest()?;
        let duration_s = samples.len() as f64 / request.sample_rate_hz;
        let end = request.start_epoch_s + duration_s;
        if let Some(clash) = manifest.iter().find(|m| {
            m.user_id == request.user_id
                && m.modality == request.modality
                && m.overlaps(request.start_epoch_s, end)
        }) {
            return Err(StoreError::OverlapConflict {
                existing: clash.recording_id.clone(),
            });
        }
        let recording_id = format!(
            "{}-{}-{}",
            request.user_id,
            request.modality.as_str().to_ascii_lowercase(),
            (request.start_epoch_s * 1000.0).round() as i64
        );
        if manifest.iter().any(|m| m.recording_id == recording_id) {
            return Err(StoreError::OverlapConflict {
                existing: recording_id,
            });
        }
        let source_file = Path::new(RECORDINGS).join(format!("{recording_id}.csv"));
        write_atomic(
            &self.root.join(&source_file),
            render_csv(samples, request.sample_rate_hz).as_bytes(),
        )?;
        let meta = RecordingMeta {
            recording_id,
            user_id: request.user_id.clone(),
            modality: request.modality,
            start_epoch_s: request.start_epoch_s,
            duration_s,
            sample_rate_hz: request.sample_rate_hz,
            source_file,
        };
        manifest.push(meta.clone());
        manifest.sort_by(|a, b| {
            (&a.user_id, a.modality)
                .cmp(&(&b.user_id, b.modality))
                .then(a.start_epoch_s.total_cmp(&b.start_epoch_s))
        });
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        write_atomic(&self.root.join(MANIFEST), &json)?;
        Ok(meta)
    }

    /// Every recording of `user_id`, in manifest order.
    pub fn list_recordings(&self, user_id: &str) -> Result<Vec<RecordingMeta>> {
        let found: Vec<RecordingMeta> = self
            .manifest()?
            .into_iter()
            .filter(|m| m.user_id == user_id)
            .collect();
        if found.is_empty() {
            return Err(StoreError::UserNotFound {
                user_id: user_id.to_string(),
            });
        }
        Ok(found)
    }

    /// Full, untrimmed samples of a recording.
    pub fn load(&self, meta: &RecordingMeta) -> Result<TimeSeries> {
        let reader = BufReader::new(File::open(self.root.join(&meta.source_file))?);
        let samples = parse_csv(reader, meta.sample_rate_hz)?;
        Ok(TimeSeries::new(
            samples,
            meta.sample_rate_hz,
            meta.start_epoch_s,
            meta.modality,
        )?)
    }

    /// The recording containing `at_epoch_s` without loading samples.
    pub fn find(&self, user_id: &str, modality: Channel, at_epoch_s: f64) -> Result<RecordingMeta> {
        let candidates: Vec<RecordingMeta> = self
            .list_recordings(user_id)?
            .into_iter()
            .filter(|m| m.modality == modality)
            .collect();
        if let Some(hit) = candidates.iter().find(|m| m.contains(at_epoch_s)) {
            return Ok(hit.clone());
        }
        let distance = |m: &RecordingMeta| {
            if at_epoch_s < m.start_epoch_s {
                m.start_epoch_s - at_epoch_s
            } else {
                at_epoch_s - m.end_epoch_s()
            }
        };
        let nearest = candidates
            .iter()
            .min_by(|a, b| distance(a).total_cmp(&distance(b)))
            .map(|m| NearestRecording {
                recording_id: m.recording_id.clone(),
                start_epoch_s: m.start_epoch_s,
                end_epoch_s: m.end_epoch_s(),
            });
        Err(StoreError::NoRecordingAtTime {
            user_id: user_id.to_string(),
            modality,
            requested_epoch_s: at_epoch_s,
            nearest,
        })
    }

    /// The recording containing `at_epoch_s`, loaded and calibration-trimmed.
    pub fn lookup(
        &self,
        user_id: &str,
        modality: Channel,
        at_epoch_s: f64,
    ) -> Result<(TimeSeries, RecordingMeta)> {
        let meta = self.find(user_id, modality, at_epoch_s)?;
        let series = self.load(&meta)?;
        let series = if self.trim_s > 0.0 {
            trim_calibration(&series, self.trim_s)?
        } else {
            series
        };
        Ok((series, meta))
    }
}

fn check_request(request: &IngestRequest) -> Result<()> {
    if request.user_id.is_empty()
        || !request
            .user_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
    {
        return Err(StoreError::InvalidRequest(
            "user_id must be non-empty ASCII letters, digits, '_' or '.'".into(),
        ));
    }
    if !(request.sample_rate_hz.is_finite() && request.sample_rate_hz > 0.0) {
        return Err(StoreError::InvalidRequest(
            "sample rate must be positive".into(),
        ));
    }
    if !request.start_epoch_s.is_finite() {
        return Err(StoreError::InvalidRequest("start must be finite".into()));
    }
    Ok(())
}
