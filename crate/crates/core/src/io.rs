//! Tensor persistence, trip-record ingestion, zone and event lists, dataset statistics.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{GlossError, Result};
use crate::eval::{Event, EventList};
use crate::scalar::Real;
use crate::synth::{DAYS, HOURS, WEEKS};
use crate::tensor::{DenseTensor, SupportSet};

pub const TENSOR_MAGIC: [u8; 4] = *b"GLTN";
pub const MASK_MAGIC: [u8; 4] = *b"GLMK";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
/// Refuse headers claiming more entries than this (about 2 GiB of values).
const MAX_ENTRIES: u64 = 1 << 28;

/// Sidecar metadata stored next to every container as `<path>.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TensorMeta {
    pub mode_names: Vec<String>,
    pub units: String,
    /// Free-form description of the content, e.g. `sparse` or `scores`.
    pub kind: String,
    /// Scoring method for score tensors.
    pub method: Option<String>,
    pub zones: Option<Vec<String>>,
    pub provenance: serde_json::Value,
}

impl TensorMeta {
    pub fn standard(kind: &str) -> Self {
        Self {
            mode_names: ["hour", "day", "week", "zone"].map(String::from).to_vec(),
            units: "count".into(),
            kind: kind.into(),
            ..Self::default()
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_header<W: Write>(w: &mut W, magic: [u8; 4], shape: &[usize]) -> Result<()> {
    w.write_all(&magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(shape.len() as u64).to_le_bytes())?;
    for &e in shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_header<R: Read>(r: &mut R, magic: [u8; 4]) -> Result<Vec<usize>> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if m != magic {
        return Err(GlossError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(GlossError::Format(format!("unsupported container version {version}")));
    }
    let order = read_u64(r)?;
    if order == 0 || order > 64 {
        return Err(GlossError::Format(format!("implausible tensor order {order}")));
    }
    let mut shape = Vec::with_capacity(order as usize);
    let mut total: u64 = 1;
    for _ in 0..order {
        let e = read_u64(r)?;
        total = total.saturating_mul(e);
        shape.push(e as usize);
    }
    if total == 0 || total > MAX_ENTRIES {
        return Err(GlossError::Format(format!("implausible tensor shape {shape:?}")));
    }
    Ok(shape)
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(GlossError::Format("trailing bytes after tensor data".into()));
    }
    Ok(())
}

pub fn write_tensor_to<T: Real, W: Write>(t: &DenseTensor<T>, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    write_header(&mut w, TENSOR_MAGIC, t.shape())?;
    for v in t.as_slice() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor_from<T: Real, R: Read>(r: R) -> Result<DenseTensor<T>> {
    let mut r = BufReader::new(r);
    let shape = read_header(&mut r, TENSOR_MAGIC)?;
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        data.push(T::lit(f64::from_le_bytes(b)));
    }
    expect_eof(&mut r)?;
    DenseTensor::from_vec(&shape, data)
}

pub fn write_mask_to<W: Write>(m: &SupportSet, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    write_header(&mut w, MASK_MAGIC, m.shape())?;
    let bytes: Vec<u8> = m.as_slice().iter().map(|&b| b as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_mask_from<R: Read>(r: R) -> Result<SupportSet> {
    let mut r = BufReader::new(r);
    let shape = read_header(&mut r, MASK_MAGIC)?;
    let len: usize = shape.iter().product();
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    expect_eof(&mut r)?;
    let mask = bytes
        .into_iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(GlossError::Format(format!("mask byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    SupportSet::from_mask(&shape, mask)
}

fn write_meta(path: &Path, meta: &TensorMeta) -> Result<()> {
    let f = File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(BufWriter::new(f), meta)?;
    Ok(())
}

/// Reads the sidecar of `path`; a missing sidecar yields default metadata.
pub fn read_meta(path: &Path) -> Result<TensorMeta> {
    match File::open(sidecar_path(path)) {
        Ok(f) => Ok(serde_json::from_reader(BufReader::new(f))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(TensorMeta::default()),
        Err(e) => Err(e.into()),
    }
}

pub fn save_tensor<T: Real>(path: &Path, t: &DenseTensor<T>, meta: &TensorMeta) -> Result<()> {
    write_tensor_to(t, File::create(path)?)?;
    write_meta(path, meta)
}

pub fn load_tensor<T: Real>(path: &Path) -> Result<(DenseTensor<T>, TensorMeta)> {
    let t = read_tensor_from(File::open(path)?)?;
    Ok((t, read_meta(path)?))
}

pub fn save_mask(path: &Path, m: &SupportSet, meta: &TensorMeta) -> Result<()> {
    write_mask_to(m, File::create(path)?)?;
    write_meta(path, meta)
}

pub fn load_mask(path: &Path) -> Result<(SupportSet, TensorMeta)> {
    let m = read_mask_from(File::open(path)?)?;
    Ok((m, read_meta(path)?))
}

/// Ordered zone identifiers; position is the zone-mode index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ZoneIndex {
    ids: Vec<String>,
    positions: HashMap<String, usize>,
}

impl ZoneIndex {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        let mut positions = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(GlossError::InvalidParameter(format!("duplicate zone id `{id}`")));
            }
        }
        Ok(Self { ids, positions })
    }

    /// One id per line; blank lines and `#` comments are ignored.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut ids = Vec::new();
        for line in r.lines() {
            let line = line?;
            let id = line.trim();
            if !id.is_empty() && !id.starts_with('#') {
                ids.push(id.to_string());
            }
        }
        Self::new(ids)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }
}

impl TryFrom<Vec<String>> for ZoneIndex {
    type Error = GlossError;

    fn try_from(ids: Vec<String>) -> Result<Self> {
        Self::new(ids)
    }
}

impl From<ZoneIndex> for Vec<String> {
    fn from(z: ZoneIndex) -> Self {
        z.ids
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowErrorPolicy {
    #[default]
    Fail,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Day 1 of week 1.
    pub epoch: NaiveDate,
    pub weeks: usize,
    pub timestamp_format: String,
    pub timestamp_column: String,
    pub zone_column: String,
    pub on_error: RowErrorPolicy,
}

impl IngestConfig {
    pub fn new(epoch: NaiveDate) -> Self {
        Self {
            epoch,
            weeks: WEEKS,
            timestamp_format: DEFAULT_TIMESTAMP_FORMAT.into(),
            timestamp_column: "timestamp".into(),
            zone_column: "zone_id".into(),
            on_error: RowErrorPolicy::Fail,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: u64,
    pub out_of_range: u64,
    pub unknown_zone: u64,
    /// (line number, message) of skipped malformed rows.
    pub malformed: Vec<(u64, String)>,
}

pub struct Ingested {
    pub tensor: DenseTensor<f64>,
    pub omega: SupportSet,
    pub report: IngestReport,
}

/// Counts arrivals per (hour, day-of-week, week, zone) cell.
///
/// Weeks are consecutive 7-day blocks starting at the epoch, so the day-of-week
/// index is relative to the epoch's weekday.
pub fn ingest<R: Read>(input: R, zones: &ZoneIndex, config: &IngestConfig) -> Result<Ingested> {
    if zones.is_empty() {
        return Err(GlossError::EmptyInput("zone whitelist is empty".into()));
    }
    let shape = [HOURS, DAYS, config.weeks, zones.len()];
    let mut tensor = DenseTensor::<f64>::zeros(&shape)?;
    let mut report = IngestReport::default();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| GlossError::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let ts_col = column(&config.timestamp_column)?;
    let zone_col = column(&config.zone_column)?;

    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let parsed = row.map_err(|e| e.to_string()).and_then(|rec| {
            let ts = rec.get(ts_col).ok_or("missing timestamp field")?.trim();
            let zone = rec.get(zone_col).ok_or("missing zone field")?.trim().to_string();
            let ts = NaiveDateTime::parse_from_str(ts, &config.timestamp_format)
                .map_err(|e| format!("bad timestamp `{ts}`: {e}"))?;
            Ok::<_, String>((ts, zone))
        });
        let (ts, zone) = match parsed {
            Ok(v) => v,
            Err(message) => match config.on_error {
                RowErrorPolicy::Fail => return Err(GlossError::Parse { line, message }),
                RowErrorPolicy::Skip => {
                    report.malformed.push((line, message));
                    continue;
                }
            },
        };
        let Some(z) = zones.position(&zone) else {
            report.unknown_zone += 1;
            continue;
        };
        let days = (ts.date() - config.epoch).num_days();
        if days < 0 || days as usize >= DAYS * config.weeks {
            report.out_of_range += 1;
            continue;
        }
        let days = days as usize;
        let idx = [ts.hour() as usize, days % DAYS, days / DAYS, z];
        tensor.set(&idx, tensor.get(&idx) + 1.0);
        report.accepted += 1;
    }
    Ok(Ingested {
        omega: SupportSet::full(&shape)?,
        tensor,
        report,
    })
}

/// Reads `zone_id,date,start_hour,end_hour,name` rows.
pub fn read_events<R: Read>(input: R) -> Result<EventList> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let mut events = Vec::new();
    for (i, row) in reader.deserialize::<Event>().enumerate() {
        let event = row.map_err(|e| GlossError::Parse {
            line: i as u64 + 2,
            message: e.to_string(),
        })?;
        if event.start_hour > event.end_hour || event.end_hour as usize >= HOURS {
            return Err(GlossError::Parse {
                line: i as u64 + 2,
                message: format!("hour range {}..={} outside 0..24", event.start_hour, event.end_hour),
            });
        }
        events.push(event);
    }
    Ok(EventList { events })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Per mode, the mean over rows of the unfolding's row standard deviation.
    pub mean_row_std: Vec<f64>,
    /// Fraction of zero entries.
    pub sparsity: f64,
    pub max: f64,
    pub mean: f64,
}

/// Row standard deviations use the population convention.
pub fn dataset_stats<T: Real>(t: &DenseTensor<T>) -> DatasetStats {
    let shape = t.shape();
    let data = t.as_slice();
    let total = data.len() as f64;
    let mut mean_row_std = Vec::with_capacity(shape.len());
    for n in 0..shape.len() {
        let dim = shape[n];
        let left: usize = shape[..n].iter().product();
        let mut sums = vec![0.0f64; dim];
        let mut squares = vec![0.0f64; dim];
        for (o, v) in data.iter().enumerate() {
            let row = (o / left) % dim;
            let v = v.as_f64();
            sums[row] += v;
            squares[row] += v * v;
        }
        let per_row = total / dim as f64;
        let avg = (0..dim)
            .map(|r| {
                let mean = sums[r] / per_row;
                (squares[r] / per_row - mean * mean).max(0.0).sqrt()
            })
            .sum::<f64>()
            / dim as f64;
        mean_row_std.push(avg);
    }
    let values = data.iter().map(|v| v.as_f64());
    DatasetStats {
        mean_row_std,
        sparsity: t.len().saturating_sub(t.count_nonzero()) as f64 / total,
        max: values.clone().fold(f64::NEG_INFINITY, f64::max),
        mean: values.sum::<f64>() / total,
    }
}
