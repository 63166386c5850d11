use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{TimeInterval, Tick, TrackedObject};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unreadable input: {0}")]
    UnreadableInput(String),
    #[error("event log {path} is corrupt at line {line}: {message}")]
    CorruptLog { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringRecord {
    pub source: String,
    pub object: String,
    pub parameter: String,
    pub tick: Tick,
    pub value: f64,
}

impl MonitoringRecord {
    fn key(&self) -> (String, String, String, Tick) {
        (self.source.clone(), self.object.clone(), self.parameter.clone(), self.tick)
    }
}

/// CSV header names for each record field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub source: String,
    pub object: String,
    pub parameter: String,
    pub tick: String,
    pub value: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            source: "source".into(),
            object: "object".into(),
            parameter: "parameter".into(),
            tick: "tick".into(),
            value: "value".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the input, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub ingested: usize,
    pub duplicates: usize,
    pub rejects: Vec<Reject>,
}

/// Append-only log of monitoring records with an in-memory series index.
/// On tick collisions between sources the first stored value wins.
#[derive(Debug, Default)]
pub struct EventStore {
    path: Option<PathBuf>,
    records: Vec<MonitoringRecord>,
    keys: BTreeSet<(String, String, String, Tick)>,
    series: BTreeMap<(String, String), BTreeMap<Tick, f64>>,
}

impl EventStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if absent) the log at `path` and rebuilds the index.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self {
            path: Some(path.clone()),
            ..Self::default()
        };
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(e.into()),
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: MonitoringRecord = serde_json::from_str(&line).map_err(|e| StoreError::CorruptLog {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            store.index(record);
        }
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn records(&self) -> &[MonitoringRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn index(&mut self, record: MonitoringRecord) -> bool {
        if !self.keys.insert(record.key()) {
            return false;
        }
        self.series
            .entry((record.object.clone(), record.parameter.clone()))
            .or_default()
            .entry(record.tick)
            .or_insert(record.value);
        self.records.push(record);
        true
    }

    /// Stores records not already present; returns how many were new.
    pub fn append(&mut self, records: impl IntoIterator<Item = MonitoringRecord>) -> Result<usize, StoreError> {
        let mut fresh = Vec::new();
        for r in records {
            if self.index(r.clone()) {
                fresh.push(r);
            }
        }
        self.persist(&fresh)?;
        Ok(fresh.len())
    }

    fn persist(&self, records: &[MonitoringRecord]) -> Result<(), StoreError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if records.is_empty() {
            return Ok(());
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = BufWriter::new(file);
        for r in records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads CSV rows through `mapping`. Bad rows are rejected by line
    /// number; rows whose key is already stored are skipped and counted.
    pub fn ingest_monitoring(&mut self, input: impl Read, mapping: &ColumnMapping) -> Result<IngestReport, StoreError> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| StoreError::UnreadableInput(e.to_string()))?
            .clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| StoreError::UnreadableInput(format!("missing column `{name}`")))
        };
        let cols = [
            column(&mapping.source)?,
            column(&mapping.object)?,
            column(&mapping.parameter)?,
            column(&mapping.tick)?,
            column(&mapping.value)?,
        ];
        let mut report = IngestReport::default();
        let mut fresh = Vec::new();
        for row in reader.records() {
            let row = match row {
                Ok(r) => r,
                Err(e) => {
                    if let csv::ErrorKind::Io(_) = e.kind() {
                        return Err(StoreError::UnreadableInput(e.to_string()));
                    }
                    let line = e.position().map_or(0, |p| p.line());
                    report.rejects.push(Reject {
                        line,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let line = row.position().map_or(0, |p| p.line());
            match parse_row(&row, cols) {
                Ok(record) => {
                    if self.index(record.clone()) {
                        report.ingested += 1;
                        fresh.push(record);
                    } else {
                        report.duplicates += 1;
                    }
                }
                Err(reason) => report.rejects.push(Reject { line, reason }),
            }
        }
        self.persist(&fresh)?;
        Ok(report)
    }

    /// Stored points of one series within `interval`, tick-sorted.
    pub fn query_series(&self, object: &str, parameter: &str, interval: TimeInterval) -> Vec<(Tick, f64)> {
        self.series
            .get(&(object.to_string(), parameter.to_string()))
            .map(|s| s.range(interval.start..=interval.end).map(|(t, v)| (*t, *v)).collect())
            .unwrap_or_default()
    }

    pub fn objects(&self) -> BTreeSet<&str> {
        self.series.keys().map(|(o, _)| o.as_str()).collect()
    }

    /// Every stored object with its series restricted to `interval`.
    pub fn tracked_objects(&self, interval: TimeInterval) -> Vec<TrackedObject> {
        let mut out: BTreeMap<&str, TrackedObject> = BTreeMap::new();
        for (object, parameter) in self.series.keys() {
            let points = self.query_series(object, parameter, interval);
            let entry = out.entry(object).or_insert_with(|| TrackedObject::new(object.clone()));
            entry.series.insert(parameter.clone(), points);
        }
        out.into_values().collect()
    }
}

fn parse_row(row: &csv::StringRecord, cols: [usize; 5]) -> Result<MonitoringRecord, String> {
    let field = |i: usize, name: &str| {
        row.get(cols[i])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| format!("missing {name}"))
    };
    let tick_text = field(3, "tick")?;
    let tick: Tick = tick_text
        .parse()
        .map_err(|_| format!("tick `{tick_text}` is not a non-negative integer"))?;
    let value_text = field(4, "value")?;
    let value: f64 = value_text
        .parse()
        .ok()
        .filter(|v: &f64| v.is_finite())
        .ok_or_else(|| format!("value `{value_text}` is not a finite number"))?;
    Ok(MonitoringRecord {
        source: field(0, "source")?.to_string(),
        object: field(1, "object")?.to_string(),
        parameter: field(2, "parameter")?.to_string(),
        tick,
        value,
    })
}
