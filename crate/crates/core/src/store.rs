//! Append-only record store mirroring the test-bed's per-sensor databases:
//! one table per (sensor, role), a three-way join keyed on transaction id,
//! and JSONL/CSV ingestion and export for external datasets.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{
    validate_triple, DeviceRole, Sample, SampleValue, SensorKind, SensorTrace, TransactionId,
    TransactionTriple,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate row for id {id} role {role} sensor {sensor}")]
    DuplicateKey {
        id: TransactionId,
        role: DeviceRole,
        sensor: SensorKind,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

/// A stored trace plus its per-table sequence number (1-based, insertion
/// order).
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRow {
    pub seq: u64,
    pub trace: SensorTrace,
}

#[derive(Debug, Default, Clone)]
struct Table {
    rows: Vec<StoredRow>,
    ids: HashSet<TransactionId>,
}

/// In-memory record store; persisted as one JSONL file per (sensor, role)
/// table.
#[derive(Debug, Default, Clone)]
pub struct RecordStore {
    tables: BTreeMap<(SensorKind, DeviceRole), Table>,
}

impl RecordStore {
    pub fn new() -> RecordStore {
        RecordStore::default()
    }

    /// Appends a trace to its (sensor, role) table.
    pub fn append(&mut self, trace: SensorTrace) -> Result<u64, StoreError> {
        let key = (trace.sensor(), trace.role());
        let table = self.tables.entry(key).or_default();
        if !table.ids.insert(trace.transaction_id()) {
            return Err(StoreError::DuplicateKey {
                id: trace.transaction_id(),
                role: trace.role(),
                sensor: trace.sensor(),
            });
        }
        let seq = table.rows.len() as u64 + 1;
        table.rows.push(StoredRow { seq, trace });
        Ok(seq)
    }

    /// Appends all three traces of a triple.
    pub fn append_triple(&mut self, triple: &TransactionTriple) -> Result<(), StoreError> {
        self.append(triple.tt.clone())?;
        self.append(triple.ti.clone())?;
        self.append(triple.dti.clone())?;
        Ok(())
    }

    pub fn rows(&self, sensor: SensorKind, role: DeviceRole) -> &[StoredRow] {
        self.tables
            .get(&(sensor, role))
            .map(|t| t.rows.as_slice())
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.tables.values().map(|t| t.rows.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sensors with at least one stored row.
    pub fn sensors(&self) -> Vec<SensorKind> {
        let mut out: Vec<SensorKind> = self
            .tables
            .iter()
            .filter(|(_, t)| !t.rows.is_empty())
            .map(|((s, _), _)| *s)
            .collect();
        out.dedup();
        out
    }

    /// The three-way join: transactions present in all three role tables of
    /// a sensor, in TT insertion order. IDs missing a role are silently
    /// excluded.
    pub fn join_triples(&self, sensor: SensorKind) -> Vec<TransactionTriple> {
        let by_id = |role: DeviceRole| -> BTreeMap<TransactionId, &SensorTrace> {
            self.rows(sensor, role)
                .iter()
                .map(|r| (r.trace.transaction_id(), &r.trace))
                .collect()
        };
        let ti = by_id(DeviceRole::Ti);
        let dti = by_id(DeviceRole::Dti);
        self.rows(sensor, DeviceRole::Tt)
            .iter()
            .filter_map(|row| {
                let id = row.trace.transaction_id();
                let ti_trace = ti.get(&id)?;
                let dti_trace = dti.get(&id)?;
                validate_triple(row.trace.clone(), (*ti_trace).clone(), (*dti_trace).clone()).ok()
            })
            .collect()
    }

    /// Writes the store as a directory of per-table JSONL files.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        let io_err = |path: &Path, source: std::io::Error| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for ((sensor, role), table) in &self.tables {
            if table.rows.is_empty() {
                continue;
            }
            let path = dir.join(table_file_name(*sensor, *role));
            let mut out = Vec::new();
            for row in &table.rows {
                let record = TraceRecord::from_trace(&row.trace);
                serde_json::to_writer(&mut out, &record).expect("trace serializes");
                out.push(b'\n');
            }
            fs::write(&path, out).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    /// Loads a directory written by [`RecordStore::save`].
    pub fn load(dir: &Path) -> Result<RecordStore, StoreError> {
        let mut store = RecordStore::new();
        for sensor in SensorKind::ALL {
            for role in DeviceRole::ALL {
                let path = dir.join(table_file_name(sensor, role));
                if !path.exists() {
                    continue;
                }
                store.ingest_jsonl_file(&path)?;
            }
        }
        Ok(store)
    }

    /// Ingests an external dataset file into this store.
    pub fn ingest(&mut self, path: &Path, format: FileFormat) -> Result<(), StoreError> {
        match format {
            FileFormat::Jsonl => self.ingest_jsonl_file(path),
            FileFormat::Csv => self.ingest_csv_file(path),
        }
    }

    fn ingest_jsonl_file(&mut self, path: &Path) -> Result<(), StoreError> {
        let file = fs::File::open(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let reader = BufReader::new(file);
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| StoreError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg,
            };
            let record: TraceRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let trace = record.into_trace().map_err(parse_err)?;
            self.append(trace)?;
        }
        Ok(())
    }

    fn ingest_csv_file(&mut self, path: &Path) -> Result<(), StoreError> {
        let file = fs::File::open(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(BufReader::new(file));
        {
            let parse_err = |msg: String| StoreError::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg,
            };
            let headers = reader
                .headers()
                .map_err(|e| parse_err(e.to_string()))?
                .clone();
            let expected: Vec<&str> = CSV_HEADER.split(',').collect();
            let got: Vec<&str> = headers.iter().collect();
            if got != expected {
                return Err(parse_err(format!(
                    "bad header: expected {CSV_HEADER:?}, got {:?}",
                    got.join(",")
                )));
            }
        }
        // Consecutive rows with the same key form one trace.
        let mut current: Option<(TraceKey, Vec<Sample>)> = None;
        for (idx, record) in reader.records().enumerate() {
            let line_no = idx + 2; // header is line 1
            let parse_err = |msg: String| StoreError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg,
            };
            let record = record.map_err(|e| parse_err(e.to_string()))?;
            let (key, sample) = parse_csv_row(&record).map_err(parse_err)?;
            match &mut current {
                Some((k, samples)) if *k == key => samples.push(sample),
                Some(_) => {
                    let (k, samples) = current.take().unwrap();
                    self.append(k.into_trace(line_no, path, samples)?)?;
                    current = Some((key, vec![sample]));
                }
                None => current = Some((key, vec![sample])),
            }
        }
        if let Some((k, samples)) = current {
            let last_line = 0; // end of file
            self.append(k.into_trace(last_line, path, samples)?)?;
        }
        Ok(())
    }

    /// Writes every row as one JSONL line, tables in (sensor, role) order.
    pub fn export_jsonl(&self, path: &Path) -> Result<(), StoreError> {
        let mut out = Vec::new();
        for table in self.tables.values() {
            for row in &table.rows {
                serde_json::to_writer(&mut out, &TraceRecord::from_trace(&row.trace))
                    .expect("trace serializes");
                out.push(b'\n');
            }
        }
        fs::write(path, out).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Writes the flattened CSV form: one sample per row under a mandatory
    /// header.
    pub fn export_csv(&self, path: &Path) -> Result<(), StoreError> {
        let io_err = |source: std::io::Error| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = fs::File::create(path).map_err(io_err)?;
        writeln!(out, "{CSV_HEADER}").map_err(io_err)?;
        for table in self.tables.values() {
            for row in &table.rows {
                let trace = &row.trace;
                for s in trace.samples() {
                    let (v, x, y, z) = match s.value {
                        SampleValue::Scalar(v) => (v.to_string(), String::new(), String::new(), String::new()),
                        SampleValue::Vector(x, y, z) => {
                            (String::new(), x.to_string(), y.to_string(), z.to_string())
                        }
                    };
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{}",
                        trace.transaction_id(),
                        trace.role(),
                        trace.sensor(),
                        csv_escape(trace.location()),
                        trace.start_epoch_ms(),
                        s.t_ms,
                        v,
                        x,
                        y,
                        z
                    )
                    .map_err(io_err)?;
                }
            }
        }
        Ok(())
    }
}

const CSV_HEADER: &str = "transaction_id,role,sensor,location,start_epoch_ms,t_ms,v,x,y,z";

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn table_file_name(sensor: SensorKind, role: DeviceRole) -> String {
    format!("{}_{}.jsonl", sensor.slug(), role.name().to_lowercase())
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TraceKey {
    id: String,
    role: DeviceRole,
    sensor: SensorKind,
    location: String,
    start_epoch_ms: i64,
}

impl TraceKey {
    fn into_trace(
        self,
        line: usize,
        path: &Path,
        samples: Vec<Sample>,
    ) -> Result<SensorTrace, StoreError> {
        let parse_err = |msg: String| StoreError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let id = TransactionId::from_hex(&self.id).map_err(|e| parse_err(e.to_string()))?;
        SensorTrace::new(id, self.role, self.sensor, self.location, self.start_epoch_ms, samples)
            .map_err(|e| parse_err(e.to_string()))
    }
}

fn parse_csv_row(record: &csv::StringRecord) -> Result<(TraceKey, Sample), String> {
    let field = |i: usize, name: &str| -> Result<&str, String> {
        record.get(i).ok_or_else(|| format!("missing column {name}"))
    };
    let id = field(0, "transaction_id")?.to_string();
    let role = DeviceRole::parse(field(1, "role")?)
        .ok_or_else(|| format!("unknown role {:?}", field(1, "role").unwrap()))?;
    let sensor = SensorKind::parse(field(2, "sensor")?)
        .ok_or_else(|| format!("unknown sensor {:?}", field(2, "sensor").unwrap()))?;
    let location = field(3, "location")?.to_string();
    let start_epoch_ms: i64 = field(4, "start_epoch_ms")?
        .parse()
        .map_err(|e| format!("start_epoch_ms: {e}"))?;
    let t_ms: f64 = field(5, "t_ms")?
        .parse()
        .map_err(|e| format!("t_ms: {e}"))?;
    let num = |i: usize, name: &str| -> Result<Option<f64>, String> {
        let raw = field(i, name)?;
        if raw.is_empty() {
            Ok(None)
        } else {
            raw.parse().map(Some).map_err(|e| format!("{name}: {e}"))
        }
    };
    let value = match (num(6, "v")?, num(7, "x")?, num(8, "y")?, num(9, "z")?) {
        (Some(v), None, None, None) => SampleValue::Scalar(v),
        (None, Some(x), Some(y), Some(z)) => SampleValue::Vector(x, y, z),
        _ => return Err("row must fill either v or all of x,y,z".to_string()),
    };
    Ok((
        TraceKey {
            id,
            role,
            sensor,
            location,
            start_epoch_ms,
        },
        Sample { t_ms, value },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Jsonl,
    Csv,
}

impl FileFormat {
    pub fn parse(s: &str) -> Option<FileFormat> {
        match s {
            "jsonl" => Some(FileFormat::Jsonl),
            "csv" => Some(FileFormat::Csv),
            _ => None,
        }
    }
}

/// JSONL row schema. Field names are part of the external interface.
#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    transaction_id: String,
    role: DeviceRole,
    sensor: SensorKind,
    location: String,
    start_epoch_ms: i64,
    samples: Vec<SampleRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SampleRecord {
    Vector { t_ms: f64, x: f64, y: f64, z: f64 },
    Scalar { t_ms: f64, v: f64 },
}

impl TraceRecord {
    fn from_trace(trace: &SensorTrace) -> TraceRecord {
        TraceRecord {
            transaction_id: trace.transaction_id().to_hex(),
            role: trace.role(),
            sensor: trace.sensor(),
            location: trace.location().to_string(),
            start_epoch_ms: trace.start_epoch_ms(),
            samples: trace
                .samples()
                .iter()
                .map(|s| match s.value {
                    SampleValue::Scalar(v) => SampleRecord::Scalar { t_ms: s.t_ms, v },
                    SampleValue::Vector(x, y, z) => SampleRecord::Vector {
                        t_ms: s.t_ms,
                        x,
                        y,
                        z,
                    },
                })
                .collect(),
        }
    }

    fn into_trace(self) -> Result<SensorTrace, String> {
        let id = TransactionId::from_hex(&self.transaction_id).map_err(|e| e.to_string())?;
        let samples = self
            .samples
            .into_iter()
            .map(|s| match s {
                SampleRecord::Scalar { t_ms, v } => Sample::scalar(t_ms, v),
                SampleRecord::Vector { t_ms, x, y, z } => Sample::vector(t_ms, x, y, z),
            })
            .collect();
        SensorTrace::new(id, self.role, self.sensor, self.location, self.start_epoch_ms, samples)
            .map_err(|e| e.to_string())
    }
}
