//! CSV and JSON helpers with path-aware errors.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Version stamped on every JSON artifact.
pub const FORMAT_VERSION: u32 = 1;

/// JSON artifact wrapper carrying provenance next to the payload.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact<T> {
    pub format_version: u32,
    pub config_hash: String,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Artifact<T> {
    pub fn new(config_hash: &str, body: T) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            body,
        }
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::schema(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::schema(path, e))
}

pub fn write_artifact<T: Serialize>(path: &Path, config_hash: &str, body: &T) -> CliResult<()> {
    write_json(path, &Artifact::new(config_hash, body))
}

pub fn read_artifact<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    // Read through `Value` rather than the flattened struct: flattening
    // buffers the payload and loses integer map keys.
    let mut value: serde_json::Value = read_json(path)?;
    let envelope = value
        .as_object_mut()
        .ok_or_else(|| CliError::schema(path, "expected a JSON object"))?;
    let version = envelope.remove("format_version").and_then(|v| v.as_u64());
    if version != Some(u64::from(FORMAT_VERSION)) {
        return Err(CliError::schema(
            path,
            format!("format version {version:?} is not supported"),
        ));
    }
    if !envelope.remove("config_hash").is_some_and(|h| h.is_string()) {
        return Err(CliError::schema(path, "missing config_hash"));
    }
    serde_json::from_value(value).map_err(|e| CliError::schema(path, e))
}

/// Reads every row of a headed CSV file into `T`.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::schema(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut writer = csv::Writer::from_writer(create(path)?);
    for row in rows {
        writer.serialize(row).map_err(|e| CliError::schema(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

/// Opens a CSV file and checks its header row against `expected`.
pub fn csv_reader(path: &Path, expected: &[&str]) -> CliResult<csv::Reader<BufReader<File>>> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let headers = reader.headers().map_err(|e| CliError::schema(path, e))?;
    if !headers.iter().eq(expected.iter().copied()) {
        return Err(CliError::schema(
            path,
            format!("expected columns {expected:?}, found {:?}", headers.iter().collect::<Vec<_>>()),
        ));
    }
    Ok(reader)
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
