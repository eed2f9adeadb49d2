//! Line-delimited, versioned JSON files.
//!
//! The first line is a header `{"schema":"<name>","version":<n>}`; every
//! following line holds one record.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
}

pub fn to_jsonl<T: Serialize>(schema: &str, records: &[T]) -> Result<String> {
    let mut out = serde_json::to_string(&Header { schema: schema.into(), version: VERSION })?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl<T: DeserializeOwned>(schema: &str, text: &str) -> Result<Vec<T>> {
    parse_lines(schema, text.lines().map(|l| Ok(l.to_owned())))
}

fn parse_lines<T: DeserializeOwned>(schema: &str, mut lines: impl Iterator<Item = Result<String>>) -> Result<Vec<T>> {
    let first = lines.next().transpose()?.ok_or(Error::Format { line: 1, msg: "empty file".into() })?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| Error::Format { line: 1, msg: format!("bad header: {e}") })?;
    if header.schema != schema {
        return Err(Error::Format { line: 1, msg: format!("expected schema `{schema}`, found `{}`", header.schema) });
    }
    if header.version != VERSION {
        return Err(Error::Format { line: 1, msg: format!("unsupported version {}", header.version) });
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format { line: n + 2, msg: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, schema: &str, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(to_jsonl(schema, records)?.as_bytes())?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    parse_lines(schema, BufReader::new(f).lines().map(|l| l.map_err(Error::from)))
}
