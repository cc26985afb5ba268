//! On-disk formats. Binary containers share a line-oriented text header of
//! `key value...` pairs closed by a `data f32le` line; the payload follows.

pub mod checkpoint;
pub mod gbt;
pub mod images;
pub mod tables;

use std::fs;
use std::io::{BufRead, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub(crate) const DATA_MARKER: &str = "data f32le";

/// Header lines up to the data marker, split into key and value fields.
pub(crate) fn read_header<R: BufRead>(r: &mut R, magic: &str) -> Result<Vec<(String, Vec<String>)>, String> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| e.to_string())?;
    if line.trim_end() != magic {
        return Err(format!("expected header `{magic}`"));
    }
    let mut fields = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Err("header ends before the data marker".into());
        }
        let l = line.trim_end();
        if l == DATA_MARKER {
            return Ok(fields);
        }
        let mut parts = l.split_whitespace().map(str::to_owned);
        let key = parts.next().ok_or("blank header line")?;
        fields.push((key, parts.collect()));
    }
}

pub(crate) fn field<'a>(fields: &'a [(String, Vec<String>)], key: &str) -> Result<&'a [String], String> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_slice())
        .ok_or_else(|| format!("missing header field `{key}`"))
}

pub(crate) fn parse_one<T: std::str::FromStr>(fields: &[(String, Vec<String>)], key: &str) -> Result<T, String> {
    match field(fields, key)? {
        [v] => v.parse().map_err(|_| format!("bad value `{v}` for `{key}`")),
        _ => Err(format!("`{key}` takes one value")),
    }
}

pub(crate) fn parse_many<T: std::str::FromStr>(fields: &[(String, Vec<String>)], key: &str) -> Result<Vec<T>, String> {
    field(fields, key)?
        .iter()
        .map(|v| v.parse().map_err(|_| format!("bad value `{v}` for `{key}`")))
        .collect()
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, String> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| e.to_string())?;
    if bytes.len() != 4 * n {
        return Err(format!("expected {} payload bytes, found {}", 4 * n, bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
