//! Dense feature matrices, one row per 10 ms input frame.
//!
//! `.csv`/`.txt`: comma-separated reals, no header. Anything else: binary,
//! little-endian `u32 rows`, `u32 cols`, then `rows * cols` `f32` values in
//! row-major order.

use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn is_text(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("csv") | Some("txt")
    )
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    if is_text(path) {
        read_csv(path)
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_binary(&bytes).map_err(|m| Error::parse(path, None, m))
    }
}

pub fn save_features(path: impl AsRef<Path>, x: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_text(path) {
        let mut out = String::new();
        for row in x.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out.into_bytes()
    } else {
        encode_binary(x)
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, None, e.to_string()))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected {c} columns, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, line, format!("not a number: {field:?}")))?;
            data.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data).map_err(|e| Error::parse(path, None, e.to_string()))
}

fn encode_binary(x: ArrayView2<'_, f64>) -> Vec<u8> {
    let (rows, cols) = x.dim();
    let mut out = Vec::with_capacity(8 + rows * cols * 4);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in x.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn decode_binary(bytes: &[u8]) -> std::result::Result<Array2<f64>, String> {
    if bytes.len() < 8 {
        return Err("truncated header".into());
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        return Err(format!(
            "expected {} payload bytes for {rows}x{cols}, found {}",
            rows * cols * 4,
            body.len()
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())
}
