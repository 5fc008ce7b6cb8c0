//! "params v1" checkpoint format: a text header naming the module and every
//! tensor's shape, then the values as little-endian 32-bit floats in header
//! order. Reloading and re-saving reproduces the file bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad checkpoint header: {0}")]
    BadHeader(String),
    #[error("payload size mismatch: expected {expected} floats, file holds {actual}")]
    PayloadMismatch { expected: usize, actual: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_params(store: &ParamStore, module: &str, path: &Path) -> Result<(), CheckpointError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |s: String| w.write_all(s.as_bytes()).map_err(|e| io_err(path, e));
    write("params v1\n".to_string())?;
    write(format!("module {module}\n"))?;
    write(format!("tensors {}\n", store.len()))?;
    for e in store.iter() {
        let flag = if e.trainable { 1 } else { 0 };
        write(format!("{} {} {} {}\n", e.name, flag, e.shape[0], e.shape[1]))?;
    }
    w.write_all(b"data\n").map_err(|e| io_err(path, e))?;
    for e in store.iter() {
        for &v in &e.data {
            w.write_all(&(v as f32).to_le_bytes())
                .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load_params(path: &Path) -> Result<(String, ParamStore), CheckpointError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;

    let data_tag = b"data\n";
    let split = find_subslice(&bytes, data_tag)
        .ok_or_else(|| CheckpointError::BadHeader("missing data marker".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| CheckpointError::BadHeader("non-utf8 header".into()))?;
    let payload = &bytes[split + data_tag.len()..];

    let mut lines = header.lines();
    match lines.next() {
        Some("params v1") => {}
        other => {
            return Err(CheckpointError::BadHeader(format!(
                "expected 'params v1', got {other:?}"
            )))
        }
    }
    let module = lines
        .next()
        .and_then(|l| l.strip_prefix("module "))
        .ok_or_else(|| CheckpointError::BadHeader("missing module line".into()))?
        .to_string();
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("tensors "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CheckpointError::BadHeader("missing tensors line".into()))?;

    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| CheckpointError::BadHeader("truncated tensor list".into()))?;
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| CheckpointError::BadHeader("empty tensor line".into()))?
            .to_string();
        let nums: Vec<usize> = parts.map(|p| p.parse().unwrap_or(usize::MAX)).collect();
        if nums.len() != 3 || nums.iter().any(|&n| n == usize::MAX) {
            return Err(CheckpointError::BadHeader(format!(
                "bad tensor line: {line}"
            )));
        }
        specs.push((name, nums[0] == 1, [nums[1], nums[2]]));
    }

    let expected: usize = specs.iter().map(|(_, _, s)| s[0] * s[1]).sum();
    if payload.len() != expected * 4 {
        return Err(CheckpointError::PayloadMismatch {
            expected,
            actual: payload.len() / 4,
        });
    }

    let mut store = ParamStore::new();
    let mut off = 0;
    for (name, trainable, shape) in specs {
        let n = shape[0] * shape[1];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let b: [u8; 4] = payload[off..off + 4].try_into().unwrap();
            data.push(f32::from_le_bytes(b) as f64);
            off += 4;
        }
        if trainable {
            store.add(&name, &shape, data);
        } else {
            store.add_frozen(&name, &shape, data);
        }
    }
    Ok((module, store))
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}
