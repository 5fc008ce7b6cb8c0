//! "hoiseq v1" sequence files: a text header followed by T x 208
//! little-endian 32-bit floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{HoiSequence, KinematicsError, FRAME_DIM};

pub fn write_hoiseq(seq: &HoiSequence, path: &Path) -> Result<(), KinematicsError> {
    let io = |e: std::io::Error| KinematicsError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = format!(
        "hoiseq v1\nframes {}\nwidth {}\nfps {}\nobject {}\ncaption {}\nseed {}\ndata\n",
        seq.frames.len(),
        FRAME_DIM,
        seq.fps,
        seq.object_id,
        seq.caption,
        seq.seed
    );
    w.write_all(header.as_bytes()).map_err(io)?;
    for v in seq.features() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_hoiseq(path: &Path) -> Result<HoiSequence, KinematicsError> {
    let io = |e: std::io::Error| KinematicsError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let bad = |msg: String| KinematicsError::BadSequenceFile(format!("{}: {msg}", path.display()));
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io)?)
        .read_to_end(&mut bytes)
        .map_err(io)?;
    let marker = b"data\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing data marker".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("non-utf8 header".into()))?;
    let payload = &bytes[split + marker.len()..];

    let mut frames = None;
    let mut width = None;
    let mut fps = None;
    let mut object = None;
    let mut caption = None;
    let mut seed = None;
    for (i, line) in header.lines().enumerate() {
        if i == 0 {
            if line != "hoiseq v1" {
                return Err(bad(format!("bad magic '{line}'")));
            }
            continue;
        }
        let (key, rest) = line.split_once(' ').ok_or_else(|| bad(format!("bad line '{line}'")))?;
        match key {
            "frames" => frames = rest.parse::<usize>().ok(),
            "width" => width = rest.parse::<usize>().ok(),
            "fps" => fps = rest.parse::<f64>().ok(),
            "object" => object = Some(rest.to_string()),
            "caption" => caption = Some(rest.to_string()),
            "seed" => seed = rest.parse::<u64>().ok(),
            other => return Err(bad(format!("unknown header key '{other}'"))),
        }
    }
    let frames = frames.ok_or_else(|| bad("missing frames".into()))?;
    let width = width.ok_or_else(|| bad("missing width".into()))?;
    if width != FRAME_DIM {
        return Err(bad(format!("width {width}, expected {FRAME_DIM}")));
    }
    let expected = frames * FRAME_DIM * 4;
    if payload.len() != expected {
        return Err(bad(format!(
            "payload {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let mut feats = Vec::with_capacity(frames * FRAME_DIM);
    for chunk in payload.chunks_exact(4) {
        feats.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    HoiSequence::from_features(
        &feats,
        fps.ok_or_else(|| bad("missing fps".into()))?,
        &object.ok_or_else(|| bad("missing object".into()))?,
        &caption.ok_or_else(|| bad("missing caption".into()))?,
        seed.ok_or_else(|| bad("missing seed".into()))?,
    )
}
