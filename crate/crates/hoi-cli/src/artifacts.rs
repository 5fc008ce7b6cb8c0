//! Output-directory conventions: config echoes, manifests with checksums,
//! and dataset load/store helpers shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use hoi_core::kinematics::{
    read_hoiseq, read_object_model, write_hoiseq, write_object_model, HoiSequence, ObjectModel,
};

use crate::CliError;

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Internal(format!("mkdir {}: {e}", path.display())))
}

pub fn sha256_hex(path: &Path) -> Result<String, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::Internal(format!("read {}: {e}", path.display())))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Write the canonical config echo, seed, artifact version tags, and the
/// checksum list of every produced file. Together these pin the run for a
/// bit-exact re-execution.
pub fn write_manifest(
    out: &Path,
    command: &str,
    config_echo: &str,
    seed: u64,
    workers: usize,
    artifact_tags: &[&str],
    files: &[PathBuf],
) -> Result<(), CliError> {
    fs::write(out.join("config.echo.toml"), config_echo)
        .map_err(|e| CliError::Internal(format!("write config echo: {e}")))?;
    let mut manifest = String::new();
    manifest.push_str("manifest v1\n");
    manifest.push_str(&format!("command {command}\n"));
    manifest.push_str(&format!("seed {seed}\n"));
    manifest.push_str(&format!("workers {workers}\n"));
    for tag in artifact_tags {
        manifest.push_str(&format!("artifact {tag}\n"));
    }
    let mut rel: Vec<(String, PathBuf)> = files
        .iter()
        .map(|f| {
            let r = f
                .strip_prefix(out)
                .unwrap_or(f)
                .to_string_lossy()
                .into_owned();
            (r, f.clone())
        })
        .collect();
    rel.sort();
    for (name, path) in rel {
        manifest.push_str(&format!("{} {}\n", sha256_hex(&path)?, name));
    }
    fs::write(out.join("MANIFEST.txt"), manifest)
        .map_err(|e| CliError::Internal(format!("write manifest: {e}")))?;
    Ok(())
}

/// A generated dataset on disk: sequences, models, and the train/holdout
/// split.
pub struct DiskDataset {
    pub sequences: Vec<HoiSequence>,
    pub models: Vec<ObjectModel>,
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

impl DiskDataset {
    pub fn model_for(&self, seq: &HoiSequence) -> Result<&ObjectModel, CliError> {
        self.models
            .iter()
            .find(|m| m.name == seq.object_id)
            .ok_or_else(|| CliError::MissingArtifact(format!("object model '{}'", seq.object_id)))
    }

    pub fn train_sequences(&self) -> Vec<&HoiSequence> {
        self.train.iter().map(|&i| &self.sequences[i]).collect()
    }

    pub fn holdout_sequences(&self) -> Vec<&HoiSequence> {
        self.holdout.iter().map(|&i| &self.sequences[i]).collect()
    }
}

pub fn seq_filename(index: usize) -> String {
    format!("seq_{index:04}.hoiseq")
}

pub fn store_dataset(
    out: &Path,
    sequences: &[HoiSequence],
    models: &[ObjectModel],
    holdout: usize,
) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let mut files = Vec::new();
    for (i, seq) in sequences.iter().enumerate() {
        let p = out.join(seq_filename(i));
        write_hoiseq(seq, &p).map_err(|e| CliError::Internal(e.to_string()))?;
        files.push(p);
    }
    for m in models {
        let p = out.join(format!("obj_{}.objm", m.name));
        write_object_model(m, &p).map_err(|e| CliError::Internal(e.to_string()))?;
        files.push(p);
    }
    let train_end = sequences.len().saturating_sub(holdout);
    let mut split = String::new();
    for i in 0..sequences.len() {
        let tag = if i < train_end { "train" } else { "holdout" };
        split.push_str(&format!("{tag} {i}\n"));
    }
    let p = out.join("split.txt");
    fs::write(&p, split).map_err(|e| CliError::Internal(format!("write split: {e}")))?;
    files.push(p);
    Ok(files)
}

pub fn load_dataset(dir: &Path) -> Result<DiskDataset, CliError> {
    if !dir.is_dir() {
        return Err(CliError::MissingArtifact(format!(
            "data directory {}",
            dir.display()
        )));
    }
    let mut seq_files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Internal(format!("read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "hoiseq"))
        .collect();
    seq_files.sort();
    if seq_files.is_empty() {
        return Err(CliError::MissingArtifact(format!(
            "no .hoiseq files under {}",
            dir.display()
        )));
    }
    let sequences = seq_files
        .iter()
        .map(|p| read_hoiseq(p).map_err(|e| CliError::Internal(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    let mut model_files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Internal(format!("read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "objm"))
        .collect();
    model_files.sort();
    let models = model_files
        .iter()
        .map(|p| read_object_model(p).map_err(|e| CliError::Internal(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    let split_path = dir.join("split.txt");
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    if split_path.exists() {
        let text = fs::read_to_string(&split_path)
            .map_err(|e| CliError::Internal(format!("read split: {e}")))?;
        for line in text.lines() {
            let mut it = line.split_whitespace();
            match (it.next(), it.next().and_then(|s| s.parse::<usize>().ok())) {
                (Some("train"), Some(i)) => train.push(i),
                (Some("holdout"), Some(i)) => holdout.push(i),
                _ => return Err(CliError::Internal(format!("bad split line '{line}'"))),
            }
        }
    } else {
        train = (0..sequences.len()).collect();
    }
    Ok(DiskDataset {
        sequences,
        models,
        train,
        holdout,
    })
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut text = String::with_capacity(rows.len() * 64 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::Internal(format!("write {}: {e}", path.display())))
}
