//! Dual codebooks (hand, object), nearest-neighbor lookup, decomposed
//! residual quantization, EMA codebook learning with dead-code reset, the
//! commitment loss, and MAE-style latent masking.
//!
//! Quantization runs in three stages over the summed latent: the object
//! stage against the object codebook, then the left and right hand stages
//! against the shared hand codebook, each consuming the remaining residual.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum QuantizerError {
    #[error("token {index} out of range for codebook of {size}")]
    TokenOutOfRange { index: usize, size: usize },
    #[error("bad codebook file: {0}")]
    BadFile(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookKind {
    Hand,
    Object,
}

/// K x d table of code vectors with EMA usage statistics.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub kind: CodebookKind,
    pub dim: usize,
    pub entries: Vec<f64>,
    pub ema_counts: Vec<f64>,
    pub ema_sums: Vec<f64>,
}

impl Codebook {
    pub fn new(kind: CodebookKind, k: usize, dim: usize, seed: u64) -> Self {
        assert!(k >= 2, "codebook needs at least two entries");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0DE_B00C);
        let entries: Vec<f64> = (0..k * dim).map(|_| rng.gen_range(-0.05..0.05)).collect();
        Codebook {
            kind,
            dim,
            ema_counts: vec![1.0; k],
            ema_sums: entries.clone(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.ema_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn checked_entry(&self, i: usize) -> Result<&[f64], QuantizerError> {
        if i >= self.len() {
            return Err(QuantizerError::TokenOutOfRange {
                index: i,
                size: self.len(),
            });
        }
        Ok(self.entry(i))
    }

    /// Usage histogram: EMA count per entry.
    pub fn usage(&self) -> &[f64] {
        &self.ema_counts
    }
}

/// Index of the entry minimizing Euclidean distance; ties break to the
/// lowest index.
pub fn nearest_code<'a>(codebook: &'a Codebook, v: &[f64]) -> (usize, &'a [f64]) {
    debug_assert_eq!(v.len(), codebook.dim);
    let mut best = (0usize, f64::INFINITY);
    for i in 0..codebook.len() {
        let e = codebook.entry(i);
        let mut d = 0.0;
        for (a, b) in e.iter().zip(v) {
            d += (a - b) * (a - b);
        }
        if d < best.1 {
            best = (i, d);
        }
    }
    (best.0, codebook.entry(best.0))
}

/// One token triple per temporal window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenTriple {
    pub hand_l: usize,
    pub hand_r: usize,
    pub object: usize,
}

/// Output of the three-stage decomposed quantization.
#[derive(Debug, Clone)]
pub struct QuantizeResult {
    /// Per-stage quantized contributions.
    pub z_hat_o: Vec<f64>,
    pub z_hat_l: Vec<f64>,
    pub z_hat_r: Vec<f64>,
    /// Their sum.
    pub z_hat: Vec<f64>,
    /// Residual norm after each stage (o, l, r order).
    pub residual_norms: [f64; 3],
    pub tokens: TokenTriple,
    /// The residual fed to each stage, for EMA assignment statistics.
    pub stage_inputs: [Vec<f64>; 3],
}

/// Quantize the summed latent in stages: object codebook first, then the
/// shared hand codebook for the left and right contributions; every stage
/// consumes the residual of the previous ones.
pub fn hoi_decomposed_quantize(
    z_o: &[f64],
    z_l: &[f64],
    z_r: &[f64],
    hand_cb: &Codebook,
    obj_cb: &Codebook,
) -> QuantizeResult {
    let d = z_o.len();
    debug_assert!(z_l.len() == d && z_r.len() == d);
    let mut residual: Vec<f64> = (0..d).map(|i| z_o[i] + z_l[i] + z_r[i]).collect();
    let mut z_hat = vec![0.0; d];
    let mut stage_inputs: [Vec<f64>; 3] = [vec![], vec![], vec![]];
    let mut stage_out: [Vec<f64>; 3] = [vec![], vec![], vec![]];
    let mut norms = [0.0; 3];
    let mut indices = [0usize; 3];
    for stage in 0..3 {
        stage_inputs[stage] = residual.clone();
        let cb = if stage == 0 { obj_cb } else { hand_cb };
        let (idx, entry) = nearest_code(cb, &residual);
        indices[stage] = idx;
        stage_out[stage] = entry.to_vec();
        for i in 0..d {
            z_hat[i] += entry[i];
            residual[i] -= entry[i];
        }
        norms[stage] = residual.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let [o, l, r] = stage_out;
    QuantizeResult {
        z_hat_o: o,
        z_hat_l: l,
        z_hat_r: r,
        z_hat,
        residual_norms: norms,
        tokens: TokenTriple {
            hand_l: indices[1],
            hand_r: indices[2],
            object: indices[0],
        },
        stage_inputs,
    }
}

/// Commitment term: `alpha * sum_i |z_i - sg(z_hat_i)|^2`. Plain evaluation;
/// the training loop builds the same expression on the tape with
/// stop-gradient so only encoder latents receive gradient.
pub fn embedding_loss(
    z_o: &[f64],
    z_l: &[f64],
    z_r: &[f64],
    result: &QuantizeResult,
    alpha: f64,
) -> f64 {
    let term = |z: &[f64], q: &[f64]| -> f64 {
        z.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    };
    alpha * (term(z_o, &result.z_hat_o) + term(z_l, &result.z_hat_l) + term(z_r, &result.z_hat_r))
}

/// EMA codebook update with dead-code reset.
///
/// Assigned entries move toward the mean of their assigned vectors;
/// unassigned entries are unchanged (their count and sum decay by the same
/// factor). Entries whose EMA count falls below 0.01 are reset to a random
/// vector from the batch. An empty batch is a no-op.
pub fn ema_update(
    codebook: &mut Codebook,
    assignments: &[(usize, Vec<f64>)],
    decay: f64,
    rng: &mut ChaCha8Rng,
) {
    assert!(decay > 0.0 && decay < 1.0, "decay in (0,1)");
    if assignments.is_empty() {
        return;
    }
    let d = codebook.dim;
    let k = codebook.len();
    let mut counts = vec![0.0; k];
    let mut sums = vec![0.0; k * d];
    for (idx, v) in assignments {
        counts[*idx] += 1.0;
        for (j, x) in v.iter().enumerate() {
            sums[idx * d + j] += x;
        }
    }
    for i in 0..k {
        codebook.ema_counts[i] = decay * codebook.ema_counts[i] + (1.0 - decay) * counts[i];
        for j in 0..d {
            codebook.ema_sums[i * d + j] =
                decay * codebook.ema_sums[i * d + j] + (1.0 - decay) * sums[i * d + j];
        }
        if codebook.ema_counts[i] < 0.01 {
            // Dead code: restart on a recent input.
            let pick = &assignments[rng.gen_range(0..assignments.len())].1;
            codebook.ema_counts[i] = 1.0;
            for j in 0..d {
                codebook.entries[i * d + j] = pick[j];
                codebook.ema_sums[i * d + j] = pick[j];
            }
        } else {
            let denom = codebook.ema_counts[i].max(1e-12);
            for j in 0..d {
                codebook.entries[i * d + j] = codebook.ema_sums[i * d + j] / denom;
            }
        }
    }
}

/// Which of the three latents were masked, in (o, l, r) order.
pub type MaskRecord = [bool; 3];

/// MAE-style masking: each latent is independently zeroed with probability
/// `mask_prob`, except that all three are never masked at once.
pub fn mask_latents(
    z_o: &[f64],
    z_l: &[f64],
    z_r: &[f64],
    mask_prob: f64,
    seed: u64,
) -> ([Vec<f64>; 3], MaskRecord) {
    assert!((0.0..1.0).contains(&mask_prob), "mask_prob in [0,1)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut record = [
        rng.gen_bool(mask_prob),
        rng.gen_bool(mask_prob),
        rng.gen_bool(mask_prob),
    ];
    if record.iter().all(|&m| m) {
        // Reconstruction from nothing is ill-posed; keep one latent.
        record[rng.gen_range(0..3)] = false;
    }
    let apply = |z: &[f64], masked: bool| -> Vec<f64> {
        if masked {
            vec![0.0; z.len()]
        } else {
            z.to_vec()
        }
    };
    (
        [
            apply(z_o, record[0]),
            apply(z_l, record[1]),
            apply(z_r, record[2]),
        ],
        record,
    )
}

// ---------------------------------------------------------------------------
// "cbk v1" file format
// ---------------------------------------------------------------------------

pub fn write_codebook(cb: &Codebook, path: &Path) -> Result<(), QuantizerError> {
    let io = |e: std::io::Error| QuantizerError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let kind = match cb.kind {
        CodebookKind::Hand => "hand",
        CodebookKind::Object => "object",
    };
    w.write_all(
        format!(
            "cbk v1\nkind {kind}\nentries {}\ndim {}\ndata\n",
            cb.len(),
            cb.dim
        )
        .as_bytes(),
    )
    .map_err(io)?;
    for v in cb.entries.iter().chain(&cb.ema_counts).chain(&cb.ema_sums) {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_codebook(path: &Path) -> Result<Codebook, QuantizerError> {
    let io = |e: std::io::Error| QuantizerError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let bad = |m: &str| QuantizerError::BadFile(format!("{}: {m}", path.display()));
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io)?)
        .read_to_end(&mut bytes)
        .map_err(io)?;
    let marker = b"data\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing data marker"))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("non-utf8 header"))?;
    let payload = &bytes[split + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some("cbk v1") {
        return Err(bad("bad magic"));
    }
    let kind = match lines.next().and_then(|l| l.strip_prefix("kind ")) {
        Some("hand") => CodebookKind::Hand,
        Some("object") => CodebookKind::Object,
        _ => return Err(bad("bad kind")),
    };
    let k: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("entries "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad entries"))?;
    let dim: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("dim "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad dim"))?;
    let expected = (k * dim + k + k * dim) * 4;
    if payload.len() != expected {
        return Err(bad(&format!(
            "payload {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let mut vals = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let entries: Vec<f64> = vals.by_ref().take(k * dim).collect();
    let ema_counts: Vec<f64> = vals.by_ref().take(k).collect();
    let ema_sums: Vec<f64> = vals.collect();
    Ok(Codebook {
        kind,
        dim,
        entries,
        ema_counts,
        ema_sums,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cb_from(kind: CodebookKind, rows: &[&[f64]]) -> Codebook {
        let dim = rows[0].len();
        let entries: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Codebook {
            kind,
            dim,
            ema_counts: vec![1.0; rows.len()],
            ema_sums: entries.clone(),
            entries,
        }
    }

    #[test]
    fn nearest_two_point_arithmetic() {
        let cb = cb_from(CodebookKind::Hand, &[&[0.0, 0.0], &[1.0, 1.0]]);
        let (i, _) = nearest_code(&cb, &[0.9, 1.2]);
        assert_eq!(i, 1); // dist^2 0.05 vs 2.25
    }

    #[test]
    fn nearest_exact_entry_and_tie_break() {
        let mut cb = Codebook::new(CodebookKind::Hand, 32, 4, 9);
        let target: Vec<f64> = cb.entry(17).to_vec();
        let (i, e) = nearest_code(&cb, &target);
        assert_eq!(i, 17);
        assert_eq!(e, &target[..]);
        // Duplicate an entry later in the table: the lowest index wins.
        let dup: Vec<f64> = cb.entry(3).to_vec();
        cb.entries[20 * 4..21 * 4].copy_from_slice(&dup);
        let (i, _) = nearest_code(&cb, &dup);
        assert_eq!(i, 3);
    }

    #[test]
    fn nearest_matches_linear_scan_oracle() {
        let cb = Codebook::new(CodebookKind::Object, 512, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (i, _) = nearest_code(&cb, &v);
            let mut oi = 0;
            let mut od = f64::INFINITY;
            for j in 0..cb.len() {
                let d: f64 = cb
                    .entry(j)
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < od {
                    od = d;
                    oi = j;
                }
            }
            assert_eq!(i, oi);
        }
    }

    #[test]
    fn rvq_constructed_exact_case() {
        // Object codebook holds c and zero; hand codebook holds zero.
        let c = [0.4, -0.2, 0.7];
        let obj = cb_from(CodebookKind::Object, &[&c, &[0.0, 0.0, 0.0]]);
        let hand = cb_from(CodebookKind::Hand, &[&[0.0, 0.0, 0.0], &[5.0, 5.0, 5.0]]);
        // Latents summing exactly to c.
        let z_o = [0.2, -0.1, 0.5];
        let z_l = [0.1, -0.1, 0.1];
        let z_r = [0.1, 0.0, 0.1];
        let r = hoi_decomposed_quantize(&z_o, &z_l, &z_r, &hand, &obj);
        assert_eq!(r.tokens.object, 0);
        assert_eq!(r.tokens.hand_l, 0);
        assert_eq!(r.tokens.hand_r, 0);
        assert_eq!(r.z_hat_o, c.to_vec());
        assert_eq!(r.z_hat_l, vec![0.0; 3]);
        assert_eq!(r.z_hat, c.to_vec());
        assert!(r.residual_norms[2] < 1e-15);
        // All-zero latents select the zero entries.
        let z = [0.0; 3];
        let r = hoi_decomposed_quantize(&z, &z, &z, &hand, &obj);
        assert_eq!(r.z_hat, vec![0.0; 3]);
        assert_eq!(r.tokens.object, 1);
        assert_eq!(r.tokens.hand_l, 0);
    }

    #[test]
    fn rvq_matches_greedy_oracle() {
        let hand = Codebook::new(CodebookKind::Hand, 64, 8, 21);
        let obj = Codebook::new(CodebookKind::Object, 64, 8, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..500 {
            let z_o: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z_l: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z_r: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = hoi_decomposed_quantize(&z_o, &z_l, &z_r, &hand, &obj);

            // Independent greedy oracle.
            let mut res: Vec<f64> = (0..8).map(|i| z_o[i] + z_l[i] + z_r[i]).collect();
            let mut acc = vec![0.0; 8];
            let mut toks = [0usize; 3];
            for (s, cb) in [(0usize, &obj), (1, &hand), (2, &hand)] {
                let mut bi = 0;
                let mut bd = f64::INFINITY;
                for i in 0..cb.len() {
                    let d: f64 = cb
                        .entry(i)
                        .iter()
                        .zip(&res)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < bd {
                        bd = d;
                        bi = i;
                    }
                }
                toks[s] = bi;
                for j in 0..8 {
                    acc[j] += cb.entry(bi)[j];
                    res[j] -= cb.entry(bi)[j];
                }
            }
            assert_eq!(r.tokens.object, toks[0]);
            assert_eq!(r.tokens.hand_l, toks[1]);
            assert_eq!(r.tokens.hand_r, toks[2]);
            assert_eq!(r.z_hat, acc);
            // z_hat is exactly the sum of the stage contributions.
            for j in 0..8 {
                assert_eq!(r.z_hat[j], r.z_hat_o[j] + r.z_hat_l[j] + r.z_hat_r[j]);
            }
        }
    }

    #[test]
    fn residual_norms_non_increasing_with_zero_entries() {
        // Codebooks with the zero vector appended: each stage can only help.
        let mut hand = Codebook::new(CodebookKind::Hand, 16, 6, 31);
        let mut obj = Codebook::new(CodebookKind::Object, 16, 6, 32);
        for cb in [&mut hand, &mut obj] {
            cb.entries.extend(vec![0.0; 6]);
            cb.ema_counts.push(1.0);
            cb.ema_sums.extend(vec![0.0; 6]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let z_o: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z_l: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z_r: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = hoi_decomposed_quantize(&z_o, &z_l, &z_r, &hand, &obj);
            let z_norm: f64 = (0..6)
                .map(|i| (z_o[i] + z_l[i] + z_r[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(r.residual_norms[0] <= z_norm + 1e-12);
            assert!(r.residual_norms[1] <= r.residual_norms[0] + 1e-12);
            assert!(r.residual_norms[2] <= r.residual_norms[1] + 1e-12);
            // Reconstruction no worse than the first stage alone.
            let err_first: f64 = (0..6)
                .map(|i| (z_o[i] + z_l[i] + z_r[i] - r.z_hat_o[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(r.residual_norms[2] <= err_first + 1e-12);
        }
    }

    #[test]
    fn embedding_loss_zero_and_random_cases() {
        let hand = Codebook::new(CodebookKind::Hand, 8, 4, 41);
        let obj = Codebook::new(CodebookKind::Object, 8, 4, 42);
        let z = [0.3, -0.2, 0.6, 0.1];
        let r = hoi_decomposed_quantize(&z, &z, &z, &hand, &obj);
        // alpha = 0 kills the loss.
        assert_eq!(embedding_loss(&z, &z, &z, &r, 0.0), 0.0);
        // z_i == z_hat_i gives zero.
        let mut r2 = r.clone();
        r2.z_hat_o = z.to_vec();
        r2.z_hat_l = z.to_vec();
        r2.z_hat_r = z.to_vec();
        assert_eq!(embedding_loss(&z, &z, &z, &r2, 0.5), 0.0);
        // Random case matches direct arithmetic.
        let direct: f64 = 0.5
            * (z.iter()
                .zip(&r.z_hat_o)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                + z.iter()
                    .zip(&r.z_hat_l)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                + z.iter()
                    .zip(&r.z_hat_r)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>());
        assert!((embedding_loss(&z, &z, &z, &r, 0.5) - direct).abs() < 1e-15);
    }

    #[test]
    fn ema_no_assignments_is_identity() {
        let mut cb = Codebook::new(CodebookKind::Hand, 4, 3, 51);
        let before = cb.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ema_update(&mut cb, &[], 0.99, &mut rng);
        assert_eq!(cb.entries, before.entries);
        assert_eq!(cb.ema_counts, before.ema_counts);
    }

    #[test]
    fn ema_converges_with_geometric_rate() {
        let mut cb = Codebook::new(CodebookKind::Hand, 2, 3, 52);
        let v = vec![0.8, -0.4, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = |cb: &Codebook| -> f64 {
            cb.entry(0)
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let mut prev = err(&cb);
        for step in 1..=350 {
            ema_update(&mut cb, &[(0, v.clone())], 0.99, &mut rng);
            if step % 70 == 0 {
                let now = err(&cb);
                assert!(
                    now <= prev * 0.5 + 1e-12,
                    "step {step}: {now} vs half of {prev}"
                );
                prev = now;
            }
        }
        assert!(err(&cb) < 0.05);
        assert!(cb.entries.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ema_two_clusters_match_kmeans_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let c1 = [2.0, 2.0];
        let c2 = [-2.0, -2.0];
        let mut data: Vec<Vec<f64>> = Vec::new();
        for i in 0..200 {
            let c = if i % 2 == 0 { c1 } else { c2 };
            data.push(vec![
                c[0] + rng.gen_range(-0.1..0.1),
                c[1] + rng.gen_range(-0.1..0.1),
            ]);
        }
        // Oracle: cluster means by sign (clusters are well separated).
        let mean = |sign: f64| -> [f64; 2] {
            let pts: Vec<&Vec<f64>> = data.iter().filter(|p| p[0] * sign > 0.0).collect();
            let n = pts.len() as f64;
            [
                pts.iter().map(|p| p[0]).sum::<f64>() / n,
                pts.iter().map(|p| p[1]).sum::<f64>() / n,
            ]
        };
        let (m1, m2) = (mean(1.0), mean(-1.0));

        // Seed entries near each cluster, then run EMA assignment rounds.
        let mut cb = cb_from(CodebookKind::Hand, &[&[1.0, 1.0], &[-1.0, -1.0]]);
        for _ in 0..1500 {
            let assignments: Vec<(usize, Vec<f64>)> = data
                .iter()
                .map(|p| (nearest_code(&cb, p).0, p.clone()))
                .collect();
            ema_update(&mut cb, &assignments, 0.99, &mut rng);
        }
        for (e, m) in [(cb.entry(0), m1), (cb.entry(1), m2)] {
            let d = ((e[0] - m[0]).powi(2) + (e[1] - m[1]).powi(2)).sqrt();
            assert!(d < 1e-3, "entry {e:?} vs mean {m:?}");
        }
    }

    #[test]
    fn dead_codes_reset_to_recent_inputs() {
        let mut cb = cb_from(CodebookKind::Hand, &[&[0.0, 0.0], &[100.0, 100.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        // Entry 1 never gets assignments; after enough decay it restarts on
        // a batch vector.
        let batch = vec![(0usize, vec![0.5, 0.5])];
        for _ in 0..600 {
            ema_update(&mut cb, &batch, 0.99, &mut rng);
        }
        assert_eq!(cb.entry(1), &[0.5, 0.5]);
    }

    #[test]
    fn mask_latents_contract() {
        let z = vec![1.0, 2.0, 3.0];
        // mask_prob 0 is the identity.
        let (m, rec) = mask_latents(&z, &z, &z, 0.0, 7);
        assert_eq!(rec, [false; 3]);
        assert_eq!(m[0], z);
        // Fixed seed is deterministic.
        let (a, ra) = mask_latents(&z, &z, &z, 0.5, 99);
        let (b, rb) = mask_latents(&z, &z, &z, 0.5, 99);
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        // Never all three masked; empirical rate near the target.
        let mut hits = [0usize; 3];
        let n = 100_000;
        for s in 0..n {
            let (_, rec) = mask_latents(&z, &z, &z, 0.15, s as u64);
            assert!(!(rec[0] && rec[1] && rec[2]));
            for (h, m) in hits.iter_mut().zip(&rec) {
                if *m {
                    *h += 1;
                }
            }
        }
        for h in hits {
            let rate = h as f64 / n as f64;
            assert!((rate - 0.15).abs() < 0.01, "rate {rate}");
        }
    }

    #[test]
    fn codebook_file_round_trip_bit_exact() {
        let cb = Codebook::new(CodebookKind::Object, 16, 8, 61);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.cbk");
        let p2 = dir.path().join("b.cbk");
        write_codebook(&cb, &p1).unwrap();
        let loaded = read_codebook(&p1).unwrap();
        assert_eq!(loaded.kind, cb.kind);
        assert_eq!(loaded.len(), cb.len());
        write_codebook(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
