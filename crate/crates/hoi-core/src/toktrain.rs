//! Tokenizer training: encode, mask, quantize (straight-through), decode,
//! with the total loss = L1 reconstruction + commitment + weighted geometry.
//!
//! Geometry losses are differentiable end to end: the decoded window drives
//! tape-level forward kinematics and object posing, with the penetrating /
//! in-contact sets selected on the CPU each step (they are piecewise
//! constant in the parameters).

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::adam::{Adam, GradAccum};
use crate::diff::checkpoint::{load_params, save_params, CheckpointError};
use crate::diff::nn::{NetConfig, TokenizerNets, FRAME_DIM, HAND_DIM, OBJ_DIM};
use crate::diff::{DiffError, Tape, Tensor};
use crate::geometry::{
    contact_terms, frame_hand_geometry, penetration_terms, pose_clamped, region_terms,
    ContactThresholds, GeometryError, GeoWeights,
};
use crate::kinematics::{
    unflatten_frame, HandModel, Handedness, HoiFrame, HoiSequence, KinematicsError, ObjectModel,
};
use crate::quantizer::{
    ema_update, hoi_decomposed_quantize, mask_latents, read_codebook, write_codebook, Codebook,
    CodebookKind, QuantizeResult, QuantizerError, TokenTriple,
};

#[derive(Debug, thiserror::Error)]
pub enum TokTrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no object model named '{0}'")]
    UnknownObject(String),
    #[error("empty token stream")]
    EmptyTokenStream,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone)]
pub struct TokTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Commitment weight.
    pub alpha: f64,
    pub geo_weights: GeoWeights,
    pub thresholds: ContactThresholds,
    pub mask_prob: f64,
    pub learning_rate: f64,
    pub codebook_size: usize,
    pub ema_decay: f64,
    pub net: NetConfig,
    pub seed: u64,
}

impl Default for TokTrainConfig {
    fn default() -> Self {
        TokTrainConfig {
            epochs: 2000,
            batch_size: 32,
            alpha: 0.5,
            geo_weights: GeoWeights::default(),
            thresholds: ContactThresholds::default(),
            mask_prob: 0.15,
            learning_rate: 2e-4,
            codebook_size: 512,
            ema_decay: 0.99,
            net: NetConfig::default(),
            seed: 0,
        }
    }
}

/// Averaged loss components for one epoch (geometry terms pre-weighting).
#[derive(Debug, Clone, Copy, Default)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l1: f64,
    pub l_embed: f64,
    pub l_pen: f64,
    pub l_c: f64,
    pub l_r: f64,
    pub total: f64,
}

impl EpochLoss {
    pub fn csv_header() -> &'static str {
        "epoch,l1,l_embed,l_pen,l_c,l_r,total"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            self.epoch, self.l1, self.l_embed, self.l_pen, self.l_c, self.l_r, self.total
        )
    }
}

/// Trained tokenizer: networks plus the two codebooks.
pub struct TokenizerArtifacts {
    pub nets: TokenizerNets,
    pub hand_cb: Codebook,
    pub obj_cb: Codebook,
}

impl TokenizerArtifacts {
    pub fn window(&self) -> usize {
        self.nets.cfg.window
    }

    pub fn save(&self, dir: &Path) -> Result<(), TokTrainError> {
        save_params(&self.nets.store, "tokenizer", &dir.join("tokenizer.params"))?;
        write_codebook(&self.hand_cb, &dir.join("hand.cbk"))?;
        write_codebook(&self.obj_cb, &dir.join("object.cbk"))?;
        Ok(())
    }

    pub fn load(dir: &Path, net: NetConfig) -> Result<Self, TokTrainError> {
        let (_, store) = load_params(&dir.join("tokenizer.params"))?;
        let nets = TokenizerNets::from_store(net, store)
            .map_err(|m| TokTrainError::Checkpoint(CheckpointError::BadHeader(m)))?;
        let hand_cb = read_codebook(&dir.join("hand.cbk"))?;
        let obj_cb = read_codebook(&dir.join("object.cbk"))?;
        Ok(TokenizerArtifacts {
            nets,
            hand_cb,
            obj_cb,
        })
    }
}

/// Split a sequence into raw windows of `w` frames, padding the tail by
/// repeating the last frame. Returns the windows and the original length.
pub fn sequence_windows(seq: &HoiSequence, w: usize) -> (Vec<Vec<f64>>, usize) {
    let feats = seq.features();
    let t = seq.len();
    let n_windows = t.div_ceil(w).max(1);
    let mut out = Vec::with_capacity(n_windows);
    for wi in 0..n_windows {
        let mut window = Vec::with_capacity(w * FRAME_DIM);
        for f in 0..w {
            let src = (wi * w + f).min(t - 1);
            window.extend_from_slice(&feats[src * FRAME_DIM..(src + 1) * FRAME_DIM]);
        }
        out.push(window);
    }
    (out, t)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Tape-side geometry
// ---------------------------------------------------------------------------

/// Forward kinematics of one hand recorded on the tape. Joint positions are
/// `[3,1]` tensors; surface vertices are built on demand.
struct TapeHand {
    pos: Vec<Tensor>,
    rot: Vec<Tensor>,
    mirror: bool,
}

impl TapeHand {
    /// `base` is the hand block's channel offset inside the window row.
    fn build(
        window: &Tensor,
        base: usize,
        handedness: Handedness,
        model: &HandModel,
    ) -> Result<Self, DiffError> {
        let mirror = handedness == Handedness::Left;
        let mx = |v: &nalgebra::Vector3<f64>| -> [f64; 3] {
            if mirror {
                [-v.x, v.y, v.z]
            } else {
                [v.x, v.y, v.z]
            }
        };
        let tape = window.tape().clone();
        let wrist_t = window.slice_cols(base, 3)?.reshape(3, 1)?;
        let wrist_r = window.slice_cols(base + 3, 6)?.rot6d_to_matrix()?;
        let mut pos = vec![wrist_t];
        let mut rot = vec![wrist_r];
        for j in 1..16 {
            let p = model.parents[j];
            let off = mx(&(model.rest_dirs[j - 1] * model.bone_lengths[j - 1]));
            let off_t = tape.constant(&off, &[3, 1]);
            pos.push(rot[p].matmul(&off_t)?.add(&pos[p])?);
            let local = window
                .slice_cols(base + 9 + 6 * (j - 1), 6)?
                .rot6d_to_matrix()?;
            rot.push(rot[p].matmul(&local)?);
        }
        Ok(TapeHand { pos, rot, mirror })
    }

    fn vertex(&self, model: &HandModel, index: usize) -> Result<Tensor, DiffError> {
        let (frame, local) = &model.template[index];
        let l = if self.mirror {
            [-local.x, local.y, local.z]
        } else {
            [local.x, local.y, local.z]
        };
        let tape = self.pos[*frame].tape().clone();
        let local_t = tape.constant(&l, &[3, 1]);
        self.rot[*frame].matmul(&local_t)?.add(&self.pos[*frame])
    }
}

/// Object pose recorded on the tape: global rotation/translation plus the
/// hinge rotation, able to produce any surface sample position.
struct TapeObject {
    rot: Tensor,
    trans: Tensor,
    hinge: Option<(Tensor, [f64; 3])>, // (R_hinge, origin)
}

impl TapeObject {
    fn build(window: &Tensor, frame: usize, model: &ObjectModel) -> Result<Self, DiffError> {
        let tape = window.tape().clone();
        let base = frame * FRAME_DIM;
        let trans = window.slice_cols(base, 3)?.reshape(3, 1)?;
        let rot = window.slice_cols(base + 3, 6)?.rot6d_to_matrix()?;
        let hinge = match &model.hinge {
            None => None,
            Some(h) => {
                let alpha = window.slice_cols(base + 9, 1)?;
                // Rodrigues: R = I + sin(a) K + (1 - cos(a)) K^2
                let k = h.axis.into_inner();
                #[rustfmt::skip]
                let km = [
                    0.0, -k.z, k.y,
                    k.z, 0.0, -k.x,
                    -k.y, k.x, 0.0,
                ];
                let km_t = tape.constant(&km, &[3, 3]);
                let km2 = km_t.matmul(&km_t)?;
                let eye = tape.constant(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
                let one = tape.scalar(1.0);
                let r = eye
                    .add(&km_t.mul(&alpha.sin())?)?
                    .add(&km2.mul(&one.sub(&alpha.cos())?)?)?;
                Some((r, [h.origin.x, h.origin.y, h.origin.z]))
            }
        };
        Ok(TapeObject { rot, trans, hinge })
    }

    fn sample(&self, model: &ObjectModel, index: usize) -> Result<Tensor, DiffError> {
        let tape = self.rot.tape().clone();
        let s = &model.surface_samples[index];
        let part = model.sample_parts[index];
        let local = if part == 1 {
            let (r_h, origin) = self.hinge.as_ref().expect("moving part requires a hinge");
            let rel = tape.constant(
                &[s.x - origin[0], s.y - origin[1], s.z - origin[2]],
                &[3, 1],
            );
            let o = tape.constant(origin, &[3, 1]);
            r_h.matmul(&rel)?.add(&o)?
        } else {
            tape.constant(&[s.x, s.y, s.z], &[3, 1])
        };
        self.rot.matmul(&local)?.add(&self.trans)
    }
}

fn squared_distance(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    let d = a.sub(b)?;
    Ok(d.mul(&d)?.reduce_sum())
}

/// Geometry scalars for one decoded window, `(l_pen, l_c, l_r)`, each a
/// `[1,1]` tensor averaged over the window's frames.
fn window_geometry(
    window_raw: &Tensor,
    gt_frames: &[HoiFrame],
    model: &ObjectModel,
    hand_model: &HandModel,
    thresholds: &ContactThresholds,
) -> Result<(Tensor, Tensor, Tensor), TokTrainError> {
    let tape = window_raw.tape().clone();
    let w = gt_frames.len();
    let values = window_raw.value();
    let n_left = hand_model.surface_point_count();

    let mut pen_terms_all: Vec<Tensor> = Vec::new();
    let mut c_terms_all: Vec<Tensor> = Vec::new();
    let mut r_terms_all: Vec<Tensor> = Vec::new();

    for f in 0..w {
        let Ok(recon) = unflatten_frame(&values[f * FRAME_DIM..(f + 1) * FRAME_DIM]) else {
            continue;
        };
        // Selection on CPU; degenerate reconstructed rotations simply skip
        // the frame's geometry terms this step.
        let Ok(recon_posed) = pose_clamped(model, &recon) else {
            continue;
        };
        let Ok((rec_verts, rec_joints)) = frame_hand_geometry(&recon, hand_model) else {
            continue;
        };
        let gt = &gt_frames[f];
        let gt_posed = pose_clamped(model, gt)?;
        let (gt_verts, _) = frame_hand_geometry(gt, hand_model)?;

        let pen = penetration_terms(&rec_verts, &recon_posed);
        let contact = contact_terms(&rec_joints, &recon_posed, thresholds);
        let region = region_terms(&gt_verts, &rec_verts, &gt_posed, &recon_posed, thresholds)?;
        if pen.is_empty() && contact.is_empty() && region.is_empty() {
            continue;
        }

        let needs_left = pen.iter().any(|(i, ..)| *i < n_left)
            || region.iter().any(|(i, ..)| *i < n_left)
            || contact.iter().any(|(i, ..)| *i < 16);
        let needs_right = pen.iter().any(|(i, ..)| *i >= n_left)
            || region.iter().any(|(i, ..)| *i >= n_left)
            || contact.iter().any(|(i, ..)| *i >= 16);

        let base = f * FRAME_DIM;
        let left = if needs_left {
            match TapeHand::build(window_raw, base + OBJ_DIM, Handedness::Left, hand_model) {
                Ok(h) => Some(h),
                Err(DiffError::DegenerateRotation(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        let right = if needs_right {
            match TapeHand::build(
                window_raw,
                base + OBJ_DIM + HAND_DIM,
                Handedness::Right,
                hand_model,
            ) {
                Ok(h) => Some(h),
                Err(DiffError::DegenerateRotation(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        let object = match TapeObject::build(window_raw, f, model) {
            Ok(o) => o,
            Err(DiffError::DegenerateRotation(_)) => continue,
            Err(e) => return Err(e.into()),
        };

        let mut sample_cache: HashMap<usize, Tensor> = HashMap::new();
        let mut sample_at = |s: usize| -> Result<Tensor, DiffError> {
            if let Some(t) = sample_cache.get(&s) {
                return Ok(t.clone());
            }
            let t = object.sample(model, s)?;
            sample_cache.insert(s, t.clone());
            Ok(t)
        };
        let hand_vertex = |idx: usize| -> Result<Tensor, DiffError> {
            if idx < n_left {
                left.as_ref()
                    .expect("left hand built")
                    .vertex(hand_model, idx)
            } else {
                right
                    .as_ref()
                    .expect("right hand built")
                    .vertex(hand_model, idx - n_left)
            }
        };
        let joint_at = |idx: usize| -> Tensor {
            if idx < 16 {
                left.as_ref().expect("left hand built").pos[idx].clone()
            } else {
                right.as_ref().expect("right hand built").pos[idx - 16].clone()
            }
        };

        let mut frame_pen: Vec<Tensor> = Vec::new();
        for (h, _, s, _) in &pen {
            frame_pen.push(squared_distance(&hand_vertex(*h)?, &sample_at(*s)?)?);
        }
        if !frame_pen.is_empty() {
            let n = frame_pen.len() as f64;
            pen_terms_all.push(Tensor::concat_cols(&frame_pen)?.reduce_sum().scale(1.0 / n));
        }
        for (j, s, _) in &contact {
            c_terms_all.push(squared_distance(&joint_at(*j), &sample_at(*s)?)?);
        }
        for (v, mismatch, s, _) in &region {
            let d2 = squared_distance(&hand_vertex(*v)?, &sample_at(*s)?)?;
            r_terms_all.push(d2.add(&tape.scalar(*mismatch))?);
        }
    }

    let sum_scaled = |terms: &[Tensor]| -> Result<Tensor, DiffError> {
        if terms.is_empty() {
            Ok(tape.scalar(0.0))
        } else {
            Ok(Tensor::concat_cols(terms)?
                .reduce_sum()
                .scale(1.0 / w as f64))
        }
    };
    let l_pen = sum_scaled(&pen_terms_all)?;
    let l_c = sum_scaled(&c_terms_all)?;
    let l_r = sum_scaled(&r_terms_all)?;
    Ok((l_pen, l_c, l_r))
}

// ---------------------------------------------------------------------------
// Plain loss evaluation (reporting and oracle checks)
// ---------------------------------------------------------------------------

/// One window's data for plain loss evaluation.
pub struct WindowItem<'a> {
    pub gt: &'a [HoiFrame],
    pub recon: &'a [HoiFrame],
    /// Quantizer inputs (after masking), o/l/r order.
    pub latents: [&'a [f64]; 3],
    pub quant: &'a QuantizeResult,
    pub model: &'a ObjectModel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub l1: f64,
    pub l_embed: f64,
    pub l_pen: f64,
    pub l_c: f64,
    pub l_r: f64,
}

impl LossComponents {
    pub fn total(&self, cfg: &TokTrainConfig) -> f64 {
        self.l1
            + self.l_embed
            + cfg.geo_weights.lambda_pen * self.l_pen
            + cfg.geo_weights.beta_c * self.l_c
            + cfg.geo_weights.gamma_r * self.l_r
    }
}

/// Batch-mean loss with a component breakdown; the weighted component sum
/// reproduces the total exactly.
pub fn loss_total(
    items: &[WindowItem],
    hand_model: &HandModel,
    cfg: &TokTrainConfig,
) -> Result<(f64, LossComponents), TokTrainError> {
    use crate::geometry::geo_loss;
    use crate::kinematics::flatten_frame;
    use crate::quantizer::embedding_loss;

    if items.is_empty() {
        return Err(TokTrainError::EmptyDataset);
    }
    let mut comps = LossComponents::default();
    for item in items {
        let mut abs = 0.0;
        let mut n = 0usize;
        for (g, r) in item.gt.iter().zip(item.recon) {
            let gv = flatten_frame(g);
            let rv = flatten_frame(r);
            abs += gv.iter().zip(&rv).map(|(a, b)| (a - b).abs()).sum::<f64>();
            n += FRAME_DIM;
        }
        comps.l1 += abs / n as f64;
        comps.l_embed += embedding_loss(
            item.latents[0],
            item.latents[1],
            item.latents[2],
            item.quant,
            cfg.alpha,
        );
        let report = geo_loss(
            item.gt,
            item.recon,
            item.model,
            hand_model,
            &cfg.geo_weights,
            &cfg.thresholds,
        )?;
        comps.l_pen += report.l_pen;
        comps.l_c += report.l_c;
        comps.l_r += report.l_r;
    }
    let k = items.len() as f64;
    comps.l1 /= k;
    comps.l_embed /= k;
    comps.l_pen /= k;
    comps.l_c /= k;
    comps.l_r /= k;
    Ok((comps.total(cfg), comps))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn model_index<'a>(
    models: &'a [ObjectModel],
    name: &str,
) -> Result<&'a ObjectModel, TokTrainError> {
    models
        .iter()
        .find(|m| m.name == name)
        .ok_or_else(|| TokTrainError::UnknownObject(name.to_string()))
}

/// Per-channel mean/std over every frame of the dataset (std floored).
pub fn dataset_stats(seqs: &[HoiSequence]) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; FRAME_DIM];
    let mut count = 0.0;
    for s in seqs {
        for f in s.features().chunks(FRAME_DIM) {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
            count += 1.0;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![0.0; FRAME_DIM];
    for s in seqs {
        for f in s.features().chunks(FRAME_DIM) {
            for ((v, x), m) in var.iter_mut().zip(f).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count).sqrt().max(1e-4)).collect();
    (mean, std)
}

struct TrainWindow {
    seq: usize,
    raw: Vec<f64>,
    gt_frames: Vec<HoiFrame>,
}

fn split_entity_windows(norm: &[f64], w: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut obj_win = Vec::with_capacity(w * OBJ_DIM);
    let mut left_win = Vec::with_capacity(w * HAND_DIM);
    let mut right_win = Vec::with_capacity(w * HAND_DIM);
    for f in 0..w {
        let row = &norm[f * FRAME_DIM..(f + 1) * FRAME_DIM];
        obj_win.extend_from_slice(&row[..OBJ_DIM]);
        left_win.extend_from_slice(&row[OBJ_DIM..OBJ_DIM + HAND_DIM]);
        right_win.extend_from_slice(&row[OBJ_DIM + HAND_DIM..]);
    }
    (obj_win, left_win, right_win)
}

/// Train the tokenizer; deterministic for a fixed seed at one thread.
pub fn train_tokenizer(
    seqs: &[HoiSequence],
    models: &[ObjectModel],
    cfg: &TokTrainConfig,
) -> Result<(TokenizerArtifacts, Vec<EpochLoss>), TokTrainError> {
    if seqs.is_empty() {
        return Err(TokTrainError::EmptyDataset);
    }
    for s in seqs {
        model_index(models, &s.object_id)?;
    }
    let w = cfg.net.window;
    let hand_model = HandModel::standard();

    let mut nets = TokenizerNets::new(NetConfig {
        seed: cfg.seed,
        ..cfg.net.clone()
    });
    let (mean, std) = dataset_stats(seqs);
    nets.set_normalization(&mean, &std);

    let mut hand_cb = Codebook::new(
        CodebookKind::Hand,
        cfg.codebook_size,
        cfg.net.latent_dim,
        cfg.seed ^ 1,
    );
    let mut obj_cb = Codebook::new(
        CodebookKind::Object,
        cfg.codebook_size,
        cfg.net.latent_dim,
        cfg.seed ^ 2,
    );

    let mut windows: Vec<TrainWindow> = Vec::new();
    for (si, s) in seqs.iter().enumerate() {
        let (ws, _) = sequence_windows(s, w);
        for raw in ws {
            let gt_frames = raw
                .chunks(FRAME_DIM)
                .map(|c| unflatten_frame(c).expect("window frame"))
                .collect();
            windows.push(TrainWindow {
                seq: si,
                raw,
                gt_frames,
            });
        }
    }

    let mut adam = Adam::new(&nets.store, cfg.learning_rate);
    let mut accum = GradAccum::new(&nets.store);
    let mut ema_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xE3A);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let geo_on = cfg.geo_weights.lambda_pen > 0.0
        || cfg.geo_weights.beta_c > 0.0
        || cfg.geo_weights.gamma_r > 0.0;

    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut mask_counter: u64 = 0;

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ ((epoch as u64) << 1)));
        order.shuffle(&mut shuffle_rng);
        let mut ep = EpochLoss {
            epoch,
            ..Default::default()
        };

        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let bound = nets.bind(&tape);
            let mut co_cache: HashMap<String, Tensor> = HashMap::new();
            let mut window_losses: Vec<Tensor> = Vec::new();
            let mut hand_assign: Vec<(usize, Vec<f64>)> = Vec::new();
            let mut obj_assign: Vec<(usize, Vec<f64>)> = Vec::new();

            for &wi in batch {
                let item = &windows[wi];
                let seq = &seqs[item.seq];
                let model = model_index(models, &seq.object_id)?;
                let norm = nets.normalize_window(&item.raw);
                let (obj_win, left_win, right_win) = split_entity_windows(&norm, w);

                let c_o = match co_cache.get(&model.name) {
                    Some(t) => t.clone(),
                    None => {
                        let t = nets.encode_points(&tape, &bound, &model.point_cloud_arrays())?;
                        co_cache.insert(model.name.clone(), t.clone());
                        t
                    }
                };
                let z_o = nets.encode_object(&tape, &bound, &obj_win)?;
                let z_l = nets.encode_hand(&tape, &bound, &left_win, 0)?;
                let z_r = nets.encode_hand(&tape, &bound, &right_win, 1)?;

                // MAE-style masking decided per window.
                let mask_seed = splitmix(cfg.seed ^ 0x3A5C ^ mask_counter);
                mask_counter += 1;
                let (_, record) = mask_latents(
                    &z_o.value(),
                    &z_l.value(),
                    &z_r.value(),
                    cfg.mask_prob,
                    mask_seed,
                );
                let d = cfg.net.latent_dim;
                let masked = |t: &Tensor, m: bool| -> Tensor {
                    if m {
                        tape.constant(&vec![0.0; d], &[1, d])
                    } else {
                        t.clone()
                    }
                };
                let zm_o = masked(&z_o, record[0]);
                let zm_l = masked(&z_l, record[1]);
                let zm_r = masked(&z_r, record[2]);

                let quant = hoi_decomposed_quantize(
                    &zm_o.value(),
                    &zm_l.value(),
                    &zm_r.value(),
                    &hand_cb,
                    &obj_cb,
                );
                obj_assign.push((quant.tokens.object, quant.stage_inputs[0].clone()));
                hand_assign.push((quant.tokens.hand_l, quant.stage_inputs[1].clone()));
                hand_assign.push((quant.tokens.hand_r, quant.stage_inputs[2].clone()));

                // Straight-through into the decoder.
                let st_o = zm_o.straight_through(&quant.z_hat_o);
                let st_l = zm_l.straight_through(&quant.z_hat_l);
                let st_r = zm_r.straight_through(&quant.z_hat_r);
                let out = nets.decode(&tape, &bound, &st_o, &st_l, &st_r, &c_o)?;

                // L1 reconstruction in raw feature units.
                let gt_t = tape.constant(&item.raw, &[1, w * FRAME_DIM]);
                let l1 = out.window.sub(&gt_t)?.abs().reduce_mean();

                // Commitment: |z - sg(z_hat)|^2 per stage.
                let mut commit = tape.scalar(0.0);
                for (z, st) in [(&zm_o, &st_o), (&zm_l, &st_l), (&zm_r, &st_r)] {
                    let diff = z.sub(&st.stop_gradient())?;
                    commit = commit.add(&diff.mul(&diff)?.reduce_sum())?;
                }
                let commit = commit.scale(cfg.alpha);

                let mut total = l1.add(&commit)?;
                if geo_on {
                    let (l_pen, l_c, l_r) = window_geometry(
                        &out.window,
                        &item.gt_frames,
                        model,
                        &hand_model,
                        &cfg.thresholds,
                    )?;
                    total = total
                        .add(&l_pen.scale(cfg.geo_weights.lambda_pen))?
                        .add(&l_c.scale(cfg.geo_weights.beta_c))?
                        .add(&l_r.scale(cfg.geo_weights.gamma_r))?;
                    ep.l_pen += l_pen.item();
                    ep.l_c += l_c.item();
                    ep.l_r += l_r.item();
                }
                ep.l1 += l1.item();
                ep.l_embed += commit.item();
                ep.total += total.item();
                window_losses.push(total);
            }

            let batch_loss = Tensor::concat_cols(&window_losses)?.reduce_mean();
            let grads = batch_loss.backward()?;
            accum.reset();
            for (i, leaf) in bound.iter().enumerate() {
                if nets.store.entry(i).trainable {
                    accum.add(i, &grads.get(leaf));
                }
            }
            adam.step(&mut nets.store, accum.sums());

            ema_update(&mut hand_cb, &hand_assign, cfg.ema_decay, &mut ema_rng);
            ema_update(&mut obj_cb, &obj_assign, cfg.ema_decay, &mut ema_rng);
        }

        let n = windows.len() as f64;
        ep.l1 /= n;
        ep.l_embed /= n;
        ep.l_pen /= n;
        ep.l_c /= n;
        ep.l_r /= n;
        ep.total /= n;
        curve.push(ep);
    }

    Ok((
        TokenizerArtifacts {
            nets,
            hand_cb,
            obj_cb,
        },
        curve,
    ))
}

// ---------------------------------------------------------------------------
// Sequence-level encode/decode
// ---------------------------------------------------------------------------

/// Tokenize a sequence into one triple per window (padding by repeating the
/// last frame; deterministic, no masking).
pub fn encode_sequence(
    seq: &HoiSequence,
    artifacts: &TokenizerArtifacts,
) -> Result<Vec<TokenTriple>, TokTrainError> {
    let w = artifacts.window();
    let nets = &artifacts.nets;
    let (windows, _) = sequence_windows(seq, w);
    let tape = Tape::new();
    let bound = nets.bind(&tape);
    let mut out = Vec::with_capacity(windows.len());
    for raw in windows {
        let norm = nets.normalize_window(&raw);
        let (obj_win, left_win, right_win) = split_entity_windows(&norm, w);
        let z_o = nets.encode_object(&tape, &bound, &obj_win)?;
        let z_l = nets.encode_hand(&tape, &bound, &left_win, 0)?;
        let z_r = nets.encode_hand(&tape, &bound, &right_win, 1)?;
        let quant = hoi_decomposed_quantize(
            &z_o.value(),
            &z_l.value(),
            &z_r.value(),
            &artifacts.hand_cb,
            &artifacts.obj_cb,
        );
        out.push(quant.tokens);
    }
    Ok(out)
}

/// Decode token triples back into a sequence of `W * triples.len()` frames
/// (or `original_len` frames when given, trimming window padding).
pub fn decode_sequence(
    triples: &[TokenTriple],
    model: &ObjectModel,
    artifacts: &TokenizerArtifacts,
    fps: f64,
    caption: &str,
    original_len: Option<usize>,
) -> Result<HoiSequence, TokTrainError> {
    if triples.is_empty() {
        return Err(TokTrainError::EmptyTokenStream);
    }
    let w = artifacts.window();
    let nets = &artifacts.nets;
    let tape = Tape::new();
    let bound = nets.bind(&tape);
    let c_o = nets.encode_points(&tape, &bound, &model.point_cloud_arrays())?;
    let mut feats = Vec::with_capacity(triples.len() * w * FRAME_DIM);
    for t in triples {
        let q_o = artifacts.obj_cb.checked_entry(t.object)?;
        let q_l = artifacts.hand_cb.checked_entry(t.hand_l)?;
        let q_r = artifacts.hand_cb.checked_entry(t.hand_r)?;
        let d = nets.cfg.latent_dim;
        let z_o = tape.constant(q_o, &[1, d]);
        let z_l = tape.constant(q_l, &[1, d]);
        let z_r = tape.constant(q_r, &[1, d]);
        let out = nets.decode(&tape, &bound, &z_o, &z_l, &z_r, &c_o)?;
        feats.extend(out.window.value());
    }
    if let Some(t) = original_len {
        feats.truncate(t * FRAME_DIM);
    }
    Ok(HoiSequence::from_features(
        &feats,
        fps,
        &model.name,
        caption,
        0,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{generate_synthetic_dataset, GeneratorConfig, ScriptKind};

    fn tiny_cfg() -> TokTrainConfig {
        TokTrainConfig {
            epochs: 120,
            batch_size: 8,
            net: NetConfig {
                latent_dim: 16,
                window: 4,
                hidden: 64,
                point_hidden: 16,
                handedness_dim: 4,
                seed: 0,
            },
            codebook_size: 32,
            learning_rate: 1e-3,
            mask_prob: 0.0,
            geo_weights: GeoWeights::zero(),
            ..Default::default()
        }
    }

    fn tiny_dataset(n: usize, seed: u64) -> crate::kinematics::GeneratedDataset {
        generate_synthetic_dataset(
            &GeneratorConfig {
                scripts: vec![ScriptKind::Lift, ScriptKind::Grasp],
                sequences: n,
                min_frames: 8,
                max_frames: 12,
                min_surface_samples: 300,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn loss_total_breakdown_sums_to_total() {
        let ds = tiny_dataset(2, 11);
        let cfg = TokTrainConfig::default();
        let hand_model = HandModel::standard();
        let seq = &ds.sequences[0];
        let model = ds.model_for(seq);
        let gt: Vec<HoiFrame> = seq.frames[..4].to_vec();
        let mut recon = gt.clone();
        for f in &mut recon {
            f.right.translation.x += 0.002;
        }
        let hand_cb = Codebook::new(CodebookKind::Hand, 8, 4, 1);
        let obj_cb = Codebook::new(CodebookKind::Object, 8, 4, 2);
        let z = vec![0.1, -0.2, 0.3, 0.4];
        let quant = hoi_decomposed_quantize(&z, &z, &z, &hand_cb, &obj_cb);
        let items = [WindowItem {
            gt: &gt,
            recon: &recon,
            latents: [&z, &z, &z],
            quant: &quant,
            model,
        }];
        let (total, comps) = loss_total(&items, &hand_model, &cfg).unwrap();
        let manual = comps.l1
            + comps.l_embed
            + cfg.geo_weights.lambda_pen * comps.l_pen
            + cfg.geo_weights.beta_c * comps.l_c
            + cfg.geo_weights.gamma_r * comps.l_r;
        assert!((total - manual).abs() < 1e-9);
        assert!(comps.l1 > 0.0);

        // Perfect reconstruction with matching latents and no contact: the
        // l1 and embedding terms vanish.
        let far: Vec<HoiFrame> = gt
            .iter()
            .map(|f| {
                let mut g = f.clone();
                g.left.translation.x = -5.0;
                g.right.translation.x = 5.0;
                g
            })
            .collect();
        let mut quant2 = quant.clone();
        quant2.z_hat_o = z.clone();
        quant2.z_hat_l = z.clone();
        quant2.z_hat_r = z.clone();
        let items = [WindowItem {
            gt: &far,
            recon: &far,
            latents: [&z, &z, &z],
            quant: &quant2,
            model,
        }];
        let (total, _) = loss_total(&items, &hand_model, &cfg).unwrap();
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let ds = tiny_dataset(2, 21);
        let mut cfg = tiny_cfg();
        cfg.epochs = 3;
        cfg.seed = 5;
        let (a, curve_a) = train_tokenizer(&ds.sequences, &ds.models, &cfg).unwrap();
        let (b, curve_b) = train_tokenizer(&ds.sequences, &ds.models, &cfg).unwrap();
        for (x, y) in curve_a.iter().zip(&curve_b) {
            assert_eq!(x.total, y.total);
            assert!(x.total.is_finite());
        }
        for i in 0..a.nets.store.len() {
            assert_eq!(a.nets.store.entry(i).data, b.nets.store.entry(i).data);
        }
        assert_eq!(a.hand_cb.entries, b.hand_cb.entries);
    }

    #[test]
    fn overfits_single_sequence() {
        // Desk-scale overfit check: one short sequence, enough epochs to
        // drive the raw-unit reconstruction error well down.
        let ds = tiny_dataset(1, 33);
        let mut cfg = tiny_cfg();
        cfg.epochs = 400;
        let (arts, curve) = train_tokenizer(&ds.sequences, &ds.models, &cfg).unwrap();
        assert!(curve.iter().all(|e| e.total.is_finite()));
        let first = &curve[0];
        let last = curve.last().unwrap();
        assert!(last.l1 < first.l1 * 0.5, "l1 {} -> {}", first.l1, last.l1);
        assert!(last.l1 < 0.05, "final l1 {}", last.l1);

        // Round trip through tokens stays close on training data.
        let seq = &ds.sequences[0];
        let triples = encode_sequence(seq, &arts).unwrap();
        assert_eq!(triples.len(), seq.len().div_ceil(4));
        let decoded = decode_sequence(
            &triples,
            ds.model_for(seq),
            &arts,
            seq.fps,
            &seq.caption,
            Some(seq.len()),
        )
        .unwrap();
        assert_eq!(decoded.len(), seq.len());
        let gt = seq.features();
        let rec = decoded.features();
        let l1 = gt.iter().zip(&rec).map(|(a, b)| (a - b).abs()).sum::<f64>() / gt.len() as f64;
        assert!(l1 < 0.05, "round-trip l1 {l1}");
    }

    #[test]
    fn encode_decode_contracts() {
        let ds = tiny_dataset(1, 44);
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let (arts, _) = train_tokenizer(&ds.sequences, &ds.models, &cfg).unwrap();
        let seq = &ds.sequences[0];
        let model = ds.model_for(seq);

        // Short sequence pads to one window.
        let mut short = seq.clone();
        short.frames.truncate(2);
        let triples = encode_sequence(&short, &arts).unwrap();
        assert_eq!(triples.len(), 1);

        // Identical sequences give identical triples.
        let t1 = encode_sequence(seq, &arts).unwrap();
        let t2 = encode_sequence(seq, &arts).unwrap();
        assert_eq!(t1, t2);

        // Out-of-range token index rejected.
        let bad = vec![TokenTriple {
            hand_l: cfg.codebook_size,
            hand_r: 0,
            object: 0,
        }];
        assert!(matches!(
            decode_sequence(&bad, model, &arts, 30.0, "", None),
            Err(TokTrainError::Quantizer(
                QuantizerError::TokenOutOfRange { .. }
            ))
        ));

        // Empty triple list rejected.
        assert!(matches!(
            decode_sequence(&[], model, &arts, 30.0, "", None),
            Err(TokTrainError::EmptyTokenStream)
        ));
    }

    #[test]
    fn tape_loss_matches_plain_evaluation() {
        // One window through the training graph must agree with the plain
        // component evaluation to near machine precision.
        let ds = tiny_dataset(1, 55);
        let cfg = TokTrainConfig {
            mask_prob: 0.0,
            ..tiny_cfg()
        };
        let seq = &ds.sequences[0];
        let model = ds.model_for(seq);
        let hand_model = HandModel::standard();
        let mut nets = TokenizerNets::new(cfg.net.clone());
        let (mean, std) = dataset_stats(&ds.sequences);
        nets.set_normalization(&mean, &std);
        let hand_cb = Codebook::new(CodebookKind::Hand, 16, cfg.net.latent_dim, 3);
        let obj_cb = Codebook::new(CodebookKind::Object, 16, cfg.net.latent_dim, 4);

        let (windows, _) = sequence_windows(seq, cfg.net.window);
        let raw = &windows[windows.len() - 1];
        let gt_frames: Vec<HoiFrame> = raw
            .chunks(FRAME_DIM)
            .map(|c| unflatten_frame(c).unwrap())
            .collect();

        let tape = Tape::new();
        let bound = nets.bind(&tape);
        let w = cfg.net.window;
        let norm = nets.normalize_window(raw);
        let (obj_win, left_win, right_win) = split_entity_windows(&norm, w);
        let c_o = nets
            .encode_points(&tape, &bound, &model.point_cloud_arrays())
            .unwrap();
        let z_o = nets.encode_object(&tape, &bound, &obj_win).unwrap();
        let z_l = nets.encode_hand(&tape, &bound, &left_win, 0).unwrap();
        let z_r = nets.encode_hand(&tape, &bound, &right_win, 1).unwrap();
        let quant =
            hoi_decomposed_quantize(&z_o.value(), &z_l.value(), &z_r.value(), &hand_cb, &obj_cb);
        let st_o = z_o.straight_through(&quant.z_hat_o);
        let st_l = z_l.straight_through(&quant.z_hat_l);
        let st_r = z_r.straight_through(&quant.z_hat_r);
        let out = nets.decode(&tape, &bound, &st_o, &st_l, &st_r, &c_o).unwrap();

        let gt_t = tape.constant(raw, &[1, w * FRAME_DIM]);
        let l1 = out.window.sub(&gt_t).unwrap().abs().reduce_mean();
        let (l_pen, l_c, l_r) =
            window_geometry(&out.window, &gt_frames, model, &hand_model, &cfg.thresholds).unwrap();

        // Plain path on the same reconstruction values.
        let recon: Vec<HoiFrame> = out
            .window
            .value()
            .chunks(FRAME_DIM)
            .map(|c| unflatten_frame(c).unwrap())
            .collect();
        let zo = z_o.value();
        let zl = z_l.value();
        let zr = z_r.value();
        let items = [WindowItem {
            gt: &gt_frames,
            recon: &recon,
            latents: [&zo, &zl, &zr],
            quant: &quant,
            model,
        }];
        let (_, comps) = loss_total(&items, &hand_model, &cfg).unwrap();
        assert!(
            (l1.item() - comps.l1).abs() < 1e-9,
            "{} vs {}",
            l1.item(),
            comps.l1
        );
        assert!((l_pen.item() - comps.l_pen).abs() < 1e-9);
        assert!(
            (l_c.item() - comps.l_c).abs() < 1e-9,
            "{} vs {}",
            l_c.item(),
            comps.l_c
        );
        assert!((l_r.item() - comps.l_r).abs() < 1e-9);
    }
}
