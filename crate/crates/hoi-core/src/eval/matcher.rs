//! Contrastive motion/text matching network providing the shared feature
//! space for the retrieval and distribution metrics: two bidirectional GRU
//! encoders emitting unit-normalized feature vectors.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::Vocabulary;
use crate::diff::adam::{Adam, GradAccum};
use crate::diff::checkpoint::{load_params, save_params, CheckpointError};
use crate::diff::nn::{uniform_init, Linear};
use crate::diff::params::ParamStore;
use crate::diff::{DiffError, Tape, Tensor};
use crate::kinematics::{HoiSequence, FRAME_DIM};

#[derive(Debug, thiserror::Error)]
pub enum MatcherError {
    #[error("need at least {needed} pairs, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone)]
pub struct MatcherConfig {
    /// Shared embedding width of the output features.
    pub feature_dim: usize,
    /// GRU hidden width (per direction).
    pub hidden: usize,
    /// Input projection width for motion frames / text embedding width.
    pub input_dim: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            feature_dim: 64,
            hidden: 64,
            input_dim: 64,
            temperature: 0.1,
            epochs: 65,
            batch_size: 16,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

struct GruCell {
    wz: Linear,
    uz: usize,
    wr: Linear,
    ur: usize,
    wn: Linear,
    un: usize,
}

impl GruCell {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> Self {
        GruCell {
            wz: Linear::new(store, rng, &format!("{name}.wz"), input, hidden),
            uz: store.add(&format!("{name}.uz"), &[hidden, hidden], uniform_init(rng, hidden, hidden * hidden)),
            wr: Linear::new(store, rng, &format!("{name}.wr"), input, hidden),
            ur: store.add(&format!("{name}.ur"), &[hidden, hidden], uniform_init(rng, hidden, hidden * hidden)),
            wn: Linear::new(store, rng, &format!("{name}.wn"), input, hidden),
            un: store.add(&format!("{name}.un"), &[hidden, hidden], uniform_init(rng, hidden, hidden * hidden)),
        }
    }

    fn step(&self, bound: &[Tensor], x: &Tensor, h: &Tensor) -> Result<Tensor, DiffError> {
        let z = self.wz.forward(bound, x)?.add(&h.matmul(&bound[self.uz])?)?.sigmoid();
        let r = self.wr.forward(bound, x)?.add(&h.matmul(&bound[self.ur])?)?.sigmoid();
        let n = self
            .wn
            .forward(bound, x)?
            .add(&r.mul(h)?.matmul(&bound[self.un])?)?
            .tanh();
        // h' = (1 - z) * h + z * n
        let one = x.tape().scalar(1.0);
        z.neg().add(&one)?.mul(h)?.add(&z.mul(&n)?)
    }
}

/// Bidirectional GRU encoder over a `[T, in]` input matrix, pooled to a
/// unit-normalized `[1, feature_dim]` vector.
struct SeqEncoder {
    fwd: GruCell,
    bwd: GruCell,
    out: Linear,
    hidden: usize,
}

impl SeqEncoder {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
        feature_dim: usize,
    ) -> Self {
        SeqEncoder {
            fwd: GruCell::new(store, rng, &format!("{name}.fwd"), input, hidden),
            bwd: GruCell::new(store, rng, &format!("{name}.bwd"), input, hidden),
            out: Linear::new(store, rng, &format!("{name}.out"), 2 * hidden, feature_dim),
            hidden,
        }
    }

    fn encode(&self, tape: &Tape, bound: &[Tensor], rows: &Tensor) -> Result<Tensor, DiffError> {
        let t = rows.rows();
        let zero = tape.constant(&vec![0.0; self.hidden], &[1, self.hidden]);
        let mut hf = zero.clone();
        for i in 0..t {
            hf = self.fwd.step(bound, &rows.slice_rows(i, 1)?, &hf)?;
        }
        let mut hb = zero;
        for i in (0..t).rev() {
            hb = self.bwd.step(bound, &rows.slice_rows(i, 1)?, &hb)?;
        }
        let h = Tensor::concat_cols(&[hf, hb])?;
        let feat = self.out.forward(bound, &h)?;
        // Unit normalization.
        let norm = feat.mul(&feat)?.reduce_sum().powf(-0.5);
        feat.mul(&norm)
    }
}

/// Motion and text encoders with a shared feature space.
pub struct MatcherParams {
    pub store: ParamStore,
    pub cfg: MatcherConfig,
    motion_proj: Linear,
    motion_enc: SeqEncoder,
    text_emb: usize,
    text_enc: SeqEncoder,
}

impl MatcherParams {
    pub fn new(cfg: MatcherConfig, vocab_size: usize) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3A7C);
        let motion_proj = Linear::new(&mut store, &mut rng, "mot.proj", FRAME_DIM, cfg.input_dim);
        let motion_enc = SeqEncoder::new(&mut store, &mut rng, "mot", cfg.input_dim, cfg.hidden, cfg.feature_dim);
        let text_emb = store.add(
            "txt.emb",
            &[vocab_size, cfg.input_dim],
            uniform_init(&mut rng, cfg.input_dim, vocab_size * cfg.input_dim),
        );
        let text_enc = SeqEncoder::new(&mut store, &mut rng, "txt", cfg.input_dim, cfg.hidden, cfg.feature_dim);
        MatcherParams {
            store,
            cfg,
            motion_proj,
            motion_enc,
            text_emb,
            text_enc,
        }
    }

    pub fn from_store(
        cfg: MatcherConfig,
        vocab_size: usize,
        store: ParamStore,
    ) -> Result<Self, MatcherError> {
        let mut p = MatcherParams::new(cfg, vocab_size);
        crate::diff::nn::check_layout(&p.store, &store)
            .map_err(CheckpointError::BadHeader)
            .map_err(MatcherError::Checkpoint)?;
        p.store = store;
        Ok(p)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), MatcherError> {
        Ok(save_params(&self.store, "matcher", path)?)
    }

    pub fn load(path: &std::path::Path, cfg: MatcherConfig, vocab_size: usize) -> Result<Self, MatcherError> {
        let (_, store) = load_params(path)?;
        Self::from_store(cfg, vocab_size, store)
    }

    fn motion_graph(&self, tape: &Tape, bound: &[Tensor], feats: &[f64]) -> Result<Tensor, DiffError> {
        let t = feats.len() / FRAME_DIM;
        let rows = tape.constant(feats, &[t, FRAME_DIM]);
        let projected = self.motion_proj.forward(bound, &rows)?.tanh();
        self.motion_enc.encode(tape, bound, &projected)
    }

    fn text_graph(&self, tape: &Tape, bound: &[Tensor], ids: &[u32]) -> Result<Tensor, DiffError> {
        let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let rows = bound[self.text_emb].gather_rows(&idx)?;
        self.text_enc.encode(tape, bound, &rows)
    }

    /// Unit feature vector for a motion sequence.
    pub fn embed_motion(&self, seq: &HoiSequence) -> Result<Vec<f64>, MatcherError> {
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        Ok(self.motion_graph(&tape, &bound, &seq.features())?.value())
    }

    /// Unit feature vector for a caption.
    pub fn embed_text(&self, caption: &str, vocab: &Vocabulary) -> Result<Vec<f64>, MatcherError> {
        let ids = vocab.encode_text(caption);
        let ids = if ids.is_empty() { vec![crate::codec::PAD] } else { ids };
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        Ok(self.text_graph(&tape, &bound, &ids)?.value())
    }
}

/// Contrastive training on matched (sequence, caption) pairs: in-batch
/// softmax over scaled similarities, symmetric in both directions.
pub fn train_matcher(
    pairs: &[(&HoiSequence, &str)],
    vocab: &Vocabulary,
    cfg: &MatcherConfig,
) -> Result<MatcherParams, MatcherError> {
    if pairs.len() < 2 {
        return Err(MatcherError::TooFewSamples {
            needed: 2,
            got: pairs.len(),
        });
    }
    let mut params = MatcherParams::new(cfg.clone(), vocab.len());
    let mut adam = Adam::new(&params.store, cfg.learning_rate);
    let mut accum = GradAccum::new(&params.store);
    let features: Vec<Vec<f64>> = pairs.iter().map(|(s, _)| s.features()).collect();
    let captions: Vec<Vec<u32>> = pairs
        .iter()
        .map(|(_, c)| {
            let ids = vocab.encode_text(c);
            if ids.is_empty() {
                vec![crate::codec::PAD]
            } else {
                ids
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6A1C ^ ((epoch as u64) << 8));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(2)) {
            if batch.len() < 2 {
                continue;
            }
            let tape = Tape::new();
            let bound = params.store.bind(&tape);
            let m: Vec<Tensor> = batch
                .iter()
                .map(|&i| params.motion_graph(&tape, &bound, &features[i]))
                .collect::<Result<_, _>>()?;
            let t: Vec<Tensor> = batch
                .iter()
                .map(|&i| params.text_graph(&tape, &bound, &captions[i]))
                .collect::<Result<_, _>>()?;
            let m_all = Tensor::concat_rows(&m)?;
            let t_all = Tensor::concat_rows(&t)?;
            let logits = m_all.matmul_t(&t_all)?.scale(1.0 / cfg.temperature);
            let targets: Vec<usize> = (0..batch.len()).collect();
            let loss_m2t = logits.cross_entropy_rows(&targets)?.reduce_mean();
            // Text-to-motion direction on the transposed similarity.
            let logits_t = t_all.matmul_t(&m_all)?.scale(1.0 / cfg.temperature);
            let loss_t2m = logits_t.cross_entropy_rows(&targets)?.reduce_mean();
            let loss = loss_m2t.add(&loss_t2m)?.scale(0.5);
            let grads = loss.backward()?;
            accum.reset();
            for (i, leaf) in bound.iter().enumerate() {
                accum.add(i, &grads.get(leaf));
            }
            adam.step(&mut params.store, accum.sums());
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{generate_synthetic_dataset, GeneratorConfig};

    #[test]
    fn features_are_unit_normalized_and_deterministic() {
        let ds = generate_synthetic_dataset(
            &GeneratorConfig {
                sequences: 2,
                min_frames: 10,
                max_frames: 14,
                min_surface_samples: 300,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let vocab = Vocabulary::new(16, 16);
        let cfg = MatcherConfig {
            hidden: 16,
            input_dim: 16,
            feature_dim: 8,
            ..Default::default()
        };
        let params = MatcherParams::new(cfg, vocab.len());
        let f1 = params.embed_motion(&ds.sequences[0]).unwrap();
        let f2 = params.embed_motion(&ds.sequences[0]).unwrap();
        assert_eq!(f1, f2);
        let norm: f64 = f1.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let t = params.embed_text(&ds.sequences[0].caption, &vocab).unwrap();
        let norm: f64 = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_pairs_rejected() {
        let vocab = Vocabulary::new(8, 8);
        let cfg = MatcherConfig::default();
        assert!(matches!(
            train_matcher(&[], &vocab, &cfg),
            Err(MatcherError::TooFewSamples { .. })
        ));
    }
}
