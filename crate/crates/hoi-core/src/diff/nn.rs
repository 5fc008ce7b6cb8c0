//! Network building blocks and the tokenizer encoder/decoder stacks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::{Activation, DiffError, Tape, Tensor};

/// Verify a loaded store matches the expected layout entry by entry.
pub fn check_layout(expected: &ParamStore, loaded: &ParamStore) -> Result<(), String> {
    if expected.len() != loaded.len() {
        return Err(format!(
            "checkpoint holds {} tensors, architecture expects {}",
            loaded.len(),
            expected.len()
        ));
    }
    for i in 0..loaded.len() {
        if expected.entry(i).name != loaded.entry(i).name
            || expected.entry(i).shape != loaded.entry(i).shape
        {
            return Err(format!(
                "checkpoint tensor {} is {} {:?}, architecture expects {} {:?}",
                i,
                loaded.entry(i).name,
                loaded.entry(i).shape,
                expected.entry(i).name,
                expected.entry(i).shape
            ));
        }
    }
    Ok(())
}

/// `x @ w + b` with `b` broadcast across rows.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    x.matmul(w)?.add(b)
}

/// Uniform init in ±1/sqrt(fan_in), seeded.
pub fn uniform_init(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// A linear layer referencing entries of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let w = store.add(
            &format!("{name}.w"),
            &[fan_in, fan_out],
            uniform_init(rng, fan_in, fan_in * fan_out),
        );
        let b = store.add(
            &format!("{name}.b"),
            &[fan_out],
            uniform_init(rng, fan_in, fan_out),
        );
        Linear { w, b }
    }

    pub fn forward(&self, bound: &[Tensor], x: &Tensor) -> Result<Tensor, DiffError> {
        affine(x, &bound[self.w], &bound[self.b])
    }
}

/// Stack of linear layers with an activation between them (linear output).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        dims: &[usize],
        act: Activation,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = (0..dims.len() - 1)
            .map(|i| Linear::new(store, rng, &format!("{prefix}.l{i}"), dims[i], dims[i + 1]))
            .collect();
        Mlp { layers, act }
    }

    pub fn forward(&self, bound: &[Tensor], x: &Tensor) -> Result<Tensor, DiffError> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(bound, &h)?;
            if i + 1 < self.layers.len() {
                h = h.activation(self.act);
            }
        }
        Ok(h)
    }
}

/// Architecture sizes for the tokenizer encoder/decoder stacks.
#[derive(Debug, Clone)]
pub struct NetConfig {
    /// Latent width d; must match the codebook dimension.
    pub latent_dim: usize,
    /// Temporal window length W in frames.
    pub window: usize,
    /// Hidden width of the encoder/decoder stacks.
    pub hidden: usize,
    /// Hidden width of the per-point feature stack.
    pub point_hidden: usize,
    /// Width of the learned handedness embedding.
    pub handedness_dim: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent_dim: 64,
            window: 4,
            hidden: 256,
            point_hidden: 64,
            handedness_dim: 8,
            seed: 0,
        }
    }
}

pub const FRAME_DIM: usize = 208;
pub const OBJ_DIM: usize = 10;
pub const HAND_DIM: usize = 99;

/// Decoder outputs for one window.
pub struct DecodeOut {
    /// Object channels predicted by the object decoder, `[1, W*10]`.
    pub object: Tensor,
    /// Full reconstructed window `[1, W*208]` with object channels taken
    /// from the object decoder.
    pub window: Tensor,
}

/// Hand/object/point-cloud encoders and the object-conditioned dual decoder.
///
/// Left and right hands share encoder weights and differ only through the
/// handedness embedding row. The object decoder sees `z_o + c_o` alone, so
/// its output is a function of the object latent and point features only.
pub struct TokenizerNets {
    pub store: ParamStore,
    pub cfg: NetConfig,
    hand_emb: usize,
    enc_hand: Mlp,
    enc_obj: Mlp,
    enc_point: Mlp,
    dec_obj: Mlp,
    dec_hand: Mlp,
    norm_mean: usize,
    norm_std: usize,
}

impl TokenizerNets {
    pub fn new(cfg: NetConfig) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x746f_6b6e);
        let d = cfg.latent_dim;
        let w = cfg.window;
        let h = cfg.hidden;
        let hand_in = w * HAND_DIM + cfg.handedness_dim;
        let hand_emb = store.add(
            "hand_emb",
            &[2, cfg.handedness_dim],
            uniform_init(&mut rng, 2, 2 * cfg.handedness_dim),
        );
        let enc_hand = Mlp::new(&mut store, &mut rng, "enc_hand", &[hand_in, h, h, d], Activation::Tanh);
        let enc_obj = Mlp::new(&mut store, &mut rng, "enc_obj", &[w * OBJ_DIM, h, h, d], Activation::Tanh);
        let enc_point = Mlp::new(
            &mut store,
            &mut rng,
            "enc_point",
            &[3, cfg.point_hidden, cfg.point_hidden, d],
            Activation::Tanh,
        );
        let dec_obj = Mlp::new(&mut store, &mut rng, "dec_obj", &[d, h, h, w * OBJ_DIM], Activation::Tanh);
        let dec_hand = Mlp::new(
            &mut store,
            &mut rng,
            "dec_hand",
            &[d + w * OBJ_DIM, h, h, w * FRAME_DIM],
            Activation::Tanh,
        );
        let norm_mean = store.add_frozen("norm.mean", &[FRAME_DIM], vec![0.0; FRAME_DIM]);
        let norm_std = store.add_frozen("norm.std", &[FRAME_DIM], vec![1.0; FRAME_DIM]);
        TokenizerNets {
            store,
            cfg,
            hand_emb,
            enc_hand,
            enc_obj,
            enc_point,
            dec_obj,
            dec_hand,
            norm_mean,
            norm_std,
        }
    }

    /// Rebuild from a loaded store; layer indices are reconstructed by name.
    pub fn from_store(cfg: NetConfig, store: ParamStore) -> Result<Self, String> {
        let mut nets = TokenizerNets::new(cfg);
        check_layout(&nets.store, &store)?;
        nets.store = store;
        Ok(nets)
    }

    pub fn set_normalization(&mut self, mean: &[f64], std: &[f64]) {
        assert_eq!(mean.len(), FRAME_DIM);
        assert_eq!(std.len(), FRAME_DIM);
        self.store.entry_mut(self.norm_mean).data = mean.to_vec();
        self.store.entry_mut(self.norm_std).data = std.to_vec();
    }

    pub fn norm_stats(&self) -> (&[f64], &[f64]) {
        (
            &self.store.entry(self.norm_mean).data,
            &self.store.entry(self.norm_std).data,
        )
    }

    /// Normalize a raw `W*208` window into encoder space.
    pub fn normalize_window(&self, raw: &[f64]) -> Vec<f64> {
        let (mean, std) = self.norm_stats();
        raw.iter()
            .enumerate()
            .map(|(i, v)| (v - mean[i % FRAME_DIM]) / std[i % FRAME_DIM])
            .collect()
    }

    pub fn bind(&self, tape: &Tape) -> Vec<Tensor> {
        self.store.bind(tape)
    }

    /// Encode one hand's normalized window (`W*99` flat) with a handedness
    /// embedding; `hand_index` is 0 for left, 1 for right.
    pub fn encode_hand(
        &self,
        tape: &Tape,
        bound: &[Tensor],
        window: &[f64],
        hand_index: usize,
    ) -> Result<Tensor, DiffError> {
        assert_eq!(window.len(), self.cfg.window * HAND_DIM);
        let x = tape.constant(window, &[1, window.len()]);
        let emb = bound[self.hand_emb].slice_rows(hand_index, 1)?;
        let joined = Tensor::concat_cols(&[x, emb])?;
        self.enc_hand.forward(bound, &joined)
    }

    /// Encode the normalized object window (`W*10` flat).
    pub fn encode_object(
        &self,
        tape: &Tape,
        bound: &[Tensor],
        window: &[f64],
    ) -> Result<Tensor, DiffError> {
        assert_eq!(window.len(), self.cfg.window * OBJ_DIM);
        let x = tape.constant(window, &[1, window.len()]);
        self.enc_obj.forward(bound, &x)
    }

    /// Permutation-invariant point-cloud feature: shared per-point stack then
    /// channel-wise max over points.
    pub fn encode_points(
        &self,
        tape: &Tape,
        bound: &[Tensor],
        points: &[[f64; 3]],
    ) -> Result<Tensor, DiffError> {
        if points.is_empty() {
            return Err(DiffError::EmptyCloud);
        }
        let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let x = tape.constant(&flat, &[points.len(), 3]);
        let feats = self.enc_point.forward(bound, &x)?;
        Ok(feats.reduce_max_axis0())
    }

    /// Object-conditioned decode. The object decoder consumes `z_o + c_o`
    /// and its output both conditions the hand decoder and supplies the
    /// object channels of the final window.
    pub fn decode(
        &self,
        tape: &Tape,
        bound: &[Tensor],
        z_hat_o: &Tensor,
        z_hat_l: &Tensor,
        z_hat_r: &Tensor,
        c_o: &Tensor,
    ) -> Result<DecodeOut, DiffError> {
        let w = self.cfg.window;
        let obj_in = z_hat_o.add(c_o)?;
        let obj_out = self.dec_obj.forward(bound, &obj_in)?;

        let z = z_hat_o.add(z_hat_l)?.add(z_hat_r)?;
        let hand_in = Tensor::concat_cols(&[z.add(c_o)?, obj_out.clone()])?;
        let hand_out = self.dec_hand.forward(bound, &hand_in)?;

        // Final window: object channels from the object decoder, the rest
        // from the hand decoder.
        let mut parts = Vec::with_capacity(2 * w);
        for f in 0..w {
            parts.push(obj_out.slice_cols(f * OBJ_DIM, OBJ_DIM)?);
            parts.push(hand_out.slice_cols(f * FRAME_DIM + OBJ_DIM, FRAME_DIM - OBJ_DIM)?);
        }
        let window_norm = Tensor::concat_cols(&parts)?;

        // Back to raw feature units.
        let (mean, std) = self.norm_stats();
        let mut mean_t = Vec::with_capacity(w * FRAME_DIM);
        let mut std_t = Vec::with_capacity(w * FRAME_DIM);
        for _ in 0..w {
            mean_t.extend_from_slice(mean);
            std_t.extend_from_slice(std);
        }
        let window = window_norm
            .mul(&tape.constant(&std_t, &[1, w * FRAME_DIM]))?
            .add(&tape.constant(&mean_t, &[1, w * FRAME_DIM]))?;
        Ok(DecodeOut {
            object: obj_out,
            window,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_nets() -> TokenizerNets {
        TokenizerNets::new(NetConfig {
            latent_dim: 8,
            window: 2,
            hidden: 16,
            point_hidden: 8,
            handedness_dim: 4,
            seed: 3,
        })
    }

    #[test]
    fn point_encoder_permutation_invariant() {
        let nets = tiny_nets();
        let pts = vec![[0.1, 0.2, 0.3], [-0.5, 0.0, 0.2], [0.4, -0.1, 0.9]];
        let mut perm = pts.clone();
        perm.swap(0, 2);

        let tape = Tape::new();
        let bound = nets.bind(&tape);
        let a = nets.encode_points(&tape, &bound, &pts).unwrap();
        let b = nets.encode_points(&tape, &bound, &perm).unwrap();
        assert_eq!(a.value(), b.value());
    }

    #[test]
    fn point_encoder_repeated_point_matches_single() {
        let nets = tiny_nets();
        let single = vec![[0.3, -0.2, 0.4]];
        let repeated = vec![[0.3, -0.2, 0.4]; 7];
        let tape = Tape::new();
        let bound = nets.bind(&tape);
        let a = nets.encode_points(&tape, &bound, &single).unwrap();
        let b = nets.encode_points(&tape, &bound, &repeated).unwrap();
        assert_eq!(a.value(), b.value());
    }

    #[test]
    fn point_encoder_rejects_empty_cloud() {
        let nets = tiny_nets();
        let tape = Tape::new();
        let bound = nets.bind(&tape);
        assert!(matches!(
            nets.encode_points(&tape, &bound, &[]),
            Err(DiffError::EmptyCloud)
        ));
    }

    #[test]
    fn swapped_handedness_changes_latent() {
        let nets = tiny_nets();
        let window = vec![0.05; nets.cfg.window * HAND_DIM];
        let tape = Tape::new();
        let bound = nets.bind(&tape);
        let zl = nets.encode_hand(&tape, &bound, &window, 0).unwrap();
        let zr = nets.encode_hand(&tape, &bound, &window, 1).unwrap();
        assert_ne!(zl.value(), zr.value());
    }

    #[test]
    fn decode_zero_everything_is_zero_with_zero_params() {
        let mut nets = tiny_nets();
        for i in 0..nets.store.len() {
            nets.store.entry_mut(i).data.fill(0.0);
        }
        nets.set_normalization(&vec![0.0; FRAME_DIM], &vec![1.0; FRAME_DIM]);
        let d = nets.cfg.latent_dim;
        let tape = Tape::new();
        let bound = nets.bind(&tape);
        let zero = tape.constant(&vec![0.0; d], &[1, d]);
        let out = nets.decode(&tape, &bound, &zero, &zero, &zero, &zero).unwrap();
        assert!(out.window.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn object_channels_ignore_hand_latents() {
        let nets = tiny_nets();
        let d = nets.cfg.latent_dim;
        let tape = Tape::new();
        let bound = nets.bind(&tape);
        let zo = tape.constant(&vec![0.3; d], &[1, d]);
        let co = tape.constant(&vec![0.1; d], &[1, d]);
        let zl1 = tape.constant(&vec![0.2; d], &[1, d]);
        let zl2 = tape.constant(&vec![-0.9; d], &[1, d]);
        let zr = tape.constant(&vec![0.05; d], &[1, d]);
        let a = nets.decode(&tape, &bound, &zo, &zl1, &zr, &co).unwrap();
        let b = nets.decode(&tape, &bound, &zo, &zl2, &zr, &co).unwrap();
        assert_eq!(a.object.value(), b.object.value());
        // Hand channels do change.
        assert_ne!(a.window.value(), b.window.value());
        // Object channels inside the composed window are bitwise equal.
        let w = nets.cfg.window;
        let av = a.window.value();
        let bv = b.window.value();
        for f in 0..w {
            for c in 0..OBJ_DIM {
                assert_eq!(av[f * FRAME_DIM + c], bv[f * FRAME_DIM + c]);
            }
        }
    }
}
