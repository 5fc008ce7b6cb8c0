//! Finite-difference verification of every tape primitive, alone and in
//! random compositions.

use hoi_core::diff::fdcheck::check_gradients;
use hoi_core::diff::{Activation, Tensor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

#[test]
fn elementwise_and_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = (randv(&mut rng, 12), vec![3, 4]);
    let b = (randv(&mut rng, 12), vec![3, 4]);
    let row = (randv(&mut rng, 4), vec![1, 4]);
    let col = (randv(&mut rng, 3), vec![3, 1]);
    let report = check_gradients(&[a, b, row, col], H, |_, t| {
        let x = t[0].add(&t[1])?.mul(&t[2])?.sub(&t[3])?;
        let y = x.tanh().mul(&x.sigmoid())?.abs();
        Ok(y.reduce_mean().add(&x.reduce_sum())?.reduce_sum())
    })
    .unwrap();
    assert!(report.max_rel_err < TOL, "rel err {}", report.max_rel_err);
}

#[test]
fn matmul_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = (randv(&mut rng, 6), vec![2, 3]);
    let b = (randv(&mut rng, 12), vec![3, 4]);
    let c = (randv(&mut rng, 20), vec![5, 4]);
    let report = check_gradients(&[a, b, c], H, |_, t| {
        let ab = t[0].matmul(&t[1])?; // [2,4]
        let abct = ab.matmul_t(&t[2])?; // [2,5]
        Ok(abct.mul(&abct)?.reduce_mean())
    })
    .unwrap();
    assert!(report.max_rel_err < TOL, "rel err {}", report.max_rel_err);
}

#[test]
fn softmax_layernorm_crossentropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = (randv(&mut rng, 15), vec![3, 5]);
    let g = (randv(&mut rng, 5), vec![1, 5]);
    let b = (randv(&mut rng, 5), vec![1, 5]);
    let report = check_gradients(&[x, g, b], H, |_, t| {
        let ln = t[0].layer_norm_rows(&t[1], &t[2], 1e-5)?;
        let sm = ln.softmax_rows();
        let ce = ln.cross_entropy_rows(&[1, 4, 0])?;
        Ok(sm.reduce_sum().add(&ce.reduce_mean())?.reduce_sum())
    })
    .unwrap();
    assert!(report.max_rel_err < TOL, "rel err {}", report.max_rel_err);
}

#[test]
fn slicing_concat_gather_maxpool() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let table = (randv(&mut rng, 12), vec![4, 3]);
    let m = (randv(&mut rng, 12), vec![4, 3]);
    let report = check_gradients(&[table, m], H, |_, t| {
        let rows = t[0].gather_rows(&[2, 0, 2])?; // repeated index: scatter-add path
        let sl = rows.slice_cols(1, 2)?;
        let sr = t[1].slice_rows(1, 2)?.slice_cols(0, 2)?;
        let cat = Tensor::concat_rows(&[sl, sr])?;
        let pooled = cat.reduce_max_axis0();
        let wide = Tensor::concat_cols(&[pooled.clone(), pooled])?;
        Ok(wide.mul(&wide)?.reduce_sum())
    })
    .unwrap();
    assert!(report.max_rel_err < TOL, "rel err {}", report.max_rel_err);
}

#[test]
fn stop_gradient_and_straight_through_compose() {
    // The quantized value is re-looked-up from a fixed codebook on every
    // evaluation: the lookup is locally constant in x, which is exactly the
    // function sg models, so finite differences agree. The straight-through
    // node forwards a value equal to its input, so its claimed unit gradient
    // is the true one.
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let codebook: Vec<Vec<f64>> = (0..4).map(|_| randv(&mut rng, 6)).collect();
    let x = (randv(&mut rng, 6), vec![1, 6]);
    let report = check_gradients(&[x], H, move |_, t| {
        let xv = t[0].value();
        let nearest = codebook
            .iter()
            .min_by(|a, b| {
                let da: f64 = a.iter().zip(&xv).map(|(p, q)| (p - q) * (p - q)).sum();
                let db: f64 = b.iter().zip(&xv).map(|(p, q)| (p - q) * (p - q)).sum();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        // commitment term |x - sg(q)|^2 through a straight-through node
        let st_q = t[0].straight_through(nearest);
        let sg_q = st_q.stop_gradient();
        let diff = t[0].sub(&sg_q)?;
        let commit = diff.mul(&diff)?.reduce_sum();
        // identity-valued straight-through: pass-through must be exactly 1
        let st_id = t[0].straight_through(&xv);
        let decoded = st_id.mul(&st_id)?.reduce_mean();
        commit.add(&decoded)
    })
    .unwrap();
    assert!(report.max_rel_err < TOL, "rel err {}", report.max_rel_err);
}

#[test]
fn rot6d_gram_schmidt_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..20 {
        let r = (randv(&mut rng, 6), vec![1, 6]);
        let w = randv(&mut rng, 9);
        let report = check_gradients(&[r], H, |tape, t| {
            let m = t[0].rot6d_to_matrix()?;
            let weights = tape.constant(&w, &[3, 3]);
            Ok(m.mul(&weights)?.reduce_sum().powf(2.0))
        })
        .unwrap();
        assert!(report.max_rel_err < TOL, "rel err {}", report.max_rel_err);
    }
}

#[test]
fn random_small_networks_match_finite_differences() {
    // Random 3-layer networks over mixed primitives, the standing property
    // check for the backward pass.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..10 {
        let n_in = rng.gen_range(2..5);
        let h1 = rng.gen_range(3..6);
        let h2 = rng.gen_range(2..5);
        let x = (randv(&mut rng, n_in), vec![1, n_in]);
        let w1 = (randv(&mut rng, n_in * h1), vec![n_in, h1]);
        let b1 = (randv(&mut rng, h1), vec![1, h1]);
        let w2 = (randv(&mut rng, h1 * h2), vec![h1, h2]);
        let b2 = (randv(&mut rng, h2), vec![1, h2]);
        let w3 = (randv(&mut rng, h2), vec![h2, 1]);
        let act = [Activation::Tanh, Activation::Sigmoid, Activation::Relu][trial % 3];
        let report = check_gradients(&[x, w1, b1, w2, b2, w3], H, move |_, t| {
            let h1 = t[0].matmul(&t[1])?.add(&t[2])?.activation(act);
            let h2 = h1.matmul(&t[3])?.add(&t[4])?.activation(act);
            Ok(h2.matmul(&t[5])?.reduce_sum())
        })
        .unwrap();
        assert!(
            report.max_rel_err < TOL,
            "trial {trial}: rel err {}",
            report.max_rel_err
        );
    }
}

#[test]
fn sin_cos_reshape_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = (randv(&mut rng, 6), vec![1, 6]);
    let report = check_gradients(&[x], H, |_, t| {
        let col = t[0].reshape(6, 1)?;
        let s = col.sin().mul(&col.cos())?;
        Ok(s.reduce_sum())
    })
    .unwrap();
    assert!(report.max_rel_err < TOL, "rel err {}", report.max_rel_err);
}
