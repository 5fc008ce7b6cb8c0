//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls forward evaluation on fresh tapes, so it
//! stays independent of the backward implementation it is used to check.

use super::{DiffError, Tape, Tensor};

/// Result of one gradient comparison.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compare reverse-mode gradients of `build` against central finite
/// differences with step `h`, over every element of every input.
///
/// `build` must construct the scalar loss from leaf tensors created in the
/// given order and shapes; it is re-invoked on a fresh tape for every
/// perturbed evaluation.
pub fn check_gradients<F>(
    inputs: &[(Vec<f64>, Vec<usize>)],
    h: f64,
    build: F,
) -> Result<FdReport, DiffError>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor, DiffError>,
{
    let eval = |values: &[Vec<f64>]| -> Result<f64, DiffError> {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = values
            .iter()
            .zip(inputs)
            .map(|(v, (_, shape))| tape.leaf(v, shape))
            .collect();
        Ok(build(&tape, &leaves)?.item())
    };

    // Analytic gradients.
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(v, shape)| tape.leaf(v, shape))
        .collect();
    let loss = build(&tape, &leaves)?;
    let grads = loss.backward()?;

    let base: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(leaf);
        for j in 0..base[i].len() {
            let mut plus = base.clone();
            plus[i][j] += h;
            let mut minus = base.clone();
            minus[i][j] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let denom = analytic[j].abs().max(numeric.abs()).max(1.0);
            max_rel_err = max_rel_err.max((analytic[j] - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(FdReport {
        max_rel_err,
        checked,
    })
}
