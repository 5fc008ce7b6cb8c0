//! Tape primitives: forward constructors and vector-Jacobian products.

use super::{DiffError, Node, Tape, Tensor};

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed in terms of the activation output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Broadcast pattern of the rhs in a binary elementwise op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// rhs is `[1, c]`, repeated across rows.
    Row,
    /// rhs is `[r, 1]`, repeated across columns.
    Col,
    /// rhs is `[1, 1]`.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
}

pub(crate) enum Op {
    Leaf,
    Bin {
        kind: BinKind,
        a: usize,
        b: usize,
        bc: Broadcast,
    },
    Neg(usize),
    Abs(usize),
    Powf {
        x: usize,
        p: f64,
    },
    Act {
        x: usize,
        kind: Activation,
    },
    Sin(usize),
    Cos(usize),
    /// Same values, different shape tag.
    Reshape(usize),
    MatMul {
        a: usize,
        b: usize,
    },
    /// `a @ b^T`
    MatMulT {
        a: usize,
        b: usize,
    },
    ReduceMaxAxis0 {
        x: usize,
        argmax: Vec<usize>,
    },
    ReduceMean(usize),
    ReduceSum(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
        len: usize,
    },
    SliceRows {
        x: usize,
        start: usize,
    },
    // Input id kept so the record stays a complete graph even though no
    // gradient flows through.
    #[allow(dead_code)]
    StopGradient(usize),
    /// Forwards a quantized value, routes the gradient unchanged to `x`.
    StraightThrough {
        x: usize,
    },
    Gather {
        table: usize,
        indices: Vec<usize>,
    },
    SoftmaxRows(usize),
    CrossEntropyRows {
        logits: usize,
        targets: Vec<usize>,
    },
    LayerNormRows {
        x: usize,
        gain: usize,
        bias: usize,
        eps: f64,
    },
    Rot6dToMatrix(usize),
}

fn same_tape(a: &Tensor, b: &Tensor) {
    assert!(
        std::rc::Rc::ptr_eq(&a.tape.inner, &b.tape.inner),
        "tensors from different tapes"
    );
}

fn broadcast_of(a: [usize; 2], b: [usize; 2], op: &'static str) -> Result<Broadcast, DiffError> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b == [1, 1] {
        Ok(Broadcast::Scalar)
    } else if b[0] == 1 && b[1] == a[1] {
        Ok(Broadcast::Row)
    } else if b[1] == 1 && b[0] == a[0] {
        Ok(Broadcast::Col)
    } else {
        Err(DiffError::ShapeMismatch {
            op,
            detail: format!("lhs {a:?} vs rhs {b:?}"),
        })
    }
}

impl Tape {
    fn node_requires_grad(&self, id: usize) -> bool {
        self.inner.borrow()[id].requires_grad
    }

}

impl Tensor {
    fn unary(&self, op: Op, value: Vec<f64>, shape: [usize; 2], requires_grad: bool) -> Tensor {
        self.tape.push(Node {
            op,
            value,
            shape,
            requires_grad,
        })
    }

    fn bin(&self, rhs: &Tensor, kind: BinKind, name: &'static str) -> Result<Tensor, DiffError> {
        same_tape(self, rhs);
        let bc = broadcast_of(self.shape, rhs.shape, name)?;
        let a = self.value();
        let b = rhs.value();
        let [r, c] = self.shape;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let bv = match bc {
                    Broadcast::Same => b[i * c + j],
                    Broadcast::Row => b[j],
                    Broadcast::Col => b[i],
                    Broadcast::Scalar => b[0],
                };
                let av = a[i * c + j];
                out[i * c + j] = match kind {
                    BinKind::Add => av + bv,
                    BinKind::Sub => av - bv,
                    BinKind::Mul => av * bv,
                };
            }
        }
        let rg = self.tape.node_requires_grad(self.id) || self.tape.node_requires_grad(rhs.id);
        Ok(self.unary(
            Op::Bin {
                kind,
                a: self.id,
                b: rhs.id,
                bc,
            },
            out,
            self.shape,
            rg,
        ))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor, DiffError> {
        self.bin(rhs, BinKind::Add, "add")
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor, DiffError> {
        self.bin(rhs, BinKind::Sub, "sub")
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor, DiffError> {
        self.bin(rhs, BinKind::Mul, "mul")
    }

    pub fn neg(&self) -> Tensor {
        let value = self.value().iter().map(|v| -v).collect();
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(Op::Neg(self.id), value, self.shape, rg)
    }

    pub fn abs(&self) -> Tensor {
        let value = self.value().iter().map(|v| v.abs()).collect();
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(Op::Abs(self.id), value, self.shape, rg)
    }

    pub fn powf(&self, p: f64) -> Tensor {
        let value = self.value().iter().map(|v| v.powf(p)).collect();
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(Op::Powf { x: self.id, p }, value, self.shape, rg)
    }

    /// Multiply by a plain constant.
    pub fn scale(&self, k: f64) -> Tensor {
        let c = self.tape.scalar(k);
        self.mul(&c).expect("scalar broadcast always valid")
    }

    pub fn activation(&self, kind: Activation) -> Tensor {
        let value = self.value().iter().map(|v| kind.apply(*v)).collect();
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(Op::Act { x: self.id, kind }, value, self.shape, rg)
    }

    pub fn tanh(&self) -> Tensor {
        self.activation(Activation::Tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.activation(Activation::Relu)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.activation(Activation::Sigmoid)
    }

    pub fn sin(&self) -> Tensor {
        let value = self.value().iter().map(|v| v.sin()).collect();
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(Op::Sin(self.id), value, self.shape, rg)
    }

    pub fn cos(&self) -> Tensor {
        let value = self.value().iter().map(|v| v.cos()).collect();
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(Op::Cos(self.id), value, self.shape, rg)
    }

    /// Reinterpret the value with a new shape of the same element count.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Tensor, DiffError> {
        if rows * cols != self.len() {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} to [{rows}, {cols}]", self.shape),
            });
        }
        let rg = self.tape.node_requires_grad(self.id);
        Ok(self.unary(Op::Reshape(self.id), self.value(), [rows, cols], rg))
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, DiffError> {
        same_tape(self, rhs);
        let [n, k] = self.shape;
        let [k2, m] = rhs.shape;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} @ {:?}", self.shape, rhs.shape),
            });
        }
        let a = self.value();
        let b = rhs.value();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    orow[j] += av * brow[j];
                }
            }
        }
        let rg = self.tape.node_requires_grad(self.id) || self.tape.node_requires_grad(rhs.id);
        Ok(self.unary(
            Op::MatMul {
                a: self.id,
                b: rhs.id,
            },
            out,
            [n, m],
            rg,
        ))
    }

    /// `self @ rhs^T` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Tensor) -> Result<Tensor, DiffError> {
        same_tape(self, rhs);
        let [n, k] = self.shape;
        let [m, k2] = rhs.shape;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul_t",
                detail: format!("{:?} @ {:?}^T", self.shape, rhs.shape),
            });
        }
        let a = self.value();
        let b = rhs.value();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..m {
                let brow = &b[j * k..(j + 1) * k];
                let mut s = 0.0;
                for p in 0..k {
                    s += arow[p] * brow[p];
                }
                out[i * m + j] = s;
            }
        }
        let rg = self.tape.node_requires_grad(self.id) || self.tape.node_requires_grad(rhs.id);
        Ok(self.unary(
            Op::MatMulT {
                a: self.id,
                b: rhs.id,
            },
            out,
            [n, m],
            rg,
        ))
    }

    /// Column-wise max over rows: `[n, c] -> [1, c]`. Ties break to the
    /// lowest row index.
    pub fn reduce_max_axis0(&self) -> Tensor {
        let [n, c] = self.shape;
        let v = self.value();
        let mut out = vec![f64::NEG_INFINITY; c];
        let mut argmax = vec![0usize; c];
        for i in 0..n {
            for j in 0..c {
                let x = v[i * c + j];
                if x > out[j] {
                    out[j] = x;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(
            Op::ReduceMaxAxis0 {
                x: self.id,
                argmax,
            },
            out,
            [1, c],
            rg,
        )
    }

    pub fn reduce_mean(&self) -> Tensor {
        let v = self.value();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(Op::ReduceMean(self.id), vec![mean], [1, 1], rg)
    }

    pub fn reduce_sum(&self) -> Tensor {
        let v = self.value();
        let sum = v.iter().sum::<f64>();
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(Op::ReduceSum(self.id), vec![sum], [1, 1], rg)
    }

    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor, DiffError> {
        assert!(!parts.is_empty(), "concat_cols of zero tensors");
        let first = &parts[0];
        let rows = first.shape[0];
        let mut cols = 0;
        for p in parts {
            same_tape(first, p);
            if p.shape[0] != rows {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts differ: {} vs {}", rows, p.shape[0]),
                });
            }
            cols += p.shape[1];
        }
        let mut out = vec![0.0; rows * cols];
        let mut col0 = 0;
        for p in parts {
            let v = p.value();
            let pc = p.shape[1];
            for i in 0..rows {
                out[i * cols + col0..i * cols + col0 + pc].copy_from_slice(&v[i * pc..(i + 1) * pc]);
            }
            col0 += pc;
        }
        let rg = parts.iter().any(|p| p.tape.node_requires_grad(p.id));
        Ok(first.unary(
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            out,
            [rows, cols],
            rg,
        ))
    }

    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor, DiffError> {
        assert!(!parts.is_empty(), "concat_rows of zero tensors");
        let first = &parts[0];
        let cols = first.shape[1];
        let mut rows = 0;
        for p in parts {
            same_tape(first, p);
            if p.shape[1] != cols {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("col counts differ: {} vs {}", cols, p.shape[1]),
                });
            }
            rows += p.shape[0];
        }
        let mut out = Vec::with_capacity(rows * cols);
        for p in parts {
            out.extend_from_slice(&p.value());
        }
        let rg = parts.iter().any(|p| p.tape.node_requires_grad(p.id));
        Ok(first.unary(
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            out,
            [rows, cols],
            rg,
        ))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor, DiffError> {
        let [r, c] = self.shape;
        if start + len > c {
            return Err(DiffError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("{start}..{} out of {c} cols", start + len),
            });
        }
        let v = self.value();
        let mut out = vec![0.0; r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len].copy_from_slice(&v[i * c + start..i * c + start + len]);
        }
        let rg = self.tape.node_requires_grad(self.id);
        Ok(self.unary(
            Op::SliceCols {
                x: self.id,
                start,
                len,
            },
            out,
            [r, len],
            rg,
        ))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor, DiffError> {
        let [r, c] = self.shape;
        if start + len > r {
            return Err(DiffError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("{start}..{} out of {r} rows", start + len),
            });
        }
        let v = self.value();
        let out = v[start * c..(start + len) * c].to_vec();
        let rg = self.tape.node_requires_grad(self.id);
        Ok(self.unary(
            Op::SliceRows { x: self.id, start },
            out,
            [len, c],
            rg,
        ))
    }

    /// Output equals input; contributes exactly zero gradient upstream.
    pub fn stop_gradient(&self) -> Tensor {
        self.unary(Op::StopGradient(self.id), self.value(), self.shape, false)
    }

    /// Forward the quantized value `q`, pass the gradient unchanged to `self`.
    pub fn straight_through(&self, q: &[f64]) -> Tensor {
        assert_eq!(q.len(), self.len(), "straight_through value length");
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(Op::StraightThrough { x: self.id }, q.to_vec(), self.shape, rg)
    }

    /// Row lookup: `self` is a `[v, d]` table, output is `[indices.len(), d]`.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor, DiffError> {
        let [v, d] = self.shape;
        let mut out = Vec::with_capacity(indices.len() * d);
        let table = self.value();
        for &ix in indices {
            if ix >= v {
                return Err(DiffError::ShapeMismatch {
                    op: "gather_rows",
                    detail: format!("index {ix} out of {v} rows"),
                });
            }
            out.extend_from_slice(&table[ix * d..(ix + 1) * d]);
        }
        let rg = self.tape.node_requires_grad(self.id);
        Ok(self.unary(
            Op::Gather {
                table: self.id,
                indices: indices.to_vec(),
            },
            out,
            [indices.len(), d],
            rg,
        ))
    }

    pub fn softmax_rows(&self) -> Tensor {
        let [r, c] = self.shape;
        let v = self.value();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                out[i * c + j] /= z;
            }
        }
        let rg = self.tape.node_requires_grad(self.id);
        self.unary(Op::SoftmaxRows(self.id), out, [r, c], rg)
    }

    /// Per-row negative log-likelihood of `targets` under a softmax over the
    /// row logits. Output is `[1, rows]`.
    pub fn cross_entropy_rows(&self, targets: &[usize]) -> Result<Tensor, DiffError> {
        let [r, c] = self.shape;
        if targets.len() != r {
            return Err(DiffError::ShapeMismatch {
                op: "cross_entropy_rows",
                detail: format!("{} targets for {r} rows", targets.len()),
            });
        }
        let v = self.value();
        let mut out = vec![0.0; r];
        for i in 0..r {
            let t = targets[i];
            if t >= c {
                return Err(DiffError::ShapeMismatch {
                    op: "cross_entropy_rows",
                    detail: format!("target {t} out of {c} classes"),
                });
            }
            let row = &v[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            out[i] = lse - row[t];
        }
        let rg = self.tape.node_requires_grad(self.id);
        Ok(self.unary(
            Op::CrossEntropyRows {
                logits: self.id,
                targets: targets.to_vec(),
            },
            out,
            [1, r],
            rg,
        ))
    }

    /// Row-wise layer normalization with learned gain/bias of shape `[1, c]`.
    pub fn layer_norm_rows(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor, DiffError> {
        same_tape(self, gain);
        same_tape(self, bias);
        let [r, c] = self.shape;
        if gain.shape != [1, c] || bias.shape != [1, c] {
            return Err(DiffError::ShapeMismatch {
                op: "layer_norm_rows",
                detail: format!("gain {:?} bias {:?} for input {:?}", gain.shape, bias.shape, self.shape),
            });
        }
        let v = self.value();
        let g = gain.value();
        let b = bias.value();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let rg = self.tape.node_requires_grad(self.id)
            || self.tape.node_requires_grad(gain.id)
            || self.tape.node_requires_grad(bias.id);
        Ok(self.unary(
            Op::LayerNormRows {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                eps,
            },
            out,
            [r, c],
            rg,
        ))
    }

    /// Gram-Schmidt reconstruction of a rotation matrix from a 6D input
    /// `[1, 6]` (two column vectors). Output is row-major `[3, 3]`.
    pub fn rot6d_to_matrix(&self) -> Result<Tensor, DiffError> {
        if self.len() != 6 {
            return Err(DiffError::ShapeMismatch {
                op: "rot6d_to_matrix",
                detail: format!("expected 6 values, got {:?}", self.shape),
            });
        }
        let v = self.value();
        let m = rot6d_forward(&v).map_err(DiffError::DegenerateRotation)?;
        let rg = self.tape.node_requires_grad(self.id);
        Ok(self.unary(Op::Rot6dToMatrix(self.id), m.to_vec(), [3, 3], rg))
    }
}

/// Shared Gram-Schmidt forward used by the op and by plain kinematics code.
/// Input: `[a1; a2]` column-major. Output: row-major 3x3 with columns
/// `b1, b2, b1 x b2`.
pub(crate) fn rot6d_forward(r: &[f64]) -> Result<[f64; 9], String> {
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = norm3(&a1);
    if n1 < 1e-9 {
        return Err(format!("first column norm {n1:.3e} below tolerance"));
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let d = dot3(&b1, &a2);
    let u = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = norm3(&u);
    if n2 < 1e-9 {
        return Err(format!("columns are parallel (residual norm {n2:.3e})"));
    }
    let b2 = [u[0] / n2, u[1] / n2, u[2] / n2];
    let b3 = cross3(&b1, &b2);
    Ok([
        b1[0], b2[0], b3[0], //
        b1[1], b2[1], b3[1], //
        b1[2], b2[2], b3[2],
    ])
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn acc(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

/// Accumulate the vector-Jacobian product of node `id` into its inputs.
pub(crate) fn backward_step(nodes: &[Node], id: usize, grad: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let wants = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Bin { kind, a, b, bc } => {
            let [r, c] = node.shape;
            if wants(*a) {
                let ga = acc(grads, *a, nodes[*a].value.len());
                match kind {
                    BinKind::Add | BinKind::Sub => {
                        for (g, up) in ga.iter_mut().zip(grad) {
                            *g += up;
                        }
                    }
                    BinKind::Mul => {
                        let bv = &nodes[*b].value;
                        for i in 0..r {
                            for j in 0..c {
                                let bvv = match bc {
                                    Broadcast::Same => bv[i * c + j],
                                    Broadcast::Row => bv[j],
                                    Broadcast::Col => bv[i],
                                    Broadcast::Scalar => bv[0],
                                };
                                ga[i * c + j] += grad[i * c + j] * bvv;
                            }
                        }
                    }
                }
            }
            if wants(*b) {
                let sign = if *kind == BinKind::Sub { -1.0 } else { 1.0 };
                let av: Option<&Vec<f64>> = if *kind == BinKind::Mul {
                    Some(&nodes[*a].value)
                } else {
                    None
                };
                let gb = acc(grads, *b, nodes[*b].value.len());
                for i in 0..r {
                    for j in 0..c {
                        let up = grad[i * c + j];
                        let contrib = match av {
                            Some(a_val) => up * a_val[i * c + j],
                            None => up * sign,
                        };
                        let slot = match bc {
                            Broadcast::Same => i * c + j,
                            Broadcast::Row => j,
                            Broadcast::Col => i,
                            Broadcast::Scalar => 0,
                        };
                        gb[slot] += contrib;
                    }
                }
            }
        }
        Op::Neg(x) => {
            if wants(*x) {
                let gx = acc(grads, *x, grad.len());
                for (g, up) in gx.iter_mut().zip(grad) {
                    *g -= up;
                }
            }
        }
        Op::Abs(x) => {
            if wants(*x) {
                let xv = &nodes[*x].value;
                let gx = acc(grads, *x, grad.len());
                for i in 0..grad.len() {
                    let s = if xv[i] > 0.0 {
                        1.0
                    } else if xv[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    gx[i] += grad[i] * s;
                }
            }
        }
        Op::Powf { x, p } => {
            if wants(*x) {
                let xv = &nodes[*x].value;
                let gx = acc(grads, *x, grad.len());
                for i in 0..grad.len() {
                    gx[i] += grad[i] * p * xv[i].powf(p - 1.0);
                }
            }
        }
        Op::Act { x, kind } => {
            if wants(*x) {
                let y = &node.value;
                let gx = acc(grads, *x, grad.len());
                for i in 0..grad.len() {
                    gx[i] += grad[i] * kind.grad_from_output(y[i]);
                }
            }
        }
        Op::Sin(x) => {
            if wants(*x) {
                let xv = &nodes[*x].value;
                let gx = acc(grads, *x, grad.len());
                for i in 0..grad.len() {
                    gx[i] += grad[i] * xv[i].cos();
                }
            }
        }
        Op::Cos(x) => {
            if wants(*x) {
                let xv = &nodes[*x].value;
                let gx = acc(grads, *x, grad.len());
                for i in 0..grad.len() {
                    gx[i] -= grad[i] * xv[i].sin();
                }
            }
        }
        Op::Reshape(x) => {
            if wants(*x) {
                let gx = acc(grads, *x, grad.len());
                for (g, up) in gx.iter_mut().zip(grad) {
                    *g += up;
                }
            }
        }
        Op::MatMul { a, b } => {
            let [n, m] = node.shape;
            let k = nodes[*a].shape[1];
            if wants(*a) {
                let bv = &nodes[*b].value;
                let ga = acc(grads, *a, n * k);
                // dA = G @ B^T
                for i in 0..n {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += grad[i * m + j] * bv[p * m + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
            }
            if wants(*b) {
                let av = &nodes[*a].value;
                let gb = acc(grads, *b, k * m);
                // dB = A^T @ G
                for i in 0..n {
                    for p in 0..k {
                        let a_ip = av[i * k + p];
                        if a_ip == 0.0 {
                            continue;
                        }
                        let grow = &grad[i * m..(i + 1) * m];
                        let brow = &mut gb[p * m..(p + 1) * m];
                        for j in 0..m {
                            brow[j] += a_ip * grow[j];
                        }
                    }
                }
            }
        }
        Op::MatMulT { a, b } => {
            let [n, m] = node.shape;
            let k = nodes[*a].shape[1];
            if wants(*a) {
                let bv = &nodes[*b].value;
                let ga = acc(grads, *a, n * k);
                // dA = G @ B
                for i in 0..n {
                    for j in 0..m {
                        let g = grad[i * m + j];
                        if g == 0.0 {
                            continue;
                        }
                        let brow = &bv[j * k..(j + 1) * k];
                        let arow = &mut ga[i * k..(i + 1) * k];
                        for p in 0..k {
                            arow[p] += g * brow[p];
                        }
                    }
                }
            }
            if wants(*b) {
                let av = &nodes[*a].value;
                let gb = acc(grads, *b, m * k);
                // dB = G^T @ A
                for i in 0..n {
                    let arow = &av[i * k..(i + 1) * k];
                    for j in 0..m {
                        let g = grad[i * m + j];
                        if g == 0.0 {
                            continue;
                        }
                        let brow = &mut gb[j * k..(j + 1) * k];
                        for p in 0..k {
                            brow[p] += g * arow[p];
                        }
                    }
                }
            }
        }
        Op::ReduceMaxAxis0 { x, argmax } => {
            if wants(*x) {
                let c = node.shape[1];
                let gx = acc(grads, *x, nodes[*x].value.len());
                for j in 0..c {
                    gx[argmax[j] * c + j] += grad[j];
                }
            }
        }
        Op::ReduceMean(x) => {
            if wants(*x) {
                let n = nodes[*x].value.len();
                let gx = acc(grads, *x, n);
                let g = grad[0] / n as f64;
                for v in gx.iter_mut() {
                    *v += g;
                }
            }
        }
        Op::ReduceSum(x) => {
            if wants(*x) {
                let n = nodes[*x].value.len();
                let gx = acc(grads, *x, n);
                for v in gx.iter_mut() {
                    *v += grad[0];
                }
            }
        }
        Op::ConcatCols(parts) => {
            let [rows, cols] = node.shape;
            let mut col0 = 0;
            for &p in parts {
                let pc = nodes[p].shape[1];
                if wants(p) {
                    let gp = acc(grads, p, rows * pc);
                    for i in 0..rows {
                        for j in 0..pc {
                            gp[i * pc + j] += grad[i * cols + col0 + j];
                        }
                    }
                }
                col0 += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                if wants(p) {
                    let gp = acc(grads, p, len);
                    for (g, up) in gp.iter_mut().zip(&grad[off..off + len]) {
                        *g += up;
                    }
                }
                off += len;
            }
        }
        Op::SliceCols { x, start, len } => {
            if wants(*x) {
                let [r, l] = node.shape;
                debug_assert_eq!(l, *len);
                let c = nodes[*x].shape[1];
                let gx = acc(grads, *x, nodes[*x].value.len());
                for i in 0..r {
                    for j in 0..*len {
                        gx[i * c + start + j] += grad[i * len + j];
                    }
                }
            }
        }
        Op::SliceRows { x, start, .. } => {
            if wants(*x) {
                let c = node.shape[1];
                let gx = acc(grads, *x, nodes[*x].value.len());
                for (off, up) in grad.iter().enumerate() {
                    gx[start * c + off] += up;
                }
            }
        }
        Op::StopGradient(_) => {}
        Op::StraightThrough { x } => {
            if wants(*x) {
                let gx = acc(grads, *x, grad.len());
                for (g, up) in gx.iter_mut().zip(grad) {
                    *g += up;
                }
            }
        }
        Op::Gather { table, indices } => {
            if wants(*table) {
                let d = node.shape[1];
                let gt = acc(grads, *table, nodes[*table].value.len());
                for (row, &ix) in indices.iter().enumerate() {
                    for j in 0..d {
                        gt[ix * d + j] += grad[row * d + j];
                    }
                }
            }
        }
        Op::SoftmaxRows(x) => {
            if wants(*x) {
                let [r, c] = node.shape;
                let y = &node.value;
                let gx = acc(grads, *x, r * c);
                for i in 0..r {
                    let yrow = &y[i * c..(i + 1) * c];
                    let grow = &grad[i * c..(i + 1) * c];
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[i * c + j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
        }
        Op::CrossEntropyRows { logits, targets } => {
            if wants(*logits) {
                let v = &nodes[*logits].value;
                let [r, c] = nodes[*logits].shape;
                let gx = acc(grads, *logits, r * c);
                for i in 0..r {
                    let row = &v[i * c..(i + 1) * c];
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
                    let up = grad[i];
                    for j in 0..c {
                        let p = (row[j] - mx).exp() / z;
                        let ind = if j == targets[i] { 1.0 } else { 0.0 };
                        gx[i * c + j] += up * (p - ind);
                    }
                }
            }
        }
        Op::LayerNormRows { x, gain, bias, eps } => {
            let [r, c] = node.shape;
            let xv = &nodes[*x].value;
            let gv = &nodes[*gain].value;
            for i in 0..r {
                let row = &xv[i * c..(i + 1) * c];
                let grow = &grad[i * c..(i + 1) * c];
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + eps).sqrt();
                if wants(*gain) {
                    let gg = acc(grads, *gain, c);
                    for j in 0..c {
                        gg[j] += grow[j] * (row[j] - mean) * inv;
                    }
                }
                if wants(*bias) {
                    let gb = acc(grads, *bias, c);
                    for j in 0..c {
                        gb[j] += grow[j];
                    }
                }
                if wants(*x) {
                    // dxhat = g * gain; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                    let mut dxhat = vec![0.0; c];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..c {
                        let xh = (row[j] - mean) * inv;
                        dxhat[j] = grow[j] * gv[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xh;
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    let gx = acc(grads, *x, r * c);
                    for j in 0..c {
                        let xh = (row[j] - mean) * inv;
                        gx[i * c + j] += inv * (dxhat[j] - m1 - xh * m2);
                    }
                }
            }
        }
        Op::Rot6dToMatrix(x) => {
            if wants(*x) {
                let r6 = &nodes[*x].value;
                let gm = grad; // row-major 3x3
                let gx = acc(grads, *x, 6);
                let contrib = rot6d_backward(r6, gm);
                for i in 0..6 {
                    gx[i] += contrib[i];
                }
            }
        }
    }
}

/// Hand-derived VJP for the Gram-Schmidt 6D-to-matrix construction.
fn rot6d_backward(r: &[f64], gm: &[f64]) -> [f64; 6] {
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = norm3(&a1);
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let d = dot3(&b1, &a2);
    let u = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = norm3(&u);
    let b2 = [u[0] / n2, u[1] / n2, u[2] / n2];

    // Upstream gradients on the three output columns (gm is row-major).
    let g1 = [gm[0], gm[3], gm[6]];
    let g2 = [gm[1], gm[4], gm[7]];
    let g3 = [gm[2], gm[5], gm[8]];

    // b3 = b1 x b2: <g3, db1 x b2> = <db1, b2 x g3>, <g3, b1 x db2> = <db2, g3 x b1>
    let mut gb1 = [
        g1[0] + b2[1] * g3[2] - b2[2] * g3[1],
        g1[1] + b2[2] * g3[0] - b2[0] * g3[2],
        g1[2] + b2[0] * g3[1] - b2[1] * g3[0],
    ];
    let gb2 = [
        g2[0] + g3[1] * b1[2] - g3[2] * b1[1],
        g2[1] + g3[2] * b1[0] - g3[0] * b1[2],
        g2[2] + g3[0] * b1[1] - g3[1] * b1[0],
    ];

    // b2 = u / n2
    let dotg = dot3(&gb2, &b2);
    let gu = [
        (gb2[0] - dotg * b2[0]) / n2,
        (gb2[1] - dotg * b2[1]) / n2,
        (gb2[2] - dotg * b2[2]) / n2,
    ];

    // u = a2 - (b1 . a2) b1
    let gu_b1 = dot3(&gu, &b1);
    let ga2 = [
        gu[0] - gu_b1 * b1[0],
        gu[1] - gu_b1 * b1[1],
        gu[2] - gu_b1 * b1[2],
    ];
    // du/db1 contribution: -(gu . b1) a2 - (b1 . a2) gu
    gb1[0] += -gu_b1 * a2[0] - d * gu[0];
    gb1[1] += -gu_b1 * a2[1] - d * gu[1];
    gb1[2] += -gu_b1 * a2[2] - d * gu[2];

    // b1 = a1 / n1
    let dotg1 = dot3(&gb1, &b1);
    let ga1 = [
        (gb1[0] - dotg1 * b1[0]) / n1,
        (gb1[1] - dotg1 * b1[1]) / n1,
        (gb1[2] - dotg1 * b1[2]) / n1,
    ];

    [ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]]
}
