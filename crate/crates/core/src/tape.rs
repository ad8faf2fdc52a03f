//! Reverse-mode differentiation over matrix-valued primitives.
//!
//! A [`Tape`] records every primitive in creation order. Leaves are either
//! owned constants or borrowed parameters, so binding a large network to a
//! tape does not copy its weights. [`Tape::backward`] replays the record in
//! reverse, visiting each node once.
//!
//! ```
//! use lstmkf::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.constant(Matrix::column(&[1.0, 2.0]));
//! let sq = tape.hadamard(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(&tape, x), Matrix::column(&[2.0, 4.0]));
//! ```

use crate::error::{Error, Result};
use crate::matrix::{Ldlt, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise primitives, unary and binary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Exp,
    Relu,
    Hadamard,
    Add,
    Sub,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Relu(Var),
    Scale(Var, f64),
    Transpose(Var),
    Sum(Var),
    /// column vector -> diagonal matrix
    Diag(Var),
    /// square matrix -> column of its diagonal
    DiagPart(Var),
    Clamp(Var, f64, f64),
    Symmetrize(Var),
    SolveSpd {
        m: Var,
        rhs: Var,
        chol: Ldlt,
    },
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Hadamard(a, b) => [Some(a), Some(b)],
            SolveSpd { m, rhs, .. } => [Some(m), Some(rhs)],
            Sigmoid(a) | Tanh(a) | Exp(a) | Relu(a) | Scale(a, _) | Transpose(a) | Sum(a)
            | Diag(a) | DiagPart(a) | Clamp(a, _, _) | Symmetrize(a) => [Some(a), None],
        }
    }
}

#[derive(Debug)]
enum Value<'p> {
    Owned(Matrix),
    Borrowed(&'p Matrix),
}

#[derive(Debug)]
struct Node<'p> {
    op: Op,
    value: Value<'p>,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients produced by a backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like its value when `v` does not
    /// influence the differentiated output.
    pub fn wrt(&self, tape: &Tape<'_>, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf. Gradients are still computed for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Borrowed leaf, typically a network weight.
    pub fn param(&mut self, value: &'p Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Value::Borrowed(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), out))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(Op::Scale(a, s), out)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out)
    }

    /// Sum of all entries, as a 1×1 matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    /// Diagonal matrix from a column vector.
    pub fn diag(&mut self, v: Var) -> Result<Var> {
        let val = self.value(v);
        if val.cols() != 1 {
            return Err(Error::ShapeMismatch {
                op: "diag",
                left: val.shape(),
                right: (val.rows(), 1),
            });
        }
        let out = Matrix::from_diag(val.as_slice());
        Ok(self.push(Op::Diag(v), out))
    }

    /// Column vector holding the diagonal of a square matrix.
    pub fn diag_part(&mut self, m: Var) -> Result<Var> {
        let val = self.value(m);
        if !val.is_square() {
            return Err(Error::ShapeMismatch {
                op: "diag_part",
                left: val.shape(),
                right: (val.cols(), val.rows()),
            });
        }
        let out = Matrix::column(&val.diagonal());
        Ok(self.push(Op::DiagPart(m), out))
    }

    /// Clamps entries to `[lo, hi]`; the gradient is cut outside the range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), out)
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrize(&mut self, m: Var) -> Result<Var> {
        let val = self.value(m);
        if !val.is_square() {
            return Err(Error::ShapeMismatch {
                op: "symmetrize",
                left: val.shape(),
                right: (val.cols(), val.rows()),
            });
        }
        let out = val.symmetrize();
        Ok(self.push(Op::Symmetrize(m), out))
    }

    /// Solves `S·X = rhs` where `S` is the symmetric part of `m`.
    pub fn solve_spd(&mut self, m: Var, rhs: Var) -> Result<Var> {
        let mv = self.value(m);
        let rv = self.value(rhs);
        if !mv.is_square() || mv.rows() != rv.rows() {
            return Err(Error::ShapeMismatch {
                op: "solve_spd",
                left: mv.shape(),
                right: rv.shape(),
            });
        }
        let chol = mv.ldlt()?;
        let out = chol.solve(rv);
        Ok(self.push(Op::SolveSpd { m, rhs, chol }, out))
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Sigmoid | Elementwise::Tanh | Elementwise::Exp | Elementwise::Relu => 1,
            _ => 2,
        };
        if args.len() != arity {
            return Err(Error::invalid(format!(
                "{op:?} takes {arity} argument(s), got {}",
                args.len()
            )));
        }
        Ok(match op {
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Exp => self.exp(args[0]),
            Elementwise::Relu => self.relu(args[0]),
            Elementwise::Hadamard => self.hadamard(args[0], args[1])?,
            Elementwise::Add => self.add(args[0], args[1])?,
            Elementwise::Sub => self.sub(args[0], args[1])?,
        })
    }

    /// `sum(a ⊙ a)`.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let sq = self
            .hadamard(a, a)
            .expect("hadamard of a node with itself cannot mismatch");
        self.sum(sq)
    }

    /// Local vector-Jacobian product of node `idx`.
    fn backprop(&self, idx: usize, g: &Matrix, mut emit: impl FnMut(Var, Matrix)) {
        let node = &self.nodes[idx];
        let y = match &node.value {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                emit(*a, g.matmul(&bv.transpose()).expect("shapes checked on forward"));
                emit(*b, av.transpose().matmul(g).expect("shapes checked on forward"));
            }
            Op::Add(a, b) => {
                emit(*a, g.clone());
                emit(*b, g.clone());
            }
            Op::Sub(a, b) => {
                emit(*a, g.clone());
                emit(*b, g.scale(-1.0));
            }
            Op::Hadamard(a, b) => {
                let ga = g.hadamard(self.value(*b)).expect("same shape");
                let gb = g.hadamard(self.value(*a)).expect("same shape");
                emit(*a, ga);
                emit(*b, gb);
            }
            Op::Sigmoid(a) => {
                emit(*a, g.zip_map(y, "sigmoid'", |g, s| g * s * (1.0 - s)).expect("same shape"));
            }
            Op::Tanh(a) => {
                emit(*a, g.zip_map(y, "tanh'", |g, t| g * (1.0 - t * t)).expect("same shape"));
            }
            Op::Exp(a) => emit(*a, g.hadamard(y).expect("same shape")),
            Op::Relu(a) => {
                let x = self.value(*a);
                emit(
                    *a,
                    g.zip_map(x, "relu'", |g, x| if x > 0.0 { g } else { 0.0 })
                        .expect("same shape"),
                );
            }
            Op::Scale(a, s) => emit(*a, g.scale(*s)),
            Op::Transpose(a) => emit(*a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                emit(*a, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::Diag(v) => emit(*v, Matrix::column(&g.diagonal())),
            Op::DiagPart(m) => emit(*m, Matrix::from_diag(g.as_slice())),
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                emit(
                    *a,
                    g.zip_map(x, "clamp'", |g, x| if x >= *lo && x <= *hi { g } else { 0.0 })
                        .expect("same shape"),
                );
            }
            Op::Symmetrize(a) => emit(*a, g.symmetrize()),
            Op::SolveSpd { m, rhs, chol } => {
                // X = S⁻¹B:  dB = S⁻¹G,  dS = -dB·Xᵀ, folded back onto m through the
                // symmetric part.
                let g_rhs = chol.solve(g);
                let g_s = g_rhs.matmul(&y.transpose()).expect("shapes checked").scale(-1.0);
                emit(*m, g_s.symmetrize());
                emit(*rhs, g_rhs);
            }
        }
    }

    /// Reverse sweep from `output` seeded with `seed`.
    pub fn backward_with(&self, output: Var, seed: Matrix) -> Result<Gradients> {
        if seed.shape() != self.shape(output) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: self.shape(output),
                right: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let is_leaf = matches!(self.nodes[idx].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop(idx, &g, |v, contrib| accumulate(&mut grads[v.0], contrib));
        }
        Ok(Gradients { grads })
    }

    /// Gradient of a scalar (1×1) node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: self.shape(loss),
                right: (1, 1),
            });
        }
        let value = self.value(loss)[(0, 0)];
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "loss".into(),
                index: 0,
            });
        }
        self.backward_with(loss, Matrix::filled(1, 1, 1.0))
    }

    /// Jacobian of the column vector `output` with respect to the column
    /// vector `input`, holding every other node fixed.
    ///
    /// Runs one reverse sweep per output component over the nodes recorded
    /// between `input` and `output`.
    pub fn jacobian(&self, output: Var, input: Var) -> Result<Matrix> {
        let (m, oc) = self.shape(output);
        let (n, ic) = self.shape(input);
        if oc != 1 || ic != 1 {
            return Err(Error::ShapeMismatch {
                op: "jacobian",
                left: (m, oc),
                right: (n, ic),
            });
        }
        if output.0 < input.0 {
            return Ok(Matrix::zeros(m, n));
        }
        let base = input.0;
        let span = output.0 - base + 1;
        let mut depends = vec![false; span];
        depends[0] = true;
        for off in 1..span {
            depends[off] = self.nodes[base + off]
                .op
                .inputs()
                .iter()
                .flatten()
                .any(|v| v.0 >= base && depends[v.0 - base]);
        }
        let mut jac = Matrix::zeros(m, n);
        if !depends[span - 1] {
            return Ok(jac);
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(span);
        for k in 0..m {
            grads.clear();
            grads.resize_with(span, || None);
            let mut seed = Matrix::zeros(m, 1);
            seed[(k, 0)] = 1.0;
            grads[span - 1] = Some(seed);
            for off in (1..span).rev() {
                if !depends[off] {
                    continue;
                }
                let Some(g) = grads[off].take() else {
                    continue;
                };
                self.backprop(base + off, &g, |v, contrib| {
                    if v.0 >= base && depends[v.0 - base] {
                        accumulate(&mut grads[v.0 - base], contrib);
                    }
                });
            }
            if let Some(g) = &grads[0] {
                for j in 0..n {
                    jac[(k, j)] = g[(j, 0)];
                }
            }
        }
        Ok(jac)
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_backward_matches_formula() {
        let mut tape = Tape::new();
        let a = tape.constant(Matrix::from_rows(&[&[1.0, 2.0]]));
        let b = tape.constant(Matrix::column(&[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &Matrix::from_rows(&[&[11.0]]));
        let g = tape.backward(c).unwrap();
        assert_eq!(g.wrt(&tape, a), Matrix::from_rows(&[&[3.0, 4.0]]));
        assert_eq!(g.wrt(&tape, b), Matrix::column(&[1.0, 2.0]));
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Matrix::column(&[0.0]));
        let s = tape.elementwise(Elementwise::Sigmoid, &[z]).unwrap();
        let t = tape.elementwise(Elementwise::Tanh, &[z]).unwrap();
        assert_eq!(tape.value(s)[(0, 0)], 0.5);
        assert_eq!(tape.value(t)[(0, 0)], 0.0);
        let a = tape.constant(Matrix::column(&[1.0, 2.0]));
        let b = tape.constant(Matrix::column(&[3.0, 4.0]));
        let h = tape.elementwise(Elementwise::Hadamard, &[a, b]).unwrap();
        assert_eq!(tape.value(h), &Matrix::column(&[3.0, 8.0]));
    }

    #[test]
    fn elementwise_shape_and_arity_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Matrix::column(&[1.0, 2.0]));
        let b = tape.constant(Matrix::column(&[1.0, 2.0, 3.0]));
        assert!(matches!(
            tape.elementwise(Elementwise::Add, &[a, b]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(tape.elementwise(Elementwise::Tanh, &[a, b]).is_err());
    }

    #[test]
    fn reused_node_accumulates() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[3.0]));
        let y = tape.add(x, x).unwrap();
        let z = tape.hadamard(y, x).unwrap(); // 2x²
        let l = tape.sum(z);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(&tape, x)[(0, 0)], 12.0);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[1.0, 1.0]));
        let unused = tape.constant(Matrix::zeros(2, 2));
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(&tape, unused), Matrix::zeros(2, 2));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[1.0, 1.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn jacobian_of_linear_map_is_the_matrix() {
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let mut tape = Tape::new();
        let wv = tape.param(&w);
        let x = tape.constant(Matrix::column(&[0.3, -0.7]));
        let y = tape.matmul(wv, x).unwrap();
        assert_eq!(tape.jacobian(y, x).unwrap(), w);
    }

    #[test]
    fn jacobian_holds_earlier_nodes_fixed() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(&[2.0]));
        let h = tape.tanh(x); // earlier state derived from x
        let input = tape.scale(x, 1.0);
        let y = tape.hadamard(h, input).unwrap();
        // y = tanh(x_fixed) * input, so dy/dinput = tanh(2)
        let j = tape.jacobian(y, input).unwrap();
        assert!((j[(0, 0)] - 2f64.tanh()).abs() < 1e-15);
    }
}
