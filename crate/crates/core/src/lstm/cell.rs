use crate::error::{Error, Result};
use crate::init::{init_orthogonal, init_uniform};
use crate::matrix::Matrix;
use crate::rng::derive_seed;
use crate::tape::{Tape, Var};

/// Bound for the input-to-state weights at initialization.
pub const INPUT_WEIGHT_BOUND: f64 = 0.01;

/// Initial forget-gate bias.
pub const FORGET_BIAS: f64 = 1.0;

/// Parameter names in storage order.
pub const LSTM_PARAM_NAMES: [&str; 12] = [
    "w_fh", "w_fx", "w_ih", "w_ix", "w_oh", "w_ox", "w_ch", "w_cx", "b_f", "b_i", "b_o", "b_c",
];

/// Weights and biases of one LSTM layer with forget gates.
///
/// `w_*h` are `hidden × hidden` (state to state), `w_*x` are
/// `hidden × input`, biases are `hidden × 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerParams {
    pub w_fh: Matrix,
    pub w_fx: Matrix,
    pub w_ih: Matrix,
    pub w_ix: Matrix,
    pub w_oh: Matrix,
    pub w_ox: Matrix,
    pub w_ch: Matrix,
    pub w_cx: Matrix,
    pub b_f: Matrix,
    pub b_i: Matrix,
    pub b_o: Matrix,
    pub b_c: Matrix,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let hh = || Matrix::zeros(hidden, hidden);
        let hx = || Matrix::zeros(hidden, input);
        let b = || Matrix::zeros(hidden, 1);
        LstmLayerParams {
            w_fh: hh(),
            w_fx: hx(),
            w_ih: hh(),
            w_ix: hx(),
            w_oh: hh(),
            w_ox: hx(),
            w_ch: hh(),
            w_cx: hx(),
            b_f: b(),
            b_i: b(),
            b_o: b(),
            b_c: b(),
        }
    }

    /// State-to-state matrices orthogonal, input matrices uniform in
    /// `[-0.01, 0.01]`, forget bias 1, other biases 0.
    pub fn init(input: usize, hidden: usize, seed: u64) -> Self {
        let s = |k: u64| derive_seed(seed, k);
        let unif = |k: u64| {
            init_uniform(hidden, input, INPUT_WEIGHT_BOUND, s(k)).expect("positive bound")
        };
        LstmLayerParams {
            w_fh: init_orthogonal(hidden, hidden, s(0)),
            w_fx: unif(1),
            w_ih: init_orthogonal(hidden, hidden, s(2)),
            w_ix: unif(3),
            w_oh: init_orthogonal(hidden, hidden, s(4)),
            w_ox: unif(5),
            w_ch: init_orthogonal(hidden, hidden, s(6)),
            w_cx: unif(7),
            b_f: Matrix::filled(hidden, 1, FORGET_BIAS),
            b_i: Matrix::zeros(hidden, 1),
            b_o: Matrix::zeros(hidden, 1),
            b_c: Matrix::zeros(hidden, 1),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_fx.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_fh.rows()
    }

    pub fn tensors(&self) -> [&Matrix; 12] {
        [
            &self.w_fh, &self.w_fx, &self.w_ih, &self.w_ix, &self.w_oh, &self.w_ox, &self.w_ch,
            &self.w_cx, &self.b_f, &self.b_i, &self.b_o, &self.b_c,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.w_fh,
            &mut self.w_fx,
            &mut self.w_ih,
            &mut self.w_ix,
            &mut self.w_oh,
            &mut self.w_ox,
            &mut self.w_ch,
            &mut self.w_cx,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }

    /// Expected shape of each tensor, in storage order.
    pub fn expected_shapes(input: usize, hidden: usize) -> [(usize, usize); 12] {
        let hh = (hidden, hidden);
        let hx = (hidden, input);
        let b = (hidden, 1);
        [hh, hx, hh, hx, hh, hx, hh, hx, b, b, b, b]
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BoundLstmLayer {
        BoundLstmLayer {
            vars: self.tensors().map(|m| tape.param(m)),
        }
    }
}

/// Tape handles for one layer's parameters, in [`LSTM_PARAM_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct BoundLstmLayer {
    pub vars: [Var; 12],
}

/// Nodes produced by one cell evaluation.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub h: Var,
    pub c: Var,
    pub forget: Var,
    pub input: Var,
    pub output: Var,
    pub candidate: Var,
}

fn affine(tape: &mut Tape<'_>, wh: Var, h: Var, wx: Var, x: Var, b: Var) -> Result<Var> {
    let a = tape.matmul(wh, h)?;
    let c = tape.matmul(wx, x)?;
    let s = tape.add(a, c)?;
    tape.add(s, b)
}

/// One step of the forget-gate LSTM:
///
/// ```text
/// f = σ(W_fh h + W_fx x + b_f)      i = σ(W_ih h + W_ix x + b_i)
/// o = σ(W_oh h + W_ox x + b_o)      c̃ = tanh(W_ch h + W_cx x + b_c)
/// c' = f ⊙ c + i ⊙ c̃                h' = o ⊙ tanh(c')
/// ```
pub fn lstm_cell_on_tape(
    tape: &mut Tape<'_>,
    layer: &BoundLstmLayer,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<CellVars> {
    let [w_fh, w_fx, w_ih, w_ix, w_oh, w_ox, w_ch, w_cx, b_f, b_i, b_o, b_c] = layer.vars;
    let (hidden, input) = tape.shape(w_fx);
    if tape.shape(x) != (input, 1) {
        return Err(Error::ShapeMismatch {
            op: "lstm_cell input",
            left: tape.shape(x),
            right: (input, 1),
        });
    }
    for v in [h_prev, c_prev] {
        if tape.shape(v) != (hidden, 1) {
            return Err(Error::ShapeMismatch {
                op: "lstm_cell state",
                left: tape.shape(v),
                right: (hidden, 1),
            });
        }
    }
    let f_pre = affine(tape, w_fh, h_prev, w_fx, x, b_f)?;
    let forget = tape.sigmoid(f_pre);
    let i_pre = affine(tape, w_ih, h_prev, w_ix, x, b_i)?;
    let input_gate = tape.sigmoid(i_pre);
    let o_pre = affine(tape, w_oh, h_prev, w_ox, x, b_o)?;
    let output = tape.sigmoid(o_pre);
    let c_pre = affine(tape, w_ch, h_prev, w_cx, x, b_c)?;
    let candidate = tape.tanh(c_pre);
    let keep = tape.hadamard(forget, c_prev)?;
    let write = tape.hadamard(input_gate, candidate)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.hadamard(output, tc)?;
    Ok(CellVars {
        h,
        c,
        forget,
        input: input_gate,
        output,
        candidate,
    })
}

/// Values of one cell evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct CellOutput {
    pub h: Matrix,
    pub c: Matrix,
    pub forget: Matrix,
    pub input: Matrix,
    pub output: Matrix,
    pub candidate: Matrix,
}

/// Evaluates one LSTM step outside of any training context.
pub fn lstm_cell(
    x: &Matrix,
    h_prev: &Matrix,
    c_prev: &Matrix,
    params: &LstmLayerParams,
) -> Result<CellOutput> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let cv = tape.constant(c_prev.clone());
    let out = lstm_cell_on_tape(&mut tape, &bound, xv, hv, cv)?;
    Ok(CellOutput {
        h: tape.value(out.h).clone(),
        c: tape.value(out.c).clone(),
        forget: tape.value(out.forget).clone(),
        input: tape.value(out.input).clone(),
        output: tape.value(out.output).clone(),
        candidate: tape.value(out.candidate).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradient_check;

    #[test]
    fn zero_parameters_give_zero_state() {
        let p = LstmLayerParams::zeros(2, 3);
        let out = lstm_cell(
            &Matrix::column(&[0.7, -1.2]),
            &Matrix::zeros(3, 1),
            &Matrix::zeros(3, 1),
            &p,
        )
        .unwrap();
        assert_eq!(out.h, Matrix::zeros(3, 1));
        assert_eq!(out.c, Matrix::zeros(3, 1));
        assert_eq!(out.forget, Matrix::filled(3, 1, 0.5));
        assert_eq!(out.candidate, Matrix::zeros(3, 1));
    }

    #[test]
    fn forget_bias_one_scalar_case() {
        // f = σ(1), i = o = 0.5, c̃ = 0: c = σ(1)·2, h = 0.5·tanh(c)
        let mut p = LstmLayerParams::zeros(1, 1);
        p.b_f = Matrix::filled(1, 1, 1.0);
        let out = lstm_cell(
            &Matrix::column(&[3.0]),
            &Matrix::zeros(1, 1),
            &Matrix::column(&[2.0]),
            &p,
        )
        .unwrap();
        let sig1 = 1.0 / (1.0 + (-1.0f64).exp());
        let c = sig1 * 2.0;
        assert!((out.c[(0, 0)] - c).abs() < 1e-15);
        assert!((out.c[(0, 0)] - 1.4621).abs() < 1e-4);
        assert!((out.h[(0, 0)] - 0.5 * c.tanh()).abs() < 1e-15);
        assert!((out.h[(0, 0)] - 0.449_031_505_730_448).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let p = LstmLayerParams::zeros(2, 3);
        let r = lstm_cell(
            &Matrix::column(&[1.0]),
            &Matrix::zeros(3, 1),
            &Matrix::zeros(3, 1),
            &p,
        );
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
        let r = lstm_cell(
            &Matrix::column(&[1.0, 2.0]),
            &Matrix::zeros(2, 1),
            &Matrix::zeros(3, 1),
            &p,
        );
        assert!(r.is_err());
    }

    #[test]
    fn init_contract() {
        let p = LstmLayerParams::init(2, 4, 17);
        assert_eq!(p.b_f, Matrix::filled(4, 1, 1.0));
        for b in [&p.b_i, &p.b_o, &p.b_c] {
            assert_eq!(*b, Matrix::zeros(4, 1));
        }
        for w in [&p.w_fx, &p.w_ix, &p.w_ox, &p.w_cx] {
            assert!(w.max_abs() <= INPUT_WEIGHT_BOUND);
        }
        for w in [&p.w_fh, &p.w_ih, &p.w_oh, &p.w_ch] {
            let g = w.transpose().matmul(w).unwrap();
            assert!(g.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn cell_gradient_matches_finite_differences() {
        let base = LstmLayerParams::init(2, 3, 5);
        // Move away from the near-linear init regime.
        let mut rng = crate::rng::SeededRng::new(99);
        let mut params: Vec<Matrix> = base
            .tensors()
            .iter()
            .map(|m| m.map(|v| v + rng.uniform_range(-0.5, 0.5)))
            .collect();
        params.push(Matrix::column(&[0.4, -0.9]));
        params.push(Matrix::column(&[0.1, -0.2, 0.3]));
        params.push(Matrix::column(&[0.5, 0.0, -0.5]));
        let report = gradient_check(
            |tape, v| {
                let layer = BoundLstmLayer {
                    vars: v[..12].try_into().unwrap(),
                };
                let out = lstm_cell_on_tape(tape, &layer, v[12], v[13], v[14])?;
                Ok(tape.sum(out.h))
            },
            &params,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }
}
