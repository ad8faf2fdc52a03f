use serde::{Deserialize, Serialize};

use super::cell::{lstm_cell_on_tape, BoundLstmLayer, LstmLayerParams, LSTM_PARAM_NAMES};
use crate::error::{Error, Result};
use crate::init::init_xavier;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, SeededRng};
use crate::tape::{Tape, Var};

/// Fully connected layer `y = W x + b`, optionally rectified.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub relu: bool,
}

impl LinearLayer {
    pub fn zeros(input: usize, output: usize, relu: bool) -> Self {
        LinearLayer {
            weight: Matrix::zeros(output, input),
            bias: Matrix::zeros(output, 1),
            relu,
        }
    }

    /// Xavier weights, zero bias.
    pub fn init(input: usize, output: usize, relu: bool, seed: u64) -> Self {
        LinearLayer {
            weight: init_xavier(output, input, seed),
            bias: Matrix::zeros(output, 1),
            relu,
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub output: usize,
    pub relu: bool,
}

/// Architecture of a [`NetModule`]; enough to rebuild it from a weight
/// container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub input: usize,
    pub lstm_hidden: Vec<usize>,
    /// dropout keep probability after each LSTM layer (1.0 disables)
    pub keep_prob: Vec<f64>,
    pub heads: Vec<HeadSpec>,
}

impl ModuleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(Error::invalid("module input size must be positive"));
        }
        if self.lstm_hidden.len() != self.keep_prob.len() {
            return Err(Error::invalid("one keep probability per LSTM layer"));
        }
        if self.lstm_hidden.contains(&0) || self.heads.iter().any(|h| h.output == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.keep_prob.iter().any(|&k| !(k > 0.0 && k <= 1.0)) {
            return Err(Error::invalid("keep probability must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn output(&self) -> usize {
        self.heads
            .last()
            .map(|h| h.output)
            .or_else(|| self.lstm_hidden.last().copied())
            .unwrap_or(self.input)
    }
}

/// A stack of LSTM layers followed by fully connected layers.
#[derive(Clone, Debug, PartialEq)]
pub struct NetModule {
    pub lstm: Vec<LstmLayerParams>,
    pub keep_prob: Vec<f64>,
    pub heads: Vec<LinearLayer>,
}

/// Recurrent state of one LSTM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub h: Matrix,
    pub c: Matrix,
}

/// Recurrent state of every LSTM layer in a module.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub layers: Vec<LayerState>,
}

impl LstmState {
    pub fn on_tape(&self, tape: &mut Tape<'_>) -> StateVars {
        StateVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.constant(l.h.clone()), tape.constant(l.c.clone())))
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.h.max_abs() == 0.0 && l.c.max_abs() == 0.0)
    }
}

/// Tape handles for an [`LstmState`]: `(h, c)` per layer.
#[derive(Clone, Debug)]
pub struct StateVars {
    pub layers: Vec<(Var, Var)>,
}

impl StateVars {
    pub fn values(&self, tape: &Tape<'_>) -> LstmState {
        LstmState {
            layers: self
                .layers
                .iter()
                .map(|(h, c)| LayerState {
                    h: tape.value(*h).clone(),
                    c: tape.value(*c).clone(),
                })
                .collect(),
        }
    }
}

/// Tape handles for a module's parameters.
#[derive(Clone, Debug)]
pub struct BoundModule {
    pub lstm: Vec<BoundLstmLayer>,
    pub heads: Vec<(Var, Var)>,
}

impl BoundModule {
    /// Parameter handles in [`NetModule::params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.lstm.iter().flat_map(|l| l.vars).collect();
        for (w, b) in &self.heads {
            out.push(*w);
            out.push(*b);
        }
        out
    }

    /// Inverse of [`BoundModule::vars`] for a module shaped like `module`.
    pub fn from_vars(module: &NetModule, vars: &[Var]) -> Result<Self> {
        let need = module.lstm.len() * 12 + module.heads.len() * 2;
        if vars.len() != need {
            return Err(Error::invalid(format!(
                "module needs {need} parameter handles, got {}",
                vars.len()
            )));
        }
        let (l, h) = vars.split_at(module.lstm.len() * 12);
        Ok(BoundModule {
            lstm: l
                .chunks(12)
                .map(|c| BoundLstmLayer {
                    vars: c.try_into().expect("chunk of 12"),
                })
                .collect(),
            heads: h.chunks(2).map(|c| (c[0], c[1])).collect(),
        })
    }
}

/// Whether dropout masks are sampled.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut SeededRng),
}

/// Nodes produced by one module step.
#[derive(Clone, Debug)]
pub struct ModuleStep {
    pub output: Var,
    pub state: StateVars,
    /// gate activations `(f, i, o)` per LSTM layer
    pub gates: Vec<(Var, Var, Var)>,
}

impl NetModule {
    /// Fresh module with the standard initialization.
    pub fn new(spec: &ModuleSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut lstm = Vec::with_capacity(spec.lstm_hidden.len());
        let mut width = spec.input;
        for (k, &h) in spec.lstm_hidden.iter().enumerate() {
            lstm.push(LstmLayerParams::init(width, h, derive_seed(seed, k as u64)));
            width = h;
        }
        let mut heads = Vec::with_capacity(spec.heads.len());
        for (k, hs) in spec.heads.iter().enumerate() {
            heads.push(LinearLayer::init(
                width,
                hs.output,
                hs.relu,
                derive_seed(seed, 1000 + k as u64),
            ));
            width = hs.output;
        }
        Ok(NetModule {
            lstm,
            keep_prob: spec.keep_prob.clone(),
            heads,
        })
    }

    /// Module with every parameter zero.
    pub fn zeros(spec: &ModuleSpec) -> Result<Self> {
        spec.validate()?;
        let mut lstm = Vec::new();
        let mut width = spec.input;
        for &h in &spec.lstm_hidden {
            lstm.push(LstmLayerParams::zeros(width, h));
            width = h;
        }
        let mut heads = Vec::new();
        for hs in &spec.heads {
            heads.push(LinearLayer::zeros(width, hs.output, hs.relu));
            width = hs.output;
        }
        Ok(NetModule {
            lstm,
            keep_prob: spec.keep_prob.clone(),
            heads,
        })
    }

    pub fn spec(&self) -> ModuleSpec {
        ModuleSpec {
            input: self.input_dim(),
            lstm_hidden: self.lstm.iter().map(|l| l.hidden_size()).collect(),
            keep_prob: self.keep_prob.clone(),
            heads: self
                .heads
                .iter()
                .map(|h| HeadSpec {
                    output: h.output_size(),
                    relu: h.relu,
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lstm
            .first()
            .map(|l| l.input_size())
            .or_else(|| self.heads.first().map(|h| h.input_size()))
            .unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.spec().output()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.lstm.iter().flat_map(|l| l.tensors()).collect();
        for h in &self.heads {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self
            .lstm
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect();
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    /// Names matching [`NetModule::params`], e.g. `lstm0.w_fh`, `fc1.bias`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in 0..self.lstm.len() {
            for n in LSTM_PARAM_NAMES {
                out.push(format!("lstm{k}.{n}"));
            }
        }
        for k in 0..self.heads.len() {
            out.push(format!("fc{k}.weight"));
            out.push(format!("fc{k}.bias"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState {
            layers: self
                .lstm
                .iter()
                .map(|l| LayerState {
                    h: Matrix::zeros(l.hidden_size(), 1),
                    c: Matrix::zeros(l.hidden_size(), 1),
                })
                .collect(),
        }
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BoundModule {
        BoundModule {
            lstm: self.lstm.iter().map(|l| l.bind(tape)).collect(),
            heads: self
                .heads
                .iter()
                .map(|h| (tape.param(&h.weight), tape.param(&h.bias)))
                .collect(),
        }
    }

    /// One step on a tape: LSTM layers in sequence, dropout after each LSTM
    /// layer in training mode, then the fully connected head.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundModule,
        x: Var,
        state: &StateVars,
        mode: &mut Mode<'_>,
    ) -> Result<ModuleStep> {
        if state.layers.len() != self.lstm.len() {
            return Err(Error::invalid(format!(
                "state has {} layers, module has {}",
                state.layers.len(),
                self.lstm.len()
            )));
        }
        let mut cur = x;
        let mut next = Vec::with_capacity(self.lstm.len());
        let mut gates = Vec::with_capacity(self.lstm.len());
        for (k, layer) in bound.lstm.iter().enumerate() {
            let (h, c) = state.layers[k];
            let cell = lstm_cell_on_tape(tape, layer, cur, h, c)?;
            next.push((cell.h, cell.c));
            gates.push((cell.forget, cell.input, cell.output));
            cur = cell.h;
            let keep = self.keep_prob[k];
            if let Mode::Train(rng) = mode {
                if keep < 1.0 {
                    let n = self.lstm[k].hidden_size();
                    let mask =
                        Matrix::from_fn(n, 1, |_, _| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 });
                    let mv = tape.constant(mask);
                    cur = tape.hadamard(cur, mv)?;
                }
            }
        }
        for (k, (w, b)) in bound.heads.iter().enumerate() {
            let wx = tape.matmul(*w, cur)?;
            cur = tape.add(wx, *b)?;
            if self.heads[k].relu {
                cur = tape.relu(cur);
            }
        }
        Ok(ModuleStep {
            output: cur,
            state: StateVars { layers: next },
            gates,
        })
    }

    /// One step on plain values.
    pub fn forward(
        &self,
        x: &Matrix,
        state: &LstmState,
        mut mode: Mode<'_>,
    ) -> Result<(Matrix, LstmState)> {
        if x.shape() != (self.input_dim(), 1) {
            return Err(Error::ShapeMismatch {
                op: "module_forward",
                left: x.shape(),
                right: (self.input_dim(), 1),
            });
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let sv = state.on_tape(&mut tape);
        let xv = tape.constant(x.clone());
        let step = self.forward_on_tape(&mut tape, &bound, xv, &sv, &mut mode)?;
        Ok((tape.value(step.output).clone(), step.state.values(&tape)))
    }
}
