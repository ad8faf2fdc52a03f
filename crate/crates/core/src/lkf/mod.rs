//! The LSTM Kalman filter.
//!
//! Prediction: `y′ = f(ŷ_{t-1})`, `F = ∂f/∂ŷ` at `ŷ_{t-1}`,
//! `Q̂ = diag(exp(q(y′)))`, `P′ = sym(F P Fᵀ + Q̂)`.
//!
//! Update (measurement model `H = I`): `R̂ = diag(exp(r(z)))`,
//! `K = P′ (P′ + R̂)⁻¹`, `ŷ = y′ + K (z − y′)`, `P = sym((I − K) P′)`.
//!
//! Log-diagonals are clamped to `[-10, 10]` before exponentiation. `F` is
//! computed by one reverse sweep per output component and enters the graph
//! as a constant, so no second derivatives of `f` are ever taken.

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointMeta, TrainedModel};

use crate::error::{Error, Result};
use crate::kalman::GaussianBelief;
use crate::lstm::presets::{preset_big_f, preset_big_noise, preset_small, Preset};
use crate::lstm::{BoundModule, LstmState, Mode, NetModule, StateVars};
use crate::matrix::Matrix;
use crate::rng::derive_seed;
use crate::tape::{Tape, Var};
use crate::train::{train_model, SegmentOutput, SequenceModel, TrainConfig, TrainLog};
use crate::synth::Sequence;

pub const LOG_DIAG_MIN: f64 = -10.0;
pub const LOG_DIAG_MAX: f64 = 10.0;

/// The transition module `f` and the noise modules `q` and `r`, each
/// mapping `d → d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmKfParams {
    pub f: NetModule,
    pub q: NetModule,
    pub r: NetModule,
}

/// Filter belief plus the recurrent state of each module.
#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeState {
    pub belief: GaussianBelief,
    pub f_state: LstmState,
    pub q_state: LstmState,
    pub r_state: LstmState,
    /// number of measurements consumed
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub y_pred: Vec<f64>,
    pub p_pred: Matrix,
    /// diagonal matrix `Q̂`
    pub q: Matrix,
    pub jacobian: Matrix,
    pub f_state: LstmState,
    pub q_state: LstmState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub y: Vec<f64>,
    pub p: Matrix,
    pub gain: Matrix,
    /// diagonal matrix `R̂`
    pub r: Matrix,
    pub r_state: LstmState,
}

/// Per-step diagnostics of a filter run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterTrace {
    pub estimates: Vec<Vec<f64>>,
    pub predictions: Vec<Vec<f64>>,
    pub gains: Vec<Matrix>,
    /// diagonal of `Q̂` per step
    pub process_noise: Vec<Vec<f64>>,
    /// diagonal of `R̂` per step
    pub measurement_noise: Vec<Vec<f64>>,
    pub covariances: Vec<Matrix>,
    pub predicted_covariances: Vec<Matrix>,
}

impl FilterTrace {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    fn push(&mut self, tape: &Tape<'_>, pred: &PredictNodes, upd: &UpdateNodes) {
        self.estimates.push(tape.value(upd.y).as_slice().to_vec());
        self.predictions.push(tape.value(pred.y_pred).as_slice().to_vec());
        self.gains.push(tape.value(upd.gain).clone());
        self.process_noise.push(tape.value(pred.q_diag).as_slice().to_vec());
        self.measurement_noise.push(tape.value(upd.r_diag).as_slice().to_vec());
        self.covariances.push(tape.value(upd.p).clone());
        self.predicted_covariances.push(tape.value(pred.p_pred).clone());
    }
}

/// Tape handles for a [`RuntimeState`].
#[derive(Clone, Debug)]
pub struct CarryVars {
    pub mean: Var,
    pub cov: Var,
    pub f: StateVars,
    pub q: StateVars,
    pub r: StateVars,
}

/// Tape handles for the parameters of all three modules.
#[derive(Clone, Debug)]
pub struct BoundKf {
    pub f: BoundModule,
    pub q: BoundModule,
    pub r: BoundModule,
}

struct PredictNodes {
    y_pred: Var,
    p_pred: Var,
    q_diag: Var,
    jacobian: Matrix,
    f_state: StateVars,
    q_state: StateVars,
}

struct UpdateNodes {
    y: Var,
    p: Var,
    gain: Var,
    r_diag: Var,
    r_state: StateVars,
}

fn check_finite(tape: &Tape<'_>, v: Var, context: &str) -> Result<()> {
    match tape.value(v).first_non_finite() {
        Some(index) => Err(Error::NonFinite {
            context: context.into(),
            index,
        }),
        None => Ok(()),
    }
}

/// `exp(clamp(log_diag))` as a column.
fn noise_diagonal(tape: &mut Tape<'_>, log_diag: Var, context: &str) -> Result<Var> {
    check_finite(tape, log_diag, context)?;
    let c = tape.clamp(log_diag, LOG_DIAG_MIN, LOG_DIAG_MAX);
    Ok(tape.exp(c))
}

impl RuntimeState {
    pub fn on_tape(&self, tape: &mut Tape<'_>) -> CarryVars {
        CarryVars {
            mean: tape.constant(self.belief.mean.clone()),
            cov: tape.constant(self.belief.cov.clone()),
            f: self.f_state.on_tape(tape),
            q: self.q_state.on_tape(tape),
            r: self.r_state.on_tape(tape),
        }
    }
}

impl CarryVars {
    pub fn values(&self, tape: &Tape<'_>, t: usize) -> RuntimeState {
        RuntimeState {
            belief: GaussianBelief {
                mean: tape.value(self.mean).clone(),
                cov: tape.value(self.cov).clone(),
            },
            f_state: self.f.values(tape),
            q_state: self.q.values(tape),
            r_state: self.r.values(tape),
            t,
        }
    }
}

impl LstmKfParams {
    pub fn from_modules(f: NetModule, q: NetModule, r: NetModule) -> Result<Self> {
        let d = f.input_dim();
        for (name, m) in [("f", &f), ("q", &q), ("r", &r)] {
            if m.input_dim() != d || m.output_dim() != d {
                return Err(Error::invalid(format!(
                    "{name} module maps {} -> {}, expected {d} -> {d}",
                    m.input_dim(),
                    m.output_dim()
                )));
            }
        }
        Ok(LstmKfParams { f, q, r })
    }

    /// Freshly initialized modules of the given preset. Each module draws
    /// from its own stream of `seed`.
    pub fn new(dim: usize, preset: Preset, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        let (sf, sq, sr) = (derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3));
        Ok(match preset {
            Preset::Big => LstmKfParams {
                f: preset_big_f(dim, sf),
                q: preset_big_noise(dim, sq),
                r: preset_big_noise(dim, sr),
            },
            Preset::Small => LstmKfParams {
                f: preset_small(dim, sf),
                q: preset_small(dim, sq),
                r: preset_small(dim, sr),
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.f.input_dim()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (p, m) in [("f", &self.f), ("q", &self.q), ("r", &self.r)] {
            out.extend(m.param_names().into_iter().map(|n| format!("{p}.{n}")));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.f.param_count() + self.q.param_count() + self.r.param_count()
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BoundKf {
        BoundKf {
            f: self.f.bind(tape),
            q: self.q.bind(tape),
            r: self.r.bind(tape),
        }
    }

    /// Splits handles given in [`SequenceModel::params`] order.
    pub fn bound_from_vars(&self, vars: &[Var]) -> Result<BoundKf> {
        let nf = self.f.params().len();
        let nq = self.q.params().len();
        if vars.len() < nf + nq {
            return Err(Error::invalid("too few parameter handles"));
        }
        Ok(BoundKf {
            f: BoundModule::from_vars(&self.f, &vars[..nf])?,
            q: BoundModule::from_vars(&self.q, &vars[nf..nf + nq])?,
            r: BoundModule::from_vars(&self.r, &vars[nf + nq..])?,
        })
    }

    /// Mean `z₁`, covariance `I`, zero recurrent states.
    pub fn initial_state(&self, first_measurement: &[f64]) -> Result<RuntimeState> {
        let d = self.dim();
        if first_measurement.len() != d {
            return Err(Error::ShapeMismatch {
                op: "initial_state",
                left: (first_measurement.len(), 1),
                right: (d, 1),
            });
        }
        Ok(RuntimeState {
            belief: GaussianBelief {
                mean: Matrix::column(first_measurement),
                cov: Matrix::identity(d),
            },
            f_state: self.f.zero_state(),
            q_state: self.q.zero_state(),
            r_state: self.r.zero_state(),
            t: 0,
        })
    }

    fn check_state(&self, s: &RuntimeState) -> Result<()> {
        let d = self.dim();
        if s.belief.mean.shape() != (d, 1) || s.belief.cov.shape() != (d, d) {
            return Err(Error::ShapeMismatch {
                op: "runtime_state",
                left: s.belief.cov.shape(),
                right: (d, d),
            });
        }
        Ok(())
    }

    fn predict_on_tape(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundKf,
        carry: &CarryVars,
        fixed_jacobian: Option<&Matrix>,
        mode: &mut Mode<'_>,
    ) -> Result<PredictNodes> {
        let fs = self.f.forward_on_tape(tape, &bound.f, carry.mean, &carry.f, mode)?;
        check_finite(tape, fs.output, "f module output")?;
        let jacobian = match fixed_jacobian {
            Some(j) => j.clone(),
            None => tape.jacobian(fs.output, carry.mean)?,
        };
        let qs = self.q.forward_on_tape(tape, &bound.q, fs.output, &carry.q, mode)?;
        let q_diag = noise_diagonal(tape, qs.output, "q module output")?;
        let q_mat = tape.diag(q_diag)?;
        let f = tape.constant(jacobian.clone());
        let ft = tape.constant(jacobian.transpose());
        let fp = tape.matmul(f, carry.cov)?;
        let fpft = tape.matmul(fp, ft)?;
        let sum = tape.add(fpft, q_mat)?;
        let p_pred = tape.symmetrize(sum)?;
        Ok(PredictNodes {
            y_pred: fs.output,
            p_pred,
            q_diag,
            jacobian,
            f_state: fs.state,
            q_state: qs.state,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn update_on_tape(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundKf,
        y_pred: Var,
        p_pred: Var,
        z: Var,
        r_state: &StateVars,
        mode: &mut Mode<'_>,
    ) -> Result<UpdateNodes> {
        let rs = self.r.forward_on_tape(tape, &bound.r, z, r_state, mode)?;
        let r_diag = noise_diagonal(tape, rs.output, "r module output")?;
        let r_mat = tape.diag(r_diag)?;
        let s = tape.add(p_pred, r_mat)?;
        // P′ and S are symmetric, so K = P′ S⁻¹ = (S⁻¹ P′)ᵀ
        let x = tape.solve_spd(s, p_pred)?;
        let gain = tape.transpose(x);
        let innovation = tape.sub(z, y_pred)?;
        let correction = tape.matmul(gain, innovation)?;
        let y = tape.add(y_pred, correction)?;
        let eye = tape.constant(Matrix::identity(self.dim()));
        let ik = tape.sub(eye, gain)?;
        let ikp = tape.matmul(ik, p_pred)?;
        let p = tape.symmetrize(ikp)?;
        Ok(UpdateNodes {
            y,
            p,
            gain,
            r_diag,
            r_state: rs.state,
        })
    }

    /// Prediction step on plain values.
    pub fn predict(&self, state: &RuntimeState) -> Result<Prediction> {
        self.check_state(state)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let carry = state.on_tape(&mut tape);
        let p = self.predict_on_tape(&mut tape, &bound, &carry, None, &mut Mode::Eval)?;
        Ok(Prediction {
            y_pred: tape.value(p.y_pred).as_slice().to_vec(),
            p_pred: tape.value(p.p_pred).clone(),
            q: Matrix::from_diag(tape.value(p.q_diag).as_slice()),
            jacobian: p.jacobian,
            f_state: p.f_state.values(&tape),
            q_state: p.q_state.values(&tape),
        })
    }

    /// Update step on plain values.
    pub fn update(
        &self,
        y_pred: &[f64],
        p_pred: &Matrix,
        z: &[f64],
        r_state: &LstmState,
    ) -> Result<Update> {
        let d = self.dim();
        if y_pred.len() != d || z.len() != d || p_pred.shape() != (d, d) {
            return Err(Error::ShapeMismatch {
                op: "update",
                left: (z.len(), y_pred.len()),
                right: (d, d),
            });
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let yv = tape.constant(Matrix::column(y_pred));
        let pv = tape.constant(p_pred.clone());
        let zv = tape.constant(Matrix::column(z));
        let rs = r_state.on_tape(&mut tape);
        let u = self.update_on_tape(&mut tape, &bound, yv, pv, zv, &rs, &mut Mode::Eval)?;
        Ok(Update {
            y: tape.value(u.y).as_slice().to_vec(),
            p: tape.value(u.p).clone(),
            gain: tape.value(u.gain).clone(),
            r: Matrix::from_diag(tape.value(u.r_diag).as_slice()),
            r_state: u.r_state.values(&tape),
        })
    }

    /// Runs predict and update over every measurement, starting from `init`.
    /// The returned state is the one after the last step.
    pub fn filter_sequence(
        &self,
        measurements: &[Vec<f64>],
        init: &RuntimeState,
    ) -> Result<(FilterTrace, RuntimeState)> {
        self.check_state(init)?;
        let mut trace = FilterTrace::default();
        let mut state = init.clone();
        for (t, z) in measurements.iter().enumerate() {
            state = self
                .filter_step(&state, z, &mut trace)
                .map_err(|e| e.at_step(t))?;
        }
        Ok((trace, state))
    }

    fn filter_step(&self, state: &RuntimeState, z: &[f64], trace: &mut FilterTrace) -> Result<RuntimeState> {
        let d = self.dim();
        if z.len() != d {
            return Err(Error::ShapeMismatch {
                op: "filter_sequence",
                left: (z.len(), 1),
                right: (d, 1),
            });
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let carry = state.on_tape(&mut tape);
        let zv = tape.constant(Matrix::column(z));
        let mut mode = Mode::Eval;
        let p = self.predict_on_tape(&mut tape, &bound, &carry, None, &mut mode)?;
        let u = self.update_on_tape(&mut tape, &bound, p.y_pred, p.p_pred, zv, &carry.r, &mut mode)?;
        trace.push(&tape, &p, &u);
        let next = CarryVars {
            mean: u.y,
            cov: u.p,
            f: p.f_state,
            q: p.q_state,
            r: u.r_state,
        };
        Ok(next.values(&tape, state.t + 1))
    }

    /// Convenience: filter from [`LstmKfParams::initial_state`] at `z₁`.
    pub fn filter(&self, measurements: &[Vec<f64>]) -> Result<FilterTrace> {
        let Some(first) = measurements.first() else {
            return Ok(FilterTrace::default());
        };
        let init = self.initial_state(first)?;
        Ok(self.filter_sequence(measurements, &init)?.0)
    }

    /// Unrolls one segment on `tape` and returns its mean composite loss
    /// together with the Jacobian used at each step. When `fixed_jacobians`
    /// is given, step `t` uses entry `t` instead of differentiating `f`.
    #[allow(clippy::too_many_arguments)]
    pub fn segment_on_tape(
        &self,
        tape: &mut Tape<'_>,
        vars: &[Var],
        carry: &RuntimeState,
        truth: &[Vec<f64>],
        measurements: &[Vec<f64>],
        lambda: f64,
        fixed_jacobians: Option<&[Matrix]>,
        mode: &mut Mode<'_>,
    ) -> Result<(SegmentOutput<RuntimeState>, Vec<Matrix>)> {
        self.check_state(carry)?;
        if truth.len() != measurements.len() || truth.is_empty() {
            return Err(Error::invalid("segment needs equal, non-zero truth and measurement lengths"));
        }
        if fixed_jacobians.is_some_and(|j| j.len() < truth.len()) {
            return Err(Error::invalid("one fixed Jacobian per step required"));
        }
        let d = self.dim();
        let bound = self.bound_from_vars(vars)?;
        let mut cv = carry.on_tape(tape);
        let mut total: Option<Var> = None;
        let (mut step_loss_sum, mut gain_sum) = (0.0, 0.0);
        let mut jacobians = Vec::with_capacity(truth.len());
        for (t, (y, z)) in truth.iter().zip(measurements).enumerate() {
            if y.len() != d || z.len() != d {
                return Err(Error::invalid("measurement dimension differs from the state").at_step(t));
            }
            let step = |tape: &mut Tape<'_>, mode: &mut Mode<'_>| -> Result<(PredictNodes, UpdateNodes)> {
                let fixed = fixed_jacobians.map(|j| &j[t]);
                let p = self.predict_on_tape(tape, &bound, &cv, fixed, mode)?;
                let zv = tape.constant(Matrix::column(z));
                let u = self.update_on_tape(tape, &bound, p.y_pred, p.p_pred, zv, &cv.r, mode)?;
                Ok((p, u))
            };
            let (p, u) = step(tape, mode).map_err(|e| e.at_step(t))?;
            let yv = tape.constant(Matrix::column(y));
            let e_post = tape.sub(yv, u.y)?;
            let e_prior = tape.sub(yv, p.y_pred)?;
            let l_post = tape.sum_squares(e_post);
            let l_prior = tape.sum_squares(e_prior);
            let l_prior = tape.scale(l_prior, lambda);
            let l = tape.add(l_post, l_prior)?;
            step_loss_sum += tape.value(l)[(0, 0)];
            gain_sum += tape.value(u.gain).trace();
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
            jacobians.push(p.jacobian);
            cv = CarryVars {
                mean: u.y,
                cov: u.p,
                f: p.f_state,
                q: p.q_state,
                r: u.r_state,
            };
        }
        let n = truth.len();
        let loss = tape.scale(total.expect("non-empty segment"), 1.0 / n as f64);
        Ok((
            SegmentOutput {
                loss,
                carry: cv.values(tape, carry.t + n),
                step_loss_sum,
                steps: n,
                gain_sum,
                gain_count: n * d,
            },
            jacobians,
        ))
    }

    pub fn train(&mut self, data: &[Sequence], config: &TrainConfig) -> Result<TrainLog> {
        train_model(self, data, config)
    }
}

impl SequenceModel for LstmKfParams {
    type Carry = RuntimeState;

    fn params(&self) -> Vec<&Matrix> {
        let mut out = self.f.params();
        out.extend(self.q.params());
        out.extend(self.r.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.f.params_mut();
        out.extend(self.q.params_mut());
        out.extend(self.r.params_mut());
        out
    }

    fn initial_carry(&self, first: &[f64]) -> Result<RuntimeState> {
        self.initial_state(first)
    }

    fn segment_loss(
        &self,
        tape: &mut Tape<'_>,
        params: &[Var],
        carry: &RuntimeState,
        truth: &[Vec<f64>],
        measurements: &[Vec<f64>],
        lambda: f64,
        mode: &mut Mode<'_>,
    ) -> Result<SegmentOutput<RuntimeState>> {
        self.segment_on_tape(tape, params, carry, truth, measurements, lambda, None, mode)
            .map(|(out, _)| out)
    }
}

/// `(1/T) Σ_t ‖y_t − ŷ_t‖² + λ ‖y_t − ŷ′_t‖²`.
pub fn loss(truth: &[Vec<f64>], trace: &FilterTrace, lambda: f64) -> Result<f64> {
    if truth.len() != trace.len() || truth.is_empty() {
        return Err(Error::invalid(format!(
            "truth has {} steps, trace has {}",
            truth.len(),
            trace.len()
        )));
    }
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum() };
    let mut total = 0.0;
    for (t, y) in truth.iter().enumerate() {
        total += sq(y, &trace.estimates[t]) + lambda * sq(y, &trace.predictions[t]);
    }
    Ok(total / truth.len() as f64)
}
