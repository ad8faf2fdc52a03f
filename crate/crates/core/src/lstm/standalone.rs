//! A single recurrent module used directly as the filter: `ŷ_t = g(z_t)`,
//! trained with plain mean squared error against the truth.

use super::module::{BoundModule, LstmState, Mode, NetModule};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};
use crate::train::{SegmentOutput, SequenceModel};

fn check_dims(module: &NetModule, d: usize) -> Result<()> {
    if module.input_dim() != d || module.output_dim() != d {
        return Err(Error::invalid(format!(
            "module maps {} -> {}, measurements have dimension {d}",
            module.input_dim(),
            module.output_dim()
        )));
    }
    Ok(())
}

/// Runs `module` over `measurements` from a zero state, in evaluation mode.
pub fn standalone_lstm_filter(measurements: &[Vec<f64>], module: &NetModule) -> Result<Vec<Vec<f64>>> {
    let mut state = module.zero_state();
    let mut out = Vec::with_capacity(measurements.len());
    for (t, z) in measurements.iter().enumerate() {
        check_dims(module, z.len()).map_err(|e| e.at_step(t))?;
        let (y, next) = module
            .forward(&Matrix::column(z), &state, Mode::Eval)
            .map_err(|e| e.at_step(t))?;
        out.push(y.into_vec());
        state = next;
    }
    Ok(out)
}

/// Trainable wrapper around the module.
#[derive(Clone, Debug, PartialEq)]
pub struct StdLstm {
    pub module: NetModule,
}

impl StdLstm {
    pub fn filter(&self, measurements: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        standalone_lstm_filter(measurements, &self.module)
    }
}

impl SequenceModel for StdLstm {
    type Carry = LstmState;

    fn params(&self) -> Vec<&Matrix> {
        self.module.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.module.params_mut()
    }

    fn initial_carry(&self, first: &[f64]) -> Result<LstmState> {
        check_dims(&self.module, first.len())?;
        Ok(self.module.zero_state())
    }

    fn segment_loss(
        &self,
        tape: &mut Tape<'_>,
        params: &[Var],
        carry: &LstmState,
        truth: &[Vec<f64>],
        measurements: &[Vec<f64>],
        _lambda: f64,
        mode: &mut Mode<'_>,
    ) -> Result<SegmentOutput<LstmState>> {
        let bound = BoundModule::from_vars(&self.module, params)?;
        let mut state = carry.on_tape(tape);
        let mut total: Option<Var> = None;
        let mut step_loss_sum = 0.0;
        for (t, (y, z)) in truth.iter().zip(measurements).enumerate() {
            let zv = tape.constant(Matrix::column(z));
            let step = self
                .module
                .forward_on_tape(tape, &bound, zv, &state, mode)
                .map_err(|e| e.at_step(t))?;
            let yv = tape.constant(Matrix::column(y));
            let diff = tape.sub(yv, step.output)?;
            let l = tape.sum_squares(diff);
            step_loss_sum += tape.value(l)[(0, 0)];
            total = Some(match total {
                None => l,
                Some(acc) => tape.add(acc, l)?,
            });
            state = step.state;
        }
        let total = total.ok_or_else(|| Error::invalid("empty segment"))?;
        let loss = tape.scale(total, 1.0 / truth.len() as f64);
        Ok(SegmentOutput {
            loss,
            carry: state.values(tape),
            step_loss_sum,
            steps: truth.len(),
            gain_sum: 0.0,
            gain_count: 0,
        })
    }
}
