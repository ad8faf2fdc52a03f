//! Truncated backpropagation through time with Adam.
//!
//! Each sequence is cut into segments of `truncation` steps. Values (filter
//! belief and recurrent states) carry across segment boundaries; gradients
//! do not. Every `(batch, segment)` pair yields one Adam update on the mean
//! of the per-sequence segment losses.

use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::lstm::Mode;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, SeededRng};
use crate::synth::Sequence;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// per-epoch multiplicative decay
    pub decay: f64,
    /// first (1-indexed) epoch whose rate is decayed once
    pub decay_start_epoch: usize,
    pub truncation: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    /// global gradient-norm bound; `None` disables clipping
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::small()
    }
}

impl TrainConfig {
    /// Defaults for the 16-unit modules.
    pub fn small() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            decay: 1.0,
            decay_start_epoch: 2,
            truncation: 10,
            batch_size: 2,
            epochs: 120,
            lambda: 0.8,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }

    /// Defaults for the 1024/256-unit modules.
    pub fn big() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            decay: 0.95,
            truncation: 100,
            ..Self::small()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and nonnegative"));
        }
        if !(self.decay > 0.0) || !self.decay.is_finite() {
            return Err(Error::invalid("decay must be positive"));
        }
        if self.decay_start_epoch == 0 {
            return Err(Error::invalid("decay start epoch is 1-indexed"));
        }
        if self.truncation == 0 || self.batch_size == 0 {
            return Err(Error::invalid("truncation and batch size must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("clip norm must be positive"));
            }
        }
        Ok(())
    }

    /// `lr₀ · decay^max(0, epoch − (start − 1))` for 1-indexed `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let k = (epoch + 1).saturating_sub(self.decay_start_epoch);
        self.learning_rate * self.decay.powi(k as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// mean per-step loss over all steps of the epoch
    pub loss: f64,
    /// mean diagonal Kalman gain; absent for models without a gain
    pub mean_gain: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,mean_gain,learning_rate";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let gain = e.mean_gain.map(|g| format!("{g:.17e}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{:.17e},{},{:.17e}\n",
                e.epoch, e.loss, gain, e.learning_rate
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == Self::CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{}`", Self::CSV_HEADER),
                })
            }
        }
        let mut epochs = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let bad = |m: &str| Error::Parse {
                line: n,
                message: m.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let epoch: usize = f[0].parse().map_err(|_| bad("bad epoch"))?;
            if epochs.last().is_some_and(|e: &EpochLog| e.epoch >= epoch) {
                return Err(bad("epochs must increase"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            epochs.push(EpochLog {
                epoch,
                loss: num(f[1])?,
                mean_gain: if f[2].is_empty() { None } else { Some(num(f[2])?) },
                learning_rate: num(f[3])?,
            });
        }
        Ok(TrainLog { epochs })
    }
}

/// What one sequence contributes to one segment.
pub struct SegmentOutput<C> {
    /// mean per-step loss over the segment (1×1)
    pub loss: Var,
    /// state after the segment's last step, detached
    pub carry: C,
    pub step_loss_sum: f64,
    pub steps: usize,
    pub gain_sum: f64,
    pub gain_count: usize,
}

/// A recurrent estimator trainable by [`train_model`].
pub trait SequenceModel {
    type Carry: Clone;

    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;
    fn initial_carry(&self, first_measurement: &[f64]) -> Result<Self::Carry>;

    /// Unrolls the segment on `tape`. `params` are handles for
    /// [`SequenceModel::params`] in order; `self` supplies only the
    /// architecture.
    #[allow(clippy::too_many_arguments)]
    fn segment_loss(
        &self,
        tape: &mut Tape<'_>,
        params: &[Var],
        carry: &Self::Carry,
        truth: &[Vec<f64>],
        measurements: &[Vec<f64>],
        lambda: f64,
        mode: &mut Mode<'_>,
    ) -> Result<SegmentOutput<Self::Carry>>;
}

/// Trains `model` in place.
pub fn train_model<M: SequenceModel>(
    model: &mut M,
    data: &[Sequence],
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if data.is_empty() || data.iter().all(|s| s.is_empty()) {
        return Err(Error::invalid("training needs at least one non-empty sequence"));
    }
    if let Some(t) = data
        .iter()
        .position(|s| s.truth.len() != s.measurements.len())
    {
        return Err(Error::invalid(format!("sequence {t}: truth and measurement lengths differ")));
    }
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut order: Vec<usize> = (0..data.len()).filter(|&i| !data[i].is_empty()).collect();
    let mut shuffle_rng = SeededRng::new(derive_seed(config.seed, 0));
    let mut log = TrainLog::default();

    for epoch in 1..=config.epochs {
        let lr = config.learning_rate_at(epoch);
        adam.set_learning_rate(lr);
        shuffle_rng.shuffle(&mut order);
        let mut dropout_rng = SeededRng::new(derive_seed(config.seed, epoch as u64));
        let (mut loss_sum, mut steps, mut gain_sum, mut gain_count) = (0.0, 0usize, 0.0, 0usize);

        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut carries: Vec<M::Carry> = batch
                .iter()
                .map(|&i| model.initial_carry(&data[i].measurements[0]))
                .collect::<Result<_>>()?;
            let longest = batch.iter().map(|&i| data[i].len()).max().unwrap_or(0);
            let mut start = 0;
            while start < longest {
                let grads = {
                    let mut tape = Tape::new();
                    let vars: Vec<Var> = model.params().into_iter().map(|p| tape.param(p)).collect();
                    let mut total: Option<Var> = None;
                    let mut active = 0usize;
                    for (slot, &i) in batch.iter().enumerate() {
                        let seq = &data[i];
                        if start >= seq.len() {
                            continue;
                        }
                        let end = (start + config.truncation).min(seq.len());
                        let mut mode = Mode::Train(&mut dropout_rng);
                        let out = model
                            .segment_loss(
                                &mut tape,
                                &vars,
                                &carries[slot],
                                &seq.truth[start..end],
                                &seq.measurements[start..end],
                                config.lambda,
                                &mut mode,
                            )
                            .map_err(|e| e.at_step(start))?;
                        carries[slot] = out.carry;
                        loss_sum += out.step_loss_sum;
                        steps += out.steps;
                        gain_sum += out.gain_sum;
                        gain_count += out.gain_count;
                        total = Some(match total {
                            None => out.loss,
                            Some(t) => tape.add(t, out.loss)?,
                        });
                        active += 1;
                    }
                    let total = total.expect("segment start below the longest sequence");
                    let loss = tape.scale(total, 1.0 / active as f64);
                    let value = tape.value(loss)[(0, 0)];
                    if !value.is_finite() {
                        return Err(Error::Diverged {
                            epoch,
                            batch: b,
                            loss: value,
                        });
                    }
                    let g = tape.backward(loss)?;
                    vars.iter().map(|v| g.wrt(&tape, *v)).collect::<Vec<Matrix>>()
                };
                let mut grads = grads;
                if let Some(c) = config.clip_norm {
                    clip_grad_norm(&mut grads, c);
                }
                adam_step(&mut model.params_mut(), &grads, &mut adam)?;
                start += config.truncation;
            }
        }
        log.epochs.push(EpochLog {
            epoch,
            loss: loss_sum / steps.max(1) as f64,
            mean_gain: (gain_count > 0).then(|| gain_sum / gain_count as f64),
            learning_rate: lr,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_starts_decaying_at_second_epoch() {
        let c = TrainConfig {
            learning_rate: 1.0,
            decay: 0.5,
            ..TrainConfig::small()
        };
        assert_eq!(c.learning_rate_at(1), 1.0);
        assert_eq!(c.learning_rate_at(2), 0.5);
        assert_eq!(c.learning_rate_at(3), 0.25);
        let late = TrainConfig {
            decay_start_epoch: 4,
            ..c
        };
        assert_eq!(late.learning_rate_at(3), 1.0);
        assert_eq!(late.learning_rate_at(4), 0.5);
    }

    #[test]
    fn presets() {
        let b = TrainConfig::big();
        assert_eq!((b.learning_rate, b.decay, b.truncation), (1e-5, 0.95, 100));
        let s = TrainConfig::small();
        assert_eq!((s.learning_rate, s.batch_size, s.truncation, s.lambda), (5e-4, 2, 10, 0.8));
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::small();
        c.truncation = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::small();
        c.lambda = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn log_csv_roundtrip() {
        let log = TrainLog {
            epochs: vec![
                EpochLog {
                    epoch: 1,
                    loss: 0.5,
                    mean_gain: Some(0.75),
                    learning_rate: 1e-3,
                },
                EpochLog {
                    epoch: 2,
                    loss: 0.25,
                    mean_gain: None,
                    learning_rate: 1e-3,
                },
            ],
        };
        assert_eq!(TrainLog::from_csv(&log.to_csv()).unwrap(), log);
        assert!(TrainLog::from_csv("epoch,loss\n").is_err());
        let dup = "epoch,loss,mean_gain,learning_rate\n2,1,1,1\n1,1,1,1\n";
        assert!(matches!(TrainLog::from_csv(dup), Err(Error::Parse { line: 3, .. })));
    }
}
