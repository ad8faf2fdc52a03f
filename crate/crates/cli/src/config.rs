//! Run configuration read from a TOML file.
//!
//! Every section and field is optional; missing values take the defaults
//! below. Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! generator = "oscillator"
//! dim = 2
//! steps = 100
//!
//! [data.test_bursts]
//! starts = [35, 75]
//! ends = [50, 90]
//! scale = 10.0
//!
//! [train]
//! model = "lstm_kf"
//! preset = "small"
//! epochs = 120
//!
//! [eval]
//! methods = ["measurements", "kalman_vel", "lstm_kf"]
//! ```

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use lstmkf::synth::{BurstSpec, Generator, LinearCvParams, OscillatorParams};
use lstmkf::{Preset, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.message()))?;
        Ok(cfg)
    }

    /// The effective configuration, written next to every command's outputs.
    pub fn echo(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    LinearCv,
    Oscillator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub generator: GeneratorKind,
    pub dim: usize,
    pub steps: usize,
    pub train_sequences: usize,
    pub test_sequences: usize,
    /// velocity random-walk variance (linear_cv only)
    pub q: f64,
    /// measurement noise variance
    pub r: f64,
    pub dt: f64,
    /// oscillator only
    pub amplitude: f64,
    /// oscillator only, cycles per unit time
    pub frequency: f64,
    pub train_bursts: Option<BurstSpec>,
    pub test_bursts: Option<BurstSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            generator: GeneratorKind::Oscillator,
            dim: 2,
            steps: 100,
            train_sequences: 40,
            test_sequences: 20,
            q: 0.01,
            r: 0.01,
            dt: 1.0,
            amplitude: 1.0,
            frequency: 0.05,
            train_bursts: None,
            test_bursts: None,
        }
    }
}

impl DataConfig {
    pub fn generator(&self, sequences: usize) -> Generator {
        match self.generator {
            GeneratorKind::LinearCv => Generator::LinearCv(LinearCvParams {
                dim: self.dim,
                steps: self.steps,
                sequences,
                q: self.q,
                r: self.r,
                dt: self.dt,
            }),
            GeneratorKind::Oscillator => Generator::Oscillator(OscillatorParams {
                dim: self.dim,
                steps: self.steps,
                sequences,
                amplitude: self.amplitude,
                frequency: self.frequency,
                r: self.r,
                dt: self.dt,
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LstmKf,
    StdLstm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LstmKf => "lstm_kf",
            ModelKind::StdLstm => "std_lstm",
        }
    }
}

/// Training overrides on top of the preset's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub model: ModelKind,
    pub preset: Preset,
    pub learning_rate: Option<f64>,
    pub decay: Option<f64>,
    pub decay_start_epoch: Option<usize>,
    pub truncation: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lambda: Option<f64>,
    /// 0 disables clipping
    pub clip_norm: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            model: ModelKind::LstmKf,
            preset: Preset::Small,
            learning_rate: None,
            decay: None,
            decay_start_epoch: None,
            truncation: None,
            batch_size: None,
            epochs: None,
            lambda: None,
            clip_norm: None,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let base = match self.preset {
            Preset::Big => TrainConfig::big(),
            Preset::Small => TrainConfig::small(),
        };
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            decay: self.decay.unwrap_or(base.decay),
            decay_start_epoch: self.decay_start_epoch.unwrap_or(base.decay_start_epoch),
            truncation: self.truncation.unwrap_or(base.truncation),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            lambda: self.lambda.unwrap_or(base.lambda),
            clip_norm: match self.clip_norm {
                Some(c) => (c != 0.0).then_some(c),
                None => base.clip_norm,
            },
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Measurements,
    KalmanVel,
    KalmanAcc,
    Ema,
    StdLstm,
    LstmKf,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Measurements,
        Method::KalmanVel,
        Method::KalmanAcc,
        Method::Ema,
        Method::StdLstm,
        Method::LstmKf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Measurements => "measurements",
            Method::KalmanVel => "kalman_vel",
            Method::KalmanAcc => "kalman_acc",
            Method::Ema => "ema",
            Method::StdLstm => "std_lstm",
            Method::LstmKf => "lstm_kf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub methods: Vec<Method>,
    pub q_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub window_grid: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            methods: Method::ALL.to_vec(),
            q_grid: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            r_grid: vec![1e-3, 1e-2, 1e-1, 1.0],
            window_grid: vec![1, 2, 3, 4, 6, 8, 12, 16, 24, 32],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let tc = cfg.train.train_config(0);
        assert_eq!(tc, TrainConfig::small());
    }

    #[test]
    fn preset_defaults() {
        let small = TrainSection::default().train_config(3);
        assert_eq!((small.learning_rate, small.batch_size, small.truncation), (5e-4, 2, 10));
        assert_eq!(small.lambda, 0.8);
        let big = TrainSection { preset: Preset::Big, ..Default::default() }.train_config(3);
        assert_eq!((big.learning_rate, big.decay, big.truncation), (1e-5, 0.95, 100));
    }

    #[test]
    fn zero_clip_disables() {
        let t = TrainSection { clip_norm: Some(0.0), ..Default::default() };
        assert_eq!(t.train_config(0).clip_norm, None);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[data]\ndims = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[training]\n").is_err());
    }

    #[test]
    fn echo_roundtrips() {
        let mut cfg = RunConfig { seed: 9, ..Default::default() };
        cfg.data.test_bursts = Some(BurstSpec { starts: vec![3], ends: vec![5], scale: 10.0 });
        cfg.train.epochs = Some(4);
        cfg.eval.methods = vec![Method::Ema];
        let back: RunConfig = toml::from_str(&cfg.echo().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
