//! Kalman filtering with a learned transition function and learned,
//! time-varying noise covariances.
//!
//! Three small recurrent networks drive the filter: `f` predicts the next
//! state from the previous estimate, `q` emits the process noise diagonal
//! and `r` the measurement noise diagonal. Everything is differentiated by
//! a reverse-mode tape ([`Tape`]) and trained end to end with truncated
//! backpropagation through time. Classic constant-velocity and
//! constant-acceleration Kalman filters, exponential smoothing and a plain
//! LSTM regressor serve as baselines, and seeded synthetic trajectories
//! make every comparison reproducible.
//!
//! ```
//! use lstmkf::{LstmKfParams, Preset};
//!
//! let filter = LstmKfParams::new(2, Preset::Small, 7).unwrap();
//! let zs = vec![vec![0.1, 0.2], vec![0.2, 0.1], vec![0.3, 0.0]];
//! let trace = filter.filter(&zs).unwrap();
//! assert_eq!(trace.estimates.len(), 3);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod kalman;
pub mod lkf;
pub mod lstm;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use kalman::{GaussianBelief, LinearKfModel, ModelFamily};
pub use lkf::{Checkpoint, FilterTrace, LstmKfParams, RuntimeState, TrainedModel};
pub use lstm::standalone::StdLstm;
pub use lstm::{NetModule, Preset};
pub use matrix::Matrix;
pub use rng::SeededRng;
pub use synth::{Sequence, TrajectoryDataset};
pub use tape::{Tape, Var};
pub use train::{TrainConfig, TrainLog};
