//! LSTM cells, stacked modules, presets and weight storage.

pub mod cell;
pub mod module;
pub mod presets;
pub mod standalone;
pub mod weights;

pub use cell::{lstm_cell, lstm_cell_on_tape, CellOutput, LstmLayerParams};
pub use module::{
    BoundModule, HeadSpec, LayerState, LinearLayer, LstmState, Mode, ModuleSpec, NetModule,
    StateVars,
};
pub use presets::{preset_big_f, preset_big_noise, preset_small, Preset};
pub use weights::WeightContainer;
