//! Network shapes for the transition and noise modules.
//!
//! The large shapes suit long training sets; the small single-layer shape
//! is used when data is scarce.

use serde::{Deserialize, Serialize};

use super::module::{HeadSpec, ModuleSpec, NetModule};

pub const BIG_F_HIDDEN: usize = 1024;
pub const BIG_F_LAYERS: usize = 3;
pub const BIG_F_KEEP: f64 = 0.7;
pub const BIG_NOISE_HIDDEN: usize = 256;
pub const SMALL_HIDDEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Big,
    Small,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "big" => Ok(Preset::Big),
            "small" => Ok(Preset::Small),
            other => Err(format!("unknown preset `{other}` (expected big or small)")),
        }
    }
}

/// 3 × 1024 LSTM with dropout, then FC 1024 → 1024 → `dim` (ReLU on all but
/// the last).
pub fn spec_big_f(dim: usize) -> ModuleSpec {
    ModuleSpec {
        input: dim,
        lstm_hidden: vec![BIG_F_HIDDEN; BIG_F_LAYERS],
        keep_prob: vec![BIG_F_KEEP; BIG_F_LAYERS],
        heads: vec![
            HeadSpec {
                output: BIG_F_HIDDEN,
                relu: true,
            },
            HeadSpec {
                output: BIG_F_HIDDEN,
                relu: true,
            },
            HeadSpec {
                output: dim,
                relu: false,
            },
        ],
    }
}

/// 1 × 256 LSTM, one FC to `dim`.
pub fn spec_big_noise(dim: usize) -> ModuleSpec {
    ModuleSpec {
        input: dim,
        lstm_hidden: vec![BIG_NOISE_HIDDEN],
        keep_prob: vec![1.0],
        heads: vec![HeadSpec {
            output: dim,
            relu: false,
        }],
    }
}

/// 1 × 16 LSTM, one linear FC to `dim`.
pub fn spec_small(dim: usize) -> ModuleSpec {
    ModuleSpec {
        input: dim,
        lstm_hidden: vec![SMALL_HIDDEN],
        keep_prob: vec![1.0],
        heads: vec![HeadSpec {
            output: dim,
            relu: false,
        }],
    }
}

pub fn preset_big_f(out_dim: usize, seed: u64) -> NetModule {
    NetModule::new(&spec_big_f(out_dim), seed).expect("preset spec is valid")
}

pub fn preset_big_noise(out_dim: usize, seed: u64) -> NetModule {
    NetModule::new(&spec_big_noise(out_dim), seed).expect("preset spec is valid")
}

pub fn preset_small(out_dim: usize, seed: u64) -> NetModule {
    NetModule::new(&spec_small(out_dim), seed).expect("preset spec is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn big_f_widths() {
        let s = spec_big_f(48);
        assert_eq!(s.lstm_hidden, vec![1024, 1024, 1024]);
        let fc: Vec<usize> = s.heads.iter().map(|h| h.output).collect();
        assert_eq!(fc, vec![1024, 1024, 48]);
        let relu: Vec<bool> = s.heads.iter().map(|h| h.relu).collect();
        assert_eq!(relu, vec![true, true, false]);
        assert!(s.keep_prob.iter().all(|&k| k == 0.7));
    }

    #[test]
    fn big_noise_widths() {
        let s = spec_big_noise(48);
        assert_eq!(s.lstm_hidden, vec![256]);
        assert_eq!(s.heads.len(), 1);
        assert_eq!(s.heads[0].output, 48);
    }

    #[test]
    fn small_widths() {
        let m = preset_small(6, 1);
        assert_eq!(m.lstm.len(), 1);
        assert_eq!(m.lstm[0].hidden_size(), 16);
        assert_eq!(m.heads.len(), 1);
        assert_eq!(m.heads[0].output_size(), 6);
        assert!(!m.heads[0].relu);
    }
}
