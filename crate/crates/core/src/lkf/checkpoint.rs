//! Trained models stored in the weight container.
//!
//! `meta` holds the architecture of every module, the training
//! configuration and the seed; arrays are prefixed `f.`, `q.`, `r.` for the
//! filter and `std.` for the standalone network.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LstmKfParams;
use crate::error::{Error, Result};
use crate::lstm::standalone::StdLstm;
use crate::lstm::{ModuleSpec, NetModule, WeightContainer};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointMeta {
    LstmKf {
        f: ModuleSpec,
        q: ModuleSpec,
        r: ModuleSpec,
        train_config: Option<TrainConfig>,
        seed: u64,
    },
    StdLstm {
        module: ModuleSpec,
        train_config: Option<TrainConfig>,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    LstmKf(LstmKfParams),
    StdLstm(StdLstm),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub train_config: Option<TrainConfig>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_container(&self) -> WeightContainer {
        let train_config = self.train_config.clone();
        let seed = self.seed;
        let meta = match &self.model {
            TrainedModel::LstmKf(p) => CheckpointMeta::LstmKf {
                f: p.f.spec(),
                q: p.q.spec(),
                r: p.r.spec(),
                train_config,
                seed,
            },
            TrainedModel::StdLstm(s) => CheckpointMeta::StdLstm {
                module: s.module.spec(),
                train_config,
                seed,
            },
        };
        let mut c = WeightContainer::new(serde_json::to_value(&meta).expect("metadata serializes"));
        match &self.model {
            TrainedModel::LstmKf(p) => {
                p.f.export("f", &mut c);
                p.q.export("q", &mut c);
                p.r.export("r", &mut c);
            }
            TrainedModel::StdLstm(s) => s.module.export("std", &mut c),
        }
        c
    }

    pub fn from_container(c: &WeightContainer) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Container(format!("checkpoint metadata: {e}")))?;
        Ok(match meta {
            CheckpointMeta::LstmKf {
                f,
                q,
                r,
                train_config,
                seed,
            } => Checkpoint {
                model: TrainedModel::LstmKf(LstmKfParams::from_modules(
                    NetModule::import(&f, "f", c)?,
                    NetModule::import(&q, "q", c)?,
                    NetModule::import(&r, "r", c)?,
                )?),
                train_config,
                seed,
            },
            CheckpointMeta::StdLstm {
                module,
                train_config,
                seed,
            } => Checkpoint {
                model: TrainedModel::StdLstm(StdLstm {
                    module: NetModule::import(&module, "std", c)?,
                }),
                train_config,
                seed,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&WeightContainer::load(path)?)
    }
}
