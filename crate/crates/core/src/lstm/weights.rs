//! Weight container: a single JSON document of named, shaped arrays.
//!
//! ```json
//! {
//!   "format": "lstmkf-weights",
//!   "version": 1,
//!   "encoding": "json-f64-shortest-roundtrip",
//!   "meta": { ... },
//!   "arrays": [ { "name": "f.lstm0.w_fh", "shape": [16, 16], "data": [ ... ] } ]
//! }
//! ```
//!
//! `data` is row-major. Numbers are written in the shortest decimal form
//! that parses back to the identical `f64`, so no byte order is involved.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::module::{ModuleSpec, NetModule};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const FORMAT_TAG: &str = "lstmkf-weights";
pub const FORMAT_VERSION: u32 = 1;
pub const ENCODING: &str = "json-f64-shortest-roundtrip";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightContainer {
    pub format: String,
    pub version: u32,
    pub encoding: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Default for WeightContainer {
    fn default() -> Self {
        Self::new(serde_json::Value::Null)
    }
}

impl WeightContainer {
    pub fn new(meta: serde_json::Value) -> Self {
        WeightContainer {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            encoding: ENCODING.into(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: &Matrix) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape: [m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        });
    }

    /// Fetches `name`, requiring exactly `shape`.
    pub fn get(&self, name: &str, shape: (usize, usize)) -> Result<Matrix> {
        let a = self
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Container(format!("missing array `{name}`")))?;
        if (a.shape[0], a.shape[1]) != shape {
            return Err(Error::Container(format!(
                "array `{name}` has shape {:?}, expected {:?}",
                a.shape,
                [shape.0, shape.1]
            )));
        }
        Matrix::from_vec(shape.0, shape.1, a.data.clone()).map_err(|_| {
            Error::Container(format!(
                "array `{name}` holds {} values for shape {:?}",
                a.data.len(),
                a.shape
            ))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("container serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: WeightContainer = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if c.format != FORMAT_TAG {
            return Err(Error::Container(format!("unexpected format tag `{}`", c.format)));
        }
        if c.version != FORMAT_VERSION {
            return Err(Error::Container(format!("unsupported version {}", c.version)));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl NetModule {
    /// Appends every parameter as `<prefix>.<param name>`.
    pub fn export(&self, prefix: &str, container: &mut WeightContainer) {
        for (name, m) in self.param_names().iter().zip(self.params()) {
            container.push(format!("{prefix}.{name}"), m);
        }
    }

    /// Rebuilds a module of architecture `spec` from `container`.
    pub fn import(spec: &ModuleSpec, prefix: &str, container: &WeightContainer) -> Result<Self> {
        let mut module = NetModule::zeros(spec)?;
        let names = module.param_names();
        for (name, slot) in names.iter().zip(module.params_mut()) {
            *slot = container.get(&format!("{prefix}.{name}"), slot.shape())?;
        }
        Ok(module)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::presets::spec_small;

    #[test]
    fn module_roundtrip_is_exact() {
        let m = NetModule::new(&spec_small(3), 8).unwrap();
        let mut c = WeightContainer::new(serde_json::json!({"note": "x"}));
        m.export("f", &mut c);
        let back = WeightContainer::from_json(&c.to_json()).unwrap();
        let m2 = NetModule::import(&spec_small(3), "f", &back).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn mismatched_shape_is_error() {
        let m = NetModule::new(&spec_small(3), 8).unwrap();
        let mut c = WeightContainer::default();
        m.export("f", &mut c);
        assert!(matches!(
            NetModule::import(&spec_small(4), "f", &c),
            Err(Error::Container(_))
        ));
    }

    #[test]
    fn corrupt_data_length_is_error() {
        let m = NetModule::new(&spec_small(2), 8).unwrap();
        let mut c = WeightContainer::default();
        m.export("f", &mut c);
        c.arrays[0].data.pop();
        assert!(NetModule::import(&spec_small(2), "f", &c).is_err());
    }

    #[test]
    fn wrong_tag_rejected() {
        let c = WeightContainer {
            format: "other".into(),
            ..Default::default()
        };
        assert!(WeightContainer::from_json(&c.to_json()).is_err());
        assert!(matches!(
            WeightContainer::from_json("{\"format\":"),
            Err(Error::Parse { .. })
        ));
    }
}
