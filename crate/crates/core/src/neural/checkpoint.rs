//! JSON checkpoints.
//!
//! Layout:
//!
//! ```json
//! {"format": "rnng-checkpoint", "version": 1, "meta": { ... },
//!  "params": {"params": [{"name": "...", "shape": [r, c], "value": [...], "trainable": true}]}}
//! ```
//!
//! `meta` holds the owning model's configuration. Values are written with
//! shortest round-trip formatting and parsed exactly, so a save/load cycle
//! reproduces every `f64` bit for bit.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::NeuralError;

pub const FORMAT: &str = "rnng-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub format: String,
    pub version: u32,
    pub meta: M,
    pub params: ParamStore,
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn new(meta: M, params: ParamStore) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            meta,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String, NeuralError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, NeuralError> {
        let mut ck: Self = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(NeuralError::Checkpoint(format!("unexpected format tag `{}`", ck.format)));
        }
        if ck.version != VERSION {
            return Err(NeuralError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {VERSION})",
                ck.version
            )));
        }
        ck.params.reindex();
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        std::fs::write(path, self.to_json()?).map_err(|source| NeuralError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        let text = std::fs::read_to_string(path).map_err(|source| NeuralError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        store.add("emb", &[50, 7], Init::Uniform(3.0), &mut rng);
        store.insert("odd", &[3], vec![1e-300, -0.1 + 0.2, f64::MAX], false);
        let ck = Checkpoint::new(String::from("meta"), store.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        let back: Checkpoint<String> = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params, store);
        assert_eq!(back.params.id("odd"), store.id("odd"));
        let bad = ck.to_json().unwrap().replace(FORMAT, "other");
        assert!(Checkpoint::<String>::from_json(&bad).is_err());
    }
}
