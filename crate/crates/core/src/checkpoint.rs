//! Versioned JSON container for model parameters.
//!
//! Floats are written in shortest round-trip form, so a saved and reloaded
//! model reproduces bit-identical outputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Generator,
    Discriminator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    /// Fingerprint of the dataset + training config the model belongs to.
    pub config_hash: String,
    pub model_config: serde_json::Value,
    /// Model-specific sizes (e.g. entity and pattern counts).
    pub dims: Vec<usize>,
    /// Free-form fields, e.g. a discriminator's iteration index.
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub params: Vec<SavedParam>,
}

impl Checkpoint {
    pub fn from_store(
        kind: ModelKind,
        config_hash: &str,
        model_config: serde_json::Value,
        dims: Vec<usize>,
        store: &ParamStore,
    ) -> Result<Self> {
        Ok(Checkpoint {
            format_version: FORMAT_VERSION,
            kind,
            config_hash: config_hash.to_string(),
            model_config,
            dims,
            meta: Default::default(),
            params: store
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.values().to_vec(),
                })
                .collect(),
        })
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    /// Overwrites `store` with the saved values after checking that names and
    /// shapes agree one-to-one.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for (saved, id) in self.params.iter().zip(store.ids().collect::<Vec<_>>()) {
            let expected = store.value(id);
            if saved.name != store.name(id) || saved.shape != expected.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match model's {} {:?}",
                    saved.name,
                    saved.shape,
                    store.name(id),
                    expected.shape()
                )));
            }
            *store.value_mut(id) = Tensor::new(saved.shape.clone(), saved.values.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
