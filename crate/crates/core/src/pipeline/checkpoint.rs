//! Checkpoint archive: weight tensors keyed by module path, the backbone
//! configuration, and module-specific extras, in one versioned JSON file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{BackboneConfig, PipelineConfig, PipelineError};
use crate::nn::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn from_array(a: &ArrayD<f64>) -> Self {
        TensorData {
            shape: a.shape().to_vec(),
            data: a.as_standard_layout().iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<ArrayD<f64>, PipelineError> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.data.clone())
            .map_err(|_| PipelineError::CorruptTensor { shape: self.shape.clone(), len: self.data.len() })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub backbone: BackboneConfig,
    pub pipeline: PipelineConfig,
    pub num_identities: u32,
    pub text_dim: usize,
    pub tensors: BTreeMap<String, TensorData>,
    #[serde(default)]
    pub extras: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let r = BufReader::new(File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(r)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(PipelineError::CheckpointVersion {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ck)
    }

    pub fn tensors_from_store(store: &ParamStore) -> BTreeMap<String, TensorData> {
        store.iter().map(|(k, v)| (k.clone(), TensorData::from_array(v))).collect()
    }

    pub fn store_from_tensors(
        tensors: &BTreeMap<String, TensorData>,
        prefix: &str,
    ) -> Result<ParamStore, PipelineError> {
        let mut store = ParamStore::new();
        for (k, t) in tensors.iter().filter(|(k, _)| k.starts_with(prefix)) {
            store.insert(k.clone(), t.to_array()?);
        }
        Ok(store)
    }

    pub fn extra<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T, PipelineError> {
        let value =
            self.extras.get(key).ok_or_else(|| PipelineError::MissingExtra(key.to_string()))?;
        Ok(serde_json::from_value(value.clone())?)
    }

    pub fn set_extra<T: Serialize>(&mut self, key: &str, value: &T) {
        self.extras
            .insert(key.to_string(), serde_json::to_value(value).expect("extra serializes"));
    }
}
