//! Versioned JSON checkpoints for the estimator and the BC policy.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorModel, ESTIMATOR_VERSION};
use crate::labeling::PriorProfile;
use crate::nn::NamedTensor;

pub type Metadata = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub version: String,
    pub config: C,
    #[serde(default)]
    pub priors: Vec<PriorProfile>,
    pub params: Vec<NamedTensor>,
    #[serde(default)]
    pub metadata: Metadata,
}

pub fn save<C: Serialize>(path: impl AsRef<Path>, checkpoint: &Checkpoint<C>) -> Result<()> {
    write_json(path, checkpoint)
}

/// Reads a checkpoint, refusing any version other than `expected` before
/// looking at the rest of the document.
pub fn load<C: DeserializeOwned>(path: impl AsRef<Path>, expected: &str) -> Result<Checkpoint<C>> {
    let path = path.as_ref();
    let raw: serde_json::Value = read_json(path)?;
    let found = raw
        .get("version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::format(path, "missing `version`"))?;
    if found != expected {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: found.to_string(),
            expected: expected.to_string(),
        });
    }
    serde_json::from_value(raw).map_err(|e| Error::format(path, e))
}

pub fn save_estimator(
    path: impl AsRef<Path>,
    model: &EstimatorModel,
    priors: &[PriorProfile],
    metadata: Metadata,
) -> Result<()> {
    save(
        path,
        &Checkpoint {
            version: ESTIMATOR_VERSION.into(),
            config: model.config.clone(),
            priors: priors.to_vec(),
            params: model.params.to_named(),
            metadata,
        },
    )
}

pub fn load_estimator(path: impl AsRef<Path>) -> Result<(EstimatorModel, Vec<PriorProfile>, Metadata)> {
    let ck: Checkpoint<EstimatorConfig> = load(path, ESTIMATOR_VERSION)?;
    let model = EstimatorModel::from_named(ck.config, &ck.params)?;
    Ok((model, ck.priors, ck.metadata))
}
