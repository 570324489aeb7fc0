//! Single-file JSON checkpoint holding both networks, the shared
//! standardizer, training history and a hash of the generating config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bnn::BnnModel;
use crate::config::TrainConfig;
use crate::dual::{DualModel, TrainingHistory};
use crate::error::{Error, Result};
use crate::normalize::Standardizer;
use crate::variance_net::VarianceModel;

pub const FORMAT: &str = "dualnet-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "section", rename_all = "snake_case")]
pub enum Section {
    Bnn(BnnModel),
    Vnet(VarianceModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub train_config: TrainConfig,
    pub standardizer: Standardizer,
    pub history: TrainingHistory,
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn new(model: &DualModel, config_hash: impl Into<String>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config_hash: config_hash.into(),
            train_config: model.config.clone(),
            standardizer: model.standardizer.clone(),
            history: model.history.clone(),
            sections: vec![Section::Bnn(model.bnn.clone()), Section::Vnet(model.vnet.clone())],
        }
    }

    pub fn into_model(self) -> Result<DualModel> {
        let mut bnn = None;
        let mut vnet = None;
        for s in self.sections {
            match s {
                Section::Bnn(m) if bnn.is_none() => bnn = Some(m),
                Section::Vnet(m) if vnet.is_none() => vnet = Some(m),
                _ => return Err(Error::Incompatible("duplicate model section".into())),
            }
        }
        let bnn = bnn.ok_or_else(|| Error::Incompatible("missing bnn section".into()))?;
        let vnet = vnet.ok_or_else(|| Error::Incompatible("missing vnet section".into()))?;
        bnn.validate()?;
        vnet.validate()?;
        Ok(DualModel {
            bnn,
            vnet,
            standardizer: self.standardizer,
            history: self.history,
            config: self.train_config,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format != FORMAT {
            return Err(Error::Incompatible(format!("unknown format {:?}", header.format)));
        }
        if header.version != VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint version {} (expected {VERSION})",
                header.version
            )));
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
