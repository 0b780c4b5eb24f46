//! Versioned JSON model checkpoints: a format tag, a version, the model kind
//! and the model itself (hyperparameters and parameters).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ItemKnn, MfModel, MostPop, ProfileRegressor, RecsysError, Recommender, UserKnn};

pub const CHECKPOINT_FORMAT: &str = "scrutable-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum Checkpoint {
    MostPop(MostPop),
    UserKnn(UserKnn),
    ItemKnn(ItemKnn),
    Mf(MfModel),
    Upr(ProfileRegressor),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    checkpoint: Checkpoint,
}

fn err(path: &Path, message: impl ToString) -> RecsysError {
    RecsysError::Checkpoint {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::MostPop(_) => "mostpop",
            Checkpoint::UserKnn(_) => "userknn",
            Checkpoint::ItemKnn(_) => "itemknn",
            Checkpoint::Mf(_) => "mf",
            Checkpoint::Upr(_) => "upr",
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RecsysError> {
        let path = path.as_ref();
        let envelope = Envelope {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            checkpoint: self.clone(),
        };
        let file = std::fs::File::create(path).map_err(|e| err(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), &envelope).map_err(|e| err(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RecsysError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| err(path, e))?;
        let header: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(path, e))?;
        if header.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(err(path, "not a model checkpoint"));
        }
        let version = header.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(err(path, format!("unsupported checkpoint version {version:?}")));
        }
        let envelope: Envelope = serde_json::from_value(header).map_err(|e| err(path, e))?;
        Ok(envelope.checkpoint)
    }

    /// The id-based models as a [`Recommender`]; `None` for the profile model,
    /// which needs profiles and titles.
    pub fn into_recommender(self) -> Option<Box<dyn Recommender>> {
        match self {
            Checkpoint::MostPop(m) => Some(Box::new(m)),
            Checkpoint::UserKnn(m) => Some(Box::new(m)),
            Checkpoint::ItemKnn(m) => Some(Box::new(m)),
            Checkpoint::Mf(m) => Some(Box::new(m)),
            Checkpoint::Upr(_) => None,
        }
    }
}
