//! Saved models: a `.kdpn` parameter file plus a JSON card at `<path>.json`
//! describing what the parameters mean.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, FormatError, Result};
use crate::numkit::{load_net, save_net, FeedForwardNet};
use crate::trajkit::{NormStats, WindowShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Kdp { noise_dim: usize },
    Diffuser { steps: usize, beta_start: f64, beta_end: f64, time_embed_dim: usize },
    Bc,
    Scorer { gamma: f32, label_scale: f32 },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Kdp { .. } => "kdp",
            ModelKind::Diffuser { .. } => "diffuser",
            ModelKind::Bc => "bc",
            ModelKind::Scorer { .. } => "scorer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub model: ModelKind,
    pub env: String,
    pub shape: WindowShape,
    pub norm: NormStats,
    pub config_hash: String,
    pub train_steps: usize,
}

pub fn card_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn save_model(net: &FeedForwardNet, card: &ModelCard, path: &Path) -> Result<()> {
    save_net(net, path)?;
    let cp = card_path(path);
    let json = serde_json::to_string_pretty(card).expect("card serializes") + "\n";
    fs::write(&cp, json).map_err(|e| Error::io(&cp, e))
}

pub fn load_model(path: &Path) -> Result<(FeedForwardNet, ModelCard)> {
    let net = load_net(path)?;
    let cp = card_path(path);
    let text = fs::read_to_string(&cp).map_err(|e| Error::io(&cp, e))?;
    let card: ModelCard = serde_json::from_str(&text).map_err(|e| FormatError::Header(format!("model card: {e}")))?;
    Ok((net, card))
}

/// Hex SHA-256 of the value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn model_round_trip() {
        let net = FeedForwardNet::xavier(&[3, 4, 2], &mut rng::seeded(1)).unwrap();
        let card = ModelCard {
            model: ModelKind::Scorer { gamma: 0.99, label_scale: 3.5 },
            env: "pointmaze2d".into(),
            shape: WindowShape::new(2, 1, 1).unwrap(),
            norm: NormStats { mean: vec![0.1, 0.2], std: vec![1.0 / 3.0, 7.0] },
            config_hash: config_hash(&"x"),
            train_steps: 5,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.kdpn");
        save_model(&net, &card, &p).unwrap();
        let (n2, c2) = load_model(&p).unwrap();
        assert_eq!(n2, net);
        assert_eq!(c2, card);
    }

    #[test]
    fn hash_tracks_content() {
        assert_eq!(config_hash(&(1, "a")), config_hash(&(1, "a")));
        assert_ne!(config_hash(&(1, "a")), config_hash(&(2, "a")));
        assert_eq!(config_hash(&0).len(), 64);
    }
}
