use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Framework;
use crate::error::{Error, Result};
use crate::gan_core::{load_networks, save_networks, Network};

/// A trained translator: the forward generator plus, for dual frameworks,
/// the reverse one.
#[derive(Debug, Clone)]
pub struct TranslationModel {
    pub forward: Network,
    pub reverse: Option<Network>,
    pub framework: Framework,
    pub source_domain: String,
    pub target_domain: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    framework: Framework,
    source_domain: String,
    target_domain: String,
    config_hash: String,
    seed: u64,
}

impl TranslationModel {
    pub fn input_size(&self) -> usize {
        self.forward.spec.input_size
    }

    /// Hash over both generators' parameters.
    pub fn fingerprint(&self) -> String {
        match &self.reverse {
            Some(r) => format!("{}:{}", self.forward.fingerprint(), r.fingerprint()),
            None => self.forward.fingerprint(),
        }
    }
}

pub fn save_model(model: &TranslationModel, dir: &Path) -> Result<()> {
    let meta = ModelMeta {
        framework: model.framework,
        source_domain: model.source_domain.clone(),
        target_domain: model.target_domain.clone(),
        config_hash: model.config_hash.clone(),
        seed: model.seed,
    };
    let mut nets = vec![("forward", &model.forward)];
    if let Some(r) = &model.reverse {
        nets.push(("reverse", r));
    }
    save_networks(dir, &nets, serde_json::to_value(meta)?)
}

pub fn load_model(dir: &Path) -> Result<TranslationModel> {
    let (nets, extra) = load_networks(dir)?;
    let corrupt = |reason: &str| Error::CorruptCheckpoint { path: dir.to_path_buf(), reason: reason.into() };
    let meta: ModelMeta = serde_json::from_value(extra).map_err(|_| corrupt("missing model metadata"))?;
    let mut forward = None;
    let mut reverse = None;
    for (role, net) in nets {
        match role.as_str() {
            "forward" => forward = Some(net),
            "reverse" => reverse = Some(net),
            _ => return Err(corrupt("unexpected network role")),
        }
    }
    Ok(TranslationModel {
        forward: forward.ok_or_else(|| corrupt("no forward generator"))?,
        reverse,
        framework: meta.framework,
        source_domain: meta.source_domain,
        target_domain: meta.target_domain,
        config_hash: meta.config_hash,
        seed: meta.seed,
    })
}
