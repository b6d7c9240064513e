use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context_prompt::{PromptError, TemplateRegistry, DEFAULT_TEMPLATE_ID};
use crate::embedder::{EmbedderConfig, EmbedderConfigError};
use crate::llm_backend::{BackendConfig, BackendConfigError};
use crate::vector_store::{RetrievalParams, StoreError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("embedder: {0}")]
    Embedder(#[from] EmbedderConfigError),
    #[error("backend: {0}")]
    Backend(#[from] BackendConfigError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] StoreError),
    #[error("template: {0}")]
    Template(#[from] PromptError),
}

/// Everything needed to build an engine. Serialized as one document with
/// `[embedder]`, `[backend]` and `[retrieval]` sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub template_id: String,
    /// Extra `*.txt` templates, keyed by file stem.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    pub embedder: EmbedderConfig,
    pub backend: BackendConfig,
    pub retrieval: RetrievalParams,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            template_id: DEFAULT_TEMPLATE_ID.to_string(),
            template_dir: None,
            embedder: EmbedderConfig::default(),
            backend: BackendConfig::default(),
            retrieval: RetrievalParams::default(),
        }
    }
}

impl EngineConfig {
    pub fn templates(&self) -> Result<TemplateRegistry, ConfigError> {
        let mut reg = TemplateRegistry::new();
        if let Some(dir) = &self.template_dir {
            reg.load_dir(dir)?;
        }
        reg.get(&self.template_id)?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.embedder.validate()?;
        self.backend.validate()?;
        self.retrieval.validate()?;
        self.templates()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        EngineConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_template_rejected() {
        let cfg = EngineConfig {
            template_id: "missing".into(),
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::Template(PromptError::TemplateNotFound(_)))
        ));
    }

    #[test]
    fn bad_retrieval_rejected() {
        let mut cfg = EngineConfig::default();
        cfg.retrieval.lambda = 2.0;
        assert!(matches!(cfg.validate(), Err(ConfigError::Retrieval(_))));
    }
}
