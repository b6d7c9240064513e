use std::path::{Path, PathBuf};

use explainer_core::config::{ConfigError, EngineConfig};
use explainer_service::CorsConfig;
use thiserror::Error;

pub const DEFAULT_CONFIG_PATH: &str = "explainer.toml";

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config {path}: {source}")]
    Invalid { path: PathBuf, source: ConfigError },
}

/// The operator's config document: the engine sections plus an optional
/// `[service]` table for the HTTP API.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub engine: EngineConfig,
    pub service: CorsConfig,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigFileError> {
        let parse_err = |message: String| ConfigFileError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let service = match table.remove("service") {
            Some(v) => v
                .try_into()
                .map_err(|e: toml::de::Error| parse_err(format!("[service]: {e}")))?,
            None => CorsConfig::default(),
        };
        let mut engine: EngineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        // Relative template directories are resolved against the config file.
        if let (Some(dir), Some(base)) = (&engine.template_dir, path.parent()) {
            if dir.is_relative() {
                engine.template_dir = Some(base.join(dir));
            }
        }
        engine
            .validate()
            .map_err(|source| ConfigFileError::Invalid {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self { engine, service })
    }

    /// Load from an explicit path (which must exist), or from the default
    /// path if present, or fall back to built-in defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigFileError> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let p = PathBuf::from(DEFAULT_CONFIG_PATH);
                if !p.exists() {
                    return Ok(Self::default());
                }
                p
            }
        };
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigFileError::Read {
            path: path.clone(),
            source,
        })?;
        Self::parse(&text, &path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use explainer_core::llm_backend::BackendKind;

    #[test]
    fn sections_parse() {
        let text = r#"
template_id = "default"

[embedder]
dim = 128

[backend]
kind = "http"
endpoint_url = "http://localhost:8081"

[backend.sampling]
temp = 0.0

[retrieval]
k = 10
lambda = 0.7

[service]
allowed_origins = ["http://localhost:5173"]
"#;
        let cfg = ConfigFile::parse(text, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.engine.embedder.dim, 128);
        assert_eq!(cfg.engine.backend.kind, BackendKind::Http);
        assert_eq!(cfg.engine.backend.n_batch, 256);
        assert_eq!(cfg.engine.retrieval.k, 10);
        assert_eq!(cfg.service.allowed_origins, ["http://localhost:5173"]);
    }

    #[test]
    fn empty_is_default() {
        assert_eq!(
            ConfigFile::parse("", Path::new("x.toml")).unwrap(),
            ConfigFile::default()
        );
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            ConfigFile::parse("[embedder]\nsize = 3\n", Path::new("x.toml")),
            Err(ConfigFileError::Parse { .. })
        ));
        assert!(matches!(
            ConfigFile::parse("[retrieval]\nlambda = 3.0\n", Path::new("x.toml")),
            Err(ConfigFileError::Invalid { .. })
        ));
        assert!(matches!(
            ConfigFile::parse("[backend]\nkind = \"http\"\n", Path::new("x.toml")),
            Err(ConfigFileError::Invalid { .. })
        ));
    }
}
