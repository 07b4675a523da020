use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::SurveyError;

pub const CONFIG_ENV: &str = "XALIGN_CONFIG";
pub const PORT_ENV: &str = "XALIGN_PORT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Corpus directory; the service answers 503 until one is loaded.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Seed for the per-participant presentation order.
    #[serde(default)]
    pub seed: u64,
    /// Built annotation UI to serve at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig {
            bind: default_bind(),
            port: default_port(),
            corpus: None,
            seed: 0,
            static_dir: None,
        }
    }
}

impl SurveyConfig {
    pub fn from_toml(text: &str) -> Result<Self, SurveyError> {
        toml::from_str(text).map_err(|e| SurveyError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, SurveyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SurveyError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(c) = &cfg.corpus {
            cfg.corpus = Some(base.join(c));
        }
        if let Some(s) = &cfg.static_dir {
            cfg.static_dir = Some(base.join(s));
        }
        Ok(cfg)
    }

    /// Loads `path`, or `$XALIGN_CONFIG` when `path` is `None`, or the
    /// defaults; then applies `$XALIGN_PORT`.
    pub fn resolve(path: Option<&Path>) -> Result<Self, SurveyError> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let mut cfg = match path.map(Path::to_path_buf).or(env_path) {
            Some(p) => Self::from_file(&p)?,
            None => Self::default(),
        };
        cfg.apply_env(std::env::var(PORT_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, port: Option<&str>) -> Result<(), SurveyError> {
        if let Some(p) = port {
            self.port = p
                .trim()
                .parse()
                .map_err(|_| SurveyError::Config(format!("{PORT_ENV}={p:?} is not a port number")))?;
        }
        Ok(())
    }

    pub fn address(&self) -> String {
        format!("{}:{}", self.bind, self.port)
    }
}
