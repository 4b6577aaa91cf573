//! Config file handling: one TOML file with per-stage sections, all
//! optional, plus gateway settings. Every omitted value falls back to the
//! library defaults so an empty file is a valid config.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use routelab::pipeline::PipelineConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub addr: String,
    /// Router id the gateway scores with (`r_cls`, `r_mf`, `r_sw`, `r_llm`).
    pub router: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8787".to_string(),
            router: "r_cls".to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub out_dir: Option<PathBuf>,
    pub serve: ServeConfig,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let raw = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
                let cfg: FileConfig = toml::from_str(&raw)
                    .map_err(|e| anyhow::anyhow!("malformed config {}: {e}", p.display()))?;
                Ok(cfg)
            }
        }
    }

    /// Output root: `--out` flag beats the config file beats
    /// `ROUTELAB_OUT` beats `./runs/default`.
    pub fn resolve_out(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.out_dir.clone())
            .or_else(|| std::env::var_os("ROUTELAB_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs/default"))
    }
}
