use std::path::{Path, PathBuf};

use super::{CliError, Result};
use crate::config::KvDocument;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    /// Directory written by `generate`.
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Per-epoch TSV log.
    pub log: PathBuf,
}

/// Training run description: `[paths]`, `[model]` and `[train]` sections.
/// Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: RunPaths,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let doc = KvDocument::parse(text)?;
        doc.check_sections(&["paths", "model", "train"])?;

        let mut paths = doc.section("paths");
        let resolve = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let data_dir = resolve(paths.require("data_dir")?);
        let checkpoint = resolve(paths.require("checkpoint")?);
        let log = match paths.get::<String>("log")? {
            Some(p) => resolve(p),
            None => checkpoint.with_extension("log.tsv"),
        };
        paths.finish()?;

        let mut model_sec = doc.section("model");
        let model = ModelConfig::from_section(&mut model_sec)
            .map_err(|e| CliError::Config(e.to_string()))?;
        model_sec.finish()?;
        model
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let mut train_sec = doc.section("train");
        let train = TrainConfig::from_section(&mut train_sec)
            .map_err(|e| CliError::Config(e.to_string()))?;
        train_sec.finish()?;

        Ok(Self {
            paths: RunPaths {
                data_dir,
                checkpoint,
                log,
            },
            model,
            train,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }
}
