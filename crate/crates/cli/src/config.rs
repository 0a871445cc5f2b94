//! Run configuration file.
//!
//! ```toml
//! version = 1
//!
//! [space]
//! preset = "acdc76"
//!
//! [search]
//! p = 42
//! seed = 7
//!
//! [evaluator]
//! uri = "oracle:separable?seed=7"
//! workers = 15
//!
//! [output]
//! dir = "runs/acdc"
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use gridpg_core::evaluation::{EvaluatorUri, TrainerEvaluator, DEFAULT_RETRIES, DEFAULT_TIMEOUT};
use gridpg_core::search_space::{preset, DimensionSpec, SearchSpace, ACDC76, DEFAULT_CLASS_COUNT};
use gridpg_core::SearchConfig;
use serde::{Deserialize, Serialize};

use crate::exit::{Failure, ResultExt, CONFIG, EVALUATOR};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub search: SearchConfig,
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Either a named preset or an inline dimension list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensions: Option<Vec<DimensionSpec>>,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            preset: Some(ACDC76.into()),
            dimensions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorConfig {
    pub uri: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_class_count")]
    pub class_count: u32,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            class_count: default_class_count(),
        }
    }
}

fn default_workers() -> usize {
    1
}

fn default_timeout_secs() -> u64 {
    DEFAULT_TIMEOUT.as_secs()
}

fn default_retries() -> u32 {
    DEFAULT_RETRIES
}

fn default_dir() -> PathBuf {
    PathBuf::from("gridpg-run")
}

fn default_class_count() -> u32 {
    DEFAULT_CLASS_COUNT
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(CONFIG, format!("reading config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|f| f.context(format!("config {}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|span| {
                    let (line, column) = line_column(text, span.start);
                    format!(" at line {line}, column {column}")
                })
                .unwrap_or_default();
            Failure::new(CONFIG, format!("{}{at}", e.message()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.version != CONFIG_VERSION {
            return Err(Failure::new(
                CONFIG,
                format!(
                    "unsupported config version {} (expected {CONFIG_VERSION})",
                    self.version
                ),
            ));
        }
        self.space()?;
        self.search.validate().code(CONFIG)?;
        EvaluatorUri::parse(&self.evaluator.uri).code(CONFIG)?;
        if self.evaluator.workers == 0 {
            return Err(Failure::new(CONFIG, "evaluator.workers must be at least 1"));
        }
        if self.evaluator.timeout_secs == 0 {
            return Err(Failure::new(
                CONFIG,
                "evaluator.timeout_secs must be positive",
            ));
        }
        if self.output.class_count < 2 {
            return Err(Failure::new(
                CONFIG,
                "output.class_count must be at least 2",
            ));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<SearchSpace, Failure> {
        match (&self.space.preset, &self.space.dimensions) {
            (Some(name), None) => preset(name)
                .ok_or_else(|| Failure::new(CONFIG, format!("unknown space preset `{name}`"))),
            (None, Some(dims)) => SearchSpace::new(dims.clone()).code(CONFIG),
            _ => Err(Failure::new(
                CONFIG,
                "[space] needs exactly one of `preset` or `dimensions`",
            )),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.evaluator.timeout_secs)
    }

    /// Echo stored in checkpoints so a run can be resumed from the file alone.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is plain data")
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, Failure> {
        let config: RunConfig = serde_json::from_value(value)
            .map_err(|e| Failure::new(CONFIG, format!("checkpoint run config: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

/// Fails early when a trainer command cannot be found.
pub fn check_trainer(trainer: &TrainerEvaluator) -> Result<(), Failure> {
    let program = Path::new(&trainer.command.program);
    let found = if program.components().count() > 1 {
        program.is_file()
    } else {
        std::env::var_os("PATH")
            .map(|paths| std::env::split_paths(&paths).any(|dir| dir.join(program).is_file()))
            .unwrap_or(false)
    };
    if found {
        Ok(())
    } else {
        Err(Failure::new(
            EVALUATOR,
            format!("trainer program `{}` not found", trainer.command.program),
        ))
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
