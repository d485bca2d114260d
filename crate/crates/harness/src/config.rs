use std::path::{Path, PathBuf};

use planbudget_core::prompting::{Method, PromptVariant};
use planbudget_core::scheduling::ScheduleParams;
use planbudget_gateway::GatewayConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const DEFAULT_HARD_CUTOFF: u32 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    ExactMatch,
    RougeL,
    /// Runs `pass_fail_command` once per example.
    ExternalPassFail,
}

/// Dataset-specific prompt wording.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub instruction: String,
    pub output_format: String,
    /// Reference questions of known level for the difficulty prompt.
    pub benchmarks: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default)]
    pub schedule: ScheduleParams,
    #[serde(default = "default_budget_init")]
    pub budget_init: u64,
    #[serde(default = "default_budget_per_level")]
    pub budget_per_level: u64,
    #[serde(default = "default_hard_cutoff")]
    pub hard_cutoff: u32,
    #[serde(default = "default_n_runs")]
    pub n_runs: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Level given to records without one.
    #[serde(default = "default_level")]
    pub default_level: u8,
    /// Domain given to records without one.
    #[serde(default = "default_domain")]
    pub domain: String,
    /// Relative to the config file.
    pub dataset_path: PathBuf,
    /// Dataset label in reports; the file stem when absent.
    #[serde(default)]
    pub dataset_name: Option<String>,
    pub evaluator: EvaluatorKind,
    #[serde(default)]
    pub pass_fail_command: Vec<String>,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub planner: Option<GatewayConfig>,
    pub reasoner: GatewayConfig,
    /// Directory of the file this was loaded from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_budget_init() -> u64 {
    50
}

fn default_budget_per_level() -> u64 {
    50
}

fn default_hard_cutoff() -> u32 {
    DEFAULT_HARD_CUTOFF
}

fn default_n_runs() -> u32 {
    5
}

fn default_concurrency() -> usize {
    4
}

fn default_level() -> u8 {
    3
}

fn default_domain() -> String {
    "math".into()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.budget_init < 1 {
            return fail("budget_init must be at least 1".into());
        }
        if u64::from(self.hard_cutoff) < self.budget_init {
            return fail(format!(
                "hard_cutoff {} is below budget_init {}",
                self.hard_cutoff, self.budget_init
            ));
        }
        if self.n_runs < 1 {
            return fail("n_runs must be at least 1".into());
        }
        if self.concurrency < 1 {
            return fail("concurrency must be at least 1".into());
        }
        if !(1..=5).contains(&self.default_level) {
            return fail(format!("default_level {} is outside 1..=5", self.default_level));
        }
        if self.method.is_planned() && self.planner.is_none() {
            return fail(format!("method {} needs a [planner] backend", self.method.as_str()));
        }
        if self.evaluator == EvaluatorKind::ExternalPassFail && self.pass_fail_command.is_empty() {
            return fail("external_pass_fail needs pass_fail_command".into());
        }
        self.schedule.validate()?;
        self.reasoner
            .validate()
            .map_err(|e| HarnessError::Config(format!("reasoner: {e}")))?;
        if let Some(planner) = &self.planner {
            planner
                .validate()
                .map_err(|e| HarnessError::Config(format!("planner: {e}")))?;
        }
        Ok(())
    }

    pub fn dataset_file(&self) -> PathBuf {
        self.base_dir.join(&self.dataset_path)
    }

    pub fn dataset_label(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| {
            self.dataset_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn variant(&self) -> PromptVariant {
        PromptVariant {
            kind: self.method,
            instruction: self.prompt.instruction.clone(),
            output_format: self.prompt.output_format.clone(),
        }
    }
}
