//! The TOML run configuration and its resolution against command-line overrides.

use std::path::{Path, PathBuf};

use intflow::kernel::KernelSpec;
use intflow::metrics::MetricsConfig;
use intflow::model::{Head, PredictorShape};
use intflow::streams::{ScenarioKind, ScenarioSpec};
use intflow::trainer::{Mode, TrainerConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Fallback output directory variable.
pub const OUTPUT_ENV: &str = "INTFLOW_OUTPUT";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

/// Network size; the input width follows from the scenario.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    /// Defaults to `BinaryDirection` for `FinancialRegimes` and `Regression` otherwise.
    pub head: Option<Head>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 8,
            head: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub kernels: Vec<KernelSpec>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub modes: Vec<Mode>,
}

fn default_kernel() -> KernelSpec {
    KernelSpec::exponential(1.0)
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Everything one seed's run depends on, echoed verbatim into its summary.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedRun {
    pub seed: u64,
    pub scenario: ScenarioSpec,
    pub model: PredictorShape,
    pub trainer: TrainerConfig,
    pub kernel: KernelSpec,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> Result<(), CliError> {
        let invalid = |e: intflow::Error| CliError::Config(e.to_string());
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        self.scenario.validate().map_err(invalid)?;
        self.trainer.validate().map_err(invalid)?;
        self.kernel.validate().map_err(invalid)?;
        self.shape().validate().map_err(invalid)?;
        for k in &self.ablate.kernels {
            k.validate().map_err(invalid)?;
        }
        let binary = self.scenario.kind == ScenarioKind::FinancialRegimes;
        if binary != (self.head() == Head::BinaryDirection) {
            return Err(CliError::Config(format!(
                "head {:?} does not fit scenario {:?}",
                self.head(),
                self.scenario.kind
            )));
        }
        Ok(())
    }

    pub fn head(&self) -> Head {
        self.model.head.unwrap_or(match self.scenario.kind {
            ScenarioKind::FinancialRegimes => Head::BinaryDirection,
            _ => Head::Regression,
        })
    }

    pub fn shape(&self) -> PredictorShape {
        PredictorShape::new(self.scenario.input_dim(), self.model.hidden_dim, 1, self.head())
    }

    /// A single `--seed` replaces the configured list.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
    }

    /// `--output`, then the config file, then `INTFLOW_OUTPUT`, then `./intflow-out`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("intflow-out"))
    }

    /// The seed feeds both the stream generator and the parameter initialization.
    pub fn resolve(&self, seed: u64) -> ResolvedRun {
        let mut scenario = self.scenario.clone();
        scenario.seed = seed;
        let mut trainer = self.trainer;
        trainer.seed = seed;
        ResolvedRun {
            seed,
            scenario,
            model: self.shape(),
            trainer,
            kernel: self.kernel.clone(),
            metrics: self.metrics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [scenario]
        kind = "StationaryNoise"
        horizon = 50
    "#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.kernel, KernelSpec::exponential(1.0));
        assert_eq!(c.shape().input_dim, 4);
        assert_eq!(c.head(), Head::Regression);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[trainer]\nlearning_rate = 0.1\n");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let text = format!("{MINIMAL}\n[trainer]\ndt = -1.0\n");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
        let text = format!("seeds = []\n{MINIMAL}");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn head_must_fit_scenario() {
        let text = "[scenario]\nkind = \"FinancialRegimes\"\nhorizon = 50\n[model]\nhead = \"Regression\"\n";
        assert!(RunConfig::parse(text).is_err());
        let text = "[scenario]\nkind = \"FinancialRegimes\"\nhorizon = 50\n";
        assert_eq!(RunConfig::parse(text).unwrap().head(), Head::BinaryDirection);
    }

    #[test]
    fn seed_reaches_stream_and_trainer() {
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.apply_seed(Some(7));
        let r = c.resolve(c.seeds[0]);
        assert_eq!((r.scenario.seed, r.trainer.seed), (7, 7));
    }

    #[test]
    fn output_flag_wins() {
        let c = RunConfig::parse(&format!("output_dir = \"cfg\"\n{MINIMAL}")).unwrap();
        assert_eq!(c.output_dir(Some(Path::new("flag"))), PathBuf::from("flag"));
        assert_eq!(c.output_dir(None), PathBuf::from("cfg"));
    }
}
