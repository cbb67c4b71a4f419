use std::fs;
use std::path::{Path, PathBuf};

use chargetime::gbm::{CvGrid, GbmConfig};
use chargetime::orchestrator::OrchestratorConfig;
use chargetime::predictor::IntegrationConfig;
use chargetime::rl::DqnConfig;
use chargetime::simulator::{DatasetRanges, SimulatorConfig};
use chargetime::{Error, Result};
use serde::{Deserialize, Serialize};

pub const OUT_DIR_ENV: &str = "CHARGETIME_OUT";
pub const DEFAULT_OUT_DIR: &str = "chargetime-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n: usize,
    pub ranges: DatasetRanges,
    pub simulator: SimulatorConfig,
    pub split: (f64, f64, f64),
    pub split_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n: 5000,
            ranges: DatasetRanges::default(),
            simulator: SimulatorConfig::default(),
            split: (0.64, 0.16, 0.20),
            split_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticalConfig {
    pub gbm: GbmConfig,
    /// Training rows are taken every `row_stride` grid points.
    pub row_stride: usize,
    pub cv_grid: CvGrid,
    pub cv_folds: usize,
    /// Coarser row stride used inside cross-validation.
    pub cv_row_stride: usize,
}

impl Default for AnalyticalConfig {
    fn default() -> Self {
        AnalyticalConfig {
            gbm: GbmConfig::default(),
            row_stride: 5,
            cv_grid: CvGrid::reference(),
            cv_folds: 5,
            cv_row_stride: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlRunConfig {
    pub dqn: DqnConfig,
    pub episodes: usize,
    pub paper_scale_episodes: usize,
    /// Validation sessions scored every this many episodes (0 disables).
    pub eval_every: usize,
    pub eval_sessions: usize,
}

impl Default for RlRunConfig {
    fn default() -> Self {
        RlRunConfig {
            dqn: DqnConfig::default(),
            episodes: 2000,
            paper_scale_episodes: 10_000,
            eval_every: 0,
            eval_sessions: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub curve_sizes: Vec<usize>,
    pub curve_runs: usize,
    /// Trees per analytical model inside the learning curve.
    pub curve_trees: usize,
    pub heat_soc_bins: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            curve_sizes: vec![100, 200, 400, 800, 1600, 3200],
            curve_runs: 5,
            curve_trees: 300,
            heat_soc_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorSettings {
    pub ood_margin: f64,
    pub kickoff_episodes: usize,
}

impl Default for OrchestratorSettings {
    fn default() -> Self {
        let d = OrchestratorConfig::default();
        OrchestratorSettings {
            ood_margin: d.ood_margin,
            kickoff_episodes: d.kickoff_episodes,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub analytical: AnalyticalConfig,
    pub rl: RlRunConfig,
    pub integration: IntegrationConfig,
    pub orchestrator: OrchestratorSettings,
    pub report: ReportConfig,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n == 0 {
            return Err(Error::Config("dataset.n must be >= 1".into()));
        }
        d.simulator.validate()?;
        self.analytical.gbm.validate()?;
        if self.analytical.row_stride == 0 || self.analytical.cv_row_stride == 0 {
            return Err(Error::Config("row strides must be >= 1".into()));
        }
        self.rl.dqn.validate()?;
        self.integration.validate()?;
        self.orchestrator_config().validate()?;
        if self.report.curve_runs == 0 {
            return Err(Error::Config("report.curve_runs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn orchestrator_config(&self) -> OrchestratorConfig {
        OrchestratorConfig {
            ood_margin: self.orchestrator.ood_margin,
            kickoff_episodes: self.orchestrator.kickoff_episodes,
            dqn: self.rl.dqn.clone(),
            simulator: self.dataset.simulator,
            integration: self.integration,
        }
    }
}

/// Fixed locations of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn split_manifest(&self) -> PathBuf {
        self.dataset_dir().join("split.json")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn analytical_model(&self) -> PathBuf {
        self.models_dir().join("analytical.json")
    }

    pub fn cv_table(&self) -> PathBuf {
        self.models_dir().join("hyperparameters.csv")
    }

    pub fn agent(&self) -> PathBuf {
        self.models_dir().join("agent.bin")
    }

    pub fn history_csv(&self) -> PathBuf {
        self.models_dir().join("history.csv")
    }

    pub fn history_json(&self) -> PathBuf {
        self.models_dir().join("history.json")
    }

    pub fn orchestrator_dir(&self) -> PathBuf {
        self.root.join("orchestrator")
    }

    pub fn evaluation_dir(&self) -> PathBuf {
        self.root.join("evaluation")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        assert_eq!(c.dataset.n, 5000);
        assert_eq!(c.analytical.gbm.m_trees, 1000);
        assert_eq!(c.rl.episodes, 2000);
    }

    #[test]
    fn partial_files_fill_defaults_and_typos_fail() {
        let c: RunConfig = serde_json::from_str(r#"{"dataset": {"n": 10}}"#).unwrap();
        assert_eq!(c.dataset.n, 10);
        assert_eq!(c.rl, RlRunConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"datset": {}}"#).is_err());
    }
}
