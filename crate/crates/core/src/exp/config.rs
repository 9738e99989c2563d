use crate::envsim::{EnvConfig, RewardWeights};
use crate::error::{Error, Result};
use crate::scheduler::{AgentConfig, ScheduleKind};
use crate::streams::StreamConfig;
use crate::vflcore::{EngineConfig, HindsightConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One experiment arm. Every field that influences results is serialized
/// into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub stream: StreamConfig,
    pub engine: EngineConfig,
    /// Horizon `T` of the measured run.
    pub horizon: usize,
    pub schedule: ScheduleKind,
    /// Explicit per-sensor iteration counts; replaces the schedule's
    /// baseline vector when present (not allowed with DAO-PPO).
    pub iterations: Option<Vec<usize>>,
    pub agent: AgentConfig,
    /// Agent training rounds `T_ag` before the measured run.
    pub agent_rounds: usize,
    /// Pre-trained actor; skips agent training.
    pub agent_path: Option<PathBuf>,
    pub weights: RewardWeights,
    pub env: EnvConfig,
    /// Fit a hindsight comparator and fill the regret column.
    pub regret: bool,
    pub hindsight: HindsightConfig,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            stream: StreamConfig::default(),
            engine: EngineConfig::default(),
            horizon: 150,
            schedule: ScheduleKind::Homogeneous,
            iterations: None,
            agent: AgentConfig::default(),
            agent_rounds: 300,
            agent_path: None,
            weights: RewardWeights::default(),
            env: EnvConfig::default(),
            regret: true,
            hindsight: HindsightConfig::default(),
            seeds: (0..10).collect(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn sensors(&self) -> usize {
        self.stream.sensors()
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.engine.validate()?;
        self.agent.validate()?;
        self.weights.validate()?;
        self.env.validate()?;
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least one round".into()));
        }
        if self.engine.learning_period > self.horizon {
            return Err(Error::Config(format!(
                "denoising period {} exceeds horizon {}",
                self.engine.learning_period, self.horizon
            )));
        }
        if let Some(it) = &self.iterations {
            if self.schedule == ScheduleKind::Adaptive {
                return Err(Error::Config(
                    "explicit iterations conflict with the DAO-PPO schedule".into(),
                ));
            }
            if it.len() != self.sensors() {
                return Err(Error::Config(format!(
                    "{} iteration counts for {} sensors",
                    it.len(),
                    self.sensors()
                )));
            }
            if it.contains(&0) {
                return Err(Error::Config("iteration counts must be at least 1".into()));
            }
        }
        if self.schedule == ScheduleKind::Adaptive && self.agent_path.is_none() && self.agent_rounds == 0 {
            return Err(Error::Config("DAO-PPO needs agent_rounds > 0 or an agent_path".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a JSON config. Unreadable files count as
    /// configuration errors.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_json(r#"{"horizon": 10, "horizn": 3}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = ExperimentConfig::from_json(r#"{"engine": {"eta": 0.1, "etaa": 1}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg =
            ExperimentConfig::from_json(r#"{"horizon": 20, "engine": {"noise_mode": "DAO-NR", "learning_period": 5}}"#)
                .unwrap();
        assert_eq!(cfg.horizon, 20);
        assert_eq!(cfg.engine.learning_period, 5);
        assert_eq!(cfg.stream, StreamConfig::default());
    }

    #[test]
    fn period_beyond_horizon_rejected() {
        let r = ExperimentConfig::from_json(r#"{"horizon": 10, "engine": {"learning_period": 20}}"#);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
