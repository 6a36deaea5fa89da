//! Experiment configuration: task, system constants, channel and solver
//! settings, read from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{GainDistribution, DEFAULT_NODE_COUNT, DEFAULT_TAIL_CUT};
use crate::ergodic::{self, WfOptions};
use crate::error::{Error, Result};
use crate::fastdp::{GridConfig, DEFAULT_INTERVALS};
use crate::model::{SystemParams, TaskProfile};
use crate::slow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub cycles_mcycles: Vec<f64>,
    pub data_kbits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub d_intervals: usize,
    pub h_nodes: usize,
    pub tail_cut: f64,
    pub slow_tol_s: f64,
    pub wf_tol: f64,
    pub wf_max_iter: usize,
    pub seed: u64,
    pub episodes: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            d_intervals: DEFAULT_INTERVALS,
            h_nodes: DEFAULT_NODE_COUNT,
            tail_cut: DEFAULT_TAIL_CUT,
            slow_tol_s: slow::DEFAULT_TOL,
            wf_tol: ergodic::DEFAULT_TOL,
            wf_max_iter: ergodic::DEFAULT_MAX_ITER,
            seed: 1,
            episodes: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub system: SystemParams,
    pub channel: GainDistribution,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    /// The ten-sub-task reference instance.
    fn default() -> Self {
        Self {
            task: TaskConfig {
                cycles_mcycles: vec![7.0, 30.0, 25.0, 16.0, 32.0, 15.0, 37.0, 44.0, 24.0, 40.0],
                data_kbits: vec![36.0, 22.0, 30.0, 6.0, 47.0, 30.0, 5.0, 47.0, 14.0, 49.0],
            },
            system: SystemParams {
                bandwidth_hz: 1e6,
                k0: 1e-28,
                f_max_hz: 5e8,
                f_local_hz: 5e8,
                f_edge_hz: 3e9,
                deadline_s: 0.35,
                coherence_s: 0.02,
            },
            channel: GainDistribution::Exponential { mean: 50.0 },
            solver: SolverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.profile()?;
        self.system.validate().map_err(wrap)?;
        self.channel.validate().map_err(wrap)?;
        self.grid().validate().map_err(wrap)?;
        let s = &self.solver;
        if !(s.slow_tol_s > 0.0) || !(s.wf_tol > 0.0) || s.wf_max_iter == 0 {
            return Err(Error::Config("solver tolerances and iteration caps must be positive".into()));
        }
        if !(0.0..1.0).contains(&s.tail_cut) {
            return Err(Error::Config("solver.tail_cut must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<TaskProfile> {
        TaskProfile::from_mcycles_kbits(&self.task.cycles_mcycles, &self.task.data_kbits)
            .map_err(|e| Error::Config(format!("task: {e}")))
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig { d_intervals: self.solver.d_intervals, h_nodes: self.solver.h_nodes, tail_cut: self.solver.tail_cut }
    }

    pub fn wf_options(&self) -> WfOptions {
        WfOptions { tol: self.solver.wf_tol, max_iter: self.solver.wf_max_iter, ..WfOptions::default() }
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("plain data serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_matches_defaults() {
        let text = include_str!("../configs/default.json");
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        v["system"]["warp"] = serde_json::json!(1);
        assert!(matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::Config(_))));

        let mut c = ExperimentConfig::default();
        c.system.f_edge_hz = 1e8;
        assert!(ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).is_err());
        let mut c = ExperimentConfig::default();
        c.task.data_kbits.pop();
        assert!(ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).is_err());
    }

    #[test]
    fn solver_section_is_optional() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        v.as_object_mut().unwrap().remove("solver");
        assert_eq!(ExperimentConfig::from_json(&v.to_string()).unwrap(), ExperimentConfig::default());
    }
}
