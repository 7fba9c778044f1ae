//! Run configuration: tolerances, reformulation weight, decomposition and
//! branch-and-bound knobs, engine selection. Loadable from a TOML file;
//! every field has a default so partial files are fine.

use crate::model::Tolerances;
use crate::reform::DualBoundPolicy;
use crate::solver::{BendersConfig, BnbConfig, SolveLimits};
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Benders,
    BranchAndBound,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReformSection {
    pub alpha: f64,
    pub dual_bound_factor: f64,
}

impl Default for ReformSection {
    fn default() -> Self {
        ReformSection {
            alpha: 0.99,
            dual_bound_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BendersSection {
    pub max_iterations: usize,
    pub rel_gap: f64,
    pub heuristic_cadence: usize,
    pub perturb: bool,
    pub core_value: f64,
    pub blend: f64,
}

impl Default for BendersSection {
    fn default() -> Self {
        BendersSection {
            max_iterations: 200,
            rel_gap: 1e-4,
            heuristic_cadence: 30,
            perturb: true,
            core_value: 0.5,
            blend: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BnbSection {
    pub binary_cap: usize,
    pub node_cap: usize,
    pub rel_gap: f64,
}

impl Default for BnbSection {
    fn default() -> Self {
        BnbSection {
            binary_cap: 24,
            node_cap: 200_000,
            rel_gap: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub engine: Engine,
    pub preprocess: bool,
    /// Wall-clock budget per solve, seconds.
    pub time_limit_s: f64,
    /// Zero the wall-clock column in sweep CSVs for byte-identical reruns.
    pub deterministic_timing: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            engine: Engine::Benders,
            preprocess: true,
            time_limit_s: 3600.0,
            deterministic_timing: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub tolerances: Tolerances,
    pub reform: ReformSection,
    pub benders: BendersSection,
    pub bnb: BnbSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| format!("cannot read config: {e}"))?;
        Self::from_toml_str(&text).map_err(|e| format!("cannot parse config: {e}"))
    }

    pub fn time_limit(&self) -> Option<Duration> {
        if self.run.time_limit_s > 0.0 && self.run.time_limit_s.is_finite() {
            Some(Duration::from_secs_f64(self.run.time_limit_s))
        } else {
            None
        }
    }

    pub fn bnb_config(&self) -> BnbConfig {
        BnbConfig {
            binary_cap: self.bnb.binary_cap,
            node_cap: self.bnb.node_cap,
            rel_gap: self.bnb.rel_gap,
            integrality: self.tolerances.integrality,
            time_limit: self.time_limit(),
            relaxation_limits: SolveLimits::default(),
        }
    }

    pub fn benders_config(&self) -> BendersConfig {
        BendersConfig {
            max_iterations: self.benders.max_iterations,
            rel_gap: self.benders.rel_gap,
            time_limit: self.time_limit(),
            heuristic_cadence: self.benders.heuristic_cadence,
            perturb: self.benders.perturb,
            core_value: self.benders.core_value,
            blend: self.benders.blend,
            master: BnbConfig {
                binary_cap: 96,
                rel_gap: self.bnb.rel_gap,
                integrality: self.tolerances.integrality,
                ..BnbConfig::default()
            },
            sub_limits: SolveLimits::default(),
        }
    }

    pub fn dual_bound_policy(&self) -> DualBoundPolicy {
        DualBoundPolicy {
            factor: self.reform.dual_bound_factor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = RunConfig::from_toml_str(
            r#"
            [reform]
            alpha = 0.999

            [run]
            engine = "branch_and_bound"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.reform.alpha, 0.999);
        assert_eq!(cfg.run.engine, Engine::BranchAndBound);
        assert_eq!(cfg.benders.heuristic_cadence, 30);
        assert_eq!(cfg.tolerances.duality_gap, 1e-6);
    }
}
