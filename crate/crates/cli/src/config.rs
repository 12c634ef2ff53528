use std::fs;
use std::path::Path;

use hetnet::experiments::{ReproduceConfig, SweepOptions};
use hetnet::phy::McsTable;
use hetnet::scenario::ScenarioConfig;
use hetnet::simulator::FileSizeDist;
use hetnet::solvers::Budget;
use hetnet::ua::PsdMacroBand;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Everything a run depends on besides the command-line flags.
///
/// All sections are optional in the file; missing keys take the desk-scale
/// defaults and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    /// Realization `r` uses scenario seed `scenario.seed + r`.
    pub realizations: usize,
    pub solver: SolverConfig,
    pub reproduce: ReproduceSettings,
    pub simulation: SimulationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub budget: Budget,
    /// Bisection precision of the max-delay optimum, seconds.
    pub epsilon: f64,
    /// Duality-gap tolerance of the average-delay bound.
    pub tol: f64,
    pub psd_macro_band: PsdMacroBand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceSettings {
    pub k_step: usize,
    pub delay_k_step: usize,
    pub lambda_fractions: Vec<f64>,
    pub mid_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: f64,
    /// Defaults to a tenth of the horizon.
    pub warmup: Option<f64>,
    pub replications: usize,
    pub file_sizes: FileSizeDist,
}

impl Default for RunConfig {
    fn default() -> Self {
        let desk = ReproduceConfig::desk(ScenarioConfig::desk_scale().seed, 20);
        RunConfig {
            scenario: desk.base,
            realizations: desk.realizations,
            solver: SolverConfig {
                budget: desk.options.budget,
                epsilon: desk.options.epsilon,
                tol: desk.options.tol,
                psd_macro_band: desk.options.psd_macro_band,
            },
            reproduce: ReproduceSettings {
                k_step: desk.k_step,
                delay_k_step: desk.delay_k_step,
                lambda_fractions: desk.lambda_fractions,
                mid_range: [desk.mid_range.0, desk.mid_range.1],
            },
            simulation: SimulationConfig::default(),
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        RunConfig::default().solver
    }
}

impl Default for ReproduceSettings {
    fn default() -> Self {
        RunConfig::default().reproduce
    }
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            horizon: 2_000.0,
            warmup: None,
            replications: 10,
            file_sizes: FileSizeDist::Exponential,
        }
    }
}

/// Overlays `over` onto `base` key by key. Tagged objects (with a `kind`
/// key) are replaced whole so that variant fields do not leak across variants.
fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    use serde_json::Value;
    match (base, over) {
        (Value::Object(b), Value::Object(o)) if !b.contains_key("kind") => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Reads a JSON file laid over the desk-scale defaults; unknown keys are errors.
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let err = |e: serde_json::Error| CliError::Config(format!("{}: {e}", p.display()));
                let mut merged = serde_json::to_value(RunConfig::default()).expect("config serializes");
                merge(&mut merged, serde_json::from_str(&text).map_err(err)?);
                serde_json::from_value(merged).map_err(err)?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.realizations == 0 {
            return bad("realizations must be at least 1");
        }
        if !(self.solver.epsilon > 0.0) || !(self.solver.tol > 0.0) {
            return bad("solver.epsilon and solver.tol must be positive");
        }
        if self.reproduce.k_step == 0 || self.reproduce.delay_k_step == 0 {
            return bad("reproduce.k_step and reproduce.delay_k_step must be positive");
        }
        if self.reproduce.lambda_fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return bad("reproduce.lambda_fractions must be positive");
        }
        let s = &self.simulation;
        if !(s.horizon > 0.0) || s.replications == 0 {
            return bad("simulation.horizon and simulation.replications must be positive");
        }
        if let Some(w) = s.warmup {
            if !(w >= 0.0 && w < s.horizon) {
                return bad("simulation.warmup must lie in [0, horizon)");
            }
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.realizations as u64).map(|r| self.scenario.seed + r).collect()
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            budget: self.solver.budget,
            epsilon: self.solver.epsilon,
            tol: self.solver.tol,
            psd_macro_band: self.solver.psd_macro_band,
            mcs: McsTable::default(),
        }
    }

    pub fn reproduce_config(&self) -> ReproduceConfig {
        ReproduceConfig {
            base: self.scenario.clone(),
            realizations: self.realizations,
            seed: self.scenario.seed,
            k_step: self.reproduce.k_step,
            delay_k_step: self.reproduce.delay_k_step,
            lambda_fractions: self.reproduce.lambda_fractions.clone(),
            mid_range: (self.reproduce.mid_range[0], self.reproduce.mid_range[1]),
            options: self.sweep_options(),
        }
    }
}
