//! Run configuration: a strict TOML schema with physical units (ms, m, dBm).

use std::path::Path;

use rid_core::airspace::{EnvError, Environment, NeighborSet, ScenarioConfig};
use rid_core::madqn::TrainConfig;
use rid_core::protocol::{SlotParams, TimingMs};
use rid_core::radio::{PathLossConfig, Thresholds};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    /// Largest transmission rate an agent may choose, in messages per GNSS cycle.
    pub psi_max: u32,
    pub timing: TimingMs,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            psi_max: 10,
            timing: TimingMs::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub path_loss: PathLossConfig,
    pub thresholds: Thresholds,
    /// Delay charged to a link no phase of which ever matches.
    pub unreachable_delay_ms: f64,
    pub neighbor_set: NeighborSet,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self {
            path_loss: PathLossConfig::default(),
            thresholds: Thresholds::default(),
            unreachable_delay_ms: 2000.0,
            neighbor_set: NeighborSet::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Randomized parameter sets checked in addition to the active timing.
    pub random_cases: usize,
    /// Upper bound on the scan rotation of randomized cases, in slots.
    pub max_period_slots: u64,
    /// GNSS-cycle start offsets checked for every rate at the active timing.
    pub offsets: Vec<u64>,
    /// Replaces the BLE advertising interval (slots) for every check.
    pub ble_interval_override: Option<u64>,
    /// Report how far randomized advertising delays move the first reception
    /// instead of checking set equality.
    pub randomized_rd: bool,
    pub rd_trials: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            random_cases: 100,
            max_period_slots: 128,
            offsets: vec![0, 1, 37, 100, 191],
            ble_interval_override: None,
            randomized_rd: false,
            rd_trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub replicates: usize,
    /// Steps simulated per replicate in the sweeps; `None` uses `scenario.t_max`.
    pub sweep_steps: Option<usize>,
    /// Airspace side lengths for the rate sweep and density comparison.
    pub sizes_m: Vec<f64>,
    pub ble_rate: u32,
    pub wifi_rate: u32,
    pub high_density_m: Vec<f64>,
    pub low_density_m: Vec<f64>,
    pub eval_seeds: usize,
    pub verify: VerifySection,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seed: 1,
            replicates: 20,
            sweep_steps: None,
            sizes_m: vec![100.0, 500.0, 1000.0, 1500.0, 2000.0, 3000.0, 5000.0, 10000.0],
            ble_rate: 9,
            wifi_rate: 10,
            high_density_m: vec![100.0, 500.0, 1000.0],
            low_density_m: vec![3000.0, 5000.0, 10000.0],
            eval_seeds: 5,
            verify: VerifySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub protocol: ProtocolSection,
    pub radio: RadioSection,
    pub training: TrainConfig,
    pub experiment: ExperimentSection,
}

fn positive_sizes(name: &str, sizes: &[f64]) -> Result<(), CliError> {
    if sizes.is_empty() || sizes.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(CliError::Config(format!("{name} must be a non-empty list of positive sizes")));
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.training.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.slot_params()?;
        let ex = &self.experiment;
        if ex.replicates == 0 || ex.eval_seeds == 0 {
            return Err(CliError::Config("replicates and eval_seeds must be positive".into()));
        }
        positive_sizes("experiment.sizes_m", &ex.sizes_m)?;
        positive_sizes("experiment.high_density_m", &ex.high_density_m)?;
        positive_sizes("experiment.low_density_m", &ex.low_density_m)?;
        let psi_max = self.protocol.psi_max;
        for (name, r) in [("ble_rate", ex.ble_rate), ("wifi_rate", ex.wifi_rate)] {
            if r == 0 || r > psi_max {
                return Err(CliError::Config(format!("experiment.{name} must lie in 1..={psi_max}")));
            }
        }
        if ex.sweep_steps == Some(0) {
            return Err(CliError::Config("experiment.sweep_steps must be positive".into()));
        }
        if ex.verify.max_period_slots < 6 {
            return Err(CliError::Config("experiment.verify.max_period_slots must be at least 6".into()));
        }
        Ok(())
    }

    pub fn slot_params(&self) -> Result<SlotParams, CliError> {
        self.protocol.timing.quantize().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn environment(&self) -> Result<Environment, CliError> {
        let env = Environment::new(
            self.slot_params()?,
            self.protocol.psi_max,
            self.radio.path_loss,
            self.radio.thresholds,
            self.radio.unreachable_delay_ms,
        )
        .map_err(|e: EnvError| CliError::Config(e.to_string()))?;
        Ok(env.with_neighbor_set(self.radio.neighbor_set))
    }

    pub fn sweep_steps(&self) -> usize {
        self.experiment.sweep_steps.unwrap_or(self.scenario.t_max)
    }

    /// Digest of every setting a trained policy depends on.
    pub fn policy_hash(&self) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            scenario: &'a ScenarioConfig,
            protocol: &'a ProtocolSection,
            radio: &'a RadioSection,
            training: &'a TrainConfig,
        }
        let text = toml::to_string(&Keyed {
            scenario: &self.scenario,
            protocol: &self.protocol,
            radio: &self.radio,
            training: &self.training,
        })
        .expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}
