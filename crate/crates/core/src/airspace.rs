//! Fleet state, random mobility, per-step delay reports and the long-term
//! average delay objective.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay::{avg_link_delay, DelayError, DelayModel, LinkDelay};
use crate::protocol::{ProtocolError, SlotParams, WifiChannel};
use crate::radio::{build_link_graph, LinkGraph, PathLossConfig, Protocol, RadioError, Shadowing, Thresholds, Uav};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Exactly one protocol active per UAV.
    SingleProtocol,
    /// Rate at most `psi_max`.
    RateBound,
    /// Protocol indicators are 0 or 1.
    BinaryIndicator,
    /// Rate is a positive integer.
    IntegerRate,
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Constraint::SingleProtocol => "exactly one protocol per UAV",
            Constraint::RateBound => "rate within [1, psi_max]",
            Constraint::BinaryIndicator => "binary protocol indicator",
            Constraint::IntegerRate => "positive integer rate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("UAV {uav} violates constraint: {constraint}")]
pub struct ConstraintViolation {
    pub constraint: Constraint,
    pub uav: usize,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Constraint(#[from] ConstraintViolation),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Protocol and rate of one UAV, already known to be admissible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub protocol: Protocol,
    pub rate: u32,
}

/// A decision as an unconstrained optimizer might emit it: one indicator per
/// protocol (BLE, Wi-Fi) and a real-valued rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawAssignment {
    pub indicator: [f64; 2],
    pub rate: f64,
}

impl From<Assignment> for RawAssignment {
    fn from(a: Assignment) -> Self {
        let mut indicator = [0.0; 2];
        indicator[a.protocol.index()] = 1.0;
        Self {
            indicator,
            rate: a.rate as f64,
        }
    }
}

impl RawAssignment {
    pub fn validate(&self, uav: usize, psi_max: u32) -> Result<Assignment, ConstraintViolation> {
        let fail = |constraint| Err(ConstraintViolation { constraint, uav });
        if self.indicator.iter().any(|&v| v != 0.0 && v != 1.0) {
            return fail(Constraint::BinaryIndicator);
        }
        if self.indicator.iter().sum::<f64>() != 1.0 {
            return fail(Constraint::SingleProtocol);
        }
        if !(self.rate >= 1.0) || self.rate.fract() != 0.0 {
            return fail(Constraint::IntegerRate);
        }
        if self.rate > psi_max as f64 {
            return fail(Constraint::RateBound);
        }
        let protocol = if self.indicator[0] == 1.0 { Protocol::Ble4 } else { Protocol::Wifi };
        Ok(Assignment {
            protocol,
            rate: self.rate as u32,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_uavs: usize,
    /// Side of the square horizontal airspace.
    pub horizontal_extent_m: f64,
    pub altitude_band_m: [f64; 2],
    pub max_speed_mps: f64,
    pub step_seconds: f64,
    pub t_max: usize,
    pub tx_power_dbm: f64,
    pub wifi_channel: WifiChannel,
    pub initial: Assignment,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_uavs: 10,
            horizontal_extent_m: 1000.0,
            altitude_band_m: [30.0, 120.0],
            max_speed_mps: 20.0,
            step_seconds: 1.0,
            t_max: 100,
            tx_power_dbm: 18.0,
            wifi_channel: WifiChannel::Ch6,
            initial: Assignment {
                protocol: Protocol::Ble4,
                rate: 9,
            },
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Invalid(m.to_string()));
        if self.num_uavs == 0 {
            return bad("num_uavs must be positive");
        }
        if !(self.horizontal_extent_m > 0.0) || !self.horizontal_extent_m.is_finite() {
            return bad("horizontal_extent_m must be positive");
        }
        let [lo, hi] = self.altitude_band_m;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("altitude_band_m must be [min, max] with min <= max");
        }
        if !(self.max_speed_mps >= 0.0) || !self.max_speed_mps.is_finite() {
            return bad("max_speed_mps must be non-negative");
        }
        if !(self.step_seconds > 0.0) || !self.step_seconds.is_finite() {
            return bad("step_seconds must be positive");
        }
        if self.t_max == 0 {
            return bad("t_max must be positive");
        }
        if self.initial.rate == 0 {
            return bad("initial rate must be positive");
        }
        Ok(())
    }
}

/// Reflects `x` into `[lo, hi]`.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if w <= 0.0 {
        return lo;
    }
    let r = (x - lo).rem_euclid(2.0 * w);
    lo + if r > w { 2.0 * w - r } else { r }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub fleet: Vec<Uav>,
    pub seed: u64,
    /// Index of the current decision step.
    pub step: u64,
}

impl Scenario {
    /// Places the fleet uniformly in the airspace. Every UAV draws from its
    /// own stream so placement does not depend on fleet order.
    pub fn new(config: ScenarioConfig, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        let [lo, hi] = config.altitude_band_m;
        let side = config.horizontal_extent_m;
        let fleet = (0..config.num_uavs)
            .map(|id| {
                let mut rng = seed::stream(seed, &[seed::TAG_PLACEMENT, id as u64]);
                let position = [
                    rng.random::<f64>() * side,
                    rng.random::<f64>() * side,
                    lo + rng.random::<f64>() * (hi - lo),
                ];
                Uav {
                    id,
                    position,
                    protocol: config.initial.protocol,
                    rate: config.initial.rate,
                    tx_power_dbm: config.tx_power_dbm,
                    wifi_channel: config.wifi_channel,
                }
            })
            .collect();
        Ok(Self {
            config,
            fleet,
            seed,
            step: 0,
        })
    }

    pub fn shadowing(&self) -> Shadowing {
        Shadowing::Keyed {
            seed: self.seed,
            step: self.step,
        }
    }

    /// Moves every UAV along a uniformly random direction at a uniform speed
    /// in `[0, max_speed]`, reflecting at the airspace boundaries, and
    /// advances the step counter.
    pub fn step_mobility(&mut self) {
        let c = self.config;
        let [lo, hi] = c.altitude_band_m;
        for u in &mut self.fleet {
            let mut rng = seed::stream(self.seed, &[seed::TAG_MOBILITY, u.id as u64, self.step]);
            let mut dir: [f64; 3] = [0.0; 3];
            let mut norm = 0.0;
            while norm < 1e-12 {
                for d in &mut dir {
                    *d = StandardNormal.sample(&mut rng);
                }
                norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            }
            let dist = rng.random::<f64>() * c.max_speed_mps * c.step_seconds;
            let bounds = [(0.0, c.horizontal_extent_m), (0.0, c.horizontal_extent_m), (lo, hi)];
            for (k, (blo, bhi)) in bounds.into_iter().enumerate() {
                u.position[k] = reflect(u.position[k] + dir[k] / norm * dist, blo, bhi);
            }
        }
        self.step += 1;
    }

    pub fn apply(&mut self, assignment: &[Assignment]) {
        assert_eq!(assignment.len(), self.fleet.len(), "one assignment per UAV");
        for (u, a) in self.fleet.iter_mut().zip(assignment) {
            u.protocol = a.protocol;
            u.rate = a.rate;
        }
    }

    pub fn assignment(&self) -> Vec<Assignment> {
        self.fleet
            .iter()
            .map(|u| Assignment {
                protocol: u.protocol,
                rate: u.rate,
            })
            .collect()
    }
}

/// Link delays at one step and their fleet aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayReport {
    pub per_link: Vec<LinkDelay>,
    /// Mean over the UAV's neighbor set; zero when the set is empty.
    pub per_uav_mean_ms: Vec<f64>,
    /// Receivers in range of the active protocol.
    pub neighbor_count: Vec<usize>,
    /// Size of the set each UAV's mean is taken over.
    pub set_size: Vec<usize>,
    pub system_mean_ms: f64,
    pub unreachable_count: usize,
    /// UAVs heard by nobody on their active protocol.
    pub isolated_count: usize,
}

/// Which receivers a UAV's mean delay is averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSet {
    /// Union of the per-protocol receiver sets, where the set of an inactive
    /// protocol holds every other UAV (its link-budget test degenerates to
    /// `0 >= threshold`). Receivers out of range of the active protocol add
    /// no delay but count in the denominator.
    #[default]
    Union,
    /// Only receivers in range of the active protocol.
    ActiveProtocol,
}

/// Radio, timing and averaging settings shared by every step.
#[derive(Debug, Clone)]
pub struct Environment {
    pub path_loss: PathLossConfig,
    pub thresholds: Thresholds,
    pub model: DelayModel,
    /// Delay charged to a link whose match set is empty for some phase.
    pub unreachable_delay_ms: f64,
    pub neighbor_set: NeighborSet,
}

impl Environment {
    pub fn new(
        params: SlotParams,
        psi_max: u32,
        path_loss: PathLossConfig,
        thresholds: Thresholds,
        unreachable_delay_ms: f64,
    ) -> Result<Self, EnvError> {
        if psi_max == 0 {
            return Err(EnvError::Invalid("psi_max must be positive".into()));
        }
        if !(unreachable_delay_ms >= 0.0) || !unreachable_delay_ms.is_finite() {
            return Err(EnvError::Invalid("unreachable_delay_ms must be finite and non-negative".into()));
        }
        Ok(Self {
            path_loss,
            thresholds,
            model: DelayModel::new(params, psi_max)?,
            unreachable_delay_ms,
            neighbor_set: NeighborSet::default(),
        })
    }

    pub fn params(&self) -> &SlotParams {
        self.model.params()
    }

    pub fn psi_max(&self) -> u32 {
        self.model.psi_max()
    }

    pub fn link_graph(&self, fleet: &[Uav], shadowing: Shadowing) -> Result<LinkGraph, RadioError> {
        build_link_graph(fleet, &self.path_loss, &self.thresholds, shadowing)
    }

    pub fn with_neighbor_set(mut self, neighbor_set: NeighborSet) -> Self {
        self.neighbor_set = neighbor_set;
        self
    }

    /// Delay report for the fleet as currently configured. Only the sender's
    /// active protocol carries delay; links with an empty match set are
    /// charged `unreachable_delay_ms` and counted.
    pub fn report_on(&self, fleet: &[Uav], graph: &LinkGraph) -> Result<DelayReport, EnvError> {
        let m = fleet.len();
        let mut per_link = Vec::new();
        let mut per_uav_mean_ms = vec![0.0; m];
        let mut neighbor_count = vec![0; m];
        let mut set_size = vec![0; m];
        let mut unreachable_count = 0;
        let mut isolated_count = 0;
        for (j, u) in fleet.iter().enumerate() {
            let receivers = graph.deliver_to(j, u.protocol);
            neighbor_count[j] = receivers.len();
            if receivers.is_empty() {
                isolated_count += 1;
            }
            let denominator = match self.neighbor_set {
                NeighborSet::Union => m - 1,
                NeighborSet::ActiveProtocol => receivers.len(),
            };
            set_size[j] = denominator;
            if denominator == 0 {
                continue;
            }
            let mut sum = 0.0;
            for &i in receivers {
                let link = avg_link_delay(j, i, graph, fleet, &self.model)?;
                if link.reachable {
                    sum += link.delay_ms(self.params());
                } else {
                    unreachable_count += 1;
                    sum += self.unreachable_delay_ms;
                }
                per_link.push(link);
            }
            per_uav_mean_ms[j] = sum / denominator as f64;
        }
        let system_mean_ms = if m == 0 {
            0.0
        } else {
            per_uav_mean_ms.iter().sum::<f64>() / m as f64
        };
        Ok(DelayReport {
            per_link,
            per_uav_mean_ms,
            neighbor_count,
            set_size,
            system_mean_ms,
            unreachable_count,
            isolated_count,
        })
    }

    pub fn report(&self, fleet: &[Uav], shadowing: Shadowing) -> Result<(LinkGraph, DelayReport), EnvError> {
        let graph = self.link_graph(fleet, shadowing)?;
        let report = self.report_on(fleet, &graph)?;
        Ok((graph, report))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub mean_delay_ms: f64,
    pub per_step_ms: Vec<f64>,
    /// Sum over steps of UAVs without receivers.
    pub isolated_uav_steps: usize,
    pub unreachable_links: usize,
}

/// Long-term average of the per-step system delay when the fleet follows
/// `assignments[t]` at step `t` for `t_max` steps, starting from `scenario`.
pub fn evaluate_objective(
    scenario: &Scenario,
    env: &Environment,
    assignments: &[Vec<RawAssignment>],
) -> Result<ObjectiveReport, EnvError> {
    let t_max = scenario.config.t_max;
    if assignments.len() < t_max {
        return Err(EnvError::Invalid(format!(
            "{} step assignments supplied for {t_max} steps",
            assignments.len()
        )));
    }
    let mut sc = scenario.clone();
    let mut per_step_ms = Vec::with_capacity(t_max);
    let mut isolated_uav_steps = 0;
    let mut unreachable_links = 0;
    for step in assignments.iter().take(t_max) {
        if step.len() != sc.fleet.len() {
            return Err(EnvError::Invalid("one assignment per UAV per step".into()));
        }
        let joint = step
            .iter()
            .zip(&sc.fleet)
            .map(|(raw, u)| raw.validate(u.id, env.psi_max()))
            .collect::<Result<Vec<_>, _>>()?;
        sc.apply(&joint);
        let (_, report) = env.report(&sc.fleet, sc.shadowing())?;
        if report.isolated_count == sc.fleet.len() {
            log::debug!("step {}: no UAV has neighbors", sc.step);
        }
        isolated_uav_steps += report.isolated_count;
        unreachable_links += report.unreachable_count;
        per_step_ms.push(report.system_mean_ms);
        sc.step_mobility();
    }
    Ok(ObjectiveReport {
        mean_delay_ms: per_step_ms.iter().sum::<f64>() / t_max as f64,
        per_step_ms,
        isolated_uav_steps,
        unreachable_links,
    })
}
