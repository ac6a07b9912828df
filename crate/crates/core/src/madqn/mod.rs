//! Multi-agent deep Q-learning of per-UAV protocol and rate selection.
//!
//! Every UAV owns an online and a target network and acts on a local
//! observation only. Experience goes to one shared replay buffer; rewards
//! mix the UAV's own delay with the fleet average.

mod network;
mod replay;
mod trainer;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use network::{soft_update, Activations, Adam, QNetwork};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use trainer::{rollout, train, train_with, Agent, EpisodeStats, Policy, RolloutStats, TrainOutcome};

use crate::airspace::{Assignment, DelayReport, EnvError};
use crate::radio::{LinkGraph, Protocol, Uav};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum MadqnError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite loss {loss} for agent {agent} (episode {episode}, step {step})")]
    NonFiniteLoss {
        agent: usize,
        episode: usize,
        step: usize,
        loss: f64,
    },
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Buffer size at which updates start; the buffer capacity when unset.
    pub min_fill: Option<usize>,
    pub tau: f64,
    pub eps_init: f64,
    pub eps_final: f64,
    pub eps_decay_episodes: usize,
    pub hidden: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub n_max: usize,
    pub distance_scale_m: f64,
    /// Airspace sides drawn uniformly per episode; empty keeps the
    /// scenario's own extent.
    pub extents_m: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            steps_per_episode: 100,
            gamma: 0.95,
            learning_rate: 1e-4,
            adam_eps: 1e-7,
            batch_size: 256,
            buffer_capacity: 25_000,
            min_fill: None,
            tau: 0.999,
            eps_init: 1.0,
            eps_final: 0.1,
            eps_decay_episodes: 500,
            hidden: vec![256, 128],
            alpha: 1.0,
            beta: 1.0,
            n_max: 9,
            distance_scale_m: 1000.0,
            extents_m: vec![100.0, 500.0, 1000.0, 3000.0, 5000.0, 10000.0],
        }
    }
}

impl TrainConfig {
    pub fn min_fill(&self) -> usize {
        self.min_fill.unwrap_or(self.buffer_capacity)
    }

    pub fn obs_config(&self, psi_max: u32) -> ObsConfig {
        ObsConfig {
            n_max: self.n_max,
            distance_scale_m: self.distance_scale_m,
            psi_max,
        }
    }

    pub fn validate(&self) -> Result<(), MadqnError> {
        let bad = |m: &str| Err(MadqnError::Config(m.to_string()));
        if self.steps_per_episode == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("steps_per_episode, batch_size and buffer_capacity must be positive");
        }
        if self.batch_size > self.buffer_capacity {
            return bad("batch_size exceeds buffer_capacity");
        }
        if self.min_fill() < self.batch_size || self.min_fill() > self.buffer_capacity {
            return bad("min_fill must lie in [batch_size, buffer_capacity]");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("gamma and tau must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return bad("learning_rate and adam_eps must be positive");
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.eps_init) || !eps_ok(self.eps_final) || self.eps_decay_episodes == 0 {
            return bad("exploration rates must lie in [0, 1] with a positive decay horizon");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.distance_scale_m > 0.0) {
            return bad("distance_scale_m must be positive");
        }
        if self.extents_m.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return bad("extents_m entries must be positive");
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return bad("reward weights must be finite");
        }
        Ok(())
    }
}

/// Shape of the local observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsConfig {
    pub n_max: usize,
    pub distance_scale_m: f64,
    pub psi_max: u32,
}

impl ObsConfig {
    /// Own protocol one-hot and per-protocol rates, then per neighbor slot a
    /// distance, a protocol one-hot and a rate.
    pub fn dim(&self) -> usize {
        4 + 4 * self.n_max
    }
}

/// Local observation of fleet index `j`: its own protocol and rate, and the
/// UAVs it currently hears (either protocol), nearest first. Neighbors past
/// `n_max` are dropped, farthest first; unused slots are zero.
///
/// Layout: `[own one-hot (2), own rates (2), distances (n), neighbor
/// one-hots (2n), neighbor rates (n)]`.
pub fn encode_observation<F: Real>(j: usize, graph: &LinkGraph, fleet: &[Uav], cfg: &ObsConfig) -> Vec<F> {
    let n = cfg.n_max;
    let psi_max = cfg.psi_max as f64;
    let mut obs = vec![F::zero(); cfg.dim()];
    let me = &fleet[j];
    obs[me.protocol.index()] = F::one();
    obs[2 + me.protocol.index()] = F::of(me.rate as f64 / psi_max);

    let mut heard: Vec<(f64, usize, usize)> = Protocol::ALL
        .iter()
        .flat_map(|&p| graph.recv_from(j, p).iter().copied())
        .map(|k| (me.distance_to(&fleet[k]), fleet[k].id, k))
        .collect();
    heard.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (dist, rest) = obs[4..].split_at_mut(n);
    let (protos, rates) = rest.split_at_mut(2 * n);
    for (slot, &(d, _, k)) in heard.iter().take(n).enumerate() {
        let u = &fleet[k];
        dist[slot] = F::of(d / cfg.distance_scale_m);
        protos[2 * slot + u.protocol.index()] = F::one();
        rates[slot] = F::of(u.rate as f64 / psi_max);
    }
    obs
}

/// Index into the `2 * psi_max` joint protocol/rate choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub index: usize,
}

impl Action {
    pub fn decode(self, psi_max: u32) -> Assignment {
        let k = psi_max as usize;
        Assignment {
            protocol: Protocol::ALL[self.index / k],
            rate: (1 + self.index % k) as u32,
        }
    }

    pub fn encode(a: Assignment, psi_max: u32) -> Self {
        Self {
            index: a.protocol.index() * psi_max as usize + (a.rate as usize - 1),
        }
    }
}

/// `alpha * (-L) + beta * (g - L)` with `L` the UAV's mean delay over its
/// neighbor set and `g` the fleet mean, both in seconds. Zero when the
/// neighbor set is empty.
pub fn reward(j: usize, report: &DelayReport, alpha: f64, beta: f64) -> f64 {
    if report.set_size[j] == 0 {
        log::trace!("UAV {j} has no neighbors; reward 0");
        return 0.0;
    }
    let local = report.per_uav_mean_ms[j] / 1000.0;
    let global = report.system_mean_ms / 1000.0;
    alpha * -local + beta * (global - local)
}

/// Linear decay from `e_init` to `e_final` over `decay_episodes`, then flat.
pub fn epsilon_schedule(episode: usize, e_init: f64, e_final: f64, decay_episodes: usize) -> f64 {
    let e = e_init - episode as f64 * (e_init - e_final) / decay_episodes as f64;
    e.max(e_final)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<F: Real>(q: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice from one agent's network and local observation.
pub fn select_action<F: Real, R: Rng>(net: &QNetwork<F>, obs: &[F], epsilon: f64, rng: &mut R) -> Action {
    if rng.random::<f64>() < epsilon {
        return Action {
            index: rng.random_range(0..net.output_dim()),
        };
    }
    Action {
        index: argmax(&net.q_values(obs)),
    }
}

/// One gradient step on the mean squared TD error against
/// `r + gamma * max_a' Q_target(o', a')`. Returns the loss before the step.
pub fn train_step<F: Real>(
    online: &mut QNetwork<F>,
    target: &QNetwork<F>,
    opt: &mut Adam<F>,
    batch: &Batch<F>,
    gamma: F,
) -> F {
    let b = batch.len();
    let n_out = target.output_dim();
    let next_q = target.forward(&batch.next_obs, b);
    let targets: Vec<F> = (0..b)
        .map(|i| {
            let row = &next_q[i * n_out..(i + 1) * n_out];
            batch.rewards[i] + gamma * row[argmax(row)]
        })
        .collect();
    let mut grad = vec![F::zero(); online.params().len()];
    let loss = online.loss_and_grad(&batch.obs, b, &batch.actions, &targets, &mut grad);
    if loss.is_finite() {
        opt.step(online.params_mut(), &grad);
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::WifiChannel;
    use crate::radio::{build_link_graph, PathLossConfig, Shadowing, Thresholds};
    use crate::seed;

    fn uav(id: usize, x: f64, protocol: Protocol, rate: u32) -> Uav {
        Uav {
            id,
            position: [x, 0.0, 50.0],
            protocol,
            rate,
            tx_power_dbm: 18.0,
            wifi_channel: WifiChannel::Ch6,
        }
    }

    fn graph(fleet: &[Uav]) -> LinkGraph {
        build_link_graph(fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap()
    }

    const OBS: ObsConfig = ObsConfig {
        n_max: 9,
        distance_scale_m: 1000.0,
        psi_max: 10,
    };

    #[test]
    fn isolated_uav_has_empty_neighbor_fields() {
        let fleet = vec![uav(0, 0.0, Protocol::Ble4, 9)];
        let o: Vec<f64> = encode_observation(0, &graph(&fleet), &fleet, &OBS);
        assert_eq!(o.len(), 40);
        assert_eq!(&o[..4], &[1.0, 0.0, 0.9, 0.0]);
        assert!(o[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn neighbors_sorted_nearest_first() {
        let fleet = vec![
            uav(0, 0.0, Protocol::Wifi, 10),
            uav(1, 50.0, Protocol::Ble4, 5),
            uav(2, 10.0, Protocol::Wifi, 2),
        ];
        let o: Vec<f64> = encode_observation(0, &graph(&fleet), &fleet, &OBS);
        assert_eq!(&o[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(&o[4..7], &[0.01, 0.05, 0.0]);
        assert_eq!(&o[13..17], &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(&o[31..33], &[0.2, 0.5]);
        assert!(o[33..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoding_ignores_fleet_order() {
        let fleet: Vec<Uav> = (0..6)
            .map(|i| uav(i, 7.0 + 31.0 * i as f64, Protocol::ALL[i % 2], 1 + i as u32))
            .collect();
        let a: Vec<f64> = encode_observation(2, &graph(&fleet), &fleet, &OBS);
        let order = [4usize, 2, 0, 5, 1, 3];
        let perm: Vec<Uav> = order.iter().map(|&k| fleet[k].clone()).collect();
        let b: Vec<f64> = encode_observation(1, &graph(&perm), &perm, &OBS);
        assert_eq!(a, b);
    }

    #[test]
    fn overflow_drops_farthest() {
        let fleet: Vec<Uav> = (0..5).map(|i| uav(i, 10.0 * i as f64, Protocol::Ble4, 9)).collect();
        let cfg = ObsConfig { n_max: 2, ..OBS };
        let o: Vec<f64> = encode_observation(0, &graph(&fleet), &fleet, &cfg);
        assert_eq!(o.len(), 12);
        assert_eq!(&o[4..6], &[0.01, 0.02]);
    }

    #[test]
    fn action_round_trip_and_constraints() {
        for index in 0..20 {
            let a = Action { index }.decode(10);
            assert!((1..=10).contains(&a.rate));
            assert_eq!(Action::encode(a, 10).index, index);
        }
        assert_eq!(Action { index: 8 }.decode(10).rate, 9);
        assert_eq!(Action { index: 19 }.decode(10).protocol, Protocol::Wifi);
    }

    fn report(per_uav: Vec<f64>) -> DelayReport {
        let m = per_uav.len();
        DelayReport {
            per_link: vec![],
            system_mean_ms: per_uav.iter().sum::<f64>() / m as f64,
            per_uav_mean_ms: per_uav,
            neighbor_count: vec![1; m],
            set_size: vec![1; m],
            unreachable_count: 0,
            isolated_count: 0,
        }
    }

    #[test]
    fn reward_properties() {
        let r = report(vec![200.0, 200.0]);
        assert!((reward(0, &r, 1.0, 1.0) + 0.2).abs() < 1e-12);
        let r = report(vec![100.0, 300.0]);
        assert!(reward(0, &r, 0.0, 1.0) > 0.0);
        let local = |a| reward(0, &r, a, 0.0);
        assert!((local(2.0) - 2.0 * local(1.0)).abs() < 1e-12);
        let mut r = report(vec![100.0, 300.0]);
        r.set_size[1] = 0;
        assert_eq!(reward(1, &r, 1.0, 1.0), 0.0);
    }

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon_schedule(0, 1.0, 0.1, 500), 1.0);
        assert!((epsilon_schedule(250, 1.0, 0.1, 500) - 0.55).abs() < 1e-12);
        assert_eq!(epsilon_schedule(500, 1.0, 0.1, 500), 0.1);
        assert_eq!(epsilon_schedule(900, 1.0, 0.1, 500), 0.1);
    }

    fn biased_net(winner: usize) -> QNetwork<f64> {
        // zero weights, output bias picks the winner
        let dims = [40, 4, 20];
        let mut params = vec![0.0; 40 * 4 + 4 + 4 * 20 + 20];
        let n = params.len();
        params[n - 20 + winner] = 1.0;
        QNetwork::from_params(&dims, params).unwrap()
    }

    #[test]
    fn greedy_and_tie_break() {
        let mut rng = seed::stream(0, &[]);
        let net = biased_net(7);
        let obs = vec![0.3; 40];
        for _ in 0..50 {
            assert_eq!(select_action(&net, &obs, 0.0, &mut rng).index, 7);
        }
        let flat = QNetwork::from_params(&[40, 4, 20], vec![0.0; 40 * 4 + 4 + 4 * 20 + 20]).unwrap();
        assert_eq!(select_action(&flat, &obs, 0.0, &mut rng).index, 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = biased_net(7);
        let obs = vec![0.0; 40];
        let mut rng = seed::stream(5, &[]);
        let mut counts = [0usize; 20];
        let draws = 10_000;
        for _ in 0..draws {
            counts[select_action(&net, &obs, 1.0, &mut rng).index] += 1;
        }
        let expected = draws as f64 / 20.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 19 degrees of freedom, 0.999 quantile
        assert!(chi2 < 43.82, "chi2 {chi2}");
    }

    #[test]
    fn fixed_point_batch_has_zero_loss() {
        let mut online: QNetwork<f64> = QNetwork::new(&[3, 4, 2], &mut seed::stream(1, &[]));
        let target = online.clone();
        let obs = vec![0.5, -0.2, 0.1, 0.9, 0.3, -0.4];
        let q = online.forward(&obs, 2);
        // reward equal to Q(o, a) with gamma 0 makes the target the current value
        let batch = Batch {
            obs: obs.clone(),
            actions: vec![1, 0],
            rewards: vec![q[1], q[2]],
            next_obs: obs,
        };
        let before = online.clone();
        let mut opt = Adam::new(online.params().len(), 1e-3, 1e-7);
        let loss = train_step(&mut online, &target, &mut opt, &batch, 0.0);
        assert!(loss.abs() < 1e-20);
        for (a, b) in online.params().iter().zip(before.params()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_transition_converges() {
        let mut online: QNetwork<f64> = QNetwork::new(&[3, 8, 4], &mut seed::stream(2, &[]));
        let target = online.clone();
        let batch = Batch {
            obs: vec![0.2, 0.4, -0.1],
            actions: vec![2],
            rewards: vec![-1.5],
            next_obs: vec![0.0; 3],
        };
        let mut opt = Adam::new(online.params().len(), 1e-3, 1e-7);
        let mut losses = Vec::new();
        for _ in 0..2000 {
            losses.push(train_step(&mut online, &target, &mut opt, &batch, 0.0));
        }
        assert!(losses.last().unwrap() < &1e-6);
        let q = online.q_values(&batch.obs);
        assert!((q[2] + 1.5).abs() < 1e-3);
        // loss trends down: each block of 200 steps ends lower than it began
        for w in losses.chunks(200) {
            assert!(w.last().unwrap() <= w.first().unwrap());
        }
    }
}
