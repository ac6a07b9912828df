//! The episode loop: decentralized epsilon-greedy acting, one shared delay
//! evaluation per step, shared replay, per-agent updates.

use rand::Rng;

use super::{
    encode_observation, epsilon_schedule, reward, select_action, soft_update, train_step, Action, Adam, MadqnError,
    ObsConfig, QNetwork, ReplayBuffer, TrainConfig, Transition,
};
use crate::airspace::{Assignment, Environment, Scenario, ScenarioConfig};
use crate::radio::Protocol;
use crate::scalar::Real;
use crate::seed;

#[derive(Debug, Clone)]
pub struct Agent<F> {
    pub online: QNetwork<F>,
    pub target: QNetwork<F>,
    pub opt: Adam<F>,
}

/// Frozen greedy policy: one network per UAV.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<F> {
    pub nets: Vec<QNetwork<F>>,
    pub obs: ObsConfig,
}

impl<F: Real> Policy<F> {
    /// Greedy action of `agent` from its own observation.
    pub fn act(&self, agent: usize, obs: &[F]) -> Action {
        Action {
            index: super::argmax(&self.nets[agent].q_values(obs)),
        }
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    pub extent_m: f64,
    pub epsilon: f64,
    /// Mean over agents and steps.
    pub mean_reward: f64,
    pub system_delay_ms: f64,
    /// Mean TD loss over the episode's updates; `None` before learning starts.
    pub loss: Option<f64>,
    pub updates: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub policy: Policy<F>,
    pub curve: Vec<EpisodeStats>,
}

fn episode_scenario(base: &ScenarioConfig, cfg: &TrainConfig, seed: u64, episode: usize) -> Result<Scenario, MadqnError> {
    let ep_seed = seed::derive(seed, &[seed::TAG_EPISODE, episode as u64]);
    let mut rng = seed::stream(ep_seed, &[]);
    let extent = if cfg.extents_m.is_empty() {
        base.horizontal_extent_m
    } else {
        cfg.extents_m[rng.random_range(0..cfg.extents_m.len())]
    };
    let sc_cfg = ScenarioConfig {
        horizontal_extent_m: extent,
        t_max: cfg.steps_per_episode,
        ..*base
    };
    Ok(Scenario::new(sc_cfg, ep_seed)?)
}

fn observe<F: Real>(env: &Environment, sc: &Scenario, obs_cfg: &ObsConfig) -> Result<Vec<Vec<F>>, MadqnError> {
    let graph = env.link_graph(&sc.fleet, sc.shadowing()).map_err(crate::airspace::EnvError::from)?;
    Ok((0..sc.fleet.len())
        .map(|j| encode_observation(j, &graph, &sc.fleet, obs_cfg))
        .collect())
}

/// Runs the training loop on scenarios drawn per episode from `scenario`,
/// with the extent sampled from `cfg.extents_m`. `on_episode` sees each
/// episode's statistics as soon as the episode ends.
pub fn train<F: Real>(
    env: &Environment,
    scenario: &ScenarioConfig,
    cfg: &TrainConfig,
    seed: u64,
    on_episode: impl FnMut(&EpisodeStats),
) -> Result<TrainOutcome<F>, MadqnError> {
    scenario.validate()?;
    train_with(
        env,
        scenario.num_uavs,
        cfg,
        seed,
        |episode| episode_scenario(scenario, cfg, seed, episode),
        on_episode,
    )
}

/// The training loop over caller-supplied episode scenarios. Each scenario
/// must hold `num_agents` UAVs; episodes last `cfg.steps_per_episode` steps
/// whatever the scenario's own horizon.
pub fn train_with<F: Real>(
    env: &Environment,
    num_agents: usize,
    cfg: &TrainConfig,
    seed: u64,
    mut scenario_for: impl FnMut(usize) -> Result<Scenario, MadqnError>,
    mut on_episode: impl FnMut(&EpisodeStats),
) -> Result<TrainOutcome<F>, MadqnError> {
    cfg.validate()?;
    let m = num_agents;
    let psi_max = env.psi_max();
    let obs_cfg = cfg.obs_config(psi_max);
    let mut dims = vec![obs_cfg.dim()];
    dims.extend(&cfg.hidden);
    dims.push(2 * psi_max as usize);

    let mut agents: Vec<Agent<F>> = (0..m)
        .map(|j| {
            let online = QNetwork::new(&dims, &mut seed::stream(seed, &[seed::TAG_INIT, j as u64]));
            Agent {
                target: online.clone(),
                opt: Adam::new(online.params().len(), F::of(cfg.learning_rate), F::of(cfg.adam_eps)),
                online,
            }
        })
        .collect();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, obs_cfg.dim());
    let mut policy_rng = seed::stream(seed, &[seed::TAG_POLICY]);
    let mut replay_rng = seed::stream(seed, &[seed::TAG_REPLAY]);
    let gamma = F::of(cfg.gamma);
    let tau = F::of(cfg.tau);
    let mut curve = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        let epsilon = epsilon_schedule(episode, cfg.eps_init, cfg.eps_final, cfg.eps_decay_episodes);
        let mut sc = scenario_for(episode)?;
        if sc.fleet.len() != m {
            return Err(MadqnError::ShapeMismatch {
                expected: m,
                found: sc.fleet.len(),
            });
        }
        let mut obs: Vec<Vec<F>> = observe(env, &sc, &obs_cfg)?;
        let mut reward_sum = 0.0;
        let mut delay_sum = 0.0;
        let mut loss_sum = 0.0;
        let mut updates = 0;
        for step in 0..cfg.steps_per_episode {
            let actions: Vec<Action> = agents
                .iter()
                .zip(&obs)
                .map(|(a, o)| select_action(&a.online, o, epsilon, &mut policy_rng))
                .collect();
            let joint: Vec<Assignment> = actions.iter().map(|a| a.decode(psi_max)).collect();
            sc.apply(&joint);
            let (_, report) = env.report(&sc.fleet, sc.shadowing())?;
            delay_sum += report.system_mean_ms;
            sc.step_mobility();
            let next_obs: Vec<Vec<F>> = observe(env, &sc, &obs_cfg)?;
            for j in 0..m {
                let r = reward(j, &report, cfg.alpha, cfg.beta);
                reward_sum += r;
                buffer.push(&Transition {
                    obs: std::mem::take(&mut obs[j]),
                    action: actions[j].index,
                    reward: F::of(r),
                    next_obs: next_obs[j].clone(),
                })?;
            }
            if buffer.len() >= cfg.min_fill() {
                for (j, agent) in agents.iter_mut().enumerate() {
                    let batch = buffer.sample(cfg.batch_size, &mut replay_rng);
                    let loss = train_step(&mut agent.online, &agent.target, &mut agent.opt, &batch, gamma);
                    if !loss.is_finite() {
                        return Err(MadqnError::NonFiniteLoss {
                            agent: j,
                            episode,
                            step,
                            loss: loss.as_f64(),
                        });
                    }
                    soft_update(&mut agent.target, &agent.online, tau)?;
                    loss_sum += loss.as_f64();
                    updates += 1;
                }
            }
            obs = next_obs;
        }
        let steps = cfg.steps_per_episode as f64;
        let stats = EpisodeStats {
            episode,
            extent_m: sc.config.horizontal_extent_m,
            epsilon,
            mean_reward: reward_sum / (steps * m as f64),
            system_delay_ms: delay_sum / steps,
            loss: (updates > 0).then(|| loss_sum / updates as f64),
            updates,
        };
        log::debug!(
            "episode {episode}: eps {epsilon:.3} reward {:.4} delay {:.1} ms",
            stats.mean_reward,
            stats.system_delay_ms
        );
        on_episode(&stats);
        curve.push(stats);
    }
    Ok(TrainOutcome {
        policy: Policy {
            nets: agents.into_iter().map(|a| a.online).collect(),
            obs: obs_cfg,
        },
        curve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStats {
    pub mean_delay_ms: f64,
    pub per_step_ms: Vec<f64>,
    /// Fraction of UAV-steps on Wi-Fi.
    pub wifi_share: f64,
    pub actions: Vec<Vec<Assignment>>,
}

/// Follows the greedy policy for the scenario's `t_max` steps.
pub fn rollout<F: Real>(policy: &Policy<F>, env: &Environment, scenario: &Scenario) -> Result<RolloutStats, MadqnError> {
    if policy.len() != scenario.fleet.len() {
        return Err(MadqnError::ShapeMismatch {
            expected: scenario.fleet.len(),
            found: policy.len(),
        });
    }
    let mut sc = scenario.clone();
    let psi_max = env.psi_max();
    let mut per_step_ms = Vec::with_capacity(sc.config.t_max);
    let mut actions = Vec::with_capacity(sc.config.t_max);
    let mut wifi = 0usize;
    for _ in 0..sc.config.t_max {
        let obs: Vec<Vec<F>> = observe(env, &sc, &policy.obs)?;
        let joint: Vec<Assignment> = obs
            .iter()
            .enumerate()
            .map(|(j, o)| policy.act(j, o).decode(psi_max))
            .collect();
        wifi += joint.iter().filter(|a| a.protocol == Protocol::Wifi).count();
        sc.apply(&joint);
        let (_, report) = env.report(&sc.fleet, sc.shadowing())?;
        per_step_ms.push(report.system_mean_ms);
        actions.push(joint);
        sc.step_mobility();
    }
    let steps = per_step_ms.len() as f64;
    Ok(RolloutStats {
        mean_delay_ms: per_step_ms.iter().sum::<f64>() / steps,
        wifi_share: wifi as f64 / (steps * sc.fleet.len() as f64),
        per_step_ms,
        actions,
    })
}
