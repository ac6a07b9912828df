//! Training runs, policy checkpoints and held-out evaluation against the
//! fixed-protocol baselines.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rid_core::airspace::{Assignment, Environment, Scenario, ScenarioConfig};
use rid_core::madqn::{rollout, train, EpisodeStats, MadqnError, ObsConfig, Policy, QNetwork};
use rid_core::radio::Protocol;
use rid_core::{seed, Scalar};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::{mean_std, write_csv};
use crate::sweep::fixed_delay_ms;
use crate::CliError;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: u32,
    pub code_version: String,
    /// Digest of the scenario, protocol, radio and training settings.
    pub config_hash: String,
    pub seed: u64,
    pub obs: ObsConfig,
    pub dims: Vec<usize>,
    /// Online-network parameters, one vector per UAV.
    pub nets: Vec<Vec<Scalar>>,
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy<Scalar>, cfg: &RunConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.policy_hash(),
            seed: cfg.experiment.seed,
            obs: policy.obs,
            dims: policy.nets.first().map(|n| n.dims().to_vec()).unwrap_or_default(),
            nets: policy.nets.iter().map(|n| n.params().to_vec()).collect(),
        }
    }

    /// Rebuilds the policy after checking it was trained under `cfg`.
    pub fn into_policy(self, cfg: &RunConfig) -> Result<Policy<Scalar>, CliError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(CliError::Config(format!("unsupported checkpoint format {}", self.format)));
        }
        let want = cfg.policy_hash();
        if self.config_hash != want {
            return Err(CliError::Config(format!(
                "checkpoint/config hash mismatch: checkpoint {}, config {want}",
                self.config_hash
            )));
        }
        if self.nets.len() != cfg.scenario.num_uavs {
            return Err(CliError::Config(format!(
                "checkpoint holds {} agents, scenario has {}",
                self.nets.len(),
                cfg.scenario.num_uavs
            )));
        }
        let nets = self
            .nets
            .into_iter()
            .map(|p| QNetwork::from_params(&self.dims, p))
            .collect::<Result<Vec<_>, MadqnError>>()?;
        Ok(Policy { nets, obs: self.obs })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string(self).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CurveRow {
    episode: usize,
    extent_m: f64,
    epsilon: f64,
    mean_reward: f64,
    system_delay_ms: f64,
    loss: Option<f64>,
    updates: usize,
}

impl From<&EpisodeStats> for CurveRow {
    fn from(s: &EpisodeStats) -> Self {
        Self {
            episode: s.episode,
            extent_m: s.extent_m,
            epsilon: s.epsilon,
            mean_reward: s.mean_reward,
            system_delay_ms: s.system_delay_ms,
            loss: s.loss,
            updates: s.updates,
        }
    }
}

pub struct Trained {
    pub policy: Policy<Scalar>,
    pub curve: Vec<EpisodeStats>,
}

pub fn run_training(cfg: &RunConfig, env: &Environment) -> Result<Trained, CliError> {
    let out = train::<Scalar>(env, &cfg.scenario, &cfg.training, cfg.experiment.seed, |s| {
        if s.episode % 10 == 0 || s.episode + 1 == cfg.training.episodes {
            log::info!(
                "episode {:>4}  extent {:>6} m  eps {:.3}  reward {:.4}  delay {:.1} ms",
                s.episode,
                s.extent_m,
                s.epsilon,
                s.mean_reward,
                s.system_delay_ms
            );
        }
    })?;
    Ok(Trained {
        policy: out.policy,
        curve: out.curve,
    })
}

pub fn write_training(dir: &Path, cfg: &RunConfig, t: &Trained) -> Result<Vec<PathBuf>, CliError> {
    let rows: Vec<CurveRow> = t.curve.iter().map(CurveRow::from).collect();
    let curve = write_csv(
        dir,
        "train_curve.csv",
        &["episode", "extent_m", "epsilon", "mean_reward", "system_delay_ms", "loss", "updates"],
        &rows,
    )?;
    let ckpt = dir.join("checkpoint.json");
    Checkpoint::from_policy(&t.policy, cfg).save(&ckpt)?;
    Ok(vec![curve, ckpt])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    High,
    Low,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub regime: Regime,
    pub airspace_side_m: f64,
    pub eval_seed: usize,
    pub policy_ms: f64,
    pub fixed_ble_ms: f64,
    pub fixed_wifi_ms: f64,
    pub wifi_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummaryRow {
    pub regime: Regime,
    pub policy_ms: f64,
    pub policy_std_ms: Option<f64>,
    pub fixed_ble_ms: f64,
    pub fixed_wifi_ms: f64,
    /// Relative delay reduction versus each baseline.
    pub reduction_vs_ble: f64,
    pub reduction_vs_wifi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub summary: Vec<EvalSummaryRow>,
}

impl Evaluation {
    pub fn regime(&self, r: Regime) -> &EvalSummaryRow {
        self.summary.iter().find(|s| s.regime == r).expect("all regimes summarized")
    }
}

/// Scenario seed of held-out evaluation run `k`; disjoint from the training
/// episode seeds by tag.
pub fn eval_seed(base: u64, k: usize) -> u64 {
    seed::derive(base, &[seed::TAG_EVAL, k as u64])
}

/// Rolls the greedy policy over every size of the high- and low-density
/// regimes; the dynamic regime pools both.
pub fn evaluate(cfg: &RunConfig, env: &Environment, policy: &Policy<Scalar>) -> Result<Evaluation, CliError> {
    let ex = &cfg.experiment;
    let steps = cfg.scenario.t_max;
    let ble = Assignment {
        protocol: Protocol::Ble4,
        rate: ex.ble_rate,
    };
    let wifi = Assignment {
        protocol: Protocol::Wifi,
        rate: ex.wifi_rate,
    };
    let jobs: Vec<(Regime, f64, usize)> = [(Regime::High, &ex.high_density_m), (Regime::Low, &ex.low_density_m)]
        .into_iter()
        .flat_map(|(reg, sizes)| sizes.iter().flat_map(move |&s| (0..ex.eval_seeds).map(move |k| (reg, s, k))))
        .collect();
    let rows: Vec<EvalRow> = jobs
        .par_iter()
        .map(|&(regime, side, k)| {
            let sc_seed = eval_seed(ex.seed, k);
            let sc_cfg = ScenarioConfig {
                horizontal_extent_m: side,
                ..cfg.scenario
            };
            let run = rollout(policy, env, &Scenario::new(sc_cfg, sc_seed)?)?;
            Ok(EvalRow {
                regime,
                airspace_side_m: side,
                eval_seed: k,
                policy_ms: run.mean_delay_ms,
                fixed_ble_ms: fixed_delay_ms(env, &cfg.scenario, side, steps, sc_seed, ble)?,
                fixed_wifi_ms: fixed_delay_ms(env, &cfg.scenario, side, steps, sc_seed, wifi)?,
                wifi_share: run.wifi_share,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let summarize = |regime: Regime, pick: &dyn Fn(&EvalRow) -> bool| {
        let sel: Vec<&EvalRow> = rows.iter().filter(|r| pick(r)).collect();
        let pol: Vec<f64> = sel.iter().map(|r| r.policy_ms).collect();
        let (policy_ms, policy_std_ms) = mean_std(&pol);
        let fixed_ble_ms = sel.iter().map(|r| r.fixed_ble_ms).sum::<f64>() / sel.len() as f64;
        let fixed_wifi_ms = sel.iter().map(|r| r.fixed_wifi_ms).sum::<f64>() / sel.len() as f64;
        EvalSummaryRow {
            regime,
            policy_ms,
            policy_std_ms,
            fixed_ble_ms,
            fixed_wifi_ms,
            reduction_vs_ble: 1.0 - policy_ms / fixed_ble_ms,
            reduction_vs_wifi: 1.0 - policy_ms / fixed_wifi_ms,
        }
    };
    let summary = vec![
        summarize(Regime::High, &|r| r.regime == Regime::High),
        summarize(Regime::Low, &|r| r.regime == Regime::Low),
        summarize(Regime::Dynamic, &|_| true),
    ];
    Ok(Evaluation { rows, summary })
}

pub fn write_evaluation(dir: &Path, e: &Evaluation) -> Result<Vec<PathBuf>, CliError> {
    Ok(vec![
        write_csv(
            dir,
            "eval.csv",
            &[
                "regime",
                "airspace_side_m",
                "eval_seed",
                "policy_ms",
                "fixed_ble_ms",
                "fixed_wifi_ms",
                "wifi_share",
            ],
            &e.rows,
        )?,
        write_csv(
            dir,
            "eval_summary.csv",
            &[
                "regime",
                "policy_ms",
                "policy_std_ms",
                "fixed_ble_ms",
                "fixed_wifi_ms",
                "reduction_vs_ble",
                "reduction_vs_wifi",
            ],
            &e.summary,
        )?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.scenario.num_uavs = 3;
        cfg.scenario.t_max = 3;
        cfg.training.episodes = 2;
        cfg.training.steps_per_episode = 4;
        cfg.training.batch_size = 4;
        cfg.training.buffer_capacity = 64;
        cfg.training.min_fill = Some(8);
        cfg.training.hidden = vec![8];
        cfg.experiment.eval_seeds = 2;
        cfg.experiment.high_density_m = vec![100.0];
        cfg.experiment.low_density_m = vec![5000.0];
        cfg
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let cfg = tiny();
        let env = cfg.environment().unwrap();
        let t = run_training(&cfg, &env).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        Checkpoint::from_policy(&t.policy, &cfg).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().into_policy(&cfg).unwrap();
        assert_eq!(back, t.policy);
    }

    #[test]
    fn checkpoint_rejects_other_config() {
        let cfg = tiny();
        let env = cfg.environment().unwrap();
        let t = run_training(&cfg, &env).unwrap();
        let ck = Checkpoint::from_policy(&t.policy, &cfg);
        let mut other = cfg.clone();
        other.training.gamma = 0.5;
        let err = ck.into_policy(&other).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"), "{err}");
    }

    #[test]
    fn evaluation_has_three_regimes_and_is_deterministic() {
        let cfg = tiny();
        let env = cfg.environment().unwrap();
        let t = run_training(&cfg, &env).unwrap();
        let a = evaluate(&cfg, &env, &t.policy).unwrap();
        let b = evaluate(&cfg, &env, &t.policy).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        let regimes: Vec<Regime> = a.summary.iter().map(|s| s.regime).collect();
        assert_eq!(regimes, vec![Regime::High, Regime::Low, Regime::Dynamic]);
        let d = a.regime(Regime::Dynamic);
        let mean = a.rows.iter().map(|r| r.policy_ms).sum::<f64>() / 4.0;
        assert!((d.policy_ms - mean).abs() < 1e-9);
    }
}
