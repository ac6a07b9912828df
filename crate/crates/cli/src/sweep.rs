//! Fixed-assignment sweeps: delay versus rate, and the two protocols across
//! airspace sizes.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rid_core::airspace::{evaluate_objective, Assignment, Environment, RawAssignment, Scenario, ScenarioConfig};
use rid_core::radio::Protocol;
use rid_core::seed;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{mean_std, write_csv};
use crate::CliError;

/// Scenario seed of replicate `r`. Shared by every protocol, rate and size so
/// the compared configurations see the same placements and channel draws.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    seed::derive(base, &[seed::TAG_REPLICATE, r as u64])
}

/// Mean system delay when every UAV holds `assignment` for `steps` steps.
pub fn fixed_delay_ms(
    env: &Environment,
    base: &ScenarioConfig,
    side_m: f64,
    steps: usize,
    scenario_seed: u64,
    assignment: Assignment,
) -> Result<f64, CliError> {
    let cfg = ScenarioConfig {
        horizontal_extent_m: side_m,
        t_max: steps,
        initial: assignment,
        ..*base
    };
    let sc = Scenario::new(cfg, scenario_seed)?;
    let plan = vec![vec![RawAssignment::from(assignment); cfg.num_uavs]; steps];
    Ok(evaluate_objective(&sc, env, &plan)?.mean_delay_ms)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub protocol: Protocol,
    pub psi: u32,
    pub airspace_side_m: f64,
    pub replicate: usize,
    pub system_mean_delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummaryRow {
    pub protocol: Protocol,
    pub psi: u32,
    pub airspace_side_m: f64,
    pub replicates: usize,
    pub mean_ms: f64,
    pub std_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledRow {
    pub protocol: Protocol,
    pub psi: u32,
    pub mean_ms: f64,
    pub std_ms: Option<f64>,
    pub argmin: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSweep {
    /// Ordered by protocol, rate, size, replicate.
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummaryRow>,
    /// Per protocol and rate, pooled over sizes and replicates.
    pub pooled: Vec<PooledRow>,
}

impl RateSweep {
    /// Rate with the lowest pooled mean delay; ties go to the lower rate.
    pub fn optimal_rate(&self, protocol: Protocol) -> Option<u32> {
        self.pooled.iter().find(|r| r.protocol == protocol && r.argmin).map(|r| r.psi)
    }
}

/// Evaluates every protocol and rate in `1..=psi_max` on every size and
/// replicate. Work is spread over the current rayon pool; the result order
/// does not depend on it.
pub fn rate_sweep(cfg: &RunConfig, env: &Environment) -> Result<RateSweep, CliError> {
    let ex = &cfg.experiment;
    let steps = cfg.sweep_steps();
    let psi_max = cfg.protocol.psi_max;
    let jobs: Vec<(usize, usize)> = (0..ex.sizes_m.len())
        .flat_map(|s| (0..ex.replicates).map(move |r| (s, r)))
        .collect();
    // per job: delays indexed [protocol][psi - 1]
    let per_job: Vec<Vec<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let sc_seed = replicate_seed(ex.seed, r);
            Protocol::ALL
                .iter()
                .map(|&protocol| {
                    (1..=psi_max)
                        .map(|rate| fixed_delay_ms(env, &cfg.scenario, ex.sizes_m[s], steps, sc_seed, Assignment { protocol, rate }))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let n_rep = ex.replicates;
    let delay = |p: usize, psi: u32, s: usize, r: usize| per_job[s * n_rep + r][p][psi as usize - 1];
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut pooled = Vec::new();
    for (p, &protocol) in Protocol::ALL.iter().enumerate() {
        let first_pooled = pooled.len();
        for psi in 1..=psi_max {
            let mut all = Vec::new();
            for (s, &side) in ex.sizes_m.iter().enumerate() {
                let vals: Vec<f64> = (0..n_rep).map(|r| delay(p, psi, s, r)).collect();
                for (r, &v) in vals.iter().enumerate() {
                    rows.push(SweepRow {
                        protocol,
                        psi,
                        airspace_side_m: side,
                        replicate: r,
                        system_mean_delay_ms: v,
                    });
                }
                let (mean_ms, std_ms) = mean_std(&vals);
                summary.push(SweepSummaryRow {
                    protocol,
                    psi,
                    airspace_side_m: side,
                    replicates: n_rep,
                    mean_ms,
                    std_ms,
                });
                all.extend(vals);
            }
            let (mean_ms, std_ms) = mean_std(&all);
            pooled.push(PooledRow {
                protocol,
                psi,
                mean_ms,
                std_ms,
                argmin: false,
            });
        }
        let best = (first_pooled..pooled.len())
            .min_by(|&a, &b| pooled[a].mean_ms.total_cmp(&pooled[b].mean_ms))
            .expect("psi_max is positive");
        pooled[best].argmin = true;
    }
    Ok(RateSweep { rows, summary, pooled })
}

pub fn write_rate_sweep(dir: &Path, sweep: &RateSweep) -> Result<Vec<PathBuf>, CliError> {
    Ok(vec![
        write_csv(
            dir,
            "rate_sweep.csv",
            &["protocol", "psi", "airspace_side_m", "replicate", "system_mean_delay_ms"],
            &sweep.rows,
        )?,
        write_csv(
            dir,
            "rate_sweep_summary.csv",
            &["protocol", "psi", "airspace_side_m", "replicates", "mean_ms", "std_ms"],
            &sweep.summary,
        )?,
        write_csv(
            dir,
            "rate_sweep_pooled.csv",
            &["protocol", "psi", "mean_ms", "std_ms", "argmin"],
            &sweep.pooled,
        )?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRow {
    pub airspace_side_m: f64,
    pub replicate: usize,
    pub ble_ms: f64,
    pub wifi_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensitySummaryRow {
    pub airspace_side_m: f64,
    pub replicates: usize,
    pub ble_mean_ms: f64,
    pub ble_std_ms: Option<f64>,
    pub wifi_mean_ms: f64,
    pub wifi_std_ms: Option<f64>,
    pub lower: Protocol,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCompare {
    pub rows: Vec<DensityRow>,
    pub summary: Vec<DensitySummaryRow>,
}

/// Fixed BLE and fixed Wi-Fi, each at its configured rate, on every size.
pub fn density_compare(cfg: &RunConfig, env: &Environment) -> Result<DensityCompare, CliError> {
    let ex = &cfg.experiment;
    let steps = cfg.sweep_steps();
    let ble = Assignment {
        protocol: Protocol::Ble4,
        rate: ex.ble_rate,
    };
    let wifi = Assignment {
        protocol: Protocol::Wifi,
        rate: ex.wifi_rate,
    };
    let jobs: Vec<(f64, usize)> = ex
        .sizes_m
        .iter()
        .flat_map(|&side| (0..ex.replicates).map(move |r| (side, r)))
        .collect();
    let rows: Vec<DensityRow> = jobs
        .par_iter()
        .map(|&(side, r)| {
            let sc_seed = replicate_seed(ex.seed, r);
            Ok(DensityRow {
                airspace_side_m: side,
                replicate: r,
                ble_ms: fixed_delay_ms(env, &cfg.scenario, side, steps, sc_seed, ble)?,
                wifi_ms: fixed_delay_ms(env, &cfg.scenario, side, steps, sc_seed, wifi)?,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let summary = rows
        .chunks(ex.replicates)
        .map(|chunk| {
            let b: Vec<f64> = chunk.iter().map(|r| r.ble_ms).collect();
            let w: Vec<f64> = chunk.iter().map(|r| r.wifi_ms).collect();
            let (ble_mean_ms, ble_std_ms) = mean_std(&b);
            let (wifi_mean_ms, wifi_std_ms) = mean_std(&w);
            DensitySummaryRow {
                airspace_side_m: chunk[0].airspace_side_m,
                replicates: chunk.len(),
                ble_mean_ms,
                ble_std_ms,
                wifi_mean_ms,
                wifi_std_ms,
                lower: if wifi_mean_ms < ble_mean_ms { Protocol::Wifi } else { Protocol::Ble4 },
            }
        })
        .collect();
    Ok(DensityCompare { rows, summary })
}

pub fn write_density(dir: &Path, d: &DensityCompare) -> Result<Vec<PathBuf>, CliError> {
    Ok(vec![
        write_csv(dir, "density.csv", &["airspace_side_m", "replicate", "ble_ms", "wifi_ms"], &d.rows)?,
        write_csv(
            dir,
            "density_summary.csv",
            &[
                "airspace_side_m",
                "replicates",
                "ble_mean_ms",
                "ble_std_ms",
                "wifi_mean_ms",
                "wifi_std_ms",
                "lower",
            ],
            &d.summary,
        )?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.protocol.psi_max = 10;
        cfg.experiment.sizes_m = vec![100.0, 5000.0];
        cfg.experiment.replicates = 2;
        cfg.experiment.sweep_steps = Some(2);
        cfg.scenario.num_uavs = 4;
        cfg
    }

    #[test]
    fn sweep_layout_and_single_argmin() {
        let cfg = small();
        let env = cfg.environment().unwrap();
        let s = rate_sweep(&cfg, &env).unwrap();
        assert_eq!(s.rows.len(), 2 * 10 * 2 * 2);
        assert_eq!(s.summary.len(), 2 * 10 * 2);
        assert_eq!(s.pooled.len(), 20);
        assert_eq!(s.pooled.iter().filter(|r| r.argmin).count(), 2);
        assert_eq!((s.rows[0].protocol, s.rows[0].psi, s.rows[1].replicate), (Protocol::Ble4, 1, 1));
        // rates 1..=6 never reach the BLE scan windows at the default timing
        assert!(s.optimal_rate(Protocol::Ble4).unwrap() > 6);
    }

    #[test]
    fn density_rows_follow_size_then_replicate() {
        let cfg = small();
        let env = cfg.environment().unwrap();
        let d = density_compare(&cfg, &env).unwrap();
        assert_eq!(d.rows.len(), 4);
        assert_eq!(d.rows[1].airspace_side_m, 100.0);
        assert_eq!(d.rows[2].airspace_side_m, 5000.0);
        assert_eq!(d.summary.len(), 2);
        assert_eq!(d.summary[0].replicates, 2);
    }

    #[test]
    fn density_values_match_rate_sweep_entries() {
        let cfg = small();
        let env = cfg.environment().unwrap();
        let s = rate_sweep(&cfg, &env).unwrap();
        let d = density_compare(&cfg, &env).unwrap();
        let pick = |p: Protocol, psi: u32, side: f64, r: usize| {
            s.rows
                .iter()
                .find(|x| x.protocol == p && x.psi == psi && x.airspace_side_m == side && x.replicate == r)
                .unwrap()
                .system_mean_delay_ms
        };
        for row in &d.rows {
            assert_eq!(row.ble_ms, pick(Protocol::Ble4, 9, row.airspace_side_m, row.replicate));
            assert_eq!(row.wifi_ms, pick(Protocol::Wifi, 10, row.airspace_side_m, row.replicate));
        }
    }
}
