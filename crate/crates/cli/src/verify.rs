//! Oracle checks of the analytical reception model against slot walkers.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use rid_core::oracle::{compare_case, random_case, walk_ble_timeline, OracleCase, SlotMismatch};
use rid_core::protocol::{ble_match_channel, ble_rx_delay, BleChannel, ProtocolError, SlotParams};
use rid_core::radio::Protocol;
use rid_core::seed;
use rid_core::slotmath::{crt_match, gcd, PeriodicEvent};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::write_csv;
use crate::CliError;

/// Mismatching slots kept per run for the report.
pub const REPORTED_MISMATCHES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: &'static str,
    pub cases: usize,
    pub mismatches: usize,
    pub status: Status,
    /// Mean absolute deviation in ms, for report-only checks.
    pub value: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MismatchRow {
    pub check: &'static str,
    pub case: usize,
    pub psi: u32,
    pub t0: u64,
    pub protocol: Protocol,
    pub channel: u8,
    pub slot: u64,
    pub in_analytical: bool,
    pub in_walker: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckRow>,
    pub mismatches: Vec<MismatchRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| matches!(c.status, Status::Pass | Status::Report))
    }

    /// One-line description of the first failing check.
    pub fn failure(&self) -> Option<String> {
        self.checks
            .iter()
            .find(|c| matches!(c.status, Status::Fail | Status::Error))
            .map(|c| format!("{} failed: {} mismatching slots over {} cases {}", c.check, c.mismatches, c.cases, c.detail).trim_end().to_string())
    }
}

fn crt_check(n: usize, base: u64) -> (CheckRow, Vec<MismatchRow>) {
    let mut rng = seed::stream(base, &[seed::TAG_VERIFY, 0]);
    let mut bad = 0;
    for _ in 0..n {
        let (s1, s2) = loop {
            let a = rng.random_range(1..=512u64);
            let b = rng.random_range(1..=512u64);
            if gcd(a, b) == 1 {
                break (a, b);
            }
        };
        let (r1, r2) = (rng.random_range(0..s1), rng.random_range(0..s2));
        let got = crt_match(
            PeriodicEvent::new(r1, s1).expect("positive period"),
            PeriodicEvent::new(r2, s2).expect("positive period"),
            s1 * s2,
        )
        .map(|m| m.matches);
        let want: Vec<u64> = (0..s1 * s2).filter(|t| t % s1 == r1 && t % s2 == r2).collect();
        if got.as_ref() != Ok(&want) {
            bad += 1;
        }
    }
    let row = CheckRow {
        check: "crt_exhaustive",
        cases: n,
        mismatches: bad,
        status: if bad == 0 { Status::Pass } else { Status::Fail },
        value: None,
        detail: String::new(),
    };
    (row, Vec::new())
}

/// Analytical BLE match sets, optionally with a forced advertising interval.
fn ble_analytical(case: &OracleCase, interval: Option<u64>) -> Result<Vec<SlotMismatch>, ProtocolError> {
    let Some(a_hat) = interval else {
        return compare_case(case);
    };
    let mut out = Vec::new();
    let mut unused = seed::stream(0, &[]);
    let walked = walk_ble_timeline(case.t0, case.psi, &case.params, false, &mut unused)?;
    for (ch, w) in BleChannel::ALL.into_iter().zip(walked) {
        let a = ble_match_channel(case.t0, ch, a_hat, &case.params)?;
        for &s in a.slots.iter().filter(|s| !w.slots.contains(s)) {
            out.push(SlotMismatch {
                protocol: Protocol::Ble4,
                channel: a.channel,
                slot: s,
                in_analytical: true,
            });
        }
        for &s in w.slots.iter().filter(|s| !a.slots.contains(s)) {
            out.push(SlotMismatch {
                protocol: Protocol::Ble4,
                channel: a.channel,
                slot: s,
                in_analytical: false,
            });
        }
    }
    Ok(out)
}

fn equivalence_check(
    check: &'static str,
    cases: &[OracleCase],
    interval: Option<u64>,
) -> (CheckRow, Vec<MismatchRow>) {
    let results: Vec<Result<Vec<SlotMismatch>, ProtocolError>> =
        cases.par_iter().map(|c| ble_analytical(c, interval)).collect();
    let mut total = 0;
    let mut rows = Vec::new();
    let mut error = None;
    for (i, (case, res)) in cases.iter().zip(results).enumerate() {
        match res {
            Ok(ms) => {
                total += ms.len();
                rows.extend(ms.into_iter().map(|m| MismatchRow {
                    check,
                    case: i,
                    psi: case.psi,
                    t0: case.t0,
                    protocol: m.protocol,
                    channel: m.channel,
                    slot: m.slot,
                    in_analytical: m.in_analytical,
                    in_walker: !m.in_analytical,
                }));
            }
            Err(e) => {
                error.get_or_insert(format!("case {i} (psi {}, t0 {}): {e}", case.psi, case.t0));
            }
        }
    }
    rows.truncate(REPORTED_MISMATCHES);
    let status = match (&error, total) {
        (Some(_), _) => Status::Error,
        (None, 0) => Status::Pass,
        _ => Status::Fail,
    };
    let row = CheckRow {
        check,
        cases: cases.len(),
        mismatches: total,
        status,
        value: None,
        detail: error.unwrap_or_default(),
    };
    (row, rows)
}

fn first_delay(sets: &[rid_core::protocol::ChannelMatchSet], t0: u64, params: &SlotParams) -> Option<u64> {
    sets.iter()
        .filter_map(|s| s.slots.first())
        .min()
        .map(|&slot| ble_rx_delay(slot, t0, params))
}

/// Mean absolute deviation, in ms, of the first BLE reception delay under
/// randomized advertising delays from the analytical first reception.
fn randomized_rd_report(params: &SlotParams, cfg: &RunConfig) -> Result<CheckRow, ProtocolError> {
    let v = &cfg.experiment.verify;
    let mut rng = seed::stream(cfg.experiment.seed, &[seed::TAG_VERIFY, 1]);
    let mut sum = 0.0;
    let mut n = 0usize;
    for psi in 1..=cfg.protocol.psi_max {
        for &t0 in &v.offsets {
            let analytical = rid_core::protocol::ble_match_all(t0, psi, params)?;
            let Some(d0) = first_delay(&analytical, t0, params) else {
                continue;
            };
            for _ in 0..v.rd_trials {
                let walked = walk_ble_timeline(t0, psi, params, true, &mut rng)?;
                let d = first_delay(&walked, t0, params).unwrap_or(params.t_gnss);
                sum += (d as f64 - d0 as f64).abs();
                n += 1;
            }
        }
    }
    let mad = if n == 0 { 0.0 } else { params.slots_to_ms(sum / n as f64) };
    Ok(CheckRow {
        check: "ble_randomized_rd",
        cases: n,
        mismatches: 0,
        status: Status::Report,
        value: Some(mad),
        detail: "mean absolute deviation of first reception delay (ms)".into(),
    })
}

pub fn verify(cfg: &RunConfig) -> Result<VerifyReport, CliError> {
    let params = cfg.slot_params()?;
    let v = &cfg.experiment.verify;
    let base = cfg.experiment.seed;
    let mut checks = Vec::new();
    let mut mismatches = Vec::new();

    let (row, _) = crt_check(v.random_cases.max(1), base);
    checks.push(row);

    let active: Vec<OracleCase> = (1..=cfg.protocol.psi_max)
        .flat_map(|psi| v.offsets.iter().map(move |&t0| OracleCase { params, psi, t0 }))
        .collect();
    let (row, ms) = equivalence_check("active_timing", &active, v.ble_interval_override);
    checks.push(row);
    mismatches.extend(ms);

    let mut rng = seed::stream(base, &[seed::TAG_VERIFY, 2]);
    let random: Vec<OracleCase> = (0..v.random_cases).map(|_| random_case(&mut rng, v.max_period_slots)).collect();
    let (row, ms) = equivalence_check("random_timing", &random, None);
    checks.push(row);
    mismatches.extend(ms);
    mismatches.truncate(REPORTED_MISMATCHES);

    if v.randomized_rd {
        checks.push(randomized_rd_report(&params, cfg)?);
    }
    Ok(VerifyReport { checks, mismatches })
}

pub fn write_verify(dir: &Path, r: &VerifyReport) -> Result<Vec<PathBuf>, CliError> {
    Ok(vec![
        write_csv(dir, "verify.csv", &["check", "cases", "mismatches", "status", "value", "detail"], &r.checks)?,
        write_csv(
            dir,
            "verify_mismatches.csv",
            &[
                "check",
                "case",
                "psi",
                "t0",
                "protocol",
                "channel",
                "slot",
                "in_analytical",
                "in_walker",
            ],
            &r.mismatches,
        )?,
    ])
}
