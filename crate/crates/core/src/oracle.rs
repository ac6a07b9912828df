//! Brute-force reference implementations used to check the analytical model:
//! a slot-level schedule walker, truncated and Monte-Carlo delay evaluators,
//! a collision simulator and an exhaustive assignment search.

use rand::Rng;
use thiserror::Error;

use crate::airspace::{Assignment, EnvError, Environment, Scenario};
use crate::protocol::{
    ble_interval, wifi_interval, BleChannel, ChannelMatchSet, ProtocolError, SlotParams, WifiChannel,
};
use crate::radio::Protocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    TxPacket,
    RxWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineEvent {
    pub kind: EventKind,
    pub channel: u8,
    pub start_slot: u64,
    pub duration_slots: u64,
}

impl TimelineEvent {
    fn end(&self) -> u64 {
        self.start_slot + self.duration_slots
    }
}

/// Puts events in chronological order; windows sort before packets that
/// start on the same slot.
fn chronological(mut events: Vec<TimelineEvent>) -> Vec<TimelineEvent> {
    events.sort_by_key(|e| (e.start_slot, e.kind == EventKind::TxPacket, e.channel));
    events
}

/// Scan windows of a rotating scanner: channel `k` of `channels` is open
/// during `[n*period + k*stride, n*period + k*stride + open)`. Only windows
/// that end after `from` and start before `to` are produced.
fn scan_windows(channels: &[u8], stride: u64, open: u64, from: u64, to: u64) -> Vec<TimelineEvent> {
    let period = stride * channels.len() as u64;
    let mut out = Vec::new();
    let mut base = (from / period) * period;
    while base <= to {
        for (k, &ch) in channels.iter().enumerate() {
            let start = base + k as u64 * stride;
            if start <= to && start + open > from {
                out.push(TimelineEvent {
                    kind: EventKind::RxWindow,
                    channel: ch,
                    start_slot: start,
                    duration_slots: open,
                });
            }
        }
        base += period;
    }
    out
}

/// Packet starts that lie fully inside an open window on the same channel,
/// grouped per channel in `channels` order.
fn contained_packets(events: &[TimelineEvent], channels: &[u8]) -> Vec<ChannelMatchSet> {
    let mut open: Vec<Option<TimelineEvent>> = vec![None; channels.len()];
    let mut out: Vec<ChannelMatchSet> = channels
        .iter()
        .map(|&c| ChannelMatchSet {
            channel: c,
            slots: Vec::new(),
        })
        .collect();
    for e in events {
        let Some(k) = channels.iter().position(|&c| c == e.channel) else {
            continue;
        };
        match e.kind {
            EventKind::RxWindow => open[k] = Some(*e),
            EventKind::TxPacket => {
                if let Some(w) = open[k] {
                    if w.start_slot <= e.start_slot && e.end() <= w.end() && w.duration_slots > 0 {
                        out[k].slots.push(e.start_slot);
                    }
                }
            }
        }
    }
    out
}

/// Every BLE PDU and scan window touching the GNSS cycle `[t0, t0 + T]`.
pub fn ble_timeline<R: Rng>(
    t0: u64,
    psi: u32,
    params: &SlotParams,
    randomized_rd: bool,
    rng: &mut R,
) -> Result<Vec<TimelineEvent>, ProtocolError> {
    let a_hat = ble_interval(psi, params)?;
    let end = t0 + params.t_gnss;
    let chans: Vec<u8> = BleChannel::ALL.iter().map(|c| c.number()).collect();
    let mut events = Vec::new();
    let mut event_start = t0;
    while event_start <= end {
        for (c, &ch) in chans.iter().enumerate() {
            let start = event_start + c as u64 * (params.ble_ap + params.ble_pi);
            if start <= end {
                events.push(TimelineEvent {
                    kind: EventKind::TxPacket,
                    channel: ch,
                    start_slot: start,
                    duration_slots: params.ble_ap,
                });
            }
        }
        event_start += a_hat;
        if randomized_rd && params.ble_rd > 0 {
            event_start += rng.random_range(0..=params.ble_rd);
        }
    }
    events.extend(scan_windows(&chans, params.ble_si, params.ble_sw, t0, end + params.ble_ap));
    Ok(chronological(events))
}

/// Walks the BLE schedule slot by slot and reports the received PDU starts
/// per advertising channel.
pub fn walk_ble_timeline<R: Rng>(
    t0: u64,
    psi: u32,
    params: &SlotParams,
    randomized_rd: bool,
    rng: &mut R,
) -> Result<[ChannelMatchSet; 3], ProtocolError> {
    let events = ble_timeline(t0, psi, params, randomized_rd, rng)?;
    let chans: Vec<u8> = BleChannel::ALL.iter().map(|c| c.number()).collect();
    let mut sets = contained_packets(&events, &chans).into_iter();
    Ok([sets.next().unwrap(), sets.next().unwrap(), sets.next().unwrap()])
}

/// Every beacon on `channel` and every passive-scan dwell touching the cycle.
pub fn wifi_timeline(
    t0: u64,
    psi: u32,
    channel: WifiChannel,
    params: &SlotParams,
) -> Result<Vec<TimelineEvent>, ProtocolError> {
    let b_hat = wifi_interval(psi, params)?;
    let end = t0 + params.t_gnss;
    let mut events = Vec::new();
    let mut start = t0;
    while start <= end {
        events.push(TimelineEvent {
            kind: EventKind::TxPacket,
            channel: channel.number(),
            start_slot: start,
            duration_slots: params.wifi_bd,
        });
        start += b_hat;
    }
    let chans: Vec<u8> = WifiChannel::ALL.iter().map(|c| c.number()).collect();
    events.extend(scan_windows(
        &chans,
        params.wifi_ts + params.wifi_ct,
        params.wifi_ts,
        t0,
        end + params.wifi_bd,
    ));
    Ok(chronological(events))
}

pub fn walk_wifi_timeline(
    t0: u64,
    psi: u32,
    channel: WifiChannel,
    params: &SlotParams,
) -> Result<ChannelMatchSet, ProtocolError> {
    let events = wifi_timeline(t0, psi, channel, params)?;
    let mut sets = contained_packets(&events, &[channel.number()]);
    Ok(sets.remove(0))
}

/// One reception-model configuration for walker/analytical comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCase {
    pub params: SlotParams,
    pub psi: u32,
    pub t0: u64,
}

/// Draws valid slot parameters whose BLE and Wi-Fi scan rotations are at
/// most `max_period` slots long (`max_period >= 6`), with a rate in `1..=10`.
pub fn random_case<R: Rng>(rng: &mut R, max_period: u64) -> OracleCase {
    assert!(max_period >= 6, "max_period must allow a 2-slot scan interval");
    let stride_max = max_period / 3;
    let ble_si = rng.random_range(2..=stride_max);
    let ble_ap = rng.random_range(1..=(ble_si - 1).min(4));
    let ble_pi = rng.random_range(1..=(ble_si - ble_ap).min(3));
    let ble_sw = rng.random_range(ble_ap..=ble_si);
    let wifi_ct = rng.random_range(1..=(stride_max - 1).min(3));
    let wifi_ts = rng.random_range(1..=stride_max - wifi_ct);
    let wifi_bd = rng.random_range(1..=wifi_ts.min(5));
    let params = SlotParams {
        delta_us: 125.0,
        t_gnss: rng.random_range(50..=2000),
        ble_ap,
        ble_pi,
        ble_rd: rng.random_range(0..=8),
        ble_sw,
        ble_si,
        wifi_bd,
        wifi_ts,
        wifi_ct,
    };
    OracleCase {
        params,
        psi: rng.random_range(1..=10),
        t0: rng.random_range(0..2 * max_period),
    }
}

/// A slot present in exactly one of the analytical and walked match sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotMismatch {
    pub protocol: Protocol,
    /// Channel of the transmitted packet.
    pub channel: u8,
    pub slot: u64,
    pub in_analytical: bool,
}

fn symmetric_difference(protocol: Protocol, a: &ChannelMatchSet, w: &ChannelMatchSet, out: &mut Vec<SlotMismatch>) {
    let only = |x: &[u64], y: &[u64], in_analytical: bool, out: &mut Vec<SlotMismatch>| {
        for &s in x {
            if y.binary_search(&s).is_err() {
                out.push(SlotMismatch {
                    protocol,
                    channel: a.channel,
                    slot: s,
                    in_analytical,
                });
            }
        }
    };
    only(&a.slots, &w.slots, true, out);
    only(&w.slots, &a.slots, false, out);
}

/// Compares the analytical BLE and Wi-Fi match sets of `case` with the
/// deterministic slot walker on every channel.
pub fn compare_case(case: &OracleCase) -> Result<Vec<SlotMismatch>, ProtocolError> {
    let OracleCase { params, psi, t0 } = *case;
    let mut out = Vec::new();
    // the deterministic walker never draws from the rng
    let mut unused = crate::seed::stream(0, &[]);
    let walked = walk_ble_timeline(t0, psi, &params, false, &mut unused)?;
    let analytical = crate::protocol::ble_match_all(t0, psi, &params)?;
    for (a, w) in analytical.iter().zip(&walked) {
        symmetric_difference(Protocol::Ble4, a, w, &mut out);
    }
    let b_hat = wifi_interval(psi, &params)?;
    for ch in WifiChannel::ALL {
        let a = crate::protocol::wifi_match_channel(t0, ch, b_hat, &params)?;
        let w = walk_wifi_timeline(t0, psi, ch, &params)?;
        symmetric_difference(Protocol::Wifi, &a, &w, &mut out);
    }
    Ok(out)
}

/// The double sum over retransmission cycles, cut after `cycles` cycles.
pub fn truncated_expected_delay(match_delays: &[u64], p: f64, t_gnss: u64, cycles: u32) -> f64 {
    let n = match_delays.len() as i32;
    let miss = 1.0 - p;
    let mut total = 0.0;
    for k in 0..cycles {
        let shift = k as f64 * t_gnss as f64;
        for (i, &d) in match_delays.iter().enumerate() {
            total += miss.powi(i as i32 + n * k as i32) * p * (d as f64 + shift);
        }
    }
    total
}

/// Mean delay of the first surviving packet over `trials` simulated
/// packet trains, each packet lost independently with probability `1 - p`.
pub fn mc_expected_delay<R: Rng>(match_delays: &[u64], p: f64, t_gnss: u64, trials: usize, rng: &mut R) -> f64 {
    if match_delays.is_empty() || !(p > 0.0) {
        return f64::INFINITY;
    }
    let mut sum = 0.0;
    for _ in 0..trials {
        let mut cycle = 0u64;
        'train: loop {
            for &d in match_delays {
                if rng.random::<f64>() < p {
                    sum += (d + cycle * t_gnss) as f64;
                    break 'train;
                }
            }
            cycle += 1;
        }
    }
    sum / trials as f64
}

/// Monte-Carlo estimate of the probability that a packet of `packet_len`
/// slots, placed uniformly on a cycle of `t_gnss` slots, overlaps no packet
/// of the interferers. Interferer `k` sends `rates[k]` evenly spaced packets
/// per cycle with a uniformly random phase. Returns the estimate and its
/// standard error.
pub fn mc_noncollision<R: Rng>(rates: &[u32], packet_len: u64, t_gnss: u64, trials: usize, rng: &mut R) -> (f64, f64) {
    let t = t_gnss as f64;
    let len = packet_len as f64;
    let mut ok = 0usize;
    for _ in 0..trials {
        let x = rng.random::<f64>() * t;
        let hit = rates.iter().any(|&psi| {
            let spacing = t / psi as f64;
            let phase = rng.random::<f64>() * spacing;
            // nearest interferer starts on either side of x, on the circle
            let rel = (x - phase).rem_euclid(spacing);
            rel < len || spacing - rel < len
        });
        if !hit {
            ok += 1;
        }
    }
    let p = ok as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("exhaustive search over {0} joint assignments exceeds the limit")]
    TooLarge(f64),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub const EXHAUSTIVE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub assignment: Vec<Assignment>,
    pub objective_ms: f64,
}

/// Action `index` in protocol-major order: BLE rates `1..=psi_max`, then Wi-Fi.
pub fn assignment_of_index(index: usize, psi_max: u32) -> Assignment {
    let psi_max = psi_max as usize;
    Assignment {
        protocol: Protocol::ALL[index / psi_max],
        rate: (1 + index % psi_max) as u32,
    }
}

/// Tries every joint assignment at the scenario's current step. Ties go to
/// the lexicographically smallest action-index tuple.
pub fn exhaustive_optimize(scenario: &Scenario, env: &Environment) -> Result<ExhaustiveResult, OracleError> {
    let m = scenario.fleet.len();
    let per = 2 * env.psi_max() as usize;
    let total = (per as f64).powi(m as i32);
    if total > EXHAUSTIVE_LIMIT {
        return Err(OracleError::TooLarge(total));
    }
    let mut fleet = scenario.fleet.clone();
    let shadowing = scenario.shadowing();
    let mut idx = vec![0usize; m];
    let mut best: Option<ExhaustiveResult> = None;
    loop {
        let assignment: Vec<Assignment> = idx.iter().map(|&i| assignment_of_index(i, env.psi_max())).collect();
        for (u, a) in fleet.iter_mut().zip(&assignment) {
            u.protocol = a.protocol;
            u.rate = a.rate;
        }
        let (_, report) = env.report(&fleet, shadowing)?;
        if best.as_ref().is_none_or(|b| report.system_mean_ms < b.objective_ms) {
            best = Some(ExhaustiveResult {
                assignment,
                objective_ms: report.system_mean_ms,
            });
        }
        // odometer increment, last UAV fastest
        let mut k = m;
        loop {
            if k == 0 {
                return Ok(best.unwrap_or(ExhaustiveResult {
                    assignment: Vec::new(),
                    objective_ms: 0.0,
                }));
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < per {
                break;
            }
            idx[k] = 0;
        }
    }
}
