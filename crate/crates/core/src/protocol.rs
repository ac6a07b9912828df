//! BLE 4 advertising and Wi-Fi beacon / passive-scan reception timing.
//!
//! All quantities are integer slots. The receiver's scan schedule is anchored
//! at slot 0; the transmitter's GNSS cycle starts at `t0`. A packet is
//! received when it lies entirely inside a scan window on its own channel.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slotmath::{coprime_approx, crt_solve, PeriodicEvent, SlotMathError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("scan window cannot hold a packet: window {window} < packet {packet} slots")]
    EmptyWindow { window: u64, packet: u64 },
    #[error("transmission rate must be a positive integer, got {0}")]
    InvalidRate(u32),
    #[error("invalid timing parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    SlotMath(#[from] SlotMathError),
}

/// Protocol timing quantized to slots of `delta_us` microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotParams {
    pub delta_us: f64,
    pub t_gnss: u64,
    pub ble_ap: u64,
    pub ble_pi: u64,
    pub ble_rd: u64,
    pub ble_sw: u64,
    pub ble_si: u64,
    pub wifi_bd: u64,
    pub wifi_ts: u64,
    pub wifi_ct: u64,
}

impl Default for SlotParams {
    fn default() -> Self {
        TimingMs::default()
            .quantize()
            .expect("default timing quantizes")
    }
}

impl SlotParams {
    /// Length of the BLE receiver's channel rotation, `3 * S_I`.
    pub fn ble_scan_period(&self) -> u64 {
        3 * self.ble_si
    }

    /// Length of the Wi-Fi passive-scan rotation, `3 * (T_S + C_T)`.
    pub fn wifi_scan_period(&self) -> u64 {
        3 * (self.wifi_ts + self.wifi_ct)
    }

    pub fn slots_to_ms(&self, slots: f64) -> f64 {
        slots * self.delta_us / 1000.0
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |msg: &str| Err(ProtocolError::InvalidParams(msg.to_string()));
        if !(self.delta_us > 0.0) {
            return bad("slot duration must be positive");
        }
        let positive = [
            ("t_gnss", self.t_gnss),
            ("ble_ap", self.ble_ap),
            ("ble_pi", self.ble_pi),
            ("ble_sw", self.ble_sw),
            ("ble_si", self.ble_si),
            ("wifi_bd", self.wifi_bd),
            ("wifi_ts", self.wifi_ts),
            ("wifi_ct", self.wifi_ct),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ProtocolError::InvalidParams(format!("{name} must be at least one slot")));
        }
        if self.ble_sw > self.ble_si {
            return bad("BLE scan window exceeds scan interval");
        }
        if self.ble_ap + self.ble_pi > self.ble_si {
            return bad("BLE PDU plus gap exceeds scan interval");
        }
        if self.ble_ap > self.ble_sw {
            return bad("BLE PDU longer than scan window");
        }
        if self.wifi_bd > self.wifi_ts {
            return bad("Wi-Fi beacon longer than dwell time");
        }
        Ok(())
    }
}

/// Physical protocol timing in milliseconds, as found in a run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingMs {
    pub delta_ms: f64,
    pub t_gnss_ms: f64,
    pub ble_ap_ms: f64,
    pub ble_pi_ms: f64,
    pub ble_rd_ms: f64,
    pub ble_sw_ms: f64,
    pub ble_si_ms: f64,
    pub wifi_bd_ms: f64,
    pub wifi_ts_ms: f64,
    pub wifi_ct_ms: f64,
}

impl Default for TimingMs {
    fn default() -> Self {
        Self {
            delta_ms: 0.125,
            t_gnss_ms: 1000.0,
            ble_ap_ms: 0.376,
            ble_pi_ms: 0.125,
            ble_rd_ms: 5.0,
            ble_sw_ms: 2.0,
            ble_si_ms: 8.0,
            wifi_bd_ms: 0.632,
            wifi_ts_ms: 6.0,
            wifi_ct_ms: 1.0,
        }
    }
}

impl TimingMs {
    /// Round every duration to the nearest slot, with a floor of one slot
    /// (the pseudo-random advertising delay may quantize to zero).
    pub fn quantize(&self) -> Result<SlotParams, ProtocolError> {
        if !(self.delta_ms > 0.0) || !self.delta_ms.is_finite() {
            return Err(ProtocolError::InvalidParams("delta_ms must be positive".into()));
        }
        let fields = [
            ("t_gnss_ms", self.t_gnss_ms),
            ("ble_ap_ms", self.ble_ap_ms),
            ("ble_pi_ms", self.ble_pi_ms),
            ("ble_sw_ms", self.ble_sw_ms),
            ("ble_si_ms", self.ble_si_ms),
            ("wifi_bd_ms", self.wifi_bd_ms),
            ("wifi_ts_ms", self.wifi_ts_ms),
            ("wifi_ct_ms", self.wifi_ct_ms),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ProtocolError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if !(self.ble_rd_ms >= 0.0) || !self.ble_rd_ms.is_finite() {
            return Err(ProtocolError::InvalidParams("ble_rd_ms must be non-negative".into()));
        }
        let slots = |ms: f64| ((ms / self.delta_ms).round() as u64).max(1);
        let params = SlotParams {
            delta_us: self.delta_ms * 1000.0,
            t_gnss: slots(self.t_gnss_ms),
            ble_ap: slots(self.ble_ap_ms),
            ble_pi: slots(self.ble_pi_ms),
            ble_rd: (self.ble_rd_ms / self.delta_ms).round() as u64,
            ble_sw: slots(self.ble_sw_ms),
            ble_si: slots(self.ble_si_ms),
            wifi_bd: slots(self.wifi_bd_ms),
            wifi_ts: slots(self.wifi_ts_ms),
            wifi_ct: slots(self.wifi_ct_ms),
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BleChannel {
    Ch37,
    Ch38,
    Ch39,
}

impl BleChannel {
    pub const ALL: [BleChannel; 3] = [BleChannel::Ch37, BleChannel::Ch38, BleChannel::Ch39];

    /// Position in the advertising sequence and in the scan rotation.
    pub fn index(self) -> u64 {
        self as u64
    }

    pub fn number(self) -> u8 {
        37 + self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum WifiChannel {
    Ch1,
    Ch6,
    Ch11,
}

impl WifiChannel {
    pub const ALL: [WifiChannel; 3] = [WifiChannel::Ch1, WifiChannel::Ch6, WifiChannel::Ch11];

    /// Position in the passive-scan rotation.
    pub fn index(self) -> u64 {
        self as u64
    }

    pub fn number(self) -> u8 {
        match self {
            WifiChannel::Ch1 => 1,
            WifiChannel::Ch6 => 6,
            WifiChannel::Ch11 => 11,
        }
    }
}

impl Default for WifiChannel {
    fn default() -> Self {
        WifiChannel::Ch6
    }
}

impl TryFrom<u8> for WifiChannel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(WifiChannel::Ch1),
            6 => Ok(WifiChannel::Ch6),
            11 => Ok(WifiChannel::Ch11),
            other => Err(format!("Wi-Fi channel must be 1, 6 or 11, got {other}")),
        }
    }
}

impl From<WifiChannel> for u8 {
    fn from(c: WifiChannel) -> u8 {
        c.number()
    }
}

/// Successful reception slots on one channel during one GNSS cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMatchSet {
    pub channel: u8,
    pub slots: Vec<u64>,
}

fn nominal_interval(psi: u32, t_gnss: u64) -> Result<u64, ProtocolError> {
    if psi == 0 {
        return Err(ProtocolError::InvalidRate(psi));
    }
    Ok(t_gnss / psi as u64)
}

/// Advertising interval `Â_I` for `psi` messages per GNSS cycle: the integer
/// part of `T_GNSS / psi`, moved to the nearest value coprime with `3 * S_I`.
pub fn ble_interval(psi: u32, params: &SlotParams) -> Result<u64, ProtocolError> {
    let nominal = nominal_interval(psi, params.t_gnss)?;
    Ok(coprime_approx(nominal, params.ble_scan_period()))
}

/// Beacon interval `B̂_I`, coprime with `3 * (T_S + C_T)`.
pub fn wifi_interval(psi: u32, params: &SlotParams) -> Result<u64, ProtocolError> {
    let nominal = nominal_interval(psi, params.t_gnss)?;
    Ok(coprime_approx(nominal, params.wifi_scan_period()))
}

/// Union of CRT rendezvous over the admissible scan offsets, restricted to
/// `[lo, hi]`, sorted and deduplicated.
fn union_of_rendezvous(
    tx_start: u64,
    interval: u64,
    scan_period: u64,
    offsets: std::ops::RangeInclusive<u64>,
    lo: u64,
    hi: u64,
) -> Result<Vec<u64>, ProtocolError> {
    let tx = PeriodicEvent::new(tx_start, interval)?;
    let mut slots = Vec::new();
    for i in offsets {
        let rx = PeriodicEvent::new(i, scan_period)?;
        slots.extend(crt_solve(tx, rx)?.within(lo, hi));
    }
    slots.sort_unstable();
    slots.dedup();
    Ok(slots)
}

/// Reception slots on BLE `channel` for a GNSS cycle starting at `t0`.
///
/// The PDU on channel `c` trails the event start by `c * (A_P + P_I)`; it is
/// received when its start falls at scan phase `c*S_I ..= c*S_I + S_W - A_P`.
pub fn ble_match_channel(
    t0: u64,
    channel: BleChannel,
    a_hat: u64,
    params: &SlotParams,
) -> Result<ChannelMatchSet, ProtocolError> {
    if params.ble_sw < params.ble_ap {
        return Err(ProtocolError::EmptyWindow {
            window: params.ble_sw,
            packet: params.ble_ap,
        });
    }
    let c = channel.index();
    let tx_offset = c * (params.ble_ap + params.ble_pi);
    let first = c * params.ble_si;
    let last = first + params.ble_sw - params.ble_ap;
    let slots = union_of_rendezvous(
        t0 + tx_offset,
        a_hat,
        params.ble_scan_period(),
        first..=last,
        // the first PDU on this channel cannot precede its own event
        t0 + tx_offset,
        t0 + params.t_gnss,
    )?;
    Ok(ChannelMatchSet {
        channel: channel.number(),
        slots,
    })
}

/// Match sets for channels 37, 38 and 39, in that order.
pub fn ble_match_all(
    t0: u64,
    psi: u32,
    params: &SlotParams,
) -> Result<[ChannelMatchSet; 3], ProtocolError> {
    let a_hat = ble_interval(psi, params)?;
    let [c37, c38, c39] = BleChannel::ALL;
    Ok([
        ble_match_channel(t0, c37, a_hat, params)?,
        ble_match_channel(t0, c38, a_hat, params)?,
        ble_match_channel(t0, c39, a_hat, params)?,
    ])
}

/// Delay of a PDU received at slot `delta`: the PDU ends `A_P` after it starts.
pub fn ble_rx_delay(delta_slot: u64, t0: u64, params: &SlotParams) -> u64 {
    delta_slot - t0 + params.ble_ap
}

/// Admissible scan phases at which a beacon starting on `channel` is caught.
pub fn wifi_offsets(channel: WifiChannel, params: &SlotParams) -> Option<std::ops::RangeInclusive<u64>> {
    if params.wifi_ts < params.wifi_bd {
        return None;
    }
    let first = channel.index() * (params.wifi_ts + params.wifi_ct);
    Some(first..=first + params.wifi_ts - params.wifi_bd)
}

/// Beacon reception slots when the sender beacons on `channel`.
pub fn wifi_match_channel(
    t0: u64,
    channel: WifiChannel,
    b_hat: u64,
    params: &SlotParams,
) -> Result<ChannelMatchSet, ProtocolError> {
    let offsets = wifi_offsets(channel, params).ok_or(ProtocolError::EmptyWindow {
        window: params.wifi_ts,
        packet: params.wifi_bd,
    })?;
    let slots = union_of_rendezvous(
        t0,
        b_hat,
        params.wifi_scan_period(),
        offsets,
        t0,
        t0 + params.t_gnss,
    )?;
    Ok(ChannelMatchSet {
        channel: channel.number(),
        slots,
    })
}

pub fn wifi_rx_delay(delta_slot: u64, t0: u64, params: &SlotParams) -> u64 {
    delta_slot - t0 + params.wifi_bd
}
