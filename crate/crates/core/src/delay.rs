//! Expected per-link delay with retransmission over GNSS cycles, averaged
//! over the transmitter's phase relative to the scan schedule.

use std::borrow::Cow;

use thiserror::Error;

use crate::protocol::{
    ble_interval, ble_match_all, ble_rx_delay, wifi_interval, wifi_match_channel, wifi_rx_delay,
    ProtocolError, SlotParams, WifiChannel,
};
use crate::radio::{ble_noncollision_prob, wifi_noncollision_prob, LinkGraph, Protocol, RadioError, Uav};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DelayError {
    #[error("no packet can be received (empty match set or zero success probability)")]
    Unreachable,
    #[error("success probability {0} outside (0, 1]")]
    InvalidProbability(f64),
    #[error("UAV {receiver} is not a {protocol} neighbor of UAV {sender}")]
    NotNeighbor {
        sender: usize,
        receiver: usize,
        protocol: Protocol,
    },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Radio(#[from] RadioError),
}

/// Mean delay until the first surviving packet, each packet surviving
/// independently with probability `p` and the in-cycle pattern repeating
/// every `t_gnss` slots.
///
/// With `q = (1-p)^N`, `A = Σ (1-p)^(n-1) p D_n` and `B = Σ (1-p)^(n-1) p`,
/// the double series over cycles `k` and packets `n` sums to
/// `A / (1-q) + T * B * q / (1-q)^2`.
pub fn expected_delay<F: Real>(match_delays: &[u64], p: F, t_gnss: u64) -> Result<F, DelayError> {
    if !(p <= F::one()) || p < F::zero() {
        return Err(DelayError::InvalidProbability(p.as_f64()));
    }
    if match_delays.is_empty() || p == F::zero() {
        return Err(DelayError::Unreachable);
    }
    let miss = F::one() - p;
    let mut weight = p;
    let mut a = F::zero();
    let mut b = F::zero();
    for &d in match_delays {
        a += weight * F::of(d as f64);
        b += weight;
        weight *= miss;
    }
    // q = (1-p)^N, accumulated above as weight / p
    let q = miss.powi(match_delays.len() as i32);
    let one_q = F::one() - q;
    Ok(a / one_q + F::of(t_gnss as f64) * b * q / (one_q * one_q))
}

/// Sorted reception delays for every transmitter phase `t0` in one scan
/// rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTable {
    pub delays: Vec<Vec<u64>>,
    pub t_gnss: u64,
}

impl PhaseTable {
    pub fn ble(psi: u32, params: &SlotParams) -> Result<Self, ProtocolError> {
        let period = params.ble_scan_period();
        let delays = (0..period)
            .map(|t0| {
                let sets = ble_match_all(t0, psi, params)?;
                let mut d: Vec<u64> = sets
                    .iter()
                    .flat_map(|s| s.slots.iter().map(|&x| ble_rx_delay(x, t0, params)))
                    .collect();
                d.sort_unstable();
                Ok(d)
            })
            .collect::<Result<_, ProtocolError>>()?;
        Ok(Self {
            delays,
            t_gnss: params.t_gnss,
        })
    }

    pub fn wifi(psi: u32, channel: WifiChannel, params: &SlotParams) -> Result<Self, ProtocolError> {
        let b_hat = wifi_interval(psi, params)?;
        let delays = (0..params.wifi_scan_period())
            .map(|t0| {
                let set = wifi_match_channel(t0, channel, b_hat, params)?;
                Ok(set.slots.iter().map(|&x| wifi_rx_delay(x, t0, params)).collect())
            })
            .collect::<Result<_, ProtocolError>>()?;
        Ok(Self {
            delays,
            t_gnss: params.t_gnss,
        })
    }

    pub fn phases(&self) -> usize {
        self.delays.len()
    }

    /// True when every phase has at least one reception.
    pub fn is_complete(&self) -> bool {
        self.delays.iter().all(|d| !d.is_empty())
    }

    /// Phase-averaged expected delay in slots.
    pub fn average<F: Real>(&self, p: F) -> Result<F, DelayError> {
        let mut sum = F::zero();
        for d in &self.delays {
            sum += expected_delay(d, p, self.t_gnss)?;
        }
        Ok(sum / F::of(self.delays.len() as f64))
    }
}

/// Phase tables for every rate up to `psi_max`, built once per parameter set.
#[derive(Debug, Clone)]
pub struct DelayModel {
    params: SlotParams,
    ble: Vec<PhaseTable>,
    wifi: Vec<[PhaseTable; 3]>,
}

impl DelayModel {
    pub fn new(params: SlotParams, psi_max: u32) -> Result<Self, ProtocolError> {
        let mut ble = Vec::with_capacity(psi_max as usize);
        let mut wifi = Vec::with_capacity(psi_max as usize);
        for psi in 1..=psi_max {
            ble.push(PhaseTable::ble(psi, &params)?);
            let [a, b, c] = WifiChannel::ALL;
            wifi.push([
                PhaseTable::wifi(psi, a, &params)?,
                PhaseTable::wifi(psi, b, &params)?,
                PhaseTable::wifi(psi, c, &params)?,
            ]);
        }
        Ok(Self { params, ble, wifi })
    }

    pub fn params(&self) -> &SlotParams {
        &self.params
    }

    pub fn psi_max(&self) -> u32 {
        self.ble.len() as u32
    }

    pub fn ble_table(&self, psi: u32) -> Result<Cow<'_, PhaseTable>, ProtocolError> {
        match psi.checked_sub(1).and_then(|i| self.ble.get(i as usize)) {
            Some(t) => Ok(Cow::Borrowed(t)),
            None => Ok(Cow::Owned(PhaseTable::ble(psi, &self.params)?)),
        }
    }

    pub fn wifi_table(&self, psi: u32, channel: WifiChannel) -> Result<Cow<'_, PhaseTable>, ProtocolError> {
        match psi.checked_sub(1).and_then(|i| self.wifi.get(i as usize)) {
            Some(t) => Ok(Cow::Borrowed(&t[channel.index() as usize])),
            None => Ok(Cow::Owned(PhaseTable::wifi(psi, channel, &self.params)?)),
        }
    }

    /// Advertising / beacon interval in slots for reporting.
    pub fn interval(&self, protocol: Protocol, psi: u32) -> Result<u64, ProtocolError> {
        match protocol {
            Protocol::Ble4 => ble_interval(psi, &self.params),
            Protocol::Wifi => wifi_interval(psi, &self.params),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkDelay {
    pub sender: usize,
    pub receiver: usize,
    pub protocol: Protocol,
    /// Infinite when `reachable` is false.
    pub expected_delay_slots: f64,
    pub reachable: bool,
}

impl LinkDelay {
    pub fn delay_ms(&self, params: &SlotParams) -> f64 {
        params.slots_to_ms(self.expected_delay_slots)
    }
}

fn finish(sender: &Uav, receiver: &Uav, protocol: Protocol, avg: Result<f64, DelayError>) -> Result<LinkDelay, DelayError> {
    let (expected_delay_slots, reachable) = match avg {
        Ok(v) => (v, true),
        Err(DelayError::Unreachable) => (f64::INFINITY, false),
        Err(e) => return Err(e),
    };
    Ok(LinkDelay {
        sender: sender.id,
        receiver: receiver.id,
        protocol,
        expected_delay_slots,
        reachable,
    })
}

/// Phase-averaged BLE delay from fleet index `sender` to `receiver`.
pub fn avg_link_delay_ble(
    sender: usize,
    receiver: usize,
    graph: &LinkGraph,
    fleet: &[Uav],
    model: &DelayModel,
) -> Result<LinkDelay, DelayError> {
    if fleet[sender].protocol != Protocol::Ble4 || !graph.deliver_to(sender, Protocol::Ble4).contains(&receiver) {
        return Err(DelayError::NotNeighbor {
            sender: fleet[sender].id,
            receiver: fleet[receiver].id,
            protocol: Protocol::Ble4,
        });
    }
    let p: f64 = ble_noncollision_prob(receiver, sender, graph, fleet, model.params())?;
    let table = model.ble_table(fleet[sender].rate)?;
    finish(&fleet[sender], &fleet[receiver], Protocol::Ble4, table.average(p))
}

/// Phase-averaged Wi-Fi delay on the sender's beacon channel.
pub fn avg_link_delay_wifi(
    sender: usize,
    receiver: usize,
    graph: &LinkGraph,
    fleet: &[Uav],
    model: &DelayModel,
) -> Result<LinkDelay, DelayError> {
    if fleet[sender].protocol != Protocol::Wifi || !graph.deliver_to(sender, Protocol::Wifi).contains(&receiver) {
        return Err(DelayError::NotNeighbor {
            sender: fleet[sender].id,
            receiver: fleet[receiver].id,
            protocol: Protocol::Wifi,
        });
    }
    let p: f64 = wifi_noncollision_prob(receiver, sender, graph, fleet, model.params())?;
    let table = model.wifi_table(fleet[sender].rate, fleet[sender].wifi_channel)?;
    finish(&fleet[sender], &fleet[receiver], Protocol::Wifi, table.average(p))
}

pub fn avg_link_delay(
    sender: usize,
    receiver: usize,
    graph: &LinkGraph,
    fleet: &[Uav],
    model: &DelayModel,
) -> Result<LinkDelay, DelayError> {
    match fleet[sender].protocol {
        Protocol::Ble4 => avg_link_delay_ble(sender, receiver, graph, fleet, model),
        Protocol::Wifi => avg_link_delay_wifi(sender, receiver, graph, fleet, model),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::truncated_expected_delay;
    use crate::radio::{build_link_graph, PathLossConfig, Shadowing, Thresholds};
    use proptest::prelude::*;

    #[test]
    fn certain_reception_takes_first_packet() {
        assert_eq!(expected_delay(&[7u64, 30, 90], 1.0f64, 8000), Ok(7.0));
        assert_eq!(expected_delay(&[7u64], 1.0f32, 8000), Ok(7.0));
    }

    #[test]
    fn single_packet_is_geometric() {
        for p in [0.1f64, 0.5, 0.9] {
            let got = expected_delay(&[120], p, 8000).unwrap();
            let want = 120.0 + 8000.0 * (1.0 - p) / p;
            assert!((got - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn closed_form_matches_truncated_sum() {
        let got = expected_delay(&[10, 20], 0.5f64, 8000).unwrap();
        let want = truncated_expected_delay(&[10, 20], 0.5, 8000, 200);
        assert!((got - want).abs() <= 1e-9 * want);
    }

    #[test]
    fn unreachable_and_invalid() {
        assert_eq!(expected_delay::<f64>(&[], 0.5, 8000), Err(DelayError::Unreachable));
        assert_eq!(expected_delay::<f64>(&[5], 0.0, 8000), Err(DelayError::Unreachable));
        assert!(matches!(
            expected_delay::<f64>(&[5], 1.5, 8000),
            Err(DelayError::InvalidProbability(_))
        ));
        assert!(matches!(
            expected_delay::<f64>(&[5], f64::NAN, 8000),
            Err(DelayError::InvalidProbability(_))
        ));
    }

    proptest! {
        #[test]
        fn monotone_in_probability(
            mut delays in prop::collection::vec(1u64..8000, 1..20),
            p1 in 0.05f64..1.0,
            p2 in 0.05f64..1.0,
        ) {
            delays.sort_unstable();
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            let a = expected_delay(&delays, lo, 8000).unwrap();
            let b = expected_delay(&delays, hi, 8000).unwrap();
            prop_assert!(b <= a * (1.0 + 1e-12));
        }
    }

    fn pair(x: f64, protocol: Protocol, rate: u32) -> Vec<Uav> {
        (0..2)
            .map(|i| Uav {
                id: i,
                position: [i as f64 * x, 0.0, 60.0],
                protocol,
                rate,
                tx_power_dbm: 18.0,
                wifi_channel: WifiChannel::Ch6,
            })
            .collect()
    }

    fn graph(fleet: &[Uav]) -> LinkGraph {
        build_link_graph(fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap()
    }

    #[test]
    fn isolated_pair_equals_mean_first_match() {
        let params = SlotParams::default();
        let model = DelayModel::new(params, 10).unwrap();
        let fleet = pair(50.0, Protocol::Ble4, 9);
        let g = graph(&fleet);
        let link = avg_link_delay_ble(0, 1, &g, &fleet, &model).unwrap();
        let table = model.ble_table(9).unwrap();
        let mean_first = table.delays.iter().map(|d| d[0] as f64).sum::<f64>() / 192.0;
        assert!(link.reachable);
        assert!((link.expected_delay_slots - mean_first).abs() < 1e-9);
        assert!(link.expected_delay_slots >= params.ble_ap as f64);
    }

    #[test]
    fn adding_interferer_increases_delay() {
        let params = SlotParams::default();
        let model = DelayModel::new(params, 10).unwrap();
        let mut fleet = pair(50.0, Protocol::Ble4, 9);
        let base = avg_link_delay_ble(0, 1, &graph(&fleet), &fleet, &model).unwrap();
        fleet.push(Uav {
            id: 2,
            position: [25.0, 30.0, 60.0],
            ..fleet[0].clone()
        });
        let more = avg_link_delay_ble(0, 1, &graph(&fleet), &fleet, &model).unwrap();
        assert!(more.expected_delay_slots > base.expected_delay_slots);
    }

    #[test]
    fn non_neighbor_is_rejected() {
        let model = DelayModel::new(SlotParams::default(), 10).unwrap();
        let fleet = pair(50_000.0, Protocol::Ble4, 9);
        let g = graph(&fleet);
        assert!(matches!(
            avg_link_delay_ble(0, 1, &g, &fleet, &model),
            Err(DelayError::NotNeighbor { .. })
        ));
        assert!(matches!(
            avg_link_delay_wifi(0, 1, &g, &fleet, &model),
            Err(DelayError::NotNeighbor { .. })
        ));
    }

    #[test]
    fn empty_phases_flag_link_unreachable() {
        let model = DelayModel::new(SlotParams::default(), 10).unwrap();
        assert!(!model.ble_table(10).unwrap().is_complete());
        let fleet = pair(50.0, Protocol::Ble4, 10);
        let link = avg_link_delay_ble(0, 1, &graph(&fleet), &fleet, &model).unwrap();
        assert!(!link.reachable);
        assert!(link.expected_delay_slots.is_infinite());
    }

    #[test]
    fn wifi_pair_is_finite_at_rate_ten() {
        let params = SlotParams::default();
        let model = DelayModel::new(params, 10).unwrap();
        let fleet = pair(50.0, Protocol::Wifi, 10);
        let link = avg_link_delay_wifi(0, 1, &graph(&fleet), &fleet, &model).unwrap();
        assert!(link.reachable);
        assert!(link.expected_delay_slots >= params.wifi_bd as f64);
        assert_eq!(model.wifi_table(10, WifiChannel::Ch6).unwrap().phases(), 168);
    }

    #[test]
    fn out_of_range_rate_is_computed_on_demand() {
        let model = DelayModel::new(SlotParams::default(), 3).unwrap();
        assert!(matches!(model.ble_table(9).unwrap(), Cow::Owned(_)));
        assert!(matches!(model.ble_table(2).unwrap(), Cow::Borrowed(_)));
    }
}
