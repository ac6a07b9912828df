//! Log-distance path loss with log-normal shadowing, reachability sets and
//! same-technology non-collision probabilities.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{SlotParams, WifiChannel};
use crate::scalar::Real;
use crate::seed;

/// Smallest per-interferer survival factor. Reached only when an interferer
/// would occupy the whole cycle.
pub const COLLISION_FACTOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadioError {
    #[error("UAVs {0} and {1} share a position")]
    ZeroDistance(usize, usize),
    #[error("UAV {sender} is not received by UAV {receiver} over {protocol}")]
    SenderUnreachable {
        sender: usize,
        receiver: usize,
        protocol: Protocol,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Ble4,
    Wifi,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::Ble4, Protocol::Wifi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Ble4 => "ble4",
            Protocol::Wifi => "wifi",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Uav {
    pub id: usize,
    pub position: [f64; 3],
    pub protocol: Protocol,
    /// Messages per GNSS cycle.
    pub rate: u32,
    pub tx_power_dbm: f64,
    pub wifi_channel: WifiChannel,
}

impl Uav {
    pub fn distance_to(&self, other: &Uav) -> f64 {
        distance(&self.position, &other.position)
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossConfig {
    pub exponent: f64,
    pub sigma_db: f64,
    /// Loss at the reference distance; 2.4 GHz free space at 1 m.
    pub pl0_db: f64,
    pub reference_m: f64,
}

impl Default for PathLossConfig {
    fn default() -> Self {
        Self {
            exponent: 2.1,
            sigma_db: 6.0,
            pl0_db: 40.05,
            reference_m: 1.0,
        }
    }
}

/// Receiver sensitivities used as reachability thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub ble_dbm: f64,
    pub wifi_dbm: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            ble_dbm: -85.0,
            wifi_dbm: -105.0,
        }
    }
}

impl Thresholds {
    pub fn for_protocol(&self, p: Protocol) -> f64 {
        match p {
            Protocol::Ble4 => self.ble_dbm,
            Protocol::Wifi => self.wifi_dbm,
        }
    }
}

/// Path loss in dB; `shadow_z` is a standard-normal draw scaled by `sigma_db`.
pub fn path_loss(p1: &[f64; 3], p2: &[f64; 3], model: &PathLossConfig, shadow_z: f64) -> Option<f64> {
    let d = distance(p1, p2);
    if d == 0.0 {
        return None;
    }
    Some(model.pl0_db + 10.0 * model.exponent * (d / model.reference_m).log10() + model.sigma_db * shadow_z)
}

/// Source of the per-link shadowing draws for one scenario step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shadowing {
    Off,
    /// One draw per ordered `(sender id, receiver id)` pair, keyed by seed
    /// and step so it does not depend on fleet order.
    Keyed { seed: u64, step: u64 },
}

impl Shadowing {
    pub fn draw(&self, from_id: usize, to_id: usize) -> f64 {
        match *self {
            Shadowing::Off => 0.0,
            Shadowing::Keyed { seed, step } => {
                let mut rng = seed::stream(
                    seed,
                    &[seed::TAG_SHADOW, step, from_id as u64, to_id as u64],
                );
                StandardNormal.sample(&mut rng)
            }
        }
    }
}

/// Row-major `M x M` matrix of sender-to-receiver losses; the diagonal is
/// infinite.
pub fn path_loss_matrix(
    fleet: &[Uav],
    model: &PathLossConfig,
    shadowing: Shadowing,
) -> Result<Vec<f64>, RadioError> {
    let m = fleet.len();
    let mut pl = vec![f64::INFINITY; m * m];
    for (j, tx) in fleet.iter().enumerate() {
        for (i, rx) in fleet.iter().enumerate() {
            if i == j {
                continue;
            }
            let z = if model.sigma_db == 0.0 { 0.0 } else { shadowing.draw(tx.id, rx.id) };
            pl[j * m + i] = path_loss(&tx.position, &rx.position, model, z)
                .ok_or(RadioError::ZeroDistance(tx.id, rx.id))?;
        }
    }
    Ok(pl)
}

/// Who hears whom. Indices are fleet positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGraph {
    m: usize,
    path_loss_db: Vec<f64>,
    recv_from: Vec<[Vec<usize>; 2]>,
    deliver_to: Vec<[Vec<usize>; 2]>,
    wifi_recv: Vec<[Vec<usize>; 3]>,
}

impl LinkGraph {
    /// Applies the link-budget test `tx - PL >= threshold` for each ordered
    /// pair, using the sender's active protocol.
    pub fn from_path_loss(fleet: &[Uav], path_loss_db: Vec<f64>, thresholds: &Thresholds) -> Self {
        let m = fleet.len();
        assert_eq!(path_loss_db.len(), m * m, "path-loss matrix shape");
        let mut recv_from = vec![[Vec::new(), Vec::new()]; m];
        let mut deliver_to = vec![[Vec::new(), Vec::new()]; m];
        let mut wifi_recv = vec![[Vec::new(), Vec::new(), Vec::new()]; m];
        for (j, tx) in fleet.iter().enumerate() {
            let proto = tx.protocol;
            let theta = thresholds.for_protocol(proto);
            for i in 0..m {
                if i == j || tx.tx_power_dbm - path_loss_db[j * m + i] < theta {
                    continue;
                }
                recv_from[i][proto.index()].push(j);
                deliver_to[j][proto.index()].push(i);
                if proto == Protocol::Wifi {
                    wifi_recv[i][tx.wifi_channel.index() as usize].push(j);
                }
            }
        }
        Self {
            m,
            path_loss_db,
            recv_from,
            deliver_to,
            wifi_recv,
        }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn path_loss_db(&self, from: usize, to: usize) -> f64 {
        self.path_loss_db[from * self.m + to]
    }

    /// `R_ε` of `receiver`: senders on protocol `p` it can hear.
    pub fn recv_from(&self, receiver: usize, p: Protocol) -> &[usize] {
        &self.recv_from[receiver][p.index()]
    }

    /// `S_ε` of `sender`: receivers that hear it on protocol `p`.
    pub fn deliver_to(&self, sender: usize, p: Protocol) -> &[usize] {
        &self.deliver_to[sender][p.index()]
    }

    /// Wi-Fi senders heard by `receiver` on `channel`.
    pub fn wifi_recv(&self, receiver: usize, channel: WifiChannel) -> &[usize] {
        &self.wifi_recv[receiver][channel.index() as usize]
    }
}

pub fn build_link_graph(
    fleet: &[Uav],
    model: &PathLossConfig,
    thresholds: &Thresholds,
    shadowing: Shadowing,
) -> Result<LinkGraph, RadioError> {
    let pl = path_loss_matrix(fleet, model, shadowing)?;
    Ok(LinkGraph::from_path_loss(fleet, pl, thresholds))
}

fn survival_product<F: Real>(rates: impl Iterator<Item = u32>, packet_slots: u64, t_gnss: u64) -> F {
    let floor = F::of(COLLISION_FACTOR_FLOOR);
    let two_l = F::of(2.0 * packet_slots as f64);
    let t = F::of(t_gnss as f64);
    rates.fold(F::one(), |acc, psi| {
        let f = F::one() - F::of(psi as f64) * two_l / t;
        if f < floor {
            log::warn!("interferer at rate {psi} saturates the channel; factor clamped to {COLLISION_FACTOR_FLOOR}");
            acc * floor
        } else {
            acc * f
        }
    })
}

/// Probability a BLE PDU from `sender` reaches `receiver` without overlapping
/// another reachable BLE transmitter's PDU.
pub fn ble_noncollision_prob<F: Real>(
    receiver: usize,
    sender: usize,
    graph: &LinkGraph,
    fleet: &[Uav],
    params: &SlotParams,
) -> Result<F, RadioError> {
    let heard = graph.recv_from(receiver, Protocol::Ble4);
    if !heard.contains(&sender) {
        return Err(RadioError::SenderUnreachable {
            sender,
            receiver,
            protocol: Protocol::Ble4,
        });
    }
    let rates = heard.iter().filter(|&&k| k != sender).map(|&k| fleet[k].rate);
    Ok(survival_product(rates, params.ble_ap, params.t_gnss))
}

/// As [`ble_noncollision_prob`] for Wi-Fi beacons; only transmitters on the
/// sender's channel interfere.
pub fn wifi_noncollision_prob<F: Real>(
    receiver: usize,
    sender: usize,
    graph: &LinkGraph,
    fleet: &[Uav],
    params: &SlotParams,
) -> Result<F, RadioError> {
    let heard = graph.wifi_recv(receiver, fleet[sender].wifi_channel);
    if fleet[sender].protocol != Protocol::Wifi || !heard.contains(&sender) {
        return Err(RadioError::SenderUnreachable {
            sender,
            receiver,
            protocol: Protocol::Wifi,
        });
    }
    let rates = heard.iter().filter(|&&k| k != sender).map(|&k| fleet[k].rate);
    Ok(survival_product(rates, params.wifi_bd, params.t_gnss))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn uav(id: usize, x: f64, protocol: Protocol, rate: u32) -> Uav {
        Uav {
            id,
            position: [x, 0.0, 50.0],
            protocol,
            rate,
            tx_power_dbm: 18.0,
            wifi_channel: WifiChannel::Ch6,
        }
    }

    #[test]
    fn path_loss_reference_and_decades() {
        let m = PathLossConfig::default();
        let o = [0.0, 0.0, 0.0];
        assert_eq!(path_loss(&o, &[1.0, 0.0, 0.0], &m, 0.0), Some(m.pl0_db));
        let pl = path_loss(&o, &[100.0, 0.0, 0.0], &m, 0.0).unwrap();
        assert!((pl - (m.pl0_db + 42.0)).abs() < 1e-12);
        assert_eq!(path_loss(&o, &o, &m, 0.0), None);
        let shadowed = path_loss(&o, &[1.0, 0.0, 0.0], &m, -1.0).unwrap();
        assert!((shadowed - (m.pl0_db - 6.0)).abs() < 1e-12);
    }

    #[test]
    fn shadowing_is_keyed_and_deterministic() {
        let s = Shadowing::Keyed { seed: 3, step: 1 };
        assert_eq!(s.draw(0, 1), s.draw(0, 1));
        assert_ne!(s.draw(0, 1), s.draw(1, 0));
        assert_eq!(Shadowing::Off.draw(4, 5), 0.0);
        let m = PathLossConfig {
            sigma_db: 0.0,
            ..Default::default()
        };
        let fleet = vec![uav(0, 0.0, Protocol::Ble4, 9), uav(1, 30.0, Protocol::Ble4, 9)];
        let a = path_loss_matrix(&fleet, &m, s).unwrap();
        let b = path_loss_matrix(&fleet, &m, Shadowing::Keyed { seed: 99, step: 5 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coincident_uavs_error() {
        let fleet = vec![uav(0, 5.0, Protocol::Ble4, 9), uav(1, 5.0, Protocol::Ble4, 9)];
        let err = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off);
        assert_eq!(err, Err(RadioError::ZeroDistance(0, 1)));
    }

    #[test]
    fn single_uav_graph_is_empty() {
        let fleet = vec![uav(0, 0.0, Protocol::Ble4, 9)];
        let g = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap();
        for p in Protocol::ALL {
            assert!(g.recv_from(0, p).is_empty());
            assert!(g.deliver_to(0, p).is_empty());
        }
    }

    #[test]
    fn close_pair_is_mutually_reachable() {
        let fleet = vec![uav(0, 0.0, Protocol::Ble4, 9), uav(1, 1.0, Protocol::Ble4, 9)];
        let g = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap();
        assert_eq!(g.recv_from(0, Protocol::Ble4), &[1]);
        assert_eq!(g.recv_from(1, Protocol::Ble4), &[0]);
        assert_eq!(g.deliver_to(0, Protocol::Ble4), &[1]);
        assert!(g.recv_from(0, Protocol::Wifi).is_empty());
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let fleet = vec![uav(0, 0.0, Protocol::Ble4, 9), uav(1, 10.0, Protocol::Ble4, 9)];
        // 18 - 103 = -85 exactly
        let pl = vec![f64::INFINITY, 103.0, 103.000001, f64::INFINITY];
        let g = LinkGraph::from_path_loss(&fleet, pl, &Thresholds::default());
        assert_eq!(g.recv_from(1, Protocol::Ble4), &[0]);
        assert!(g.recv_from(0, Protocol::Ble4).is_empty());
    }

    #[test]
    fn ble_probability_examples() {
        let p = SlotParams::default();
        let mut fleet = vec![uav(0, 0.0, Protocol::Ble4, 9), uav(1, 10.0, Protocol::Ble4, 9)];
        let g = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap();
        assert_eq!(ble_noncollision_prob::<f64>(1, 0, &g, &fleet, &p), Ok(1.0));

        fleet.push(uav(2, 20.0, Protocol::Ble4, 9));
        let g = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap();
        let one: f64 = ble_noncollision_prob(1, 0, &g, &fleet, &p).unwrap();
        assert!((one - 0.99325).abs() < 1e-12);

        fleet.push(uav(3, 30.0, Protocol::Ble4, 9));
        let g = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap();
        let two: f64 = ble_noncollision_prob(1, 0, &g, &fleet, &p).unwrap();
        assert!((two - 0.99325f64.powi(2)).abs() < 1e-12);
        assert!((two - 0.986546).abs() < 1e-6);
        let two32: f32 = ble_noncollision_prob(1, 0, &g, &fleet, &p).unwrap();
        assert!((two32 as f64 - two).abs() < 1e-6);
    }

    #[test]
    fn wifi_probability_examples() {
        let p = SlotParams::default();
        let mut fleet = vec![uav(0, 0.0, Protocol::Wifi, 10), uav(1, 10.0, Protocol::Wifi, 10)];
        let g = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap();
        assert_eq!(wifi_noncollision_prob::<f64>(1, 0, &g, &fleet, &p), Ok(1.0));

        fleet.push(uav(2, 20.0, Protocol::Wifi, 10));
        let g = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap();
        let one: f64 = wifi_noncollision_prob(1, 0, &g, &fleet, &p).unwrap();
        assert!((one - 0.9875).abs() < 1e-12);

        fleet[2].wifi_channel = WifiChannel::Ch11;
        let g = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap();
        assert_eq!(wifi_noncollision_prob::<f64>(1, 0, &g, &fleet, &p), Ok(1.0));
    }

    #[test]
    fn unreachable_sender_is_an_error() {
        let p = SlotParams::default();
        let fleet = vec![uav(0, 0.0, Protocol::Wifi, 10), uav(1, 10.0, Protocol::Ble4, 9)];
        let g = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap();
        assert!(matches!(
            ble_noncollision_prob::<f64>(1, 0, &g, &fleet, &p),
            Err(RadioError::SenderUnreachable { .. })
        ));
        assert!(matches!(
            wifi_noncollision_prob::<f64>(0, 1, &g, &fleet, &p),
            Err(RadioError::SenderUnreachable { .. })
        ));
    }

    #[test]
    fn saturating_interferer_is_clamped() {
        let p = SlotParams::default();
        let fleet = vec![
            uav(0, 0.0, Protocol::Ble4, 9),
            uav(1, 10.0, Protocol::Ble4, 9),
            uav(2, 20.0, Protocol::Ble4, 8000),
        ];
        let g = build_link_graph(&fleet, &PathLossConfig::default(), &Thresholds::default(), Shadowing::Off).unwrap();
        let v: f64 = ble_noncollision_prob(1, 0, &g, &fleet, &p).unwrap();
        assert_eq!(v, COLLISION_FACTOR_FLOOR);
    }

    #[test]
    fn recv_and_deliver_are_transposes() {
        let fleet: Vec<Uav> = (0..6)
            .map(|i| {
                let proto = if i % 2 == 0 { Protocol::Ble4 } else { Protocol::Wifi };
                let mut u = uav(i, 0.0, proto, 5);
                u.position = [(i * 397 % 1500) as f64, (i * 211 % 900) as f64, 40.0 + i as f64];
                u
            })
            .collect();
        let g = build_link_graph(
            &fleet,
            &PathLossConfig::default(),
            &Thresholds::default(),
            Shadowing::Keyed { seed: 1, step: 0 },
        )
        .unwrap();
        for p in Protocol::ALL {
            for j in 0..fleet.len() {
                assert!(!g.recv_from(j, p).contains(&j));
                for &i in g.deliver_to(j, p) {
                    assert!(g.recv_from(i, p).contains(&j));
                }
                for &k in g.recv_from(j, p) {
                    assert!(g.deliver_to(k, p).contains(&j));
                }
            }
        }
    }
}
