//! Remote ID broadcast delay model for UAV fleets using BLE 4 advertising or
//! Wi-Fi beacons, with a multi-agent deep Q-learning protocol/rate selector.
//!
//! The numeric core is generic over [`Real`]; the aliases below fix the
//! precision used by the command-line runner.

pub mod airspace;
pub mod delay;
pub mod madqn;
pub mod oracle;
pub mod protocol;
pub mod radio;
pub mod scalar;
pub mod seed;
pub mod slotmath;

pub use scalar::Real;

/// Network precision used for training and checkpoints.
pub type Scalar = f32;
pub type QNet = madqn::QNetwork<Scalar>;
pub type Optimizer = madqn::Adam<Scalar>;
pub type Replay = madqn::ReplayBuffer<Scalar>;
pub type GreedyPolicy = madqn::Policy<Scalar>;
