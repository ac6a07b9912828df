//! Integer slot arithmetic: modular inverses and rendezvous of two periodic
//! events on a discrete timeline via the Chinese remainder theorem.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SlotMathError {
    #[error("{a} and {m} are not coprime (gcd = {gcd})")]
    NotCoprime { a: u64, m: u64, gcd: u64 },
    #[error("modulus {0} is invalid, must be at least 2")]
    InvalidModulus(u64),
    #[error("event period must be positive")]
    ZeroPeriod,
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Extended Euclid: returns `(g, x)` with `a*x ≡ g (mod m)`.
fn ext_gcd(a: i128, m: i128) -> (i128, i128) {
    let (mut old_r, mut r) = (a, m);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    (old_r, old_s)
}

/// Multiplicative inverse of `a` modulo `m`, in `[1, m)`.
pub fn mod_inverse(a: u64, m: u64) -> Result<u64, SlotMathError> {
    if m < 2 {
        return Err(SlotMathError::InvalidModulus(m));
    }
    let (g, x) = ext_gcd((a % m) as i128, m as i128);
    if g != 1 {
        return Err(SlotMathError::NotCoprime { a, m, gcd: gcd(a, m) });
    }
    Ok(x.rem_euclid(m as i128) as u64)
}

/// Inverse used inside the CRT combination. Modulo 1 every residue is zero,
/// so the inverse is taken as zero there.
fn crt_inverse(a: u64, m: u64) -> Result<u64, SlotMathError> {
    if m == 1 {
        Ok(0)
    } else {
        mod_inverse(a, m)
    }
}

/// An event recurring every `period_slots`, first at `start_slot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PeriodicEvent {
    start_slot: u64,
    period_slots: u64,
}

impl PeriodicEvent {
    /// Builds the event with its start reduced modulo the period.
    pub fn new(start_slot: u64, period_slots: u64) -> Result<Self, SlotMathError> {
        if period_slots == 0 {
            return Err(SlotMathError::ZeroPeriod);
        }
        Ok(Self {
            start_slot: start_slot % period_slots,
            period_slots,
        })
    }

    pub fn start_slot(&self) -> u64 {
        self.start_slot
    }

    pub fn period_slots(&self) -> u64 {
        self.period_slots
    }
}

/// Solution of a two-event congruence system: every slot `t` with
/// `t ≡ residue (mod modulus)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rendezvous {
    pub residue: u64,
    pub modulus: u64,
}

impl Rendezvous {
    /// All solutions in the inclusive window `[lo, hi]`.
    pub fn within(&self, lo: u64, hi: u64) -> impl Iterator<Item = u64> {
        let m = self.modulus;
        let first = if lo <= self.residue {
            self.residue
        } else {
            let k = (lo - self.residue).div_ceil(m);
            self.residue + k * m
        };
        let first = if first > hi { None } else { Some(first) };
        std::iter::successors(first, move |&t| t.checked_add(m).filter(|&n| n <= hi))
    }
}

/// First common slot and common period of two events with coprime periods.
pub fn crt_solve(e1: PeriodicEvent, e2: PeriodicEvent) -> Result<Rendezvous, SlotMathError> {
    let (s1, s2) = (e1.period_slots, e2.period_slots);
    let g = gcd(s1, s2);
    if g != 1 {
        return Err(SlotMathError::NotCoprime { a: s1, m: s2, gcd: g });
    }
    let modulus = s1 as u128 * s2 as u128;
    let inv2 = crt_inverse(s2 % s1, s1)? as u128;
    let inv1 = crt_inverse(s1 % s2, s2)? as u128;
    let term1 = e1.start_slot as u128 * s2 as u128 % modulus * inv2 % modulus;
    let term2 = e2.start_slot as u128 * s1 as u128 % modulus * inv1 % modulus;
    let residue = (term1 + term2) % modulus;
    Ok(Rendezvous {
        residue: residue as u64,
        modulus: modulus as u64,
    })
}

/// Matching slots of two periodic events within `[0, horizon)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchSet {
    pub first_match: u64,
    pub common_period: u64,
    pub horizon: u64,
    pub matches: Vec<u64>,
}

pub fn crt_match(
    e1: PeriodicEvent,
    e2: PeriodicEvent,
    horizon: u64,
) -> Result<MatchSet, SlotMathError> {
    let rv = crt_solve(e1, e2)?;
    let matches = match horizon {
        0 => Vec::new(),
        h => rv.within(0, h - 1).collect(),
    };
    Ok(MatchSet {
        first_match: rv.residue,
        common_period: rv.modulus,
        horizon,
        matches,
    })
}

/// Nearest integer `n >= 1` to `target` that is coprime with `modulus`.
/// Equidistant candidates resolve to the smaller one.
pub fn coprime_approx(target: u64, modulus: u64) -> u64 {
    let target = target.max(1);
    for d in 0.. {
        if d < target && gcd(target - d, modulus) == 1 {
            return target - d;
        }
        if gcd(target + d, modulus) == 1 {
            return target + d;
        }
    }
    unreachable!("1 is coprime with every modulus")
}
