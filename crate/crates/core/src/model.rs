//! Task and system model: the sequential task chain, the physical constants,
//! and the energy/time primitives shared by every solver.
//!
//! Data sizes are carried in nats throughout. Rates use natural logarithms,
//! so one nat per second per hertz corresponds to a spectral efficiency of
//! `ln(1 + p h) = 1`.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

macro_rules! quantity {
    ($(#[$meta:meta])* $name:ident, $unit:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub f64);

        impl $name {
            pub const ZERO: Self = Self(0.0);

            #[inline]
            pub fn get(self) -> f64 {
                self.0
            }
        }

        impl Add for $name {
            type Output = Self;
            fn add(self, rhs: Self) -> Self {
                Self(self.0 + rhs.0)
            }
        }

        impl AddAssign for $name {
            fn add_assign(&mut self, rhs: Self) {
                self.0 += rhs.0;
            }
        }

        impl Sum for $name {
            fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
                Self(iter.map(|q| q.0).sum())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{} {}", self.0, $unit)
            }
        }
    };
}

quantity!(
    /// Energy in joules.
    Energy,
    "J"
);
quantity!(
    /// Time in seconds.
    Duration,
    "s"
);
quantity!(
    /// Normalized channel gain: received SNR per watt of transmit power.
    Gain,
    ""
);

/// A chain of `N` sub-tasks executed in order. Sub-task `i` needs
/// `cycles[i]` CPU cycles and consumes `input_nats[i]` nats of input, which
/// is also the output of sub-task `i - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    cycles: Vec<f64>,
    input_nats: Vec<f64>,
}

impl TaskProfile {
    pub fn new(cycles: Vec<f64>, input_nats: Vec<f64>) -> Result<Self> {
        if cycles.is_empty() {
            return Err(domain("a task needs at least one sub-task"));
        }
        if cycles.len() != input_nats.len() {
            return Err(domain(format!(
                "{} cycle counts but {} data sizes",
                cycles.len(),
                input_nats.len()
            )));
        }
        if let Some(i) = cycles.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(domain(format!("sub-task {} has non-positive cycle count", i + 1)));
        }
        if let Some(i) = input_nats.iter().position(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(domain(format!("sub-task {} has non-positive input size", i + 1)));
        }
        Ok(Self { cycles, input_nats })
    }

    /// Builds a profile from cycle counts in Mcycles and input sizes in kbits.
    pub fn from_mcycles_kbits(mcycles: &[f64], kbits: &[f64]) -> Result<Self> {
        Self::new(
            mcycles.iter().map(|m| m * 1e6).collect(),
            kbits.iter().map(|k| bits_to_nats(k * 1e3)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cycles(&self) -> &[f64] {
        &self.cycles
    }

    pub fn input_nats(&self) -> &[f64] {
        &self.input_nats
    }

    /// Cycle count `l_n` of sub-task `n` (1-based).
    pub fn cycles_of(&self, n: usize) -> f64 {
        self.cycles[n - 1]
    }

    /// Input size `d_n` in nats of sub-task `n` (1-based).
    pub fn nats_of(&self, n: usize) -> f64 {
        self.input_nats[n - 1]
    }

    /// Total cycles of sub-tasks `1..n` (the local prefix when offloading at `n`).
    pub fn prefix_cycles(&self, n: usize) -> f64 {
        self.cycles[..n - 1].iter().sum()
    }

    /// Total cycles of sub-tasks `n..=N` (the edge suffix when offloading at `n`).
    pub fn suffix_cycles(&self, n: usize) -> f64 {
        self.cycles[n - 1..].iter().sum()
    }

    pub fn total_cycles(&self) -> f64 {
        self.cycles.iter().sum()
    }

    pub fn max_nats(&self) -> f64 {
        self.input_nats.iter().copied().fold(0.0, f64::max)
    }

    pub(crate) fn check_index(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.len() {
            Err(Error::OutOfRange { index: n, len: self.len() })
        } else {
            Ok(())
        }
    }
}

/// Physical constants of the device, the channel and the edge server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Dedicated uplink bandwidth `W` in Hz.
    pub bandwidth_hz: f64,
    /// Switched-capacitance coefficient: power is `k0 f^3`.
    pub k0: f64,
    /// Highest device CPU frequency in Hz.
    pub f_max_hz: f64,
    /// Fixed device CPU frequency used under fast fading, in Hz.
    pub f_local_hz: f64,
    /// Edge-server CPU frequency in Hz.
    pub f_edge_hz: f64,
    /// Completion deadline `T_th` in seconds.
    pub deadline_s: f64,
    /// Channel coherence time (fading block length) in seconds.
    pub coherence_s: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("k0", self.k0),
            ("f_max_hz", self.f_max_hz),
            ("f_local_hz", self.f_local_hz),
            ("f_edge_hz", self.f_edge_hz),
            ("deadline_s", self.deadline_s),
            ("coherence_s", self.coherence_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.f_local_hz > self.f_max_hz {
            return Err(domain("f_local_hz must not exceed f_max_hz"));
        }
        if self.f_edge_hz <= self.f_max_hz {
            return Err(domain("f_edge_hz must exceed f_max_hz"));
        }
        Ok(())
    }

    /// Local energy per cycle at the fast-fading frequency `f_l`.
    pub fn local_energy_fixed(&self, cycles: f64) -> Energy {
        local_energy(cycles, self.f_local_hz, self.k0)
    }
}

pub fn bits_to_nats(bits: f64) -> f64 {
    bits * std::f64::consts::LN_2
}

/// Time to execute `cycles` at frequency `f`.
pub fn local_time(cycles: f64, f: f64) -> Result<Duration> {
    if !(f > 0.0) {
        return Err(domain(format!("cpu frequency must be positive, got {f}")));
    }
    if cycles < 0.0 {
        return Err(domain("cycle count must be nonnegative"));
    }
    Ok(Duration(cycles / f))
}

/// Dynamic CPU energy `k0 l f^2`.
pub fn local_energy(cycles: f64, f: f64, k0: f64) -> Energy {
    Energy(k0 * cycles * f * f)
}

/// Energy to push `nats` through one block of length `t` at gain `h`,
/// transmitting at the Shannon-rate power `(e^{d/(W t)} - 1) / h`.
pub fn block_energy(nats: f64, h: Gain, t: Duration, bandwidth: f64) -> Result<Energy> {
    if !(h.0 > 0.0) {
        return Err(domain(format!("channel gain must be positive, got {}", h.0)));
    }
    if !(t.0 > 0.0) {
        return Err(domain(format!("block duration must be positive, got {}", t.0)));
    }
    if nats < 0.0 {
        return Err(domain("data size must be nonnegative"));
    }
    Ok(Energy(block_energy_raw(nats, h.0, t.0, bandwidth)))
}

/// Unchecked form of [`block_energy`] for inner loops. Overflows to `+inf`
/// when the required rate is unreachable in floating point.
#[inline]
pub fn block_energy_raw(nats: f64, h: f64, t: f64, bandwidth: f64) -> f64 {
    if nats == 0.0 {
        return 0.0;
    }
    (nats / (bandwidth * t)).exp_m1() * t / h
}

/// `sum_{i >= n} l_i / f_e`: time the edge needs for sub-tasks `n..=N`.
pub fn edge_suffix_time(profile: &TaskProfile, n: usize, f_edge: f64) -> Result<Duration> {
    profile.check_index(n)?;
    local_time(profile.suffix_cycles(n), f_edge)
}

/// `sum_{i < n} l_i / f`: time the device needs for sub-tasks `1..n`.
pub fn local_prefix_time(profile: &TaskProfile, n: usize, f: f64) -> Result<Duration> {
    profile.check_index(n)?;
    local_time(profile.prefix_cycles(n), f)
}

/// Time the device needs to run every sub-task itself at frequency `f`.
pub fn full_local_time(profile: &TaskProfile, f: f64) -> Result<Duration> {
    local_time(profile.total_cycles(), f)
}
