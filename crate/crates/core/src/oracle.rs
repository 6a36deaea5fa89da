//! Brute-force references for the solvers. Built only on the model and
//! channel primitives so that a bug in a solver cannot hide in its check.

use std::collections::HashMap;

use serde::Serialize;

use crate::channel::GainDistribution;
use crate::error::{domain, Error, Result};
use crate::model::{block_energy_raw, SystemParams, TaskProfile};

pub const PATH_CAP: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowGridIndex {
    pub n: usize,
    pub tau_t_s: f64,
    pub energy_j: f64,
    /// Local energy from scanning a shared-frequency grid at `tau_t_s`, for
    /// comparison with the closed form.
    pub scanned_local_j: f64,
    pub closed_local_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowGridResult {
    pub n_star: Option<usize>,
    pub energy_j: Option<f64>,
    pub tau_t_s: Option<f64>,
    pub per_index: Vec<Option<SlowGridIndex>>,
}

/// Exhaustive slow-fading search: every offload index, `tau_points`
/// upload durations, `freq_points` shared local frequencies.
pub fn slow_grid(
    profile: &TaskProfile,
    params: &SystemParams,
    h: f64,
    tau_points: usize,
    freq_points: usize,
) -> Result<SlowGridResult> {
    if tau_points < 2 || freq_points < 2 {
        return Err(domain("grid oracle needs at least two points per axis"));
    }
    let cycles = profile.cycles();
    let nats = profile.input_nats();
    let mut per_index = Vec::with_capacity(cycles.len());
    let mut best: Option<(usize, f64, f64)> = None;
    for n in 1..=cycles.len() {
        let local: f64 = cycles[..n - 1].iter().sum();
        let edge: f64 = cycles[n - 1..].iter().sum();
        let budget = params.deadline_s - local / params.f_max_hz - edge / params.f_edge_hz;
        if budget <= 0.0 {
            per_index.push(None);
            continue;
        }
        let d = nats[n - 1];
        let window = |tau: f64| params.deadline_s - edge / params.f_edge_hz - tau;
        let closed = |tau: f64| {
            if local == 0.0 {
                0.0
            } else {
                params.k0 * local.powi(3) / window(tau).powi(2)
            }
        };
        let mut arg = (f64::INFINITY, 0.0);
        for j in 1..=tau_points {
            let tau = budget * j as f64 / tau_points as f64;
            let e = tau * (d / (params.bandwidth_hz * tau)).exp_m1() / h + closed(tau);
            if e < arg.0 {
                arg = (e, tau);
            }
        }
        let (energy, tau) = arg;
        let mut scanned = f64::INFINITY;
        if local == 0.0 {
            scanned = 0.0;
        } else {
            for k in 1..=freq_points {
                let f = params.f_max_hz * k as f64 / freq_points as f64;
                if local / f <= window(tau) {
                    scanned = scanned.min(params.k0 * local * f * f);
                }
            }
        }
        if best.is_none_or(|b| energy < b.1) {
            best = Some((n, energy, tau));
        }
        per_index.push(Some(SlowGridIndex {
            n,
            tau_t_s: tau,
            energy_j: energy,
            scanned_local_j: scanned,
            closed_local_j: closed(tau),
        }));
    }
    Ok(SlowGridResult {
        n_star: best.map(|b| b.0),
        energy_j: best.map(|b| b.1),
        tau_t_s: best.map(|b| b.2),
        per_index,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpOracle {
    /// Stopping values `Z_1..Z_{N+1}`.
    pub z: Vec<f64>,
    /// Expected energy of always offloading at `n`.
    pub static_values: Vec<Option<f64>>,
    pub channel_paths: f64,
}

struct Enumerator {
    states: Vec<(f64, f64)>,
    w: f64,
    d_max: f64,
    intervals: usize,
    durations: Vec<f64>,
    memo: HashMap<(usize, usize), f64>,
}

impl Enumerator {
    fn d(&self, i: usize) -> f64 {
        if i == self.intervals {
            self.d_max
        } else {
            self.d_max * i as f64 / self.intervals as f64
        }
    }

    /// Minimal energy with `i` grid units left at block `m`, gain `h`.
    fn given_gain(&mut self, m: usize, i: usize, h: f64) -> f64 {
        let t = self.durations[m - 1];
        if m == self.durations.len() {
            return block_energy_raw(self.d(i), h, t, self.w);
        }
        let mut best = f64::INFINITY;
        for j in 0..=i {
            let v = block_energy_raw(self.d(j), h, t, self.w) + self.expected(m + 1, i - j);
            if v < best {
                best = v;
            }
        }
        best
    }

    fn expected(&mut self, m: usize, i: usize) -> f64 {
        if let Some(&v) = self.memo.get(&(m, i)) {
            return v;
        }
        let states = self.states.clone();
        let v = states.iter().map(|&(h, p)| p * self.given_gain(m, i, h)).sum();
        self.memo.insert((m, i), v);
        v
    }
}

fn discrete_states(dist: &GainDistribution) -> Result<Vec<(f64, f64)>> {
    match dist {
        GainDistribution::Discrete { gains, probs } => {
            dist.validate()?;
            let mut s: Vec<(f64, f64)> = gains.iter().copied().zip(probs.iter().copied()).filter(|s| s.1 > 0.0).collect();
            s.sort_by(|a, b| a.0.total_cmp(&b.0));
            Ok(s)
        }
        _ => Err(domain("enumeration needs a discrete channel")),
    }
}

/// Exact stopping-policy value on a finite channel: expectations sum over
/// every channel state of every block, minima scan every grid split.
/// Subproblems are cached by (block, remaining data). Each stage uses its
/// own grid of `intervals` steps on `[0, d_n]`.
pub fn dp_enumerate(
    profile: &TaskProfile,
    params: &SystemParams,
    dist: &GainDistribution,
    intervals: usize,
) -> Result<DpOracle> {
    let states = discrete_states(dist)?;
    let k = states.len() as f64;
    let big_n = profile.len();
    let cycles = profile.cycles();

    let mut durations_of = Vec::with_capacity(big_n);
    let mut paths = 0.0;
    for n in 1..=big_n {
        let local: f64 = cycles[..n - 1].iter().sum();
        let edge: f64 = cycles[n - 1..].iter().sum();
        let budget = params.deadline_s - local / params.f_local_hz - edge / params.f_edge_hz;
        if budget <= 0.0 {
            durations_of.push(None);
            continue;
        }
        // count blocks by stepping, independent of any rounding rule elsewhere
        let tau = params.coherence_s;
        let mut blocks = Vec::new();
        let mut left = budget;
        while left > tau * (1.0 + 1e-12) {
            blocks.push(tau);
            left -= tau;
        }
        blocks.push(left.min(tau));
        paths += k.powi(blocks.len() as i32);
        durations_of.push(Some(blocks));
    }
    if paths > PATH_CAP {
        return Err(Error::TooManyPaths { paths, cap: PATH_CAP });
    }

    let mut first_block = Vec::with_capacity(big_n);
    for (idx, durs) in durations_of.iter().enumerate() {
        let Some(durs) = durs else {
            first_block.push(None);
            continue;
        };
        let mut e = Enumerator {
            states: states.clone(),
            w: params.bandwidth_hz,
            d_max: profile.input_nats()[idx],
            intervals,
            durations: durs.clone(),
            memo: HashMap::new(),
        };
        let per_state: Vec<f64> = states.iter().map(|&(h, _)| e.given_gain(1, intervals, h)).collect();
        first_block.push(Some(per_state));
    }

    let local_e = |n: usize| params.k0 * cycles[n - 1] * params.f_local_hz * params.f_local_hz;
    let total_local_time: f64 = cycles.iter().sum::<f64>() / params.f_local_hz;
    let mut z = vec![0.0; big_n + 1];
    let mut reachable_later = total_local_time <= params.deadline_s;
    for n in (1..=big_n).rev() {
        let local = if reachable_later { local_e(n) + z[n] } else { f64::INFINITY };
        z[n - 1] = states
            .iter()
            .enumerate()
            .map(|(s, &(_, p))| {
                let off = first_block[n - 1].as_ref().map_or(f64::INFINITY, |v| v[s]);
                p * off.min(local)
            })
            .sum();
        reachable_later = reachable_later || first_block[n - 1].is_some();
    }
    let static_values = (1..=big_n)
        .map(|n| {
            first_block[n - 1].as_ref().map(|v| {
                (1..n).map(local_e).sum::<f64>() + states.iter().zip(v).map(|(s, q)| s.1 * q).sum::<f64>()
            })
        })
        .collect();
    Ok(DpOracle { z, static_values, channel_paths: paths })
}

/// Three sub-tasks, at most four blocks per stage and a two-state channel:
/// small enough for [`dp_enumerate`], rich enough that the stopping rule
/// matters.
pub fn tiny_instance() -> (TaskProfile, SystemParams, GainDistribution) {
    let profile = TaskProfile::from_mcycles_kbits(&[7.0, 30.0, 25.0], &[36.0, 22.0, 30.0]).expect("valid profile");
    let params = SystemParams {
        bandwidth_hz: 1e6,
        k0: 1e-28,
        f_max_hz: 5e8,
        f_local_hz: 5e8,
        f_edge_hz: 3e9,
        deadline_s: 0.09,
        coherence_s: 0.02,
    };
    let dist = GainDistribution::discrete(vec![5.0, 80.0], vec![0.4, 0.6]).expect("valid channel");
    (profile, params, dist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    /// Most negative second difference.
    Convexity,
    /// Most positive forward difference (checks a nonincreasing sequence).
    NonIncreasing,
    /// Most negative forward difference (checks a nondecreasing sequence).
    NonDecreasing,
}

/// Largest violation of the requested shape on uniformly spaced values;
/// zero when the shape holds. Violations are reported with their sign.
pub fn convexity_scan(values: &[f64], mode: ScanMode) -> Result<f64> {
    if values.len() < 3 {
        return Err(domain("shape scan needs at least three points"));
    }
    let v = match mode {
        ScanMode::Convexity => values.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).fold(0.0, f64::min),
        ScanMode::NonIncreasing => values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max),
        ScanMode::NonDecreasing => values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::min),
    };
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{default_params, default_profile};

    #[test]
    fn grid_oracle_self_consistency() {
        let r = slow_grid(&default_profile(), &default_params(), 60.0, 20_000, 200_000).unwrap();
        for idx in r.per_index.iter().flatten() {
            let scale = idx.closed_local_j.max(1e-12);
            assert!(idx.scanned_local_j >= idx.closed_local_j * (1.0 - 1e-12));
            assert!((idx.scanned_local_j - idx.closed_local_j) / scale < 1e-4);
        }
        assert!(r.n_star.is_some());
    }

    #[test]
    fn infeasible_instance() {
        let mut p = default_params();
        p.deadline_s = 0.05;
        let r = slow_grid(&default_profile(), &p, 60.0, 100, 100).unwrap();
        assert!(r.n_star.is_none() && r.per_index.iter().all(Option::is_none));
    }

    #[test]
    fn single_state_channel_is_deterministic_minimization() {
        let profile = TaskProfile::from_mcycles_kbits(&[20.0], &[10.0]).unwrap();
        let mut p = default_params();
        // local run takes 0.04 s, so offloading is forced; two blocks remain
        p.deadline_s = 0.039;
        let dist = GainDistribution::discrete(vec![40.0], vec![1.0]).unwrap();
        let o = dp_enumerate(&profile, &p, &dist, 16).unwrap();
        let budget = 0.039 - 2e7 / 3e9;
        let t2 = budget - 0.02;
        let d = profile.nats_of(1);
        let best = (0..=16)
            .map(|j| {
                let x = d * j as f64 / 16.0;
                block_energy_raw(x, 40.0, 0.02, 1e6) + block_energy_raw(d - x, 40.0, t2, 1e6)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((o.z[0] - best).abs() <= 1e-12 * best);
    }

    #[test]
    fn path_cap() {
        let mut p = default_params();
        p.coherence_s = 0.001;
        let dist = GainDistribution::discrete(vec![1.0, 2.0, 3.0, 4.0], vec![0.25; 4]).unwrap();
        assert!(matches!(
            dp_enumerate(&default_profile(), &p, &dist, 8),
            Err(Error::TooManyPaths { .. })
        ));
    }

    #[test]
    fn shape_scans() {
        let affine: Vec<f64> = (0..10).map(|i| 3.0 * i as f64 + 1.0).collect();
        assert_eq!(convexity_scan(&affine, ScanMode::Convexity).unwrap(), 0.0);
        let e: Vec<f64> = (0..50).map(|i| block_energy_raw(i as f64 * 500.0, 50.0, 0.02, 1e6)).collect();
        let scale = e.iter().cloned().fold(0.0, f64::max);
        assert!(convexity_scan(&e, ScanMode::Convexity).unwrap() >= -1e-12 * scale);
        let mut bad = e.clone();
        bad[20] += 0.01 * scale;
        assert!(convexity_scan(&bad, ScanMode::Convexity).unwrap() < 0.0);
        assert!(convexity_scan(&[1.0, 2.0], ScanMode::Convexity).is_err());
        assert!(convexity_scan(&[3.0, 2.0, 2.5], ScanMode::NonIncreasing).unwrap() > 0.0);
    }
}
