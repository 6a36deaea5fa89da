//! Joint offloading and resource allocation when the channel gain is
//! constant for the whole task (slow fading).
//!
//! For a fixed offload index `n` the device runs sub-tasks `1..n` at one
//! common frequency that makes the deadline tight, so the only free variable
//! is the upload duration `tau_t`. The resulting objective is convex in
//! `tau_t` and is minimized by golden-section search; the outer problem scans
//! every `n`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{block_energy_raw, local_energy, Energy, Gain, SystemParams, TaskProfile};

pub const DEFAULT_TOL: f64 = 1e-6;
/// Lower end of the upload-duration search interval.
pub const TAU_FLOOR: f64 = 1e-9;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenResult {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`,
/// shrinking the bracket until it is narrower than `tol`. The endpoints are
/// also evaluated, so a boundary minimum is returned exactly.
pub fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> GoldenResult {
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iterations = 0;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        iterations += 1;
    }
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for x in [hi, lo] {
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    GoldenResult { x: best.0, fx: best.1, iterations }
}

/// Upper bound on the golden-section iteration count for a bracket of width
/// `width` and tolerance `tol`.
pub fn golden_iteration_bound(width: f64, tol: f64) -> usize {
    if width <= tol {
        0
    } else {
        ((width / tol).ln() / (1.0 / INV_PHI).ln()).ceil() as usize
    }
}

/// Longest admissible upload duration when offloading at `n`: the deadline
/// minus the local prefix at `f_max` and the edge suffix. `None` when that
/// leaves no time.
pub fn tau_budget(profile: &TaskProfile, params: &SystemParams, n: usize) -> Result<Option<f64>> {
    profile.check_index(n)?;
    let b = params.deadline_s
        - profile.prefix_cycles(n) / params.f_max_hz
        - profile.suffix_cycles(n) / params.f_edge_hz;
    Ok((b > 0.0).then_some(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalAllocation {
    /// Common frequency of sub-tasks `1..n`; `None` when nothing runs locally.
    pub frequency_hz: Option<f64>,
    pub energy: Energy,
}

/// Cheapest local frequencies for a given upload duration: every local
/// sub-task runs at `sum_{i<n} l_i / (T_th - edge suffix - tau_t)`.
pub fn optimal_freqs(
    profile: &TaskProfile,
    params: &SystemParams,
    n: usize,
    tau_t: f64,
) -> Result<LocalAllocation> {
    let budget = tau_budget(profile, params, n)?
        .ok_or_else(|| Error::Infeasible(format!("offloading at sub-task {n} cannot meet the deadline")))?;
    if !(tau_t > 0.0 && tau_t <= budget * (1.0 + 1e-12)) {
        return Err(domain(format!("upload duration {tau_t} outside (0, {budget}]")));
    }
    if n == 1 {
        return Ok(LocalAllocation { frequency_hz: None, energy: Energy::ZERO });
    }
    let cycles = profile.prefix_cycles(n);
    let f = (cycles / local_window(profile, params, n, tau_t)).min(params.f_max_hz);
    Ok(LocalAllocation { frequency_hz: Some(f), energy: local_energy(cycles, f, params.k0) })
}

fn local_window(profile: &TaskProfile, params: &SystemParams, n: usize, tau_t: f64) -> f64 {
    params.deadline_s - profile.suffix_cycles(n) / params.f_edge_hz - tau_t
}

/// Energy of offloading at `n` with upload duration `tau_t`, local
/// frequencies chosen optimally.
fn objective(profile: &TaskProfile, params: &SystemParams, n: usize, h: f64, tau_t: f64) -> f64 {
    let upload = block_energy_raw(profile.nats_of(n), h, tau_t, params.bandwidth_hz);
    if n == 1 {
        return upload;
    }
    let cycles = profile.prefix_cycles(n);
    let window = local_window(profile, params, n, tau_t);
    upload + params.k0 * cycles.powi(3) / (window * window)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub tau_t: f64,
    pub energy: Energy,
    pub iterations: usize,
}

/// Best upload duration and energy for a fixed offload index `n`, or `None`
/// when `n` cannot meet the deadline.
pub fn inner_solve(
    profile: &TaskProfile,
    params: &SystemParams,
    n: usize,
    h: Gain,
    tol: f64,
) -> Result<Option<InnerSolution>> {
    if !(h.get() > 0.0) {
        return Err(domain(format!("channel gain must be positive, got {}", h.get())));
    }
    if !(tol > 0.0) {
        return Err(domain("tolerance must be positive"));
    }
    let Some(budget) = tau_budget(profile, params, n)? else {
        return Ok(None);
    };
    let lo = TAU_FLOOR.min(budget / 2.0);
    let g = golden_section(|t| objective(profile, params, n, h.get(), t), lo, budget, tol);
    if !g.fx.is_finite() {
        return Ok(None);
    }
    Ok(Some(InnerSolution { tau_t: g.x, energy: Energy(g.fx), iterations: g.iterations }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEvaluation {
    pub n: usize,
    pub feasible: bool,
    pub energy_j: Option<f64>,
    pub tau_t_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowSolution {
    pub n_star: usize,
    pub tau_t_s: f64,
    pub p_t_w: f64,
    /// Frequencies of sub-tasks `1..n_star`, all equal.
    pub freqs_hz: Vec<f64>,
    pub energy_j: f64,
    pub time_total_s: f64,
    pub per_index: Vec<IndexEvaluation>,
}

/// Scans every offload index and returns the cheapest allocation. Ties go
/// to the smaller index.
pub fn solve(profile: &TaskProfile, params: &SystemParams, h: Gain, tol: f64) -> Result<SlowSolution> {
    params.validate()?;
    let mut per_index = Vec::with_capacity(profile.len());
    let mut best: Option<(usize, InnerSolution)> = None;
    for n in 1..=profile.len() {
        let sol = inner_solve(profile, params, n, h, tol)?;
        per_index.push(IndexEvaluation {
            n,
            feasible: sol.is_some(),
            energy_j: sol.map(|s| s.energy.get()),
            tau_t_s: sol.map(|s| s.tau_t),
        });
        if let Some(s) = sol {
            if best.as_ref().is_none_or(|(_, b)| s.energy.get() < b.energy.get()) {
                best = Some((n, s));
            }
        }
    }
    let Some((n_star, inner)) = best else {
        return Err(Error::Infeasible(format!(
            "deadline {} s is shorter than the fastest schedule ({} s on the edge alone)",
            params.deadline_s,
            profile.total_cycles() / params.f_edge_hz
        )));
    };
    let tau_t = inner.tau_t;
    let p_t = (profile.nats_of(n_star) / (params.bandwidth_hz * tau_t)).exp_m1() / h.get();
    let alloc = optimal_freqs(profile, params, n_star, tau_t)?;
    let freqs_hz = match alloc.frequency_hz {
        Some(f) => vec![f; n_star - 1],
        None => Vec::new(),
    };
    let local_time: f64 = freqs_hz.iter().zip(profile.cycles()).map(|(f, l)| l / f).sum();
    let time_total_s = local_time + tau_t + profile.suffix_cycles(n_star) / params.f_edge_hz;
    Ok(SlowSolution {
        n_star,
        tau_t_s: tau_t,
        p_t_w: p_t,
        freqs_hz,
        energy_j: inner.energy.get(),
        time_total_s,
        per_index,
    })
}

/// Energy of running the whole chain locally at the slowest frequency that
/// meets the deadline, or `None` if that exceeds `f_max`.
pub fn full_local_energy(profile: &TaskProfile, params: &SystemParams) -> Option<Energy> {
    let f = profile.total_cycles() / params.deadline_s;
    (f <= params.f_max_hz).then(|| local_energy(profile.total_cycles(), f, params.k0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let g = golden_section(|x| (x - 0.3).powi(2) + 1.0, 0.0, 1.0, 1e-8);
        assert!((g.x - 0.3).abs() < 1e-7);
        assert!(g.iterations <= golden_iteration_bound(1.0, 1e-8));
        // boundary minimum
        let g = golden_section(|x| -x, 0.0, 2.0, 1e-6);
        assert_eq!(g.x, 2.0);
    }

    #[test]
    fn budget_examples() {
        let (p, s) = (default_profile(), default_params());
        assert!(rel(tau_budget(&p, &s, 3).unwrap().unwrap(), 0.35 - 0.074 - 0.233 / 3.0) < 1e-12);
        assert!((tau_budget(&p, &s, 3).unwrap().unwrap() - 0.198333).abs() < 1e-6);
        assert!(rel(tau_budget(&p, &s, 1).unwrap().unwrap(), 0.26) < 1e-12);
        let mut tight = s.clone();
        tight.deadline_s = 0.08;
        assert!((1..=10).all(|n| tau_budget(&p, &tight, n).unwrap().is_none()));
        assert!(tau_budget(&p, &s, 0).is_err());
    }

    #[test]
    fn closed_form_frequencies() {
        let (p, s) = (default_profile(), default_params());
        let a = optimal_freqs(&p, &s, 3, 0.1).unwrap();
        let f = a.frequency_hz.unwrap();
        assert!(rel(f, 3.7e7 / (0.35 - 0.233 / 3.0 - 0.1)) < 1e-12);
        assert!((f - 2.1471e8).abs() < 1e4);
        assert_eq!(optimal_freqs(&p, &s, 1, 0.05).unwrap().energy.get(), 0.0);
        let b = tau_budget(&p, &s, 4).unwrap().unwrap();
        assert!(rel(optimal_freqs(&p, &s, 4, b).unwrap().frequency_hz.unwrap(), 5e8) < 1e-12);
        assert!(optimal_freqs(&p, &s, 4, b * 1.01).is_err());
        assert!(optimal_freqs(&p, &s, 4, 0.0).is_err());
    }

    #[test]
    fn inner_solve_matches_fine_grid() {
        let (p, s) = (default_profile(), default_params());
        for n in [1, 2, 3, 5] {
            let sol = inner_solve(&p, &s, n, Gain(60.0), DEFAULT_TOL).unwrap().unwrap();
            let budget = tau_budget(&p, &s, n).unwrap().unwrap();
            let grid_min = (1..=1_000_000)
                .map(|k| objective(&p, &s, n, 60.0, budget * k as f64 / 1e6))
                .fold(f64::INFINITY, f64::min);
            assert!(rel(sol.energy.get(), grid_min) <= 1e-3, "n={n}");
            assert!(sol.energy.get() <= grid_min * (1.0 + 1e-9));
            assert!(sol.energy.get() <= objective(&p, &s, n, 60.0, budget));
            assert!(sol.iterations <= golden_iteration_bound(budget, DEFAULT_TOL));
        }
    }

    #[test]
    fn better_channel_costs_less() {
        let (p, s) = (default_profile(), default_params());
        for n in 1..=7 {
            let e1 = inner_solve(&p, &s, n, Gain(40.0), DEFAULT_TOL).unwrap().unwrap().energy;
            let e2 = inner_solve(&p, &s, n, Gain(80.0), DEFAULT_TOL).unwrap().unwrap().energy;
            assert!(e2.get() <= e1.get());
        }
    }

    #[test]
    fn solution_post_conditions() {
        let (p, s) = (default_profile(), default_params());
        let sol = solve(&p, &s, Gain(60.0), DEFAULT_TOL).unwrap();
        assert!(sol.n_star >= 1 && sol.n_star <= 10);
        assert_eq!(sol.freqs_hz.len(), sol.n_star - 1);
        if let Some(f0) = sol.freqs_hz.first() {
            assert!(sol.freqs_hz.iter().all(|f| rel(*f, *f0) <= 1e-9 && *f <= s.f_max_hz));
            assert!(rel(sol.time_total_s, s.deadline_s) <= 1e-9);
        }
        assert!(sol.time_total_s <= s.deadline_s + 1e-9);
        let min_feasible = sol
            .per_index
            .iter()
            .filter_map(|e| e.energy_j)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(min_feasible, sol.energy_j);
        assert!(sol.per_index.iter().skip(7).all(|e| !e.feasible));
    }

    #[test]
    fn infeasible_instance_is_an_error() {
        let (p, mut s) = (default_profile(), default_params());
        s.deadline_s = 0.05;
        assert!(matches!(solve(&p, &s, Gain(60.0), DEFAULT_TOL), Err(Error::Infeasible(_))));
    }

    #[test]
    fn single_subtask_offloads_everything() {
        let p = TaskProfile::new(vec![1e8], vec![2e4]).unwrap();
        let sol = solve(&p, &default_params(), Gain(50.0), DEFAULT_TOL).unwrap();
        assert_eq!(sol.n_star, 1);
        assert!(sol.freqs_hz.is_empty());
        let budget = 0.35 - 1e8 / 3e9;
        // no local energy to trade against: the upload stretches over the whole budget
        assert!((sol.tau_t_s - budget).abs() <= 1e-6);
    }
}
