//! Zero-coherence-time limit: the upload of `d_n` nats over `T_n` seconds
//! becomes a mean-rate constraint and the optimal power is water-filling,
//! `p(h) = (zeta - 1/h)^+`. The water level `zeta` is found by ascent on
//! the dual function.

use serde::Serialize;

use crate::channel::QuadratureRule;
use crate::error::{domain, Error, Result};
use crate::fastdp::schedule;
use crate::model::{SystemParams, TaskProfile};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_GAP_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100_000;

pub fn power_at(zeta: f64, h: f64) -> f64 {
    (zeta - 1.0 / h).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WfOptions {
    /// Bound on `|E ln(1 + p h) - rate_target|`.
    pub tol: f64,
    /// Bound on the relative primal-dual gap.
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for WfOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, gap_tol: DEFAULT_GAP_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaterFillingSolution {
    pub zeta: f64,
    pub nodes: Vec<f64>,
    pub power: Vec<f64>,
    pub mean_power_w: f64,
    /// `mean_power * duration`.
    pub energy_j: f64,
    pub duration_s: f64,
    pub rate_target: f64,
    /// `E ln(1 + p h) - rate_target` at termination.
    pub rate_residual: f64,
    /// `zeta |residual| / E p`: relative gap between primal and dual values.
    pub duality_gap: f64,
    pub iterations: usize,
}

fn mean_rate(rule: &QuadratureRule, zeta: f64) -> f64 {
    rule.nodes()
        .iter()
        .zip(rule.weights())
        .map(|(&h, &w)| if zeta * h > 1.0 { w * (zeta * h).ln() } else { 0.0 })
        .sum()
}

fn mean_power(rule: &QuadratureRule, zeta: f64) -> f64 {
    rule.nodes().iter().zip(rule.weights()).map(|(&h, &w)| w * power_at(zeta, h)).sum()
}

/// Right derivative of the mean rate in `zeta`.
fn rate_slope(rule: &QuadratureRule, zeta: f64) -> f64 {
    let active: f64 =
        rule.nodes().iter().zip(rule.weights()).filter(|(&h, _)| zeta * h >= 1.0).map(|(_, &w)| w).sum();
    active / zeta
}

/// Water level delivering `rate_target` nats/s/Hz on average, with energy
/// reported over `duration_s`.
///
/// Each step moves `zeta` along the dual subgradient `rate_target - rate`,
/// scaled by the inverse slope of the mean rate at the current level. The
/// levels seen so far bracket the answer; a step that leaves the bracket, or
/// lands where the rate is flat, is replaced by bisection.
pub fn solve_wf(
    rule: &QuadratureRule,
    rate_target: f64,
    duration_s: f64,
    opts: WfOptions,
) -> Result<WaterFillingSolution> {
    if !(rate_target > 0.0 && rate_target.is_finite()) {
        return Err(domain(format!("rate target must be positive, got {rate_target}")));
    }
    if !(duration_s > 0.0) {
        return Err(domain("upload duration must be positive"));
    }
    let mean_h: f64 = rule.nodes().iter().zip(rule.weights()).map(|(h, w)| h * w).sum();
    let mut zeta = 1.0 / mean_h + rate_target;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut residual = mean_rate(rule, zeta) - rate_target;
    for it in 0..=opts.max_iter {
        let ep = mean_power(rule, zeta);
        let gap = if ep > 0.0 { zeta * residual.abs() / ep } else { f64::INFINITY };
        if residual.abs() <= opts.tol && gap <= opts.gap_tol {
            return Ok(WaterFillingSolution {
                zeta,
                nodes: rule.nodes().to_vec(),
                power: rule.nodes().iter().map(|&h| power_at(zeta, h)).collect(),
                mean_power_w: ep,
                energy_j: ep * duration_s,
                duration_s,
                rate_target,
                rate_residual: residual,
                duality_gap: gap,
                iterations: it,
            });
        }
        if it == opts.max_iter {
            break;
        }
        if residual < 0.0 {
            lo = lo.max(zeta);
        } else {
            hi = hi.min(zeta);
        }
        let slope = rate_slope(rule, zeta);
        let mut next = if slope > 0.0 { zeta - residual / slope } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * zeta.max(lo) };
        }
        if next == zeta {
            break;
        }
        zeta = next;
        residual = mean_rate(rule, zeta) - rate_target;
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfflineCandidate {
    pub n: usize,
    pub budget_s: f64,
    /// Local energy of sub-tasks `1..n` at `f_l` plus the water-filling
    /// upload energy; `None` when the budget is empty.
    pub total_j: Option<f64>,
    pub upload_j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfflineSelection {
    pub n_star: usize,
    pub total_j: f64,
    pub candidates: Vec<OfflineCandidate>,
}

/// Offload index chosen before any gain is observed, using water-filling
/// over each index's whole upload budget.
pub fn offline_select(
    profile: &TaskProfile,
    params: &SystemParams,
    rule: &QuadratureRule,
    opts: WfOptions,
) -> Result<OfflineSelection> {
    let mut candidates = Vec::with_capacity(profile.len());
    let mut best: Option<(usize, f64)> = None;
    let mut prefix = 0.0;
    for n in 1..=profile.len() {
        let sched = schedule(profile, params, n)?;
        let (total, upload) = if sched.feasible {
            let rate = profile.nats_of(n) / (sched.budget_s * params.bandwidth_hz);
            let q = solve_wf(rule, rate, sched.budget_s, opts)?.energy_j;
            (Some(prefix + q), Some(q))
        } else {
            (None, None)
        };
        if let Some(t) = total {
            if best.is_none_or(|(_, b)| t < b) {
                best = Some((n, t));
            }
        }
        candidates.push(OfflineCandidate { n, budget_s: sched.budget_s, total_j: total, upload_j: upload });
        prefix += params.local_energy_fixed(profile.cycles_of(n)).get();
    }
    let (n_star, total_j) =
        best.ok_or_else(|| Error::Infeasible("no offload index leaves a positive upload budget".into()))?;
    Ok(OfflineSelection { n_star, total_j, candidates })
}
