//! Online stopping rule for fast fading, Monte-Carlo evaluation, and the two
//! comparison baselines (binary offloading and fixed power/frequency).

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{episode_stream, QuadratureRule};
use crate::error::{domain, Error, Result};
use crate::fastdp::{QzTables, StageSpec};
use crate::model::{block_energy_raw, local_energy, Gain, SystemParams, TaskProfile};
use crate::slow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Offload,
    Continue,
}

impl Decision {
    pub fn label(self) -> &'static str {
        match self {
            Decision::Offload => "offload",
            Decision::Continue => "local",
        }
    }
}

/// Offload only when strictly cheaper; `None` when neither branch is finite.
pub fn choose(offload: f64, local: f64) -> Option<Decision> {
    if offload < local {
        Some(Decision::Offload)
    } else if local.is_finite() {
        Some(Decision::Continue)
    } else {
        None
    }
}

/// Value of offloading at stage `n` given the measured first-block gain.
pub fn offload_value(tables: &QzTables, n: usize, h: f64) -> f64 {
    match &tables.stages[n - 1] {
        Some(st) => st.q_at_gain(1, st.spec.intervals, h).0,
        None => f64::INFINITY,
    }
}

pub fn decide(tables: &QzTables, n: usize, h: Gain) -> Result<Decision> {
    tables.profile.check_index(n)?;
    if !(h.0 > 0.0) {
        return Err(domain(format!("channel gain must be positive, got {}", h.0)));
    }
    choose(offload_value(tables, n, h.0), tables.local_branch(n))
        .ok_or_else(|| Error::Infeasible(format!("no admissible branch at sub-task {n}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: usize,
    pub action: Decision,
    pub gain: f64,
    pub joules: f64,
    pub cum_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRecord {
    pub block: usize,
    pub gain: f64,
    pub nats_sent: f64,
    pub joules: f64,
    pub cum_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub episode: u64,
    pub stages: Vec<StageRecord>,
    pub offload_stage: Option<usize>,
    pub per_block: Vec<BlockRecord>,
    pub energy_total: f64,
    pub time_total: f64,
}

/// Runs one episode on stream `episode` of `seed`.
pub fn run_episode(tables: &QzTables, seed: u64, episode: u64) -> Result<EpisodeTrace> {
    let mut rng = episode_stream(seed, episode);
    run_episode_with(tables, &mut rng, seed, episode)
}

pub fn run_episode_with<R: Rng + ?Sized>(
    tables: &QzTables,
    rng: &mut R,
    seed: u64,
    episode: u64,
) -> Result<EpisodeTrace> {
    let p = &tables.params;
    let mut stages = Vec::new();
    let mut per_block = Vec::new();
    let mut energy = 0.0;
    let mut time = 0.0;
    let mut offload_stage = None;
    for n in 1..=tables.n_subtasks() {
        let h = tables.dist.sample(rng).get();
        let action = decide(tables, n, Gain(h))?;
        match action {
            Decision::Continue => {
                let e = p.local_energy_fixed(tables.profile.cycles_of(n)).get();
                energy += e;
                time += tables.profile.cycles_of(n) / p.f_local_hz;
                stages.push(StageRecord { stage: n, action, gain: h, joules: e, cum_time_s: time });
            }
            Decision::Offload => {
                let st = tables.stage(n)?;
                let spec = st.spec;
                let mut idx = spec.intervals;
                let mut remaining = spec.d_max;
                let mut spent = 0.0;
                for m in 1..=spec.blocks {
                    let hm = if m == 1 { h } else { tables.dist.sample(rng).get() };
                    let t = spec.duration(m);
                    let nats = if m == spec.blocks {
                        remaining
                    } else {
                        let (_, j) = st.q_at_gain(m, idx, hm);
                        idx -= j;
                        spec.d_at(j).min(remaining)
                    };
                    let e = block_energy_raw(nats, hm, t, spec.bandwidth);
                    remaining -= nats;
                    spent += e;
                    time += t;
                    per_block.push(BlockRecord { block: m, gain: hm, nats_sent: nats, joules: e, cum_time_s: time });
                }
                energy += spent;
                time += tables.profile.suffix_cycles(n) / p.f_edge_hz;
                stages.push(StageRecord { stage: n, action, gain: h, joules: spent, cum_time_s: time });
                offload_stage = Some(n);
                break;
            }
        }
    }
    Ok(EpisodeTrace { seed, episode, stages, offload_stage, per_block, energy_total: energy, time_total: time })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub episodes: usize,
    pub mean_j: f64,
    pub stderr_j: f64,
    pub deadline_violations: usize,
    pub infeasible_episodes: usize,
}

/// Mean and standard error of the episode energy over `episodes` seeded runs.
pub fn evaluate(tables: &QzTables, episodes: usize, seed: u64) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(domain("need at least one episode"));
    }
    let results: Vec<Option<(f64, f64)>> = (0..episodes as u64)
        .into_par_iter()
        .map(|i| run_episode(tables, seed, i).ok().map(|t| (t.energy_total, t.time_total)))
        .collect();
    let deadline = tables.params.deadline_s;
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut violations = 0;
    let mut infeasible = 0;
    for r in results {
        match r {
            None => infeasible += 1,
            Some((e, t)) => {
                if t > deadline + 1e-9 {
                    violations += 1;
                }
                n += 1;
                let delta = e - mean;
                mean += delta / n as f64;
                m2 += delta * (e - mean);
            }
        }
    }
    let stderr = if n > 1 { (m2 / (n - 1) as f64 / n as f64).sqrt() } else { 0.0 };
    Ok(Evaluation { episodes, mean_j: mean, stderr_j: stderr, deadline_violations: violations, infeasible_episodes: infeasible })
}

/// Expected energy when always offloading at sub-task `n` whatever the
/// gains; `None` for an infeasible index.
pub fn static_value(tables: &QzTables, n: usize) -> Option<f64> {
    let st = tables.stages[n - 1].as_ref()?;
    let prefix: f64 = (1..n).map(|i| tables.params.local_energy_fixed(tables.profile.cycles_of(i)).get()).sum();
    Some(prefix + st.q_bar(1, st.spec.intervals))
}

/// Cheaper of running everything locally at the slowest deadline-meeting
/// frequency and offloading everything at the first sub-task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryBaseline {
    pub local_j: Option<f64>,
    pub offload_j: Option<f64>,
    pub energy_j: f64,
}

fn binary_local(profile: &TaskProfile, params: &SystemParams) -> Option<f64> {
    let f = profile.total_cycles() / params.deadline_s;
    (f <= params.f_max_hz).then(|| local_energy(profile.total_cycles(), f, params.k0).get())
}

fn binary_pick(local: Option<f64>, offload: Option<f64>) -> Result<BinaryBaseline> {
    let energy = local.unwrap_or(f64::INFINITY).min(offload.unwrap_or(f64::INFINITY));
    if !energy.is_finite() {
        return Err(Error::Infeasible("neither full-local nor full-offload meets the deadline".into()));
    }
    Ok(BinaryBaseline { local_j: local, offload_j: offload, energy_j: energy })
}

/// Binary offloading with a known, constant gain.
pub fn baseline_binary_slow(profile: &TaskProfile, params: &SystemParams, h: Gain) -> Result<BinaryBaseline> {
    let offload = slow::inner_solve(profile, params, 1, h, slow::DEFAULT_TOL)?.map(|s| s.energy.get());
    binary_pick(binary_local(profile, params), offload)
}

/// Binary offloading under fast fading, with the full upload at the
/// optimal per-block split from the tables.
pub fn baseline_binary_fast(tables: &QzTables) -> Result<BinaryBaseline> {
    binary_pick(binary_local(&tables.profile, &tables.params), static_value(tables, 1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedBaseline {
    pub p_fix_w: f64,
    pub n: usize,
    pub energy_j: f64,
    /// Energy per offload index; `None` where the deadline is missed.
    pub per_index: Vec<Option<f64>>,
}

fn fixed_pick(p_fix: f64, per_index: Vec<Option<f64>>) -> Result<FixedBaseline> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in per_index.iter().enumerate() {
        if let Some(e) = *e {
            if best.is_none_or(|(_, b)| e < b) {
                best = Some((i + 1, e));
            }
        }
    }
    let (n, energy_j) =
        best.ok_or_else(|| Error::Infeasible(format!("no offload index meets the deadline at {p_fix} W")))?;
    Ok(FixedBaseline { p_fix_w: p_fix, n, energy_j, per_index })
}

/// Fixed frequency `f_l` and fixed transmit power under a constant gain.
pub fn baseline_fixed_slow(
    profile: &TaskProfile,
    params: &SystemParams,
    h: Gain,
    p_fix: f64,
) -> Result<FixedBaseline> {
    if !(p_fix > 0.0) {
        return Err(domain("fixed transmit power must be positive"));
    }
    let rate = params.bandwidth_hz * (p_fix * h.0).ln_1p();
    let per_index = (1..=profile.len())
        .map(|n| {
            let upload = profile.nats_of(n) / rate;
            let time = profile.prefix_cycles(n) / params.f_local_hz
                + upload
                + profile.suffix_cycles(n) / params.f_edge_hz;
            (time <= params.deadline_s * (1.0 + 1e-12)).then(|| {
                params.local_energy_fixed(profile.prefix_cycles(n)).get() + p_fix * upload
            })
        })
        .collect();
    fixed_pick(p_fix, per_index)
}

/// Expected upload energy of one stage when every block but the last
/// transmits at `p_fix` (stopping early once the data is through) and the
/// last block sends the remainder at the rate-matching power.
pub fn fixed_power_stage_value(spec: &StageSpec, rule: &QuadratureRule, p_fix: f64) -> f64 {
    let rows = spec.rows();
    let step = spec.d_step();
    let mut next: Vec<f64> = (0..rows)
        .map(|i| rule.expect_values(&rule.nodes().iter().map(|&h| block_energy_raw(spec.d_at(i), h, spec.last_block, spec.bandwidth)).collect::<Vec<_>>()))
        .collect();
    for _ in (1..spec.blocks).rev() {
        let t = spec.tau;
        let cur: Vec<f64> = (0..rows)
            .map(|i| {
                let vals: Vec<f64> = rule
                    .nodes()
                    .iter()
                    .map(|&h| {
                        let rate = spec.bandwidth * (p_fix * h).ln_1p();
                        let capacity = rate * t;
                        if capacity >= spec.d_at(i) {
                            if i == 0 { 0.0 } else { p_fix * spec.d_at(i) / rate }
                        } else {
                            let j = ((capacity / step).floor() as usize).min(i);
                            p_fix * t + next[i - j]
                        }
                    })
                    .collect();
                rule.expect_values(&vals)
            })
            .collect();
        next = cur;
    }
    next[rows - 1]
}

/// Fixed frequency `f_l` and fixed power under fast fading: static offload
/// index with the fixed-power upload of [`fixed_power_stage_value`].
pub fn baseline_fixed_fast(tables: &QzTables, p_fix: f64) -> Result<FixedBaseline> {
    if !(p_fix > 0.0) {
        return Err(domain("fixed transmit power must be positive"));
    }
    let per_index = (1..=tables.n_subtasks())
        .map(|n| {
            let st = tables.stages[n - 1].as_ref()?;
            let prefix = tables.params.local_energy_fixed(tables.profile.prefix_cycles(n)).get();
            Some(prefix + fixed_power_stage_value(&st.spec, &tables.rule, p_fix))
        })
        .collect();
    fixed_pick(p_fix, per_index)
}

/// Default fixed power: the optimal slow-fading power at the mean gain.
pub fn default_fixed_power(profile: &TaskProfile, params: &SystemParams, mean_gain: Gain) -> Result<f64> {
    Ok(slow::solve(profile, params, mean_gain, slow::DEFAULT_TOL)?.p_t_w)
}
