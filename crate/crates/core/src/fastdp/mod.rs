//! Offline tables for fast fading: the deadline-tight block schedule of each
//! offload index, the per-block offloading values `Q` and the stopping
//! values `Z` that drive the online policy.

pub mod persist;
pub mod stage;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{GainDistribution, QuadratureRule, DEFAULT_NODE_COUNT, DEFAULT_TAIL_CUT};
use crate::error::{domain, Error, Result};
use crate::model::{edge_suffix_time, full_local_time, local_prefix_time, Energy, SystemParams, TaskProfile};

pub use stage::{build_stage, Retain, StageSpec, StageTables};

pub const DEFAULT_INTERVALS: usize = 256;

/// Blocks available to upload the input of sub-task `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub n: usize,
    pub budget_s: f64,
    pub m_star: usize,
    pub t_star: f64,
    pub feasible: bool,
}

/// Splits an upload budget into `m` blocks of length `tau` with a shorter
/// (or equal) last block. Returns `None` for a nonpositive budget.
pub fn block_split(budget: f64, tau: f64) -> Option<(usize, f64)> {
    if !(budget > 0.0) {
        return None;
    }
    let ratio = budget / tau;
    let nearest = ratio.round();
    let m = if nearest >= 1.0 && (ratio - nearest).abs() <= 1e-12 * ratio.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    } as usize;
    let t = (budget - (m - 1) as f64 * tau).min(tau);
    Some((m, t))
}

pub fn schedule(profile: &TaskProfile, params: &SystemParams, n: usize) -> Result<BlockSchedule> {
    let budget = params.deadline_s
        - local_prefix_time(profile, n, params.f_local_hz)?.get()
        - edge_suffix_time(profile, n, params.f_edge_hz)?.get();
    Ok(match block_split(budget, params.coherence_s) {
        Some((m_star, t_star)) => BlockSchedule { n, budget_s: budget, m_star, t_star, feasible: true },
        None => BlockSchedule { n, budget_s: budget, m_star: 0, t_star: 0.0, feasible: false },
    })
}

/// Resolution of the tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Intervals `D` of each stage's data grid.
    pub d_intervals: usize,
    /// Quadrature nodes over the gain (ignored for discrete channels).
    pub h_nodes: usize,
    pub tail_cut: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { d_intervals: DEFAULT_INTERVALS, h_nodes: DEFAULT_NODE_COUNT, tail_cut: DEFAULT_TAIL_CUT }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_intervals < 1 {
            return Err(domain("the data grid needs at least one interval"));
        }
        if self.h_nodes < 2 {
            return Err(domain("need at least two gain nodes"));
        }
        Ok(())
    }
}

/// Stage grid for sub-task `n` under `schedule`.
pub fn stage_spec(profile: &TaskProfile, params: &SystemParams, sched: &BlockSchedule, intervals: usize) -> StageSpec {
    StageSpec {
        d_max: profile.nats_of(sched.n),
        intervals,
        bandwidth: params.bandwidth_hz,
        tau: params.coherence_s,
        blocks: sched.m_star,
        last_block: sched.t_star,
    }
}

/// Q tables of every feasible offload index; `None` marks an infeasible stage.
pub fn build_q(
    profile: &TaskProfile,
    params: &SystemParams,
    rule: &QuadratureRule,
    grid: &GridConfig,
) -> Result<(Vec<BlockSchedule>, Vec<Option<StageTables>>)> {
    let mut schedules = Vec::with_capacity(profile.len());
    let mut stages = Vec::with_capacity(profile.len());
    for n in 1..=profile.len() {
        let sched = schedule(profile, params, n)?;
        stages.push(
            sched
                .feasible
                .then(|| build_stage(stage_spec(profile, params, &sched, grid.d_intervals), rule, Retain::Full)),
        );
        schedules.push(sched);
    }
    Ok((schedules, stages))
}

/// Stopping values of every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopValues {
    /// `Z_n(h_k)`, one vector per stage `1..=N`.
    pub z_h: Vec<Vec<f64>>,
    /// `Z_n` for `n = 1..=N+1`; the last entry is zero.
    pub z: Vec<f64>,
    /// Whether computing sub-task `n` locally still leaves a deadline-meeting
    /// continuation.
    pub continue_ok: Vec<bool>,
}

pub fn build_z(
    profile: &TaskProfile,
    params: &SystemParams,
    rule: &QuadratureRule,
    stages: &[Option<StageTables>],
) -> Result<StopValues> {
    let big_n = profile.len();
    let full_local_ok = full_local_time(profile, params.f_local_hz)?.get() <= params.deadline_s;
    let mut continue_ok = vec![false; big_n];
    continue_ok[big_n - 1] = full_local_ok;
    for n in (1..big_n).rev() {
        continue_ok[n - 1] = stages[n].is_some() || continue_ok[n];
    }

    let h = rule.node_count();
    let mut z = vec![0.0; big_n + 1];
    let mut z_h = vec![Vec::new(); big_n];
    for n in (1..=big_n).rev() {
        let local = if continue_ok[n - 1] {
            params.local_energy_fixed(profile.cycles_of(n)).get() + z[n]
        } else {
            f64::INFINITY
        };
        let row: Vec<f64> = (0..h)
            .map(|k| {
                let offload = stage_entry_value(stages[n - 1].as_ref(), rule, k);
                offload.min(local)
            })
            .collect();
        z[n - 1] = rule.expect_values(&row);
        z_h[n - 1] = row;
    }
    if !z[0].is_finite() {
        return Err(Error::Infeasible(format!(
            "no offload index meets the {} s deadline for every channel state",
            params.deadline_s
        )));
    }
    Ok(StopValues { z_h, z, continue_ok })
}

/// `Q_{n,1}(d_n, h_k)`, or `+inf` for an infeasible stage.
fn stage_entry_value(stage: Option<&StageTables>, rule: &QuadratureRule, k: usize) -> f64 {
    match stage {
        None => f64::INFINITY,
        Some(st) if st.node_count() > 0 => st.q(1, st.spec.intervals, k),
        Some(st) => st.q_at_gain(1, st.spec.intervals, rule.nodes()[k]).0,
    }
}

/// Complete offline output for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct QzTables {
    pub profile: TaskProfile,
    pub params: SystemParams,
    pub dist: GainDistribution,
    pub grid: GridConfig,
    pub rule: QuadratureRule,
    pub schedules: Vec<BlockSchedule>,
    pub stages: Vec<Option<StageTables>>,
    pub stop: StopValues,
    pub warnings: Vec<String>,
    pub params_hash: String,
}

/// Hash identifying the inputs the tables were built from.
pub fn instance_hash(
    profile: &TaskProfile,
    params: &SystemParams,
    dist: &GainDistribution,
    grid: &GridConfig,
) -> String {
    let canonical = serde_json::to_vec(&(profile, params, dist, grid)).expect("plain data serializes");
    hex::encode(Sha256::digest(&canonical))
}

pub fn build_tables(
    profile: &TaskProfile,
    params: &SystemParams,
    dist: &GainDistribution,
    grid: &GridConfig,
) -> Result<QzTables> {
    params.validate()?;
    grid.validate()?;
    let rule = dist.quadrature(grid.h_nodes, grid.tail_cut)?;
    let (schedules, stages) = build_q(profile, params, &rule, grid)?;
    let stop = build_z(profile, params, &rule, &stages)?;
    let mut warnings = Vec::new();
    for st in stages.iter().flatten() {
        if st.overflow_cells > 0 {
            warnings.push(format!(
                "{} table cells overflowed to +inf (d_max {} nats)",
                st.overflow_cells, st.spec.d_max
            ));
        }
        if st.scan_fallbacks > 0 {
            warnings.push(format!("{} layers failed the convexity check and used a full scan", st.scan_fallbacks));
        }
    }
    Ok(QzTables {
        params_hash: instance_hash(profile, params, dist, grid),
        profile: profile.clone(),
        params: params.clone(),
        dist: dist.clone(),
        grid: *grid,
        rule,
        schedules,
        stages,
        stop,
        warnings,
    })
}

impl QzTables {
    pub fn n_subtasks(&self) -> usize {
        self.profile.len()
    }

    pub fn stage(&self, n: usize) -> Result<&StageTables> {
        self.profile.check_index(n)?;
        self.stages[n - 1]
            .as_ref()
            .ok_or_else(|| Error::Infeasible(format!("offloading at sub-task {n} cannot meet the deadline")))
    }

    /// `Z_n`, with `n = N + 1` giving zero.
    pub fn z(&self, n: usize) -> f64 {
        self.stop.z[n - 1]
    }

    /// Local branch `k0 l_n f_l^2 + Z_{n+1}`, or `+inf` when inadmissible.
    pub fn local_branch(&self, n: usize) -> f64 {
        if self.stop.continue_ok[n - 1] {
            self.params.local_energy_fixed(self.profile.cycles_of(n)).get() + self.z(n + 1)
        } else {
            f64::INFINITY
        }
    }

    /// Bilinear interpolation of `Q_{n,m}(d, h)` on the stored grids; flat in
    /// `h` outside the node range.
    pub fn q_lookup(&self, n: usize, m: usize, d: f64, h: f64) -> Result<Energy> {
        let st = self.stage(n)?;
        if m < 1 || m > st.spec.blocks {
            return Err(Error::OutOfRange { index: m, len: st.spec.blocks });
        }
        if st.node_count() == 0 {
            return Err(domain("tables were built without per-gain values"));
        }
        if !(h > 0.0) {
            return Err(domain(format!("channel gain must be positive, got {h}")));
        }
        let d_max = st.spec.d_max;
        if !(d >= 0.0 && d <= d_max * (1.0 + 1e-12)) {
            return Err(domain(format!("data size {d} outside the grid [0, {d_max}]")));
        }
        let pos = (d / st.spec.d_step()).min(st.spec.intervals as f64);
        let i0 = (pos.floor() as usize).min(st.spec.intervals - 1);
        let fd = pos - i0 as f64;

        let nodes = self.rule.nodes();
        let (k0, fh) = if h <= nodes[0] || nodes.len() == 1 {
            (0, 0.0)
        } else if h >= nodes[nodes.len() - 1] {
            (nodes.len() - 2, 1.0)
        } else {
            let k = nodes.partition_point(|&x| x <= h) - 1;
            (k, (h - nodes[k]) / (nodes[k + 1] - nodes[k]))
        };
        let at = |i: usize, k: usize| st.q(m, i, k);
        let k1 = (k0 + 1).min(nodes.len() - 1);
        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else if t == 1.0 { b } else { a + (b - a) * t };
        let lo = lerp(at(i0, k0), at(i0, k1), fh);
        let hi = lerp(at(i0 + 1, k0), at(i0 + 1, k1), fh);
        Ok(Energy(lerp(lo, hi, fd)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{default_params, default_profile};

    #[test]
    fn default_schedules() {
        let (p, s) = (default_profile(), default_params());
        let s1 = schedule(&p, &s, 1).unwrap();
        assert!((s1.budget_s - 0.26).abs() < 1e-12);
        assert_eq!(s1.m_star, 13);
        assert!((s1.t_star - 0.02).abs() < 1e-12);
        let s2 = schedule(&p, &s, 2).unwrap();
        assert!((s2.budget_s - 0.2483333333333333).abs() < 1e-12);
        assert_eq!(s2.m_star, 13);
        assert!((s2.t_star - 0.0083333333333333).abs() < 1e-12);
        for n in 1..=10 {
            let sc = schedule(&p, &s, n).unwrap();
            if sc.feasible {
                assert!(((sc.m_star - 1) as f64 * 0.02 + sc.t_star - sc.budget_s).abs() <= 1e-12);
                assert!(sc.t_star > 0.0 && sc.t_star <= 0.02);
            }
        }
        assert!(!schedule(&p, &s, 8).unwrap().feasible);
    }

    #[test]
    fn zero_budget_is_infeasible() {
        let p = default_profile();
        let mut s = default_params();
        s.deadline_s = 0.09;
        assert!(!schedule(&p, &s, 1).unwrap().feasible);
    }

    fn small_tables() -> QzTables {
        let p = TaskProfile::from_mcycles_kbits(&[7.0, 30.0, 25.0], &[36.0, 22.0, 30.0]).unwrap();
        let mut s = default_params();
        s.deadline_s = 0.15;
        let grid = GridConfig { d_intervals: 64, h_nodes: 32, tail_cut: 1e-7 };
        build_tables(&p, &s, &GainDistribution::exponential(50.0).unwrap(), &grid).unwrap()
    }

    #[test]
    fn z_respects_the_local_bound() {
        let t = small_tables();
        for n in 1..=3 {
            let local = t.local_branch(n);
            for &v in &t.stop.z_h[n - 1] {
                assert!(v <= local && v >= 0.0);
            }
        }
        assert_eq!(t.z(4), 0.0);
    }

    #[test]
    fn lookup_is_exact_at_nodes_and_bounded_between() {
        let t = small_tables();
        let st = t.stage(1).unwrap();
        let nodes = t.rule.nodes().to_vec();
        for i in [0, 5, 64] {
            for k in [0, 7, 31] {
                let v = t.q_lookup(1, 1, st.spec.d_at(i), nodes[k]).unwrap().get();
                assert_eq!(v, st.q(1, i, k));
            }
        }
        let d = 0.5 * (st.spec.d_at(10) + st.spec.d_at(11));
        let h = 0.5 * (nodes[3] + nodes[4]);
        let v = t.q_lookup(1, 2, d, h).unwrap().get();
        let corners = [st.q(2, 10, 3), st.q(2, 10, 4), st.q(2, 11, 3), st.q(2, 11, 4)];
        assert!(v >= corners.iter().cloned().fold(f64::INFINITY, f64::min));
        assert!(v <= corners.iter().cloned().fold(0.0, f64::max));
        assert_eq!(t.q_lookup(1, 1, 0.0, 40.0).unwrap().get(), 0.0);
        assert!(t.q_lookup(1, 99, 0.0, 40.0).is_err());
        assert!(t.q_lookup(9, 1, 0.0, 40.0).is_err());
    }

    #[test]
    fn hash_changes_with_inputs() {
        let (p, s) = (default_profile(), default_params());
        let dist = GainDistribution::exponential(50.0).unwrap();
        let g = GridConfig::default();
        let a = instance_hash(&p, &s, &dist, &g);
        let mut s2 = s.clone();
        s2.f_edge_hz = 3.1e9;
        assert_ne!(a, instance_hash(&p, &s2, &dist, &g));
        assert_eq!(a, instance_hash(&p, &s, &dist, &g));
    }
}
