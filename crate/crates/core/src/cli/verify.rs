use std::fmt;

use super::Suite;
use crate::channel::GainDistribution;
use crate::config::ExperimentConfig;
use crate::ergodic::{self, WfOptions};
use crate::error::Result;
use crate::fastdp::{self, GridConfig};
use crate::model::{Gain, TaskProfile};
use crate::oracle::{self, ScanMode};
use crate::policy;
use crate::slow;

pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn check(out: &mut Vec<Check>, name: &str, passed: bool, detail: String) {
    out.push(Check { name: name.to_string(), passed, detail });
}

pub fn run_suite(cfg: &ExperimentConfig, suite: Suite) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Slow | Suite::All) {
        slow_suite(cfg, &mut out)?;
    }
    if matches!(suite, Suite::Dp | Suite::All) {
        dp_suite(cfg, &mut out)?;
    }
    if matches!(suite, Suite::Ergodic | Suite::All) {
        ergodic_suite(cfg, &mut out)?;
    }
    Ok(out)
}

fn slow_suite(cfg: &ExperimentConfig, out: &mut Vec<Check>) -> Result<()> {
    let profile = cfg.profile()?;
    let params = &cfg.system;
    let mean = cfg.channel.mean().get();
    for h in [0.5 * mean, mean, 2.0 * mean] {
        let sol = match slow::solve(&profile, params, Gain(h), cfg.solver.slow_tol_s) {
            Ok(s) => s,
            Err(e) => {
                check(out, &format!("slow solve h={h}"), false, e.to_string());
                continue;
            }
        };
        let grid = oracle::slow_grid(&profile, params, h, 100_000, 100_000)?;
        let e = sol.energy_j;
        let rel = grid.energy_j.map_or(f64::INFINITY, |g| (e - g).abs() / g);
        check(out, &format!("slow oracle h={h}"), rel <= 1e-3, format!("relative gap {rel:.2e}"));

        let spread = sol.freqs_hz.iter().fold(0.0f64, |a, f| a.max((f - sol.freqs_hz[0]).abs() / sol.freqs_hz[0]));
        let active = (sol.time_total_s - params.deadline_s).abs() / params.deadline_s;
        let ok = sol.n_star == 1 || (spread <= 1e-9 && active <= 1e-9);
        check(out, &format!("equal frequencies, tight deadline h={h}"), ok, format!("spread {spread:.1e}, slack {active:.1e}"));

        let mut worst = 0.0f64;
        for factor in [1.0 - 1e-4, 1.0 + 1e-4] {
            let tau = sol.tau_t_s * factor;
            let Some(budget) = slow::tau_budget(&profile, params, sol.n_star)? else { continue };
            if tau <= 0.0 || tau > budget {
                continue;
            }
            let local = slow::optimal_freqs(&profile, params, sol.n_star, tau)?.energy.get();
            let total = tau * (profile.nats_of(sol.n_star) / (params.bandwidth_hz * tau)).exp_m1() / h + local;
            worst = worst.max((e - total) / e);
        }
        check(out, &format!("no improving perturbation h={h}"), worst <= 1e-6, format!("best relative gain {worst:.1e}"));
    }

    let mut ok = true;
    let mut prev = f64::INFINITY;
    for k in 0..=12 {
        let mut p = params.clone();
        p.f_edge_hz = 2.4e9 + 0.1e9 * k as f64;
        if p.f_edge_hz <= p.f_max_hz {
            continue;
        }
        let e = slow::solve(&profile, &p, Gain(mean), cfg.solver.slow_tol_s).map_or(f64::INFINITY, |s| s.energy_j);
        ok &= e <= prev * (1.0 + 1e-9);
        prev = e;
    }
    check(out, "slow energy nonincreasing in edge speed", ok, String::new());
    Ok(())
}

fn dp_suite(cfg: &ExperimentConfig, out: &mut Vec<Check>) -> Result<()> {
    let (tp, ts, td) = oracle::tiny_instance();
    let grid = GridConfig { d_intervals: 64, ..GridConfig::default() };
    let tiny = fastdp::build_tables(&tp, &ts, &td, &grid)?;
    let exact = oracle::dp_enumerate(&tp, &ts, &td, 64)?;
    let rel = (tiny.z(1) - exact.z[0]).abs() / exact.z[0];
    check(out, "tables match enumeration", rel <= 1e-9, format!("relative gap {rel:.1e}"));
    let best_static = exact.static_values.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
    check(
        out,
        "stopping rule beats every static index",
        tiny.z(1) <= best_static,
        format!("Z_1 {:.6e} vs best static {:.6e}", tiny.z(1), best_static),
    );

    let profile = cfg.profile()?;
    let tables = fastdp::build_tables(&profile, &cfg.system, &cfg.channel, &cfg.grid())?;
    let mut mono_d = 0.0f64;
    let mut mono_h = 0.0f64;
    let mut convex = 0.0f64;
    let mut zero_ok = true;
    for st in tables.stages.iter().flatten() {
        let hn = st.node_count();
        for m in 1..=st.spec.blocks {
            zero_ok &= st.q_bar(m, 0) == 0.0;
            let qb = &st.layers[m - 1].q_bar;
            let scale = qb.iter().fold(0.0f64, |a, v| a.max(*v));
            convex = convex.min(oracle::convexity_scan(qb, ScanMode::Convexity)? / scale.max(f64::MIN_POSITIVE));
            for k in 0..hn {
                let col: Vec<f64> = (0..st.spec.rows()).map(|i| st.q(m, i, k)).collect();
                mono_d = mono_d.min(oracle::convexity_scan(&col, ScanMode::NonDecreasing)?);
            }
            for i in 0..st.spec.rows() {
                let row: Vec<f64> = (0..hn).map(|k| st.q(m, i, k)).collect();
                if row.len() >= 3 {
                    mono_h = mono_h.max(oracle::convexity_scan(&row, ScanMode::NonIncreasing)?);
                }
            }
        }
    }
    check(out, "Q nondecreasing in data", mono_d >= 0.0, format!("worst step {mono_d:.1e} J"));
    check(out, "Q nonincreasing in gain", mono_h <= 1e-12, format!("worst step {mono_h:.1e} J"));
    check(out, "expected Q vanishes at zero data", zero_ok, String::new());
    check(out, "expected Q convex in data", convex >= -1e-6, format!("worst relative second difference {convex:.1e}"));
    let mut bound_ok = true;
    for n in 1..=tables.n_subtasks() {
        let local = tables.local_branch(n);
        bound_ok &= tables.stop.z_h[n - 1].iter().all(|&z| z <= local);
    }
    check(out, "stopping values below the local branch", bound_ok, String::new());
    let mut sched_ok = true;
    for s in tables.schedules.iter().filter(|s| s.feasible) {
        sched_ok &= ((s.m_star - 1) as f64 * cfg.system.coherence_s + s.t_star - s.budget_s).abs() <= 1e-12
            && s.t_star > 0.0
            && s.t_star <= cfg.system.coherence_s;
    }
    check(out, "block schedules are deadline-tight", sched_ok, String::new());
    let ev = policy::evaluate(&tables, 2_000, cfg.solver.seed)?;
    check(
        out,
        "no deadline violations",
        ev.deadline_violations == 0 && ev.infeasible_episodes == 0,
        format!("{} violations over {} episodes", ev.deadline_violations, ev.episodes),
    );
    Ok(())
}

fn ergodic_suite(cfg: &ExperimentConfig, out: &mut Vec<Check>) -> Result<()> {
    let two = GainDistribution::discrete(vec![1.0, 3.0], vec![0.5, 0.5])?.quadrature(0, 0.0)?;
    let tight = WfOptions { tol: 1e-13, gap_tol: 1e-12, ..WfOptions::default() };
    let s = ergodic::solve_wf(&two, 0.5 * 3f64.ln(), 1.0, tight)?;
    let err = (s.zeta - 1.0).abs().max((s.mean_power_w - 1.0 / 3.0).abs());
    check(out, "two-state water level", err <= 1e-9, format!("error {err:.1e}"));

    let profile: TaskProfile = cfg.profile()?;
    let rule = cfg.channel.quadrature(cfg.solver.h_nodes, cfg.solver.tail_cut)?;
    let mut worst_res = 0.0f64;
    let mut worst_gap = 0.0f64;
    for n in 1..=profile.len() {
        let sched = fastdp::schedule(&profile, &cfg.system, n)?;
        if !sched.feasible {
            continue;
        }
        let rate = profile.nats_of(n) / (sched.budget_s * cfg.system.bandwidth_hz);
        let sol = ergodic::solve_wf(&rule, rate, sched.budget_s, cfg.wf_options())?;
        worst_res = worst_res.max(sol.rate_residual.abs());
        worst_gap = worst_gap.max(sol.duality_gap);
    }
    check(out, "water-filling rate residual", worst_res <= 1e-6, format!("{worst_res:.1e}"));
    check(out, "water-filling duality gap", worst_gap <= 1e-6, format!("{worst_gap:.1e}"));
    let sel = ergodic::offline_select(&profile, &cfg.system, &rule, cfg.wf_options())?;
    check(out, "offline index", true, format!("n* = {}, {:.6e} J", sel.n_star, sel.total_j));
    Ok(())
}
