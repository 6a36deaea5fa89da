//! `seqoff` command line: solve, build and persist tables, simulate the
//! online policy, sweep parameters and run the verification suites.

mod verify;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::ergodic;
use crate::error::{Error, Result};
use crate::fastdp::{self, persist};
use crate::model::{Gain, SystemParams};
use crate::policy::{self, Decision};
use crate::slow;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "seqoff", version, about = "Energy-optimal offloading of sequential tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Joint offloading and resource allocation for a known constant gain.
    SolveSlow {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the fast-fading value tables and write them to a directory.
    BuildTables {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the online policy on sampled channels.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for trace.csv and summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Water-filling limit for one offload index, or the offline index choice.
    Ergodic {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy of one method across values of one parameter.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, value_enum, default_value = "fast")]
        regime: Regime,
        /// Constant gain for the slow regime; defaults to the channel mean.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run property and oracle checks; exits 3 on any failure.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Fe,
    Tth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Proposed,
    Binary,
    Fixed,
}

impl Method {
    fn label(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Binary => "binary",
            Method::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Regime {
    Slow,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Slow,
    Dp,
    Ergodic,
    All,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Infeasible(_) => EXIT_INFEASIBLE,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("SEQOFF_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring SEQOFF_THREADS={v:?}"),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_path(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// CSV text with a leading `# config_hash=` comment and a header row.
pub fn csv_text(hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(format!("# config_hash={hash}\n{}", String::from_utf8(body).expect("utf-8 fields")))
}

fn emit_csv(hash: &str, header: &[&str], rows: &[Vec<String>], out: Option<&Path>) -> Result<()> {
    let text = csv_text(hash, header, rows)?;
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.10e}")
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::SolveSlow { config, h, tol, out } => {
            let cfg = load_config(config.as_deref())?;
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("--h must be a positive gain, got {h}")));
            }
            let profile = cfg.profile()?;
            let start = Instant::now();
            let sol = slow::solve(&profile, &cfg.system, Gain(h), tol.unwrap_or(cfg.solver.slow_tol_s))?;
            eprintln!("solve-slow: {:.3} ms", start.elapsed().as_secs_f64() * 1e3);
            if let Some(local) = slow::full_local_energy(&profile, &cfg.system) {
                if local.get() < sol.energy_j {
                    eprintln!("note: running every sub-task locally would cost {local}, less than the offloading optimum");
                }
            }
            emit_json(&sol, out.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::BuildTables { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let profile = cfg.profile()?;
            let start = Instant::now();
            let tables = fastdp::build_tables(&profile, &cfg.system, &cfg.channel, &cfg.grid())?;
            eprintln!("build-tables: {:.1} ms", start.elapsed().as_secs_f64() * 1e3);
            for w in &tables.warnings {
                eprintln!("warning: {w}");
            }
            persist::save(&tables, &out)?;
            println!("Z_1 = {:.10e} J, tables written to {}", tables.z(1), out.display());
            Ok(EXIT_OK)
        }
        Command::Simulate { config, tables, episodes, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            simulate(&cfg, &tables, episodes.unwrap_or(cfg.solver.episodes), seed.unwrap_or(cfg.solver.seed), &out)?;
            Ok(EXIT_OK)
        }
        Command::Ergodic { config, n, out } => {
            let cfg = load_config(config.as_deref())?;
            let profile = cfg.profile()?;
            let rule = cfg.channel.quadrature(cfg.solver.h_nodes, cfg.solver.tail_cut)?;
            match n {
                Some(n) => {
                    let sched = fastdp::schedule(&profile, &cfg.system, n)?;
                    if !sched.feasible {
                        return Err(Error::Infeasible(format!("offloading at sub-task {n} leaves no upload time")));
                    }
                    let rate = profile.nats_of(n) / (sched.budget_s * cfg.system.bandwidth_hz);
                    let sol = ergodic::solve_wf(&rule, rate, sched.budget_s, cfg.wf_options())?;
                    emit_json(&sol, out.as_deref())?;
                }
                None => {
                    let sel = ergodic::offline_select(&profile, &cfg.system, &rule, cfg.wf_options())?;
                    emit_json(&sel, out.as_deref())?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Sweep { config, param, values, method, regime, h, out } => {
            let cfg = load_config(config.as_deref())?;
            if values.is_empty() {
                return Err(Error::Config("--values needs at least one number".into()));
            }
            let rows = sweep(&cfg, param, &values, method, regime, h)?;
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![num(r.param_value), method.label().to_string(), num(r.mean_energy_j), num(r.stderr_j)])
                .collect();
            emit_csv(&cfg.hash(), &["param_value", "method", "mean_energy_J", "stderr_J"], &rows, out.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::Verify { config, suite } => {
            let cfg = load_config(config.as_deref())?;
            let report = verify::run_suite(&cfg, suite)?;
            for line in &report {
                println!("{line}");
            }
            let failed = report.iter().filter(|l| !l.passed).count();
            println!("{} checks, {} failed", report.len(), failed);
            Ok(if failed == 0 { EXIT_OK } else { EXIT_VERIFY })
        }
    }
}

fn simulate(cfg: &ExperimentConfig, tables_dir: &Path, episodes: usize, seed: u64, out: &Path) -> Result<()> {
    let profile = cfg.profile()?;
    let want = fastdp::instance_hash(&profile, &cfg.system, &cfg.channel, &cfg.grid());
    let tables = persist::load(tables_dir, Some(&want))?;
    if episodes == 0 {
        return Err(Error::Config("--episodes must be at least 1".into()));
    }
    fs::create_dir_all(out)?;

    let start = Instant::now();
    let mut rows = Vec::new();
    let mut decisions = 0usize;
    for ep in 0..episodes as u64 {
        let tr = policy::run_episode(&tables, seed, ep)?;
        decisions += tr.stages.len();
        for s in &tr.stages {
            if s.action == Decision::Continue {
                rows.push(vec![
                    ep.to_string(),
                    s.stage.to_string(),
                    s.action.label().to_string(),
                    num(s.gain),
                    num(0.0),
                    num(s.joules),
                    num(s.cum_time_s),
                ]);
            }
        }
        if let Some(n) = tr.offload_stage {
            for b in &tr.per_block {
                rows.push(vec![
                    ep.to_string(),
                    n.to_string(),
                    Decision::Offload.label().to_string(),
                    num(b.gain),
                    num(b.nats_sent),
                    num(b.joules),
                    num(b.cum_time_s),
                ]);
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ev = policy::evaluate(&tables, episodes, seed)?;
    let hash = cfg.hash();
    fs::write(
        out.join("trace.csv"),
        csv_text(&hash, &["episode", "stage", "action", "gain", "nats_sent", "joules", "cum_time_s"], &rows)?,
    )?;
    let summary = vec![vec![
        ev.episodes.to_string(),
        seed.to_string(),
        num(ev.mean_j),
        num(ev.stderr_j),
        num(tables.z(1)),
        ev.deadline_violations.to_string(),
        ev.infeasible_episodes.to_string(),
    ]];
    fs::write(
        out.join("summary.csv"),
        csv_text(
            &hash,
            &["episodes", "seed", "mean_energy_J", "stderr_J", "expected_energy_J", "deadline_violations", "infeasible_episodes"],
            &summary,
        )?,
    )?;
    eprintln!(
        "simulate: {episodes} episodes in {:.1} ms, {:.2} us per online decision",
        elapsed * 1e3,
        elapsed * 1e6 / decisions.max(1) as f64
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub param_value: f64,
    pub mean_energy_j: f64,
    pub stderr_j: f64,
}

fn with_param(base: &SystemParams, param: SweepParam, v: f64) -> SystemParams {
    let mut s = base.clone();
    match param {
        SweepParam::Fe => s.f_edge_hz = v,
        SweepParam::Tth => s.deadline_s = v,
    }
    s
}

/// Energy of `method` at each value of `param`. Infeasible points report
/// `+inf`. The fixed baseline keeps the power it gets at the base
/// configuration across the sweep.
pub fn sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    method: Method,
    regime: Regime,
    h: Option<f64>,
) -> Result<Vec<SweepRow>> {
    let profile = cfg.profile()?;
    let gain = Gain(h.unwrap_or(cfg.channel.mean().get()));
    let p_fix = match method {
        Method::Fixed => policy::default_fixed_power(&profile, &cfg.system, gain)?,
        _ => 0.0,
    };
    let infeasible_as_inf = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(Error::Infeasible(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    };
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let params = with_param(&cfg.system, param, v);
        params.validate().map_err(|e| Error::Config(format!("sweep value {v}: {e}")))?;
        let energy = match regime {
            Regime::Slow => infeasible_as_inf(match method {
                Method::Proposed => slow::solve(&profile, &params, gain, cfg.solver.slow_tol_s).map(|s| s.energy_j),
                Method::Binary => policy::baseline_binary_slow(&profile, &params, gain).map(|b| b.energy_j),
                Method::Fixed => policy::baseline_fixed_slow(&profile, &params, gain, p_fix).map(|b| b.energy_j),
            })?,
            Regime::Fast => infeasible_as_inf(
                fastdp::build_tables(&profile, &params, &cfg.channel, &cfg.grid()).and_then(|t| match method {
                    Method::Proposed => Ok(t.z(1)),
                    Method::Binary => policy::baseline_binary_fast(&t).map(|b| b.energy_j),
                    Method::Fixed => policy::baseline_fixed_fast(&t, p_fix).map(|b| b.energy_j),
                }),
            )?,
        };
        rows.push(SweepRow { param_value: v, mean_energy_j: energy, stderr_j: 0.0 });
    }
    Ok(rows)
}
