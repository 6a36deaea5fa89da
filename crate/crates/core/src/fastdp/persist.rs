//! On-disk form of [`QzTables`]: `manifest.json` plus one CSV per stage and
//! block for the values and one for the policy.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stage::{Layer, StageSpec, StageTables};
use super::{build_z, instance_hash, BlockSchedule, GridConfig, QzTables};
use crate::channel::{GainDistribution, QuadratureRule};
use crate::error::{Error, Result};
use crate::model::{SystemParams, TaskProfile};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    params_hash: String,
    profile: TaskProfile,
    params: SystemParams,
    dist: GainDistribution,
    grid: GridConfig,
    rule: QuadratureRule,
    schedules: Vec<BlockSchedule>,
    stages: Vec<Option<StageEntry>>,
    warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageEntry {
    spec: StageSpec,
    scan_fallbacks: usize,
    overflow_cells: usize,
}

fn q_file(n: usize, m: usize) -> String {
    format!("q_n{n:02}_m{m:03}.csv")
}

fn policy_file(n: usize, m: usize) -> String {
    format!("policy_n{n:02}_m{m:03}.csv")
}

fn write_matrix<T: std::fmt::Display>(
    path: &Path,
    hash: &str,
    rows: usize,
    cols: usize,
    values: &[T],
    fmt: impl Fn(&T) -> String,
) -> Result<()> {
    let mut out = format!("# config_hash={hash}\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["d_index".to_string()];
    header.extend((0..cols).map(|k| format!("h{k}")));
    w.write_record(&header)?;
    for i in 0..rows {
        let mut rec = vec![i.to_string()];
        rec.extend(values[i * cols..(i + 1) * cols].iter().map(&fmt));
        w.write_record(&rec)?;
    }
    out.push_str(std::str::from_utf8(&w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("ascii"));
    fs::write(path, out)?;
    Ok(())
}

fn read_matrix<T: std::str::FromStr>(path: &Path, rows: usize, cols: usize) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).has_headers(true).from_path(path)?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != cols + 1 {
            return Err(Error::Config(format!("{}: expected {} columns", path.display(), cols + 1)));
        }
        for field in rec.iter().skip(1) {
            values.push(field.parse().map_err(|_| {
                Error::Config(format!("{}: unparsable value {field:?}", path.display()))
            })?);
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Config(format!("{}: expected {rows} rows, found {seen}", path.display())));
    }
    Ok(values)
}

/// Writes the tables into `dir`, creating it if needed.
pub fn save(tables: &QzTables, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let h = tables.rule.node_count();
    let mut entries = Vec::with_capacity(tables.stages.len());
    for (idx, st) in tables.stages.iter().enumerate() {
        let n = idx + 1;
        let Some(st) = st else {
            entries.push(None);
            continue;
        };
        if st.node_count() == 0 {
            return Err(Error::Config("cannot save tables built without per-gain values".into()));
        }
        let rows = st.spec.rows();
        for (mi, layer) in st.layers.iter().enumerate() {
            let m = mi + 1;
            write_matrix(&dir.join(q_file(n, m)), &tables.params_hash, rows, h, &layer.q, |v| format!("{v:.16e}"))?;
            write_matrix(&dir.join(policy_file(n, m)), &tables.params_hash, rows, h, &layer.policy, |v| {
                v.to_string()
            })?;
        }
        entries.push(Some(StageEntry {
            spec: st.spec,
            scan_fallbacks: st.scan_fallbacks,
            overflow_cells: st.overflow_cells,
        }));
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        params_hash: tables.params_hash.clone(),
        profile: tables.profile.clone(),
        params: tables.params.clone(),
        dist: tables.dist.clone(),
        grid: tables.grid,
        rule: tables.rule.clone(),
        schedules: tables.schedules.clone(),
        stages: entries,
        warnings: tables.warnings.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads tables from `dir`. With `expected_hash` set, refuses tables built
/// from different inputs.
pub fn load(dir: &Path, expected_hash: Option<&str>) -> Result<QzTables> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::StaleTables(format!("unsupported format version {}", manifest.format_version)));
    }
    let recomputed = instance_hash(&manifest.profile, &manifest.params, &manifest.dist, &manifest.grid);
    if recomputed != manifest.params_hash {
        return Err(Error::StaleTables("manifest contents do not match its recorded hash".into()));
    }
    if let Some(want) = expected_hash {
        if want != manifest.params_hash {
            return Err(Error::StaleTables(format!(
                "tables in {} were built for configuration {} but the current configuration hashes to {}; rebuild them",
                dir.display(),
                manifest.params_hash,
                want
            )));
        }
    }
    let h = manifest.rule.node_count();
    let mut stages = Vec::with_capacity(manifest.stages.len());
    for (idx, entry) in manifest.stages.iter().enumerate() {
        let n = idx + 1;
        let Some(entry) = entry else {
            stages.push(None);
            continue;
        };
        let rows = entry.spec.rows();
        let mut layers = Vec::with_capacity(entry.spec.blocks);
        for m in 1..=entry.spec.blocks {
            let q: Vec<f64> = read_matrix(&dir.join(q_file(n, m)), rows, h)?;
            let policy: Vec<u32> = read_matrix(&dir.join(policy_file(n, m)), rows, h)?;
            let q_bar = (0..rows).map(|i| manifest.rule.expect_values(&q[i * h..(i + 1) * h])).collect();
            layers.push(Layer { duration: entry.spec.duration(m), q, q_bar, policy });
        }
        stages.push(Some(StageTables {
            spec: entry.spec,
            layers,
            scan_fallbacks: entry.scan_fallbacks,
            overflow_cells: entry.overflow_cells,
        }));
    }
    // stopping values may hold +inf, which JSON cannot carry
    let stop = build_z(&manifest.profile, &manifest.params, &manifest.rule, &stages)?;
    Ok(QzTables {
        profile: manifest.profile,
        params: manifest.params,
        dist: manifest.dist,
        grid: manifest.grid,
        rule: manifest.rule,
        schedules: manifest.schedules,
        stages,
        stop,
        warnings: manifest.warnings,
        params_hash: manifest.params_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fastdp::build_tables;
    use crate::model::fixtures::default_params;

    #[test]
    fn round_trip_and_stale_refusal() {
        let p = TaskProfile::from_mcycles_kbits(&[7.0, 30.0], &[36.0, 22.0]).unwrap();
        let mut s = default_params();
        s.deadline_s = 0.12;
        let grid = GridConfig { d_intervals: 32, h_nodes: 16, tail_cut: 1e-7 };
        let t = build_tables(&p, &s, &GainDistribution::exponential(50.0).unwrap(), &grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&t, dir.path()).unwrap();
        let back = load(dir.path(), Some(&t.params_hash)).unwrap();
        assert_eq!(back, t);
        assert!(matches!(load(dir.path(), Some("deadbeef")), Err(Error::StaleTables(_))));
    }
}
