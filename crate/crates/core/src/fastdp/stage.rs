//! Value tables of one offload stage: the expected energy of pushing `d`
//! nats through the remaining fading blocks under the optimal per-block
//! split.
//!
//! Data amounts live on a uniform grid `d_i = i * d_max / D`. The split in
//! each block is restricted to the same grid, so `d - x` never needs
//! interpolation. Both `x -> e(x, h, t)` and the continuation value are
//! convex on the grid, which lets the row minimization run as a merge of the
//! two slope sequences instead of a full scan.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::QuadratureRule;
use crate::model::block_energy_raw;

/// Shape of one stage's block schedule and data grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    /// Largest data amount on the grid (the stage's input size).
    pub d_max: f64,
    /// Number of grid intervals `D`; the grid has `D + 1` points.
    pub intervals: usize,
    pub bandwidth: f64,
    /// Length of every block but the last.
    pub tau: f64,
    /// Number of blocks `M`.
    pub blocks: usize,
    /// Length of the last block, in `(0, tau]`.
    pub last_block: f64,
}

impl StageSpec {
    /// Duration of block `m` (1-based).
    pub fn duration(&self, m: usize) -> f64 {
        if m == self.blocks {
            self.last_block
        } else {
            self.tau
        }
    }

    pub fn d_at(&self, i: usize) -> f64 {
        if i == self.intervals {
            self.d_max
        } else {
            self.d_max * i as f64 / self.intervals as f64
        }
    }

    pub fn d_step(&self) -> f64 {
        self.d_max / self.intervals as f64
    }

    pub fn rows(&self) -> usize {
        self.intervals + 1
    }
}

/// Whether to keep the per-gain matrices or only the expected values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retain {
    Full,
    ExpectedOnly,
}

/// One block layer `m` of a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub duration: f64,
    /// `Q_m(d_i, h_k)`, row-major with one row per grid point. Empty when
    /// built with [`Retain::ExpectedOnly`].
    pub q: Vec<f64>,
    /// `Q_m(d_i)`: expectation of `q` over the gain.
    pub q_bar: Vec<f64>,
    /// Grid index of the optimal amount sent in this block, same layout as `q`.
    pub policy: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTables {
    pub spec: StageSpec,
    /// Layers `1..=M` in order.
    pub layers: Vec<Layer>,
    /// Layers that failed the convexity check and were minimized by full scan.
    pub scan_fallbacks: usize,
    /// Table cells that overflowed to `+inf`.
    pub overflow_cells: usize,
}

impl StageTables {
    pub fn node_count(&self) -> usize {
        match self.layers.first() {
            Some(l) if !l.q.is_empty() => l.q.len() / self.spec.rows(),
            _ => 0,
        }
    }

    /// Stored `Q_m(d_i, h_k)` (1-based `m`).
    pub fn q(&self, m: usize, i: usize, k: usize) -> f64 {
        let h = self.node_count();
        self.layers[m - 1].q[i * h + k]
    }

    pub fn q_bar(&self, m: usize, i: usize) -> f64 {
        self.layers[m - 1].q_bar[i]
    }

    /// `Q_m(d_i, h)` at an arbitrary measured gain, by minimizing directly
    /// against the stored continuation values. Returns the value and the
    /// grid index of the amount to send now. Ties go to sending less.
    pub fn q_at_gain(&self, m: usize, i: usize, h: f64) -> (f64, usize) {
        let spec = &self.spec;
        let t = spec.duration(m);
        if m == spec.blocks {
            return (block_energy_raw(spec.d_at(i), h, t, spec.bandwidth), i);
        }
        let next = &self.layers[m].q_bar;
        let mut best = (f64::INFINITY, 0);
        for j in 0..=i {
            let v = block_energy_raw(spec.d_at(j), h, t, spec.bandwidth) + next[i - j];
            if v < best.0 {
                best = (v, j);
            }
        }
        best
    }
}

/// Backward recursion over the blocks of one stage.
pub fn build_stage(spec: StageSpec, rule: &QuadratureRule, retain: Retain) -> StageTables {
    assert!(spec.blocks >= 1 && spec.intervals >= 1);
    let rows = spec.rows();
    let nodes = rule.nodes();
    let mut layers_rev: Vec<Layer> = Vec::with_capacity(spec.blocks);
    let mut scan_fallbacks = 0;
    let mut overflow_cells = 0;

    for m in (1..=spec.blocks).rev() {
        let t = spec.duration(m);
        let f_rows: Vec<f64> = (0..rows).map(|i| spec.d_at(i)).collect();
        let columns: Vec<(Vec<f64>, Vec<u32>)> = if m == spec.blocks {
            nodes
                .par_iter()
                .map(|&h| {
                    let q: Vec<f64> =
                        f_rows.iter().map(|&d| block_energy_raw(d, h, t, spec.bandwidth)).collect();
                    (q, (0..rows as u32).collect())
                })
                .collect()
        } else {
            let next = &layers_rev.last().expect("terminal layer built first").q_bar;
            let convex = is_convex(next);
            if !convex {
                scan_fallbacks += 1;
            }
            nodes
                .par_iter()
                .map(|&h| {
                    let f: Vec<f64> =
                        f_rows.iter().map(|&d| block_energy_raw(d, h, t, spec.bandwidth)).collect();
                    if convex {
                        inf_convolve_convex(&f, next)
                    } else {
                        inf_convolve_scan(&f, next)
                    }
                })
                .collect()
        };

        let hn = nodes.len();
        let mut q = vec![0.0; rows * hn];
        let mut policy = vec![0u32; rows * hn];
        for (k, (col, pol)) in columns.iter().enumerate() {
            for i in 0..rows {
                q[i * hn + k] = col[i];
                policy[i * hn + k] = pol[i];
            }
        }
        overflow_cells += q.iter().filter(|v| v.is_infinite()).count();
        let q_bar: Vec<f64> = (0..rows).map(|i| rule.expect_values(&q[i * hn..(i + 1) * hn])).collect();
        let (q, policy) = match retain {
            Retain::Full => (q, policy),
            Retain::ExpectedOnly => (Vec::new(), Vec::new()),
        };
        layers_rev.push(Layer { duration: t, q, q_bar, policy });
    }
    layers_rev.reverse();
    StageTables { spec, layers: layers_rev, scan_fallbacks, overflow_cells }
}

/// Nondecreasing discrete convexity on the finite prefix, up to rounding.
fn is_convex(g: &[f64]) -> bool {
    let finite: Vec<f64> = g.iter().copied().take_while(|v| v.is_finite()).collect();
    if g[finite.len()..].iter().any(|v| !v.is_infinite()) {
        return false;
    }
    let scale = finite.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    finite.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] >= -1e-12 * scale)
}

#[inline]
fn slope(v: &[f64], i: usize) -> f64 {
    if v[i + 1].is_infinite() {
        f64::INFINITY
    } else {
        v[i + 1] - v[i]
    }
}

/// `r_i = min_{j <= i} f_j + g_{i-j}` for convex `f` and `g` of equal
/// length, by merging slopes. Also returns the minimizing `j`.
pub(crate) fn inf_convolve_convex(f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let n = f.len();
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    let (mut a, mut b) = (0usize, 0usize);
    out.push(f[0] + g[0]);
    arg.push(0);
    for _ in 1..n {
        // a + b < n - 1, so neither sequence is exhausted
        if slope(f, a) < slope(g, b) {
            a += 1;
        } else {
            b += 1;
        }
        out.push(f[a] + g[b]);
        arg.push(a as u32);
    }
    (out, arg)
}

pub(crate) fn inf_convolve_scan(f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let n = f.len();
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = (f64::INFINITY, 0u32);
        for j in 0..=i {
            let v = f[j] + g[i - j];
            if v < best.0 {
                best = (v, j as u32);
            }
        }
        out.push(best.0);
        arg.push(best.1);
    }
    (out, arg)
}
