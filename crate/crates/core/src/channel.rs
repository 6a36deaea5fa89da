//! Block-fading gain distributions: quantiles, deterministic quadrature for
//! expectations over the gain, and seeded sampling for Monte-Carlo runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::Gain;

pub const DEFAULT_NODE_COUNT: usize = 128;
pub const DEFAULT_TAIL_CUT: f64 = 1e-7;

/// Distribution of the normalized gain of one fading block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GainDistribution {
    /// Rayleigh fading: the power gain is exponential with the given mean.
    Exponential { mean: f64 },
    /// Finite support; used for exact enumeration.
    Discrete { gains: Vec<f64>, probs: Vec<f64> },
}

impl GainDistribution {
    pub fn exponential(mean: f64) -> Result<Self> {
        let d = Self::Exponential { mean };
        d.validate()?;
        Ok(d)
    }

    pub fn discrete(gains: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let d = Self::Discrete { gains, probs };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Exponential { mean } => {
                if !(*mean > 0.0 && mean.is_finite()) {
                    return Err(domain(format!("exponential mean must be positive, got {mean}")));
                }
            }
            Self::Discrete { gains, probs } => {
                if gains.is_empty() || gains.len() != probs.len() {
                    return Err(domain("discrete channel needs equally many gains and probabilities"));
                }
                if gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
                    return Err(domain("discrete channel gains must be positive"));
                }
                if probs.iter().any(|&p| !(p >= 0.0)) {
                    return Err(domain("discrete channel probabilities must be nonnegative"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(domain(format!("discrete probabilities sum to {total}, not 1")));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> Gain {
        match self {
            Self::Exponential { mean } => Gain(*mean),
            Self::Discrete { gains, probs } => Gain(gains.iter().zip(probs).map(|(g, p)| g * p).sum()),
        }
    }

    /// Largest gain in the support, if bounded.
    pub fn max_gain(&self) -> Option<f64> {
        match self {
            Self::Exponential { .. } => None,
            Self::Discrete { gains, .. } => Some(gains.iter().copied().fold(0.0, f64::max)),
        }
    }

    /// Generalized inverse CDF.
    pub fn quantile(&self, u: f64) -> Result<Gain> {
        if !(u > 0.0 && u < 1.0) {
            return Err(domain(format!("quantile level must lie in (0, 1), got {u}")));
        }
        Ok(Gain(self.quantile_unchecked(u)))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        match self {
            Self::Exponential { mean } => -mean * (-u).ln_1p(),
            Self::Discrete { .. } => {
                let support = self.sorted_support();
                let mut cum = 0.0;
                for &(g, p) in &support {
                    cum += p;
                    if cum >= u {
                        return g;
                    }
                }
                support.last().map(|s| s.0).unwrap_or(0.0)
            }
        }
    }

    fn sorted_support(&self) -> Vec<(f64, f64)> {
        match self {
            Self::Exponential { .. } => Vec::new(),
            Self::Discrete { gains, probs } => {
                let mut pairs: Vec<(f64, f64)> = gains.iter().copied().zip(probs.iter().copied()).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
                for (g, p) in pairs {
                    match merged.last_mut() {
                        Some(last) if last.0 == g => last.1 += p,
                        _ => merged.push((g, p)),
                    }
                }
                merged
            }
        }
    }

    /// Draws one gain by inverting the CDF at a uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Gain {
        let u: f64 = rng.random();
        match self {
            // u in [0, 1): -ln(1 - u) is finite
            Self::Exponential { mean } => Gain(-mean * (-u).ln_1p()),
            Self::Discrete { .. } => {
                // map u = 0 to the smallest atom
                Gain(self.quantile_unchecked(u.max(f64::MIN_POSITIVE)))
            }
        }
    }

    /// Quadrature rule for expectations over this distribution.
    ///
    /// Discrete distributions are integrated exactly on their support.
    /// Exponential gains use `node_count` equal-probability cells on
    /// `u in [0, 1 - tail_cut]`; each node sits at the conditional mean of the
    /// gain inside its cell, so the rule integrates affine functions of `h`
    /// exactly up to the tail cut.
    pub fn quadrature(&self, node_count: usize, tail_cut: f64) -> Result<QuadratureRule> {
        self.validate()?;
        match self {
            Self::Discrete { .. } => {
                let support: Vec<(f64, f64)> =
                    self.sorted_support().into_iter().filter(|&(_, p)| p > 0.0).collect();
                QuadratureRule::new(
                    support.iter().map(|s| s.0).collect(),
                    support.iter().map(|s| s.1).collect(),
                )
            }
            Self::Exponential { mean } => {
                if node_count < 2 {
                    return Err(domain("need at least two quadrature nodes"));
                }
                if !(0.0..1.0).contains(&tail_cut) {
                    return Err(domain("tail cut must lie in [0, 1)"));
                }
                // antiderivative of -ln(1 - u) expressed in v = 1 - u
                let anti = |v: f64| if v > 0.0 { v * v.ln() - v } else { 0.0 };
                let top = 1.0 - tail_cut;
                let width = top / node_count as f64;
                let nodes = (0..node_count)
                    .map(|k| {
                        let ua = width * k as f64;
                        let ub = if k + 1 == node_count { top } else { width * (k + 1) as f64 };
                        mean * (anti(1.0 - ub) - anti(1.0 - ua)) / (ub - ua)
                    })
                    .collect();
                QuadratureRule::new(nodes, vec![1.0 / node_count as f64; node_count])
            }
        }
    }

    pub fn expectation(&self, node_count: usize, g: impl Fn(f64) -> f64) -> Result<f64> {
        self.quadrature(node_count, DEFAULT_TAIL_CUT)?.expect(g)
    }
}

/// Nodes (strictly increasing gains) with weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(domain("quadrature needs equally many nodes and weights"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || !(nodes[0] > 0.0) {
            return Err(domain("quadrature nodes must be positive and strictly increasing"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(domain(format!("quadrature weights sum to {total}")));
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Weighted sum of `g` over the nodes; fails if any evaluation is not finite.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for (&h, &w) in self.nodes.iter().zip(&self.weights) {
            let v = g(h);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("integrand is {v} at gain {h}")));
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Weighted sum of tabulated values (one per node). Infinite entries
    /// propagate.
    pub fn expect_values(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.nodes.len());
        values.iter().zip(&self.weights).map(|(v, w)| if *w == 0.0 { 0.0 } else { v * w }).sum()
    }
}

/// Random stream for episode `index` of a run seeded with `seed`.
pub fn episode_stream(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index))
}
