//! k-NN aggregation baselines over member similarities.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::harness::MetricReport;
use crate::model::{GroupId, Timestamp};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub group: GroupId,
    pub member: String,
    pub timestamp: Timestamp,
    pub similarity: f64,
    pub distance: f64,
}

/// Candidate members of one query with `d_i = max_j s_j - s_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceSet {
    pub neighbors: Vec<Neighbor>,
}

/// `(group, member, timestamp, similarity)` tuples of one query.
pub fn to_distances<I>(similarities: I) -> DistanceSet
where
    I: IntoIterator<Item = (GroupId, String, Timestamp, f64)>,
{
    let mut neighbors: Vec<Neighbor> = similarities
        .into_iter()
        .map(|(group, member, timestamp, similarity)| Neighbor {
            group,
            member,
            timestamp,
            similarity,
            distance: 0.0,
        })
        .collect();
    let max = neighbors
        .iter()
        .map(|n| n.similarity)
        .fold(f64::NEG_INFINITY, f64::max);
    for n in &mut neighbors {
        n.distance = max - n.similarity;
    }
    DistanceSet { neighbors }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Uniform,
    Triangle,
    Epanechnikov,
    Quartic,
    Triweight,
    Gaussian,
    Cosine,
    Tricube,
    Logistic,
    Sigmoid,
    Silverman,
}

impl Kernel {
    pub const ALL: [Kernel; 11] = [
        Kernel::Uniform,
        Kernel::Triangle,
        Kernel::Epanechnikov,
        Kernel::Quartic,
        Kernel::Triweight,
        Kernel::Gaussian,
        Kernel::Cosine,
        Kernel::Tricube,
        Kernel::Logistic,
        Kernel::Sigmoid,
        Kernel::Silverman,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Uniform => "uniform",
            Kernel::Triangle => "triangle",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Quartic => "quartic",
            Kernel::Triweight => "triweight",
            Kernel::Gaussian => "gaussian",
            Kernel::Cosine => "cosine",
            Kernel::Tricube => "tricube",
            Kernel::Logistic => "logistic",
            Kernel::Sigmoid => "sigmoid",
            Kernel::Silverman => "silverman",
        }
    }

    /// Kernel value without normalizing constants. Bounded kernels are zero
    /// for `|u| >= 1`. Silverman is left unclamped and dips below zero.
    pub fn eval(self, u: f64) -> f64 {
        let a = u.abs();
        let inside = a < 1.0;
        let bounded = |v: f64| if inside { v } else { 0.0 };
        match self {
            Kernel::Uniform => bounded(1.0),
            Kernel::Triangle => bounded(1.0 - a),
            Kernel::Epanechnikov => bounded(0.75 * (1.0 - a * a)),
            Kernel::Quartic => bounded((1.0 - a * a).powi(2)),
            Kernel::Triweight => bounded((1.0 - a * a).powi(3)),
            Kernel::Gaussian => (-0.5 * a * a).exp(),
            Kernel::Cosine => bounded((FRAC_PI_2 * a).cos()),
            Kernel::Tricube => bounded((1.0 - a.powi(3)).powi(3)),
            Kernel::Logistic => {
                let e = (-a).exp();
                // 1 / (e^a + 2 + e^-a), rewritten to stay finite for large a
                e / (1.0 + e).powi(2)
            }
            Kernel::Sigmoid => {
                let e = (-a).exp();
                2.0 * e / (1.0 + e * e)
            }
            Kernel::Silverman => {
                let t = a * FRAC_1_SQRT_2;
                0.5 * (-t).exp() * (t + FRAC_PI_4).sin()
            }
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKernel(s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum KnnConfig {
    Kernel { kernel: Kernel, k: usize },
    AdjustedWeighting { gamma: usize, decay: f64 },
}

impl KnnConfig {
    pub const MAX_K: usize = 15;

    pub fn kernel(kernel: Kernel, k: usize) -> Self {
        KnnConfig::Kernel { kernel, k }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KnnConfig::Kernel { k: 0, .. } => {
                Err(Error::InvalidKnn("k must be at least 1".into()))
            }
            KnnConfig::AdjustedWeighting { gamma: 0, .. } => {
                Err(Error::InvalidKnn("gamma must be at least 1".into()))
            }
            KnnConfig::AdjustedWeighting { decay, .. } if !(decay > 0.0 && decay < 1.0) => {
                Err(Error::InvalidKnn(format!("decay must lie in (0, 1), got {decay}")))
            }
            _ => Ok(()),
        }
    }

    /// Name used in grid tables: the kernel or `adjusted_weighting`.
    pub fn method_name(&self) -> &'static str {
        match self {
            KnnConfig::Kernel { kernel, .. } => kernel.name(),
            KnnConfig::AdjustedWeighting { .. } => "adjusted_weighting",
        }
    }

    /// `k` for kernels, `gamma` for adjusted weighting.
    pub fn size(&self) -> usize {
        match *self {
            KnnConfig::Kernel { k, .. } => k,
            KnnConfig::AdjustedWeighting { gamma, .. } => gamma,
        }
    }

    pub fn rank(&self, dists: &DistanceSet) -> Result<Vec<(GroupId, f64)>> {
        self.validate()?;
        Ok(match *self {
            KnnConfig::Kernel { kernel, k } => knn_rank(dists, kernel, k),
            KnnConfig::AdjustedWeighting { gamma, decay } => {
                adjusted_weighting_rank(dists, gamma, decay)
            }
        })
    }
}

impl fmt::Display for KnnConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnnConfig::Kernel { kernel, k } => write!(f, "{kernel}, k={k}"),
            KnnConfig::AdjustedWeighting { gamma, decay } => {
                write!(f, "adjusted_weighting, gamma={gamma}, w={decay}")
            }
        }
    }
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.timestamp.cmp(&b.timestamp))
        .then_with(|| a.member.cmp(&b.member))
}

/// Sorted by descending score, then descending best similarity, then id.
fn finish(scored: BTreeMap<&str, (f64, f64)>) -> Vec<(GroupId, f64)> {
    let mut out: Vec<(&str, f64, f64)> = scored
        .into_iter()
        .map(|(g, (score, best))| (g, score, best))
        .collect();
    out.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(b.2.total_cmp(&a.2))
            .then_with(|| a.0.cmp(b.0))
    });
    out.into_iter().map(|(g, s, _)| (g.to_owned(), s)).collect()
}

/// Per-group `(score, best member similarity)`, scores zeroed.
fn best_similarities(dists: &DistanceSet) -> BTreeMap<&str, (f64, f64)> {
    let mut map = BTreeMap::new();
    for n in &dists.neighbors {
        let e = map.entry(n.group.as_str()).or_insert((0.0, f64::NEG_INFINITY));
        e.1 = f64::max(e.1, n.similarity);
    }
    map
}

/// Kernel-weighted vote over the `k` globally nearest members. Every group
/// in the distance set appears in the result; groups without a selected
/// member get vote 0.
pub fn knn_rank(dists: &DistanceSet, kernel: Kernel, k: usize) -> Vec<(GroupId, f64)> {
    let mut sorted: Vec<&Neighbor> = dists.neighbors.iter().collect();
    sorted.sort_by(|a, b| neighbor_order(a, b));
    let k = k.min(sorted.len());
    let selected = &sorted[..k];
    let normalizer = match sorted.get(k) {
        Some(next) => next.distance,
        None => selected.last().map_or(0.0, |n| n.distance) + 1.0,
    };

    let mut groups = best_similarities(dists);
    for n in selected {
        let u = if normalizer > 0.0 {
            n.distance / normalizer
        } else {
            0.0
        };
        groups.get_mut(n.group.as_str()).unwrap().0 += kernel.eval(u);
    }
    finish(groups)
}

/// Adjusted Weighting Method: `h = sum_{i=1..gamma} decay^i * d_i` over each
/// group's nearest members, ranked by ascending `h`. Returned scores are
/// `-h` so that they are non-increasing down the list.
pub fn adjusted_weighting_rank(dists: &DistanceSet, gamma: usize, decay: f64) -> Vec<(GroupId, f64)> {
    let mut per_group: BTreeMap<&str, Vec<&Neighbor>> = BTreeMap::new();
    for n in &dists.neighbors {
        per_group.entry(n.group.as_str()).or_default().push(n);
    }
    let mut groups = best_similarities(dists);
    for (g, mut members) in per_group {
        members.sort_by(|a, b| neighbor_order(a, b));
        let h: f64 = members
            .iter()
            .take(gamma)
            .zip(1..)
            .map(|(n, i)| decay.powi(i) * n.distance)
            .sum();
        groups.get_mut(g).unwrap().0 = -h;
    }
    finish(groups)
}

/// Every kernel with `k = 1..=15`, then adjusted weighting with
/// `gamma = 1..=15` and `decay = 0.5`.
pub fn default_grid() -> Vec<KnnConfig> {
    let mut grid: Vec<KnnConfig> = Kernel::ALL
        .into_iter()
        .flat_map(|kernel| (1..=KnnConfig::MAX_K).map(move |k| KnnConfig::kernel(kernel, k)))
        .collect();
    grid.extend((1..=KnnConfig::MAX_K).map(|gamma| KnnConfig::AdjustedWeighting { gamma, decay: 0.5 }));
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub config: KnnConfig,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    pub cells: Vec<GridCell>,
    pub best: KnnConfig,
}

/// Evaluates every configuration and keeps the one with the highest RR@1.
/// Ties go to the smaller `k`, then to the earlier configuration.
pub fn grid_search<F>(configs: &[KnnConfig], mut evaluate: F) -> Result<GridOutcome>
where
    F: FnMut(&KnnConfig) -> Result<MetricReport>,
{
    let mut cells = Vec::with_capacity(configs.len());
    for config in configs {
        config.validate()?;
        cells.push(GridCell {
            config: *config,
            metrics: evaluate(config)?,
        });
    }
    let best = best_cell(&cells)
        .ok_or_else(|| Error::InvalidKnn("empty search space".into()))?
        .config;
    Ok(GridOutcome { cells, best })
}

fn best_cell(cells: &[GridCell]) -> Option<&GridCell> {
    let mut best: Option<&GridCell> = None;
    for cell in cells {
        best = match best {
            None => Some(cell),
            Some(b) => {
                let better = cell.metrics.rr_at_1 > b.metrics.rr_at_1
                    || (cell.metrics.rr_at_1 == b.metrics.rr_at_1 && cell.config.size() < b.config.size());
                Some(if better { cell } else { b })
            }
        };
    }
    best
}
