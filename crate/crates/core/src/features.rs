//! The 28 per-(query, group) aggregation features and their standard scaler.
//!
//! | index | feature |
//! |-------|---------|
//! | 1     | first maximum (largest member similarity) |
//! | 2-5   | max, min, mean, max − min of member time weights |
//! | 6-15  | histogram of member time weights, 10 bins over [0, 1] |
//! | 16    | time weight of the first-maximum member |
//! | 17-28 | time-weighted histogram of normalized similarities, 12 bins |

use serde::{Deserialize, Serialize};

use crate::model::Timestamp;
use crate::{Error, Result};

pub const FEATURE_COUNT: usize = 28;
pub const WEIGHT_BINS: usize = 10;
pub const SIMILARITY_BINS: usize = 12;

/// Zero-based offsets into [`FeatureVector::values`].
pub mod idx {
    pub const FIRST_MAX: usize = 0;
    pub const MAX_WEIGHT: usize = 1;
    pub const MIN_WEIGHT: usize = 2;
    pub const MEAN_WEIGHT: usize = 3;
    pub const WEIGHT_SPREAD: usize = 4;
    pub const WEIGHT_HIST: usize = 5;
    pub const FIRST_MAX_WEIGHT: usize = 15;
    pub const SIM_HIST: usize = 16;
}

/// Recency weight `1 / (ln(|dt| + 1) + 1)` with `dt` in seconds.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct TimeWeight(f64);

impl TimeWeight {
    pub fn from_gap(seconds: f64) -> Self {
        TimeWeight(1.0 / (seconds.abs().ln_1p() + 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn time_weight(t_query: Timestamp, t_member: Timestamp) -> TimeWeight {
    TimeWeight::from_gap(t_query.abs_diff(t_member) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_COUNT],
}

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector {
            values: [0.0; FEATURE_COUNT],
        }
    }

    pub fn first_max(&self) -> f64 {
        self.values[idx::FIRST_MAX]
    }

    pub fn weight_histogram(&self) -> &[f64] {
        &self.values[idx::WEIGHT_HIST..idx::WEIGHT_HIST + WEIGHT_BINS]
    }

    pub fn similarity_histogram(&self) -> &[f64] {
        &self.values[idx::SIM_HIST..idx::SIM_HIST + SIMILARITY_BINS]
    }
}

/// Human-readable names in feature order.
pub fn feature_names() -> Vec<String> {
    let mut names = vec![
        "first_maximum".to_owned(),
        "max_weight".to_owned(),
        "min_weight".to_owned(),
        "mean_weight".to_owned(),
        "max_minus_min_weight".to_owned(),
    ];
    names.extend((1..=WEIGHT_BINS).map(|b| format!("weights_histogram_bin_{b}")));
    names.push("first_maximum_weight".to_owned());
    names.extend((1..=SIMILARITY_BINS).map(|b| format!("weighted_similarity_histogram_bin_{b}")));
    names
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub index: usize,
    pub name: String,
}

/// One-based feature schema, shipped next to trained models.
pub fn feature_schema() -> Vec<SchemaEntry> {
    feature_names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| SchemaEntry { index: i + 1, name })
        .collect()
}

/// One group member as seen from the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemberSimilarity {
    pub similarity: f64,
    pub timestamp: Timestamp,
}

/// Min-max normalization constants over every candidate member of every
/// candidate group of one query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityRange {
    pub min: f64,
    pub max: f64,
}

impl SimilarityRange {
    pub fn of(similarities: impl IntoIterator<Item = f64>) -> Option<Self> {
        similarities.into_iter().fold(None, |acc, s| {
            Some(match acc {
                None => SimilarityRange { min: s, max: s },
                Some(r) => SimilarityRange {
                    min: r.min.min(s),
                    max: r.max.max(s),
                },
            })
        })
    }

    /// Maps into [0, 1]; a degenerate range maps everything to 1.
    pub fn normalize(&self, s: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            ((s - self.min) / span).clamp(0.0, 1.0)
        } else {
            1.0
        }
    }
}

/// Uniform bins over [0, 1]; interior edges go to the upper bin and 1.0 lands
/// in the last bin.
fn bin(value: f64, bins: usize) -> usize {
    ((value * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Builds the feature vector for one candidate group.
pub fn extract_features(
    query_time: Timestamp,
    members: &[MemberSimilarity],
    range: SimilarityRange,
) -> Result<FeatureVector> {
    if members.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let weights: Vec<f64> = members
        .iter()
        .map(|m| time_weight(query_time, m.timestamp).value())
        .collect();
    let sims: Vec<f64> = members.iter().map(|m| m.similarity).collect();
    Ok(from_weights(&sims, &weights, range))
}

fn from_weights(sims: &[f64], weights: &[f64], range: SimilarityRange) -> FeatureVector {
    let mut best = 0;
    for i in 1..sims.len() {
        if sims[i] > sims[best] || (sims[i] == sims[best] && weights[i] > weights[best]) {
            best = i;
        }
    }

    let mut f = FeatureVector::zeros();
    let v = &mut f.values;
    let max_w = weights.iter().copied().fold(f64::MIN, f64::max);
    let min_w = weights.iter().copied().fold(f64::MAX, f64::min);
    v[idx::FIRST_MAX] = sims[best];
    v[idx::MAX_WEIGHT] = max_w;
    v[idx::MIN_WEIGHT] = min_w;
    v[idx::MEAN_WEIGHT] = weights.iter().sum::<f64>() / weights.len() as f64;
    v[idx::WEIGHT_SPREAD] = max_w - min_w;
    v[idx::FIRST_MAX_WEIGHT] = weights[best];
    for (&s, &w) in sims.iter().zip(weights) {
        v[idx::WEIGHT_HIST + bin(w, WEIGHT_BINS)] += 1.0;
        v[idx::SIM_HIST + bin(range.normalize(s), SIMILARITY_BINS)] += w;
    }
    f
}

/// Columnwise standardization fitted on the aggregation training matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity() -> Self {
        FeatureScaler {
            mean: vec![0.0; FEATURE_COUNT],
            std: vec![1.0; FEATURE_COUNT],
        }
    }

    /// Population mean and standard deviation per column. Constant columns
    /// get `std = 1` and their exact value as mean, so they scale to 0.
    pub fn fit(matrix: &[FeatureVector]) -> Self {
        if matrix.is_empty() {
            return Self::identity();
        }
        let n = matrix.len() as f64;
        let mut scaler = Self::identity();
        for c in 0..FEATURE_COUNT {
            let col = matrix.iter().map(|x| x.values[c]);
            let first = matrix[0].values[c];
            if col.clone().all(|x| x == first) {
                scaler.mean[c] = first;
                continue;
            }
            let mean = col.clone().sum::<f64>() / n;
            let var = col.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            scaler.mean[c] = mean;
            scaler.std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        scaler
    }

    pub fn transform(&self, x: &FeatureVector) -> FeatureVector {
        let mut out = *x;
        for (c, v) in out.values.iter_mut().enumerate() {
            *v = (*v - self.mean[c]) / self.std[c];
        }
        out
    }
}
