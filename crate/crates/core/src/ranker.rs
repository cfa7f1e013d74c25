//! The linear aggregation model: a weighted sum of standardized features,
//! trained with the pairwise RankNet loss and Adam.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{feature_names, FeatureScaler, FeatureVector, FEATURE_COUNT};
use crate::model::GroupId;
use crate::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Coupled L2 coefficient added to the gradient as `weight_decay * w`.
    pub weight_decay: f64,
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Initial weights are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            negatives: 10,
            epochs: 20,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearAggregator {
    pub weights: Vec<f64>,
    pub scaler: FeatureScaler,
    pub training: TrainingConfig,
}

impl LinearAggregator {
    /// Weight 1 on the first-maximum feature and an identity scaler, which
    /// reproduces the nearest-report baseline.
    pub fn first_max_only() -> Self {
        let mut weights = vec![0.0; FEATURE_COUNT];
        weights[0] = 1.0;
        LinearAggregator {
            weights,
            scaler: FeatureScaler::identity(),
            training: TrainingConfig::default(),
        }
    }

    pub fn score(&self, x: &FeatureVector) -> f64 {
        dot(&self.weights, &self.scaler.transform(x).values)
    }

    /// One row per feature, in feature order.
    pub fn coefficients(&self) -> Vec<Coefficient> {
        feature_names()
            .into_iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(i, (name, &weight))| Coefficient {
                index: i + 1,
                name,
                weight,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub index: usize,
    pub name: String,
    pub weight: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// RankNet loss and its gradient with respect to `(s_pos, s_neg)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub d_pos: f64,
    pub d_neg: f64,
}

pub fn ranknet_loss(s_pos: f64, s_neg: f64) -> PairLoss {
    let margin = s_pos - s_neg;
    let g = sigmoid(-margin);
    PairLoss {
        loss: softplus(-margin),
        d_pos: -g,
        d_neg: g,
    }
}

/// Summed RankNet loss over `(positive, negative)` pairs of already scaled
/// features plus `weight_decay / 2 * |w|^2`, and its gradient in `w`.
pub fn pairwise_objective(
    weights: &[f64],
    pairs: &[(FeatureVector, FeatureVector)],
    weight_decay: f64,
) -> (f64, Vec<f64>) {
    let mut loss = 0.5 * weight_decay * dot(weights, weights);
    let mut grad: Vec<f64> = weights.iter().map(|w| weight_decay * w).collect();
    for (pos, neg) in pairs {
        let pl = ranknet_loss(dot(weights, &pos.values), dot(weights, &neg.values));
        loss += pl.loss;
        for (c, g) in grad.iter_mut().enumerate() {
            *g += pl.d_pos * pos.values[c] + pl.d_neg * neg.values[c];
        }
    }
    (loss, grad)
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(lr: f64, dim: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Candidate groups of one training query with their raw features.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingQuery {
    pub query_id: String,
    pub candidates: Vec<(GroupId, FeatureVector)>,
    pub truth: GroupId,
}

impl TrainingQuery {
    fn truth_index(&self) -> Option<usize> {
        self.candidates.iter().position(|(g, _)| *g == self.truth)
    }
}

/// Observer for per-update training loss, used by tests and diagnostics.
pub trait TrainingObserver {
    fn after_update(&mut self, _weights: &[f64]) {}
}

impl TrainingObserver for () {}

pub fn train(config: &TrainingConfig, queries: &[TrainingQuery]) -> Result<LinearAggregator> {
    train_observed(config, queries, &mut ())
}

/// Fits the scaler on every candidate feature vector, then runs `epochs`
/// passes of per-pair Adam updates. Each pass visits trainable queries in a
/// seeded shuffled order and draws up to `negatives` non-truth candidates
/// per query without replacement.
pub fn train_observed(
    config: &TrainingConfig,
    queries: &[TrainingQuery],
    observer: &mut dyn TrainingObserver,
) -> Result<LinearAggregator> {
    let trainable: Vec<(&TrainingQuery, usize)> = queries
        .iter()
        .filter_map(|q| q.truth_index().map(|i| (q, i)))
        .collect();
    if trainable.is_empty() {
        return Err(Error::NoTrainableQuery);
    }
    let matrix: Vec<FeatureVector> = trainable
        .iter()
        .flat_map(|(q, _)| q.candidates.iter().map(|(_, f)| *f))
        .collect();
    let scaler = FeatureScaler::fit(&matrix);
    let scaled: Vec<Vec<FeatureVector>> = trainable
        .iter()
        .map(|(q, _)| q.candidates.iter().map(|(_, f)| scaler.transform(f)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights: Vec<f64> = (0..FEATURE_COUNT)
        .map(|_| rng.gen_range(-config.init_scale..=config.init_scale))
        .collect();
    let mut adam = Adam::new(config.learning_rate, FEATURE_COUNT);
    let mut order: Vec<usize> = (0..trainable.len()).collect();
    let mut grad = vec![0.0; FEATURE_COUNT];

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &qi in &order {
            let truth = trainable[qi].1;
            let feats = &scaled[qi];
            let pool: Vec<usize> = (0..feats.len()).filter(|&i| i != truth).collect();
            let amount = config.negatives.min(pool.len());
            if amount == 0 {
                continue;
            }
            let pos = &feats[truth].values;
            for pick in index::sample(&mut rng, pool.len(), amount) {
                let neg = &feats[pool[pick]].values;
                let pl = ranknet_loss(dot(&weights, pos), dot(&weights, neg));
                for c in 0..FEATURE_COUNT {
                    grad[c] = pl.d_pos * pos[c] + pl.d_neg * neg[c] + config.weight_decay * weights[c];
                }
                adam.step(&mut weights, &grad);
            }
            observer.after_update(&weights);
        }
    }
    Ok(LinearAggregator {
        weights,
        scaler,
        training: config.clone(),
    })
}

/// On-disk form of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub similarity: String,
    pub weights: Vec<f64>,
    pub scaler: FeatureScaler,
    pub training: TrainingConfig,
}

impl ModelFile {
    pub fn new(similarity: &str, model: &LinearAggregator) -> Self {
        ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            similarity: similarity.to_owned(),
            weights: model.weights.clone(),
            scaler: model.scaler.clone(),
            training: model.training.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model files always serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if v.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: v.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        let dims = [file.weights.len(), file.scaler.mean.len(), file.scaler.std.len()];
        if dims.iter().any(|&d| d != FEATURE_COUNT) {
            return Err(Error::Model(format!(
                "expected {FEATURE_COUNT} weights and scaler entries, got {dims:?}"
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Refuses to score with a similarity model other than the one the
    /// features were trained on.
    pub fn aggregator_for(&self, similarity: &str) -> Result<LinearAggregator> {
        if self.similarity != similarity {
            return Err(Error::ModelMismatch {
                trained: self.similarity.clone(),
                requested: similarity.to_owned(),
            });
        }
        Ok(LinearAggregator {
            weights: self.weights.clone(),
            scaler: self.scaler.clone(),
            training: self.training.clone(),
        })
    }
}
