//! End-to-end runs over a chronological split: fit similarity models on
//! `train_sim`, train the aggregator on `train_agg`, tune k-NN on
//! `validation`, evaluate on `test`.

use serde::{Deserialize, Serialize};

use crate::harness::{
    prime_store, replay, training_queries, Pipeline, ReplayOptions, ReplayOutcome, Scorer,
    DEFAULT_FILTRATION,
};
use crate::ingest::Splits;
use crate::knn::{grid_search, GridOutcome, KnnConfig};
use crate::model::DEFAULT_STALENESS_DAYS;
use crate::ranker::{train, LinearAggregator, TrainingConfig, TrainingQuery};
use crate::similarity::{by_name, SimilarityModel, TfIdfIndex};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub similarity: String,
    pub filtration: Option<usize>,
    pub staleness_days: i64,
    pub training: TrainingConfig,
    pub exclude_first_in_group: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            similarity: "tfidf".into(),
            filtration: Some(DEFAULT_FILTRATION),
            staleness_days: DEFAULT_STALENESS_DAYS,
            training: TrainingConfig::default(),
            exclude_first_in_group: false,
        }
    }
}

impl ExperimentConfig {
    fn replay_options(&self) -> ReplayOptions {
        ReplayOptions {
            exclude_first_in_group: self.exclude_first_in_group,
        }
    }
}

/// TF-IDF for filtration plus the ranking model, both fitted on `train_sim`
/// and frozen afterwards.
pub struct FittedModels {
    pub fast: TfIdfIndex,
    pub heavy: Box<dyn SimilarityModel>,
}

impl FittedModels {
    pub fn fit(similarity: &str, splits: &Splits) -> Result<Self> {
        let corpus = &splits.train_sim.reports;
        let mut heavy = by_name(similarity)?;
        heavy.fit(corpus);
        Ok(FittedModels {
            fast: TfIdfIndex::fitted(corpus),
            heavy,
        })
    }

    pub fn pipeline(&self, filtration: Option<usize>) -> Pipeline<'_> {
        Pipeline::new(&self.fast, self.heavy.as_ref(), filtration)
    }
}

/// Candidate features for every `train_agg` query, replayed over a store
/// primed with `train_sim`.
pub fn aggregation_queries(
    splits: &Splits,
    models: &FittedModels,
    config: &ExperimentConfig,
) -> Result<Vec<TrainingQuery>> {
    let mut store = prime_store([&splits.train_sim], config.staleness_days)?;
    training_queries(&splits.train_agg, &mut store, &models.pipeline(config.filtration))
}

pub fn train_aggregator(
    splits: &Splits,
    models: &FittedModels,
    config: &ExperimentConfig,
) -> Result<LinearAggregator> {
    let queries = aggregation_queries(splits, models, config)?;
    train(&config.training, &queries)
}

/// Replays `test` over a store holding every earlier span.
pub fn evaluate(
    splits: &Splits,
    models: &FittedModels,
    config: &ExperimentConfig,
    scorers: &[Scorer],
) -> Result<Vec<ReplayOutcome>> {
    let mut store = prime_store(
        [&splits.train_sim, &splits.train_agg, &splits.validation],
        config.staleness_days,
    )?;
    replay(
        &splits.test,
        &mut store,
        &models.pipeline(config.filtration),
        scorers,
        config.replay_options(),
    )
}

/// Scores every k-NN configuration on `validation` in a single replay.
pub fn knn_grid(
    splits: &Splits,
    models: &FittedModels,
    config: &ExperimentConfig,
    configs: &[KnnConfig],
) -> Result<GridOutcome> {
    let mut store = prime_store([&splits.train_sim, &splits.train_agg], config.staleness_days)?;
    let scorers: Vec<Scorer> = configs.iter().copied().map(Scorer::Knn).collect();
    let outcomes = replay(
        &splits.validation,
        &mut store,
        &models.pipeline(config.filtration),
        &scorers,
        config.replay_options(),
    )?;
    let mut reports = outcomes.into_iter().map(|o| o.report);
    grid_search(configs, |_| Ok(reports.next().expect("one outcome per config")))
}
