use std::collections::{BTreeMap, BTreeSet};

use tracegroup::experiment::{evaluate, train_aggregator, ExperimentConfig, FittedModels};
use tracegroup::harness::{prime_store, replay, ReplayOptions, Scorer};
use tracegroup::ingest::{generate_synthetic, temporal_split, Dataset, SplitSpec, Splits, SyntheticConfig};
use tracegroup::knn::{Kernel, KnnConfig};
use tracegroup::ranker::ModelFile;
use tracegroup::similarity::{SimilarityModel, TfIdfIndex};

fn small() -> SyntheticConfig {
    SyntheticConfig { groups: 60, ..Default::default() }
}

fn splits(seed: u64) -> (Dataset, Splits) {
    let data = generate_synthetic(&small(), seed).unwrap();
    let splits = temporal_split(&data, &SplitSpec::default()).unwrap();
    (data, splits)
}

fn memberships<'a>(reports: impl Iterator<Item = &'a tracegroup::Report>) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in reports {
        out.entry(r.group_label.clone().unwrap()).or_default().insert(r.id.clone());
    }
    out
}

#[test]
fn teacher_forcing_reconstructs_labeled_groups() {
    let (data, splits) = splits(3);
    let models = FittedModels::fit("tfidf", &splits).unwrap();
    let mut store = prime_store([&splits.train_sim, &splits.train_agg, &splits.validation], 62).unwrap();
    replay(&splits.test, &mut store, &models.pipeline(Some(1000)), &[Scorer::Baseline], ReplayOptions::default()).unwrap();
    let stored: BTreeMap<String, BTreeSet<String>> = store
        .groups()
        .map(|g| (g.id.clone(), g.members.iter().cloned().collect()))
        .collect();
    assert_eq!(stored, memberships(data.reports.iter()));
}

#[test]
fn recall_is_monotone_in_k() {
    let (_, splits) = splits(5);
    let models = FittedModels::fit("tfidf", &splits).unwrap();
    let config = ExperimentConfig::default();
    let scorers = [
        Scorer::Baseline,
        Scorer::Knn(KnnConfig::kernel(Kernel::Epanechnikov, 5)),
        Scorer::Knn(KnnConfig::AdjustedWeighting { gamma: 4, decay: 0.5 }),
    ];
    for outcome in evaluate(&splits, &models, &config, &scorers).unwrap() {
        for r in &outcome.ranks {
            let hits: Vec<bool> = (1..=12).map(|k| r.within(k)).collect();
            assert!(hits.windows(2).all(|w| w[0] <= w[1]));
        }
        let m = outcome.report;
        assert!(m.rr_at_1 <= m.rr_at_5 && m.rr_at_5 <= m.rr_at_10);
        assert!(m.mrr >= m.rr_at_1 && m.mrr <= m.rr_at_10 + 1e-12 + (1.0 - m.rr_at_10) / 11.0);
    }
}

#[test]
fn saved_artifacts_reproduce_results() {
    let (_, splits) = splits(8);
    let dir = tempfile::tempdir().unwrap();
    splits.save(dir.path()).unwrap();
    let reloaded = Splits::load(dir.path()).unwrap();
    for (a, b) in reloaded.spans().into_iter().zip(splits.spans()) {
        assert_eq!(a.reports, b.reports);
    }

    let config = ExperimentConfig::default();
    let models = FittedModels::fit("tfidf", &splits).unwrap();
    let aggregator = train_aggregator(&splits, &models, &config).unwrap();
    let path = dir.path().join("model.json");
    ModelFile::new("tfidf", &aggregator).save(&path).unwrap();
    let loaded = ModelFile::load(&path).unwrap().aggregator_for("tfidf").unwrap();

    let reloaded_models = FittedModels::fit("tfidf", &reloaded).unwrap();
    let a = evaluate(&splits, &models, &config, &[Scorer::Aggregation(aggregator)]).unwrap();
    let b = evaluate(&reloaded, &reloaded_models, &config, &[Scorer::Aggregation(loaded)]).unwrap();
    assert_eq!(a[0].ranks, b[0].ranks);
    assert_eq!(a[0].report, b[0].report);
}

#[test]
fn exclusion_flag_only_shrinks_query_count() {
    let (_, splits) = splits(11);
    let models = FittedModels::fit("tfidf", &splits).unwrap();
    let kept = evaluate(&splits, &models, &ExperimentConfig::default(), &[Scorer::Baseline]).unwrap();
    let config = ExperimentConfig { exclude_first_in_group: true, ..Default::default() };
    let dropped = evaluate(&splits, &models, &config, &[Scorer::Baseline]).unwrap();
    assert_eq!(kept[0].first_in_group, dropped[0].skipped_first_in_group);
    assert_eq!(kept[0].skipped_first_in_group, 0);
    assert_eq!(
        dropped[0].report.query_count + dropped[0].skipped_first_in_group,
        kept[0].report.query_count
    );
    // Excluded queries contribute zero, so removing them can only raise the mean.
    assert!(dropped[0].report.mrr >= kept[0].report.mrr);
}

/// Pearson correlation between member age and TF-IDF similarity to the
/// group's newest report, pooled over groups.
fn age_similarity_correlation(config: &SyntheticConfig, seed: u64) -> f64 {
    let data = generate_synthetic(config, seed).unwrap();
    let tfidf = TfIdfIndex::fitted(&data.reports);
    let mut by_group: BTreeMap<&str, Vec<&tracegroup::Report>> = BTreeMap::new();
    for r in &data.reports {
        by_group.entry(r.group_label.as_deref().unwrap()).or_default().push(r);
    }
    let mut pairs = Vec::new();
    for members in by_group.values() {
        let newest = members.last().unwrap();
        let self_score = tfidf.score(newest, newest);
        for m in &members[..members.len() - 1] {
            let age = (newest.timestamp - m.timestamp) as f64;
            pairs.push((age, tfidf.score(newest, m) / self_score));
        }
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn drift_is_the_only_source_of_recency_signal() {
    let base = SyntheticConfig { groups: 120, ..Default::default() };
    let null = SyntheticConfig { drift_rate: 0.0, ..base.clone() };
    let drifting = SyntheticConfig { drift_rate: 0.3, ..base };
    let r_null = age_similarity_correlation(&null, 17);
    let r_drift = age_similarity_correlation(&drifting, 17);
    assert!(r_null.abs() < 0.1, "null generator correlation {r_null}");
    assert!(r_drift < -0.2, "drifting generator correlation {r_drift}");
}

#[test]
fn scorers_agree_on_single_candidate_group() {
    let (_, splits) = splits(13);
    let models = FittedModels::fit("tfidf", &splits).unwrap();
    let config = ExperimentConfig { filtration: Some(1), ..Default::default() };
    let aggregator = train_aggregator(&splits, &models, &ExperimentConfig::default()).unwrap();
    let scorers = [
        Scorer::Baseline,
        Scorer::Aggregation(aggregator),
        Scorer::Knn(KnnConfig::kernel(Kernel::Gaussian, 7)),
        Scorer::Knn(KnnConfig::AdjustedWeighting { gamma: 2, decay: 0.5 }),
    ];
    let outcomes = evaluate(&splits, &models, &config, &scorers).unwrap();
    for o in &outcomes[1..] {
        assert_eq!(o.ranks, outcomes[0].ranks);
    }
}
