//! Query pipeline (staleness filter, filtration, rescoring, ranking),
//! chronological replay and the MRR / RR@k metrics.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{extract_features, FeatureVector, MemberSimilarity, SimilarityRange};
use crate::ingest::Dataset;
use crate::knn::{to_distances, KnnConfig};
use crate::model::{GroupId, GroupStore, Report, Timestamp};
use crate::ranker::{LinearAggregator, TrainingQuery};
use crate::similarity::SimilarityModel;
use crate::{Error, Result};

/// Groups kept by filtration in production.
pub const DEFAULT_FILTRATION: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct MemberScore {
    pub member: String,
    pub similarity: f64,
    pub timestamp: Timestamp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGroup {
    pub group: GroupId,
    /// Every member of the group, in attachment order.
    pub members: Vec<MemberScore>,
}

impl CandidateGroup {
    pub fn max_similarity(&self) -> f64 {
        self.members
            .iter()
            .map(|m| m.similarity)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub query_id: String,
    pub query_time: Timestamp,
    pub groups: Vec<CandidateGroup>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn range(&self) -> Option<SimilarityRange> {
        SimilarityRange::of(
            self.groups
                .iter()
                .flat_map(|g| g.members.iter().map(|m| m.similarity)),
        )
    }

    /// Feature vectors of every candidate group, in candidate order.
    pub fn features(&self) -> Result<Vec<(GroupId, FeatureVector)>> {
        let Some(range) = self.range() else {
            return Ok(Vec::new());
        };
        self.groups
            .iter()
            .map(|g| {
                let members: Vec<MemberSimilarity> = g
                    .members
                    .iter()
                    .map(|m| MemberSimilarity {
                        similarity: m.similarity,
                        timestamp: m.timestamp,
                    })
                    .collect();
                Ok((g.group.clone(), extract_features(self.query_time, &members, range)?))
            })
            .collect()
    }
}

fn member_order(a: &(f64, Timestamp, &str), b: &(f64, Timestamp, &str)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then_with(|| a.2.cmp(b.2))
}

/// Scores the query against every member of every open group and keeps the
/// first `limit` distinct groups met while walking members by descending
/// similarity. `None` keeps every open group.
pub fn filtrate(
    store: &GroupStore,
    query: &Report,
    fast: &dyn SimilarityModel,
    limit: Option<usize>,
) -> CandidateSet {
    let groups: Vec<CandidateGroup> = store
        .open_groups(query.timestamp)
        .into_par_iter()
        .map(|id| {
            let group = store.group(id).expect("open group exists");
            let members = store
                .members(group)
                .map(|r| MemberScore {
                    member: r.id.clone(),
                    similarity: fast.score(query, r),
                    timestamp: r.timestamp,
                })
                .collect();
            CandidateGroup {
                group: id.to_owned(),
                members,
            }
        })
        .collect();

    let kept = match limit {
        Some(n) if n < groups.len() => {
            let mut walk: Vec<(f64, Timestamp, &str, usize)> = groups
                .iter()
                .enumerate()
                .flat_map(|(gi, g)| {
                    g.members
                        .iter()
                        .map(move |m| (m.similarity, m.timestamp, m.member.as_str(), gi))
                })
                .collect();
            walk.sort_by(|a, b| member_order(&(a.0, a.1, a.2), &(b.0, b.1, b.2)));
            let mut order = Vec::with_capacity(n);
            let mut seen = vec![false; groups.len()];
            for &(_, _, _, gi) in &walk {
                if !seen[gi] {
                    seen[gi] = true;
                    order.push(gi);
                    if order.len() == n {
                        break;
                    }
                }
            }
            let mut slots: Vec<Option<CandidateGroup>> = groups.into_iter().map(Some).collect();
            order.into_iter().map(|gi| slots[gi].take().unwrap()).collect()
        }
        _ => groups,
    };
    CandidateSet {
        query_id: query.id.clone(),
        query_time: query.timestamp,
        groups: kept,
    }
}

/// Recomputes every candidate member's similarity with `heavy`.
pub fn rescore(
    candidates: &CandidateSet,
    store: &GroupStore,
    query: &Report,
    heavy: &dyn SimilarityModel,
) -> CandidateSet {
    let groups = candidates
        .groups
        .par_iter()
        .map(|g| CandidateGroup {
            group: g.group.clone(),
            members: g
                .members
                .iter()
                .map(|m| MemberScore {
                    similarity: heavy.score(query, store.report(&m.member).expect("member stored")),
                    ..m.clone()
                })
                .collect(),
        })
        .collect();
    CandidateSet {
        groups,
        ..candidates.clone()
    }
}

/// Fast filtration model plus an optional heavier rescoring model.
pub struct Pipeline<'a> {
    pub fast: &'a dyn SimilarityModel,
    /// `None` ranks with the fast model's similarities.
    pub heavy: Option<&'a dyn SimilarityModel>,
    /// `None` disables filtration.
    pub filtration: Option<usize>,
}

impl<'a> Pipeline<'a> {
    pub fn new(fast: &'a dyn SimilarityModel, heavy: &'a dyn SimilarityModel, filtration: Option<usize>) -> Self {
        let heavy = (heavy.name() != fast.name()).then_some(heavy);
        Pipeline { fast, heavy, filtration }
    }

    pub fn heavy_name(&self) -> &'static str {
        self.heavy.unwrap_or(self.fast).name()
    }

    pub fn candidates(&self, store: &GroupStore, query: &Report) -> CandidateSet {
        let filtered = filtrate(store, query, self.fast, self.filtration);
        match self.heavy {
            Some(heavy) => rescore(&filtered, store, query, heavy),
            None => filtered,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Scorer {
    /// Rank groups by their most similar member.
    Baseline,
    Aggregation(LinearAggregator),
    Knn(KnnConfig),
}

impl Scorer {
    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Baseline => "baseline",
            Scorer::Aggregation(_) => "aggregation",
            Scorer::Knn(_) => "knn",
        }
    }
}

fn sort_groups(scored: &mut [(GroupId, f64, f64)]) {
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(b.2.total_cmp(&a.2))
            .then_with(|| a.0.cmp(&b.0))
    });
}

/// Orders candidate groups best first. Ties on the score go to the group with
/// the larger maximum member similarity, then to the smaller group id.
pub fn rank_groups(candidates: &CandidateSet, scorer: &Scorer) -> Result<Vec<(GroupId, f64)>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    Ok(match scorer {
        Scorer::Baseline => {
            let mut scored: Vec<_> = candidates
                .groups
                .iter()
                .map(|g| {
                    let m = g.max_similarity();
                    (g.group.clone(), m, m)
                })
                .collect();
            sort_groups(&mut scored);
            scored.into_iter().map(|(g, s, _)| (g, s)).collect()
        }
        Scorer::Aggregation(model) => {
            let features = candidates.features()?;
            let mut scored: Vec<_> = features
                .iter()
                .zip(&candidates.groups)
                .map(|((g, f), cg)| (g.clone(), model.score(f), cg.max_similarity()))
                .collect();
            sort_groups(&mut scored);
            scored.into_iter().map(|(g, s, _)| (g, s)).collect()
        }
        Scorer::Knn(config) => {
            let dists = to_distances(candidates.groups.iter().flat_map(|g| {
                g.members
                    .iter()
                    .map(|m| (g.group.clone(), m.member.clone(), m.timestamp, m.similarity))
            }));
            config.rank(&dists)?
        }
    })
}

/// 1-based position of the true group, or absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rank {
    At(usize),
    Absent,
}

impl Rank {
    pub fn reciprocal(self) -> f64 {
        match self {
            Rank::At(r) => 1.0 / r as f64,
            Rank::Absent => 0.0,
        }
    }

    pub fn within(self, k: usize) -> bool {
        matches!(self, Rank::At(r) if r <= k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedAnswer {
    pub query_id: String,
    pub ranking: Vec<(GroupId, f64)>,
    pub truth_rank: Rank,
}

pub fn rank_query(
    candidates: &CandidateSet,
    scorer: &Scorer,
    truth: Option<&str>,
) -> Result<RankedAnswer> {
    let ranking = rank_groups(candidates, scorer)?;
    let truth_rank = truth
        .and_then(|t| ranking.iter().position(|(g, _)| g == t))
        .map_or(Rank::Absent, |p| Rank::At(p + 1));
    Ok(RankedAnswer {
        query_id: candidates.query_id.clone(),
        ranking,
        truth_rank,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "MRR")]
    pub mrr: f64,
    #[serde(rename = "RR@1")]
    pub rr_at_1: f64,
    #[serde(rename = "RR@5")]
    pub rr_at_5: f64,
    #[serde(rename = "RR@10")]
    pub rr_at_10: f64,
    pub query_count: usize,
}

impl MetricReport {
    /// Metrics over every rank; absent ranks contribute zero.
    pub fn from_ranks(ranks: &[Rank]) -> Self {
        let n = ranks.len();
        if n == 0 {
            return MetricReport {
                mrr: 0.0,
                rr_at_1: 0.0,
                rr_at_5: 0.0,
                rr_at_10: 0.0,
                query_count: 0,
            };
        }
        let q = n as f64;
        let hits = |k| ranks.iter().filter(|r| r.within(k)).count() as f64 / q;
        MetricReport {
            mrr: ranks.iter().map(|r| r.reciprocal()).sum::<f64>() / q,
            rr_at_1: hits(1),
            rr_at_5: hits(5),
            rr_at_10: hits(10),
            query_count: n,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplayOptions {
    /// Drop queries whose group did not exist yet from `|Q|`.
    pub exclude_first_in_group: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutcome {
    pub ranks: Vec<Rank>,
    pub report: MetricReport,
    pub first_in_group: usize,
    pub skipped_first_in_group: usize,
}

/// Chronological evaluation: ranks each report against the store, then
/// attaches it to its labeled group before the next one. All scorers share
/// one candidate set per query.
pub fn replay(
    test: &Dataset,
    store: &mut GroupStore,
    pipeline: &Pipeline<'_>,
    scorers: &[Scorer],
    options: ReplayOptions,
) -> Result<Vec<ReplayOutcome>> {
    let mut ranks: Vec<Vec<Rank>> = vec![Vec::with_capacity(test.len()); scorers.len()];
    let mut first_in_group = 0;
    for query in &test.reports {
        let label = query
            .group_label
            .clone()
            .ok_or_else(|| Error::Unlabeled(query.id.clone()))?;
        let is_first = !store.contains_group(&label);
        first_in_group += usize::from(is_first);
        if !(is_first && options.exclude_first_in_group) {
            let candidates = pipeline.candidates(store, query);
            let answers: Vec<Rank> = scorers
                .par_iter()
                .map(|s| rank_query(&candidates, s, Some(&label)).map(|a| a.truth_rank))
                .collect::<Result<_>>()?;
            for (list, r) in ranks.iter_mut().zip(answers) {
                list.push(r);
            }
        }
        store.attach_report(query.clone(), &label)?;
    }
    let skipped = if options.exclude_first_in_group { first_in_group } else { 0 };
    Ok(ranks
        .into_iter()
        .map(|ranks| ReplayOutcome {
            report: MetricReport::from_ranks(&ranks),
            ranks,
            first_in_group,
            skipped_first_in_group: skipped,
        })
        .collect())
}

/// Replays `span` like [`replay`] and records the candidate features of
/// every query for aggregation training.
pub fn training_queries(
    span: &Dataset,
    store: &mut GroupStore,
    pipeline: &Pipeline<'_>,
) -> Result<Vec<TrainingQuery>> {
    let mut out = Vec::with_capacity(span.len());
    for query in &span.reports {
        let label = query
            .group_label
            .clone()
            .ok_or_else(|| Error::Unlabeled(query.id.clone()))?;
        let candidates = pipeline.candidates(store, query);
        out.push(TrainingQuery {
            query_id: query.id.clone(),
            candidates: candidates.features()?,
            truth: label.clone(),
        });
        store.attach_report(query.clone(), &label)?;
    }
    Ok(out)
}

/// Builds a store from labeled spans in order.
pub fn prime_store<'a>(
    spans: impl IntoIterator<Item = &'a Dataset>,
    staleness_days: i64,
) -> Result<GroupStore> {
    let mut store = GroupStore::new(staleness_days);
    for span in spans {
        for r in &span.reports {
            store.attach_labeled(r.clone())?;
        }
    }
    Ok(store)
}

/// Metric document written by evaluation runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDocument {
    pub model: String,
    pub scorer: String,
    #[serde(rename = "N")]
    pub filtration: Option<usize>,
    pub staleness_days: i64,
    #[serde(flatten)]
    pub metrics: MetricReport,
    pub skipped_first_in_group: usize,
    pub first_in_group: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knn: Option<KnnConfig>,
}

impl MetricDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric documents always serialize") + "\n"
    }
}
