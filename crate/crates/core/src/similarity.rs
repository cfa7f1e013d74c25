//! Pairwise stack-trace similarity models.
//!
//! Every model implements [`SimilarityModel`]: `fit` on a corpus, then
//! `score(query, candidate)`. Fitted models are immutable and may be shared
//! across scoring threads.

use std::collections::HashMap;

use crate::model::Report;
use crate::{Error, Result};

pub trait SimilarityModel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Fits corpus statistics. Models without statistics ignore the corpus.
    fn fit(&mut self, _corpus: &[Report]) {}

    /// Non-negative similarity of `candidate` to `query`.
    fn score(&self, query: &Report, candidate: &Report) -> f64;
}

pub const MODEL_NAMES: [&str; 5] = ["tfidf", "modani-edit", "modani-lcs", "modani-prefix", "durfex"];

/// Builds an unfitted model from its CLI name.
pub fn by_name(name: &str) -> Result<Box<dyn SimilarityModel>> {
    Ok(match name {
        "tfidf" => Box::new(TfIdfIndex::default()),
        "modani-edit" => Box::new(ModaniEdit),
        "modani-lcs" => Box::new(ModaniLcs),
        "modani-prefix" => Box::new(ModaniPrefix),
        "durfex" => Box::new(Durfex::default()),
        other => return Err(Error::UnknownModel(other.to_owned())),
    })
}

/// Lerch & Mezini TF-IDF: `sum over distinct t in q of tf_d(t) * idf(t)^2`
/// with raw counts for `tf` and smoothed `idf(t) = ln((N+1)/(df(t)+1)) + 1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfIdfIndex {
    doc_count: usize,
    doc_freq: HashMap<String, usize>,
}

impl TfIdfIndex {
    pub fn fitted(corpus: &[Report]) -> Self {
        let mut index = TfIdfIndex::default();
        index.fit(corpus);
        index
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn doc_freq(&self, token: &str) -> usize {
        self.doc_freq.get(token).copied().unwrap_or(0)
    }

    pub fn idf(&self, token: &str) -> f64 {
        let n = self.doc_count as f64;
        ((n + 1.0) / (self.doc_freq(token) as f64 + 1.0)).ln() + 1.0
    }
}

impl SimilarityModel for TfIdfIndex {
    fn name(&self) -> &'static str {
        "tfidf"
    }

    fn fit(&mut self, corpus: &[Report]) {
        self.doc_count = corpus.len();
        self.doc_freq.clear();
        for report in corpus {
            let mut distinct: Vec<&str> = report.tokens().collect();
            distinct.sort_unstable();
            distinct.dedup();
            for t in distinct {
                *self.doc_freq.entry(t.to_owned()).or_default() += 1;
            }
        }
    }

    fn score(&self, query: &Report, candidate: &Report) -> f64 {
        let mut total = 0.0;
        for (i, frame) in query.frames.iter().enumerate() {
            if query.frames[..i].contains(frame) {
                continue;
            }
            let tf = candidate.frames.iter().filter(|f| *f == frame).count();
            if tf > 0 {
                let idf = self.idf(frame.as_str());
                total += tf as f64 * idf * idf;
            }
        }
        total
    }
}

/// Levenshtein distance with unit costs over arbitrary symbols.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn common_prefix_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn longest(q: &Report, d: &Report) -> f64 {
    q.frames.len().max(d.frames.len()).max(1) as f64
}

/// `1 - levenshtein / max(|q|, |d|)` over whole-frame symbols.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModaniEdit;

impl SimilarityModel for ModaniEdit {
    fn name(&self) -> &'static str {
        "modani-edit"
    }

    fn score(&self, q: &Report, d: &Report) -> f64 {
        1.0 - levenshtein(&q.frames, &d.frames) as f64 / longest(q, d)
    }
}

/// `|LCS| / max(|q|, |d|)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModaniLcs;

impl SimilarityModel for ModaniLcs {
    fn name(&self) -> &'static str {
        "modani-lcs"
    }

    fn score(&self, q: &Report, d: &Report) -> f64 {
        lcs_len(&q.frames, &d.frames) as f64 / longest(q, d)
    }
}

/// Common prefix from the innermost frame, over `max(|q|, |d|)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModaniPrefix;

impl SimilarityModel for ModaniPrefix {
    fn name(&self) -> &'static str {
        "modani-prefix"
    }

    fn score(&self, q: &Report, d: &Report) -> f64 {
        common_prefix_len(&q.frames, &d.frames) as f64 / longest(q, d)
    }
}

/// Package part of a frame token: everything before the class and method
/// components. Tokens with fewer than three components are their own package.
pub fn package_of(token: &str) -> &str {
    let mut cut = token.rsplitn(3, '.');
    let (_method, _class) = (cut.next(), cut.next());
    cut.next().unwrap_or(token)
}

/// DURFEX: frames mapped to packages, consecutive repeats collapsed, then
/// cosine similarity over the counts of all n-grams with `1 <= n <= max_n`.
#[derive(Clone, Copy, Debug)]
pub struct Durfex {
    pub max_n: usize,
}

impl Default for Durfex {
    fn default() -> Self {
        Durfex { max_n: 2 }
    }
}

impl Durfex {
    fn ngrams<'a>(&self, report: &'a Report) -> HashMap<Vec<&'a str>, f64> {
        let mut packages: Vec<&str> = report.tokens().map(package_of).collect();
        packages.dedup();
        let mut counts = HashMap::new();
        for n in 1..=self.max_n.max(1) {
            for w in packages.windows(n) {
                *counts.entry(w.to_vec()).or_insert(0.0) += 1.0;
            }
        }
        counts
    }
}

impl SimilarityModel for Durfex {
    fn name(&self) -> &'static str {
        "durfex"
    }

    fn score(&self, q: &Report, d: &Report) -> f64 {
        let a = self.ngrams(q);
        let b = self.ngrams(d);
        let norm = |m: &HashMap<Vec<&str>, f64>| {
            let mut v: Vec<f64> = m.values().copied().collect();
            v.sort_by(f64::total_cmp);
            v.iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        let (na, nb) = (norm(&a), norm(&b));
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let mut products: Vec<f64> = a
            .iter()
            .filter_map(|(k, x)| b.get(k).map(|y| x * y))
            .collect();
        // fixed summation order keeps the score independent of hash order
        products.sort_by(f64::total_cmp);
        (products.iter().sum::<f64>() / (na * nb)).min(1.0)
    }
}
