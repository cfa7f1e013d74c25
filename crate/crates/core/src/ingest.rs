//! Dataset files, chronological splits and the synthetic report stream.
//!
//! Datasets are line-delimited JSON, one report per line:
//!
//! ```text
//! {"id":"r1","timestamp":1600000000,"frames":["a.b.C.m","a.b.D.n"],"group_id":"g7"}
//! ```
//!
//! `group_id` is optional but must be present on every line or on none.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Report, Timestamp, SECONDS_PER_DAY};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    /// Sorted by timestamp; ties keep input order.
    pub reports: Vec<Report>,
}

impl Dataset {
    /// Sorts `reports` by timestamp (stable) and checks label consistency.
    pub fn new(name: impl Into<String>, mut reports: Vec<Report>) -> Result<Self> {
        reports.sort_by_key(|r| r.timestamp);
        if let Some(first) = reports.first() {
            let labeled = first.group_label.is_some();
            if let Some(bad) = reports.iter().find(|r| r.group_label.is_some() != labeled) {
                return Err(Error::Unlabeled(format!(
                    "{} (dataset mixes labeled and unlabeled reports)",
                    bad.id
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            reports,
        })
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.reports.iter().all(|r| r.group_label.is_some())
    }

    /// Serializes to the report-line format.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            out.push_str(&report_to_line(r));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_lines().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

pub fn report_to_line(report: &Report) -> String {
    serde_json::to_string(report).expect("reports always serialize")
}

/// Parses one report line.
pub fn parse_report_line(line: &str) -> std::result::Result<Report, String> {
    let report: Report = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if report.frames.is_empty() {
        return Err(format!("report `{}` has an empty frame list", report.id));
    }
    Ok(report)
}

/// Reads a report-line file. Blank lines are skipped; errors name the
/// 1-based line number.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_dataset(BufReader::new(file), name, path)
}

pub fn read_dataset(reader: impl BufRead, name: String, path: &Path) -> Result<Dataset> {
    let mut reports = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut labeled = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: idx + 1,
            message,
        };
        let report = parse_report_line(&line).map_err(parse_err)?;
        if !seen.insert(report.id.clone()) {
            return Err(parse_err(format!("duplicate report id `{}`", report.id)));
        }
        let has_label = report.group_label.is_some();
        if *labeled.get_or_insert(has_label) != has_label {
            return Err(parse_err(
                "group_id must be present on every line or on none".into(),
            ));
        }
        reports.push(report);
    }
    Dataset::new(name, reports)
}

/// Chronological split proportions. Train is further divided by
/// `sim_agg_ratio` into the span used to fit similarity models and the span
/// used to train the aggregation model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub sim_agg_ratio: (u32, u32),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            validation_fraction: 0.1,
            test_fraction: 0.1,
            sim_agg_ratio: (9, 1),
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [
            self.train_fraction,
            self.validation_fraction,
            self.test_fraction,
        ];
        if fr.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::InvalidSplit(format!(
                "fractions must be positive, got {fr:?}"
            )));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!(
                "fractions must sum to 1, got {fr:?}"
            )));
        }
        if self.sim_agg_ratio.0 == 0 || self.sim_agg_ratio.1 == 0 {
            return Err(Error::InvalidSplit("ratio components must be positive".into()));
        }
        Ok(())
    }

    /// Report counts of (train_sim, train_agg, validation, test) for a stream
    /// of `n` reports.
    pub fn counts(&self, n: usize) -> Result<[usize; 4]> {
        self.validate()?;
        let train = (n as f64 * self.train_fraction).round() as usize;
        let validation = (n as f64 * self.validation_fraction).round() as usize;
        let test = n
            .checked_sub(train + validation)
            .ok_or_else(|| Error::InvalidSplit(format!("{n} reports cannot be split")))?;
        let (a, b) = self.sim_agg_ratio;
        let sim = train * a as usize / (a + b) as usize;
        let counts = [sim, train - sim, validation, test];
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            let name = ["train_sim", "train_agg", "validation", "test"][i];
            return Err(Error::InvalidSplit(format!(
                "span {name} would be empty for {n} reports"
            )));
        }
        Ok(counts)
    }
}

/// The four contiguous spans of a chronological split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train_sim: Dataset,
    pub train_agg: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub const FILE_NAMES: [&'static str; 4] = [
        "train_sim.jsonl",
        "train_agg.jsonl",
        "validation.jsonl",
        "test.jsonl",
    ];

    pub fn spans(&self) -> [&Dataset; 4] {
        [&self.train_sim, &self.train_agg, &self.validation, &self.test]
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (span, file) in self.spans().into_iter().zip(Self::FILE_NAMES) {
            span.save(dir.join(file))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let [a, b, c, d] = Self::FILE_NAMES.map(|f| load_dataset(dir.join(f)));
        Ok(Splits {
            train_sim: a?,
            train_agg: b?,
            validation: c?,
            test: d?,
        })
    }
}

/// Cuts a time-sorted dataset into four contiguous spans by report count.
pub fn temporal_split(data: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let [sim, agg, val, _] = spec.counts(data.len())?;
    let r = &data.reports;
    let span = |suffix: &str, lo: usize, hi: usize| Dataset {
        name: format!("{}.{suffix}", data.name),
        reports: r[lo..hi].to_vec(),
    };
    Ok(Splits {
        train_sim: span("train_sim", 0, sim),
        train_agg: span("train_agg", sim, sim + agg),
        validation: span("validation", sim + agg, sim + agg + val),
        test: span("test", sim + agg + val, r.len()),
    })
}

/// Parameters of the synthetic report stream.
///
/// Groups come in families that share a base frame skeleton; siblings differ
/// in `family_divergence` frames and are active in staggered bursts, so an
/// older quiet sibling is usually still open when the next one starts
/// receiving reports. With the defaults siblings start from the same
/// skeleton, like a crash that resurfaces as a new group after a fix. Each
/// report copies its group's skeleton with every frame replaced by a random token with probability `mutation_rate`; with
/// probability `drift_rate` a replacement also sticks in the skeleton, so the
/// group drifts and its recent members look more like incoming reports than
/// its old ones. Setting `drift_rate = 0` removes the recency signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub groups: usize,
    pub family_size: usize,
    pub min_reports: usize,
    pub max_reports: usize,
    pub frames_per_report: usize,
    pub vocab_size: usize,
    pub packages: usize,
    pub family_divergence: usize,
    pub mutation_rate: f64,
    pub drift_rate: f64,
    pub start: Timestamp,
    pub span_days: i64,
    pub burst_days: i64,
    pub sibling_gap_days: (i64, i64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            groups: 240,
            family_size: 3,
            min_reports: 4,
            max_reports: 16,
            frames_per_report: 12,
            vocab_size: 800,
            packages: 40,
            family_divergence: 0,
            mutation_rate: 0.15,
            drift_rate: 0.1,
            start: 1_600_000_000,
            span_days: 365,
            burst_days: 14,
            sibling_gap_days: (20, 45),
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidGenerator(m.to_owned()));
        if self.groups == 0 {
            return bad("group count must be positive");
        }
        if self.vocab_size == 0 || self.packages == 0 {
            return bad("vocabulary and package counts must be positive");
        }
        if self.family_size == 0 {
            return bad("family size must be positive");
        }
        if self.frames_per_report == 0 {
            return bad("frames per report must be positive");
        }
        if self.min_reports == 0 || self.min_reports > self.max_reports {
            return bad("reports per group must satisfy 1 <= min <= max");
        }
        if self.family_divergence > self.frames_per_report {
            return bad("family divergence exceeds the frame count");
        }
        for (name, p) in [("mutation", self.mutation_rate), ("drift", self.drift_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidGenerator(format!(
                    "{name} rate must lie in [0, 1], got {p}"
                )));
            }
        }
        if self.span_days < 0 || self.burst_days < 0 {
            return bad("time spans must be non-negative");
        }
        let (lo, hi) = self.sibling_gap_days;
        if lo < 0 || lo > hi {
            return bad("sibling gap must satisfy 0 <= min <= max");
        }
        Ok(())
    }

    fn token(&self, i: usize) -> String {
        let pkg = i % self.packages;
        let class = (i / self.packages) % 8;
        format!("com.vendor.p{pkg}.C{class}.m{i}")
    }
}

/// Generates a labeled synthetic dataset. Identical seeds give identical
/// datasets.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..config.vocab_size).map(|i| config.token(i)).collect();
    let pick = |rng: &mut ChaCha8Rng| vocab[rng.gen_range(0..vocab.len())].clone();

    let mut reports = Vec::new();
    let families = config.groups.div_ceil(config.family_size);
    let mut group_no = 0;
    for family in 0..families {
        let base: Vec<String> = (0..config.frames_per_report).map(|_| pick(&mut rng)).collect();
        let mut start = config.start + rng.gen_range(0..=config.span_days * SECONDS_PER_DAY);
        for sibling in 0..config.family_size {
            if group_no == config.groups {
                break;
            }
            if sibling > 0 {
                let (lo, hi) = config.sibling_gap_days;
                start += rng.gen_range(lo * SECONDS_PER_DAY..=hi * SECONDS_PER_DAY);
            }
            let mut skeleton = base.clone();
            let mut positions: Vec<usize> = (0..skeleton.len()).collect();
            positions.shuffle(&mut rng);
            for &p in positions.iter().take(config.family_divergence) {
                skeleton[p] = pick(&mut rng);
            }

            let count = rng.gen_range(config.min_reports..=config.max_reports);
            let mut times: Vec<Timestamp> = (0..count)
                .map(|_| start + rng.gen_range(0..=config.burst_days * SECONDS_PER_DAY))
                .collect();
            times.sort_unstable();

            let group_id = format!("g{family}-{sibling}");
            for (k, ts) in times.into_iter().enumerate() {
                let mut frames = skeleton.clone();
                for (pos, frame) in frames.iter_mut().enumerate() {
                    if rng.gen_bool(config.mutation_rate) {
                        *frame = pick(&mut rng);
                        if rng.gen_bool(config.drift_rate) {
                            skeleton[pos] = frame.clone();
                        }
                    }
                }
                let report = Report::new(format!("{group_id}-r{k}"), ts, frames)?
                    .with_label(group_id.clone());
                reports.push(report);
            }
            group_no += 1;
        }
    }
    Dataset::new(format!("synthetic-{seed}"), reports)
}
