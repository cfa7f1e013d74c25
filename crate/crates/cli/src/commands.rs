use std::io::Read;
use std::path::{Path, PathBuf};

use tracegroup::experiment::{evaluate, knn_grid, train_aggregator, FittedModels};
use tracegroup::features::feature_schema;
use tracegroup::harness::{prime_store, rank_groups, MetricDocument, Pipeline, Scorer};
use tracegroup::ingest::{generate_synthetic, load_dataset, parse_report_line, temporal_split, Splits};
use tracegroup::ranker::ModelFile;
use tracegroup::similarity::{by_name, TfIdfIndex};

use crate::config::RunConfig;
use crate::CliError;

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("`{key}` is required for this command")))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_owned(), e)),
        None => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::Io(path.to_owned(), e))
}

fn splits_dir(c: &RunConfig) -> PathBuf {
    c.splits.clone().unwrap_or_else(|| c.out.join("splits"))
}

fn load_model(c: &RunConfig) -> Result<ModelFile, CliError> {
    Ok(ModelFile::load(c.model_path())?)
}

/// Builds the scorer named in the config. Aggregation loads the model file
/// and refuses one trained under another similarity model.
fn scorer(c: &RunConfig) -> Result<Scorer, CliError> {
    match c.scorer.as_str() {
        "baseline" => Ok(Scorer::Baseline),
        "aggregation" => Ok(Scorer::Aggregation(load_model(c)?.aggregator_for(&c.similarity)?)),
        "knn" => Ok(Scorer::Knn(c.knn_config()?)),
        other => Err(CliError::UnknownScorer(other.to_owned())),
    }
}

pub fn generate(c: &RunConfig) -> Result<(), CliError> {
    let path = required(&c.dataset, "dataset")?;
    let data = generate_synthetic(&c.synthetic(), c.seed)?;
    ensure_parent(path)?;
    data.save(path)?;
    println!("wrote {} reports to {}", data.len(), path.display());
    Ok(())
}

pub fn split(c: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(required(&c.dataset, "dataset")?)?;
    let splits = temporal_split(&data, &c.split_spec())?;
    let dir = splits_dir(c);
    splits.save(&dir)?;
    for (span, file) in splits.spans().into_iter().zip(Splits::FILE_NAMES) {
        println!("{}\t{}", dir.join(file).display(), span.len());
    }
    Ok(())
}

pub fn train(c: &RunConfig) -> Result<(), CliError> {
    let splits = Splits::load(splits_dir(c))?;
    let models = FittedModels::fit(&c.similarity, &splits)?;
    let aggregator = train_aggregator(&splits, &models, &c.experiment())?;
    let path = c.model_path();
    write(&path, &ModelFile::new(&c.similarity, &aggregator).to_json())?;
    let schema = serde_json::to_string_pretty(&feature_schema()).expect("schema serializes") + "\n";
    write(&c.out.join("feature_schema.json"), &schema)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn eval(c: &RunConfig) -> Result<(), CliError> {
    let scorer = scorer(c)?;
    let splits = Splits::load(splits_dir(c))?;
    let models = FittedModels::fit(&c.similarity, &splits)?;
    let experiment = c.experiment();
    let outcome = evaluate(&splits, &models, &experiment, std::slice::from_ref(&scorer))?
        .pop()
        .expect("one outcome per scorer");
    let doc = MetricDocument {
        model: c.similarity.clone(),
        scorer: scorer.name().to_owned(),
        filtration: experiment.filtration,
        staleness_days: experiment.staleness_days,
        metrics: outcome.report,
        skipped_first_in_group: outcome.skipped_first_in_group,
        first_in_group: outcome.first_in_group,
        knn: match &scorer {
            Scorer::Knn(k) => Some(*k),
            _ => None,
        },
    };
    let path = c.out.join(format!("metrics_{}.json", scorer.name()));
    write(&path, &doc.to_json())?;
    let m = outcome.report;
    println!(
        "{}\tMRR {:.4}\tRR@1 {:.4}\tRR@5 {:.4}\tRR@10 {:.4}\t|Q| {}\t{}",
        scorer.name(),
        m.mrr,
        m.rr_at_1,
        m.rr_at_5,
        m.rr_at_10,
        m.query_count,
        path.display()
    );
    Ok(())
}

pub fn grid(c: &RunConfig) -> Result<(), CliError> {
    let splits = Splits::load(splits_dir(c))?;
    let models = FittedModels::fit(&c.similarity, &splits)?;
    let outcome = knn_grid(&splits, &models, &c.experiment(), &c.grid())?;
    let path = c.out.join("grid.tsv");
    ensure_parent(&path)?;
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_path(&path)?;
    w.write_record(["method", "k", "MRR", "RR@1", "RR@5", "RR@10"])?;
    for cell in &outcome.cells {
        let m = cell.metrics;
        w.write_record([
            cell.config.method_name().to_owned(),
            cell.config.size().to_string(),
            m.mrr.to_string(),
            m.rr_at_1.to_string(),
            m.rr_at_5.to_string(),
            m.rr_at_10.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Io(path.clone(), e))?;
    let best = outcome.cells.iter().find(|cell| cell.config == outcome.best).expect("best is a cell");
    println!("best: {} (RR@1 {:.4}); table in {}", outcome.best, best.metrics.rr_at_1, path.display());
    Ok(())
}

pub fn coeffs(c: &RunConfig) -> Result<(), CliError> {
    let file = load_model(c)?;
    let aggregator = file.aggregator_for(&file.similarity)?;
    let path = c.out.join("coefficients.tsv");
    ensure_parent(&path)?;
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_path(&path)?;
    w.write_record(["index", "feature", "weight"])?;
    for coef in aggregator.coefficients() {
        w.write_record([coef.index.to_string(), coef.name, coef.weight.to_string()])?;
    }
    w.flush().map_err(|e| CliError::Io(path.clone(), e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_query(arg: &str) -> Result<String, CliError> {
    if arg != "-" {
        return Ok(arg.to_owned());
    }
    let mut line = String::new();
    std::io::stdin()
        .read_to_string(&mut line)
        .map_err(|e| CliError::Io(PathBuf::from("<stdin>"), e))?;
    Ok(line)
}

/// Ranks the store's open groups for one query. Similarity models are
/// fitted on the store itself.
pub fn rank(c: &RunConfig, query: &str) -> Result<(), CliError> {
    let scorer = scorer(c)?;
    let store_path = required(&c.store, "store")?;
    let data = load_dataset(store_path)?;
    let query = parse_report_line(read_query(query)?.trim()).map_err(|message| tracegroup::Error::Parse {
        path: PathBuf::from("<query>"),
        line: 1,
        message,
    })?;
    let store = prime_store([&data], c.staleness_days)?;
    let fast = TfIdfIndex::fitted(&data.reports);
    let mut heavy = by_name(&c.similarity)?;
    heavy.fit(&data.reports);
    let pipeline = Pipeline::new(&fast, heavy.as_ref(), c.filtration());
    let ranking = rank_groups(&pipeline.candidates(&store, &query), &scorer)?;
    for (i, (group, score)) in ranking.iter().take(c.top).enumerate() {
        println!("{}\t{group}\t{score}", i + 1);
    }
    Ok(())
}
