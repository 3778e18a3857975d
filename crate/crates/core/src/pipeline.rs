//! Config-driven pipeline: load → join → transform → fit → inference →
//! residual comparisons → report files. The staged subcommands (simulate,
//! transform, fit, report) are thin slices of the same machinery with the
//! same file contracts, so staged execution reproduces a one-shot run byte
//! for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ModelConfig, ModelKind, RunConfig};
use crate::dataset::{
    self, HierarchicalDataset, JoinReport, TableSchema,
};
use crate::error::{Error, Result};
use crate::estimator::fit_random_intercept;
use crate::inference::variance_reduction;
use crate::ordinal::{
    fit_ordered_probit_pql, fit_ordered_probit_quadrature, OrderedProbitSpec, OrdinalMethod,
};
use crate::report::{
    write_fixed_effects_table, write_rank_changes, write_residual_set,
    write_variance_reduction_table, write_varcomp_table, FitDocument,
};
use crate::residuals::{eb_residuals, rank_changes, scatter_export};
use crate::simulate::simulate_nested;
use crate::transform::{SubunitTable, TransformPlan, TransformReport, TransformStep};

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub kind: ModelKind,
    pub rows_used: usize,
    pub drops: BTreeMap<String, usize>,
    pub converged: bool,
    pub iterations: usize,
    pub clamped_levels: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    pub model_a: String,
    pub model_b: String,
    pub level: String,
    /// Groups holding the same rank under both models.
    pub unchanged_groups: Vec<String>,
}

/// What a run did: row accounting, join and transform reports, per-model
/// convergence records and the files written.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub rows_loaded: usize,
    pub joins: Vec<JoinReport>,
    pub transform: TransformReport,
    pub models: Vec<ModelSummary>,
    pub comparisons: Vec<ComparisonSummary>,
    pub files: Vec<String>,
}

impl Manifest {
    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing manifest: {e}")))?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Ok(path)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io { path: dir.display().to_string(), source: e })
}

/// Load the input table, apply joins, then the transform plan: the
/// analyzable dataset a run fits its models on.
pub fn prepare_dataset(
    cfg: &RunConfig,
) -> Result<(HierarchicalDataset, Vec<JoinReport>, TransformReport)> {
    let mut ds = dataset::load_table(&cfg.input.file, &cfg.input.schema)?;
    let mut join_reports = Vec::new();
    for join in &cfg.joins {
        let table = dataset::load_keyed_table(&join.file, &join.at, &join.numeric)?;
        let (joined, report) = dataset::join_level_table(&ds, &join.at, &table)?;
        ds = joined;
        join_reports.push(report);
    }

    let mut subunit_tables = Vec::new();
    for step in &cfg.transforms {
        if let TransformStep::Cv { table, group, value, .. } = step {
            if subunit_tables.iter().any(|t: &SubunitTable| &t.name == table) {
                continue;
            }
            let sub = cfg
                .subunits
                .iter()
                .find(|s| &s.name == table)
                .ok_or_else(|| Error::Config(format!("unknown subunit table `{table}`")))?;
            subunit_tables.push(load_subunit_rows(&sub.file, table, group, value)?);
        }
    }
    let plan = TransformPlan { steps: cfg.transforms.clone() };
    let (transformed, report) = plan.apply(&ds, &subunit_tables)?;
    Ok((transformed, join_reports, report))
}

fn load_subunit_rows(
    file: &Path,
    name: &str,
    group_col: &str,
    value_col: &str,
) -> Result<SubunitTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(file).map_err(|e| {
        Error::Csv { path: file.display().to_string(), source: e }
    })?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::Csv { path: file.display().to_string(), source: e })?
            .iter().map(|h| h.trim().to_string()).collect();
    let g_idx = headers.iter().position(|h| h == group_col).ok_or_else(|| Error::MissingColumn {
        column: group_col.into(),
        path: file.display().to_string(),
    })?;
    let v_idx = headers.iter().position(|h| h == value_col).ok_or_else(|| Error::MissingColumn {
        column: value_col.into(),
        path: file.display().to_string(),
    })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::Csv { path: file.display().to_string(), source: e })?;
        let gid = record.get(g_idx).unwrap_or("").trim().to_string();
        let raw = record.get(v_idx).unwrap_or("").trim();
        let value = if raw.is_empty() || raw == "NA" { None } else { raw.parse::<f64>().ok() };
        rows.push((gid, value));
    }
    Ok(SubunitTable { name: name.to_string(), rows })
}

fn transformed_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("transformed.csv"), dir.join("transformed.schema.json"))
}

fn write_transformed(ds: &HierarchicalDataset, dir: &Path) -> Result<Vec<String>> {
    let (csv_path, schema_path) = transformed_paths(dir);
    dataset::write_csv(ds, &csv_path)?;
    let schema = dataset::schema_of(ds);
    let text = serde_json::to_string_pretty(&schema)
        .map_err(|e| Error::Config(format!("serializing schema: {e}")))?;
    std::fs::write(&schema_path, text + "\n")
        .map_err(|e| Error::Io { path: schema_path.display().to_string(), source: e })?;
    Ok(vec!["transformed.csv".into(), "transformed.schema.json".into()])
}

fn read_transformed(dir: &Path) -> Result<HierarchicalDataset> {
    let (csv_path, schema_path) = transformed_paths(dir);
    let text = std::fs::read_to_string(&schema_path)
        .map_err(|_| Error::MissingFitArtifact { path: schema_path.display().to_string() })?;
    let schema: TableSchema = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", schema_path.display())))?;
    dataset::load_table(&csv_path, &schema)
}

fn fit_one_model(
    ds: &HierarchicalDataset,
    model: &ModelConfig,
    cfg: &RunConfig,
) -> Result<(FitDocument, BTreeMap<String, usize>)> {
    match model.kind {
        ModelKind::Linear => {
            let spec = crate::estimator::ModelSpec {
                response: model.response.clone(),
                fixed_terms: model.fixed.clone(),
                random_levels: model.levels.clone(),
            };
            let (_, drops) = dataset::listwise_filter(ds, &spec.used_columns())?;
            let fit = fit_random_intercept(ds, &spec, &cfg.estimation.settings())?;
            Ok((FitDocument::from_linear(&model.name, &fit), drops))
        }
        ModelKind::OrderedProbit => {
            let spec = OrderedProbitSpec {
                response: model.response.clone(),
                random_levels: model.levels.clone(),
            };
            let (_, drops) = dataset::listwise_filter(ds, std::slice::from_ref(&model.response))?;
            let method = model.method.unwrap_or(OrdinalMethod::Pql2);
            let fit = match method {
                OrdinalMethod::Mql1 => {
                    fit_ordered_probit_pql(ds, &spec, 1, &cfg.estimation.settings())?
                }
                OrdinalMethod::Pql2 => {
                    fit_ordered_probit_pql(ds, &spec, 2, &cfg.estimation.settings())?
                }
                OrdinalMethod::Quadrature => {
                    fit_ordered_probit_quadrature(ds, &spec, cfg.estimation.quadrature_nodes)?
                }
            };
            Ok((FitDocument::from_ordinal(&model.name, &fit), drops))
        }
    }
}

fn write_model_files(doc: &FitDocument, cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let fixed = format!("{}.fixed.csv", doc.model);
    let varcomp = format!("{}.varcomp.csv", doc.model);
    let fit_json = format!("{}.fit.json", doc.model);
    write_fixed_effects_table(doc, cfg.estimation.significance_threshold, &dir.join(&fixed))?;
    write_varcomp_table(doc, &dir.join(&varcomp))?;
    doc.write_json(&dir.join(&fit_json))?;
    Ok(vec![fixed, varcomp, fit_json])
}

fn run_comparisons(
    ds: &HierarchicalDataset,
    docs: &[FitDocument],
    cfg: &RunConfig,
    dir: &Path,
) -> Result<(Vec<ComparisonSummary>, Vec<String>)> {
    let mut summaries = Vec::new();
    let mut files = Vec::new();
    for cmp in &cfg.comparisons {
        let doc_a = docs.iter().find(|d| d.model == cmp.model_a).expect("validated");
        let doc_b = docs.iter().find(|d| d.model == cmp.model_b).expect("validated");
        let fit_a = doc_a.to_fit_result()?;
        let fit_b = doc_b.to_fit_result()?;
        let res_a = eb_residuals(&fit_a, ds, &cmp.level)?;
        let res_b = eb_residuals(&fit_b, ds, &cmp.level)?;
        let stem = format!("{}_vs_{}.{}", cmp.model_a, cmp.model_b, cmp.level);

        let ra_file = format!("{}.{}.residuals.csv", cmp.model_a, cmp.level);
        let rb_file = format!("{}.{}.residuals.csv", cmp.model_b, cmp.level);
        write_residual_set(&res_a, &dir.join(&ra_file))?;
        write_residual_set(&res_b, &dir.join(&rb_file))?;

        let table = rank_changes(&res_a, &res_b)?;
        let rank_file = format!("{stem}.rank_changes.csv");
        write_rank_changes(&table, &dir.join(&rank_file))?;

        let scatter_csv = format!("{stem}.scatter.csv");
        let scatter_json = format!("{stem}.scatter.json");
        scatter_export(&res_a, &res_b, &dir.join(&scatter_csv), &dir.join(&scatter_json))?;

        let reduction = variance_reduction(&fit_a, &fit_b)?;
        let reduction_file = format!("{stem}.variance_reduction.csv");
        write_variance_reduction_table(&reduction, &dir.join(&reduction_file))?;

        summaries.push(ComparisonSummary {
            model_a: cmp.model_a.clone(),
            model_b: cmp.model_b.clone(),
            level: cmp.level.clone(),
            unchanged_groups: table.unchanged_groups(),
        });
        for f in [ra_file, rb_file, rank_file, scatter_csv, scatter_json, reduction_file] {
            if !files.contains(&f) {
                files.push(f);
            }
        }
    }
    Ok((summaries, files))
}

/// One-shot pipeline: everything from raw inputs to report files.
/// Per-model non-convergence is recorded in the outputs, not fatal; the
/// first configuration or fitting failure aborts the run.
pub fn run(cfg: &RunConfig) -> Result<Manifest> {
    ensure_dir(&cfg.output.dir)?;
    let (ds, joins, transform_report) = prepare_dataset(cfg)?;
    let mut files = write_transformed(&ds, &cfg.output.dir)?;

    // Models are independent given the read-only dataset.
    let fitted: Vec<(FitDocument, BTreeMap<String, usize>)> = cfg
        .models
        .par_iter()
        .map(|model| fit_one_model(&ds, model, cfg))
        .collect::<Result<_>>()?;

    let mut docs = Vec::with_capacity(fitted.len());
    let mut summaries = Vec::with_capacity(fitted.len());
    for ((doc, drops), model) in fitted.into_iter().zip(&cfg.models) {
        files.extend(write_model_files(&doc, cfg, &cfg.output.dir)?);
        summaries.push(ModelSummary {
            name: model.name.clone(),
            kind: model.kind,
            rows_used: doc.n_rows,
            drops,
            converged: doc.converged,
            iterations: doc.iterations,
            clamped_levels: doc.clamped_levels.clone(),
        });
        docs.push(doc);
    }

    let (comparisons, cmp_files) = run_comparisons(&ds, &docs, cfg, &cfg.output.dir)?;
    files.extend(cmp_files);
    files.push("manifest.json".into());

    let manifest = Manifest {
        rows_loaded: ds.n_rows(),
        joins,
        transform: transform_report,
        models: summaries,
        comparisons,
        files,
    };
    manifest.write(&cfg.output.dir)?;
    Ok(manifest)
}

/// `simulate` subcommand: emit a dataset from the config's simulate section.
pub fn simulate_to_csv(cfg: &RunConfig) -> Result<PathBuf> {
    let section = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [simulate] section".into()))?;
    ensure_dir(&cfg.output.dir)?;
    let ds = simulate_nested(&section.config)?;
    let path = cfg.output.dir.join(&section.file);
    dataset::write_csv(&ds, &path)?;
    Ok(path)
}

/// `transform` subcommand: emit the transformed CSV (and its schema) only.
pub fn transform_only(cfg: &RunConfig) -> Result<(PathBuf, Manifest)> {
    ensure_dir(&cfg.output.dir)?;
    let (ds, joins, transform_report) = prepare_dataset(cfg)?;
    let files = write_transformed(&ds, &cfg.output.dir)?;
    let manifest = Manifest {
        rows_loaded: ds.n_rows(),
        joins,
        transform: transform_report,
        models: vec![],
        comparisons: vec![],
        files,
    };
    Ok((transformed_paths(&cfg.output.dir).0, manifest))
}

/// `fit` subcommand: fit one named model on the stored transformed CSV,
/// producing exactly the files the one-shot run would.
pub fn fit_single(cfg: &RunConfig, model_name: &str) -> Result<ModelSummary> {
    let model = cfg
        .models
        .iter()
        .find(|m| m.name == model_name)
        .ok_or_else(|| Error::Config(format!("no model named `{model_name}` in config")))?;
    let ds = read_transformed(&cfg.output.dir)?;
    let (doc, drops) = fit_one_model(&ds, model, cfg)?;
    write_model_files(&doc, cfg, &cfg.output.dir)?;
    Ok(ModelSummary {
        name: model.name.clone(),
        kind: model.kind,
        rows_used: doc.n_rows,
        drops,
        converged: doc.converged,
        iterations: doc.iterations,
        clamped_levels: doc.clamped_levels,
    })
}

/// `report` subcommand: regenerate the display tables from stored fit
/// JSONs. Residual comparisons need the data and are produced by `run`.
pub fn regenerate_reports(cfg: &RunConfig) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for model in &cfg.models {
        let path = cfg.output.dir.join(format!("{}.fit.json", model.name));
        let doc = FitDocument::read_json(&path)?;
        files.extend(write_model_files(&doc, cfg, &cfg.output.dir)?);
    }
    Ok(files)
}
