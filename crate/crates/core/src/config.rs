//! Declarative run configuration: input files and schemas, the transform
//! plan, named model specs, estimation settings and output locations.
//! Model rosters run to dozens of terms, so they live in the config file
//! rather than on the command line; flags cover only paths, seed,
//! verbosity and thread count.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::TableSchema;
use crate::error::{Error, Result};
use crate::estimator::{ConvergenceSettings, Flavor};
use crate::ordinal::OrdinalMethod;
use crate::simulate::SimulationConfig;
use crate::transform::TransformStep;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputConfig {
    pub file: PathBuf,
    pub schema: TableSchema,
}

/// A keyed table joined onto the dataset at a level column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinConfig {
    pub file: PathBuf,
    /// Level column the keys match (also the key column name in the file).
    pub at: String,
    /// Numeric columns to carry over.
    pub numeric: Vec<String>,
}

/// A subunit table feeding within-group coefficient-of-variation steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubunitConfig {
    pub name: String,
    pub file: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Linear,
    OrderedProbit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub kind: ModelKind,
    pub response: String,
    #[serde(default)]
    pub fixed: Vec<String>,
    /// Random levels, outermost first; innermost is the residual level.
    pub levels: Vec<String>,
    /// Ordered-probit estimation method; ignored for linear models.
    #[serde(default)]
    pub method: Option<OrdinalMethod>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub model_a: String,
    pub model_b: String,
    /// Level whose residuals are compared (a grouping level of both).
    pub level: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationConfig {
    #[serde(default = "default_tolerance")]
    pub rel_tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_flavor")]
    pub flavor: Flavor,
    #[serde(default = "default_threshold")]
    pub significance_threshold: f64,
    /// Nodes for quadrature-method ordinal fits.
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
}

fn default_tolerance() -> f64 {
    1e-6
}
fn default_max_iterations() -> usize {
    200
}
fn default_flavor() -> Flavor {
    Flavor::RemlLike
}
fn default_threshold() -> f64 {
    crate::inference::DEFAULT_SIGNIFICANCE_THRESHOLD
}
fn default_nodes() -> usize {
    21
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            rel_tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
            flavor: default_flavor(),
            significance_threshold: default_threshold(),
            quadrature_nodes: default_nodes(),
        }
    }
}

impl EstimationConfig {
    pub fn settings(&self) -> ConvergenceSettings {
        ConvergenceSettings {
            rel_tolerance: self.rel_tolerance,
            max_iterations: self.max_iterations,
            flavor: self.flavor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: InputConfig,
    #[serde(default, rename = "join")]
    pub joins: Vec<JoinConfig>,
    #[serde(default, rename = "subunits")]
    pub subunits: Vec<SubunitConfig>,
    #[serde(default, rename = "transform")]
    pub transforms: Vec<TransformStep>,
    #[serde(default, rename = "model")]
    pub models: Vec<ModelConfig>,
    #[serde(default, rename = "comparison")]
    pub comparisons: Vec<ComparisonConfig>,
    #[serde(default)]
    pub estimation: EstimationConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
}

/// The `simulate` subcommand's section: generator parameters plus the
/// output file name (written under the output directory).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSection {
    #[serde(flatten)]
    pub config: SimulationConfig,
    #[serde(default = "default_sim_file")]
    pub file: PathBuf,
}

fn default_sim_file() -> PathBuf {
    PathBuf::from("simulated.csv")
}

impl RunConfig {
    /// Parse a TOML configuration and resolve file paths relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.input.file = resolve(base, &cfg.input.file);
        for j in &mut cfg.joins {
            j.file = resolve(base, &j.file);
        }
        for s in &mut cfg.subunits {
            s.file = resolve(base, &s.file);
        }
        cfg.output.dir = resolve(base, &cfg.output.dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Static validation before any data is read: unique model names, every
    /// referenced column declared or produced by an earlier step, sane
    /// settings. Dummy-coded columns are known only by prefix until the
    /// data is seen, so references to `<prefix>_...` are accepted here and
    /// checked exactly at fit time.
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("at least one model must be declared".into()));
        }
        let mut names = BTreeSet::new();
        for model in &self.models {
            if !names.insert(model.name.clone()) {
                return Err(Error::Config(format!("duplicate model name `{}`", model.name)));
            }
            if model.levels.is_empty() {
                return Err(Error::Config(format!("model `{}` declares no levels", model.name)));
            }
            for level in &model.levels {
                if !self.input.schema.levels.contains(level) {
                    return Err(Error::Config(format!(
                        "model `{}` uses `{level}` which is not a level column of the input",
                        model.name
                    )));
                }
            }
            if model.kind == ModelKind::OrderedProbit && !model.fixed.is_empty() {
                return Err(Error::Config(format!(
                    "model `{}`: ordered-probit models are null models and take no fixed terms",
                    model.name
                )));
            }
        }

        let mut available: BTreeSet<String> = self
            .input
            .schema
            .numeric
            .iter()
            .chain(&self.input.schema.categorical)
            .cloned()
            .collect();
        let mut dummy_prefixes: Vec<String> = Vec::new();
        for j in &self.joins {
            if !self.input.schema.levels.contains(&j.at) {
                return Err(Error::Config(format!(
                    "join at `{}` which is not a level column",
                    j.at
                )));
            }
            for c in &j.numeric {
                available.insert(c.clone());
            }
        }
        let subunit_names: BTreeSet<&str> =
            self.subunits.iter().map(|s| s.name.as_str()).collect();
        let known = |avail: &BTreeSet<String>, prefixes: &[String], col: &str| {
            avail.contains(col)
                || prefixes.iter().any(|p| col.starts_with(&format!("{p}_")))
        };
        for step in &self.transforms {
            match step {
                TransformStep::Score { inputs, output } => {
                    for c in inputs {
                        if !known(&available, &dummy_prefixes, c) {
                            return Err(Error::Config(format!(
                                "score step reads undeclared column `{c}`"
                            )));
                        }
                    }
                    available.insert(output.clone());
                }
                TransformStep::Standardize { input, output }
                | TransformStep::Negate { input, output } => {
                    if !known(&available, &dummy_prefixes, input) {
                        return Err(Error::Config(format!(
                            "transform reads undeclared column `{input}`"
                        )));
                    }
                    available.insert(output.clone());
                }
                TransformStep::DummyCode { input, output_prefix, .. } => {
                    if !known(&available, &dummy_prefixes, input) {
                        return Err(Error::Config(format!(
                            "dummy_code reads undeclared column `{input}`"
                        )));
                    }
                    dummy_prefixes.push(output_prefix.clone());
                }
                TransformStep::Interact { indicator, rate, output } => {
                    for c in [indicator, rate] {
                        if !known(&available, &dummy_prefixes, c) {
                            return Err(Error::Config(format!(
                                "interact reads undeclared column `{c}`"
                            )));
                        }
                    }
                    available.insert(output.clone());
                }
                TransformStep::Cv { table, group, output, .. } => {
                    if !subunit_names.contains(table.as_str()) {
                        return Err(Error::Config(format!(
                            "cv step references undeclared subunit table `{table}`"
                        )));
                    }
                    if !self.input.schema.levels.contains(group) {
                        return Err(Error::Config(format!(
                            "cv step groups by `{group}` which is not a level column"
                        )));
                    }
                    available.insert(output.clone());
                }
            }
        }
        // One value column per subunit table keeps loading unambiguous.
        let mut cv_cols: std::collections::BTreeMap<&str, (&str, &str)> = Default::default();
        for step in &self.transforms {
            if let TransformStep::Cv { table, group, value, .. } = step {
                if let Some(prev) = cv_cols.insert(table.as_str(), (group, value)) {
                    if prev != (group.as_str(), value.as_str()) {
                        return Err(Error::Config(format!(
                            "subunit table `{table}` used with conflicting group/value columns"
                        )));
                    }
                }
            }
        }

        for model in &self.models {
            for col in std::iter::once(&model.response).chain(&model.fixed) {
                if !known(&available, &dummy_prefixes, col) {
                    return Err(Error::UndeclaredColumn {
                        model: model.name.clone(),
                        column: col.clone(),
                    });
                }
            }
        }
        for cmp in &self.comparisons {
            for name in [&cmp.model_a, &cmp.model_b] {
                let Some(model) = self.models.iter().find(|m| &m.name == name) else {
                    return Err(Error::Config(format!(
                        "comparison references unknown model `{name}`"
                    )));
                };
                if model.kind != ModelKind::Linear {
                    return Err(Error::Config(format!(
                        "comparison model `{name}` must be a linear model"
                    )));
                }
                if !model.levels.contains(&cmp.level) {
                    return Err(Error::Config(format!(
                        "comparison level `{}` is not a level of model `{name}`",
                        cmp.level
                    )));
                }
                if model.levels.last() == Some(&cmp.level) {
                    return Err(Error::Config(format!(
                        "comparison level `{}` is the residual level of `{name}`",
                        cmp.level
                    )));
                }
            }
        }
        if !(self.estimation.rel_tolerance > 0.0) || self.estimation.max_iterations == 0 {
            return Err(Error::Config("estimation settings must be positive".into()));
        }
        if let Some(sim) = &self.simulate {
            sim.config.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
