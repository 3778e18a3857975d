//! Display tables and fit documents. Display CSVs round to 3 decimals
//! (intra-class correlations to 2), matching the precision of the printed
//! tables; the JSON documents alongside keep full precision via shortest
//! round-trip formatting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelKind;
use crate::error::{Error, Result};
use crate::estimator::{FitResult, FixedEffect, VarianceComponent};
use crate::inference::{significance_flags, VariancePartition};
use crate::ordinal::{OrdinalFitResult, OrdinalMethod};
use crate::residuals::{RankChangeTable, ResidualSet};

/// Three-decimal display form, normalizing negative zero.
pub fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

/// Two-decimal display form for ICC×100 columns.
pub fn fmt2(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// One fit as stored on disk: the same envelope for linear and
/// ordered-probit fits, the latter carrying a method tag and cutpoints as
/// the fixed part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub model: String,
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<OrdinalMethod>,
    pub beta: Vec<FixedEffect>,
    pub varcomps: Vec<VarianceComponent>,
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub clamped_levels: Vec<String>,
    pub response: String,
    pub random_levels: Vec<String>,
    pub n_rows: usize,
}

impl FitDocument {
    pub fn from_linear(name: &str, fit: &FitResult) -> Self {
        Self {
            model: name.to_string(),
            kind: ModelKind::Linear,
            method: None,
            beta: fit.beta.clone(),
            varcomps: fit.varcomps.clone(),
            loglik: Some(fit.loglik),
            iterations: fit.iterations,
            converged: fit.converged,
            clamped_levels: fit.clamped_levels.clone(),
            response: fit.response.clone(),
            random_levels: fit.random_levels.clone(),
            n_rows: fit.n_rows,
        }
    }

    pub fn from_ordinal(name: &str, fit: &OrdinalFitResult) -> Self {
        let beta = fit
            .cutpoints
            .iter()
            .enumerate()
            .map(|(c, cp)| FixedEffect {
                term: format!("cutpoint_{}", c + 1),
                estimate: cp.estimate,
                se: cp.se,
            })
            .collect();
        let mut varcomps = fit.varcomps.clone();
        // Latent residual fixed at 1 under probit identification; carrying
        // it in the document makes the variance table and ICC uniform.
        varcomps.push(VarianceComponent {
            level: fit.random_levels.last().cloned().unwrap_or_default(),
            variance: 1.0,
            se: 0.0,
        });
        Self {
            model: name.to_string(),
            kind: ModelKind::OrderedProbit,
            method: Some(fit.method),
            beta,
            varcomps,
            loglik: None,
            iterations: fit.iterations,
            converged: fit.converged,
            clamped_levels: fit.clamped_levels.clone(),
            response: fit.response.clone(),
            random_levels: fit.random_levels.clone(),
            n_rows: fit.n_rows,
        }
    }

    /// Reconstruct the estimator-facing result (used by the residual
    /// comparisons regenerated from disk).
    pub fn to_fit_result(&self) -> Result<FitResult> {
        if self.kind != ModelKind::Linear {
            return Err(Error::InvalidSpec(format!(
                "fit document `{}` is not a linear fit",
                self.model
            )));
        }
        Ok(FitResult {
            beta: self.beta.clone(),
            varcomps: self.varcomps.clone(),
            loglik: self.loglik.unwrap_or(f64::NAN),
            iterations: self.iterations,
            converged: self.converged,
            clamped_levels: self.clamped_levels.clone(),
            flavor: crate::estimator::Flavor::RemlLike,
            response: self.response.clone(),
            random_levels: self.random_levels.clone(),
            n_rows: self.n_rows,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing fit document: {e}")))?;
        std::fs::write(path, text + "\n")
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingFitArtifact { path: path.display().to_string() })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path)
        .map_err(|e| Error::Csv { path: path.display().to_string(), source: e })
}

fn write_record<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    path: &Path,
    record: &[String],
) -> Result<()> {
    w.write_record(record)
        .map_err(|e| Error::Csv { path: path.display().to_string(), source: e })
}

/// `term,estimate,se,flagged` at display precision.
pub fn write_fixed_effects_table(
    doc: &FitDocument,
    threshold: f64,
    path: &Path,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(&mut w, path, &["term".into(), "estimate".into(), "se".into(), "flagged".into()])?;
    let flags = significance_flags(&doc.beta, threshold);
    for (b, (_, flag)) in doc.beta.iter().zip(flags) {
        write_record(
            &mut w,
            path,
            &[b.term.clone(), fmt3(b.estimate), fmt3(b.se), flag.to_string()],
        )?;
    }
    w.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

/// `level,variance,se,icc_x100` at display precision.
pub fn write_varcomp_table(doc: &FitDocument, path: &Path) -> Result<()> {
    let pairs: Vec<(String, f64)> =
        doc.varcomps.iter().map(|v| (v.level.clone(), v.variance)).collect();
    let icc = crate::inference::intra_class_correlations(&pairs)?;
    let mut w = csv_writer(path)?;
    write_record(
        &mut w,
        path,
        &["level".into(), "variance".into(), "se".into(), "icc_x100".into()],
    )?;
    for (v, icc_x100) in doc.varcomps.iter().zip(&icc.proportion_x100) {
        write_record(
            &mut w,
            path,
            &[v.level.clone(), fmt3(v.variance), fmt3(v.se), fmt2(*icc_x100)],
        )?;
    }
    w.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

/// Side-by-side null-vs-full variance table.
pub fn write_variance_reduction_table(
    rows: &[crate::inference::VarianceReductionRow],
    path: &Path,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(
        &mut w,
        path,
        &[
            "level".into(),
            "null_variance".into(),
            "full_variance".into(),
            "change".into(),
            "proportional_change".into(),
            "null_icc_x100".into(),
            "full_icc_x100".into(),
            "icc_change_x100".into(),
        ],
    )?;
    for r in rows {
        write_record(
            &mut w,
            path,
            &[
                r.level.clone(),
                fmt3(r.null_variance),
                fmt3(r.full_variance),
                fmt3(r.change),
                r.proportional_change.map(fmt3).unwrap_or_default(),
                fmt2(r.null_icc_x100),
                fmt2(r.full_icc_x100),
                fmt2(r.icc_change_x100),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

/// `group_id,residual,se,rank` with full-precision floats (plot data, not a
/// display table).
pub fn write_residual_set(rs: &ResidualSet, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(
        &mut w,
        path,
        &["group_id".into(), "residual".into(), "se".into(), "rank".into()],
    )?;
    for e in &rs.entries {
        write_record(
            &mut w,
            path,
            &[e.group.clone(), e.residual.to_string(), e.se.to_string(), e.rank.to_string()],
        )?;
    }
    w.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

/// `group_id,rank_a,rank_b,change`, largest absolute movements first.
pub fn write_rank_changes(table: &RankChangeTable, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(
        &mut w,
        path,
        &["group_id".into(), "rank_a".into(), "rank_b".into(), "change".into()],
    )?;
    for r in table.sorted_by_abs_change() {
        write_record(
            &mut w,
            path,
            &[r.group.clone(), r.rank_a.to_string(), r.rank_b.to_string(), r.change.to_string()],
        )?;
    }
    w.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

/// The partition a fit document implies (exposed for examples and tests).
pub fn partition_of(doc: &FitDocument) -> Result<VariancePartition> {
    let pairs: Vec<(String, f64)> =
        doc.varcomps.iter().map(|v| (v.level.clone(), v.variance)).collect();
    crate::inference::intra_class_correlations(&pairs)
}
