//! Empirical-Bayes (shrunken) level residuals, their ranks, and
//! null-vs-conditional comparisons.
//!
//! The residual for group g at level l is `û_g = σ̂_l² 1_gᵀ V̂⁻¹ (y − Xβ̂)`,
//! computed blockwise. For a 2-level null model this reduces to the familiar
//! shrinkage form `û_j = n_j σ̂_u² / (n_j σ̂_u² + σ̂_e²) · r̄_j`. Diagnostic
//! standard errors use the comparative form `σ² − σ⁴ 1ᵀV⁻¹1` (posterior
//! variance of the estimate, conditional on the fixed part).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::HierarchicalDataset;
use crate::error::{Error, Result};
use crate::estimator::{self, FitResult, ModelSpec, NestedFactor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupResidual {
    pub group: String,
    pub residual: f64,
    pub se: f64,
    /// Ascending rank, 1 = most negative; ties broken by group identifier.
    pub rank: usize,
}

/// Per-group EB residuals for one level of one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualSet {
    pub level: String,
    pub entries: Vec<GroupResidual>,
    /// True when the level's variance is zero, which forces every residual
    /// to exactly zero.
    pub zero_variance: bool,
}

/// Compute the EB residuals of `level` under a converged fit. The dataset
/// must be the one the model was fitted on; the same per-model listwise
/// deletion is re-applied here.
pub fn eb_residuals(
    fit: &FitResult,
    ds: &HierarchicalDataset,
    level: &str,
) -> Result<ResidualSet> {
    let level_idx = fit
        .random_levels
        .iter()
        .position(|l| l == level)
        .ok_or_else(|| Error::UnknownLevel { level: level.into() })?;
    if level_idx + 1 == fit.random_levels.len() {
        return Err(Error::InvalidSpec(format!(
            "`{level}` is the residual level; EB residuals exist for grouping levels only"
        )));
    }
    if !fit.converged {
        return Err(Error::InvalidSpec(
            "EB residuals require a converged fit".into(),
        ));
    }
    let spec = ModelSpec {
        response: fit.response.clone(),
        fixed_terms: fit.beta.iter().skip(1).map(|b| b.term.clone()).collect(),
        random_levels: fit.random_levels.clone(),
    };
    let prep = estimator::prepare(ds, &spec)?;
    let m = prep.structure.n_grouping_levels();
    let theta = fit.variances();
    let sigma2 = theta[level_idx];
    let floor = prep.scale * 1e-12;
    let factor = NestedFactor::iid(&prep.structure, &theta[..m], theta[m].max(floor));

    let n = prep.y.len();
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut e = prep.y[i];
        for (j, b) in fit.beta.iter().enumerate() {
            e -= prep.x[j][i] * b.estimate;
        }
        q[i] = e;
    }
    factor.solve(&mut q);

    let groups = prep.structure.level(level_idx);
    let mut entries = Vec::with_capacity(groups.n_groups());
    for b in 0..prep.structure.n_blocks() {
        let block = prep.structure.block(b);
        let (g0, g1) = groups.block_spans[b];
        for g in g0..g1 {
            let range = groups.range(g);
            let residual = sigma2 * q[range.clone()].iter().sum::<f64>();
            let se = if sigma2 == 0.0 {
                0.0
            } else {
                let mut w = vec![0.0; block.len()];
                for i in range.clone() {
                    w[i - block.start] = 1.0;
                }
                factor.solve_block(b, &mut w);
                let s: f64 = range.clone().map(|i| w[i - block.start]).sum();
                (sigma2 - sigma2 * sigma2 * s).max(0.0).sqrt()
            };
            entries.push(GroupResidual {
                group: groups.ids[g].clone(),
                residual,
                se,
                rank: 0,
            });
        }
    }
    let mut set = ResidualSet { level: level.into(), entries, zero_variance: sigma2 == 0.0 };
    assign_ranks(&mut set);
    Ok(set)
}

fn assign_ranks(rs: &mut ResidualSet) {
    let mut idx: Vec<usize> = (0..rs.entries.len()).collect();
    idx.sort_by(|&a, &b| {
        rs.entries[a]
            .residual
            .partial_cmp(&rs.entries[b].residual)
            .unwrap()
            .then_with(|| rs.entries[a].group.cmp(&rs.entries[b].group))
    });
    for (rank0, &i) in idx.iter().enumerate() {
        rs.entries[i].rank = rank0 + 1;
    }
}

/// Rank residuals ascending: rank 1 is the most negative; ties break by
/// group identifier so the ordering is deterministic.
pub fn rank_residuals(rs: &ResidualSet) -> ResidualSet {
    let mut out = rs.clone();
    assign_ranks(&mut out);
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankChange {
    pub group: String,
    pub rank_a: usize,
    pub rank_b: usize,
    /// rank_b − rank_a.
    pub change: i64,
}

/// Per-group rank movements between two residual sets over the same groups.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankChangeTable {
    pub level: String,
    /// Rows in group-identifier order.
    pub rows: Vec<RankChange>,
}

impl RankChangeTable {
    /// Rows ordered by |change| descending, then group id.
    pub fn sorted_by_abs_change(&self) -> Vec<RankChange> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| {
            b.change
                .abs()
                .cmp(&a.change.abs())
                .then_with(|| a.group.cmp(&b.group))
        });
        rows
    }

    /// Groups whose rank is identical under both models.
    pub fn unchanged_groups(&self) -> Vec<String> {
        self.rows.iter().filter(|r| r.change == 0).map(|r| r.group.clone()).collect()
    }
}

fn check_same_groups(a: &ResidualSet, b: &ResidualSet) -> Result<()> {
    let ga: BTreeSet<&str> = a.entries.iter().map(|e| e.group.as_str()).collect();
    let gb: BTreeSet<&str> = b.entries.iter().map(|e| e.group.as_str()).collect();
    if ga != gb {
        let example = ga
            .symmetric_difference(&gb)
            .next()
            .map(|s| s.to_string())
            .unwrap_or_default();
        return Err(Error::GroupSetMismatch { example });
    }
    Ok(())
}

/// Signed rank changes between model A and model B residuals.
pub fn rank_changes(a: &ResidualSet, b: &ResidualSet) -> Result<RankChangeTable> {
    check_same_groups(a, b)?;
    let ranked_a = rank_residuals(a);
    let ranked_b = rank_residuals(b);
    let mut b_by_group: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for e in &ranked_b.entries {
        b_by_group.insert(e.group.as_str(), e.rank);
    }
    let mut rows: Vec<RankChange> = ranked_a
        .entries
        .iter()
        .map(|e| {
            let rank_b = b_by_group[e.group.as_str()];
            RankChange {
                group: e.group.clone(),
                rank_a: e.rank,
                rank_b,
                change: rank_b as i64 - e.rank as i64,
            }
        })
        .collect();
    rows.sort_by(|x, y| x.group.cmp(&y.group));
    Ok(RankChangeTable { level: a.level.clone(), rows })
}

/// A group flagged as extreme in the scatter comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterAnnotation {
    pub group: String,
    /// Tags among "min_a", "max_a", "min_b", "max_b".
    pub tags: Vec<String>,
}

/// Point data for a residual-vs-residual scatter, plus the identity-line
/// marker and automatic extreme-group annotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterData {
    pub level: String,
    /// (group, residual_a, residual_b) in group order.
    pub points: Vec<(String, f64, f64)>,
    /// The 45-degree comparison line is part of the plot contract.
    pub identity_line: bool,
    pub annotations: Vec<ScatterAnnotation>,
}

/// Build the scatter comparison of two residual sets over the same groups.
pub fn scatter_data(a: &ResidualSet, b: &ResidualSet) -> Result<ScatterData> {
    check_same_groups(a, b)?;
    let mut b_by_group: std::collections::BTreeMap<&str, f64> = std::collections::BTreeMap::new();
    for e in &b.entries {
        b_by_group.insert(e.group.as_str(), e.residual);
    }
    let mut points: Vec<(String, f64, f64)> = a
        .entries
        .iter()
        .map(|e| (e.group.clone(), e.residual, b_by_group[e.group.as_str()]))
        .collect();
    points.sort_by(|x, y| x.0.cmp(&y.0));

    let pick = |key: fn(&(String, f64, f64)) -> f64, min: bool| -> String {
        let mut best = 0usize;
        for i in 1..points.len() {
            let better = if min { key(&points[i]) < key(&points[best]) } else { key(&points[i]) > key(&points[best]) };
            if better {
                best = i;
            }
        }
        points[best].0.clone()
    };
    let mut annotations: std::collections::BTreeMap<String, Vec<String>> = Default::default();
    if !points.is_empty() {
        for (tag, group) in [
            ("min_a", pick(|p| p.1, true)),
            ("max_a", pick(|p| p.1, false)),
            ("min_b", pick(|p| p.2, true)),
            ("max_b", pick(|p| p.2, false)),
        ] {
            annotations.entry(group).or_default().push(tag.to_string());
        }
    }
    Ok(ScatterData {
        level: a.level.clone(),
        points,
        identity_line: true,
        annotations: annotations
            .into_iter()
            .map(|(group, tags)| ScatterAnnotation { group, tags })
            .collect(),
    })
}

/// Write the scatter comparison: a CSV of points any plotting tool can
/// consume, plus a JSON sidecar carrying the identity-line marker and the
/// extreme-group annotations.
pub fn scatter_export(
    a: &ResidualSet,
    b: &ResidualSet,
    csv_path: &Path,
    json_path: &Path,
) -> Result<ScatterData> {
    let data = scatter_data(a, b)?;
    let mut writer = csv::Writer::from_path(csv_path)
        .map_err(|e| Error::Csv { path: csv_path.display().to_string(), source: e })?;
    writer
        .write_record(["group_id", "residual_a", "residual_b"])
        .map_err(|e| Error::Csv { path: csv_path.display().to_string(), source: e })?;
    for (group, ra, rb) in &data.points {
        writer
            .write_record([group.as_str(), &ra.to_string(), &rb.to_string()])
            .map_err(|e| Error::Csv { path: csv_path.display().to_string(), source: e })?;
    }
    writer
        .flush()
        .map_err(|e| Error::Io { path: csv_path.display().to_string(), source: e })?;
    let sidecar = serde_json::json!({
        "level": data.level,
        "identity_line": data.identity_line,
        "annotations": data.annotations,
    });
    std::fs::write(json_path, format!("{:#}\n", sidecar))
        .map_err(|e| Error::Io { path: json_path.display().to_string(), source: e })?;
    Ok(data)
}
