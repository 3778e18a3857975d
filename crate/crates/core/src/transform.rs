//! Derived-variable construction: composite distress scores, standardized
//! and negated responses, dummy codes, cross-level interactions and
//! within-group dispersion proxies.
//!
//! All operations are pure functions over immutable columns; the
//! [`TransformPlan`] applies a declared sequence of them to a dataset.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{Column, HierarchicalDataset};
use crate::error::{Error, Result};

/// Recode twelve 1..4 item responses to 0..3 and sum, giving the 0..36
/// distress scale (0 least distressed, 36 most distressed).
pub fn ghq_likert_score(responses: &[i64]) -> Result<i64> {
    if responses.len() != 12 {
        return Err(Error::ResponseCount {
            op: "ghq_likert_score",
            expected: 12,
            got: responses.len(),
        });
    }
    let mut total = 0;
    for &r in responses {
        if !(1..=4).contains(&r) {
            return Err(Error::ResponseOutOfRange { value: r as f64 });
        }
        total += r - 1;
    }
    Ok(total)
}

/// Column-wise scorer: any missing item makes the score missing; a present
/// item outside {1,2,3,4} is an error.
pub fn ghq_likert_score_cells(items: &[&[Option<f64>]]) -> Result<Vec<Option<f64>>> {
    if items.len() != 12 {
        return Err(Error::ResponseCount {
            op: "ghq_likert_score",
            expected: 12,
            got: items.len(),
        });
    }
    let n = items[0].len();
    let mut out = Vec::with_capacity(n);
    'rows: for row in 0..n {
        let mut responses = [0i64; 12];
        for (k, col) in items.iter().enumerate() {
            match col[row] {
                None => {
                    out.push(None);
                    continue 'rows;
                }
                Some(v) => {
                    if v.fract() != 0.0 || !(1.0..=4.0).contains(&v) {
                        return Err(Error::ResponseOutOfRange { value: v });
                    }
                    responses[k] = v as i64;
                }
            }
        }
        out.push(Some(ghq_likert_score(&responses)? as f64));
    }
    Ok(out)
}

/// Center and scale to sample (n−1) standard deviation 1 over the
/// non-missing cells; missing cells stay missing.
pub fn standardize(column: &str, cells: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    let values: Vec<f64> = cells.iter().flatten().copied().collect();
    if values.len() < 2 {
        return Err(Error::Standardize {
            column: column.into(),
            reason: format!("needs at least 2 non-missing values, found {}", values.len()),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let sd = (ss / (n - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(Error::Standardize { column: column.into(), reason: "zero variance".into() });
    }
    Ok(cells.iter().map(|c| c.map(|v| (v - mean) / sd)).collect())
}

/// Flip the sign of every non-missing cell.
pub fn negate(cells: &[Option<f64>]) -> Vec<Option<f64>> {
    cells.iter().map(|c| c.map(|v| -v)).collect()
}

/// One 0/1 indicator column per non-reference observed category, in
/// lexicographic category order. A row holds 1 in exactly one indicator, or
/// 0 in all of them iff it holds the reference; missing input gives missing
/// indicators.
pub fn dummy_code(
    column: &str,
    cells: &[Option<String>],
    reference: &str,
) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let observed: BTreeSet<&str> = cells.iter().flatten().map(String::as_str).collect();
    if !observed.contains(reference) {
        return Err(Error::UnknownReference {
            reference: reference.into(),
            column: column.into(),
        });
    }
    let categories: Vec<&str> = observed.into_iter().filter(|c| *c != reference).collect();
    let mut out = Vec::with_capacity(categories.len());
    for cat in categories {
        let cells: Vec<Option<f64>> = cells
            .iter()
            .map(|c| c.as_deref().map(|v| if v == cat { 1.0 } else { 0.0 }))
            .collect();
        out.push((cat.to_string(), cells));
    }
    Ok(out)
}

/// Multiply a 0/1 indicator by a (typically group-constant) rate, row by
/// row. Missing on either side propagates; an indicator value other than 0
/// or 1 is an error.
pub fn cross_level_interaction(
    indicator_name: &str,
    indicator: &[Option<f64>],
    rate: &[Option<f64>],
) -> Result<Vec<Option<f64>>> {
    assert_eq!(indicator.len(), rate.len());
    let mut out = Vec::with_capacity(indicator.len());
    for (row, (ind, r)) in indicator.iter().zip(rate).enumerate() {
        match (ind, r) {
            (Some(v), _) if *v != 0.0 && *v != 1.0 => {
                return Err(Error::NotAnIndicator {
                    column: indicator_name.into(),
                    value: *v,
                    row,
                });
            }
            (Some(v), Some(r)) => out.push(Some(v * r)),
            _ => out.push(None),
        }
    }
    Ok(out)
}

/// Values of the subunits of one group, for [`within_group_cv`].
#[derive(Debug, Clone)]
pub struct GroupValues {
    pub id: String,
    pub values: Vec<f64>,
}

/// Per-group outcome of the coefficient-of-variation computation. Degenerate
/// groups are reported, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CvOutcome {
    Ok { cv: f64 },
    InsufficientSubunits { count: usize },
    ZeroMean,
}

/// Sample standard deviation over mean of the subunit values, one CV per
/// group. Groups with fewer than two subunits or zero mean are reported per
/// group in the output.
pub fn within_group_cv(groups: &[GroupValues]) -> Vec<(String, CvOutcome)> {
    groups
        .iter()
        .map(|g| {
            let outcome = if g.values.len() < 2 {
                CvOutcome::InsufficientSubunits { count: g.values.len() }
            } else {
                let n = g.values.len() as f64;
                let mean = g.values.iter().sum::<f64>() / n;
                if mean == 0.0 {
                    CvOutcome::ZeroMean
                } else {
                    let ss = g.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                    CvOutcome::Ok { cv: (ss / (n - 1.0)).sqrt() / mean }
                }
            };
            (g.id.clone(), outcome)
        })
        .collect()
}

/// One declared transform step. Steps are applied in order and every output
/// name must be fresh.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TransformStep {
    /// Twelve-item score: `inputs` are the item columns, `output` the 0..36 scale.
    Score { inputs: Vec<String>, output: String },
    Standardize { input: String, output: String },
    Negate { input: String, output: String },
    /// Emits one column per non-reference category, named `<output_prefix>_<category>`.
    DummyCode { input: String, reference: String, output_prefix: String },
    Interact { indicator: String, rate: String, output: String },
    /// Group CVs computed from a subunit table and joined back at `group` (a
    /// level column of the dataset). `table` names a configured subunit table.
    Cv { table: String, group: String, value: String, output: String },
}

impl TransformStep {
    pub fn output_description(&self) -> String {
        match self {
            TransformStep::Score { output, .. }
            | TransformStep::Standardize { output, .. }
            | TransformStep::Negate { output, .. }
            | TransformStep::Interact { output, .. }
            | TransformStep::Cv { output, .. } => output.clone(),
            TransformStep::DummyCode { output_prefix, .. } => format!("{output_prefix}_*"),
        }
    }
}

/// Subunit rows for a Cv step: (group id, value) pairs.
#[derive(Debug, Clone)]
pub struct SubunitTable {
    pub name: String,
    pub rows: Vec<(String, Option<f64>)>,
}

/// Ordered list of transform steps.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TransformPlan {
    pub steps: Vec<TransformStep>,
}

/// What a plan application reports alongside the transformed dataset:
/// the columns each step produced and any degenerate CV groups.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TransformReport {
    pub produced: Vec<(String, Vec<String>)>,
    pub cv_issues: Vec<(String, String, CvOutcome)>,
}

impl TransformPlan {
    /// Apply the steps in order. `subunit_tables` supplies the rows for Cv
    /// steps, keyed by table name.
    pub fn apply(
        &self,
        ds: &HierarchicalDataset,
        subunit_tables: &[SubunitTable],
    ) -> Result<(HierarchicalDataset, TransformReport)> {
        let mut current = ds.clone();
        let mut report = TransformReport::default();
        for step in &self.steps {
            let mut produced = Vec::new();
            match step {
                TransformStep::Score { inputs, output } => {
                    let cols: Vec<&[Option<f64>]> = inputs
                        .iter()
                        .map(|c| current.numeric_column(c))
                        .collect::<Result<_>>()?;
                    let cells = ghq_likert_score_cells(&cols)?;
                    current = current.with_column(output, Column::Numeric(cells))?;
                    produced.push(output.clone());
                }
                TransformStep::Standardize { input, output } => {
                    let cells = standardize(input, current.numeric_column(input)?)?;
                    current = current.with_column(output, Column::Numeric(cells))?;
                    produced.push(output.clone());
                }
                TransformStep::Negate { input, output } => {
                    let cells = negate(current.numeric_column(input)?);
                    current = current.with_column(output, Column::Numeric(cells))?;
                    produced.push(output.clone());
                }
                TransformStep::DummyCode { input, reference, output_prefix } => {
                    let coded = dummy_code(input, current.categorical_column(input)?, reference)?;
                    for (category, cells) in coded {
                        let name = format!("{output_prefix}_{}", sanitize(&category));
                        current = current.with_column(&name, Column::Numeric(cells))?;
                        produced.push(name);
                    }
                }
                TransformStep::Interact { indicator, rate, output } => {
                    let cells = cross_level_interaction(
                        indicator,
                        current.numeric_column(indicator)?,
                        current.numeric_column(rate)?,
                    )?;
                    current = current.with_column(output, Column::Numeric(cells))?;
                    produced.push(output.clone());
                }
                TransformStep::Cv { table, group, value, output } => {
                    let sub = subunit_tables
                        .iter()
                        .find(|t| &t.name == table)
                        .ok_or_else(|| Error::Config(format!("unknown subunit table `{table}`")))?;
                    let cells = cv_join(&mut report, sub, group, value, &current)?;
                    current = current.with_column(output, Column::Numeric(cells))?;
                    produced.push(output.clone());
                }
            }
            report.produced.push((step.output_description(), produced));
        }
        Ok((current, report))
    }
}

fn sanitize(category: &str) -> String {
    category
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn cv_join(
    report: &mut TransformReport,
    sub: &SubunitTable,
    group_level: &str,
    _value: &str,
    ds: &HierarchicalDataset,
) -> Result<Vec<Option<f64>>> {
    let mut grouped: std::collections::BTreeMap<&str, Vec<f64>> = std::collections::BTreeMap::new();
    for (gid, v) in &sub.rows {
        if let Some(v) = v {
            grouped.entry(gid.as_str()).or_default().push(*v);
        }
    }
    let groups: Vec<GroupValues> = grouped
        .into_iter()
        .map(|(id, values)| GroupValues { id: id.to_string(), values })
        .collect();
    let outcomes = within_group_cv(&groups);
    let mut by_group: std::collections::BTreeMap<&str, f64> = std::collections::BTreeMap::new();
    for (id, outcome) in &outcomes {
        match outcome {
            CvOutcome::Ok { cv } => {
                by_group.insert(id.as_str(), *cv);
            }
            other => report.cv_issues.push((sub.name.clone(), id.clone(), other.clone())),
        }
    }
    let ids = ds.level_ids(group_level)?;
    Ok(ids.iter().map(|id| by_group.get(id.as_str()).copied()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ghq_score_endpoints() {
        assert_eq!(ghq_likert_score(&[1; 12]).unwrap(), 0, "least distressed");
        assert_eq!(ghq_likert_score(&[4; 12]).unwrap(), 36, "most distressed");
        let cycle: Vec<i64> = (0..12).map(|i| 1 + (i % 4)).collect();
        assert_eq!(ghq_likert_score(&cycle).unwrap(), 18);
    }

    #[test]
    fn ghq_score_rejects_out_of_range_and_wrong_count() {
        assert!(matches!(
            ghq_likert_score(&[5, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]),
            Err(Error::ResponseOutOfRange { .. })
        ));
        assert!(matches!(ghq_likert_score(&[1; 11]), Err(Error::ResponseCount { .. })));
    }

    #[test]
    fn ghq_cells_missing_item_makes_score_missing() {
        let mut items: Vec<Vec<Option<f64>>> = vec![vec![Some(2.0), Some(3.0)]; 12];
        items[5][1] = None;
        let refs: Vec<&[Option<f64>]> = items.iter().map(|v| v.as_slice()).collect();
        let scores = ghq_likert_score_cells(&refs).unwrap();
        assert_eq!(scores, vec![Some(12.0), None]);
    }

    #[test]
    fn standardize_symmetric_case() {
        let out = standardize("x", &[Some(1.0), Some(2.0), Some(3.0)]).unwrap();
        let vals: Vec<f64> = out.iter().map(|v| v.unwrap()).collect();
        assert_abs_diff_eq!(vals[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn standardize_passes_missing_through() {
        let out = standardize("x", &[Some(0.0), Some(10.0), None, Some(20.0)]).unwrap();
        assert_abs_diff_eq!(out[0].unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1].unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(out[2], None);
        assert_abs_diff_eq!(out[3].unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn standardize_rejects_constant_and_short_columns() {
        assert!(matches!(
            standardize("x", &[Some(5.0), Some(5.0), Some(5.0)]),
            Err(Error::Standardize { .. })
        ));
        assert!(matches!(standardize("x", &[Some(5.0), None]), Err(Error::Standardize { .. })));
    }

    #[test]
    fn standardize_output_has_mean_zero_sd_one() {
        let cells: Vec<Option<f64>> =
            (0..40).map(|i| if i % 7 == 0 { None } else { Some((i * i) as f64 / 3.0) }).collect();
        let out = standardize("x", &cells).unwrap();
        let vals: Vec<f64> = out.iter().flatten().copied().collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sd, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn negate_flips_and_round_trips() {
        let cells = vec![Some(1.0), Some(-2.0), Some(0.0), None];
        assert_eq!(negate(&cells), vec![Some(-1.0), Some(2.0), Some(0.0), None]);
        assert_eq!(negate(&negate(&cells)), cells);
        assert_eq!(negate(&[None, None]), vec![None, None]);
    }

    #[test]
    fn dummy_code_tenure_example() {
        let cells = vec![
            Some("own".to_string()),
            Some("private".to_string()),
            Some("social".to_string()),
            None,
        ];
        let coded = dummy_code("tenure", &cells, "own").unwrap();
        assert_eq!(coded.len(), 2);
        assert_eq!(coded[0].0, "private");
        assert_eq!(coded[1].0, "social");
        // social-renter row reads (0, 1); owner row reads (0, 0); missing stays missing
        assert_eq!(coded[0].1, vec![Some(0.0), Some(1.0), Some(0.0), None]);
        assert_eq!(coded[1].1, vec![Some(0.0), Some(0.0), Some(1.0), None]);
    }

    #[test]
    fn dummy_code_reference_only_column_gives_no_indicators() {
        let cells = vec![Some("own".to_string()), Some("own".to_string())];
        let coded = dummy_code("tenure", &cells, "own").unwrap();
        assert!(coded.is_empty());
    }

    #[test]
    fn dummy_code_unobserved_reference_is_an_error() {
        let cells = vec![Some("private".to_string())];
        assert!(matches!(
            dummy_code("tenure", &cells, "own"),
            Err(Error::UnknownReference { .. })
        ));
    }

    #[test]
    fn interaction_matches_quoted_example() {
        // Unemployed person in a district with rate 8.17 scores 8.17; everyone
        // else scores 0; missing indicator propagates.
        let ind = vec![Some(1.0), Some(0.0), None];
        let rate = vec![Some(8.17), Some(8.17), Some(8.17)];
        let out = cross_level_interaction("unemployed", &ind, &rate).unwrap();
        assert_eq!(out, vec![Some(8.17), Some(0.0), None]);
    }

    #[test]
    fn interaction_rejects_non_indicator() {
        let ind = vec![Some(2.0)];
        let rate = vec![Some(1.0)];
        assert!(matches!(
            cross_level_interaction("x", &ind, &rate),
            Err(Error::NotAnIndicator { .. })
        ));
    }

    #[test]
    fn cv_two_point_and_degenerate_groups() {
        let groups = vec![
            GroupValues { id: "flat".into(), values: vec![10.0, 10.0, 10.0] },
            GroupValues { id: "pair".into(), values: vec![5.0, 15.0] },
            GroupValues { id: "single".into(), values: vec![3.0] },
            GroupValues { id: "zero".into(), values: vec![-1.0, 1.0] },
        ];
        let out = within_group_cv(&groups);
        assert_eq!(out[0].1, CvOutcome::Ok { cv: 0.0 });
        match out[1].1 {
            // sd = sqrt(50) ~ 7.0711, mean = 10
            CvOutcome::Ok { cv } => assert_abs_diff_eq!(cv, 0.70711, epsilon = 5e-6),
            ref other => panic!("unexpected outcome {other:?}"),
        }
        assert_eq!(out[2].1, CvOutcome::InsufficientSubunits { count: 1 });
        assert_eq!(out[3].1, CvOutcome::ZeroMean);
    }
}
