//! Reported quantities derived from fits: intra-class correlations,
//! significance flags, and null-vs-full variance comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{FitResult, FixedEffect};

/// Per-level share of the total variance. `proportion_x100` is the
/// percentage form the reports print; display rounding happens at format
/// time only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariancePartition {
    pub levels: Vec<String>,
    pub variances: Vec<f64>,
    pub proportions: Vec<f64>,
    pub proportion_x100: Vec<f64>,
}

/// Intra-class correlations: each level's variance over the total.
pub fn intra_class_correlations(varcomps: &[(String, f64)]) -> Result<VariancePartition> {
    let total: f64 = varcomps.iter().map(|(_, v)| v).sum();
    if varcomps.iter().any(|(_, v)| *v < 0.0) {
        return Err(Error::InvalidSpec("variance components must be non-negative".into()));
    }
    if total <= 0.0 {
        return Err(Error::AllVariancesZero);
    }
    let levels = varcomps.iter().map(|(l, _)| l.clone()).collect();
    let variances: Vec<f64> = varcomps.iter().map(|(_, v)| *v).collect();
    let proportions: Vec<f64> = variances.iter().map(|v| v / total).collect();
    let proportion_x100 = proportions.iter().map(|p| 100.0 * p).collect();
    Ok(VariancePartition { levels, variances, proportions, proportion_x100 })
}

impl VariancePartition {
    pub fn from_fit(fit: &FitResult) -> Result<Self> {
        let pairs: Vec<(String, f64)> =
            fit.varcomps.iter().map(|v| (v.level.clone(), v.variance)).collect();
        intra_class_correlations(&pairs)
    }
}

/// Outcome of the |estimate|/se > threshold check for one term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceFlag {
    Flagged,
    NotFlagged,
    /// Zero standard error: the ratio is undefined and reported as such.
    Undefined,
}

impl std::fmt::Display for SignificanceFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SignificanceFlag::Flagged => write!(f, "true"),
            SignificanceFlag::NotFlagged => write!(f, "false"),
            SignificanceFlag::Undefined => write!(f, "undefined"),
        }
    }
}

/// Flag coefficients whose |estimate| / se exceeds the critical value
/// (1.96 for the two-sided normal 5% level).
pub fn significance_flags(
    beta: &[FixedEffect],
    threshold: f64,
) -> Vec<(String, SignificanceFlag)> {
    beta.iter()
        .map(|b| {
            let flag = if b.se == 0.0 {
                SignificanceFlag::Undefined
            } else if (b.estimate / b.se).abs() > threshold {
                SignificanceFlag::Flagged
            } else {
                SignificanceFlag::NotFlagged
            };
            (b.term.clone(), flag)
        })
        .collect()
}

pub const DEFAULT_SIGNIFICANCE_THRESHOLD: f64 = 1.96;

/// One level's row in a null-vs-full comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceReductionRow {
    pub level: String,
    pub null_variance: f64,
    pub full_variance: f64,
    pub change: f64,
    /// (full − null)/null; undefined (None) when the null variance is 0.
    pub proportional_change: Option<f64>,
    pub null_icc_x100: f64,
    pub full_icc_x100: f64,
    pub icc_change_x100: f64,
}

/// Per-level variance changes between a null fit and a fit with
/// explanatory variables, with the two ICC×100 vectors side by side.
pub fn variance_reduction(null: &FitResult, full: &FitResult) -> Result<Vec<VarianceReductionRow>> {
    let a: Vec<String> = null.varcomps.iter().map(|v| v.level.clone()).collect();
    let b: Vec<String> = full.varcomps.iter().map(|v| v.level.clone()).collect();
    if a != b {
        return Err(Error::LevelMismatch { a, b });
    }
    if !null.response.is_empty() && !full.response.is_empty() && null.response != full.response {
        return Err(Error::InvalidSpec(format!(
            "fits model different responses: `{}` vs `{}`",
            null.response, full.response
        )));
    }
    let icc_null = VariancePartition::from_fit(null)?;
    let icc_full = VariancePartition::from_fit(full)?;
    Ok(null
        .varcomps
        .iter()
        .zip(&full.varcomps)
        .enumerate()
        .map(|(i, (n, f))| VarianceReductionRow {
            level: n.level.clone(),
            null_variance: n.variance,
            full_variance: f.variance,
            change: f.variance - n.variance,
            proportional_change: if n.variance > 0.0 {
                Some((f.variance - n.variance) / n.variance)
            } else {
                None
            },
            null_icc_x100: icc_null.proportion_x100[i],
            full_icc_x100: icc_full.proportion_x100[i],
            icc_change_x100: icc_full.proportion_x100[i] - icc_null.proportion_x100[i],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn named(vs: &[f64]) -> Vec<(String, f64)> {
        vs.iter().enumerate().map(|(i, v)| (format!("L{i}"), *v)).collect()
    }

    #[test]
    fn icc_four_level_wellbeing_column() {
        let part = intra_class_correlations(&named(&[0.002, 0.007, 0.141, 0.814])).unwrap();
        let expect = [0.21, 0.73, 14.63, 84.44];
        for (got, want) in part.proportion_x100.iter().zip(expect) {
            assert!((got - want).abs() < 0.01, "{got} vs {want}");
        }
        let sum: f64 = part.proportions.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        let sum_x100: f64 = part.proportion_x100.iter().sum();
        assert_abs_diff_eq!(sum_x100, 100.0, epsilon = 1e-10);
    }

    #[test]
    fn icc_happiness_column_and_single_source() {
        let part = intra_class_correlations(&named(&[0.0, 0.0, 0.081, 0.918])).unwrap();
        let expect = [0.0, 0.0, 8.11, 91.89];
        for (got, want) in part.proportion_x100.iter().zip(expect) {
            assert!((got - want).abs() < 0.01, "{got} vs {want}");
        }
        let part = intra_class_correlations(&named(&[0.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(part.proportion_x100, vec![0.0, 0.0, 0.0, 100.0]);
    }

    #[test]
    fn icc_rejects_all_zero() {
        assert!(matches!(
            intra_class_correlations(&named(&[0.0, 0.0])),
            Err(Error::AllVariancesZero)
        ));
    }

    #[test]
    fn icc_is_scale_invariant() {
        let a = intra_class_correlations(&named(&[0.1, 0.4, 0.5])).unwrap();
        let b = intra_class_correlations(&named(&[0.7, 2.8, 3.5])).unwrap();
        for (x, y) in a.proportions.iter().zip(&b.proportions) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    fn fx(term: &str, estimate: f64, se: f64) -> FixedEffect {
        FixedEffect { term: term.into(), estimate, se }
    }

    #[test]
    fn significance_examples_from_reports() {
        let flags = significance_flags(
            &[
                fx("unemployed", -0.451, 0.043),
                fx("commute_short", 0.012, 0.032),
                fx("null_effect", 0.0, 0.5),
                fx("degenerate", 1.0, 0.0),
            ],
            DEFAULT_SIGNIFICANCE_THRESHOLD,
        );
        assert_eq!(flags[0].1, SignificanceFlag::Flagged);
        assert_eq!(flags[1].1, SignificanceFlag::NotFlagged);
        assert_eq!(flags[2].1, SignificanceFlag::NotFlagged);
        assert_eq!(flags[3].1, SignificanceFlag::Undefined);
    }

    #[test]
    fn significance_invariant_under_joint_rescaling() {
        let a = significance_flags(&[fx("x", -0.3, 0.1)], 1.96);
        let b = significance_flags(&[fx("x", -3.0, 1.0)], 1.96);
        assert_eq!(a[0].1, b[0].1);
    }

    fn fit_with(vs: &[f64]) -> FitResult {
        use crate::estimator::{Flavor, VarianceComponent};
        FitResult {
            beta: vec![],
            varcomps: vs
                .iter()
                .enumerate()
                .map(|(i, v)| VarianceComponent {
                    level: format!("L{i}"),
                    variance: *v,
                    se: 0.01,
                })
                .collect(),
            loglik: 0.0,
            iterations: 1,
            converged: true,
            clamped_levels: vec![],
            flavor: Flavor::RemlLike,
            response: "y".into(),
            random_levels: (0..vs.len()).map(|i| format!("L{i}")).collect(),
            n_rows: 100,
        }
    }

    #[test]
    fn variance_reduction_reports_icc_changes() {
        // District ICC×100 going 0.37 -> 0.28 reads as a change of −0.09.
        let null = fit_with(&[0.0037, 0.9963]);
        let full = fit_with(&[0.0028, 0.9972]);
        let rows = variance_reduction(&null, &full).unwrap();
        assert_abs_diff_eq!(rows[0].null_icc_x100, 0.37, epsilon = 1e-10);
        assert_abs_diff_eq!(rows[0].full_icc_x100, 0.28, epsilon = 1e-10);
        assert_abs_diff_eq!(rows[0].icc_change_x100, -0.09, epsilon = 1e-10);
    }

    #[test]
    fn variance_reduction_of_identical_fits_is_zero() {
        let fit = fit_with(&[0.1235, 0.8765]);
        let rows = variance_reduction(&fit, &fit).unwrap();
        for row in rows {
            assert_eq!(row.change, 0.0);
            assert_eq!(row.icc_change_x100, 0.0);
            assert_eq!(row.proportional_change, Some(0.0));
        }
    }

    #[test]
    fn variance_reduction_rejects_mismatched_levels() {
        let null = fit_with(&[0.1, 0.9]);
        let mut full = fit_with(&[0.1, 0.9]);
        full.varcomps[0].level = "other".into();
        assert!(matches!(
            variance_reduction(&null, &full),
            Err(Error::LevelMismatch { .. })
        ));
    }
}
