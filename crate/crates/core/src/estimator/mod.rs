//! K-level nested random-intercept linear models fitted by iterative
//! generalized least squares.
//!
//! The estimation loop alternates [`gls_fixed_effects`] (GLS for the fixed
//! coefficients under the current variance components) with
//! [`update_variance_components`] (a weighted regression of residual
//! cross-products on the variance design). The first pass uses an identity
//! weight, which is an ordinary-least-squares start. At the fixed point the
//! ML flavor solves the maximum-likelihood score equations and the
//! REML-like flavor the restricted ones; convergence is declared on
//! parameter change, not likelihood, since the iteration is not monotone in
//! the likelihood.

mod factor;
pub mod structure;
mod varstep;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{listwise_filter, HierarchicalDataset};
use crate::error::{Error, Result};

pub(crate) use factor::NestedFactor;
pub use structure::NestingStructure;
pub(crate) use varstep::solve_nonnegative;
use varstep::{variance_step, StepContext};

/// Estimation flavor: straight IGLS (maximum likelihood) or restricted
/// IGLS (REML-like), which corrects the variance step for the degrees of
/// freedom spent on the fixed effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Ml,
    RemlLike,
}

/// Convergence controls for the IGLS loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceSettings {
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    pub flavor: Flavor,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self { rel_tolerance: 1e-6, max_iterations: 200, flavor: Flavor::RemlLike }
    }
}

impl ConvergenceSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0) {
            return Err(Error::InvalidSpec("rel_tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidSpec("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// A model: response column, fixed-effect terms (intercept implicit) and
/// the ordered random-intercept levels, outermost first, the innermost
/// being the residual (observation) level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    #[serde(default)]
    pub fixed_terms: Vec<String>,
    pub random_levels: Vec<String>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.random_levels.is_empty() {
            return Err(Error::InvalidSpec("random_levels must be non-empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.fixed_terms {
            if !seen.insert(t) {
                return Err(Error::InvalidSpec(format!("duplicate fixed term `{t}`")));
            }
        }
        if self.fixed_terms.iter().any(|t| t == &self.response) {
            return Err(Error::InvalidSpec(format!(
                "response `{}` cannot also be a fixed term",
                self.response
            )));
        }
        let mut lv = std::collections::BTreeSet::new();
        for l in &self.random_levels {
            if !lv.insert(l) {
                return Err(Error::InvalidSpec(format!("duplicate random level `{l}`")));
            }
        }
        Ok(())
    }

    /// Columns the model reads, in listwise-deletion attribution order.
    pub fn used_columns(&self) -> Vec<String> {
        let mut cols = vec![self.response.clone()];
        cols.extend(self.fixed_terms.iter().cloned());
        cols
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedEffect {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub level: String,
    pub variance: f64,
    /// Large-sample approximation from the variance-step information matrix.
    pub se: f64,
}

/// Converged (or capped) fit of one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<FixedEffect>,
    /// One component per random level, residual level last.
    pub varcomps: Vec<VarianceComponent>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub clamped_levels: Vec<String>,
    pub flavor: Flavor,
    pub response: String,
    pub random_levels: Vec<String>,
    pub n_rows: usize,
}

impl FitResult {
    pub fn variances(&self) -> Vec<f64> {
        self.varcomps.iter().map(|v| v.variance).collect()
    }
}

/// Data gathered into canonical order, ready for the IGLS loop.
pub(crate) struct Prepared {
    pub structure: NestingStructure,
    /// Column-major design, intercept first, canonical order.
    pub x: Vec<Vec<f64>>,
    pub term_names: Vec<String>,
    pub y: Vec<f64>,
    /// Sample variance of the response, used for internal floors.
    pub scale: f64,
}

pub(crate) fn prepare(ds: &HierarchicalDataset, spec: &ModelSpec) -> Result<Prepared> {
    spec.validate()?;
    let (fds, _drops) = listwise_filter(ds, &spec.used_columns())?;
    if fds.n_rows() == 0 {
        return Err(Error::NoRows { columns: spec.used_columns() });
    }
    let id_refs: Vec<&[String]> = spec
        .random_levels
        .iter()
        .map(|l| fds.level_ids(l))
        .collect::<Result<_>>()?;
    let structure = NestingStructure::build(&spec.random_levels, &id_refs)?;

    let n = fds.n_rows();
    let mut x: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut term_names = vec!["intercept".to_string()];
    for term in &spec.fixed_terms {
        let cells = fds.numeric_column(term)?;
        let gathered: Vec<f64> = structure
            .order()
            .iter()
            .map(|&i| cells[i].expect("listwise filter leaves no missing cells"))
            .collect();
        x.push(gathered);
        term_names.push(term.clone());
    }
    let y_cells = fds.numeric_column(&spec.response)?;
    let y: Vec<f64> = structure
        .order()
        .iter()
        .map(|&i| y_cells[i].expect("listwise filter leaves no missing cells"))
        .collect();

    let mean = y.iter().sum::<f64>() / n as f64;
    let scale =
        (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0).max(1.0))
            .max(1e-12);

    check_rank(&x, &term_names)?;
    Ok(Prepared { structure, x, term_names, y, scale })
}

/// Modified Gram–Schmidt rank check, naming the collinear columns.
fn check_rank(x: &[Vec<f64>], names: &[String]) -> Result<()> {
    let n = x.first().map(Vec::len).unwrap_or(0);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut bad = Vec::new();
    for (j, col) in x.iter().enumerate() {
        let mut v = col.clone();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for i in 0..n {
                v[i] -= d * b[i];
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= 1e-8 * norm0 || norm0 == 0.0 {
            bad.push(names[j].clone());
        } else {
            for a in v.iter_mut() {
                *a /= norm;
            }
            basis.push(v);
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient { columns: bad })
    }
}

struct Pass {
    beta: DVector<f64>,
    cov: DMatrix<f64>,
    step: varstep::VarianceStep,
    logdet: f64,
    quad: f64,
}

fn one_pass(prep: &Prepared, theta: &[f64], flavor: Flavor, floor: f64) -> Result<Pass> {
    let m = prep.structure.n_grouping_levels();
    let p = prep.x.len();
    let factor = NestedFactor::iid(&prep.structure, &theta[..m], theta[m].max(floor));

    let vinv_x: Vec<Vec<f64>> = prep
        .x
        .iter()
        .map(|col| {
            let mut c = col.clone();
            factor.solve(&mut c);
            c
        })
        .collect();
    let mut vinv_y = prep.y.clone();
    factor.solve(&mut vinv_y);

    let mut xtvx = DMatrix::zeros(p, p);
    let mut xtvy = DVector::zeros(p);
    for j in 0..p {
        xtvy[j] = dot(&prep.x[j], &vinv_y);
        for k in j..p {
            let v = dot(&prep.x[j], &vinv_x[k]);
            xtvx[(j, k)] = v;
            xtvx[(k, j)] = v;
        }
    }
    let chol = Cholesky::new(xtvx).ok_or(Error::SingularGls)?;
    let beta = chol.solve(&xtvy);
    let cov = chol.inverse();

    let n = prep.y.len();
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut v = vinv_y[i];
        for j in 0..p {
            v -= vinv_x[j][i] * beta[j];
        }
        q[i] = v;
    }
    let quad: f64 = (0..n)
        .map(|i| {
            let mut e = prep.y[i];
            for j in 0..p {
                e -= prep.x[j][i] * beta[j];
            }
            e * q[i]
        })
        .sum();

    let ctx = StepContext { factor: &factor, x: &prep.x, vinv_x: &vinv_x, cov: &cov, q: &q };
    let step = variance_step(&prep.structure, &ctx, flavor);
    Ok(Pass { beta, cov, step, logdet: factor.logdet(), quad })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_change(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub(crate) fn fit_prepared(prep: &Prepared, settings: &ConvergenceSettings) -> Result<FitResult> {
    settings.validate()?;
    prep.structure.check_identifiable()?;
    let m = prep.structure.n_grouping_levels();
    let floor = prep.scale * 1e-12;

    // Identity weight start: the first pass is OLS plus one unweighted step.
    let mut theta = vec![0.0; m + 1];
    theta[m] = 1.0;
    let mut pinned = vec![false; m + 1];
    let mut prev: Option<(DVector<f64>, Vec<f64>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..settings.max_iterations {
        iterations = iter + 1;
        let pass = one_pass(prep, &theta, settings.flavor, floor)?;
        let (theta_new, pins) = solve_nonnegative(&pass.step.a, &pass.step.b)?;
        pinned = pins;
        for (flag, v) in pinned.iter_mut().zip(&theta_new) {
            *flag |= *v == 0.0;
        }
        if let Some((prev_beta, prev_theta)) = &prev {
            let mut change: f64 = 0.0;
            for (a, b) in prev_beta.iter().zip(pass.beta.iter()) {
                change = change.max(rel_change(*a, *b));
            }
            for (a, b) in prev_theta.iter().zip(&theta_new) {
                change = change.max(rel_change(*a, *b));
            }
            if change < settings.rel_tolerance {
                theta = theta_new;
                converged = true;
                break;
            }
        }
        prev = Some((pass.beta, theta_new.clone()));
        theta = theta_new;
    }

    // Reporting pass at the final variance components.
    let pass = one_pass(prep, &theta, settings.flavor, floor)?;
    let n = prep.y.len() as f64;
    let loglik = -0.5 * (pass.logdet + pass.quad + n * (2.0 * std::f64::consts::PI).ln());

    let info_inv = pass
        .step
        .a
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularVarianceStep)?;

    let level_name = |l: usize| prep.structure.level_names()[l].clone();
    let beta = prep
        .term_names
        .iter()
        .enumerate()
        .map(|(j, term)| FixedEffect {
            term: term.clone(),
            estimate: pass.beta[j],
            se: pass.cov[(j, j)].max(0.0).sqrt(),
        })
        .collect();
    let varcomps = (0..=m)
        .map(|l| VarianceComponent {
            level: level_name(l),
            variance: theta[l],
            se: (2.0 * info_inv[(l, l)]).max(0.0).sqrt(),
        })
        .collect();
    let clamped_levels =
        (0..=m).filter(|&l| pinned[l]).map(level_name).collect();

    Ok(FitResult {
        beta,
        varcomps,
        loglik,
        iterations,
        converged,
        clamped_levels,
        flavor: settings.flavor,
        response: String::new(),
        random_levels: prep.structure.level_names().to_vec(),
        n_rows: prep.y.len(),
    })
}

/// Fit the intercept-only ("null" or "empty") model: one variance per level
/// and a grand intercept.
pub fn fit_null(
    ds: &HierarchicalDataset,
    levels: &[String],
    response: &str,
) -> Result<FitResult> {
    let spec = ModelSpec {
        response: response.to_string(),
        fixed_terms: Vec::new(),
        random_levels: levels.to_vec(),
    };
    fit_random_intercept(ds, &spec, &ConvergenceSettings::default())
}

/// Fit a random-intercept model by iterative generalized least squares.
/// Listwise deletion over the model's columns happens here, per model.
pub fn fit_random_intercept(
    ds: &HierarchicalDataset,
    spec: &ModelSpec,
    settings: &ConvergenceSettings,
) -> Result<FitResult> {
    let prep = prepare(ds, spec)?;
    let mut fit = fit_prepared(&prep, settings)?;
    fit.response = spec.response.clone();
    Ok(fit)
}

/// Generalized least squares for the fixed effects under given variance
/// components (residual level last). Inputs are in original row order;
/// returns the coefficient vector and its covariance matrix.
///
/// The computation runs block by block over the outermost groups; the full
/// N×N covariance is never materialized.
pub fn gls_fixed_effects(
    x: &[Vec<f64>],
    y: &[f64],
    varcomps: &[f64],
    structure: &NestingStructure,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = structure.n_grouping_levels();
    if varcomps.len() != m + 1 {
        return Err(Error::InvalidSpec(format!(
            "expected {} variance components, got {}",
            m + 1,
            varcomps.len()
        )));
    }
    if varcomps.iter().any(|&v| v < 0.0) || varcomps[m] <= 0.0 {
        return Err(Error::InvalidSpec(
            "variances must be non-negative with positive residual variance".into(),
        ));
    }
    let factor = NestedFactor::iid(structure, &varcomps[..m], varcomps[m]);
    let p = x.len();
    let xs: Vec<Vec<f64>> = x.iter().map(|c| structure.gather(c)).collect();
    let ys = structure.gather(y);
    let vinv_x: Vec<Vec<f64>> = xs
        .iter()
        .map(|col| {
            let mut c = col.clone();
            factor.solve(&mut c);
            c
        })
        .collect();
    let mut vinv_y = ys.clone();
    factor.solve(&mut vinv_y);
    let mut xtvx = DMatrix::zeros(p, p);
    let mut xtvy = DVector::zeros(p);
    for j in 0..p {
        xtvy[j] = dot(&xs[j], &vinv_y);
        for k in j..p {
            let v = dot(&xs[j], &vinv_x[k]);
            xtvx[(j, k)] = v;
            xtvx[(k, j)] = v;
        }
    }
    let chol = Cholesky::new(xtvx).ok_or(Error::SingularGls)?;
    let beta = chol.solve(&xtvy);
    let cov = chol.inverse();
    let cov_rows = (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect();
    Ok((beta.iter().copied().collect(), cov_rows))
}

/// Outcome of one variance step.
#[derive(Debug, Clone)]
pub struct VarianceUpdate {
    /// New components, residual level last; negatives pinned to zero.
    pub variances: Vec<f64>,
    /// Names of the levels pinned at the zero bound.
    pub clamped_levels: Vec<String>,
}

/// One variance step from given residuals, weighted by the current
/// components (`current`, residual last). The design `x` is used only by
/// the REML-like flavor's degrees-of-freedom correction and may be empty
/// for a model with no fixed part. Inputs in original row order.
pub fn update_variance_components(
    residuals: &[f64],
    x: &[Vec<f64>],
    structure: &NestingStructure,
    current: &[f64],
    flavor: Flavor,
) -> Result<VarianceUpdate> {
    let m = structure.n_grouping_levels();
    if current.len() != m + 1 {
        return Err(Error::InvalidSpec(format!(
            "expected {} variance components, got {}",
            m + 1,
            current.len()
        )));
    }
    if current[m] <= 0.0 {
        return Err(Error::InvalidSpec("residual variance weight must be positive".into()));
    }
    structure.check_identifiable()?;
    let factor = NestedFactor::iid(structure, &current[..m], current[m]);
    let xs: Vec<Vec<f64>> = x.iter().map(|c| structure.gather(c)).collect();
    let p = xs.len();
    let vinv_x: Vec<Vec<f64>> = xs
        .iter()
        .map(|col| {
            let mut c = col.clone();
            factor.solve(&mut c);
            c
        })
        .collect();
    let cov = if p > 0 {
        let mut xtvx = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in j..p {
                let v = dot(&xs[j], &vinv_x[k]);
                xtvx[(j, k)] = v;
                xtvx[(k, j)] = v;
            }
        }
        Cholesky::new(xtvx).ok_or(Error::SingularGls)?.inverse()
    } else {
        DMatrix::zeros(0, 0)
    };
    let mut q = structure.gather(residuals);
    factor.solve(&mut q);
    let ctx = StepContext { factor: &factor, x: &xs, vinv_x: &vinv_x, cov: &cov, q: &q };
    let step = variance_step(structure, &ctx, flavor);
    let (variances, pinned) = solve_nonnegative(&step.a, &step.b)?;
    let clamped_levels = (0..=m)
        .filter(|&l| pinned[l] || variances[l] == 0.0)
        .map(|l| structure.level_names()[l].clone())
        .collect();
    Ok(VarianceUpdate { variances, clamped_levels })
}

/// Gaussian log-likelihood −½(log det V + êᵀV⁻¹ê + N log 2π), computed
/// blockwise at the given components and coefficients.
pub fn profile_loglik(
    ds: &HierarchicalDataset,
    spec: &ModelSpec,
    varcomps: &[f64],
    beta: &[f64],
) -> Result<f64> {
    let prep = prepare(ds, spec)?;
    let m = prep.structure.n_grouping_levels();
    if varcomps.len() != m + 1 {
        return Err(Error::InvalidSpec(format!(
            "expected {} variance components, got {}",
            m + 1,
            varcomps.len()
        )));
    }
    assert!(
        varcomps[m] > 0.0 && varcomps.iter().all(|&v| v >= 0.0),
        "covariance must be positive definite: non-negative variances, positive residual"
    );
    if beta.len() != prep.x.len() {
        return Err(Error::InvalidSpec(format!(
            "expected {} coefficients (intercept first), got {}",
            prep.x.len(),
            beta.len()
        )));
    }
    let factor = NestedFactor::iid(&prep.structure, &varcomps[..m], varcomps[m]);
    let n = prep.y.len();
    let mut e = vec![0.0; n];
    for i in 0..n {
        let mut v = prep.y[i];
        for (j, b) in beta.iter().enumerate() {
            v -= prep.x[j][i] * b;
        }
        e[i] = v;
    }
    let mut q = e.clone();
    factor.solve(&mut q);
    let quad = dot(&e, &q);
    Ok(-0.5 * (factor.logdet() + quad + n as f64 * (2.0 * std::f64::consts::PI).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Column, HierarchicalDataset};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn two_level_ds(groups: &[(&str, &[f64])]) -> HierarchicalDataset {
        let mut g = Vec::new();
        let mut p = Vec::new();
        let mut y = Vec::new();
        let mut i = 0;
        for (gid, values) in groups {
            for v in *values {
                g.push(gid.to_string());
                p.push(format!("P{i:04}"));
                y.push(Some(*v));
                i += 1;
            }
        }
        HierarchicalDataset::from_parts(
            vec!["group".into(), "person".into()],
            vec![g, p],
            vec![("y".into(), Column::Numeric(y))],
        )
        .unwrap()
    }

    fn structure_of(ds: &HierarchicalDataset) -> NestingStructure {
        let g = ds.level_ids("group").unwrap();
        let p = ds.level_ids("person").unwrap();
        NestingStructure::build(&["group".into(), "person".into()], &[g, p]).unwrap()
    }

    #[test]
    fn gls_of_exchangeable_pair_is_its_mean() {
        let ds = two_level_ds(&[("G1", &[0.0, 2.0])]);
        let st = structure_of(&ds);
        let x = vec![vec![1.0, 1.0]];
        let (beta, _cov) = gls_fixed_effects(&x, &[0.0, 2.0], &[1.0, 1.0], &st).unwrap();
        assert_abs_diff_eq!(beta[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gls_with_zero_group_variances_equals_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let g: Vec<String> = (0..n).map(|i| format!("G{}", i % 5)).collect();
        let p: Vec<String> = (0..n).map(|i| format!("P{i:03}")).collect();
        let st = NestingStructure::build(&["g".into(), "p".into()], &[&g, &p]).unwrap();
        let x = vec![
            vec![1.0; n],
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
        ];
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (beta, _) = gls_fixed_effects(&x, &y, &[0.0, 0.7], &st).unwrap();

        // plain OLS normal equations
        let mut xtx = DMatrix::zeros(2, 2);
        let mut xty = DVector::zeros(2);
        for j in 0..2 {
            xty[j] = dot(&x[j], &y);
            for k in 0..2 {
                xtx[(j, k)] = dot(&x[j], &x[k]);
            }
        }
        let ols = xtx.lu().solve(&xty).unwrap();
        assert_abs_diff_eq!(beta[0], ols[0], epsilon = 1e-12);
        assert_abs_diff_eq!(beta[1], ols[1], epsilon = 1e-12);
    }

    #[test]
    fn profile_loglik_unit_case() {
        // V = I, residual 0, single row: −½ log 2π.
        let ds = HierarchicalDataset::from_parts(
            vec!["person".into()],
            vec![vec!["P1".into()]],
            vec![("y".into(), Column::Numeric(vec![Some(3.0)]))],
        )
        .unwrap();
        let spec = ModelSpec {
            response: "y".into(),
            fixed_terms: vec![],
            random_levels: vec!["person".into()],
        };
        let ll = profile_loglik(&ds, &spec, &[1.0], &[3.0]).unwrap();
        assert_abs_diff_eq!(ll, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
    }

    #[test]
    fn quadratic_form_scales_with_residual_scale() {
        let ds = two_level_ds(&[("G1", &[1.0, 2.0]), ("G2", &[0.0, -1.0])]);
        let spec = ModelSpec {
            response: "y".into(),
            fixed_terms: vec![],
            random_levels: vec!["group".into(), "person".into()],
        };
        let vc = [0.5, 1.25];
        let n = 4.0;
        let base = profile_loglik(&ds, &spec, &vc, &[0.0]).unwrap();
        // Scaling every residual by c multiplies êᵀV⁻¹ê by c² with V fixed.
        let ds2 = two_level_ds(&[("G1", &[3.0, 6.0]), ("G2", &[0.0, -3.0])]);
        let scaled = profile_loglik(&ds2, &spec, &vc, &[0.0]).unwrap();
        let log2pi = (2.0 * std::f64::consts::PI).ln();
        let quad_base = -2.0 * base - n * log2pi;
        let quad_scaled = -2.0 * scaled - n * log2pi;
        // both include the same logdet; difference isolates the quadratic
        let logdet = {
            let st = structure_of(&ds);
            NestedFactor::iid(&st, &vc[..1], vc[1]).logdet()
        };
        assert_abs_diff_eq!((quad_scaled - logdet) / (quad_base - logdet), 9.0, epsilon = 1e-10);
    }

    #[test]
    fn one_step_reml_update_from_ols_equals_anova() {
        // Balanced two groups of two; OLS residuals from the grand mean.
        let g: Vec<String> = vec!["G1".into(), "G1".into(), "G2".into(), "G2".into()];
        let p: Vec<String> = (0..4).map(|i| format!("P{i}")).collect();
        let st = NestingStructure::build(&["g".into(), "p".into()], &[&g, &p]).unwrap();
        let y = [1.0_f64, 3.0, 4.0, 8.0];
        let mean = y.iter().sum::<f64>() / 4.0;
        let resid: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let x = vec![vec![1.0; 4]];
        let up = update_variance_components(&resid, &x, &st, &[0.0, 1.0], Flavor::RemlLike)
            .unwrap();
        // classical one-way ANOVA estimators
        let means = [2.0, 6.0];
        let ssw: f64 = (1.0 - 2.0f64).powi(2)
            + (3.0 - 2.0f64).powi(2)
            + (4.0 - 6.0f64).powi(2)
            + (8.0 - 6.0f64).powi(2);
        let msw = ssw / 2.0; // N - G = 2
        let msb = 2.0 * ((means[0] - mean).powi(2) + (means[1] - mean).powi(2)) / 1.0;
        let expect_group = (msb - msw) / 2.0;
        assert_abs_diff_eq!(up.variances[0], expect_group, epsilon = 1e-10);
        assert_abs_diff_eq!(up.variances[1], msw, epsilon = 1e-10);
    }

    #[test]
    fn variance_update_degenerate_split() {
        // Residuals equal within groups, groups differing: group variance
        // positive, residual variance pinned at zero.
        let g: Vec<String> =
            vec!["G1".into(), "G1".into(), "G2".into(), "G2".into(), "G3".into(), "G3".into()];
        let p: Vec<String> = (0..6).map(|i| format!("P{i}")).collect();
        let st = NestingStructure::build(&["g".into(), "p".into()], &[&g, &p]).unwrap();
        let resid = vec![-2.0, -2.0, 0.0, 0.0, 2.0, 2.0];
        let up =
            update_variance_components(&resid, &[], &st, &[0.0, 1.0], Flavor::Ml).unwrap();
        assert!(up.variances[0] > 0.0);
        assert_eq!(up.variances[1], 0.0);
        assert_eq!(up.clamped_levels, vec!["p".to_string()]);
    }

    #[test]
    fn one_observation_per_group_is_unidentifiable() {
        let g: Vec<String> = vec!["G1".into(), "G2".into(), "G3".into()];
        let p: Vec<String> = (0..3).map(|i| format!("P{i}")).collect();
        let st = NestingStructure::build(&["g".into(), "p".into()], &[&g, &p]).unwrap();
        let err = update_variance_components(&[1.0, -1.0, 0.5], &[], &st, &[0.0, 1.0], Flavor::Ml)
            .unwrap_err();
        assert!(matches!(err, Error::CoincidentLevels { .. }));
    }

    #[test]
    fn fit_clamps_residual_on_degenerate_data() {
        // Identical responses within groups, groups differ.
        let ds = two_level_ds(&[
            ("G1", &[0.0, 0.0, 0.0]),
            ("G2", &[1.0, 1.0, 1.0]),
            ("G3", &[5.0, 5.0, 5.0]),
        ]);
        let fit = fit_null(&ds, &["group".into(), "person".into()], "y").unwrap();
        assert_eq!(fit.varcomps[1].variance, 0.0);
        assert!(fit.clamped_levels.contains(&"person".to_string()));
        assert!(fit.varcomps[0].variance > 0.0);
    }

    #[test]
    fn fit_rejects_duplicate_of_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let groups: Vec<(String, Vec<f64>)> = (0..4)
            .map(|g| (format!("G{g}"), (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let refs: Vec<(&str, &[f64])> =
            groups.iter().map(|(g, v)| (g.as_str(), v.as_slice())).collect();
        let mut ds = two_level_ds(&refs);
        ds = ds
            .with_column("ones", Column::Numeric(vec![Some(1.0); ds.n_rows()]))
            .unwrap();
        let spec = ModelSpec {
            response: "y".into(),
            fixed_terms: vec!["ones".into()],
            random_levels: vec!["group".into(), "person".into()],
        };
        let err = fit_random_intercept(&ds, &spec, &ConvergenceSettings::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { columns } if columns == vec!["ones"]));
    }

    #[test]
    fn fit_is_row_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n_groups = 6;
        let mut rows: Vec<(String, String, f64)> = Vec::new();
        for g in 0..n_groups {
            let eff = rng.gen_range(-1.0..1.0);
            for i in 0..rng.gen_range(2..6) {
                rows.push((format!("G{g}"), format!("P{g}_{i}"), eff + rng.gen_range(-1.0..1.0)));
            }
        }
        let build = |rows: &[(String, String, f64)]| {
            HierarchicalDataset::from_parts(
                vec!["group".into(), "person".into()],
                vec![
                    rows.iter().map(|r| r.0.clone()).collect(),
                    rows.iter().map(|r| r.1.clone()).collect(),
                ],
                vec![(
                    "y".into(),
                    Column::Numeric(rows.iter().map(|r| Some(r.2)).collect()),
                )],
            )
            .unwrap()
        };
        let fit_a = fit_null(&build(&rows), &["group".into(), "person".into()], "y").unwrap();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        let fit_b = fit_null(&build(&shuffled), &["group".into(), "person".into()], "y").unwrap();
        for (a, b) in fit_a.varcomps.iter().zip(&fit_b.varcomps) {
            assert_abs_diff_eq!(a.variance, b.variance, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(
            fit_a.beta[0].estimate,
            fit_b.beta[0].estimate,
            epsilon = 1e-10
        );
    }

    #[test]
    fn converged_fit_is_self_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let groups: Vec<(String, Vec<f64>)> = (0..8)
            .map(|g| {
                let eff = rng.gen_range(-1.0..1.0f64);
                (format!("G{g}"), (0..5).map(|_| eff + rng.gen_range(-1.0..1.0)).collect())
            })
            .collect();
        let refs: Vec<(&str, &[f64])> =
            groups.iter().map(|(g, v)| (g.as_str(), v.as_slice())).collect();
        let ds = two_level_ds(&refs);
        let fit = fit_null(&ds, &["group".into(), "person".into()], "y").unwrap();
        assert!(fit.converged);
        let st = structure_of(&ds);
        let y: Vec<f64> = ds.numeric_column("y").unwrap().iter().map(|v| v.unwrap()).collect();
        let x = vec![vec![1.0; ds.n_rows()]];
        let (beta, _) = gls_fixed_effects(&x, &y, &fit.variances(), &st).unwrap();
        assert_abs_diff_eq!(beta[0], fit.beta[0].estimate, epsilon = 1e-5);
    }

    #[test]
    fn single_unit_level_errors_by_name() {
        let ds = two_level_ds(&[("G1", &[1.0, 2.0, 3.0])]);
        let err = fit_null(&ds, &["group".into(), "person".into()], "y").unwrap_err();
        assert!(matches!(err, Error::SingleUnitLevel { level } if level == "group"));
    }
}
