//! Multilevel ordered-probit null models: a latent-variable cumulative
//! model with nested random intercepts, estimated by penalized
//! quasi-likelihood (first order about zero = MQL1, second order about the
//! current residual estimates = PQL2), with an adaptive-quadrature maximum
//! likelihood fitter as an independent reference for the 2-level case.
//!
//! The latent residual variance is fixed at 1 (probit identification), so
//! the variance components cover the grouping levels only. Cutpoints are
//! held as a first threshold plus log-gaps, which keeps the ordering strict
//! through every iteration.

mod quadrature;

pub use quadrature::{fit_ordered_probit_quadrature, gauss_hermite, marginal_ordinal_loglik};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{listwise_filter, HierarchicalDataset};
use crate::error::{Error, Result};
use crate::estimator::structure::NestingStructure;
use crate::estimator::{ConvergenceSettings, Flavor, NestedFactor, VarianceComponent};

pub(crate) fn norm_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

pub(crate) fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Cumulative probit cell probabilities:
/// `p_c = Φ(κ_c − offset) − Φ(κ_{c−1} − offset)` with κ_0 = −∞, κ_C = +∞.
/// The C probabilities telescope to exactly 1.
pub fn category_probabilities(cutpoints: &[f64], offset: f64) -> Result<Vec<f64>> {
    if cutpoints.is_empty() || cutpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::CutpointsNotIncreasing(cutpoints.to_vec()));
    }
    let mut probs = Vec::with_capacity(cutpoints.len() + 1);
    let mut prev = 0.0;
    for c in cutpoints {
        let cum = norm_cdf(c - offset);
        probs.push(cum - prev);
        prev = cum;
    }
    probs.push(1.0 - prev);
    Ok(probs)
}

/// Ordered-probit null model: an ordinal response plus the random levels
/// (outermost first, innermost = observation level).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderedProbitSpec {
    pub response: String,
    pub random_levels: Vec<String>,
}

impl OrderedProbitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.random_levels.is_empty() {
            return Err(Error::InvalidSpec("random_levels must be non-empty".into()));
        }
        Ok(())
    }
}

/// Strictly increasing thresholds held as first value + log-gaps.
#[derive(Debug, Clone)]
pub(crate) struct Cutpoints {
    first: f64,
    log_gaps: Vec<f64>,
}

const MIN_GAP: f64 = 1e-6;

impl Cutpoints {
    pub fn from_thresholds(t: &[f64]) -> Self {
        let first = t[0];
        let log_gaps =
            t.windows(2).map(|w| (w[1] - w[0]).max(MIN_GAP).ln()).collect();
        Self { first, log_gaps }
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.log_gaps.len() + 1);
        let mut v = self.first;
        out.push(v);
        for lg in &self.log_gaps {
            v += lg.exp();
            out.push(v);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrdinalMethod {
    #[serde(alias = "MQL1")]
    Mql1,
    #[serde(alias = "PQL2")]
    Pql2,
    #[serde(alias = "QUADRATURE")]
    Quadrature,
}

impl std::fmt::Display for OrdinalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OrdinalMethod::Mql1 => write!(f, "MQL1"),
            OrdinalMethod::Pql2 => write!(f, "PQL2"),
            OrdinalMethod::Quadrature => write!(f, "quadrature"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutpointEstimate {
    pub estimate: f64,
    pub se: f64,
}

/// Fit of an ordered-probit null model. Non-convergence is a reportable
/// outcome, not an error: the flag is returned and downstream reporting
/// records it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrdinalFitResult {
    pub method: OrdinalMethod,
    pub cutpoints: Vec<CutpointEstimate>,
    /// One component per grouping level; the latent residual is fixed at 1.
    pub varcomps: Vec<VarianceComponent>,
    pub converged: bool,
    pub iterations: usize,
    pub clamped_levels: Vec<String>,
    /// Observed category values, ascending.
    pub categories: Vec<f64>,
    pub n_rows: usize,
    pub response: String,
    pub random_levels: Vec<String>,
}

/// Ordinal data after listwise deletion: category index per subject plus
/// the subject-level structure.
pub(crate) struct OrdinalData {
    pub structure: NestingStructure,
    /// Category index (0-based) per subject, canonical order.
    pub cat: Vec<usize>,
    pub categories: Vec<f64>,
}

pub(crate) fn prepare_ordinal(
    ds: &HierarchicalDataset,
    spec: &OrderedProbitSpec,
) -> Result<OrdinalData> {
    spec.validate()?;
    let (fds, _) = listwise_filter(ds, std::slice::from_ref(&spec.response))?;
    if fds.n_rows() == 0 {
        return Err(Error::NoRows { columns: vec![spec.response.clone()] });
    }
    let id_refs: Vec<&[String]> = spec
        .random_levels
        .iter()
        .map(|l| fds.level_ids(l))
        .collect::<Result<_>>()?;
    let structure = NestingStructure::build(&spec.random_levels, &id_refs)?;
    for level in structure.levels() {
        if level.n_groups() < 2 {
            return Err(Error::SingleUnitLevel { level: level.name.clone() });
        }
    }
    for pair in structure.levels().windows(2) {
        if pair[0].n_groups() == pair[1].n_groups() {
            return Err(Error::CoincidentLevels {
                outer: pair[0].name.clone(),
                inner: pair[1].name.clone(),
            });
        }
    }
    let cells = fds.numeric_column(&spec.response)?;
    let values: Vec<f64> = structure.order().iter().map(|&i| cells[i].unwrap()).collect();
    let mut categories: Vec<f64> = values.clone();
    categories.sort_by(|a, b| a.partial_cmp(b).unwrap());
    categories.dedup();
    if categories.len() < 2 {
        return Err(Error::TooFewCategories(categories.len()));
    }
    let cat = values
        .iter()
        .map(|v| categories.iter().position(|c| c == v).unwrap())
        .collect();
    Ok(OrdinalData { structure, cat, categories })
}

/// Single-level (no random effects) ordered-probit maximum likelihood has a
/// closed form: κ_c = Φ⁻¹(cumulative share ≤ c).
pub(crate) fn marginal_cutpoints(cat: &[usize], n_categories: usize) -> Vec<f64> {
    let n = cat.len() as f64;
    let mut counts = vec![0usize; n_categories];
    for &c in cat {
        counts[c] += 1;
    }
    let mut cum = 0.0;
    let mut out = Vec::with_capacity(n_categories - 1);
    for c in counts.iter().take(n_categories - 1) {
        cum += *c as f64 / n;
        out.push(norm_quantile(cum.clamp(1e-9, 1.0 - 1e-9)));
    }
    out
}

/// Linearization safeguard: latent z values are clamped to this range when
/// building the working model.
const Z_CLAMP: f64 = 6.0;

/// Fit by penalized quasi-likelihood. `order` 1 expands about zero random
/// effects (MQL1); `order` 2 expands about the current empirical-Bayes
/// estimates and applies the second-order mean correction (PQL2), which is
/// the better-behaved variant. Listwise deletion on the response happens
/// here; the latent residual variance is fixed at 1.
pub fn fit_ordered_probit_pql(
    ds: &HierarchicalDataset,
    spec: &OrderedProbitSpec,
    order: u8,
    settings: &ConvergenceSettings,
) -> Result<OrdinalFitResult> {
    if !(order == 1 || order == 2) {
        return Err(Error::InvalidSpec(format!("PQL order must be 1 or 2, got {order}")));
    }
    settings.validate()?;
    let data = prepare_ordinal(ds, spec)?;
    let n_sub = data.cat.len();
    let n_cat = data.categories.len();
    let n_work = n_cat - 1;
    let m = data.structure.n_grouping_levels();

    // Working rows: C−1 per subject, in subject canonical order. The
    // working structure repeats the grouping ids and gets a synthetic
    // per-row identifier that preserves the subject order.
    let work_names: Vec<String> = spec.random_levels.clone();
    let width = format!("{n_sub}").len();
    let mut work_ids: Vec<Vec<String>> = vec![Vec::with_capacity(n_sub * n_work); m + 1];
    for s in 0..n_sub {
        for c in 0..n_work {
            for l in 0..m {
                let groups = data.structure.level(l);
                // group id of subject s at level l
                let g = match groups.bounds.binary_search(&s) {
                    Ok(i) => {
                        if i < groups.n_groups() {
                            i
                        } else {
                            i - 1
                        }
                    }
                    Err(i) => i - 1,
                };
                work_ids[l].push(groups.ids[g].clone());
            }
            work_ids[m].push(format!("S{s:0width$}C{c}"));
        }
    }
    let id_refs: Vec<&[String]> = work_ids.iter().map(|v| v.as_slice()).collect();
    let work_structure = NestingStructure::build(&work_names, &id_refs)?;
    let bounds: Vec<usize> = (0..=n_sub).map(|s| s * n_work).collect();

    // Indicator design for the cutpoints.
    let p = n_work;
    let mut x: Vec<Vec<f64>> = vec![vec![0.0; n_sub * n_work]; p];
    for s in 0..n_sub {
        for c in 0..n_work {
            x[c][s * n_work + c] = 1.0;
        }
    }

    // Cumulative indicators s_ic = 1{y_i ≤ c}.
    let mut cum_ind = vec![0.0; n_sub * n_work];
    for s in 0..n_sub {
        for c in 0..n_work {
            cum_ind[s * n_work + c] = if data.cat[s] <= c { 1.0 } else { 0.0 };
        }
    }

    let mut cuts = Cutpoints::from_thresholds(&marginal_cutpoints(&data.cat, n_cat));
    let mut sigma2 = vec![0.05; m];
    let mut eb: Vec<Vec<f64>> =
        (0..m).map(|l| vec![0.0; data.structure.level(l).n_groups()]).collect();
    let mut psd: Vec<Vec<f64>> =
        (0..m).map(|l| vec![0.0; data.structure.level(l).n_groups()]).collect();

    let mut converged = false;
    let mut iterations = 0;
    let mut kappa = cuts.thresholds();
    let mut cov_kappa = DMatrix::zeros(p, p);
    let mut var_info = DMatrix::zeros(m, m);
    let mut clamped = vec![false; m];

    for iter in 0..settings.max_iterations {
        iterations = iter + 1;
        let kappa_cur = cuts.thresholds();

        // Linearization point per subject.
        let mut theta_hat = vec![0.0; n_sub];
        let mut v_hat = vec![0.0; n_sub];
        if order == 2 {
            for l in 0..m {
                let groups = data.structure.level(l);
                for g in 0..groups.n_groups() {
                    for s in groups.range(g) {
                        theta_hat[s] += eb[l][g];
                        v_hat[s] += psd[l][g];
                    }
                }
            }
        }

        // Working responses and per-subject residual blocks. The
        // second-order term corrects the marginal mean, so it feeds the
        // cutpoint GLS; the variance step stays first-order about the
        // current estimates, because the correction's (θ−θ̂)² fluctuation
        // is shared within groups and would leak into the residual
        // cross-products as spurious between-group variance.
        let mut w_mean = vec![0.0; n_sub * n_work];
        let mut w_var = vec![0.0; n_sub * n_work];
        let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(n_sub);
        for s in 0..n_sub {
            let mut gamma = Vec::with_capacity(n_work);
            let mut phi = Vec::with_capacity(n_work);
            for c in 0..n_work {
                let z = (kappa_cur[c] - theta_hat[s]).clamp(-Z_CLAMP, Z_CLAMP);
                gamma.push(norm_cdf(z).clamp(1e-7, 1.0 - 1e-7));
                phi.push(norm_pdf(z));
            }
            for c in 1..n_work {
                if gamma[c] <= gamma[c - 1] {
                    gamma[c] = gamma[c - 1] + 1e-7;
                }
            }
            for c in 0..n_work {
                let z = (kappa_cur[c] - theta_hat[s]).clamp(-Z_CLAMP, Z_CLAMP);
                let base =
                    kappa_cur[c] - theta_hat[s] + (cum_ind[s * n_work + c] - gamma[c]) / phi[c];
                let correction =
                    if order == 2 { 0.5 * z * v_hat[s] } else { 0.0 };
                w_mean[s * n_work + c] = base + correction;
                w_var[s * n_work + c] = base;
            }
            // R = D⁻¹ Σ D⁻¹ with Σ the cumulative-indicator covariance
            // Cov(s_a, s_b) = γ_min(a,b) − γ_a γ_b and D = diag(φ).
            let mut r = DMatrix::zeros(n_work, n_work);
            for a in 0..n_work {
                for b in 0..n_work {
                    r[(a, b)] = (gamma[a.min(b)] - gamma[a] * gamma[b]) / (phi[a] * phi[b]);
                }
            }
            blocks.push(r);
        }

        // Gather into canonical working order.
        let ws_mean = work_structure.gather(&w_mean);
        let ws_var = work_structure.gather(&w_var);
        let xs: Vec<Vec<f64>> = x.iter().map(|c| work_structure.gather(c)).collect();
        let order_map = work_structure.order();
        // Base blocks must follow the canonical subject order.
        let mut block_order: Vec<usize> = Vec::with_capacity(n_sub);
        for pos in (0..n_sub * n_work).step_by(n_work) {
            block_order.push(order_map[pos] / n_work);
        }
        let blocks_sorted: Vec<DMatrix<f64>> =
            block_order.iter().map(|&s| blocks[s].clone()).collect();

        // Extreme linearizations (quasi-separated data pushing the variance
        // up) can leave R blocks on the edge of positive definiteness; a
        // growing ridge keeps the iteration alive so divergence surfaces as
        // a non-convergence flag rather than an exception.
        let factor_result = (|| {
            let mut ridge = 0.0;
            loop {
                let mut trial = blocks_sorted.clone();
                if ridge > 0.0 {
                    for b in trial.iter_mut() {
                        let bump = ridge * b.diagonal().amax().max(1.0);
                        for d in 0..n_work {
                            b[(d, d)] += bump;
                        }
                    }
                }
                match NestedFactor::with_block_base(
                    &work_structure,
                    &sigma2,
                    bounds.clone(),
                    trial,
                ) {
                    Ok(f) => return Ok(f),
                    Err(_) if ridge < 1.0 => {
                        ridge = if ridge == 0.0 { 1e-10 } else { ridge * 100.0 };
                    }
                    Err(e) => return Err(e),
                }
            }
        })();
        let factor = match factor_result {
            Ok(f) => f,
            Err(e) if iter == 0 => return Err(e),
            Err(_) => break,
        };

        let vinv_x: Vec<Vec<f64>> = xs
            .iter()
            .map(|col| {
                let mut c = col.clone();
                factor.solve(&mut c);
                c
            })
            .collect();
        let mut vinv_w_mean = ws_mean.clone();
        factor.solve(&mut vinv_w_mean);
        let mut xtvx = DMatrix::zeros(p, p);
        let mut xtvw = DVector::zeros(p);
        for j in 0..p {
            xtvw[j] = dot(&xs[j], &vinv_w_mean);
            for k in j..p {
                let v = dot(&xs[j], &vinv_x[k]);
                xtvx[(j, k)] = v;
                xtvx[(k, j)] = v;
            }
        }
        let chol = match Cholesky::new(xtvx).ok_or(Error::SingularGls) {
            Ok(c) => c,
            Err(e) if iter == 0 => return Err(e),
            Err(_) => break,
        };
        let kappa_new_v = chol.solve(&xtvw);
        cov_kappa = chol.inverse();
        let kappa_new: Vec<f64> = kappa_new_v.iter().copied().collect();

        // Residuals of the working model and the variance step.
        let mut vinv_w_var = ws_var.clone();
        factor.solve(&mut vinv_w_var);
        let n_rows_work = ws_var.len();
        let mut q = vec![0.0; n_rows_work];
        for i in 0..n_rows_work {
            let mut v = vinv_w_var[i];
            for j in 0..p {
                v -= vinv_x[j][i] * kappa_new_v[j];
            }
            q[i] = v;
        }
        let step = ordinal_variance_step(
            &work_structure,
            &factor,
            &xs,
            &vinv_x,
            &cov_kappa,
            &q,
            &bounds,
            &blocks,
            &block_order,
            settings.flavor,
        );
        let (sigma2_new, pins) = match crate::estimator::solve_nonnegative(&step.a, &step.b) {
            Ok(out) => out,
            Err(e) if iter == 0 => return Err(e),
            Err(_) => break,
        };
        if kappa_new.iter().chain(&sigma2_new).any(|v| !v.is_finite()) {
            // Numeric breakdown mid-divergence: report, do not throw.
            break;
        }
        clamped = pins;
        for (flag, v) in clamped.iter_mut().zip(&sigma2_new) {
            *flag |= *v == 0.0;
        }
        var_info = step.a.clone();

        // EB updates for the next linearization (loading is −1, so the
        // estimate flips sign).
        if order == 2 {
            for l in 0..m {
                let groups = work_structure.level(l);
                for g in 0..groups.n_groups() {
                    let range = groups.range(g);
                    let total: f64 = q[range.clone()].iter().sum();
                    eb[l][g] = -sigma2_new[l] * total;
                }
            }
            // Comparative variances from the diagonal of Z'V⁻¹Z.
            for l in 0..m {
                let groups = work_structure.level(l);
                for b in 0..work_structure.n_blocks() {
                    let block = work_structure.block(b);
                    let (g0, g1) = groups.block_spans[b];
                    for g in g0..g1 {
                        let range = groups.range(g);
                        let mut wv = vec![0.0; block.len()];
                        for i in range.clone() {
                            wv[i - block.start] = 1.0;
                        }
                        factor.solve_block(b, &mut wv);
                        let s: f64 = range.clone().map(|i| wv[i - block.start]).sum();
                        psd[l][g] =
                            (sigma2_new[l] - sigma2_new[l] * sigma2_new[l] * s).max(0.0);
                    }
                }
            }
        }

        // Convergence on cutpoints and variances.
        let mut change: f64 = 0.0;
        for (a, b) in kappa_cur.iter().zip(&kappa_new) {
            change = change.max(rel_change(*a, *b));
        }
        for (a, b) in sigma2.iter().zip(&sigma2_new) {
            change = change.max(rel_change(*a, *b));
        }
        cuts = Cutpoints::from_thresholds(&kappa_new);
        kappa = cuts.thresholds();
        sigma2 = sigma2_new;
        if iter > 0 && change < settings.rel_tolerance {
            converged = true;
            break;
        }
    }

    let var_info_inv = var_info.lu().try_inverse();
    let level_names = work_structure.level_names().to_vec();
    let varcomps = (0..m)
        .map(|l| VarianceComponent {
            level: level_names[l].clone(),
            variance: sigma2[l],
            se: var_info_inv
                .as_ref()
                .map(|inv| (2.0 * inv[(l, l)]).max(0.0).sqrt())
                .unwrap_or(0.0),
        })
        .collect();
    let cutpoints = kappa
        .iter()
        .enumerate()
        .map(|(c, k)| CutpointEstimate { estimate: *k, se: cov_kappa[(c, c)].max(0.0).sqrt() })
        .collect();
    Ok(OrdinalFitResult {
        method: if order == 1 { OrdinalMethod::Mql1 } else { OrdinalMethod::Pql2 },
        cutpoints,
        varcomps,
        converged,
        iterations,
        clamped_levels: (0..m)
            .filter(|&l| clamped[l] || sigma2[l] == 0.0)
            .map(|l| level_names[l].clone())
            .collect(),
        categories: data.categories,
        n_rows: n_sub,
        response: spec.response.clone(),
        random_levels: spec.random_levels.clone(),
    })
}

struct OrdinalStep {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

/// Variance step for the working model with *known* residual blocks R:
/// regress the residual cross-products on the grouping-level designs,
/// subtracting the known-R contribution from the expectation.
#[allow(clippy::too_many_arguments)]
fn ordinal_variance_step(
    st: &NestingStructure,
    factor: &NestedFactor,
    xs: &[Vec<f64>],
    vinv_x: &[Vec<f64>],
    cov: &DMatrix<f64>,
    q: &[f64],
    bounds: &[usize],
    blocks: &[DMatrix<f64>],
    block_order: &[usize],
    flavor: Flavor,
) -> OrdinalStep {
    let m = st.n_grouping_levels();
    let p = xs.len();
    let reml = flavor == Flavor::RemlLike;
    let n_work = if blocks.is_empty() { 1 } else { blocks[0].nrows() };

    let mut a: DMatrix<f64> = DMatrix::zeros(m, m);
    let mut b: DVector<f64> = DVector::zeros(m);
    let mut t1: DMatrix<f64> = DMatrix::zeros(m, m);
    let mut m_mats: Vec<DMatrix<f64>> = vec![DMatrix::zeros(p, p); if reml { m } else { 0 }];

    for l in 0..m {
        let groups = st.level(l);
        let mut total = 0.0;
        for g in 0..groups.n_groups() {
            let s: f64 = q[groups.range(g)].iter().sum();
            total += s * s;
        }
        b[l] = total;
    }

    // Applies R (block-diagonal by subject) to a block-local vector.
    let apply_r = |block_range: std::ops::Range<usize>, v: &[f64], out: &mut [f64]| {
        let start = block_range.start;
        let mut pos = start;
        while pos < block_range.end {
            let sub = pos / n_work;
            let r = &blocks[block_order[sub]];
            for i in 0..n_work {
                let mut acc = 0.0;
                for j in 0..n_work {
                    acc += r[(i, j)] * v[pos - start + j];
                }
                out[pos - start + i] = acc;
            }
            pos += n_work;
        }
        debug_assert_eq!(pos, block_range.end);
        let _ = bounds;
    };

    for block in 0..st.n_blocks() {
        let range = st.block(block);
        let (start, len) = (range.start, range.len());
        let mut group_ranges: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
        for l in 0..m {
            let (g0, g1) = st.level(l).block_spans[block];
            for g in g0..g1 {
                group_ranges.push((l, st.level(l).range(g)));
            }
        }
        let n_groups = group_ranges.len();
        let mut w_all: Vec<Vec<f64>> = Vec::with_capacity(n_groups);
        for (_, gr) in &group_ranges {
            let mut w = vec![0.0; len];
            for i in gr.clone() {
                w[i - start] = 1.0;
            }
            factor.solve_block(block, &mut w);
            w_all.push(w);
        }
        let mut s = vec![0.0; n_groups * n_groups];
        for (gi, w) in w_all.iter().enumerate() {
            for (hi, (_, hr)) in group_ranges.iter().enumerate() {
                s[gi * n_groups + hi] = w[hr.start - start..hr.end - start].iter().sum::<f64>();
            }
        }
        for (gi, (lg, _)) in group_ranges.iter().enumerate() {
            for (hi, (lh, _)) in group_ranges.iter().enumerate() {
                let v = s[gi * n_groups + hi];
                a[(*lg, *lh)] += v * v;
            }
        }

        // Known-R corrections to b: tr(V⁻¹G_l V⁻¹ R) (ML) or tr(P G_l P R).
        let mut rw = vec![0.0; len];
        if !reml {
            for (gi, (lg, _)) in group_ranges.iter().enumerate() {
                apply_r(range.clone(), &w_all[gi], &mut rw);
                b[*lg] -= dot(&w_all[gi], &rw);
            }
        } else {
            // x_g = Xᵀ w_g; pw_g = P 1_g = w_g − V⁻¹X C x_g.
            let mut xg: Vec<DVector<f64>> = Vec::with_capacity(n_groups);
            for w in &w_all {
                let mut v1 = DVector::zeros(p);
                for j in 0..p {
                    v1[j] = dot(&xs[j][range.clone()], w);
                }
                xg.push(v1);
            }
            let yg: Vec<DVector<f64>> = xg.iter().map(|v| cov * v).collect();
            for (gi, (lg, _)) in group_ranges.iter().enumerate() {
                let mut pw = w_all[gi].clone();
                for j in 0..p {
                    let coef = yg[gi][j];
                    if coef != 0.0 {
                        let col = &vinv_x[j][range.clone()];
                        for i in 0..len {
                            pw[i] -= coef * col[i];
                        }
                    }
                }
                apply_r(range.clone(), &pw, &mut rw);
                b[*lg] -= dot(&pw, &rw);
                for (hi, (lh, _)) in group_ranges.iter().enumerate() {
                    t1[(*lg, *lh)] += s[gi * n_groups + hi] * xg[gi].dot(&yg[hi]);
                }
                m_mats[*lg] += &xg[gi] * xg[gi].transpose();
            }
        }
    }

    if reml {
        let cm: Vec<DMatrix<f64>> = m_mats.iter().map(|mm| cov * mm).collect();
        for l in 0..m {
            for k in 0..m {
                let t2 = (&cm[l] * &cm[k]).trace();
                a[(l, k)] += t2 - 2.0 * t1[(l, k)];
            }
        }
    }

    OrdinalStep { a, b }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_change(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn category_probabilities_standard_cutpoints() {
        let p = category_probabilities(&[-1.0, 0.0, 1.0], 0.0).unwrap();
        let expect = [0.15866, 0.34134, 0.34134, 0.15866];
        for (got, want) in p.iter().zip(expect) {
            assert!((got - want).abs() < 5e-6, "{got} vs {want}");
        }
        // palindromic for symmetric cutpoints at offset zero
        assert_abs_diff_eq!(p[0], p[3], epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], p[2], epsilon = 1e-14);
    }

    #[test]
    fn category_probabilities_sum_to_one_and_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let k1 = rng.gen_range(-2.0..0.0);
            let cuts = vec![k1, k1 + rng.gen_range(0.1..1.5), k1 + rng.gen_range(1.6..3.0)];
            let offset = rng.gen_range(-2.0..2.0);
            let p = category_probabilities(&cuts, offset).unwrap();
            let sum: f64 = p.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
            // shifting cutpoints and offset together changes nothing
            let shift = rng.gen_range(-1.0..1.0);
            let shifted: Vec<f64> = cuts.iter().map(|c| c + shift).collect();
            let p2 = category_probabilities(&shifted, offset + shift).unwrap();
            for (x, y) in p.iter().zip(&p2) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn category_probabilities_reject_non_increasing() {
        assert!(matches!(
            category_probabilities(&[0.0, 0.0], 0.0),
            Err(Error::CutpointsNotIncreasing(_))
        ));
        assert!(matches!(
            category_probabilities(&[1.0, -1.0], 0.0),
            Err(Error::CutpointsNotIncreasing(_))
        ));
    }

    #[test]
    fn cutpoints_round_trip_and_ordering() {
        let cuts = Cutpoints::from_thresholds(&[-1.3, 0.2, 2.5]);
        let t = cuts.thresholds();
        assert_abs_diff_eq!(t[0], -1.3, epsilon = 1e-12);
        assert_abs_diff_eq!(t[1], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(t[2], 2.5, epsilon = 1e-12);
        // collapsing input gaps are floored, ordering preserved
        let cuts = Cutpoints::from_thresholds(&[0.5, 0.5, 0.5]);
        let t = cuts.thresholds();
        assert!(t[0] < t[1] && t[1] < t[2]);
    }

    #[test]
    fn marginal_cutpoints_match_quantiles() {
        // 25% / 50% / 25% split over three categories.
        let cat = vec![0, 0, 1, 1, 1, 1, 2, 2];
        let cuts = marginal_cutpoints(&cat, 3);
        assert_abs_diff_eq!(cuts[0], norm_quantile(0.25), epsilon = 1e-12);
        assert_abs_diff_eq!(cuts[1], norm_quantile(0.75), epsilon = 1e-12);
    }
}
