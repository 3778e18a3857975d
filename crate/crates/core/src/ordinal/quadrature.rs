//! Maximum-likelihood reference fit of the 2-level ordered-probit null
//! model by adaptive Gauss–Hermite quadrature over the group random effect.
//! Serves as the independent check on the PQL fits.

use nalgebra::DMatrix;

use crate::dataset::HierarchicalDataset;
use crate::error::{Error, Result};
use crate::estimator::VarianceComponent;
use crate::optimize::{coordinate_polish, nelder_mead};

use super::{
    marginal_cutpoints, norm_cdf, norm_pdf, prepare_ordinal, CutpointEstimate, Cutpoints,
    OrderedProbitSpec, OrdinalFitResult, OrdinalMethod,
};

/// Nodes and weights of n-point Gauss–Hermite quadrature for weight
/// function exp(−x²).
///
/// Roots are found by Newton iteration on the orthonormal Hermite
/// recurrence and weights come from the derivative relation
/// `w = 2 / (√(2n) p_{n−1}(x))²`. Unlike the eigenvector method this keeps
/// full relative precision in the extreme weights, which matters because
/// the adaptive scheme multiplies them by exp(x²).
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 3 {
        return Err(Error::TooFewNodes(n));
    }
    // Beyond ~200 nodes the extreme weights leave f64 range.
    if n > 200 {
        return Err(Error::InvalidSpec(format!(
            "gauss_hermite supports at most 200 nodes, got {n}"
        )));
    }
    let quarter_pi = std::f64::consts::PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            // Orthonormal recurrence p_{j+1} = x√(2/(j+1)) p_j − √(j/(j+1)) p_{j−1}.
            let mut p1 = quarter_pi;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    // Roots were found largest first; report ascending.
    nodes.reverse();
    weights.reverse();
    Ok((nodes, weights))
}

/// Category counts per group: all the likelihood needs from the data.
struct GroupCounts {
    counts: Vec<Vec<f64>>,
}

/// Log of one group's integrand at latent scale value t:
/// log φ(t) + Σ_c n_c log P_c(κ − σt).
fn log_integrand(counts: &[f64], kappa: &[f64], sigma: f64, t: f64) -> f64 {
    let mut h = -0.5 * t * t - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let offset = sigma * t;
    let mut prev = 0.0;
    for (c, n_c) in counts.iter().enumerate() {
        let cum = if c + 1 == counts.len() { 1.0 } else { norm_cdf(kappa[c] - offset) };
        if *n_c > 0.0 {
            h += n_c * (cum - prev).max(1e-300).ln();
        }
        prev = cum;
    }
    h
}

/// First and second derivatives of the log integrand in t.
fn log_integrand_derivs(counts: &[f64], kappa: &[f64], sigma: f64, t: f64) -> (f64, f64) {
    let n_cat = counts.len();
    let offset = sigma * t;
    let mut d1 = -t;
    let mut d2 = -1.0;
    for c in 0..n_cat {
        if counts[c] == 0.0 {
            continue;
        }
        let (zl, zu) = (
            if c == 0 { f64::NEG_INFINITY } else { kappa[c - 1] - offset },
            if c + 1 == n_cat { f64::INFINITY } else { kappa[c] - offset },
        );
        let (pl, pu) = (
            if zl.is_finite() { norm_pdf(zl) } else { 0.0 },
            if zu.is_finite() { norm_pdf(zu) } else { 0.0 },
        );
        let (cl, cu) = (
            if zl.is_finite() { norm_cdf(zl) } else { 0.0 },
            if zu.is_finite() { norm_cdf(zu) } else { 1.0 },
        );
        let p = (cu - cl).max(1e-300);
        // dP/dt = σ(φ_l − φ_u); d²P/dt² = σ²(z_u φ_u − z_l φ_l)
        let dp = sigma * (pl - pu);
        let ddp = sigma
            * sigma
            * ((if zu.is_finite() { zu * pu } else { 0.0 })
                - (if zl.is_finite() { zl * pl } else { 0.0 }));
        d1 += counts[c] * dp / p;
        d2 += counts[c] * (ddp * p - dp * dp) / (p * p);
    }
    (d1, d2)
}

/// One group's log-likelihood by adaptive Gauss–Hermite: center at the mode
/// of the integrand, scale by its curvature.
/// Mode of the log integrand by safeguarded Newton on its derivative:
/// bracket the root of h′, then mix Newton steps with bisection. Plain
/// Newton can cycle here because the curvature varies strongly over the
/// cumulative-probit likelihood.
fn integrand_mode(counts: &[f64], kappa: &[f64], sigma: f64) -> f64 {
    let d1_at = |t: f64| log_integrand_derivs(counts, kappa, sigma, t).0;
    let mut lo = -8.0;
    let mut hi = 8.0;
    let mut grow = 0;
    while d1_at(lo) <= 0.0 && grow < 20 {
        lo *= 1.6;
        grow += 1;
    }
    grow = 0;
    while d1_at(hi) >= 0.0 && grow < 20 {
        hi *= 1.6;
        grow += 1;
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..100 {
        let (d1, d2) = log_integrand_derivs(counts, kappa, sigma, t);
        if d1 > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = if d2 < -1e-12 { t - d1 / d2 } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() < 1e-12 * t.abs().max(1.0) {
            return next;
        }
        t = next;
    }
    t
}

fn group_loglik(
    counts: &[f64],
    kappa: &[f64],
    sigma: f64,
    nodes: &[f64],
    weights: &[f64],
) -> f64 {
    let t = integrand_mode(counts, kappa, sigma);
    let (_, d2) = log_integrand_derivs(counts, kappa, sigma, t);
    let lambda = if d2 < -1e-8 { (-d2).sqrt().recip() } else { 1.0 };

    let sqrt2_lambda = std::f64::consts::SQRT_2 * lambda;
    let mut max_term = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(nodes.len());
    for (x, w) in nodes.iter().zip(weights) {
        let tt = t + sqrt2_lambda * x;
        let v = w.ln() + x * x + log_integrand(counts, kappa, sigma, tt);
        terms.push(v);
        if v > max_term {
            max_term = v;
        }
    }
    let sum: f64 = terms.iter().map(|v| (v - max_term).exp()).sum();
    max_term + sum.ln() + sqrt2_lambda.ln()
}

fn total_nll(
    groups: &GroupCounts,
    kappa: &[f64],
    sigma: f64,
    nodes: &[f64],
    weights: &[f64],
) -> f64 {
    -groups
        .counts
        .iter()
        .map(|c| group_loglik(c, kappa, sigma, nodes, weights))
        .sum::<f64>()
}

/// Marginal log-likelihood of a 2-level ordered-probit null model at given
/// cutpoints and group variance, by adaptive Gauss–Hermite quadrature.
/// Useful for checking quadrature accuracy independently of the fitter.
pub fn marginal_ordinal_loglik(
    ds: &HierarchicalDataset,
    spec: &OrderedProbitSpec,
    cutpoints: &[f64],
    group_variance: f64,
    n_nodes: usize,
) -> Result<f64> {
    if spec.random_levels.len() != 2 {
        return Err(Error::QuadratureLevels(spec.random_levels.len()));
    }
    if cutpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::CutpointsNotIncreasing(cutpoints.to_vec()));
    }
    let (nodes, weights) = gauss_hermite(n_nodes)?;
    let data = prepare_ordinal(ds, spec)?;
    let n_cat = data.categories.len();
    let level = data.structure.level(0);
    let mut counts = vec![vec![0.0; n_cat]; level.n_groups()];
    for g in 0..level.n_groups() {
        for s in level.range(g) {
            counts[g][data.cat[s]] += 1.0;
        }
    }
    let sigma = group_variance.max(0.0).sqrt();
    Ok(counts
        .iter()
        .map(|c| group_loglik(c, cutpoints, sigma, &nodes, &weights))
        .sum())
}

/// ML fit of the 2-level ordered-probit null model (one grouping level plus
/// the observation level) by adaptive Gauss–Hermite quadrature with the
/// given number of nodes (21 by default elsewhere). Intended as the
/// reference the PQL fits are verified against.
pub fn fit_ordered_probit_quadrature(
    ds: &HierarchicalDataset,
    spec: &OrderedProbitSpec,
    n_nodes: usize,
) -> Result<OrdinalFitResult> {
    if spec.random_levels.len() != 2 {
        return Err(Error::QuadratureLevels(spec.random_levels.len()));
    }
    let (nodes, weights) = gauss_hermite(n_nodes)?;
    let data = prepare_ordinal(ds, spec)?;
    let n_cat = data.categories.len();
    let n_cuts = n_cat - 1;

    let level = data.structure.level(0);
    let mut counts = vec![vec![0.0; n_cat]; level.n_groups()];
    for g in 0..level.n_groups() {
        for s in level.range(g) {
            counts[g][data.cat[s]] += 1.0;
        }
    }
    let groups = GroupCounts { counts };

    // Parameters: first cutpoint, log-gaps, sigma (σ ≥ 0 via |σ| in the
    // rough solve, boundary-aware polish after).
    let start_cuts = Cutpoints::from_thresholds(&marginal_cutpoints(&data.cat, n_cat));
    let mut start = vec![start_cuts.first];
    start.extend(start_cuts.log_gaps.iter().copied());
    start.push(0.3);

    let mut evals = 0usize;
    let mut objective = |params: &[f64]| -> f64 {
        evals += 1;
        let cuts = Cutpoints { first: params[0], log_gaps: params[1..n_cuts].to_vec() };
        let kappa = cuts.thresholds();
        let sigma = params[n_cuts].abs();
        total_nll(&groups, &kappa, sigma, &nodes, &weights)
    };

    let scale = vec![0.1; n_cuts + 1];
    let (rough, _) = nelder_mead(&mut objective, &start, &scale, 600, 1e-13);
    let mut rough = rough;
    rough[n_cuts] = rough[n_cuts].abs();
    let mut bounds = vec![(-8.0, 8.0); 1];
    bounds.extend(vec![(-8.0, 3.0); n_cuts - 1]);
    bounds.push((0.0, 6.0));
    // Alternate coordinate polish with a restarted simplex: the restart
    // makes the joint moves coordinate descent is slow at, the polish pins
    // boundary optima exactly.
    let (mid, _) = coordinate_polish(&mut objective, &rough, &bounds, 6, 1e-12);
    let small = vec![1e-3; n_cuts + 1];
    let (mid2, _) = nelder_mead(&mut objective, &mid, &small, 400, 1e-15);
    let mut mid2 = mid2;
    mid2[n_cuts] = mid2[n_cuts].abs();
    let (solution, nll) = coordinate_polish(&mut objective, &mid2, &bounds, 4, 1e-12);
    if !nll.is_finite() {
        return Err(Error::OptimizerFailed("quadrature likelihood not finite".into()));
    }

    let cuts = Cutpoints { first: solution[0], log_gaps: solution[1..n_cuts].to_vec() };
    let kappa = cuts.thresholds();
    let sigma = solution[n_cuts];

    // Standard errors by finite-difference Hessian in the working
    // parameters, delta method to thresholds and variance. At a σ = 0
    // boundary the σ row is excluded and its standard error reported as 0.
    let free: Vec<usize> =
        if sigma > 1e-6 { (0..=n_cuts).collect() } else { (0..n_cuts).collect() };
    let h = 1e-4;
    let nf = free.len();
    let mut hess = DMatrix::zeros(nf, nf);
    let base = objective(&solution);
    for (ri, &i) in free.iter().enumerate() {
        for (ci, &j) in free.iter().enumerate().skip(ri) {
            let mut pp = solution.clone();
            pp[i] += h;
            pp[j] += h;
            let fpp = objective(&pp);
            let mut pm = solution.clone();
            pm[i] += h;
            pm[j] -= h;
            let fpm = objective(&pm);
            let mut mp = solution.clone();
            mp[i] -= h;
            mp[j] += h;
            let fmp = objective(&mp);
            let mut mm = solution.clone();
            mm[i] -= h;
            mm[j] -= h;
            let fmm = objective(&mm);
            let v = if i == j {
                // pp/mm carry a double step here, so the stencil is ±2h.
                (fpp - 2.0 * base + fmm) / (4.0 * h * h)
            } else {
                (fpp - fpm - fmp + fmm) / (4.0 * h * h)
            };
            hess[(ri, ci)] = v;
            hess[(ci, ri)] = v;
        }
    }
    let param_cov = hess.lu().try_inverse();

    // Jacobian of thresholds w.r.t. (first, log-gaps).
    let mut cut_se = vec![0.0; n_cuts];
    let mut sigma2_se = 0.0;
    if let Some(cov) = &param_cov {
        for c in 0..n_cuts {
            let mut grad = vec![0.0; nf];
            for (ri, &i) in free.iter().enumerate() {
                grad[ri] = if i == 0 {
                    1.0
                } else if i < n_cuts && i <= c {
                    cuts.log_gaps[i - 1].exp()
                } else {
                    0.0
                };
            }
            let mut v = 0.0;
            for a in 0..nf {
                for b in 0..nf {
                    v += grad[a] * cov[(a, b)] * grad[b];
                }
            }
            cut_se[c] = v.max(0.0).sqrt();
        }
        if sigma > 1e-6 {
            let idx = nf - 1;
            let sd_se = cov[(idx, idx)].max(0.0).sqrt();
            sigma2_se = 2.0 * sigma * sd_se;
        }
    }

    Ok(OrdinalFitResult {
        method: OrdinalMethod::Quadrature,
        cutpoints: kappa
            .iter()
            .zip(&cut_se)
            .map(|(k, se)| CutpointEstimate { estimate: *k, se: *se })
            .collect(),
        varcomps: vec![VarianceComponent {
            level: spec.random_levels[0].clone(),
            variance: sigma * sigma,
            se: sigma2_se,
        }],
        converged: true,
        iterations: evals.max(1),
        clamped_levels: if sigma == 0.0 {
            vec![spec.random_levels[0].clone()]
        } else {
            vec![]
        },
        categories: data.categories,
        n_rows: data.cat.len(),
        response: spec.response.clone(),
        random_levels: spec.random_levels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_hermite_integrates_moments() {
        // ∫ exp(−x²) dx = √π; ∫ x² exp(−x²) dx = √π/2.
        let (nodes, weights) = gauss_hermite(21).unwrap();
        let total: f64 = weights.iter().sum();
        assert_abs_diff_eq!(total, std::f64::consts::PI.sqrt(), epsilon = 1e-10);
        let second: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x * x).sum();
        assert_abs_diff_eq!(second, std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn gauss_hermite_rejects_tiny_node_counts() {
        assert!(matches!(gauss_hermite(2), Err(Error::TooFewNodes(2))));
    }

    #[test]
    fn group_loglik_matches_closed_form_when_sigma_zero() {
        // With σ = 0 the integral collapses to the product of category
        // probabilities.
        let counts = vec![2.0, 3.0, 1.0, 4.0];
        let kappa = [-1.0, 0.0, 1.2];
        let (nodes, weights) = gauss_hermite(21).unwrap();
        let ll = group_loglik(&counts, &kappa, 0.0, &nodes, &weights);
        let probs = super::super::category_probabilities(&kappa, 0.0).unwrap();
        let expect: f64 =
            counts.iter().zip(&probs).map(|(n, p)| n * p.ln()).sum();
        assert_abs_diff_eq!(ll, expect, epsilon = 1e-8);
    }

    #[test]
    fn quadrature_is_stable_in_node_count() {
        // The same integrand evaluated with 21 and 41 nodes agrees closely.
        let counts = vec![5.0, 7.0, 6.0, 2.0];
        let kappa = [-0.8, 0.1, 1.0];
        let (n21, w21) = gauss_hermite(21).unwrap();
        let (n41, w41) = gauss_hermite(41).unwrap();
        let a = group_loglik(&counts, &kappa, 0.6, &n21, &w21);
        let b = group_loglik(&counts, &kappa, 0.6, &n41, &w41);
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }
}
