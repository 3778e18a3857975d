//! The IGLS variance step: a generalized-least-squares regression of the
//! residual cross-products on the per-level variance design, restricted to
//! the block-sparse entries the nesting implies.
//!
//! With `G_l = Z_l Z_lᵀ` (and `G_K = I` for the residual level) the step
//! solves `A θ = b` where, for the ML flavor,
//! `A_lm = tr(V⁻¹G_l V⁻¹G_m)` and `b_l = êᵀV⁻¹ G_l V⁻¹ê`.
//! The REML-like flavor replaces `V⁻¹` by the projection
//! `P = V⁻¹ − V⁻¹X(XᵀV⁻¹X)⁻¹XᵀV⁻¹` in `A`, which applies the
//! degrees-of-freedom correction: one step from ordinary-least-squares
//! residuals with an identity weight then reproduces the classical ANOVA
//! estimators on balanced two-level data, and the fixed point solves the
//! REML equations. Negative solutions are pinned to zero by an active-set
//! pass and re-solved.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::factor::NestedFactor;
use super::structure::NestingStructure;
use super::Flavor;

pub(crate) struct VarianceStep {
    /// (m+1)×(m+1) step matrix, residual level last.
    pub a: DMatrix<f64>,
    /// Right-hand side.
    pub b: DVector<f64>,
}

/// Inputs that depend on the current fixed-effect solve.
pub(crate) struct StepContext<'a> {
    pub factor: &'a NestedFactor<'a>,
    /// Design columns in canonical order.
    pub x: &'a [Vec<f64>],
    /// V⁻¹ applied to each design column.
    pub vinv_x: &'a [Vec<f64>],
    /// (XᵀV⁻¹X)⁻¹.
    pub cov: &'a DMatrix<f64>,
    /// V⁻¹ê with ê the current residuals, canonical order.
    pub q: &'a [f64],
}

pub(crate) fn variance_step(
    st: &NestingStructure,
    ctx: &StepContext,
    flavor: Flavor,
) -> VarianceStep {
    let m = st.n_grouping_levels();
    let k = m + 1;
    let p = ctx.x.len();
    let reml = flavor == Flavor::RemlLike;

    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);

    // b_l = Σ_g (1_gᵀ q)² per grouping level; residual row: qᵀq.
    for l in 0..m {
        let groups = st.level(l);
        let mut total = 0.0;
        for g in 0..groups.n_groups() {
            let s: f64 = ctx.q[groups.range(g)].iter().sum();
            total += s * s;
        }
        b[l] = total;
    }
    b[m] = ctx.q.iter().map(|v| v * v).sum();

    // V⁻²X, needed by the REML-like trace corrections.
    let v2inv_x: Vec<Vec<f64>> = if reml {
        ctx.vinv_x
            .iter()
            .map(|col| {
                let mut c = col.clone();
                ctx.factor.solve(&mut c);
                c
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut t1 = DMatrix::zeros(k, k);
    let mut m_mats: Vec<DMatrix<f64>> = vec![DMatrix::zeros(p, p); if reml { k } else { 0 }];

    for block in 0..st.n_blocks() {
        let range = st.block(block);
        let (start, len) = (range.start, range.len());

        // Solve V⁻¹1_g for every group of every level inside the block and
        // aggregate: s[g][h] = 1_hᵀ V⁻¹ 1_g.
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
            ctx.factor.solve_block(block, &mut w);
            w_all.push(w);
        }

        let mut s = vec![0.0; n_groups * n_groups];
        for (gi, w) in w_all.iter().enumerate() {
            for (hi, (_, hr)) in group_ranges.iter().enumerate() {
                s[gi * n_groups + hi] =
                    w[hr.start - start..hr.end - start].iter().sum::<f64>();
            }
        }

        for (gi, (lg, _)) in group_ranges.iter().enumerate() {
            for (hi, (lh, _)) in group_ranges.iter().enumerate() {
                let v = s[gi * n_groups + hi];
                a[(*lg, *lh)] += v * v;
            }
            let norm_sq: f64 = w_all[gi].iter().map(|v| v * v).sum();
            a[(*lg, m)] += norm_sq;
            a[(m, *lg)] += norm_sq;
        }
        a[(m, m)] += ctx.factor.block_inv_frobenius_sq(block);

        if reml {
            // Per-group projections x_g = Xᵀw_g, x2_g = (V⁻¹X)ᵀw_g.
            let mut xg: Vec<DVector<f64>> = Vec::with_capacity(n_groups);
            let mut x2g: Vec<DVector<f64>> = Vec::with_capacity(n_groups);
            for w in &w_all {
                let mut v1 = DVector::zeros(p);
                let mut v2 = DVector::zeros(p);
                for j in 0..p {
                    let xs = &ctx.x[j][range.clone()];
                    let vs = &ctx.vinv_x[j][range.clone()];
                    let mut d1 = 0.0;
                    let mut d2 = 0.0;
                    for i in 0..len {
                        d1 += xs[i] * w[i];
                        d2 += vs[i] * w[i];
                    }
                    v1[j] = d1;
                    v2[j] = d2;
                }
                xg.push(v1);
                x2g.push(v2);
            }
            let yg: Vec<DVector<f64>> = xg.iter().map(|x| ctx.cov * x).collect();
            for (gi, (lg, _)) in group_ranges.iter().enumerate() {
                for (hi, (lh, _)) in group_ranges.iter().enumerate() {
                    t1[(*lg, *lh)] += s[gi * n_groups + hi] * xg[gi].dot(&yg[hi]);
                }
                let cross = yg[gi].dot(&x2g[gi]);
                t1[(*lg, m)] += cross;
                t1[(m, *lg)] += cross;
                m_mats[*lg] += &xg[gi] * xg[gi].transpose();
            }
        }
    }

    if reml {
        // D = XᵀV⁻²X, E = XᵀV⁻³X (global accumulations).
        let n = st.n_rows();
        let mut d_mat = DMatrix::zeros(p, p);
        let mut e_mat = DMatrix::zeros(p, p);
        for j in 0..p {
            for kcol in 0..p {
                let mut dv = 0.0;
                let mut ev = 0.0;
                for i in 0..n {
                    dv += ctx.vinv_x[j][i] * ctx.vinv_x[kcol][i];
                    ev += ctx.vinv_x[j][i] * v2inv_x[kcol][i];
                }
                d_mat[(j, kcol)] = dv;
                e_mat[(j, kcol)] = ev;
            }
        }
        m_mats[m] = d_mat;
        let ce = ctx.cov * &e_mat;
        t1[(m, m)] = ce.trace();

        let cm: Vec<DMatrix<f64>> = m_mats.iter().map(|mm| ctx.cov * mm).collect();
        for l in 0..k {
            for mm in 0..k {
                let t2 = (&cm[l] * &cm[mm]).trace();
                a[(l, mm)] += t2 - 2.0 * t1[(l, mm)];
            }
        }
    }

    VarianceStep { a, b }
}

/// Solve `A θ = b` with θ ≥ 0 by active-set pinning: pin the most negative
/// component to zero, re-solve the reduced system, repeat. Returns the
/// solution and which components ended pinned.
pub(crate) fn solve_nonnegative(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(Vec<f64>, Vec<bool>)> {
    let k = b.len();
    let mut pinned = vec![false; k];
    loop {
        let free: Vec<usize> = (0..k).filter(|&i| !pinned[i]).collect();
        if free.is_empty() {
            return Ok((vec![0.0; k], pinned));
        }
        let nf = free.len();
        let mut asub = DMatrix::zeros(nf, nf);
        let mut bsub = DVector::zeros(nf);
        for (r, &i) in free.iter().enumerate() {
            bsub[r] = b[i];
            for (c, &j) in free.iter().enumerate() {
                asub[(r, c)] = a[(i, j)];
            }
        }
        let sol = asub.lu().solve(&bsub).ok_or(Error::SingularVarianceStep)?;
        if sol.iter().all(|&v| v.is_finite()) {
            if let Some((worst, _)) = sol
                .iter()
                .enumerate()
                .filter(|(_, &v)| v < 0.0)
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            {
                pinned[free[worst]] = true;
                continue;
            }
            let mut out = vec![0.0; k];
            for (r, &i) in free.iter().enumerate() {
                out[i] = sol[r];
            }
            return Ok((out, pinned));
        }
        return Err(Error::SingularVarianceStep);
    }
}
