//! Solver for the block-diagonal nested covariance
//! `V = base + Σ_l σ_l² Z_l Z_lᵀ`.
//!
//! Each grouping level adds a rank-one block of ones per group. Because the
//! groups are nested, `V⁻¹x`, `log det V` and `‖V⁻¹‖_F²` all follow from a
//! per-node Sherman–Morrison recursion in O(rows × levels), without ever
//! materializing V. The base is either iid residual variance (linear models)
//! or known small dense blocks (the working model of the ordinal fits).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

use super::structure::NestingStructure;

/// (1ᵀM⁻¹1, 1ᵀM⁻²1, 1ᵀM⁻³1, ‖M⁻¹‖_F²) of a node's covariance block.
#[derive(Debug, Clone, Copy)]
struct NodeQuants {
    s1: f64,
    s2: f64,
    s3: f64,
    frob: f64,
}

enum Base {
    Iid { inv: f64 },
    Blocks {
        /// Row bounds of the known-covariance blocks (canonical order).
        bounds: Vec<usize>,
        chol: Vec<Cholesky<f64, Dyn>>,
        quants: Vec<NodeQuants>,
        /// Per outer block: span of base-block indices inside it.
        block_spans: Vec<(usize, usize)>,
    },
}

pub(crate) struct NestedFactor<'s> {
    st: &'s NestingStructure,
    sigma2: Vec<f64>,
    base: Base,
    /// denom[l][g] = 1 + σ_l² · 1ᵀW⁻¹1 over group g's rows.
    denom: Vec<Vec<f64>>,
    /// h[l][i] = (V_{levels ≥ l}⁻¹ 1)(i); h[m] is the base value.
    h: Vec<Vec<f64>>,
    logdet: f64,
}

impl<'s> NestedFactor<'s> {
    /// Factor with iid residual variance. `sigma2` has one entry per
    /// grouping level (outermost first); `resid_var` must be positive.
    pub fn iid(st: &'s NestingStructure, sigma2: &[f64], resid_var: f64) -> Self {
        assert_eq!(sigma2.len(), st.n_grouping_levels());
        assert!(resid_var > 0.0, "residual variance must be positive");
        let n = st.n_rows();
        let base = Base::Iid { inv: 1.0 / resid_var };
        let base_h = vec![1.0 / resid_var; n];
        let base_logdet = n as f64 * resid_var.ln();
        Self::finish(st, sigma2.to_vec(), base, base_h, base_logdet)
    }

    /// Factor with known dense residual blocks (the blocks must be nested
    /// inside the innermost grouping level and cover all rows).
    pub fn with_block_base(
        st: &'s NestingStructure,
        sigma2: &[f64],
        bounds: Vec<usize>,
        blocks: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        assert_eq!(sigma2.len(), st.n_grouping_levels());
        assert_eq!(bounds.len(), blocks.len() + 1);
        assert_eq!(*bounds.last().unwrap(), st.n_rows());
        let mut chol = Vec::with_capacity(blocks.len());
        let mut quants = Vec::with_capacity(blocks.len());
        let mut base_h = Vec::with_capacity(st.n_rows());
        let mut base_logdet = 0.0;
        for block in blocks {
            let dim = block.nrows();
            let factor = Cholesky::new(block)
                .ok_or_else(|| Error::OptimizerFailed("residual block not positive definite".into()))?;
            let ones = DVector::from_element(dim, 1.0);
            let u = factor.solve(&ones);
            let s1 = u.sum();
            let s2 = u.dot(&u);
            let s3 = u.dot(&factor.solve(&u));
            let inv = factor.inverse();
            let frob = inv.iter().map(|v| v * v).sum();
            for i in 0..dim {
                base_h.push(u[i]);
            }
            base_logdet += factor.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
            quants.push(NodeQuants { s1, s2, s3, frob });
            chol.push(factor);
        }
        // Per outer block: which base blocks fall inside.
        let mut block_spans = Vec::with_capacity(st.n_blocks());
        let mut idx = 0usize;
        for b in 0..st.n_blocks() {
            let end = st.block(b).end;
            let start_idx = idx;
            while idx + 1 < bounds.len() && bounds[idx + 1] <= end {
                idx += 1;
            }
            block_spans.push((start_idx, idx));
        }
        let base = Base::Blocks { bounds, chol, quants, block_spans };
        Ok(Self::finish(st, sigma2.to_vec(), base, base_h, base_logdet))
    }

    fn finish(
        st: &'s NestingStructure,
        sigma2: Vec<f64>,
        base: Base,
        base_h: Vec<f64>,
        base_logdet: f64,
    ) -> Self {
        let m = st.n_grouping_levels();
        let mut h: Vec<Vec<f64>> = vec![Vec::new(); m + 1];
        h[m] = base_h;
        let mut denom: Vec<Vec<f64>> = vec![Vec::new(); m];
        let mut logdet = base_logdet;
        for l in (0..m).rev() {
            let groups = st.level(l);
            let inner = std::mem::take(&mut h[l + 1]);
            let mut current = inner.clone();
            let mut denoms = Vec::with_capacity(groups.n_groups());
            for g in 0..groups.n_groups() {
                let range = groups.range(g);
                let s_w: f64 = inner[range.clone()].iter().sum();
                let d = 1.0 + sigma2[l] * s_w;
                logdet += d.ln();
                for i in range {
                    current[i] = inner[i] / d;
                }
                denoms.push(d);
            }
            h[l + 1] = inner;
            h[l] = current;
            denom[l] = denoms;
        }
        Self { st, sigma2, base, denom, h, logdet }
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    fn apply_base(&self, block: usize, start: usize, r: &mut [f64]) {
        match &self.base {
            Base::Iid { inv } => {
                for v in r.iter_mut() {
                    *v *= inv;
                }
            }
            Base::Blocks { bounds, chol, block_spans, .. } => {
                let (b0, b1) = block_spans[block];
                for k in b0..b1 {
                    let (s, e) = (bounds[k] - start, bounds[k + 1] - start);
                    let mut v = DVector::from_column_slice(&r[s..e]);
                    chol[k].solve_mut(&mut v);
                    r[s..e].copy_from_slice(v.as_slice());
                }
            }
        }
    }

    /// In-place `r ← V_b⁻¹ r` for one outer block; `r` is the block's rows
    /// in canonical order.
    pub fn solve_block(&self, block: usize, r: &mut [f64]) {
        let range = self.st.block(block);
        let start = range.start;
        debug_assert_eq!(r.len(), range.len());
        self.apply_base(block, start, r);
        let m = self.st.n_grouping_levels();
        for l in (0..m).rev() {
            if self.sigma2[l] == 0.0 {
                continue;
            }
            let groups = self.st.level(l);
            let (g0, g1) = groups.block_spans[block];
            let h_inner = &self.h[l + 1];
            for g in g0..g1 {
                let gr = groups.range(g);
                let t: f64 = r[gr.start - start..gr.end - start].iter().sum();
                let coef = self.sigma2[l] * t / self.denom[l][g];
                if coef != 0.0 {
                    for i in gr {
                        r[i - start] -= coef * h_inner[i];
                    }
                }
            }
        }
    }

    /// In-place `r ← V⁻¹ r` over all rows (canonical order).
    pub fn solve(&self, r: &mut [f64]) {
        assert_eq!(r.len(), self.st.n_rows());
        for b in 0..self.st.n_blocks() {
            let range = self.st.block(b);
            self.solve_block(b, &mut r[range]);
        }
    }

    /// `‖V_b⁻¹‖_F²` of one outer block, by the per-node recursion.
    pub fn block_inv_frobenius_sq(&self, block: usize) -> f64 {
        let m = self.st.n_grouping_levels();
        // Quants of the deepest layer: base blocks or individual rows.
        let mut quants: Vec<NodeQuants>;
        let mut bounds: Vec<usize>;
        match &self.base {
            Base::Iid { inv } => {
                let range = self.st.block(block);
                quants = vec![
                    NodeQuants { s1: *inv, s2: inv * inv, s3: inv * inv * inv, frob: inv * inv };
                    range.len()
                ];
                bounds = (range.start..=range.end).collect();
            }
            Base::Blocks { bounds: bb, quants: q, block_spans, .. } => {
                let (b0, b1) = block_spans[block];
                quants = q[b0..b1].to_vec();
                bounds = bb[b0..=b1].to_vec();
            }
        }
        for l in (0..m).rev() {
            let groups = self.st.level(l);
            let (g0, g1) = groups.block_spans[block];
            let mut next_quants = Vec::with_capacity(g1 - g0);
            let mut next_bounds = Vec::with_capacity(g1 - g0 + 1);
            let mut child = 0usize;
            for g in g0..g1 {
                let gr = groups.range(g);
                next_bounds.push(gr.start);
                let (mut s1w, mut s2w, mut s3w, mut fw) = (0.0, 0.0, 0.0, 0.0);
                while child < quants.len() && bounds[child + 1] <= gr.end {
                    if bounds[child] >= gr.start {
                        s1w += quants[child].s1;
                        s2w += quants[child].s2;
                        s3w += quants[child].s3;
                        fw += quants[child].frob;
                    }
                    child += 1;
                }
                let d = self.denom[l][g];
                let c = self.sigma2[l] / d;
                next_quants.push(NodeQuants {
                    s1: s1w / d,
                    s2: s2w / (d * d),
                    s3: (s3w - c * s2w * s2w) / (d * d),
                    frob: fw - 2.0 * c * s3w + c * c * s2w * s2w,
                });
            }
            next_bounds.push(self.st.block(block).end);
            quants = next_quants;
            bounds = next_bounds;
        }
        quants.iter().map(|q| q.frob).sum()
    }

    /// `‖V⁻¹‖_F²` over all blocks.
    #[cfg(test)]
    pub fn inv_frobenius_sq(&self) -> f64 {
        (0..self.st.n_blocks()).map(|b| self.block_inv_frobenius_sq(b)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::structure::NestingStructure;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Dense V for an iid-base factor, for verification.
    fn dense_v(st: &NestingStructure, sigma2: &[f64], resid: f64) -> DMatrix<f64> {
        let n = st.n_rows();
        let mut v = DMatrix::from_element(n, n, 0.0);
        for i in 0..n {
            v[(i, i)] = resid;
        }
        for (l, s2) in sigma2.iter().enumerate() {
            let groups = st.level(l);
            for g in 0..groups.n_groups() {
                let range = groups.range(g);
                for i in range.clone() {
                    for j in range.clone() {
                        v[(i, j)] += s2;
                    }
                }
            }
        }
        v
    }

    fn random_structure(rng: &mut ChaCha8Rng) -> NestingStructure {
        let n_regions = rng.gen_range(2..4);
        let mut region = Vec::new();
        let mut district = Vec::new();
        let mut person = Vec::new();
        let mut p = 0usize;
        let mut d = 0usize;
        for r in 0..n_regions {
            for _ in 0..rng.gen_range(1..4) {
                let size = rng.gen_range(1..5);
                for _ in 0..size {
                    region.push(format!("R{r}"));
                    district.push(format!("D{d:03}"));
                    person.push(format!("P{p:04}"));
                    p += 1;
                }
                d += 1;
            }
        }
        NestingStructure::build(
            &["region".into(), "district".into(), "person".into()],
            &[&region, &district, &person],
        )
        .unwrap()
    }

    #[test]
    fn matches_dense_solve_logdet_frobenius() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let st = random_structure(&mut rng);
            let sigma2 = [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)];
            let resid = rng.gen_range(0.2..2.0);
            let factor = NestedFactor::iid(&st, &sigma2, resid);
            let v = dense_v(&st, &sigma2, resid);
            let chol = Cholesky::new(v.clone()).unwrap();

            let n = st.n_rows();
            let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut solved = r.clone();
            factor.solve(&mut solved);
            let dense = chol.solve(&DVector::from_column_slice(&r));
            for i in 0..n {
                assert_abs_diff_eq!(solved[i], dense[i], epsilon = 1e-10);
            }

            let dense_logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            assert_abs_diff_eq!(factor.logdet(), dense_logdet, epsilon = 1e-9);

            let inv = chol.inverse();
            let dense_frob: f64 = inv.iter().map(|x| x * x).sum();
            assert_abs_diff_eq!(factor.inv_frobenius_sq(), dense_frob, epsilon = 1e-8 * dense_frob.max(1.0));
        }
    }

    #[test]
    fn zero_variances_reduce_to_scaled_identity() {
        let region: Vec<String> = vec!["R1".into(), "R1".into(), "R2".into()];
        let person: Vec<String> = vec!["P1".into(), "P2".into(), "P3".into()];
        let st = NestingStructure::build(
            &["region".into(), "person".into()],
            &[&region, &person],
        )
        .unwrap();
        let factor = NestedFactor::iid(&st, &[0.0], 2.0);
        let mut r = vec![4.0, 2.0, 6.0];
        factor.solve(&mut r);
        assert_eq!(r, vec![2.0, 1.0, 3.0]);
        assert_abs_diff_eq!(factor.logdet(), 3.0 * 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn block_base_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        // 2 groups of 2 subjects, each subject a 2x2 dense block.
        let group: Vec<String> =
            ["G1", "G1", "G1", "G1", "G2", "G2", "G2", "G2"].iter().map(|s| s.to_string()).collect();
        let row: Vec<String> = (0..8).map(|i| format!("W{i}")).collect();
        let st = NestingStructure::build(&["group".into(), "row".into()], &[&group, &row]).unwrap();
        let sigma2 = [0.7];
        let bounds = vec![0, 2, 4, 6, 8];
        let mut blocks = Vec::new();
        for _ in 0..4 {
            let a = rng.gen_range(0.5..1.5);
            let b = rng.gen_range(-0.3..0.3);
            let c = rng.gen_range(0.5..1.5);
            blocks.push(DMatrix::from_row_slice(2, 2, &[a, b, b, c]));
        }
        let factor =
            NestedFactor::with_block_base(&st, &sigma2, bounds.clone(), blocks.clone()).unwrap();

        let mut v = DMatrix::zeros(8, 8);
        for (k, block) in blocks.iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    v[(bounds[k] + i, bounds[k] + j)] = block[(i, j)];
                }
            }
        }
        for g in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    v[(4 * g + i, 4 * g + j)] += sigma2[0];
                }
            }
        }
        let chol = Cholesky::new(v).unwrap();
        let r: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut solved = r.clone();
        factor.solve(&mut solved);
        let dense = chol.solve(&DVector::from_column_slice(&r));
        for i in 0..8 {
            assert_abs_diff_eq!(solved[i], dense[i], epsilon = 1e-10);
        }
        let dense_logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        assert_abs_diff_eq!(factor.logdet(), dense_logdet, epsilon = 1e-9);
    }
}
