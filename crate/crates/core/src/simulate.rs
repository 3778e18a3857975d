//! Nested-data simulation with known parameters, plus closed-form and
//! dense-matrix reference estimators. The generator stands in for survey
//! microdata that cannot ship with the repository; the oracles make every
//! estimator claim checkable at desk scale.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Column, HierarchicalDataset};
use crate::error::{Error, Result};
use crate::estimator::{
    self, FitResult, FixedEffect, Flavor, ModelSpec, VarianceComponent,
};
use crate::optimize::{coordinate_polish, nelder_mead};

/// One level of the simulated hierarchy. `count` is the number of children
/// per parent (total groups for the outermost level); `count_max`, when
/// set, draws a per-parent size uniformly from `count..=count_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelConfig {
    pub name: String,
    pub count: usize,
    #[serde(default)]
    pub count_max: Option<usize>,
}

/// Covariate generators: standard normal per draw, a 0/1 indicator with a
/// given rate, or a uniform value (useful for group-constant rates).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateGenerator {
    StandardNormal,
    Indicator { rate: f64 },
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateConfig {
    pub name: String,
    #[serde(flatten)]
    pub generator: CovariateGenerator,
    /// Level at which the covariate is constant; omitted means one draw per
    /// observation.
    #[serde(default)]
    pub level: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaConfig {
    pub name: String,
    pub value: f64,
}

/// Ordinal response option: the continuous latent outcome is cut at these
/// thresholds into categories 1..=C.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrdinalSimConfig {
    pub cutpoints: Vec<f64>,
}

/// Full description of a simulated nested dataset: group counts and sizes,
/// true coefficients, true per-level variances (residual last), covariate
/// generators and the seed. A fixed seed gives byte-identical output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed: u64,
    /// Outermost to innermost; the innermost is the observation level.
    pub levels: Vec<LevelConfig>,
    /// One per level, residual (observation) last.
    pub variances: Vec<f64>,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub beta: Vec<BetaConfig>,
    #[serde(default)]
    pub covariates: Vec<CovariateConfig>,
    #[serde(default = "default_response")]
    pub response: String,
    #[serde(default)]
    pub ordinal: Option<OrdinalSimConfig>,
}

fn default_response() -> String {
    "y".to_string()
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidSimulation("at least one level required".into()));
        }
        if self.variances.len() != self.levels.len() {
            return Err(Error::InvalidSimulation(format!(
                "{} levels but {} variances",
                self.levels.len(),
                self.variances.len()
            )));
        }
        if self.variances.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidSimulation("variances must be non-negative".into()));
        }
        for l in &self.levels {
            if l.count == 0 {
                return Err(Error::InvalidSimulation(format!("level `{}` has count 0", l.name)));
            }
            if let Some(max) = l.count_max {
                if max < l.count {
                    return Err(Error::InvalidSimulation(format!(
                        "level `{}`: count_max below count",
                        l.name
                    )));
                }
            }
        }
        for b in &self.beta {
            if !self.covariates.iter().any(|c| c.name == b.name) {
                return Err(Error::InvalidSimulation(format!(
                    "beta refers to unknown covariate `{}`",
                    b.name
                )));
            }
        }
        for c in &self.covariates {
            if let Some(level) = &c.level {
                if !self.levels.iter().any(|l| &l.name == level) {
                    return Err(Error::InvalidSimulation(format!(
                        "covariate `{}` refers to unknown level `{level}`",
                        c.name
                    )));
                }
            }
        }
        if let Some(ord) = &self.ordinal {
            if ord.cutpoints.is_empty()
                || ord.cutpoints.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(Error::InvalidSimulation(
                    "ordinal cutpoints must be non-empty and strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Draw a nested dataset: `y = Xβ + Σ_l u_l + e` with each level's effects
/// independent `N(0, σ_l²)`. The generated identifiers are globally unique
/// per level, so the dataset passes nesting validation by construction.
pub fn simulate_nested(cfg: &SimulationConfig) -> Result<HierarchicalDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.levels.len();

    // Group index per level per row, depth-first so rows arrive sorted.
    let mut level_of_row: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut counters = vec![0usize; k];
    fn descend(
        rng: &mut ChaCha8Rng,
        cfg: &SimulationConfig,
        depth: usize,
        counters: &mut [usize],
        level_of_row: &mut [Vec<usize>],
        path: &mut Vec<usize>,
    ) {
        let lc = &cfg.levels[depth];
        let n_children = match lc.count_max {
            Some(max) => rng.gen_range(lc.count..=max),
            None => lc.count,
        };
        for _ in 0..n_children {
            let id = counters[depth];
            counters[depth] += 1;
            path.push(id);
            if depth + 1 == cfg.levels.len() {
                for (l, &g) in path.iter().enumerate() {
                    level_of_row[l].push(g);
                }
            } else {
                descend(rng, cfg, depth + 1, counters, level_of_row, path);
            }
            path.pop();
        }
    }
    descend(&mut rng, cfg, 0, &mut counters, &mut level_of_row, &mut Vec::new());
    let n = level_of_row[k - 1].len();

    // Covariates, in declared order; group-level values drawn once per group.
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for cov in &cfg.covariates {
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            match cov.generator {
                CovariateGenerator::StandardNormal => rng.sample(StandardNormal),
                CovariateGenerator::Indicator { rate } => {
                    if rng.gen::<f64>() < rate {
                        1.0
                    } else {
                        0.0
                    }
                }
                CovariateGenerator::Uniform { low, high } => rng.gen_range(low..high),
            }
        };
        let cells = match &cov.level {
            None => (0..n).map(|_| draw(&mut rng)).collect::<Vec<f64>>(),
            Some(level) => {
                let l = cfg.levels.iter().position(|lc| &lc.name == level).unwrap();
                let per_group: Vec<f64> = (0..counters[l]).map(|_| draw(&mut rng)).collect();
                level_of_row[l].iter().map(|&g| per_group[g]).collect()
            }
        };
        columns.push((cov.name.clone(), cells));
    }

    // Level effects and residual.
    let mut y = vec![cfg.intercept; n];
    for b in &cfg.beta {
        let cells = &columns.iter().find(|(name, _)| name == &b.name).unwrap().1;
        for i in 0..n {
            y[i] += b.value * cells[i];
        }
    }
    for l in 0..k - 1 {
        let sd = cfg.variances[l].sqrt();
        let effects: Vec<f64> =
            (0..counters[l]).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        for i in 0..n {
            y[i] += effects[level_of_row[l][i]];
        }
    }
    let resid_sd = cfg.variances[k - 1].sqrt();
    for v in y.iter_mut() {
        *v += resid_sd * rng.sample::<f64, _>(StandardNormal);
    }

    if let Some(ord) = &cfg.ordinal {
        for v in y.iter_mut() {
            let mut cat = 1.0;
            for c in &ord.cutpoints {
                if *v > *c {
                    cat += 1.0;
                }
            }
            *v = cat;
        }
    }

    let width = (n.max(10) as f64).log10().ceil() as usize + 1;
    let level_ids: Vec<Vec<String>> = (0..k)
        .map(|l| {
            let prefix: String = cfg.levels[l].name.chars().take(1).collect();
            level_of_row[l]
                .iter()
                .map(|g| format!("{}{:0width$}", prefix.to_uppercase(), g, width = width))
                .collect()
        })
        .collect();

    let mut value_columns: Vec<(String, Column)> = Vec::new();
    value_columns.push((
        cfg.response.clone(),
        Column::Numeric(y.into_iter().map(Some).collect()),
    ));
    for (name, cells) in columns {
        value_columns.push((name, Column::Numeric(cells.into_iter().map(Some).collect())));
    }

    HierarchicalDataset::from_parts(
        cfg.levels.iter().map(|l| l.name.clone()).collect(),
        level_ids,
        value_columns,
    )
}

/// Closed-form one-way ANOVA variance components for a balanced two-level
/// dataset: residual = within-group mean square, group = (between mean
/// square − within mean square)/n, clamped at zero.
pub fn anova_varcomp_oracle(ds: &HierarchicalDataset, response: &str) -> Result<(f64, f64)> {
    if ds.level_columns().len() != 2 {
        return Err(Error::InvalidSpec(format!(
            "anova oracle needs a 2-level dataset, got {} levels",
            ds.level_columns().len()
        )));
    }
    let group_ids = ds.level_ids(&ds.level_columns()[0].clone())?;
    let cells = ds.numeric_column(response)?;
    let mut groups: std::collections::BTreeMap<&str, Vec<f64>> = std::collections::BTreeMap::new();
    for (id, cell) in group_ids.iter().zip(cells) {
        if let Some(v) = cell {
            groups.entry(id.as_str()).or_default().push(*v);
        }
    }
    let g = groups.len();
    if g < 2 {
        return Err(Error::SingleUnitLevel { level: ds.level_columns()[0].clone() });
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let n_per = sizes[0];
    if sizes.iter().any(|&s| s != n_per) {
        return Err(Error::Unbalanced(format!("group sizes {:?}", sizes)));
    }
    if n_per < 2 {
        return Err(Error::Unbalanced("groups of size 1".into()));
    }
    let n_total = (g * n_per) as f64;
    let grand: f64 = groups.values().flatten().sum::<f64>() / n_total;
    let mut ssw = 0.0;
    let mut ssb = 0.0;
    for values in groups.values() {
        let mean = values.iter().sum::<f64>() / n_per as f64;
        ssw += values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        ssb += n_per as f64 * (mean - grand) * (mean - grand);
    }
    let msw = ssw / (n_total - g as f64);
    let msb = ssb / (g as f64 - 1.0);
    let group_var = ((msb - msw) / n_per as f64).max(0.0);
    Ok((group_var, msw))
}

/// Brute-force reference fit: materialize the full N×N covariance, maximize
/// the profile log-likelihood over the variance components with a generic
/// bounded optimizer, then solve GLS for the coefficients. Test
/// infrastructure only; limited to 500 rows.
pub fn dense_ml_oracle(ds: &HierarchicalDataset, spec: &ModelSpec) -> Result<FitResult> {
    const MAX_ROWS: usize = 500;
    let prep = estimator::prepare(ds, spec)?;
    let n = prep.y.len();
    if n > MAX_ROWS {
        return Err(Error::OracleTooLarge { max: MAX_ROWS, got: n });
    }
    let m = prep.structure.n_grouping_levels();
    let p = prep.x.len();
    let scale = prep.scale;
    let floor = scale * 1e-10;

    // Row ranges of every group at every level, for the dense V assembly.
    let mut level_ranges: Vec<Vec<std::ops::Range<usize>>> = Vec::with_capacity(m);
    for l in 0..m {
        let groups = prep.structure.level(l);
        level_ranges.push((0..groups.n_groups()).map(|g| groups.range(g)).collect());
    }

    let x_mat = {
        let mut xm = DMatrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                xm[(i, j)] = prep.x[j][i];
            }
        }
        xm
    };
    let y_vec = DVector::from_column_slice(&prep.y);

    let mut evals = 0usize;
    let mut objective = |theta: &[f64]| -> f64 {
        evals += 1;
        let resid = theta[m].max(floor);
        let mut v = DMatrix::zeros(n, n);
        for i in 0..n {
            v[(i, i)] = resid;
        }
        for l in 0..m {
            let s2 = theta[l].max(0.0);
            if s2 == 0.0 {
                continue;
            }
            for range in &level_ranges[l] {
                for i in range.clone() {
                    for j in range.clone() {
                        v[(i, j)] += s2;
                    }
                }
            }
        }
        let chol = match Cholesky::new(v) {
            Some(c) => c,
            None => return f64::INFINITY,
        };
        let vinv_x = chol.solve(&x_mat);
        let vinv_y = chol.solve(&y_vec);
        let xtvx = x_mat.transpose() * &vinv_x;
        let xtvy = x_mat.transpose() * &vinv_y;
        let beta = match xtvx.lu().solve(&xtvy) {
            Some(b) => b,
            None => return f64::INFINITY,
        };
        let e = &y_vec - &x_mat * beta;
        let quad = e.dot(&chol.solve(&e));
        let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        0.5 * (logdet + quad + n as f64 * (2.0 * std::f64::consts::PI).ln())
    };

    // Multi-start Nelder–Mead on the square-root scale, then a bounded
    // coordinate polish in variance space so zero-variance optima are hit
    // exactly.
    let equal = scale / (m + 1) as f64;
    let starts: Vec<Vec<f64>> = vec![
        vec![equal.sqrt(); m + 1],
        {
            let mut s = vec![(0.2 * equal).sqrt(); m + 1];
            s[m] = (0.9 * scale).sqrt();
            s
        },
        {
            let mut s = vec![(0.6 * scale / (m.max(1)) as f64).sqrt(); m + 1];
            s[m] = (0.3 * scale).sqrt();
            s
        },
    ];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let obj_u = |u: &[f64]| {
            let theta: Vec<f64> = u.iter().map(|v| v * v).collect();
            objective(&theta)
        };
        let scale_u: Vec<f64> = start.iter().map(|s| 0.3 * s.max(1e-4)).collect();
        let (u, fu) = nelder_mead(obj_u, &start, &scale_u, 400, 1e-13);
        let theta: Vec<f64> = u.iter().map(|v| v * v).collect();
        if best.as_ref().map_or(true, |(_, f)| fu < *f) {
            best = Some((theta, fu));
        }
    }
    let (theta0, _) = best.ok_or_else(|| Error::OptimizerFailed("no start converged".into()))?;
    let hi = 20.0 * scale;
    let mut bounds = vec![(0.0, hi); m + 1];
    bounds[m] = (floor, hi);
    let (theta, fmin) = coordinate_polish(&mut objective, &theta0, &bounds, 8, 1e-12);
    if !fmin.is_finite() {
        return Err(Error::OptimizerFailed("objective not finite at solution".into()));
    }

    // Final dense GLS and information at the optimum.
    let resid = theta[m].max(floor);
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        v[(i, i)] = resid;
    }
    for l in 0..m {
        for range in &level_ranges[l] {
            for i in range.clone() {
                for j in range.clone() {
                    v[(i, j)] += theta[l];
                }
            }
        }
    }
    let chol = Cholesky::new(v).ok_or_else(|| Error::OptimizerFailed("V not PD".into()))?;
    let vinv = chol.inverse();
    let vinv_x = &vinv * &x_mat;
    let xtvx = x_mat.transpose() * &vinv_x;
    let cov = xtvx
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::OptimizerFailed("singular GLS at oracle solution".into()))?;
    let beta = &cov * (x_mat.transpose() * (&vinv * &y_vec));

    // A_lm = tr(V⁻¹ G_l V⁻¹ G_m), built densely.
    let mut g_mats: Vec<DMatrix<f64>> = Vec::with_capacity(m + 1);
    for l in 0..m {
        let mut gm = DMatrix::zeros(n, n);
        for range in &level_ranges[l] {
            for i in range.clone() {
                for j in range.clone() {
                    gm[(i, j)] = 1.0;
                }
            }
        }
        g_mats.push(gm);
    }
    g_mats.push(DMatrix::identity(n, n));
    let vg: Vec<DMatrix<f64>> = g_mats.iter().map(|gm| &vinv * gm).collect();
    let mut a = DMatrix::zeros(m + 1, m + 1);
    for l in 0..=m {
        for k2 in l..=m {
            let tr = (&vg[l] * &vg[k2]).trace();
            a[(l, k2)] = tr;
            a[(k2, l)] = tr;
        }
    }
    let info_inv = a
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::OptimizerFailed("singular oracle information".into()))?;

    let e = &y_vec - &x_mat * &beta;
    let quad = e.dot(&(&vinv * &e));
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let loglik = -0.5 * (logdet + quad + n as f64 * (2.0 * std::f64::consts::PI).ln());

    let beta_out = prep
        .term_names
        .iter()
        .enumerate()
        .map(|(j, term)| FixedEffect {
            term: term.clone(),
            estimate: beta[j],
            se: cov[(j, j)].max(0.0).sqrt(),
        })
        .collect();
    let names = prep.structure.level_names().to_vec();
    let varcomps = (0..=m)
        .map(|l| VarianceComponent {
            level: names[l].clone(),
            variance: if l == m { resid } else { theta[l] },
            se: (2.0 * info_inv[(l, l)]).max(0.0).sqrt(),
        })
        .collect();
    let clamped_levels = (0..=m)
        .filter(|&l| theta[l] <= if l == m { floor } else { 0.0 })
        .map(|l| names[l].clone())
        .collect();

    Ok(FitResult {
        beta: beta_out,
        varcomps,
        loglik,
        iterations: evals.max(1),
        converged: true,
        clamped_levels,
        flavor: Flavor::Ml,
        response: spec.response.clone(),
        random_levels: names,
        n_rows: n,
    })
}
