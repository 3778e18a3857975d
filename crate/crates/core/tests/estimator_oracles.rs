//! Cross-checks of the blockwise IGLS fitter against the dense-matrix and
//! closed-form references.

use multilevel::estimator::{
    fit_random_intercept, ConvergenceSettings, Flavor, ModelSpec,
};
use multilevel::simulate::{
    anova_varcomp_oracle, dense_ml_oracle, simulate_nested, BetaConfig, CovariateConfig,
    CovariateGenerator, LevelConfig, SimulationConfig,
};

fn tight(flavor: Flavor) -> ConvergenceSettings {
    ConvergenceSettings { rel_tolerance: 1e-12, max_iterations: 500, flavor }
}

fn random_instance(seed: u64, n_levels: usize, n_covs: usize) -> (SimulationConfig, ModelSpec) {
    // Keep instances small (N <= ~200) but informative.
    let mut rng_seed = seed;
    let mut next = || {
        rng_seed = rng_seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (rng_seed >> 33) as f64 / (1u64 << 31) as f64
    };
    let level_names = ["region", "district", "household", "person"];
    let names: Vec<String> =
        level_names[4 - n_levels..].iter().map(|s| s.to_string()).collect();
    let mut levels = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let (lo, hi) = match (n_levels, i) {
            (2, 0) => (8, 14),
            (2, _) => (3, 8),
            (3, 0) => (6, 9),
            (3, 1) => (2, 4),
            (3, _) => (2, 5),
            (4, 0) => (4, 6),
            (4, 1) => (2, 3),
            (4, 2) => (2, 3),
            _ => (2, 4),
        };
        let count = lo + (next() * (hi - lo) as f64) as usize;
        levels.push(LevelConfig { name: name.clone(), count, count_max: Some(count + 2) });
    }
    let mut variances: Vec<f64> = (0..n_levels).map(|_| 0.1 + 0.5 * next()).collect();
    variances[n_levels - 1] = 0.5 + 0.8 * next();
    let covariates: Vec<CovariateConfig> = (0..n_covs)
        .map(|j| CovariateConfig {
            name: format!("x{j}"),
            generator: if j % 2 == 0 {
                CovariateGenerator::StandardNormal
            } else {
                CovariateGenerator::Indicator { rate: 0.4 }
            },
            level: None,
        })
        .collect();
    let beta: Vec<BetaConfig> = (0..n_covs)
        .map(|j| BetaConfig { name: format!("x{j}"), value: -1.0 + 2.0 * next() })
        .collect();
    let cfg = SimulationConfig {
        seed,
        levels,
        variances,
        intercept: -0.5 + next(),
        beta,
        covariates,
        response: "y".into(),
        ordinal: None,
    };
    let spec = ModelSpec {
        response: "y".into(),
        fixed_terms: (0..n_covs).map(|j| format!("x{j}")).collect(),
        random_levels: names,
    };
    (cfg, spec)
}

#[test]
fn ml_fit_matches_dense_oracle_on_small_instances() {
    let mut checked = 0;
    for seed in 0..6u64 {
        let n_levels = 2 + (seed % 3) as usize;
        let n_covs = (seed % 3) as usize;
        let (cfg, spec) = random_instance(1000 + seed, n_levels, n_covs);
        let ds = simulate_nested(&cfg).unwrap();
        if ds.n_rows() > 200 {
            continue;
        }
        let fit = fit_random_intercept(&ds, &spec, &tight(Flavor::Ml)).unwrap();
        assert!(fit.converged, "seed {seed}: IGLS did not converge");
        let oracle = dense_ml_oracle(&ds, &spec).unwrap();
        for (a, b) in fit.beta.iter().zip(&oracle.beta) {
            assert!(
                (a.estimate - b.estimate).abs() < 1e-5,
                "seed {seed} beta {}: {} vs {}",
                a.term,
                a.estimate,
                b.estimate
            );
        }
        for (a, b) in fit.varcomps.iter().zip(&oracle.varcomps) {
            assert!(
                (a.variance - b.variance).abs() < 1e-5,
                "seed {seed} variance {}: {} vs {}",
                a.level,
                a.variance,
                b.variance
            );
        }
        assert!(
            (fit.loglik - oracle.loglik).abs() < 1e-6,
            "seed {seed} loglik {} vs {}",
            fit.loglik,
            oracle.loglik
        );
        checked += 1;
    }
    assert!(checked >= 4, "too few instances checked ({checked})");
}

#[test]
fn gls_and_loglik_match_dense_computation() {
    use multilevel::estimator::{gls_fixed_effects, profile_loglik, NestingStructure};
    use nalgebra::{DMatrix, DVector};

    // Random 3-level instance around N = 60: the blockwise GLS and the
    // blockwise Gaussian log-likelihood must match an explicit dense
    // V⁻¹ computation at 1e-10.
    let (cfg, spec) = random_instance(777, 3, 2);
    let ds = simulate_nested(&cfg).unwrap();
    let n = ds.n_rows();
    let district = ds.level_ids("district").unwrap().to_vec();
    let household = ds.level_ids("household").unwrap().to_vec();
    let person = ds.level_ids("person").unwrap().to_vec();
    let st = NestingStructure::build(
        &["district".into(), "household".into(), "person".into()],
        &[&district, &household, &person],
    )
    .unwrap();
    let y: Vec<f64> = ds.numeric_column("y").unwrap().iter().map(|v| v.unwrap()).collect();
    let mut x = vec![vec![1.0; n]];
    for term in &spec.fixed_terms {
        x.push(ds.numeric_column(term).unwrap().iter().map(|v| v.unwrap()).collect());
    }
    let theta = [0.33, 0.21, 0.84];
    let (beta, _cov) = gls_fixed_effects(&x, &y, &theta, &st).unwrap();

    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut cell = 0.0;
            if district[i] == district[j] {
                cell += theta[0];
            }
            if household[i] == household[j] {
                cell += theta[1];
            }
            if i == j {
                cell += theta[2];
            }
            v[(i, j)] = cell;
        }
    }
    let vinv = v.clone().try_inverse().unwrap();
    let p = x.len();
    let mut xm = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            xm[(i, j)] = x[j][i];
        }
    }
    let yv = DVector::from_column_slice(&y);
    let xtvx = xm.transpose() * &vinv * &xm;
    let xtvy = xm.transpose() * &vinv * &yv;
    let dense_beta = xtvx.lu().solve(&xtvy).unwrap();
    for j in 0..p {
        assert!(
            (beta[j] - dense_beta[j]).abs() < 1e-10,
            "beta[{j}]: {} vs dense {}",
            beta[j],
            dense_beta[j]
        );
    }

    let ll = profile_loglik(&ds, &spec, &theta, &beta).unwrap();
    let e = &yv - &xm * DVector::from_column_slice(&beta);
    let quad = e.dot(&(&vinv * &e));
    let logdet = v.lu().determinant().ln();
    let dense_ll = -0.5 * (logdet + quad + n as f64 * (2.0 * std::f64::consts::PI).ln());
    assert!(
        (ll - dense_ll).abs() < 1e-10,
        "loglik {ll} vs dense {dense_ll}"
    );
}

#[test]
fn reml_fit_matches_anova_on_balanced_two_level() {
    for seed in 0..5u64 {
        let cfg = SimulationConfig {
            seed: 300 + seed,
            levels: vec![
                LevelConfig { name: "district".into(), count: 15, count_max: None },
                LevelConfig { name: "person".into(), count: 6, count_max: None },
            ],
            variances: vec![0.5, 1.0],
            intercept: 0.3,
            beta: vec![],
            covariates: vec![],
            response: "y".into(),
            ordinal: None,
        };
        let ds = simulate_nested(&cfg).unwrap();
        let spec = ModelSpec {
            response: "y".into(),
            fixed_terms: vec![],
            random_levels: vec!["district".into(), "person".into()],
        };
        let fit = fit_random_intercept(&ds, &spec, &tight(Flavor::RemlLike)).unwrap();
        let (group, resid) = anova_varcomp_oracle(&ds, "y").unwrap();
        assert!(
            (fit.varcomps[0].variance - group).abs() < 1e-8,
            "seed {seed}: group {} vs anova {group}",
            fit.varcomps[0].variance
        );
        assert!(
            (fit.varcomps[1].variance - resid).abs() < 1e-8,
            "seed {seed}: resid {} vs anova {resid}",
            fit.varcomps[1].variance
        );
    }
}

#[test]
fn zero_group_variance_data_clamps_and_matches_ols() {
    // Data generated with zero between-group variance: fitted group
    // variance clamps to 0 and the coefficients equal pooled OLS.
    let cfg = SimulationConfig {
        seed: 77,
        levels: vec![
            LevelConfig { name: "district".into(), count: 25, count_max: None },
            LevelConfig { name: "person".into(), count: 8, count_max: None },
        ],
        variances: vec![0.0, 1.0],
        intercept: 1.0,
        beta: vec![BetaConfig { name: "x0".into(), value: 0.7 }],
        covariates: vec![CovariateConfig {
            name: "x0".into(),
            generator: CovariateGenerator::StandardNormal,
            level: None,
        }],
        response: "y".into(),
        ordinal: None,
    };
    let ds = simulate_nested(&cfg).unwrap();
    let spec = ModelSpec {
        response: "y".into(),
        fixed_terms: vec!["x0".into()],
        random_levels: vec!["district".into(), "person".into()],
    };
    let fit = fit_random_intercept(&ds, &spec, &tight(Flavor::Ml)).unwrap();
    if fit.varcomps[0].variance == 0.0 {
        assert!(fit.clamped_levels.contains(&"district".to_string()));
        // With the group variance at zero, V ∝ I forces β = OLS.
        let y: Vec<f64> =
            ds.numeric_column("y").unwrap().iter().map(|v| v.unwrap()).collect();
        let x: Vec<f64> =
            ds.numeric_column("x0").unwrap().iter().map(|v| v.unwrap()).collect();
        let n = y.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        assert!((fit.beta[1].estimate - slope).abs() < 1e-8);
        assert!((fit.beta[0].estimate - (my - slope * mx)).abs() < 1e-8);
    } else {
        // Sampling noise can leave a small positive estimate; it must at
        // least agree with the dense oracle.
        let oracle = dense_ml_oracle(&ds, &spec).unwrap();
        assert!((fit.varcomps[0].variance - oracle.varcomps[0].variance).abs() < 1e-5);
    }
}
