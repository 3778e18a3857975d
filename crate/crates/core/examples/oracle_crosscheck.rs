//! The verification story at desk scale: the blockwise iterative-GLS fitter
//! against the dense-matrix maximum-likelihood oracle on a small instance,
//! and the REML flavor against the closed-form ANOVA estimators on a
//! balanced two-level design.
//!
//! ```bash
//! cargo run --release --example oracle_crosscheck
//! ```

use multilevel::estimator::{fit_random_intercept, ConvergenceSettings, Flavor, ModelSpec};
use multilevel::simulate::{
    anova_varcomp_oracle, dense_ml_oracle, simulate_nested, BetaConfig, CovariateConfig,
    CovariateGenerator, LevelConfig, SimulationConfig,
};

fn main() {
    let cfg = SimulationConfig {
        seed: 42,
        levels: vec![
            LevelConfig { name: "district".into(), count: 8, count_max: Some(10) },
            LevelConfig { name: "household".into(), count: 2, count_max: Some(4) },
            LevelConfig { name: "person".into(), count: 2, count_max: Some(3) },
        ],
        variances: vec![0.3, 0.25, 0.9],
        intercept: 0.4,
        beta: vec![BetaConfig { name: "x0".into(), value: -0.6 }],
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
        random_levels: vec!["district".into(), "household".into(), "person".into()],
    };
    let settings = ConvergenceSettings {
        rel_tolerance: 1e-11,
        max_iterations: 500,
        flavor: Flavor::Ml,
    };
    let fit = fit_random_intercept(&ds, &spec, &settings).unwrap();
    let oracle = dense_ml_oracle(&ds, &spec).unwrap();

    println!("{} rows; blockwise IGLS vs dense profile-likelihood oracle (ML):\n", ds.n_rows());
    println!("{:<12} {:>12} {:>12} {:>10}", "parameter", "iterative", "dense", "|diff|");
    for (a, b) in fit.beta.iter().zip(&oracle.beta) {
        println!(
            "{:<12} {:>12.6} {:>12.6} {:>10.2e}",
            a.term,
            a.estimate,
            b.estimate,
            (a.estimate - b.estimate).abs()
        );
    }
    for (a, b) in fit.varcomps.iter().zip(&oracle.varcomps) {
        println!(
            "{:<12} {:>12.6} {:>12.6} {:>10.2e}",
            a.level,
            a.variance,
            b.variance,
            (a.variance - b.variance).abs()
        );
    }
    println!(
        "log-likelihood {:.6} vs {:.6} (diff {:.2e})",
        fit.loglik,
        oracle.loglik,
        (fit.loglik - oracle.loglik).abs()
    );

    // Balanced two-level case: REML equals the one-way ANOVA estimators.
    let cfg2 = SimulationConfig {
        seed: 43,
        levels: vec![
            LevelConfig { name: "district".into(), count: 12, count_max: None },
            LevelConfig { name: "person".into(), count: 6, count_max: None },
        ],
        variances: vec![0.4, 1.1],
        intercept: 0.0,
        beta: vec![],
        covariates: vec![],
        response: "y".into(),
        ordinal: None,
    };
    let ds2 = simulate_nested(&cfg2).unwrap();
    let spec2 = ModelSpec {
        response: "y".into(),
        fixed_terms: vec![],
        random_levels: vec!["district".into(), "person".into()],
    };
    let reml = fit_random_intercept(
        &ds2,
        &spec2,
        &ConvergenceSettings { flavor: Flavor::RemlLike, ..settings },
    )
    .unwrap();
    let (group, resid) = anova_varcomp_oracle(&ds2, "y").unwrap();
    println!("\nbalanced 12x6 design; restricted IGLS vs closed-form ANOVA:");
    println!(
        "district variance {:.10} vs {:.10} (diff {:.2e})",
        reml.varcomps[0].variance,
        group,
        (reml.varcomps[0].variance - group).abs()
    );
    println!(
        "residual variance {:.10} vs {:.10} (diff {:.2e})",
        reml.varcomps[1].variance,
        resid,
        (reml.varcomps[1].variance - resid).abs()
    );
}
