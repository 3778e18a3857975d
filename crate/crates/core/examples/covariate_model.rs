//! Random-intercept models with explanatory variables on the bundled
//! fixture: fit the null and covariate models for standardized well-being,
//! flag significant coefficients and show how the variance components move
//! when the covariates come in.
//!
//! ```bash
//! cargo run --release --example covariate_model
//! ```

use std::path::Path;

use multilevel::config::RunConfig;
use multilevel::estimator::{fit_random_intercept, ModelSpec};
use multilevel::inference::{significance_flags, variance_reduction, SignificanceFlag};
use multilevel::pipeline::prepare_dataset;

fn main() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixture/demo.toml");
    let cfg = RunConfig::load(&fixture).unwrap();
    let (ds, _, _) = prepare_dataset(&cfg).unwrap();
    println!("prepared {} individuals with derived variables\n", ds.n_rows());

    let model2 = cfg.models.iter().find(|m| m.name == "model2_covariates").unwrap();
    let null_spec = ModelSpec {
        response: model2.response.clone(),
        fixed_terms: vec![],
        random_levels: model2.levels.clone(),
    };
    let full_spec = ModelSpec {
        response: model2.response.clone(),
        fixed_terms: model2.fixed.clone(),
        random_levels: model2.levels.clone(),
    };
    let settings = cfg.estimation.settings();
    let null = fit_random_intercept(&ds, &null_spec, &settings).unwrap();
    let full = fit_random_intercept(&ds, &full_spec, &settings).unwrap();

    println!("covariate model ({} rows after listwise deletion):", full.n_rows);
    println!("{:<28} {:>9} {:>8}  flag", "term", "estimate", "se");
    let flags = significance_flags(&full.beta, cfg.estimation.significance_threshold);
    for (b, (_, flag)) in full.beta.iter().zip(&flags) {
        let mark = match flag {
            SignificanceFlag::Flagged => "*",
            SignificanceFlag::NotFlagged => "",
            SignificanceFlag::Undefined => "?",
        };
        println!("{:<28} {:>9.3} {:>8.3}  {mark}", b.term, b.estimate, b.se);
    }

    println!("\nvariance components, null vs covariate model:");
    println!(
        "{:<14} {:>10} {:>10} {:>11} {:>11}",
        "level", "null var", "full var", "null icc%", "full icc%"
    );
    for row in variance_reduction(&null, &full).unwrap() {
        println!(
            "{:<14} {:>10.3} {:>10.3} {:>11.2} {:>11.2}",
            row.level, row.null_variance, row.full_variance, row.null_icc_x100, row.full_icc_x100
        );
    }
}
