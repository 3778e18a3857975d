//! A small Monte-Carlo recovery study: repeatedly simulate a four-level
//! design with known variance components, fit the null model, and compare
//! the mean estimates against truth with Monte-Carlo error bars. The
//! acceptance suite runs the full 200-replication version.
//!
//! ```bash
//! cargo run --release --example parameter_recovery
//! ```

use rayon::prelude::*;

use multilevel::estimator::{fit_random_intercept, ConvergenceSettings, ModelSpec};
use multilevel::simulate::{simulate_nested, LevelConfig, SimulationConfig};

fn main() {
    let truth = [0.05, 0.10, 0.15, 0.70];
    let n_reps = 60u64;
    let estimates: Vec<Vec<f64>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let cfg = SimulationConfig {
                seed: 1000 + rep,
                levels: vec![
                    LevelConfig { name: "region".into(), count: 30, count_max: None },
                    LevelConfig { name: "district".into(), count: 5, count_max: None },
                    LevelConfig { name: "household".into(), count: 8, count_max: None },
                    LevelConfig { name: "person".into(), count: 4, count_max: None },
                ],
                variances: truth.to_vec(),
                intercept: 0.0,
                beta: vec![],
                covariates: vec![],
                response: "y".into(),
                ordinal: None,
            };
            let ds = simulate_nested(&cfg).unwrap();
            let spec = ModelSpec {
                response: "y".into(),
                fixed_terms: vec![],
                random_levels: cfg.levels.iter().map(|l| l.name.clone()).collect(),
            };
            fit_random_intercept(&ds, &spec, &ConvergenceSettings::default())
                .unwrap()
                .variances()
        })
        .collect();

    println!("{n_reps} replications of 30 regions x 5 districts x 8 households x 4 persons\n");
    println!("{:<12} {:>8} {:>10} {:>10}", "level", "truth", "mean est", "mc se");
    let names = ["region", "district", "household", "person"];
    let n = n_reps as f64;
    for (l, name) in names.iter().enumerate() {
        let values: Vec<f64> = estimates.iter().map(|v| v[l]).collect();
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        println!(
            "{:<12} {:>8.3} {:>10.4} {:>10.4}{}",
            name,
            truth[l],
            mean,
            sd / n.sqrt(),
            if (mean - truth[l]).abs() <= 3.0 * sd / n.sqrt() { "" } else { "  <-- off" }
        );
    }
}
