//! Null ("empty") models and the variance decomposition: simulate a
//! four-level nested dataset with known variance components, fit the
//! intercept-only model, and print the per-level decomposition and
//! intra-class correlations. A second fit drops the outermost level to
//! show how the remaining outer level absorbs the omitted variance.
//!
//! ```bash
//! cargo run --example variance_partition
//! ```

use multilevel::estimator::fit_null;
use multilevel::inference::VariancePartition;
use multilevel::simulate::{simulate_nested, LevelConfig, SimulationConfig};

fn main() {
    let cfg = SimulationConfig {
        seed: 7,
        levels: vec![
            LevelConfig { name: "region".into(), count: 30, count_max: None },
            LevelConfig { name: "district".into(), count: 5, count_max: None },
            LevelConfig { name: "household".into(), count: 8, count_max: None },
            LevelConfig { name: "person".into(), count: 4, count_max: None },
        ],
        variances: vec![0.05, 0.10, 0.15, 0.70],
        intercept: 0.0,
        beta: vec![],
        covariates: vec![],
        response: "wellbeing".into(),
        ordinal: None,
    };
    let ds = simulate_nested(&cfg).unwrap();
    println!("simulated {} individuals, true variances {:?}\n", ds.n_rows(), cfg.variances);

    let levels: Vec<String> = cfg.levels.iter().map(|l| l.name.clone()).collect();
    let fit = fit_null(&ds, &levels, "wellbeing").unwrap();
    let icc = VariancePartition::from_fit(&fit).unwrap();
    println!("4-level null model ({} iterations):", fit.iterations);
    println!("{:<12} {:>10} {:>8} {:>10}", "level", "variance", "se", "icc x100");
    for (vc, pct) in fit.varcomps.iter().zip(&icc.proportion_x100) {
        println!("{:<12} {:>10.3} {:>8.3} {:>10.2}", vc.level, vc.variance, vc.se, pct);
    }

    // Omit the region level: its variance folds into the district component.
    let fit3 = fit_null(&ds, &levels[1..], "wellbeing").unwrap();
    let icc3 = VariancePartition::from_fit(&fit3).unwrap();
    println!("\n3-level null model (region omitted):");
    println!("{:<12} {:>10} {:>8} {:>10}", "level", "variance", "se", "icc x100");
    for (vc, pct) in fit3.varcomps.iter().zip(&icc3.proportion_x100) {
        println!("{:<12} {:>10.3} {:>8.3} {:>10.2}", vc.level, vc.variance, vc.se, pct);
    }
    println!(
        "\ndistrict variance grew from {:.3} toward region+district = {:.3}",
        fit.varcomps[1].variance,
        fit.varcomps[0].variance + fit.varcomps[1].variance
    );
}
