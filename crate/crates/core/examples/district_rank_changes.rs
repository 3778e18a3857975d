//! Shrunken district residuals before and after controlling for
//! explanatory variables: which districts carry more well-being than their
//! composition predicts, how their ranking moves, and which sit at the
//! extremes of the comparison scatter.
//!
//! ```bash
//! cargo run --release --example district_rank_changes
//! ```

use std::path::Path;

use multilevel::config::RunConfig;
use multilevel::estimator::{fit_random_intercept, ModelSpec};
use multilevel::pipeline::prepare_dataset;
use multilevel::residuals::{eb_residuals, rank_changes, scatter_data};

fn main() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixture/demo.toml");
    let cfg = RunConfig::load(&fixture).unwrap();
    let (ds, _, _) = prepare_dataset(&cfg).unwrap();

    let model2 = cfg.models.iter().find(|m| m.name == "model2_covariates").unwrap();
    let settings = cfg.estimation.settings();
    let null = fit_random_intercept(
        &ds,
        &ModelSpec {
            response: model2.response.clone(),
            fixed_terms: vec![],
            random_levels: model2.levels.clone(),
        },
        &settings,
    )
    .unwrap();
    let full = fit_random_intercept(
        &ds,
        &ModelSpec {
            response: model2.response.clone(),
            fixed_terms: model2.fixed.clone(),
            random_levels: model2.levels.clone(),
        },
        &settings,
    )
    .unwrap();

    let res_null = eb_residuals(&null, &ds, "district_id").unwrap();
    let res_full = eb_residuals(&full, &ds, "district_id").unwrap();

    let lowest = res_null.entries.iter().find(|e| e.rank == 1).unwrap();
    let highest = res_null.entries.iter().max_by_key(|e| e.rank).unwrap();
    println!(
        "null model: lowest well-being district {} ({:+.4}), highest {} ({:+.4})",
        lowest.group, lowest.residual, highest.group, highest.residual
    );

    let table = rank_changes(&res_null, &res_full).unwrap();
    println!("\nlargest rank movements after adding covariates (of {} districts):", table.rows.len());
    println!("{:<8} {:>7} {:>7} {:>8}", "district", "rank A", "rank B", "change");
    for row in table.sorted_by_abs_change().iter().take(8) {
        println!("{:<8} {:>7} {:>7} {:>+8}", row.group, row.rank_a, row.rank_b, row.change);
    }
    let unchanged = table.unchanged_groups();
    println!("\n{} districts keep the same rank in both models: {:?}", unchanged.len(), unchanged);

    let scatter = scatter_data(&res_null, &res_full).unwrap();
    println!("\nscatter extremes (identity line included = {}):", scatter.identity_line);
    for annotation in &scatter.annotations {
        println!("  {} -> {}", annotation.group, annotation.tags.join(","));
    }
}
