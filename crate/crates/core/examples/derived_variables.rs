//! The derived-variable toolkit on small literal data: twelve-item distress
//! scoring, sign flip, standardization, dummy coding, a cross-level
//! interaction and within-group coefficients of variation.
//!
//! ```bash
//! cargo run --example derived_variables
//! ```

use multilevel::transform::{
    cross_level_interaction, dummy_code, ghq_likert_score, negate, standardize,
    within_group_cv, GroupValues,
};

fn main() {
    // Item responses 1..4 recode to 0..3 and sum to the 0..36 scale.
    for responses in [[1i64; 12], [4; 12], [1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4]] {
        println!("score{responses:?} = {}", ghq_likert_score(&responses).unwrap());
    }

    // Flip to a positive well-being scale, then standardize.
    let scores = vec![Some(12.0), Some(30.0), None, Some(6.0), Some(20.0)];
    let flipped = negate(&scores);
    let standardized = standardize("wellbeing", &flipped).unwrap();
    println!("\nscores        {scores:?}");
    println!("negated       {flipped:?}");
    println!("standardized  {:?}", standardized.iter().map(|v| v.map(|x| (x * 1000.0).round() / 1000.0)).collect::<Vec<_>>());

    // Dummy coding against a reference category.
    let tenure = vec![
        Some("own".to_string()),
        Some("private".to_string()),
        Some("social".to_string()),
        None,
    ];
    println!("\ntenure (reference = own):");
    for (category, cells) in dummy_code("tenure", &tenure, "own").unwrap() {
        println!("  tenure_{category}: {cells:?}");
    }

    // Unemployment indicator times the district unemployment rate.
    let unemployed = vec![Some(1.0), Some(0.0), Some(1.0), None];
    let district_rate = vec![Some(8.17), Some(8.17), Some(3.4), Some(5.0)];
    let interaction =
        cross_level_interaction("unemployed", &unemployed, &district_rate).unwrap();
    println!("\nunemployed x district rate = {interaction:?}");

    // Dispersion of enumeration-district rates within each district.
    let groups = vec![
        GroupValues { id: "D1".into(), values: vec![10.0, 10.0, 10.0] },
        GroupValues { id: "D2".into(), values: vec![5.0, 15.0] },
        GroupValues { id: "D3".into(), values: vec![3.0] },
    ];
    println!("\nwithin-district CV of unemployment rates:");
    for (id, outcome) in within_group_cv(&groups) {
        println!("  {id}: {outcome:?}");
    }
}
