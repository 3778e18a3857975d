//! Regenerates the bundled survey-like fixture: a four-level individual
//! table (region / district / household / person) with twelve ordinal
//! distress items and a roster of demographic covariates, a district-level
//! rates table, and an enumeration-district unemployment table for the
//! within-district dispersion proxy.
//!
//! The fixture is checked in; run this only to rebuild it. Everything is
//! drawn from a fixed-seed generator, so the output is byte-identical
//! across runs.

use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const REGIONS: usize = 11;
const DISTRICTS: usize = 160;

fn pick<'a>(rng: &mut ChaCha8Rng, table: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for (name, w) in table {
        if u < *w {
            return name;
        }
        u -= w;
    }
    table.last().unwrap().0
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixture");
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1991_04_21);

    // Districts spread over regions, with census-like rates.
    let mut district_region = Vec::with_capacity(DISTRICTS);
    for d in 0..DISTRICTS {
        district_region.push(d * REGIONS / DISTRICTS);
    }
    let unemployment: Vec<f64> =
        (0..DISTRICTS).map(|_| 3.0 + 12.0 * rng.gen::<f64>()).collect();
    let owner_rate: Vec<f64> =
        (0..DISTRICTS).map(|_| 45.0 + 40.0 * rng.gen::<f64>()).collect();

    let mut districts_csv = String::from("district_id,unemployment_rate,owner_occupier_rate\n");
    for d in 0..DISTRICTS {
        writeln!(
            districts_csv,
            "D{:03},{:.2},{:.2}",
            d + 1,
            unemployment[d],
            owner_rate[d]
        )
        .unwrap();
    }
    std::fs::write(dir.join("districts.csv"), districts_csv).unwrap();

    // Enumeration-district unemployment within each district.
    let mut ed_csv = String::from("district_id,ed_id,ed_unemployment_rate\n");
    let mut ed_counter = 0usize;
    for d in 0..DISTRICTS {
        let n_ed = 6 + rng.gen_range(0..5);
        for _ in 0..n_ed {
            ed_counter += 1;
            let noise: f64 = rng.sample::<f64, _>(StandardNormal);
            let rate = (unemployment[d] * (1.0 + 0.25 * noise)).max(0.3);
            writeln!(ed_csv, "D{:03},E{:04},{:.2}", d + 1, ed_counter, rate).unwrap();
        }
    }
    std::fs::write(dir.join("ed_rates.csv"), ed_csv).unwrap();

    // Individuals nested in households in districts in regions.
    let region_sd = 0.15f64;
    let district_sd = 0.35;
    let household_sd = 1.6;
    let person_sd = 3.8;
    let region_effects: Vec<f64> =
        (0..REGIONS).map(|_| region_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let district_effects: Vec<f64> =
        (0..DISTRICTS).map(|_| district_sd * rng.sample::<f64, _>(StandardNormal)).collect();

    let mut csv = String::from(
        "region_id,district_id,household_id,person_id,\
         ghq1,ghq2,ghq3,ghq4,ghq5,ghq6,ghq7,ghq8,ghq9,ghq10,ghq11,ghq12,ghql,\
         age,age_sq,income,hh_income,n_cars,\
         sex,health,employment,commute,years_at_address,hh_type,tenure\n",
    );
    let mut household_id = 0usize;
    let mut person_id = 0usize;
    for d in 0..DISTRICTS {
        let region = district_region[d];
        let n_households = rng.gen_range(10..=14);
        for _ in 0..n_households {
            household_id += 1;
            let hh_effect = household_sd * rng.sample::<f64, _>(StandardNormal);
            let hh_type = pick(
                &mut rng,
                &[
                    ("single", 0.18),
                    ("couple_no_children", 0.24),
                    ("couple_dep_children", 0.26),
                    ("couple_nondep_children", 0.10),
                    ("lone_parent_dep", 0.08),
                    ("lone_parent_nondep", 0.05),
                    ("other", 0.09),
                ],
            );
            let tenure = pick(&mut rng, &[("own", 0.68), ("private", 0.12), ("social", 0.20)]);
            let n_cars = rng.gen_range(0..=3);
            let hh_income = (14.0 + 30.0 * rng.gen::<f64>()
                + 6.0 * rng.sample::<f64, _>(StandardNormal))
            .max(4.0);
            let n_persons = *[1usize, 2, 2, 2, 3, 3, 4, 5].choose(&mut rng).unwrap();
            for _ in 0..n_persons {
                person_id += 1;
                let age = rng.gen_range(16..=90) as f64;
                let female = rng.gen_bool(0.52);
                let health = pick(
                    &mut rng,
                    &[
                        ("excellent", 0.25),
                        ("good", 0.40),
                        ("fair", 0.22),
                        ("poor", 0.10),
                        ("very_poor", 0.03),
                    ],
                );
                let employment = if age >= 65.0 {
                    pick(&mut rng, &[("retired", 0.85), ("employed", 0.10), ("other", 0.05)])
                } else {
                    let p_unemp = (unemployment[d] / 100.0 * 2.2).min(0.35);
                    if rng.gen_bool(p_unemp) {
                        "unemployed"
                    } else {
                        pick(
                            &mut rng,
                            &[
                                ("employed", 0.72),
                                ("family_care", 0.08),
                                ("student", 0.07),
                                ("sick_disabled", 0.05),
                                ("retired", 0.05),
                                ("maternity", 0.01),
                                ("gov_scheme", 0.01),
                                ("other", 0.01),
                            ],
                        )
                    }
                };
                let commute = if employment == "employed" {
                    pick(&mut rng, &[("none", 0.12), ("short", 0.55), ("medium", 0.22), ("long", 0.11)])
                } else {
                    "none"
                };
                let years = pick(
                    &mut rng,
                    &[("under_1", 0.12), ("one_to_five", 0.34), ("over_5", 0.54)],
                );
                let income = (6.0 + 18.0 * rng.gen::<f64>()
                    + 4.0 * rng.sample::<f64, _>(StandardNormal)
                    + if employment == "employed" { 6.0 } else { 0.0 })
                .max(0.5);

                // Latent distress: higher is worse.
                let mut distress = 10.0;
                distress += region_effects[region] + district_effects[d] + hh_effect;
                distress += person_sd * rng.sample::<f64, _>(StandardNormal);
                distress += match health {
                    "good" => 1.4,
                    "fair" => 3.2,
                    "poor" => 5.8,
                    "very_poor" => 8.5,
                    _ => 0.0,
                };
                if employment == "unemployed" {
                    // Unemployment hurts, but less where it is common.
                    distress += 3.4 - 0.12 * unemployment[d];
                }
                if employment == "sick_disabled" {
                    distress += 2.8;
                }
                if employment == "family_care" {
                    distress += 1.0;
                }
                if female {
                    distress += 0.9;
                }
                distress += 0.035 * (age - 16.0) - 0.00035 * (age - 16.0) * (age - 16.0);
                distress -= 0.03 * (income - 15.0) / 5.0;
                distress += match hh_type {
                    "couple_no_children" => -0.7,
                    "lone_parent_dep" => 1.2,
                    "other" => -0.3,
                    _ => 0.0,
                };
                distress += match tenure {
                    "social" => 0.6,
                    "private" => 0.25,
                    _ => 0.0,
                };
                if commute == "long" {
                    distress += 0.5;
                }
                if years == "over_5" {
                    distress -= 0.5;
                }
                distress += 0.045 * unemployment[d];

                // Twelve ordinal items cut from a shared latent scale.
                let mut items = [0u8; 12];
                for item in items.iter_mut() {
                    let z = (distress - 11.0) / 6.0
                        + 0.9 * rng.sample::<f64, _>(StandardNormal);
                    *item = if z < -0.6 {
                        1
                    } else if z < 0.4 {
                        2
                    } else if z < 1.6 {
                        3
                    } else {
                        4
                    };
                }

                let income_cell = if rng.gen_bool(0.03) {
                    String::new()
                } else {
                    format!("{income:.2}")
                };
                let hh_income_cell = if rng.gen_bool(0.02) {
                    String::new()
                } else {
                    format!("{hh_income:.2}")
                };
                let health_cell = if rng.gen_bool(0.01) { "" } else { health };

                writeln!(
                    csv,
                    "R{:02},D{:03},H{:05},P{:05},\
                     {},{},{},{},{},{},{},{},{},{},{},{},{},\
                     {},{},{},{},{},\
                     {},{},{},{},{},{},{}",
                    region + 1,
                    d + 1,
                    household_id,
                    person_id,
                    items[0],
                    items[1],
                    items[2],
                    items[3],
                    items[4],
                    items[5],
                    items[6],
                    items[7],
                    items[8],
                    items[9],
                    items[10],
                    items[11],
                    items[11],
                    age,
                    age * age,
                    income_cell,
                    hh_income_cell,
                    n_cars,
                    if female { "female" } else { "male" },
                    health_cell,
                    employment,
                    commute,
                    years,
                    hh_type,
                    tenure
                )
                .unwrap();
            }
        }
    }
    std::fs::write(dir.join("bhps_like.csv"), csv).unwrap();
    eprintln!(
        "wrote fixture: {} districts, {} households, {} persons",
        DISTRICTS, household_id, person_id
    );
}
