//! Hierarchical (multilevel) linear-model engine and survey-analytics
//! pipeline: build derived variables from nested individual/household/area
//! tables, fit nested random-intercept models, decompose variance across
//! levels, and extract and rank shrunken group-level residuals. Ordered
//! probit null models and simulation oracles make every estimator claim
//! verifiable offline.
//!
//! The library is the primary interface; the `multilevel` binary wraps it
//! for config-driven batch runs. Each capability has a runnable example:
//!
//! ```text
//! examples/
//! ├── variance_partition.rs    # null models, ICC decomposition, level collapse
//! ├── derived_variables.rs     # scoring, standardize/negate, dummies, interactions, CVs
//! ├── covariate_model.rs       # fixture fit with significance flags
//! ├── district_rank_changes.rs # EB residuals, rank movements, scatter extremes
//! ├── ordered_probit_null.rs   # MQL1 / PQL2 / quadrature side by side
//! ├── parameter_recovery.rs    # Monte-Carlo recovery of known variances
//! ├── oracle_crosscheck.rs     # blockwise fitter vs dense oracle and ANOVA
//! ├── end_to_end_pipeline.rs   # the full pipeline on the bundled fixture
//! └── make_fixture.rs          # regenerate the bundled fixture (fixed seed)
//! ```

pub mod config;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod inference;
pub(crate) mod optimize;
pub mod ordinal;
pub mod pipeline;
pub mod report;
pub mod residuals;
pub mod simulate;
pub mod transform;

pub use error::{Error, Result};
