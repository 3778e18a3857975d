//! The whole pipeline as the command-line tool runs it: load the bundled
//! fixture and demo configuration, fit the four-model sequence, compare
//! district residuals, and list the artifacts written. Equivalent to
//! `multilevel run fixture/demo.toml` with a temporary output directory.
//!
//! ```bash
//! cargo run --release --example end_to_end_pipeline
//! ```

use std::path::Path;

use multilevel::config::RunConfig;
use multilevel::pipeline;

fn main() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixture/demo.toml");
    let mut cfg = RunConfig::load(&fixture).unwrap();
    let out = tempfile::tempdir().unwrap();
    cfg.output.dir = out.path().to_path_buf();

    let manifest = pipeline::run(&cfg).unwrap();
    println!("loaded {} rows", manifest.rows_loaded);
    for j in &manifest.joins {
        println!(
            "join at {}: {} matched, {} unmatched, {} unused keys",
            j.level, j.matched_rows, j.unmatched_rows, j.unused_keys
        );
    }
    println!();
    for m in &manifest.models {
        println!(
            "model {:<22} kind {:?}  rows {:>5}  {}converged in {} iterations",
            m.name,
            m.kind,
            m.rows_used,
            if m.converged { "" } else { "NOT " },
            m.iterations
        );
        for (col, n) in &m.drops {
            println!("    dropped {n} rows missing `{col}`");
        }
    }
    for c in &manifest.comparisons {
        println!(
            "\ncomparison {} vs {} at {}: {} districts share a rank",
            c.model_a,
            c.model_b,
            c.level,
            c.unchanged_groups.len()
        );
    }
    println!("\nartifacts:");
    for f in &manifest.files {
        println!("  {f}");
    }
}
