//! Group index maps for nested data.
//!
//! A [`NestingStructure`] fixes a canonical row order (lexicographic in the
//! level identifiers, outermost first) so that every group at every level is
//! a contiguous row range. All estimator computations run in this canonical
//! order, which makes results invariant to the input row order.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Contiguous groups of one level in canonical row order.
#[derive(Debug, Clone)]
pub struct LevelGroups {
    pub name: String,
    /// `bounds[g]..bounds[g+1]` is the row range of group `g`.
    pub bounds: Vec<usize>,
    /// Group identifiers, parallel to ranges.
    pub ids: Vec<String>,
    /// Per outer block: the half-open span of group indices inside it.
    pub block_spans: Vec<(usize, usize)>,
}

impl LevelGroups {
    pub fn n_groups(&self) -> usize {
        self.ids.len()
    }

    pub fn range(&self, g: usize) -> std::ops::Range<usize> {
        self.bounds[g]..self.bounds[g + 1]
    }

    pub fn size(&self, g: usize) -> usize {
        self.bounds[g + 1] - self.bounds[g]
    }
}

/// Canonical ordering plus the group ranges of every non-residual level.
///
/// Level names run outermost to innermost; the innermost is the residual
/// (observation) level and must identify rows uniquely. The outermost
/// level's groups are the independent blocks of the implied covariance.
#[derive(Debug, Clone)]
pub struct NestingStructure {
    level_names: Vec<String>,
    n_rows: usize,
    /// Canonical position -> original row index.
    order: Vec<usize>,
    /// Non-residual levels, outermost first (empty for a 1-level structure).
    levels: Vec<LevelGroups>,
    /// Block row bounds: the outermost level's bounds, or `[0, n]` when
    /// there is no grouping level.
    block_bounds: Vec<usize>,
}

impl NestingStructure {
    /// Build from identifier columns in original row order, outermost first.
    /// The innermost column is the residual level. Fails on nesting-purity
    /// violations and on duplicate innermost identifiers.
    pub fn build(level_names: &[String], ids: &[&[String]]) -> Result<Self> {
        if level_names.is_empty() {
            return Err(Error::InvalidSpec("at least one level required".into()));
        }
        assert_eq!(level_names.len(), ids.len());
        let k = ids.len();
        let n = ids[0].len();
        for col in ids {
            assert_eq!(col.len(), n, "level id columns must have equal length");
        }

        // Purity against the immediate parent implies purity against every
        // outer level by transitivity.
        let mut violated = Vec::new();
        for l in 1..k {
            let mut parent_of: HashMap<&str, &str> = HashMap::new();
            let mut bad = false;
            for row in 0..n {
                let child = ids[l][row].as_str();
                let parent = ids[l - 1][row].as_str();
                match parent_of.get(child) {
                    Some(&p) if p != parent => {
                        bad = true;
                        break;
                    }
                    Some(_) => {}
                    None => {
                        parent_of.insert(child, parent);
                    }
                }
            }
            if bad {
                violated.push(level_names[l].clone());
            }
        }
        if !violated.is_empty() {
            return Err(Error::NestingViolated { levels: violated });
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            for col in ids {
                match col[a].cmp(&col[b]) {
                    Ordering::Equal => continue,
                    other => return other,
                }
            }
            Ordering::Equal
        });

        // Adjacent equal tuples mean a duplicated innermost identifier
        // (cross-parent duplicates were already caught as purity violations).
        for w in order.windows(2) {
            if (0..k).all(|l| ids[l][w[0]] == ids[l][w[1]]) {
                return Err(Error::DuplicateInnermostId {
                    id: ids[k - 1][w[0]].clone(),
                    first: w[0],
                    second: w[1],
                });
            }
        }

        // Group bounds per non-residual level: a new group starts where the
        // id prefix (levels 0..=l) changes.
        let mut levels = Vec::with_capacity(k - 1);
        for l in 0..k.saturating_sub(1) {
            let mut bounds = vec![0usize];
            let mut group_ids = Vec::new();
            if n > 0 {
                group_ids.push(ids[l][order[0]].clone());
            }
            for pos in 1..n {
                let (a, b) = (order[pos - 1], order[pos]);
                if (0..=l).any(|j| ids[j][a] != ids[j][b]) {
                    bounds.push(pos);
                    group_ids.push(ids[l][order[pos]].clone());
                }
            }
            bounds.push(n);
            levels.push(LevelGroups {
                name: level_names[l].clone(),
                bounds,
                ids: group_ids,
                block_spans: Vec::new(),
            });
        }

        let block_bounds = if levels.is_empty() {
            vec![0, n]
        } else {
            levels[0].bounds.clone()
        };

        // Per-block spans of group indices at each level.
        let n_blocks = block_bounds.len() - 1;
        for level in levels.iter_mut() {
            let mut spans = Vec::with_capacity(n_blocks);
            let mut g = 0usize;
            for b in 0..n_blocks {
                let end_row = block_bounds[b + 1];
                let start_g = g;
                while g < level.n_groups() && level.bounds[g + 1] <= end_row {
                    g += 1;
                }
                spans.push((start_g, g));
            }
            level.block_spans = spans;
        }

        Ok(Self { level_names: level_names.to_vec(), n_rows: n, order, levels, block_bounds })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Number of non-residual (grouping) levels.
    pub fn n_grouping_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_names(&self) -> &[String] {
        &self.level_names
    }

    pub fn residual_level(&self) -> &str {
        self.level_names.last().expect("non-empty levels")
    }

    pub fn levels(&self) -> &[LevelGroups] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &LevelGroups {
        &self.levels[l]
    }

    pub fn n_blocks(&self) -> usize {
        self.block_bounds.len() - 1
    }

    pub fn block(&self, b: usize) -> std::ops::Range<usize> {
        self.block_bounds[b]..self.block_bounds[b + 1]
    }

    /// Canonical position -> original row index.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Gather a slice from original row order into canonical order.
    pub fn gather<T: Clone>(&self, values: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| values[i].clone()).collect()
    }

    /// Identifiability checks for variance estimation: every grouping level
    /// needs at least two units, and no two adjacent levels (including the
    /// residual level) may coincide unit for unit.
    pub fn check_identifiable(&self) -> Result<()> {
        for level in &self.levels {
            if level.n_groups() < 2 {
                return Err(Error::SingleUnitLevel { level: level.name.clone() });
            }
        }
        for pair in self.levels.windows(2) {
            if pair[0].n_groups() == pair[1].n_groups() {
                return Err(Error::CoincidentLevels {
                    outer: pair[0].name.clone(),
                    inner: pair[1].name.clone(),
                });
            }
        }
        if let Some(last) = self.levels.last() {
            if last.n_groups() == self.n_rows {
                return Err(Error::CoincidentLevels {
                    outer: last.name.clone(),
                    inner: self.residual_level().to_string(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(values: &[&str]) -> Vec<String> {
        values.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn builds_sorted_ranges() {
        let district = ids(&["D2", "D1", "D1", "D2", "D1"]);
        let person = ids(&["P5", "P2", "P1", "P4", "P3"]);
        let st = NestingStructure::build(
            &["district".into(), "person".into()],
            &[&district, &person],
        )
        .unwrap();
        assert_eq!(st.n_blocks(), 2);
        assert_eq!(st.level(0).ids, vec!["D1", "D2"]);
        assert_eq!(st.level(0).bounds, vec![0, 3, 5]);
        // canonical order sorts by (district, person)
        assert_eq!(st.gather(&district), ids(&["D1", "D1", "D1", "D2", "D2"]));
        assert_eq!(st.gather(&person), ids(&["P1", "P2", "P3", "P4", "P5"]));
    }

    #[test]
    fn rejects_purity_violation() {
        let district = ids(&["D1", "D2"]);
        let household = ids(&["H1", "H1"]);
        let person = ids(&["P1", "P2"]);
        let err = NestingStructure::build(
            &["district".into(), "household".into(), "person".into()],
            &[&district, &household, &person],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NestingViolated { levels } if levels == vec!["household"]));
    }

    #[test]
    fn rejects_duplicate_innermost() {
        let district = ids(&["D1", "D1"]);
        let person = ids(&["P1", "P1"]);
        let err = NestingStructure::build(
            &["district".into(), "person".into()],
            &[&district, &person],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateInnermostId { .. }));
    }

    #[test]
    fn identifiability_checks() {
        // single district
        let district = ids(&["D1", "D1"]);
        let person = ids(&["P1", "P2"]);
        let st = NestingStructure::build(
            &["district".into(), "person".into()],
            &[&district, &person],
        )
        .unwrap();
        assert!(matches!(st.check_identifiable(), Err(Error::SingleUnitLevel { level }) if level == "district"));

        // one observation per group: group and residual coincide
        let district = ids(&["D1", "D2"]);
        let person = ids(&["P1", "P2"]);
        let st = NestingStructure::build(
            &["district".into(), "person".into()],
            &[&district, &person],
        )
        .unwrap();
        assert!(matches!(st.check_identifiable(), Err(Error::CoincidentLevels { .. })));
    }

    #[test]
    fn block_spans_cover_levels() {
        let region = ids(&["R1", "R1", "R1", "R2", "R2", "R2"]);
        let district = ids(&["D1", "D1", "D2", "D3", "D4", "D4"]);
        let person = ids(&["P1", "P2", "P3", "P4", "P5", "P6"]);
        let st = NestingStructure::build(
            &["region".into(), "district".into(), "person".into()],
            &[&region, &district, &person],
        )
        .unwrap();
        assert_eq!(st.n_blocks(), 2);
        assert_eq!(st.level(1).block_spans, vec![(0, 2), (2, 4)]);
        assert_eq!(st.level(1).ids, vec!["D1", "D2", "D3", "D4"]);
    }
}
