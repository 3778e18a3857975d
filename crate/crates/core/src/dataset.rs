//! Nested multi-level tables: loading, joining, nesting validation and
//! listwise filtering.
//!
//! A [`HierarchicalDataset`] is a rectangular table whose rows are the
//! innermost observation units. Level identifier columns are ordered from
//! outermost to innermost (e.g. region, district, household, person) and
//! value columns are numeric or categorical with per-cell missingness.
//! Datasets are immutable after construction; every operation returns a new
//! dataset, so they are safe to share read-only across threads.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A value column: numeric or categorical, with per-cell missingness.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_none(),
            Column::Categorical(v) => v[row].is_none(),
        }
    }

    fn keep_rows(&self, keep: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(keep.iter().map(|&i| v[i]).collect()),
            Column::Categorical(v) => {
                Column::Categorical(keep.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }
}

/// Column kind declaration used when parsing CSV input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSchema {
    /// Identifier columns, outermost to innermost.
    pub levels: Vec<String>,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
}

/// Rectangular table with nested level identifiers and named value columns.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalDataset {
    level_columns: Vec<String>,
    /// One id vector per level column, parallel to rows.
    levels: Vec<Vec<String>>,
    columns: IndexMap<String, Column>,
    n_rows: usize,
}

/// Outcome of [`validate_nesting`]: every purity violation plus unit counts.
#[derive(Debug, Clone, Serialize)]
pub struct NestingReport {
    pub violations: Vec<NestingViolation>,
    /// Distinct units per level, in level order.
    pub level_counts: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NestingViolation {
    pub inner_level: String,
    pub inner_id: String,
    pub outer_level: String,
    pub outer_ids: Vec<String>,
}

impl NestingReport {
    pub fn is_pure(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Accounting for one [`join_level_table`] call.
#[derive(Debug, Clone, Serialize)]
pub struct JoinReport {
    pub level: String,
    pub columns: Vec<String>,
    pub matched_rows: usize,
    pub unmatched_rows: usize,
    pub unused_keys: usize,
}

/// Auxiliary table keyed by a level identifier, for joining.
#[derive(Debug, Clone)]
pub struct KeyedTable {
    pub key_column: String,
    pub columns: Vec<String>,
    /// key -> one value per column.
    pub rows: BTreeMap<String, Vec<Option<f64>>>,
}

fn parse_cell(raw: &str) -> Option<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() || trimmed == "NA" {
        return None;
    }
    trimmed.parse::<f64>().ok()
}

fn parse_categorical(raw: &str) -> Option<String> {
    let trimmed = raw.trim();
    if trimmed.is_empty() || trimmed == "NA" {
        None
    } else {
        Some(trimmed.to_string())
    }
}

impl HierarchicalDataset {
    /// Assemble a dataset from already-parsed columns. Level id vectors and
    /// value columns must all have equal length; the innermost identifier
    /// must be unique per row.
    pub fn from_parts(
        level_columns: Vec<String>,
        levels: Vec<Vec<String>>,
        columns: Vec<(String, Column)>,
    ) -> Result<Self> {
        if level_columns.is_empty() {
            return Err(Error::InvalidSpec("at least one level column required".into()));
        }
        let mut seen = BTreeSet::new();
        for name in &level_columns {
            if !seen.insert(name.clone()) {
                return Err(Error::InvalidSpec(format!("duplicate level column `{name}`")));
            }
        }
        assert_eq!(level_columns.len(), levels.len());
        let n_rows = levels.first().map(|v| v.len()).unwrap_or(0);
        for ids in &levels {
            assert_eq!(ids.len(), n_rows, "level id vectors must have equal length");
        }
        let mut map = IndexMap::new();
        for (name, col) in columns {
            assert_eq!(col.len(), n_rows, "column `{name}` length mismatch");
            if map.insert(name.clone(), col).is_some() {
                return Err(Error::ColumnCollision { column: name });
            }
        }
        let inner = levels.last().expect("non-empty levels");
        let mut seen_ids: HashMap<&str, usize> = HashMap::new();
        for (row, id) in inner.iter().enumerate() {
            if let Some(&first) = seen_ids.get(id.as_str()) {
                return Err(Error::DuplicateInnermostId { id: id.clone(), first, second: row });
            }
            seen_ids.insert(id, row);
        }
        Ok(Self { level_columns, levels, columns: map, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn level_columns(&self) -> &[String] {
        &self.level_columns
    }

    pub fn value_columns(&self) -> impl Iterator<Item = &String> {
        self.columns.keys()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns.get(name).ok_or_else(|| Error::UnknownColumn { column: name.into() })
    }

    pub fn numeric_column(&self, name: &str) -> Result<&[Option<f64>]> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Categorical(_) => Err(Error::NotNumeric { column: name.into() }),
        }
    }

    pub fn categorical_column(&self, name: &str) -> Result<&[Option<String>]> {
        match self.column(name)? {
            Column::Categorical(v) => Ok(v),
            Column::Numeric(_) => Err(Error::NotCategorical { column: name.into() }),
        }
    }

    pub fn level_index(&self, level: &str) -> Result<usize> {
        self.level_columns
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| Error::UnknownLevel { level: level.into() })
    }

    pub fn level_ids(&self, level: &str) -> Result<&[String]> {
        Ok(&self.levels[self.level_index(level)?])
    }

    /// Append a column; the name must not collide with an existing column.
    pub fn with_column(&self, name: &str, col: Column) -> Result<Self> {
        if self.columns.contains_key(name) || self.level_columns.iter().any(|l| l == name) {
            return Err(Error::ColumnCollision { column: name.into() });
        }
        assert_eq!(col.len(), self.n_rows);
        let mut out = self.clone();
        out.columns.insert(name.to_string(), col);
        Ok(out)
    }

    /// Copy of the dataset without the named value columns (used to check the
    /// join/project round trip).
    pub fn without_columns(&self, names: &[String]) -> Self {
        let mut out = self.clone();
        for n in names {
            out.columns.shift_remove(n);
        }
        out
    }
}

/// Parse a CSV file against a declared schema.
///
/// Unparseable or empty value cells become missing, never zero. Rows with a
/// missing level identifier are rejected: an observation that cannot be
/// placed in the hierarchy cannot enter any model. Columns present in the
/// file but not declared are ignored.
pub fn load_table(path: &Path, schema: &TableSchema) -> Result<HierarchicalDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| {
        Error::Csv { path: path.display().to_string(), source: e }
    })?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::Csv { path: path.display().to_string(), source: e })?
            .iter().map(|h| h.trim().to_string()).collect();

    let index_of = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            column: name.into(),
            path: path.display().to_string(),
        })
    };

    let level_idx: Vec<usize> =
        schema.levels.iter().map(|l| index_of(l)).collect::<Result<_>>()?;
    let numeric_idx: Vec<usize> =
        schema.numeric.iter().map(|c| index_of(c)).collect::<Result<_>>()?;
    let categorical_idx: Vec<usize> =
        schema.categorical.iter().map(|c| index_of(c)).collect::<Result<_>>()?;

    let mut levels: Vec<Vec<String>> = vec![Vec::new(); level_idx.len()];
    let mut numeric: Vec<Vec<Option<f64>>> = vec![Vec::new(); numeric_idx.len()];
    let mut categorical: Vec<Vec<Option<String>>> = vec![Vec::new(); categorical_idx.len()];

    for (row_no, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Csv { path: path.display().to_string(), source: e })?;
        for (k, &idx) in level_idx.iter().enumerate() {
            let raw = record.get(idx).unwrap_or("").trim();
            if raw.is_empty() || raw == "NA" {
                return Err(Error::MissingLevelId {
                    row: row_no + 2, // header is line 1
                    column: schema.levels[k].clone(),
                });
            }
            levels[k].push(raw.to_string());
        }
        for (k, &idx) in numeric_idx.iter().enumerate() {
            numeric[k].push(parse_cell(record.get(idx).unwrap_or("")));
        }
        for (k, &idx) in categorical_idx.iter().enumerate() {
            categorical[k].push(parse_categorical(record.get(idx).unwrap_or("")));
        }
    }

    let mut columns = Vec::new();
    for (name, cells) in schema.numeric.iter().zip(numeric) {
        columns.push((name.clone(), Column::Numeric(cells)));
    }
    for (name, cells) in schema.categorical.iter().zip(categorical) {
        columns.push((name.clone(), Column::Categorical(cells)));
    }
    HierarchicalDataset::from_parts(schema.levels.clone(), levels, columns)
}

/// Load an auxiliary keyed table (one row per unit of some level).
pub fn load_keyed_table(path: &Path, key_column: &str, value_columns: &[String]) -> Result<KeyedTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| {
        Error::Csv { path: path.display().to_string(), source: e }
    })?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::Csv { path: path.display().to_string(), source: e })?
            .iter().map(|h| h.trim().to_string()).collect();
    let key_idx = headers.iter().position(|h| h == key_column).ok_or_else(|| Error::MissingColumn {
        column: key_column.into(),
        path: path.display().to_string(),
    })?;
    let value_idx: Vec<usize> = value_columns
        .iter()
        .map(|c| {
            headers.iter().position(|h| h == c).ok_or_else(|| Error::MissingColumn {
                column: c.clone(),
                path: path.display().to_string(),
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = BTreeMap::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::Csv { path: path.display().to_string(), source: e })?;
        let key = record.get(key_idx).unwrap_or("").trim().to_string();
        let values: Vec<Option<f64>> =
            value_idx.iter().map(|&i| parse_cell(record.get(i).unwrap_or(""))).collect();
        if rows.insert(key.clone(), values).is_some() {
            return Err(Error::DuplicateJoinKey { key, level: key_column.into() });
        }
    }
    Ok(KeyedTable { key_column: key_column.into(), columns: value_columns.to_vec(), rows })
}

/// Left-join an auxiliary table at a level: each row gains the aux columns
/// looked up by its level identifier. Rows whose identifier is absent from
/// the aux table get missing values; the report counts them. Drop accounting
/// stays in [`listwise_filter`].
pub fn join_level_table(
    ds: &HierarchicalDataset,
    level: &str,
    aux: &KeyedTable,
) -> Result<(HierarchicalDataset, JoinReport)> {
    let ids = ds.level_ids(level)?;
    let mut new_cols: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(ds.n_rows()); aux.columns.len()];
    let mut matched_rows = 0usize;
    let mut used_keys: BTreeSet<&str> = BTreeSet::new();
    for id in ids {
        match aux.rows.get(id) {
            Some(values) => {
                matched_rows += 1;
                used_keys.insert(id.as_str());
                for (k, v) in values.iter().enumerate() {
                    new_cols[k].push(*v);
                }
            }
            None => {
                for col in new_cols.iter_mut() {
                    col.push(None);
                }
            }
        }
    }
    let mut out = ds.clone();
    for (name, cells) in aux.columns.iter().zip(new_cols) {
        out = out.with_column(name, Column::Numeric(cells))?;
    }
    let report = JoinReport {
        level: level.into(),
        columns: aux.columns.clone(),
        matched_rows,
        unmatched_rows: ds.n_rows() - matched_rows,
        unused_keys: aux.rows.len() - used_keys.len(),
    };
    Ok((out, report))
}

/// Check nesting purity: every distinct value of an inner identifier must
/// co-occur with exactly one value of each outer identifier.
pub fn validate_nesting(ds: &HierarchicalDataset) -> NestingReport {
    let k = ds.level_columns.len();
    let mut violations = Vec::new();
    for inner in 1..k {
        for outer in 0..inner {
            let mut parents: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
            for row in 0..ds.n_rows {
                parents
                    .entry(ds.levels[inner][row].as_str())
                    .or_default()
                    .insert(ds.levels[outer][row].as_str());
            }
            for (inner_id, outer_ids) in parents {
                if outer_ids.len() > 1 {
                    violations.push(NestingViolation {
                        inner_level: ds.level_columns[inner].clone(),
                        inner_id: inner_id.to_string(),
                        outer_level: ds.level_columns[outer].clone(),
                        outer_ids: outer_ids.into_iter().map(str::to_string).collect(),
                    });
                }
            }
        }
    }
    let level_counts = ds
        .level_columns
        .iter()
        .zip(&ds.levels)
        .map(|(name, ids)| {
            let distinct: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
            (name.clone(), distinct.len())
        })
        .collect();
    NestingReport { violations, level_counts }
}

/// Drop every row with a missing value in any of the needed columns.
/// Each dropped row is attributed to the first missing column in `needed`
/// order. Filtering twice with the same columns is a no-op.
pub fn listwise_filter(
    ds: &HierarchicalDataset,
    needed: &[String],
) -> Result<(HierarchicalDataset, BTreeMap<String, usize>)> {
    let cols: Vec<&Column> = needed.iter().map(|n| ds.column(n)).collect::<Result<_>>()?;
    let mut drops: BTreeMap<String, usize> = BTreeMap::new();
    let mut keep = Vec::with_capacity(ds.n_rows);
    'rows: for row in 0..ds.n_rows {
        for (name, col) in needed.iter().zip(&cols) {
            if col.is_missing(row) {
                *drops.entry(name.clone()).or_insert(0) += 1;
                continue 'rows;
            }
        }
        keep.push(row);
    }
    let levels = ds
        .levels
        .iter()
        .map(|ids| keep.iter().map(|&i| ids[i].clone()).collect())
        .collect();
    let columns = ds
        .columns
        .iter()
        .map(|(name, col)| (name.clone(), col.keep_rows(&keep)))
        .collect();
    let filtered =
        HierarchicalDataset::from_parts(ds.level_columns.clone(), levels, columns)?;
    Ok((filtered, drops))
}

/// Write the dataset back out as CSV (level columns first, then value
/// columns in declared order). Floats use shortest round-trip formatting so
/// a reload reproduces the dataset bit for bit; missing cells are empty.
pub fn write_csv(ds: &HierarchicalDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Csv { path: path.display().to_string(), source: e })?;
    let mut header: Vec<&str> = ds.level_columns.iter().map(String::as_str).collect();
    header.extend(ds.columns.keys().map(String::as_str));
    writer
        .write_record(&header)
        .map_err(|e| Error::Csv { path: path.display().to_string(), source: e })?;
    for row in 0..ds.n_rows {
        let mut record: Vec<String> = ds.levels.iter().map(|ids| ids[row].clone()).collect();
        for col in ds.columns.values() {
            record.push(match col {
                Column::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
                Column::Categorical(v) => v[row].clone().unwrap_or_default(),
            });
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Csv { path: path.display().to_string(), source: e })?;
    }
    writer.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    Ok(())
}

/// Schema describing the columns of a dataset as written by [`write_csv`].
pub fn schema_of(ds: &HierarchicalDataset) -> TableSchema {
    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    for (name, col) in &ds.columns {
        match col {
            Column::Numeric(_) => numeric.push(name.clone()),
            Column::Categorical(_) => categorical.push(name.clone()),
        }
    }
    TableSchema { levels: ds.level_columns.clone(), numeric, categorical }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn schema4() -> TableSchema {
        TableSchema {
            levels: vec!["region_id".into(), "district_id".into(), "household_id".into(), "person_id".into()],
            numeric: vec!["income".into()],
            categorical: vec!["tenure".into()],
        }
    }

    #[test]
    fn load_parses_four_level_csv() {
        let f = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,D1,H1,P1,10.5,own\n\
             R1,D1,H1,P2,,private\n\
             R1,D2,H2,P3,x,NA\n",
        );
        let ds = load_table(f.path(), &schema4()).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.level_columns().len(), 4);
        let income = ds.numeric_column("income").unwrap();
        assert_eq!(income[0], Some(10.5));
        assert_eq!(income[1], None, "blank cell flagged missing, row retained");
        assert_eq!(income[2], None, "unparseable cell flagged missing, never zeroed");
        let tenure = ds.categorical_column("tenure").unwrap();
        assert_eq!(tenure[2], None);
    }

    #[test]
    fn load_rejects_duplicate_innermost_id() {
        let f = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,D1,H1,P1,1,own\nR1,D1,H1,P1,2,own\n",
        );
        let err = load_table(f.path(), &schema4()).unwrap_err();
        assert!(matches!(err, Error::DuplicateInnermostId { .. }));
    }

    #[test]
    fn load_rejects_missing_level_id() {
        let f = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,,H1,P1,1,own\n",
        );
        let err = load_table(f.path(), &schema4()).unwrap_err();
        assert!(matches!(err, Error::MissingLevelId { column, .. } if column == "district_id"));
    }

    #[test]
    fn load_rejects_missing_declared_column() {
        let f = write_tmp("region_id,district_id,household_id,person_id,income\nR1,D1,H1,P1,1\n");
        let err = load_table(f.path(), &schema4()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { column, .. } if column == "tenure"));
    }

    #[test]
    fn impure_nesting_loads_then_reports() {
        // Household H1 appears under districts D1 and D2: load succeeds,
        // validate_nesting names the violation.
        let f = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,D1,H1,P1,1,own\nR1,D2,H1,P2,2,own\n",
        );
        let ds = load_table(f.path(), &schema4()).unwrap();
        let report = validate_nesting(&ds);
        assert!(!report.is_pure());
        let v = report
            .violations
            .iter()
            .find(|v| v.inner_level == "household_id" && v.outer_level == "district_id")
            .unwrap();
        assert_eq!(v.inner_id, "H1");
        assert_eq!(v.outer_ids, vec!["D1".to_string(), "D2".to_string()]);
    }

    #[test]
    fn pure_nesting_reports_counts() {
        let f = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,D1,H1,P1,1,own\nR1,D1,H1,P2,2,own\nR1,D2,H2,P3,3,own\n",
        );
        let ds = load_table(f.path(), &schema4()).unwrap();
        let report = validate_nesting(&ds);
        assert!(report.is_pure());
        assert_eq!(
            report.level_counts,
            vec![
                ("region_id".to_string(), 1),
                ("district_id".to_string(), 2),
                ("household_id".to_string(), 2),
                ("person_id".to_string(), 3)
            ]
        );
    }

    #[test]
    fn single_row_dataset_is_pure() {
        let f = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\nR1,D1,H1,P1,1,own\n",
        );
        let ds = load_table(f.path(), &schema4()).unwrap();
        let report = validate_nesting(&ds);
        assert!(report.is_pure());
        assert!(report.level_counts.iter().all(|(_, n)| *n == 1));
    }

    #[test]
    fn join_carries_district_rate_to_every_row() {
        let main = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,D1,H1,P1,1,own\nR1,D1,H2,P2,2,own\nR1,D2,H3,P3,3,own\n",
        );
        let aux = write_tmp("district_id,DUNRATE\nD1,8.17\nD2,5.2\nD9,1.0\n");
        let ds = load_table(main.path(), &schema4()).unwrap();
        let table = load_keyed_table(aux.path(), "district_id", &["DUNRATE".into()]).unwrap();
        let (joined, report) = join_level_table(&ds, "district_id", &table).unwrap();
        assert_eq!(joined.numeric_column("DUNRATE").unwrap(), &[Some(8.17), Some(8.17), Some(5.2)]);
        assert_eq!(report.matched_rows, 3);
        assert_eq!(report.unmatched_rows, 0);
        assert_eq!(report.unused_keys, 1);
    }

    #[test]
    fn join_with_no_matching_keys_reports_zero_matched() {
        let main = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\nR1,D1,H1,P1,1,own\n",
        );
        let aux = write_tmp("district_id,DUNRATE\nD7,1.0\n");
        let ds = load_table(main.path(), &schema4()).unwrap();
        let table = load_keyed_table(aux.path(), "district_id", &["DUNRATE".into()]).unwrap();
        let (joined, report) = join_level_table(&ds, "district_id", &table).unwrap();
        assert_eq!(joined.numeric_column("DUNRATE").unwrap(), &[None]);
        assert_eq!(report.matched_rows, 0);
    }

    #[test]
    fn duplicate_aux_key_is_an_error() {
        let aux = write_tmp("district_id,DUNRATE\nD1,8.17\nD1,5.2\n");
        let err = load_keyed_table(aux.path(), "district_id", &["DUNRATE".into()]).unwrap_err();
        assert!(matches!(err, Error::DuplicateJoinKey { key, .. } if key == "D1"));
    }

    #[test]
    fn join_then_project_returns_original() {
        let main = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,D1,H1,P1,1,own\nR1,D2,H2,P2,2,own\n",
        );
        let aux = write_tmp("district_id,DUNRATE\nD1,8.17\nD2,5.2\n");
        let ds = load_table(main.path(), &schema4()).unwrap();
        let table = load_keyed_table(aux.path(), "district_id", &["DUNRATE".into()]).unwrap();
        let (joined, _) = join_level_table(&ds, "district_id", &table).unwrap();
        assert_eq!(joined.without_columns(&["DUNRATE".into()]), ds);
    }

    #[test]
    fn listwise_filter_counts_and_attributes_drops() {
        let f = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,D1,H1,P1,1,own\n\
             R1,D1,H1,P2,,own\n\
             R1,D1,H2,P3,,\n\
             R1,D2,H3,P4,4,\n",
        );
        let ds = load_table(f.path(), &schema4()).unwrap();
        let needed = vec!["income".to_string(), "tenure".to_string()];
        let (filtered, drops) = listwise_filter(&ds, &needed).unwrap();
        assert_eq!(filtered.n_rows(), 1);
        // P2 and P3 are missing income first; P4 is missing tenure only.
        assert_eq!(drops.get("income"), Some(&2));
        assert_eq!(drops.get("tenure"), Some(&1));
    }

    #[test]
    fn listwise_filter_is_idempotent_and_identity_on_complete_data() {
        let f = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,D1,H1,P1,1,own\nR1,D1,H1,P2,2,own\n",
        );
        let ds = load_table(f.path(), &schema4()).unwrap();
        let needed = vec!["income".to_string()];
        let (once, drops) = listwise_filter(&ds, &needed).unwrap();
        assert!(drops.is_empty());
        assert_eq!(once, ds);
        let (twice, drops2) = listwise_filter(&once, &needed).unwrap();
        assert!(drops2.is_empty());
        assert_eq!(twice, once);
    }

    #[test]
    fn all_rows_missing_response_yields_empty_dataset() {
        let f = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,D1,H1,P1,,own\nR1,D1,H1,P2,,own\n",
        );
        let ds = load_table(f.path(), &schema4()).unwrap();
        let (filtered, drops) = listwise_filter(&ds, &["income".to_string()]).unwrap();
        assert_eq!(filtered.n_rows(), 0);
        assert_eq!(drops.get("income"), Some(&2));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let f = write_tmp(
            "region_id,district_id,household_id,person_id,income,tenure\n\
             R1,D1,H1,P1,0.1,own\nR1,D1,H1,P2,-3.25e-7,private\nR1,D2,H2,P3,,\n",
        );
        let ds = load_table(f.path(), &schema4()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path()).unwrap();
        let reloaded = load_table(out.path(), &schema_of(&ds)).unwrap();
        assert_eq!(reloaded, ds);
    }
}
