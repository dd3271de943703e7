//! Typed, immutable columnar tables loaded from delimiter-separated text.
//!
//! A [`Dataset`] is built once (from a file or from in-memory columns) and
//! never mutated afterwards. Numeric columns hold finite `f64` values and
//! categorical columns hold interned strings. Missing cells never survive
//! ingestion: they either drop the whole row or abort the load, depending on
//! the [`MissingPolicy`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cell markers treated as missing values.
pub const MISSING_MARKERS: [&str; 2] = ["", "NA"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited text: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("header does not match schema: {0}")]
    HeaderMismatch(String),
    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    NotNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: non-finite value `{value}`")]
    NonFinite {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: missing value")]
    Missing { row: usize, column: String },
    #[error("row {row} has {found} cells, expected {expected}")]
    RowWidth {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("attribute `{name}` is {actual}, expected {expected}")]
    WrongKind {
        name: String,
        actual: AttributeKind,
        expected: AttributeKind,
    },
    #[error("attribute `{0}` has no values")]
    Empty(String),
    #[error("column `{name}` has {len} values, expected {expected}")]
    ColumnLength {
        name: String,
        len: usize,
        expected: usize,
    },
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Numerical,
    Categorical,
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeKind::Numerical => f.write_str("numerical"),
            AttributeKind::Categorical => f.write_str("categorical"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttributeRole {
    Qi,
    #[default]
    NonQi,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
    #[serde(default)]
    pub role: AttributeRole,
}

impl Attribute {
    pub fn numerical(name: impl Into<String>, role: AttributeRole) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Numerical,
            role,
        }
    }

    pub fn categorical(name: impl Into<String>, role: AttributeRole) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Categorical,
            role,
        }
    }
}

/// Ordered list of attributes with unique names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    attributes: Vec<Attribute>,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self, DatasetError> {
        if attributes.is_empty() {
            return Err(DatasetError::Schema("no attributes".into()));
        }
        let mut seen = HashSet::new();
        for attr in &attributes {
            if attr.name.is_empty() {
                return Err(DatasetError::Schema("empty attribute name".into()));
            }
            if !seen.insert(attr.name.as_str()) {
                return Err(DatasetError::Schema(format!(
                    "duplicate attribute `{}`",
                    attr.name
                )));
            }
        }
        Ok(Schema { attributes })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn quasi_identifiers(&self) -> impl Iterator<Item = &Attribute> {
        self.attributes
            .iter()
            .filter(|a| a.role == AttributeRole::Qi)
    }

    /// Schemas used for linkage must declare at least one quasi-identifier.
    pub fn require_qi(&self) -> Result<(), DatasetError> {
        if self.quasi_identifiers().next().is_none() {
            return Err(DatasetError::Schema("no attribute has role qi".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    DropRow,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numerical(Vec<f64>),
    Categorical(Vec<Arc<str>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numerical(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> AttributeKind {
        match self {
            Column::Numerical(_) => AttributeKind::Numerical,
            Column::Categorical(_) => AttributeKind::Categorical,
        }
    }

    pub fn as_numbers(&self) -> Option<&[f64]> {
        match self {
            Column::Numerical(v) => Some(v),
            Column::Categorical(_) => None,
        }
    }

    pub fn as_categories(&self) -> Option<&[Arc<str>]> {
        match self {
            Column::Categorical(v) => Some(v),
            Column::Numerical(_) => None,
        }
    }

    /// Builds a categorical column, sharing one allocation per distinct value.
    pub fn categorical<S: AsRef<str>>(values: impl IntoIterator<Item = S>) -> Column {
        let mut interner = Interner::default();
        Column::Categorical(
            values
                .into_iter()
                .map(|v| interner.intern(v.as_ref()))
                .collect(),
        )
    }

    fn take(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numerical(v) => Column::Numerical(rows.iter().map(|&i| v[i]).collect()),
            Column::Categorical(v) => {
                Column::Categorical(rows.iter().map(|&i| Arc::clone(&v[i])).collect())
            }
        }
    }
}

#[derive(Default)]
struct Interner {
    pool: HashMap<Box<str>, Arc<str>>,
}

impl Interner {
    fn intern(&mut self, value: &str) -> Arc<str> {
        if let Some(v) = self.pool.get(value) {
            return Arc::clone(v);
        }
        let shared: Arc<str> = Arc::from(value);
        self.pool.insert(value.into(), Arc::clone(&shared));
        shared
    }
}

/// Immutable table. All columns have `row_count` entries and follow the
/// schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    schema: Schema,
    columns: Vec<Column>,
    row_count: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        schema: Schema,
        columns: Vec<Column>,
    ) -> Result<Self, DatasetError> {
        if columns.len() != schema.len() {
            return Err(DatasetError::Schema(format!(
                "{} columns for {} attributes",
                columns.len(),
                schema.len()
            )));
        }
        let row_count = columns.first().map_or(0, Column::len);
        for (attr, col) in schema.attributes().iter().zip(&columns) {
            if col.kind() != attr.kind {
                return Err(DatasetError::WrongKind {
                    name: attr.name.clone(),
                    actual: col.kind(),
                    expected: attr.kind,
                });
            }
            if col.len() != row_count {
                return Err(DatasetError::ColumnLength {
                    name: attr.name.clone(),
                    len: col.len(),
                    expected: row_count,
                });
            }
            if let Column::Numerical(values) = col {
                if let Some((row, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                    return Err(DatasetError::NonFinite {
                        row,
                        column: attr.name.clone(),
                        value: v.to_string(),
                    });
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            schema,
            columns,
            row_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column, DatasetError> {
        self.schema
            .position(name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| DatasetError::UnknownAttribute(name.to_string()))
    }

    pub fn numeric_column(&self, name: &str) -> Result<&[f64], DatasetError> {
        let col = self.column(name)?;
        col.as_numbers().ok_or_else(|| DatasetError::WrongKind {
            name: name.to_string(),
            actual: col.kind(),
            expected: AttributeKind::Numerical,
        })
    }

    pub fn categorical_column(&self, name: &str) -> Result<&[Arc<str>], DatasetError> {
        let col = self.column(name)?;
        col.as_categories().ok_or_else(|| DatasetError::WrongKind {
            name: name.to_string(),
            actual: col.kind(),
            expected: AttributeKind::Categorical,
        })
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset, DatasetError> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.row_count) {
            return Err(DatasetError::RowOutOfRange {
                index: bad,
                rows: self.row_count,
            });
        }
        Ok(Dataset {
            name: self.name.clone(),
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            row_count: rows.len(),
        })
    }

    pub fn column_stats(&self, attr: &str) -> Result<ColumnStats, DatasetError> {
        self.column_stats_with(attr, StdDevConvention::Population)
    }

    pub fn column_stats_with(
        &self,
        attr: &str,
        convention: StdDevConvention,
    ) -> Result<ColumnStats, DatasetError> {
        let values = self.numeric_column(attr)?;
        ColumnStats::compute(values, convention).ok_or_else(|| DatasetError::Empty(attr.into()))
    }

    /// Distinct values of a categorical column, compared byte-for-byte.
    pub fn category_set(&self, attr: &str) -> Result<BTreeSet<String>, DatasetError> {
        let values = self.categorical_column(attr)?;
        Ok(values.iter().map(|v| v.to_string()).collect())
    }

    /// Writes the dataset as comma-separated text with a header row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.schema.attributes().iter().map(|a| a.name.as_str()))?;
        let mut record: Vec<String> = Vec::with_capacity(self.columns.len());
        for row in 0..self.row_count {
            record.clear();
            for col in &self.columns {
                record.push(match col {
                    Column::Numerical(v) => format_number(v[row]),
                    Column::Categorical(v) => v[row].to_string(),
                });
            }
            out.write_record(&record)?;
        }
        out.flush().map_err(|source| DatasetError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let file = File::create(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn format_number(value: f64) -> String {
    format!("{value}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StdDevConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1 (falls back to 0 for a single value).
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

impl ColumnStats {
    /// `None` for an empty slice.
    pub fn compute(values: &[f64], convention: StdDevConvention) -> Option<ColumnStats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let denom = match convention {
            StdDevConvention::Population => n,
            StdDevConvention::Sample if values.len() > 1 => n - 1.0,
            StdDevConvention::Sample => 1.0,
        };
        let (min, max) = min_max(values)?;
        Some(ColumnStats {
            mean,
            stddev: (ss / denom).sqrt(),
            min,
            max,
            median: median(values)?,
        })
    }
}

pub fn min_max(values: &[f64]) -> Option<(f64, f64)> {
    let first = *values.first()?;
    Some(
        values
            .iter()
            .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
    )
}

/// Median; mean of the two middle order statistics for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        Some(sorted[mid - 1] + (sorted[mid] - sorted[mid - 1]) / 2.0)
    }
}

pub fn load_dataset(
    path: &Path,
    schema: &Schema,
    policy: MissingPolicy,
) -> Result<Dataset, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_dataset(file, name, schema, policy)
}

/// Parses comma-separated text with a mandatory header. Header names must
/// equal the schema names as a set; columns come out in schema order.
pub fn read_dataset<R: Read>(
    reader: R,
    name: impl Into<String>,
    schema: &Schema,
    policy: MissingPolicy,
) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();

    let mut file_pos: Vec<Option<usize>> = vec![None; schema.len()];
    let mut seen = HashSet::new();
    for (i, h) in header.iter().enumerate() {
        if !seen.insert(h) {
            return Err(DatasetError::HeaderMismatch(format!(
                "duplicate column `{h}`"
            )));
        }
        match schema.position(h) {
            Some(p) => file_pos[p] = Some(i),
            None => {
                return Err(DatasetError::HeaderMismatch(format!(
                    "column `{h}` not in schema"
                )))
            }
        }
    }
    let file_pos: Vec<usize> = file_pos
        .into_iter()
        .zip(schema.attributes())
        .map(|(p, a)| {
            p.ok_or_else(|| DatasetError::HeaderMismatch(format!("missing column `{}`", a.name)))
        })
        .collect::<Result<_, _>>()?;

    let mut builders: Vec<ColumnBuilder> = schema
        .attributes()
        .iter()
        .map(|a| ColumnBuilder::new(a.kind))
        .collect();
    let mut parsed: Vec<Cell> = Vec::with_capacity(schema.len());

    'rows: for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based, counting the header as row 1
        let row = r + 2;
        if record.len() != header.len() {
            return Err(DatasetError::RowWidth {
                row,
                found: record.len(),
                expected: header.len(),
            });
        }
        parsed.clear();
        for (attr, &pos) in schema.attributes().iter().zip(&file_pos) {
            let raw = &record[pos];
            if MISSING_MARKERS.contains(&raw) {
                match policy {
                    MissingPolicy::DropRow => continue 'rows,
                    MissingPolicy::Error => {
                        return Err(DatasetError::Missing {
                            row,
                            column: attr.name.clone(),
                        })
                    }
                }
            }
            parsed.push(match attr.kind {
                AttributeKind::Numerical => {
                    let v: f64 = raw.trim().parse().map_err(|_| DatasetError::NotNumeric {
                        row,
                        column: attr.name.clone(),
                        value: raw.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(DatasetError::NonFinite {
                            row,
                            column: attr.name.clone(),
                            value: raw.to_string(),
                        });
                    }
                    Cell::Number(v)
                }
                AttributeKind::Categorical => Cell::Text(pos),
            });
        }
        for (builder, cell) in builders.iter_mut().zip(&parsed) {
            match (builder, cell) {
                (ColumnBuilder::Numerical(v), Cell::Number(x)) => v.push(*x),
                (ColumnBuilder::Categorical(v, interner), Cell::Text(pos)) => {
                    v.push(interner.intern(&record[*pos]))
                }
                _ => unreachable!("cell kind follows schema kind"),
            }
        }
    }

    let columns = builders.into_iter().map(ColumnBuilder::finish).collect();
    Dataset::new(name, schema.clone(), columns)
}

enum Cell {
    Number(f64),
    Text(usize),
}

enum ColumnBuilder {
    Numerical(Vec<f64>),
    Categorical(Vec<Arc<str>>, Interner),
}

impl ColumnBuilder {
    fn new(kind: AttributeKind) -> Self {
        match kind {
            AttributeKind::Numerical => ColumnBuilder::Numerical(Vec::new()),
            AttributeKind::Categorical => {
                ColumnBuilder::Categorical(Vec::new(), Interner::default())
            }
        }
    }

    fn finish(self) -> Column {
        match self {
            ColumnBuilder::Numerical(v) => Column::Numerical(v),
            ColumnBuilder::Categorical(v, _) => Column::Categorical(v),
        }
    }
}
