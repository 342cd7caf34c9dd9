//! Wide-format CSV ingestion and export of choice datasets.
//!
//! Each row is one choice situation. A [`SchemaConfig`] binds columns to
//! alternative attributes, shared attributes, availability flags and the
//! observed choice, and lists filters applied before the dataset is built.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rumsim_core::data::{AlternativeBlock, Dataset, SharedBlock, Standardizer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use rumsim_core::data::kfold_split;

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    /// Column holding the observed choice.
    pub choice: String,
    /// Code of each alternative in the choice column, in alternative order.
    /// Without it the column holds 0-based alternative indices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice_codes: Option<Vec<ChoiceCode>>,
    pub alternatives: Vec<AlternativeBinding>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shared: Vec<SharedBinding>,
    /// Applied in order; each row dropped is charged to the first filter rejecting it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filters: Vec<Filter>,
    /// z-score continuous columns with full-sample statistics after filtering.
    #[serde(default)]
    pub standardize: bool,
    /// Column of stable situation identifiers; the 0-based data row index otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

/// Numeric codes match any cell with the same numeric value; text codes match exactly.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChoiceCode {
    Int(i64),
    Text(String),
}

impl ChoiceCode {
    fn matches(&self, cell: &str) -> bool {
        match self {
            ChoiceCode::Int(c) => cell.parse::<f64>().is_ok_and(|v| v == *c as f64),
            ChoiceCode::Text(t) => cell == t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternativeBinding {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<ColumnBinding>,
    /// Column that is nonzero when the alternative is available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnBinding {
    pub name: String,
    pub column: String,
    /// Multiplier applied to every cell.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedBinding {
    pub name: String,
    pub column: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub scale: f64,
    /// The column is already a 0/1 indicator and is never standardized.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub indicator: bool,
    /// Expand into one indicator per non-reference level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categorical: Option<Categorical>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Categorical {
    /// Level without an indicator column.
    pub reference: String,
    /// Non-reference levels in output order; the distinct observed levels otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// Row filter evaluated on raw cell values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Filter {
    /// Drop rows with a missing value in `columns`, or in any bound column when empty.
    DropNan {
        #[serde(default)]
        columns: Vec<String>,
    },
    Eq { column: String, value: f64 },
    Ne { column: String, value: f64 },
    Lt { column: String, value: f64 },
    Le { column: String, value: f64 },
    Gt { column: String, value: f64 },
    Ge { column: String, value: f64 },
    In { column: String, values: Vec<f64> },
    NotIn { column: String, values: Vec<f64> },
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Filter::DropNan { columns } if columns.is_empty() => write!(f, "drop_nan(all bound columns)"),
            Filter::DropNan { columns } => write!(f, "drop_nan({})", columns.join(", ")),
            Filter::Eq { column, value } => write!(f, "{column} == {value}"),
            Filter::Ne { column, value } => write!(f, "{column} != {value}"),
            Filter::Lt { column, value } => write!(f, "{column} < {value}"),
            Filter::Le { column, value } => write!(f, "{column} <= {value}"),
            Filter::Gt { column, value } => write!(f, "{column} > {value}"),
            Filter::Ge { column, value } => write!(f, "{column} >= {value}"),
            Filter::In { column, values } => write!(f, "{column} in {values:?}"),
            Filter::NotIn { column, values } => write!(f, "{column} not in {values:?}"),
        }
    }
}

impl Filter {
    fn column(&self) -> Option<&str> {
        match self {
            Filter::DropNan { .. } => None,
            Filter::Eq { column, .. }
            | Filter::Ne { column, .. }
            | Filter::Lt { column, .. }
            | Filter::Le { column, .. }
            | Filter::Gt { column, .. }
            | Filter::Ge { column, .. }
            | Filter::In { column, .. }
            | Filter::NotIn { column, .. } => Some(column),
        }
    }

    fn keeps(&self, x: f64) -> bool {
        match self {
            Filter::DropNan { .. } => !x.is_nan(),
            Filter::Eq { value, .. } => x == *value,
            Filter::Ne { value, .. } => x != *value,
            Filter::Lt { value, .. } => x < *value,
            Filter::Le { value, .. } => x <= *value,
            Filter::Gt { value, .. } => x > *value,
            Filter::Ge { value, .. } => x >= *value,
            Filter::In { values, .. } => values.contains(&x),
            Filter::NotIn { values, .. } => !values.contains(&x),
        }
    }
}

impl SchemaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alternatives.len() < 2 {
            return Err(Error::config("schema needs at least two alternatives"));
        }
        if let Some(codes) = &self.choice_codes {
            if codes.len() != self.alternatives.len() {
                return Err(Error::config(format!(
                    "{} choice codes for {} alternatives",
                    codes.len(),
                    self.alternatives.len()
                )));
            }
            let distinct: BTreeSet<_> = codes.iter().collect();
            if distinct.len() != codes.len() {
                return Err(Error::config("choice codes must be distinct"));
            }
        }
        let mut names = BTreeSet::new();
        for a in &self.alternatives {
            if !names.insert(a.name.as_str()) {
                return Err(Error::config(format!("duplicate alternative `{}`", a.name)));
            }
            let mut attrs = BTreeSet::new();
            for c in &a.attributes {
                if !attrs.insert(c.name.as_str()) {
                    return Err(Error::config(format!("duplicate attribute `{}` in `{}`", c.name, a.name)));
                }
                check_scale(&c.name, c.scale)?;
            }
        }
        let mut shared = BTreeSet::new();
        for s in &self.shared {
            if !shared.insert(s.name.as_str()) {
                return Err(Error::config(format!("duplicate shared attribute `{}`", s.name)));
            }
            check_scale(&s.name, s.scale)?;
            if s.categorical.is_some() && s.indicator {
                return Err(Error::config(format!(
                    "`{}` cannot be both an indicator and categorical",
                    s.name
                )));
            }
        }
        Ok(())
    }

    /// Every column the schema reads, in first-use order.
    pub fn referenced_columns(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        let mut cols: Vec<&str> = vec![self.choice.as_str()];
        if let Some(id) = &self.id {
            cols.push(id);
        }
        for a in &self.alternatives {
            cols.extend(a.attributes.iter().map(|c| c.column.as_str()));
            cols.extend(a.availability.as_deref());
        }
        cols.extend(self.shared.iter().map(|s| s.column.as_str()));
        for f in &self.filters {
            cols.extend(f.column());
            if let Filter::DropNan { columns } = f {
                cols.extend(columns.iter().map(String::as_str));
            }
        }
        for c in cols {
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    /// Columns that end up in the dataset.
    fn bound_columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = vec![self.choice.as_str()];
        for a in &self.alternatives {
            cols.extend(a.attributes.iter().map(|c| c.column.as_str()));
            cols.extend(a.availability.as_deref());
        }
        cols.extend(self.shared.iter().map(|s| s.column.as_str()));
        cols.extend(self.id.as_deref());
        cols
    }
}

fn check_scale(name: &str, scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale != 0.0) {
        return Err(Error::config(format!("`{name}` has scale {scale}")));
    }
    Ok(())
}

/// Row counts of one ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestionReport {
    pub path: PathBuf,
    pub rows_read: usize,
    pub rows_kept: usize,
    pub filters: Vec<FilterCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterCount {
    pub filter: String,
    pub dropped: usize,
}

impl IngestionReport {
    pub fn rows_dropped(&self) -> usize {
        self.rows_read - self.rows_kept
    }
}

impl fmt::Display for IngestionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ingested {}", self.path.display())?;
        writeln!(f, "  rows read:    {}", self.rows_read)?;
        for c in &self.filters {
            writeln!(f, "  dropped {:>6} by {}", c.dropped, c.filter)?;
        }
        writeln!(f, "  rows dropped: {}", self.rows_dropped())?;
        write!(f, "  rows kept (N): {}", self.rows_kept)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Loaded {
    pub data: Dataset,
    pub report: IngestionReport,
}

fn parse_cell(text: &str) -> Option<f64> {
    let t = text.trim();
    match t {
        "" | "NA" | "na" | "NaN" | "nan" | "NULL" | "null" => Some(f64::NAN),
        _ => t.parse::<f64>().ok(),
    }
}

struct RawRow {
    line: usize,
    index: usize,
    numeric: Vec<f64>,
    text: Vec<String>,
}

/// Read a wide CSV file under `schema`, applying its filters and encodings.
pub fn load_dataset(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<Loaded> {
    let path = path.as_ref();
    schema.validate()?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: HashMap<String, usize> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    let columns: Vec<&str> = schema.referenced_columns();
    let mut position = Vec::with_capacity(columns.len());
    for c in &columns {
        match header.get(*c) {
            Some(&i) => position.push(i),
            None => {
                return Err(Error::UnknownColumn {
                    path: path.to_path_buf(),
                    column: c.to_string(),
                })
            }
        }
    }
    let col_of: HashMap<&str, usize> = columns.iter().enumerate().map(|(k, c)| (*c, k)).collect();
    let categorical: BTreeSet<&str> = schema
        .shared
        .iter()
        .filter(|s| s.categorical.is_some())
        .map(|s| s.column.as_str())
        .collect();
    let coded_choice = schema.choice_codes.is_some();

    let mut rows = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(index + 2, |p| p.line() as usize);
        let mut numeric = Vec::with_capacity(columns.len());
        let mut text = Vec::with_capacity(columns.len());
        for (k, &pos) in position.iter().enumerate() {
            let cell = record.get(pos).unwrap_or("");
            if categorical.contains(columns[k]) {
                numeric.push(if cell.is_empty() { f64::NAN } else { 0.0 });
                text.push(cell.to_string());
                continue;
            }
            if coded_choice && columns[k] == schema.choice {
                numeric.push(parse_cell(cell).unwrap_or(if cell.is_empty() { f64::NAN } else { 0.0 }));
                text.push(cell.to_string());
                continue;
            }
            match parse_cell(cell) {
                Some(v) => numeric.push(v),
                None => {
                    return Err(Error::Cell {
                        path: path.to_path_buf(),
                        row: line,
                        column: columns[k].to_string(),
                        message: format!("cannot parse `{cell}` as a number"),
                    })
                }
            }
            text.push(String::new());
        }
        rows.push(RawRow {
            line,
            index,
            numeric,
            text,
        });
    }
    let rows_read = rows.len();

    let bound: Vec<usize> = schema.bound_columns().iter().map(|c| col_of[c]).collect();
    let mut counts = Vec::with_capacity(schema.filters.len());
    for f in &schema.filters {
        let before = rows.len();
        rows.retain(|r| match f {
            Filter::DropNan { columns } if columns.is_empty() => bound.iter().all(|&k| !r.numeric[k].is_nan()),
            Filter::DropNan { columns } => columns.iter().all(|c| !r.numeric[col_of[c.as_str()]].is_nan()),
            _ => f.keeps(r.numeric[col_of[f.column().expect("comparison filters name a column")]]),
        });
        counts.push(FilterCount {
            filter: f.to_string(),
            dropped: before - rows.len(),
        });
    }

    let cell_err = |r: &RawRow, column: &str, message: String| Error::Cell {
        path: path.to_path_buf(),
        row: r.line,
        column: column.to_string(),
        message,
    };
    for r in &rows {
        for &k in &bound {
            if r.numeric[k].is_nan() {
                return Err(cell_err(r, columns[k], "missing value after filtering".into()));
            }
        }
    }

    let n = rows.len();
    let j = schema.alternatives.len();
    let choice_k = col_of[schema.choice.as_str()];
    let mut choice = Vec::with_capacity(n);
    for r in &rows {
        let v = r.numeric[choice_k];
        let idx = if let Some(codes) = &schema.choice_codes {
            codes.iter().position(|c| c.matches(&r.text[choice_k]))
        } else if v >= 0.0 && v.fract() == 0.0 && (v as usize) < j {
            Some(v as usize)
        } else {
            None
        };
        match idx {
            Some(i) => choice.push(i),
            None => {
                let shown = if coded_choice { r.text[choice_k].clone() } else { v.to_string() };
                return Err(cell_err(
                    r,
                    &schema.choice,
                    format!("choice `{shown}` does not name one of the {j} alternatives"),
                ));
            }
        }
    }

    let mut alternatives = Vec::with_capacity(j);
    for a in &schema.alternatives {
        let ks: Vec<(usize, f64)> = a.attributes.iter().map(|c| (col_of[c.column.as_str()], c.scale)).collect();
        let mut values = Vec::with_capacity(n * ks.len());
        for r in &rows {
            values.extend(ks.iter().map(|&(k, s)| r.numeric[k] * s));
        }
        alternatives.push(AlternativeBlock {
            name: a.name.clone(),
            attributes: a.attributes.iter().map(|c| c.name.clone()).collect(),
            values,
        });
    }

    let availability = if schema.alternatives.iter().any(|a| a.availability.is_some()) {
        let mut mask = Vec::with_capacity(n * j);
        for (i, r) in rows.iter().enumerate() {
            for (alt, a) in schema.alternatives.iter().enumerate() {
                let avail = a.availability.as_ref().is_none_or(|c| r.numeric[col_of[c.as_str()]] != 0.0);
                if alt == choice[i] && !avail {
                    return Err(cell_err(
                        r,
                        a.availability.as_deref().unwrap_or(&schema.choice),
                        format!("chosen alternative `{}` is marked unavailable", a.name),
                    ));
                }
                mask.push(avail);
            }
        }
        Some(mask)
    } else {
        None
    };

    let shared = shared_block(schema, &rows, &col_of, &cell_err)?;

    let ids: Vec<u64> = match &schema.id {
        Some(c) => {
            let k = col_of[c.as_str()];
            let mut ids = Vec::with_capacity(n);
            for r in &rows {
                let v = r.numeric[k];
                if !(v >= 0.0 && v.fract() == 0.0 && v < u64::MAX as f64) {
                    return Err(cell_err(r, c, format!("identifier {v} is not a non-negative integer")));
                }
                ids.push(v as u64);
            }
            ids
        }
        None => rows.iter().map(|r| r.index as u64).collect(),
    };

    let mut data = Dataset::with_ids(alternatives, shared, choice, availability, ids)?;
    if schema.standardize {
        data = Standardizer::fit(&data).apply(&data)?;
    }
    Ok(Loaded {
        data,
        report: IngestionReport {
            path: path.to_path_buf(),
            rows_read,
            rows_kept: n,
            filters: counts,
        },
    })
}

fn sort_levels(levels: &mut [String]) {
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        levels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    } else {
        levels.sort();
    }
}

fn shared_block(
    schema: &SchemaConfig,
    rows: &[RawRow],
    col_of: &HashMap<&str, usize>,
    cell_err: &dyn Fn(&RawRow, &str, String) -> Error,
) -> Result<SharedBlock> {
    let mut names = Vec::new();
    let mut indicator = Vec::new();
    // Column-major while building; transposed at the end.
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for s in &schema.shared {
        let k = col_of[s.column.as_str()];
        match &s.categorical {
            None => {
                names.push(s.name.clone());
                indicator.push(s.indicator);
                cols.push(rows.iter().map(|r| r.numeric[k] * s.scale).collect());
            }
            Some(cat) => {
                let levels = match &cat.levels {
                    Some(l) => l.clone(),
                    None => {
                        let distinct: BTreeSet<&str> = rows
                            .iter()
                            .map(|r| r.text[k].as_str())
                            .filter(|t| *t != cat.reference)
                            .collect();
                        let mut l: Vec<String> = distinct.into_iter().map(String::from).collect();
                        sort_levels(&mut l);
                        l
                    }
                };
                for r in rows {
                    let t = r.text[k].as_str();
                    if t != cat.reference && !levels.iter().any(|l| l == t) {
                        return Err(cell_err(r, &s.column, format!("unknown level `{t}`")));
                    }
                }
                for level in &levels {
                    names.push(format!("{}_{}", s.name, level));
                    indicator.push(true);
                    cols.push(rows.iter().map(|r| f64::from(u8::from(r.text[k] == *level))).collect());
                }
            }
        }
    }
    let n = rows.len();
    let mut values = Vec::with_capacity(n * cols.len());
    for i in 0..n {
        values.extend(cols.iter().map(|c| c[i]));
    }
    Ok(SharedBlock {
        names,
        indicator,
        values,
    })
}

/// Write `data` as a wide CSV and return the schema that reads it back unchanged.
///
/// Alternative attributes become `<attribute>_<alternative>` columns,
/// availability flags `av_<alternative>`, and the choice is a 0-based index.
pub fn write_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<SchemaConfig> {
    let path = path.as_ref();
    let schema = schema_for(data);
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = vec!["id".into()];
    for a in &schema.alternatives {
        header.extend(a.attributes.iter().map(|c| c.column.clone()));
        header.extend(a.availability.clone());
    }
    header.extend(schema.shared.iter().map(|s| s.column.clone()));
    header.push(schema.choice.clone());
    w.write_record(&header).map_err(csv_err)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..data.len() {
        let o = data.obs(i);
        record.clear();
        record.push(o.id().to_string());
        for j in 0..data.alternatives() {
            record.extend(o.alt(j).iter().map(|v| v.to_string()));
            if let Some(av) = o.available() {
                record.push(u8::from(av[j]).to_string());
            }
        }
        record.extend(o.shared().iter().map(|v| v.to_string()));
        record.push(o.choice().to_string());
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(schema)
}

/// Schema matching the layout produced by [`write_dataset`].
pub fn schema_for(data: &Dataset) -> SchemaConfig {
    let has_av = data.availability_mask().is_some();
    let alternatives = data
        .alternative_blocks()
        .iter()
        .map(|b| AlternativeBinding {
            name: b.name.clone(),
            attributes: b
                .attributes
                .iter()
                .map(|a| ColumnBinding {
                    name: a.clone(),
                    column: format!("{a}_{}", b.name),
                    scale: 1.0,
                })
                .collect(),
            availability: has_av.then(|| format!("av_{}", b.name)),
        })
        .collect();
    let sb = data.shared_block();
    let shared = sb
        .names
        .iter()
        .zip(&sb.indicator)
        .map(|(n, &ind)| SharedBinding {
            name: n.clone(),
            column: n.clone(),
            scale: 1.0,
            indicator: ind,
            categorical: None,
        })
        .collect();
    SchemaConfig {
        choice: "choice".into(),
        choice_codes: None,
        alternatives,
        shared,
        filters: Vec::new(),
        standardize: false,
        id: Some("id".into()),
    }
}
