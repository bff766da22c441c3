//! Declarative dataset recipes: delimited-text ingestion with row filters,
//! derived columns, and per-column discretization into categorical domains.
//!
//! A recipe is a versioned TOML file. Rows containing null markers in any
//! used column are dropped (and counted); row filters keep only listed raw
//! values; derived columns are sums of numeric columns or copies of another
//! column; transforms map raw values (or numeric ranges) onto declared
//! category labels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::prob::{Cat, CategoricalDataset, Variable};

pub const RECIPE_VERSION: u32 = 1;

/// How a transform treats raw values that match no mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    /// Fail ingestion with a located error.
    #[default]
    Error,
    /// Drop the offending row and count it.
    RejectRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    /// Raw values to keep; rows with any other value are dropped.
    pub keep: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeriveColumn {
    pub name: String,
    /// Sum of numeric source columns.
    #[serde(default)]
    pub sum: Option<Vec<String>>,
    /// Copy of a source column (useful to split one raw column into two
    /// differently mapped ones).
    #[serde(default)]
    pub copy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    /// Source or derived column the transform applies to.
    pub column: String,
    /// Final column name; defaults to `column`.
    #[serde(default)]
    pub rename: Option<String>,
    /// Raw value -> category label.
    #[serde(default)]
    pub map: Option<BTreeMap<String, String>>,
    /// Catch-all category for raw values absent from `map`.
    #[serde(default)]
    pub other: Option<String>,
    /// Sorted inclusive upper edges for numeric bucketing; a value lands in
    /// the first bucket whose edge it does not exceed, or in the last
    /// bucket above all edges.
    #[serde(default)]
    pub buckets: Option<Vec<f64>>,
    /// Bucket labels; must be `buckets.len() + 1` long.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub unknown: UnknownPolicy,
}

/// A versioned declarative description of how to turn one delimited text
/// file into a categorical dataset, plus the fairness task metadata (label
/// and protected columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecipe {
    pub version: u32,
    pub name: String,
    /// Default data path, resolved relative to the recipe file; overridable
    /// at ingest time.
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub delimiter: Option<char>,
    #[serde(default)]
    pub null_values: Vec<String>,
    /// Final name of the class-label column.
    pub label: String,
    /// Label category counted as the favourable outcome.
    pub favourable: String,
    /// Final name of the protected-attribute column.
    pub protected: String,
    /// Protected category treated as the privileged group.
    pub privileged: String,
    /// Keep only these source columns (else: all minus `drop`).
    #[serde(default)]
    pub keep: Option<Vec<String>>,
    #[serde(default)]
    pub drop: Vec<String>,
    #[serde(default, rename = "filter")]
    pub filters: Vec<RowFilter>,
    #[serde(default, rename = "derive")]
    pub derives: Vec<DeriveColumn>,
    #[serde(default, rename = "transform")]
    pub transforms: Vec<ColumnTransform>,
}

impl DatasetRecipe {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let recipe: DatasetRecipe =
            toml::from_str(text).map_err(|e| PipelineError::Recipe(e.to_string()))?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::ParseError {
            row: None,
            column: None,
            message: format!("{}: {e}", path.display()),
        })?;
        let mut recipe = Self::from_toml_str(&text)?;
        // Resolve a relative source path against the recipe's directory.
        if let (Some(src), Some(dir)) = (&recipe.source, path.parent()) {
            if src.is_relative() {
                recipe.source = Some(dir.join(src));
            }
        }
        Ok(recipe)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != RECIPE_VERSION {
            return Err(PipelineError::Recipe(format!(
                "recipe version {} unsupported (this build reads version {RECIPE_VERSION})",
                self.version
            )));
        }
        for d in &self.derives {
            match (&d.sum, &d.copy) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => {
                    return Err(PipelineError::Recipe(format!(
                        "derive `{}` must set exactly one of `sum` or `copy`",
                        d.name
                    )))
                }
            }
        }
        for t in &self.transforms {
            match (&t.map, &t.buckets) {
                (Some(_), None) => {}
                (None, Some(edges)) => {
                    let labels = t.labels.as_ref().ok_or_else(|| {
                        PipelineError::Recipe(format!(
                            "bucket transform for `{}` needs `labels`",
                            t.column
                        ))
                    })?;
                    if labels.len() != edges.len() + 1 {
                        return Err(PipelineError::Recipe(format!(
                            "transform for `{}`: {} labels for {} edges (need edges + 1)",
                            t.column,
                            labels.len(),
                            edges.len()
                        )));
                    }
                    if edges.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(PipelineError::Recipe(format!(
                            "bucket edges for `{}` must be strictly increasing",
                            t.column
                        )));
                    }
                }
                _ => {
                    return Err(PipelineError::Recipe(format!(
                        "transform for `{}` must set exactly one of `map` or `buckets`",
                        t.column
                    )))
                }
            }
        }
        Ok(())
    }
}

/// The ingested dataset plus row accounting.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub dataset: CategoricalDataset,
    pub n_raw_rows: usize,
    pub n_null_dropped: usize,
    pub n_filtered_out: usize,
    pub n_rejected_unknown: usize,
    /// Final column index of the label and protected columns.
    pub label_col: usize,
    pub protected_col: usize,
    pub favourable_index: Cat,
    pub privileged_index: Cat,
}

/// One output column with all source indices resolved against the header.
enum Plan<'r> {
    Source { col: usize },
    DeriveSum { cols: Vec<usize>, sources: &'r [String], name: &'r str },
    DeriveCopy { col: usize },
}

struct OutputColumn<'r> {
    name: String,
    plan: Plan<'r>,
    transform: Option<&'r ColumnTransform>,
}

/// Ingest the recipe's data file (or `data_path` when given).
pub fn ingest(
    recipe: &DatasetRecipe,
    data_path: Option<&Path>,
) -> Result<IngestReport, PipelineError> {
    recipe.validate()?;
    let path = data_path.or(recipe.source.as_deref()).ok_or_else(|| {
        PipelineError::Recipe("no data path given and recipe has no source".into())
    })?;

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(recipe.delimiter.unwrap_or(',') as u8)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| PipelineError::ParseError {
            row: None,
            column: None,
            message: format!("{}: {e}", path.display()),
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| PipelineError::ParseError {
            row: None,
            column: None,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(PipelineError::ParseError {
            row: None,
            column: None,
            message: "empty or missing header row".into(),
        });
    }
    let header_idx = |name: &str| -> Result<usize, PipelineError> {
        headers.iter().position(|h| h == name).ok_or_else(|| PipelineError::ParseError {
            row: None,
            column: Some(name.to_string()),
            message: format!("column `{name}` not found in header"),
        })
    };

    // Output plan: retained source columns in header order, then derived
    // columns in declaration order; transforms (and renames) attach to the
    // column they name.
    let retained: Vec<(usize, String)> = match &recipe.keep {
        Some(keep) => keep
            .iter()
            .map(|k| Ok((header_idx(k)?, k.clone())))
            .collect::<Result<_, PipelineError>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(_, h)| !recipe.drop.contains(h))
            .map(|(i, h)| (i, h.clone()))
            .collect(),
    };
    for d in &recipe.drop {
        header_idx(d)?; // dropping a nonexistent column is a recipe typo
    }

    let mut columns: Vec<OutputColumn> = Vec::new();
    for (col, name) in retained {
        columns.push(OutputColumn { name, plan: Plan::Source { col }, transform: None });
    }
    for d in &recipe.derives {
        let plan = if let Some(sources) = &d.sum {
            let cols = sources
                .iter()
                .map(|c| header_idx(c))
                .collect::<Result<Vec<_>, _>>()?;
            Plan::DeriveSum { cols, sources, name: &d.name }
        } else {
            Plan::DeriveCopy { col: header_idx(d.copy.as_ref().expect("validated"))? }
        };
        columns.push(OutputColumn { name: d.name.clone(), plan, transform: None });
    }
    for t in &recipe.transforms {
        let target = columns
            .iter_mut()
            .find(|c| c.name == t.column && c.transform.is_none())
            .ok_or_else(|| {
                PipelineError::Recipe(format!(
                    "transform for `{}` matches no retained or derived column",
                    t.column
                ))
            })?;
        target.transform = Some(t);
        if let Some(rename) = &t.rename {
            target.name = rename.clone();
        }
    }

    // Null checks cover every source column the plan reads plus filters.
    let mut null_checked: Vec<usize> = Vec::new();
    for c in &columns {
        match &c.plan {
            Plan::Source { col } | Plan::DeriveCopy { col } => null_checked.push(*col),
            Plan::DeriveSum { cols, .. } => null_checked.extend_from_slice(cols),
        }
    }
    let filter_cols: Vec<(usize, &RowFilter)> = recipe
        .filters
        .iter()
        .map(|f| Ok((header_idx(&f.column)?, f)))
        .collect::<Result<_, PipelineError>>()?;
    for (c, _) in &filter_cols {
        null_checked.push(*c);
    }
    null_checked.sort_unstable();
    null_checked.dedup();

    let is_null = |v: &str| recipe.null_values.iter().any(|n| n == v);

    let mut n_raw_rows = 0usize;
    let mut n_null_dropped = 0usize;
    let mut n_filtered_out = 0usize;
    let mut n_rejected_unknown = 0usize;
    let mut label_rows: Vec<Vec<String>> = Vec::new();

    'rows: for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2; // 1-based, after the header line
        let record = record.map_err(|e| PipelineError::ParseError {
            row: Some(line),
            column: None,
            message: e.to_string(),
        })?;
        n_raw_rows += 1;
        let raw = |i: usize| record.get(i).unwrap_or("").trim();

        for &c in &null_checked {
            if is_null(raw(c)) {
                n_null_dropped += 1;
                continue 'rows;
            }
        }
        for (c, f) in &filter_cols {
            if !f.keep.iter().any(|k| k == raw(*c)) {
                n_filtered_out += 1;
                continue 'rows;
            }
        }

        let mut out: Vec<String> = Vec::with_capacity(columns.len());
        for column in &columns {
            let value = match &column.plan {
                Plan::Source { col } | Plan::DeriveCopy { col } => raw(*col).to_string(),
                Plan::DeriveSum { cols, sources, name } => {
                    let mut total = 0.0f64;
                    for (pos, &col) in cols.iter().enumerate() {
                        let v = raw(col);
                        total += v.parse::<f64>().map_err(|_| PipelineError::ParseError {
                            row: Some(line),
                            column: Some(sources[pos].clone()),
                            message: format!("`{v}` is not numeric (needed by derive `{name}`)"),
                        })?;
                    }
                    format!("{total}")
                }
            };
            match apply_transform(column, value, line)? {
                Some(v) => out.push(v),
                None => {
                    n_rejected_unknown += 1;
                    continue 'rows;
                }
            }
        }
        label_rows.push(out);
    }

    // Domains: declared categories for transformed columns, sorted observed
    // values for pass-through columns.
    let mut variables: Vec<Variable> = Vec::with_capacity(columns.len());
    for (pos, column) in columns.iter().enumerate() {
        let domain: Vec<String> = match column.transform {
            Some(t) => declared_domain(t),
            None => {
                let mut seen: Vec<String> = label_rows.iter().map(|r| r[pos].clone()).collect();
                seen.sort();
                seen.dedup();
                seen
            }
        };
        variables.push(
            Variable::new(column.name.clone(), domain)
                .map_err(|e| PipelineError::Recipe(format!("column `{}`: {e}", column.name)))?,
        );
    }

    let index_maps: Vec<BTreeMap<String, Cat>> = variables
        .iter()
        .map(|v| {
            v.domain
                .iter()
                .enumerate()
                .map(|(i, s)| (s.clone(), i as Cat))
                .collect()
        })
        .collect();
    let mut dataset = CategoricalDataset::new(variables)?;
    let mut row_buf: Vec<Cat> = vec![0; columns.len()];
    for (rn, labels) in label_rows.iter().enumerate() {
        for (pos, value) in labels.iter().enumerate() {
            row_buf[pos] = *index_maps[pos].get(value.as_str()).ok_or_else(|| {
                PipelineError::UnknownCategory {
                    row: Some(rn + 2),
                    column: columns[pos].name.clone(),
                    value: value.clone(),
                }
            })?;
        }
        dataset.push_row(&row_buf)?;
    }

    let label_col = dataset.var_index(&recipe.label).map_err(|_| {
        PipelineError::Recipe(format!("label column `{}` not in the output schema", recipe.label))
    })?;
    let protected_col = dataset.var_index(&recipe.protected).map_err(|_| {
        PipelineError::Recipe(format!(
            "protected column `{}` not in the output schema",
            recipe.protected
        ))
    })?;
    let favourable_index = domain_index(&dataset, label_col, &recipe.favourable)?;
    let privileged_index = domain_index(&dataset, protected_col, &recipe.privileged)?;

    Ok(IngestReport {
        dataset,
        n_raw_rows,
        n_null_dropped,
        n_filtered_out,
        n_rejected_unknown,
        label_col,
        protected_col,
        favourable_index,
        privileged_index,
    })
}

fn domain_index(
    dataset: &CategoricalDataset,
    col: usize,
    value: &str,
) -> Result<Cat, PipelineError> {
    dataset.variables()[col]
        .domain
        .iter()
        .position(|d| d == value)
        .map(|i| i as Cat)
        .ok_or_else(|| {
            PipelineError::Recipe(format!(
                "value `{value}` not in the domain of `{}`",
                dataset.variables()[col].name
            ))
        })
}

fn declared_domain(t: &ColumnTransform) -> Vec<String> {
    if let Some(labels) = &t.labels {
        return labels.clone();
    }
    let mut domain: Vec<String> =
        t.map.as_ref().map(|m| m.values().cloned().collect()).unwrap_or_default();
    if let Some(other) = &t.other {
        domain.push(other.clone());
    }
    domain.sort();
    domain.dedup();
    domain
}

/// `None` means the row is rejected by an unknown-value policy.
fn apply_transform(
    column: &OutputColumn,
    value: String,
    line: usize,
) -> Result<Option<String>, PipelineError> {
    let Some(t) = column.transform else {
        return Ok(Some(value));
    };
    if let Some(map) = &t.map {
        if let Some(label) = map.get(value.as_str()) {
            return Ok(Some(label.clone()));
        }
        if let Some(other) = &t.other {
            return Ok(Some(other.clone()));
        }
        return match t.unknown {
            UnknownPolicy::RejectRow => Ok(None),
            UnknownPolicy::Error => Err(PipelineError::UnknownCategory {
                row: Some(line),
                column: column.name.clone(),
                value,
            }),
        };
    }
    let edges = t.buckets.as_ref().expect("validated");
    let labels = t.labels.as_ref().expect("validated");
    let number: f64 = match value.parse() {
        Ok(n) => n,
        Err(_) => {
            return match t.unknown {
                UnknownPolicy::RejectRow => Ok(None),
                UnknownPolicy::Error => Err(PipelineError::ParseError {
                    row: Some(line),
                    column: Some(column.name.clone()),
                    message: format!("`{value}` is not numeric"),
                }),
            }
        }
    };
    let bucket = edges.iter().position(|&e| number <= e).unwrap_or(edges.len());
    Ok(Some(labels[bucket].clone()))
}
