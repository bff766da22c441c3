//! CLI file formats: binary marginal and classifier CSVs, raw categorical
//! dataset CSVs, and the variable-partition TOML.

use std::path::Path;

use fairbound_core::fairness::ClassifierTable;
use fairbound_core::prob::{AxisPair, Cat, CategoricalDataset, Marginal2, Variable};
use fairbound_core::structural::VariablePartition;

use crate::error::CliError;

/// Read a binary two-variable marginal: header `var_a,var_b,prob`, one row
/// per (0/1, 0/1) combination. Probabilities must sum to 1 within 1e-6 and
/// are renormalized; a deviation above 1e-9 prints a warning.
pub fn read_marginal_csv(path: &Path, axes: AxisPair) -> Result<Marginal2, CliError> {
    let cells = read_prob_table(path, &["var_a", "var_b", "prob"])?;
    let mut p = [f64::NAN; 4];
    for (a, b, v) in cells {
        let idx = (2 * a + b) as usize;
        if !p[idx].is_nan() {
            return Err(CliError::Input(format!(
                "{}: duplicate row for ({a}, {b})",
                path.display()
            )));
        }
        p[idx] = v;
    }
    if p.iter().any(|v| v.is_nan()) {
        return Err(CliError::Input(format!(
            "{}: all four (0/1, 0/1) combinations are required",
            path.display()
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(CliError::Input(format!(
            "{}: probabilities sum to {sum}, expected 1 within 1e-6",
            path.display()
        )));
    }
    if (sum - 1.0).abs() > 1e-9 {
        eprintln!(
            "warning: {}: probabilities sum to {sum}; renormalizing",
            path.display()
        );
    }
    for v in p.iter_mut() {
        *v /= sum;
    }
    Ok(Marginal2::new(p, axes)?)
}

/// Read a binary classifier table: header `s,o,p_yes`, one row per feature
/// combination.
pub fn read_classifier_csv(path: &Path) -> Result<ClassifierTable, CliError> {
    let cells = read_prob_table(path, &["s", "o", "p_yes"])?;
    let mut rates = [f64::NAN; 4];
    for (s, o, v) in cells {
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Input(format!(
                "{}: p_yes {v} outside [0, 1]",
                path.display()
            )));
        }
        rates[(2 * s + o) as usize] = v;
    }
    if rates.iter().any(|v| v.is_nan()) {
        return Err(CliError::Input(format!(
            "{}: all four (s, o) combinations are required",
            path.display()
        )));
    }
    Ok(ClassifierTable::binary_pair(rates)?)
}

fn read_prob_table(path: &Path, header: &[&str]) -> Result<Vec<(u8, u8, f64)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let got: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if got != header {
        return Err(CliError::Input(format!(
            "{}: expected header {}, found {}",
            path.display(),
            header.join(","),
            got.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record =
            record.map_err(|e| CliError::Input(format!("{}:{line}: {e}", path.display())))?;
        let bit = |field: usize| -> Result<u8, CliError> {
            match record.get(field).unwrap_or("") {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(CliError::Input(format!(
                    "{}:{line}: `{other}` is not 0 or 1",
                    path.display()
                ))),
            }
        };
        let prob: f64 = record.get(2).unwrap_or("").parse().map_err(|_| {
            CliError::Input(format!(
                "{}:{line}: `{}` is not a number",
                path.display(),
                record.get(2).unwrap_or("")
            ))
        })?;
        if prob < 0.0 {
            return Err(CliError::Input(format!(
                "{}:{line}: negative probability {prob}",
                path.display()
            )));
        }
        out.push((bit(0)?, bit(1)?, prob));
    }
    if out.len() != 4 {
        return Err(CliError::Input(format!(
            "{}: expected 4 data rows, found {}",
            path.display(),
            out.len()
        )));
    }
    Ok(out)
}

/// Read a raw categorical dataset: delimited text with a header row; each
/// column's domain is its sorted set of observed values.
pub fn read_dataset_csv(path: &Path) -> Result<CategoricalDataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        rows.push(record.iter().map(|v| v.to_string()).collect());
    }
    let mut variables = Vec::with_capacity(headers.len());
    for (c, name) in headers.iter().enumerate() {
        let mut domain: Vec<String> = rows.iter().map(|r| r[c].clone()).collect();
        domain.sort();
        domain.dedup();
        variables.push(
            Variable::new(name.clone(), domain)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
        );
    }
    let index_maps: Vec<std::collections::BTreeMap<&str, Cat>> = variables
        .iter()
        .map(|v| v.domain.iter().enumerate().map(|(i, s)| (s.as_str(), i as Cat)).collect())
        .collect();
    let mut row_buf = vec![0 as Cat; headers.len()];
    let mut dataset_rows = Vec::with_capacity(rows.len());
    for r in &rows {
        for (c, v) in r.iter().enumerate() {
            row_buf[c] = index_maps[c][v.as_str()];
        }
        dataset_rows.push(row_buf.clone());
    }
    let mut dataset = CategoricalDataset::new(variables)?;
    for r in &dataset_rows {
        dataset.push_row(r)?;
    }
    Ok(dataset)
}

/// Read the `{internal, external, common}` variable partition.
pub fn read_partition_toml(path: &Path) -> Result<VariablePartition, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Format a float for CSV output with explicit sentinel spellings.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v}")
    }
}
