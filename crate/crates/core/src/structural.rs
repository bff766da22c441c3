//! Single-point joint-distribution estimators under structural assumptions:
//! a latent Naive Bayes mixture fitted by EM across two marginal datasets,
//! and marginal preservation (keep one marginal exact, fill in the other
//! side through conditionals).
//!
//! Variables are partitioned into internal (observed only in the first
//! dataset), external (only in the second) and common (observed in both).
//! The global variable order used by fitted models is internal, external,
//! common.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{
    sample_dirichlet_with, Cat, CategoricalDataset, CategoricalTable, ProbError, RngSeed,
    Variable,
};
use rand::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("likelihood became non-finite; a configuration has zero probability (increase smoothing)")]
    NonFiniteLikelihood,
    #[error("variable `{0}` not found in the model")]
    UnknownVariable(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// EM settings. The defaults fit four latent classes with five random
/// restarts and a small Dirichlet-style smoothing pseudo-count that keeps
/// every conditional probability strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub k: usize,
    pub max_iters: usize,
    pub elbo_tol: f64,
    pub n_restarts: usize,
    pub seed: RngSeed,
    pub smoothing: f64,
}

impl EmConfig {
    pub fn new(seed: RngSeed) -> Self {
        Self { k: 4, max_iters: 500, elbo_tol: 1e-6, n_restarts: 5, seed, smoothing: 1e-9 }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    fn validate(&self) -> Result<(), EmError> {
        if self.k == 0 || self.max_iters == 0 || self.n_restarts == 0 {
            return Err(EmError::InvalidModel(
                "k, max_iters and n_restarts must be positive".into(),
            ));
        }
        if self.elbo_tol <= 0.0 || self.smoothing < 0.0 {
            return Err(EmError::InvalidModel(
                "elbo_tol must be positive and smoothing non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Assignment of variable names to the internal / external / common roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariablePartition {
    pub internal: Vec<String>,
    pub external: Vec<String>,
    pub common: Vec<String>,
}

/// Partition resolved against two concrete datasets: the global variable
/// schema plus, per dataset, the (dataset column, global index) pairs.
#[derive(Debug, Clone)]
pub struct ResolvedPartition {
    pub variables: Vec<Variable>,
    pub d1_cols: Vec<(usize, usize)>,
    pub d2_cols: Vec<(usize, usize)>,
    pub n_internal: usize,
    pub n_external: usize,
    pub n_common: usize,
}

impl VariablePartition {
    /// Check that dataset schemas are exactly internal+common and
    /// external+common, with identical domains for the common variables, and
    /// build the global schema (internal, external, common order).
    pub fn resolve(
        &self,
        d1: &CategoricalDataset,
        d2: &CategoricalDataset,
    ) -> Result<ResolvedPartition, EmError> {
        let mut names = self.internal.clone();
        names.extend(self.external.iter().cloned());
        names.extend(self.common.iter().cloned());
        {
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != names.len() {
                return Err(EmError::SchemaMismatch(
                    "partition lists a variable more than once".into(),
                ));
            }
        }

        let mut variables = Vec::with_capacity(names.len());
        let mut d1_cols = Vec::new();
        let mut d2_cols = Vec::new();

        for (g, name) in self.internal.iter().enumerate() {
            let col = d1
                .var_index(name)
                .map_err(|_| EmError::SchemaMismatch(format!("internal `{name}` not in d1")))?;
            variables.push(d1.variables()[col].clone());
            d1_cols.push((col, g));
        }
        let ext_base = self.internal.len();
        for (j, name) in self.external.iter().enumerate() {
            let col = d2
                .var_index(name)
                .map_err(|_| EmError::SchemaMismatch(format!("external `{name}` not in d2")))?;
            variables.push(d2.variables()[col].clone());
            d2_cols.push((col, ext_base + j));
        }
        let common_base = ext_base + self.external.len();
        for (l, name) in self.common.iter().enumerate() {
            let c1 = d1
                .var_index(name)
                .map_err(|_| EmError::SchemaMismatch(format!("common `{name}` not in d1")))?;
            let c2 = d2
                .var_index(name)
                .map_err(|_| EmError::SchemaMismatch(format!("common `{name}` not in d2")))?;
            if d1.variables()[c1].domain != d2.variables()[c2].domain {
                return Err(EmError::SchemaMismatch(format!(
                    "common `{name}` has different domains in the two datasets"
                )));
            }
            variables.push(d1.variables()[c1].clone());
            d1_cols.push((c1, common_base + l));
            d2_cols.push((c2, common_base + l));
        }

        if d1_cols.len() != d1.variables().len() {
            return Err(EmError::SchemaMismatch(format!(
                "d1 has {} variables, partition covers {}",
                d1.variables().len(),
                d1_cols.len()
            )));
        }
        if d2_cols.len() != d2.variables().len() {
            return Err(EmError::SchemaMismatch(format!(
                "d2 has {} variables, partition covers {}",
                d2.variables().len(),
                d2_cols.len()
            )));
        }

        Ok(ResolvedPartition {
            variables,
            d1_cols,
            d2_cols,
            n_internal: self.internal.len(),
            n_external: self.external.len(),
            n_common: self.common.len(),
        })
    }
}

/// Latent Naive Bayes mixture: mixing weights `pi` and per-variable
/// conditional tables `cond[i][m][k] = p(X_i = m | Z = k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelJson", try_from = "ModelJson")]
pub struct LatentNBModel {
    pub pi: Vec<f64>,
    pub variables: Vec<Variable>,
    pub cond: Vec<Vec<Vec<f64>>>,
}

/// On-disk JSON layout: `{k, pi, variables: [{name, domain, cond}]}` with
/// `cond` an `M_i x K` matrix. Floats round-trip exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelJson {
    k: usize,
    pi: Vec<f64>,
    variables: Vec<ModelVarJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelVarJson {
    name: String,
    domain: Vec<String>,
    cond: Vec<Vec<f64>>,
}

impl From<LatentNBModel> for ModelJson {
    fn from(m: LatentNBModel) -> Self {
        ModelJson {
            k: m.pi.len(),
            pi: m.pi,
            variables: m
                .variables
                .into_iter()
                .zip(m.cond)
                .map(|(v, cond)| ModelVarJson { name: v.name, domain: v.domain, cond })
                .collect(),
        }
    }
}

impl TryFrom<ModelJson> for LatentNBModel {
    type Error = String;

    fn try_from(j: ModelJson) -> Result<Self, String> {
        let mut variables = Vec::with_capacity(j.variables.len());
        let mut cond = Vec::with_capacity(j.variables.len());
        for v in j.variables {
            variables.push(Variable::new(v.name, v.domain).map_err(|e| e.to_string())?);
            cond.push(v.cond);
        }
        let model = LatentNBModel { pi: j.pi, variables, cond };
        model.validate().map_err(|e| e.to_string())?;
        if model.pi.len() != j.k {
            return Err(format!("k = {} does not match pi length {}", j.k, model.pi.len()));
        }
        Ok(model)
    }
}

impl LatentNBModel {
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self) -> Result<(), EmError> {
        let k = self.pi.len();
        if k == 0 {
            return Err(EmError::InvalidModel("no mixture components".into()));
        }
        if self.pi.iter().any(|&p| p < 0.0) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(EmError::InvalidModel("pi is not a probability vector".into()));
        }
        if self.variables.len() != self.cond.len() {
            return Err(EmError::InvalidModel("cond / variable count mismatch".into()));
        }
        for (v, table) in self.variables.iter().zip(&self.cond) {
            if table.len() != v.arity() || table.iter().any(|row| row.len() != k) {
                return Err(EmError::InvalidModel(format!(
                    "conditional table shape for `{}` is not {} x {}",
                    v.name,
                    v.arity(),
                    k
                )));
            }
            for kk in 0..k {
                let col: f64 = table.iter().map(|row| row[kk]).sum();
                if (col - 1.0).abs() > 1e-9 || table.iter().any(|row| row[kk] < 0.0) {
                    return Err(EmError::InvalidModel(format!(
                        "conditional column {kk} of `{}` sums to {col}",
                        v.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn var_index(&self, name: &str) -> Result<usize, EmError> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| EmError::UnknownVariable(name.to_string()))
    }

    /// Mixture joint over the requested variables:
    /// `p(x) = sum_k pi_k prod_i p_i(x_i | k)`, enumerated densely over the
    /// product of the requested domains (keep the request small).
    pub fn joint(&self, variable_names: &[&str]) -> Result<CategoricalTable, EmError> {
        let idx: Vec<usize> = variable_names
            .iter()
            .map(|n| self.var_index(n))
            .collect::<Result<_, _>>()?;
        let vars: Vec<Variable> = idx.iter().map(|&i| self.variables[i].clone()).collect();

        let mut cells = BTreeMap::new();
        let mut key: Vec<Cat> = vec![0; idx.len()];
        loop {
            let mut p = 0.0;
            for (k, &pik) in self.pi.iter().enumerate() {
                let mut term = pik;
                for (pos, &i) in idx.iter().enumerate() {
                    term *= self.cond[i][key[pos] as usize][k];
                }
                p += term;
            }
            cells.insert(key.clone(), p);

            // Advance the mixed-radix counter.
            let mut pos = idx.len();
            loop {
                if pos == 0 {
                    return Ok(CategoricalTable::new(vars, cells));
                }
                pos -= 1;
                key[pos] += 1;
                if (key[pos] as usize) < vars[pos].arity() {
                    break;
                }
                key[pos] = 0;
            }
        }
    }

    /// Draw `n` i.i.d. rows over all model variables.
    pub fn sample(&self, n: usize, seed: RngSeed) -> Result<CategoricalDataset, EmError> {
        let mut dataset = CategoricalDataset::new(self.variables.clone())?;
        let mut rng = seed.rng();
        let mut row: Vec<Cat> = vec![0; self.variables.len()];
        for _ in 0..n {
            let z = sample_index(&self.pi, rng.gen::<f64>());
            for (i, v) in self.variables.iter().enumerate() {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = v.arity() - 1;
                for m in 0..v.arity() {
                    acc += self.cond[i][m][z];
                    if u < acc {
                        chosen = m;
                        break;
                    }
                }
                row[i] = chosen as Cat;
            }
            dataset.push_row(&row)?;
        }
        Ok(dataset)
    }
}

fn sample_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Result of an EM fit: the best model over the restarts and its objective
/// trace.
///
/// The traced objective is the observed-data log-likelihood of both datasets
/// plus, when `smoothing > 0`, the smoothing log-prior term
/// `smoothing * sum log p_i(m | k)` — the quantity the smoothed M-step
/// actually ascends, so the trace is non-decreasing within a restart.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: LatentNBModel,
    /// Objective trace of the winning restart.
    pub elbo_trace: Vec<f64>,
    /// Objective traces of every restart, in restart order.
    pub restart_traces: Vec<Vec<f64>>,
    pub best_restart: usize,
    pub final_elbo: f64,
}

/// Fit the latent Naive Bayes model on two overlapping datasets.
///
/// E-step responsibilities follow the two dataset-specific formulas (d1 rows
/// use the internal+common conditionals, d2 rows the external+common ones);
/// the M-step pools responsibilities for the mixing weights and uses the
/// three-case sufficient statistics for the conditionals (internal from d1,
/// external from d2, common summed over both).
pub fn em_fit(
    d1: &CategoricalDataset,
    d2: &CategoricalDataset,
    partition: &VariablePartition,
    cfg: &EmConfig,
) -> Result<EmFit, EmError> {
    cfg.validate()?;
    if d1.n_rows() == 0 || d2.n_rows() == 0 {
        return Err(EmError::Prob(ProbError::EmptyDataset));
    }
    let resolved = partition.resolve(d1, d2)?;
    let agg1 = aggregate_rows(d1);
    let agg2 = aggregate_rows(d2);
    let n_total = (d1.n_rows() + d2.n_rows()) as f64;

    let runs: Vec<Result<(LatentNBModel, Vec<f64>), EmError>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|restart| {
            em_single_restart(
                &agg1,
                &agg2,
                &resolved,
                cfg,
                n_total,
                cfg.seed.derive(restart as u64),
            )
        })
        .collect();

    let mut results = Vec::with_capacity(runs.len());
    for run in runs {
        results.push(run?);
    }

    let best_restart = results
        .iter()
        .enumerate()
        .max_by(|(ia, (_, ta)), (ib, (_, tb))| {
            let fa = *ta.last().unwrap();
            let fb = *tb.last().unwrap();
            fa.partial_cmp(&fb).unwrap().then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .unwrap();

    let restart_traces: Vec<Vec<f64>> = results.iter().map(|(_, t)| t.clone()).collect();
    let (model, elbo_trace) = results.swap_remove(best_restart);
    let final_elbo = *elbo_trace.last().unwrap();
    Ok(EmFit { model, elbo_trace, restart_traces, best_restart, final_elbo })
}

/// Unique rows with multiplicities, in deterministic key order.
struct AggregatedRows {
    rows: Vec<(Vec<Cat>, f64)>,
}

fn aggregate_rows(ds: &CategoricalDataset) -> AggregatedRows {
    let mut counts: BTreeMap<Vec<Cat>, f64> = BTreeMap::new();
    for row in ds.rows() {
        *counts.entry(row.to_vec()).or_insert(0.0) += 1.0;
    }
    AggregatedRows { rows: counts.into_iter().collect() }
}

struct Params {
    log_pi: Vec<f64>,
    /// Per global variable, log conditionals flattened as `m * K + k`.
    log_cond: Vec<Vec<f64>>,
    pi: Vec<f64>,
    cond: Vec<Vec<f64>>,
}

impl Params {
    fn from_tables(pi: Vec<f64>, cond: Vec<Vec<f64>>) -> Self {
        let log_pi = pi.iter().map(|p| p.ln()).collect();
        let log_cond = cond.iter().map(|t| t.iter().map(|p| p.ln()).collect()).collect();
        Self { log_pi, log_cond, pi, cond }
    }
}

/// Kahan compensated accumulator; the objective trace needs summation error
/// well below the 1e-10 monotonicity slack.
#[derive(Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

fn em_single_restart(
    agg1: &AggregatedRows,
    agg2: &AggregatedRows,
    resolved: &ResolvedPartition,
    cfg: &EmConfig,
    n_total: f64,
    seed: RngSeed,
) -> Result<(LatentNBModel, Vec<f64>), EmError> {
    let k = cfg.k;
    let n_vars = resolved.variables.len();
    let arities: Vec<usize> = resolved.variables.iter().map(|v| v.arity()).collect();

    // Random symmetric-Dirichlet initialization, seeded per restart.
    let mut rng = seed.rng();
    let pi0 = if k == 1 { vec![1.0] } else { sample_dirichlet_with(k, 1.0, &mut rng) };
    let mut cond0: Vec<Vec<f64>> = Vec::with_capacity(n_vars);
    for &m in &arities {
        let mut table = vec![0.0f64; m * k];
        for kk in 0..k {
            let col = sample_dirichlet_with(m, 1.0, &mut rng);
            for (mm, v) in col.into_iter().enumerate() {
                table[mm * k + kk] = v;
            }
        }
        cond0.push(table);
    }

    let mut params = Params::from_tables(pi0, cond0);
    let mut trace: Vec<f64> = Vec::new();
    let mut logits = vec![0.0f64; k];

    for _iter in 0..cfg.max_iters {
        let mut ll = Kahan::default();
        let mut pi_acc = vec![0.0f64; k];
        let mut stats: Vec<Vec<f64>> = arities.iter().map(|&m| vec![0.0f64; m * k]).collect();

        for (agg, cols) in [(agg1, &resolved.d1_cols), (agg2, &resolved.d2_cols)] {
            for (row, w) in &agg.rows {
                for (kk, logit) in logits.iter_mut().enumerate() {
                    let mut acc = params.log_pi[kk];
                    for &(col, g) in cols.iter() {
                        acc += params.log_cond[g][row[col] as usize * k + kk];
                    }
                    *logit = acc;
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !max.is_finite() {
                    return Err(EmError::NonFiniteLikelihood);
                }
                let mut z = 0.0;
                for l in &logits {
                    z += (l - max).exp();
                }
                let log_norm = max + z.ln();
                ll.add(w * log_norm);
                for (kk, l) in logits.iter().enumerate() {
                    let q = (l - log_norm).exp();
                    let wq = w * q;
                    pi_acc[kk] += wq;
                    for &(col, g) in cols.iter() {
                        stats[g][row[col] as usize * k + kk] += wq;
                    }
                }
            }
        }

        let mut objective = ll;
        if cfg.smoothing > 0.0 {
            for table in &params.log_cond {
                for &lp in table {
                    objective.add(cfg.smoothing * lp);
                }
            }
        }
        let f = objective.sum;
        if !f.is_finite() {
            return Err(EmError::NonFiniteLikelihood);
        }
        trace.push(f);
        if trace.len() >= 2 && f - trace[trace.len() - 2] < cfg.elbo_tol {
            break;
        }

        // M-step.
        let pi: Vec<f64> = pi_acc.iter().map(|s| s / n_total).collect();
        let mut cond: Vec<Vec<f64>> = Vec::with_capacity(n_vars);
        for (i, &m) in arities.iter().enumerate() {
            let mut table = vec![0.0f64; m * k];
            for kk in 0..k {
                let mut col_sum = 0.0;
                for mm in 0..m {
                    col_sum += stats[i][mm * k + kk];
                }
                let denom = col_sum + cfg.smoothing * m as f64;
                for mm in 0..m {
                    let numer = stats[i][mm * k + kk] + cfg.smoothing;
                    table[mm * k + kk] =
                        if denom > 0.0 { numer / denom } else { 1.0 / m as f64 };
                }
            }
            cond.push(table);
        }
        params = Params::from_tables(pi, cond);
    }

    // Repackage flat tables as M_i x K matrices and renormalize away float
    // drift so the model invariants hold within tolerance.
    let mut cond_out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_vars);
    for (i, &m) in arities.iter().enumerate() {
        let mut table = vec![vec![0.0f64; k]; m];
        for kk in 0..k {
            let col_sum: f64 = (0..m).map(|mm| params.cond[i][mm * k + kk]).sum();
            for (mm, row) in table.iter_mut().enumerate() {
                row[kk] = params.cond[i][mm * k + kk] / col_sum;
            }
        }
        cond_out.push(table);
    }
    let pi_sum: f64 = params.pi.iter().sum();
    let model = LatentNBModel {
        pi: params.pi.iter().map(|p| p / pi_sum).collect(),
        variables: resolved.variables.clone(),
        cond: cond_out,
    };
    model.validate()?;
    Ok((model, trace))
}

/// Conditional table p(target | given) over general categorical variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    given: Vec<Variable>,
    target: Vec<Variable>,
    /// For each observed given-tuple, the conditional distribution over
    /// target-tuples (each inner map sums to 1).
    map: BTreeMap<Vec<Cat>, BTreeMap<Vec<Cat>, f64>>,
}

impl ConditionalTable {
    /// Empirical conditional p(target columns | given columns) of a dataset.
    pub fn empirical(
        data: &CategoricalDataset,
        target_cols: &[usize],
        given_cols: &[usize],
    ) -> Result<Self, EmError> {
        if data.n_rows() == 0 {
            return Err(EmError::Prob(ProbError::EmptyDataset));
        }
        let mut counts: BTreeMap<Vec<Cat>, BTreeMap<Vec<Cat>, f64>> = BTreeMap::new();
        for row in data.rows() {
            let g: Vec<Cat> = given_cols.iter().map(|&c| row[c]).collect();
            let t: Vec<Cat> = target_cols.iter().map(|&c| row[c]).collect();
            *counts.entry(g).or_default().entry(t).or_insert(0.0) += 1.0;
        }
        for dist in counts.values_mut() {
            let total: f64 = dist.values().sum();
            for v in dist.values_mut() {
                *v /= total;
            }
        }
        Ok(Self {
            given: given_cols.iter().map(|&c| data.variables()[c].clone()).collect(),
            target: target_cols.iter().map(|&c| data.variables()[c].clone()).collect(),
            map: counts,
        })
    }

    pub fn given(&self) -> &[Variable] {
        &self.given
    }

    pub fn target(&self) -> &[Variable] {
        &self.target
    }

    pub fn distribution(&self, given: &[Cat]) -> Option<&BTreeMap<Vec<Cat>, f64>> {
        self.map.get(given)
    }
}

/// Joint produced by marginal preservation, plus the conditioning cells that
/// carried external mass but were unseen on the internal side (those slices
/// fall back to the uniform conditional).
#[derive(Debug, Clone)]
pub struct PreservedJoint {
    pub table: CategoricalTable,
    pub zero_mass_cells: Vec<Vec<Cat>>,
}

/// Keep the external marginal exact and extend it with the internal
/// conditional: `p(target, given, rest) = external(given, rest) *
/// cond(target | given)`.
///
/// Output variable order is target, given, then the external table's
/// non-given variables. The marginal of the result over (given, rest)
/// reproduces `external` up to float rounding.
pub fn marginal_preserve(
    external: &CategoricalTable,
    cond: &ConditionalTable,
) -> Result<PreservedJoint, EmError> {
    // Locate the conditioning variables inside the external table.
    let mut given_pos = Vec::with_capacity(cond.given.len());
    for g in &cond.given {
        let pos = external
            .variables()
            .iter()
            .position(|v| v.name == g.name)
            .ok_or_else(|| {
                EmError::DomainMismatch(format!(
                    "conditioning variable `{}` not in the external table",
                    g.name
                ))
            })?;
        if external.variables()[pos].domain != g.domain {
            return Err(EmError::DomainMismatch(format!(
                "variable `{}` has different domains in the two inputs",
                g.name
            )));
        }
        given_pos.push(pos);
    }
    let rest_pos: Vec<usize> = (0..external.variables().len())
        .filter(|p| !given_pos.contains(p))
        .collect();

    let mut variables: Vec<Variable> = cond.target.clone();
    variables.extend(cond.given.iter().cloned());
    variables.extend(rest_pos.iter().map(|&p| external.variables()[p].clone()));

    let uniform_cells: f64 = cond.target.iter().map(|v| v.arity() as f64).product();
    let mut zero_mass_cells: Vec<Vec<Cat>> = Vec::new();
    let mut cells: BTreeMap<Vec<Cat>, f64> = BTreeMap::new();

    for (key, &q) in external.cells() {
        if q <= 0.0 {
            continue;
        }
        let g: Vec<Cat> = given_pos.iter().map(|&p| key[p]).collect();
        let rest: Vec<Cat> = rest_pos.iter().map(|&p| key[p]).collect();
        let mut insert = |target: &[Cat], w: f64| {
            let mut cell = Vec::with_capacity(variables.len());
            cell.extend_from_slice(target);
            cell.extend_from_slice(&g);
            cell.extend_from_slice(&rest);
            *cells.entry(cell).or_insert(0.0) += w;
        };
        match cond.map.get(&g) {
            Some(dist) => {
                for (t, &w) in dist {
                    insert(t, q * w);
                }
            }
            None => {
                // Max-entropy completion keeps the preserved marginal exact.
                if !zero_mass_cells.contains(&g) {
                    zero_mass_cells.push(g.clone());
                }
                let w = q / uniform_cells;
                let mut t: Vec<Cat> = vec![0; cond.target.len()];
                loop {
                    insert(&t, w);
                    let mut pos = t.len();
                    let mut done = false;
                    loop {
                        if pos == 0 {
                            done = true;
                            break;
                        }
                        pos -= 1;
                        t[pos] += 1;
                        if (t[pos] as usize) < cond.target[pos].arity() {
                            break;
                        }
                        t[pos] = 0;
                    }
                    if done {
                        break;
                    }
                }
            }
        }
    }

    Ok(PreservedJoint { table: CategoricalTable::new(variables, cells), zero_mass_cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_datasets() -> (CategoricalDataset, CategoricalDataset, VariablePartition) {
        // d1 over (a, c), d2 over (c, b); c is common.
        let mut d1 = CategoricalDataset::new(vec![Variable::binary("a"), Variable::binary("c")])
            .unwrap();
        for row in [[0, 0], [0, 0], [0, 1], [1, 0], [1, 1], [1, 1]] {
            d1.push_row(&row).unwrap();
        }
        let mut d2 = CategoricalDataset::new(vec![Variable::binary("c"), Variable::binary("b")])
            .unwrap();
        for row in [[0, 0], [0, 1], [1, 1], [1, 1], [0, 0], [1, 0]] {
            d2.push_row(&row).unwrap();
        }
        let partition = VariablePartition {
            internal: vec!["a".into()],
            external: vec!["b".into()],
            common: vec!["c".into()],
        };
        (d1, d2, partition)
    }

    #[test]
    fn k_one_reduces_to_pooled_frequencies() {
        let (d1, d2, partition) = toy_datasets();
        let cfg = EmConfig { k: 1, n_restarts: 1, ..EmConfig::new(RngSeed(1)) };
        let fit = em_fit(&d1, &d2, &partition, &cfg).unwrap();
        let m = &fit.model;

        // a: 3 zeros of 6 in d1; b: 3 zeros of 6 in d2; c pooled: 6 of 12.
        let a = m.var_index("a").unwrap();
        let b = m.var_index("b").unwrap();
        let c = m.var_index("c").unwrap();
        assert_abs_diff_eq!(m.cond[a][0][0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(m.cond[b][0][0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(m.cond[c][0][0], 0.5, epsilon = 1e-9);
        assert_eq!(m.pi, vec![1.0]);
    }

    fn random_pair(seed: RngSeed, n: usize) -> (CategoricalDataset, CategoricalDataset) {
        let mut rng = seed.rng();
        let mut d1 = CategoricalDataset::new(vec![Variable::binary("a"), Variable::binary("c")])
            .unwrap();
        let mut d2 = CategoricalDataset::new(vec![Variable::binary("c"), Variable::binary("b")])
            .unwrap();
        for _ in 0..n {
            d1.push_row(&[rng.gen_range(0..2), rng.gen_range(0..2)]).unwrap();
            d2.push_row(&[rng.gen_range(0..2), rng.gen_range(0..2)]).unwrap();
        }
        (d1, d2)
    }

    #[test]
    fn k_one_matches_pooled_product_on_random_data() {
        let (d1, d2) = random_pair(RngSeed(77), 400);
        let partition = VariablePartition {
            internal: vec!["a".into()],
            external: vec!["b".into()],
            common: vec!["c".into()],
        };
        let cfg = EmConfig { k: 1, n_restarts: 1, ..EmConfig::new(RngSeed(5)) };
        let fit = em_fit(&d1, &d2, &partition, &cfg).unwrap();
        let m = &fit.model;

        let a_freq = d1.empirical_marginal(&[0]).unwrap();
        let b_freq = d2.empirical_marginal(&[1]).unwrap();
        let a = m.var_index("a").unwrap();
        let b = m.var_index("b").unwrap();
        for v in 0..2u16 {
            assert_abs_diff_eq!(m.cond[a][v as usize][0], a_freq.prob(&[v]), epsilon = 1e-9);
            assert_abs_diff_eq!(m.cond[b][v as usize][0], b_freq.prob(&[v]), epsilon = 1e-9);
        }

        // Joint equals the product of the per-variable tables.
        let joint = m.joint(&["a", "b"]).unwrap();
        for av in 0..2u16 {
            for bv in 0..2u16 {
                assert_abs_diff_eq!(
                    joint.prob(&[av, bv]),
                    m.cond[a][av as usize][0] * m.cond[b][bv as usize][0],
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn elbo_is_non_decreasing_on_random_pairs() {
        for trial in 0..20u64 {
            let (d1, d2) = random_pair(RngSeed(300).derive(trial), 120);
            let partition = VariablePartition {
                internal: vec!["a".into()],
                external: vec!["b".into()],
                common: vec!["c".into()],
            };
            let cfg = EmConfig {
                k: 3,
                n_restarts: 2,
                max_iters: 200,
                ..EmConfig::new(RngSeed(301).derive(trial))
            };
            let fit = em_fit(&d1, &d2, &partition, &cfg).unwrap();
            for trace in &fit.restart_traces {
                for pair in trace.windows(2) {
                    assert!(
                        pair[1] >= pair[0] - 1e-10,
                        "objective decreased: {} -> {}",
                        pair[0],
                        pair[1]
                    );
                }
            }
        }
    }

    #[test]
    fn two_component_synthetic_recovery_within_tv() {
        // Well-separated two-component generator. Two variables per
        // non-common block keep the mixture identifiable from the pair of
        // marginal datasets (a single variable per block leaves a ridge of
        // equal-likelihood joints).
        let truth = LatentNBModel {
            pi: vec![0.6, 0.4],
            variables: vec![
                Variable::binary("a1"),
                Variable::binary("a2"),
                Variable::binary("b1"),
                Variable::binary("b2"),
                Variable::binary("c"),
            ],
            cond: vec![
                vec![vec![0.9, 0.1], vec![0.1, 0.9]],
                vec![vec![0.2, 0.85], vec![0.8, 0.15]],
                vec![vec![0.85, 0.15], vec![0.15, 0.85]],
                vec![vec![0.3, 0.9], vec![0.7, 0.1]],
                vec![vec![0.9, 0.15], vec![0.1, 0.85]],
            ],
        };
        truth.validate().unwrap();
        let full = truth.sample(10_000, RngSeed(888)).unwrap();
        let d1 = full.subset_rows(&(0..5000).collect::<Vec<_>>()).project(&[0, 1, 4]);
        let d2 = full.subset_rows(&(5000..10_000).collect::<Vec<_>>()).project(&[4, 2, 3]);

        let partition = VariablePartition {
            internal: vec!["a1".into(), "a2".into()],
            external: vec!["b1".into(), "b2".into()],
            common: vec!["c".into()],
        };
        let cfg = EmConfig { k: 2, ..EmConfig::new(RngSeed(999)) };
        let fit = em_fit(&d1, &d2, &partition, &cfg).unwrap();

        let est = fit.model.joint(&["a1", "a2", "b1", "b2", "c"]).unwrap();
        let exact = truth.joint(&["a1", "a2", "b1", "b2", "c"]).unwrap();
        let mut tv = 0.0;
        for (key, p) in exact.cells() {
            tv += (p - est.prob(key)).abs();
        }
        tv *= 0.5;
        assert!(tv <= 0.05, "total variation {tv}");
    }

    #[test]
    fn fitted_joints_normalize() {
        let (d1, d2, partition) = toy_datasets();
        let cfg = EmConfig { k: 3, n_restarts: 2, ..EmConfig::new(RngSeed(13)) };
        let fit = em_fit(&d1, &d2, &partition, &cfg).unwrap();
        let joint = fit.model.joint(&["a", "b", "c"]).unwrap();
        assert_abs_diff_eq!(joint.total(), 1.0, epsilon = 1e-9);
        for sub in [["a", "c"], ["c", "b"]] {
            let t = fit.model.joint(&sub).unwrap();
            assert_abs_diff_eq!(t.total(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn marginalizing_model_joint_commutes() {
        let (d1, d2, partition) = toy_datasets();
        let cfg = EmConfig { k: 2, n_restarts: 1, ..EmConfig::new(RngSeed(21)) };
        let fit = em_fit(&d1, &d2, &partition, &cfg).unwrap();
        let full = fit.model.joint(&["a", "b", "c"]).unwrap();
        let reduced = fit.model.joint(&["a", "c"]).unwrap();
        let via_marginal = full.marginal(&[0, 2]);
        for (key, p) in via_marginal.cells() {
            assert_abs_diff_eq!(*p, reduced.prob(key), epsilon = 1e-9);
        }
    }

    #[test]
    fn hand_built_indicator_mixture_joint() {
        let model = LatentNBModel {
            pi: vec![0.5, 0.5],
            variables: vec![Variable::binary("x"), Variable::binary("y")],
            cond: vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ],
        };
        let joint = model.joint(&["x", "y"]).unwrap();
        assert_abs_diff_eq!(joint.prob(&[0, 0]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(joint.prob(&[1, 1]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(joint.prob(&[0, 1]), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(joint.prob(&[1, 0]), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn unknown_variable_errors() {
        let (d1, d2, partition) = toy_datasets();
        let cfg = EmConfig { k: 1, n_restarts: 1, ..EmConfig::new(RngSeed(1)) };
        let fit = em_fit(&d1, &d2, &partition, &cfg).unwrap();
        assert!(matches!(fit.model.joint(&["nope"]), Err(EmError::UnknownVariable(_))));
    }

    #[test]
    fn schema_mismatch_is_detected() {
        let (d1, d2, _) = toy_datasets();
        let bad = VariablePartition {
            internal: vec!["a".into()],
            external: vec![],
            common: vec!["c".into()],
        };
        let cfg = EmConfig::new(RngSeed(1));
        assert!(matches!(em_fit(&d1, &d2, &bad, &cfg), Err(EmError::SchemaMismatch(_))));
    }

    #[test]
    fn smoothing_neutrality_when_all_categories_observed() {
        let (d1, d2, partition) = toy_datasets();
        let base = EmConfig {
            k: 2,
            n_restarts: 1,
            elbo_tol: 1e-12,
            max_iters: 2000,
            ..EmConfig::new(RngSeed(71))
        };
        let with = em_fit(&d1, &d2, &partition, &base).unwrap();
        let without = em_fit(&d1, &d2, &partition, &EmConfig { smoothing: 0.0, ..base }).unwrap();
        for (ta, tb) in with.model.cond.iter().zip(&without.model.cond) {
            for (ra, rb) in ta.iter().zip(tb) {
                for (a, b) in ra.iter().zip(rb) {
                    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let (d1, d2, partition) = toy_datasets();
        let cfg = EmConfig { k: 3, n_restarts: 2, ..EmConfig::new(RngSeed(31)) };
        let fit = em_fit(&d1, &d2, &partition, &cfg).unwrap();
        let json = serde_json::to_string(&fit.model).unwrap();
        let back: LatentNBModel = serde_json::from_str(&json).unwrap();
        assert_eq!(fit.model, back);
        assert!(json.contains("\"k\":3"));
    }

    #[test]
    fn model_sampling_is_deterministic() {
        let model = LatentNBModel {
            pi: vec![0.3, 0.7],
            variables: vec![Variable::binary("x"), Variable::binary("y")],
            cond: vec![
                vec![vec![0.2, 0.9], vec![0.8, 0.1]],
                vec![vec![0.6, 0.4], vec![0.4, 0.6]],
            ],
        };
        let s1 = model.sample(500, RngSeed(3)).unwrap();
        let s2 = model.sample(500, RngSeed(3)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn point_mass_model_samples_identical_rows() {
        let model = LatentNBModel {
            pi: vec![1.0],
            variables: vec![Variable::binary("x"), Variable::binary("y")],
            cond: vec![vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![0.0]]],
        };
        let s = model.sample(50, RngSeed(4)).unwrap();
        for row in s.rows() {
            assert_eq!(row, &[1, 0]);
        }
    }

    #[test]
    fn preserve_uniform_inputs_gives_uniform_joint() {
        let mut data =
            CategoricalDataset::new(vec![Variable::binary("int"), Variable::binary("com")])
                .unwrap();
        for row in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            data.push_row(&row).unwrap();
        }
        let cond = ConditionalTable::empirical(&data, &[0], &[1]).unwrap();

        let mut ext =
            CategoricalDataset::new(vec![Variable::binary("com"), Variable::binary("ext")])
                .unwrap();
        for row in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            ext.push_row(&row).unwrap();
        }
        let ext_table = ext.empirical_marginal(&[0, 1]).unwrap();

        let joined = marginal_preserve(&ext_table, &cond).unwrap();
        assert!(joined.zero_mass_cells.is_empty());
        for p in joined.table.cells().values() {
            assert_abs_diff_eq!(*p, 0.125, epsilon = 1e-12);
        }
    }

    #[test]
    fn preserve_point_mass_hand_example() {
        // external mass 1 at (com=1, ext=0); p(int=1 | com=1) = 0.8.
        let mut data =
            CategoricalDataset::new(vec![Variable::binary("int"), Variable::binary("com")])
                .unwrap();
        for _ in 0..4 {
            data.push_row(&[1, 1]).unwrap();
        }
        data.push_row(&[0, 1]).unwrap();
        data.push_row(&[0, 0]).unwrap();
        let cond = ConditionalTable::empirical(&data, &[0], &[1]).unwrap();

        let mut cells = BTreeMap::new();
        cells.insert(vec![1u16, 0u16], 1.0);
        let ext_table =
            CategoricalTable::new(vec![Variable::binary("com"), Variable::binary("ext")], cells);

        let joined = marginal_preserve(&ext_table, &cond).unwrap();
        assert_abs_diff_eq!(joined.table.prob(&[1, 1, 0]), 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(joined.table.prob(&[0, 1, 0]), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn preserve_reproduces_external_marginal_exactly() {
        let mut rng = RngSeed(555).rng();
        for _ in 0..100 {
            let mut internal =
                CategoricalDataset::new(vec![Variable::binary("int"), Variable::binary("com")])
                    .unwrap();
            let mut external =
                CategoricalDataset::new(vec![Variable::binary("com"), Variable::binary("ext")])
                    .unwrap();
            for _ in 0..60 {
                internal.push_row(&[rng.gen_range(0..2), rng.gen_range(0..2)]).unwrap();
                external.push_row(&[rng.gen_range(0..2), rng.gen_range(0..2)]).unwrap();
            }
            let cond = ConditionalTable::empirical(&internal, &[0], &[1]).unwrap();
            let ext_table = external.empirical_marginal(&[0, 1]).unwrap();
            let joined = marginal_preserve(&ext_table, &cond).unwrap();
            // Marginal over (com, ext) = columns 1, 2 of (int, com, ext).
            let back = joined.table.marginal(&[1, 2]);
            for (key, p) in ext_table.cells() {
                assert!((back.prob(key) - p).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn preserve_zero_mass_cell_falls_back_to_uniform() {
        // Internal data only observes com=0; external carries mass at com=1.
        let mut data =
            CategoricalDataset::new(vec![Variable::binary("int"), Variable::binary("com")])
                .unwrap();
        data.push_row(&[0, 0]).unwrap();
        data.push_row(&[1, 0]).unwrap();
        let cond = ConditionalTable::empirical(&data, &[0], &[1]).unwrap();

        let mut cells = BTreeMap::new();
        cells.insert(vec![0u16, 0u16], 0.5);
        cells.insert(vec![1u16, 1u16], 0.5);
        let ext_table =
            CategoricalTable::new(vec![Variable::binary("com"), Variable::binary("ext")], cells);
        let joined = marginal_preserve(&ext_table, &cond).unwrap();
        assert_eq!(joined.zero_mass_cells, vec![vec![1u16]]);
        assert_abs_diff_eq!(joined.table.prob(&[0, 1, 1]), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(joined.table.prob(&[1, 1, 1]), 0.25, epsilon = 1e-12);
        // The preserved marginal stays exact despite the fallback.
        let back = joined.table.marginal(&[1, 2]);
        assert_abs_diff_eq!(back.prob(&[1, 1]), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn preserve_domain_mismatch_errors() {
        let mut data = CategoricalDataset::new(vec![
            Variable::binary("int"),
            Variable::new("com", vec!["x".into(), "y".into(), "z".into()]).unwrap(),
        ])
        .unwrap();
        data.push_row(&[0, 0]).unwrap();
        data.push_row(&[1, 2]).unwrap();
        let cond = ConditionalTable::empirical(&data, &[0], &[1]).unwrap();
        let mut cells = BTreeMap::new();
        cells.insert(vec![0u16, 0u16], 1.0);
        let ext_table =
            CategoricalTable::new(vec![Variable::binary("com"), Variable::binary("ext")], cells);
        assert!(matches!(
            marginal_preserve(&ext_table, &cond),
            Err(EmError::DomainMismatch(_))
        ));
    }
}
