//! Probability primitives shared by every other module: validated joint and
//! marginal tables over three binary variables, general categorical datasets
//! and tables, KL divergence, and seeded Dirichlet sampling.
//!
//! Axis convention for the three-binary-variable case: the variables are
//! called *internal* (institution-held predictive attribute), *common* (the
//! overlapping variable) and *external* (the protected attribute). A joint
//! entry is indexed as `4*internal + 2*common + external`.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for entry sums of probability tables.
pub const SUM_TOL: f64 = 1e-9;
/// Entries in `[-NEG_CLAMP, 0)` are clamped to zero at construction;
/// anything more negative is rejected. Closed-form feasible-set solutions
/// produce tiny negatives at parameter-bound endpoints from float rounding.
pub const NEG_CLAMP: f64 = 1e-12;

/// Category index within a variable's domain.
pub type Cat = u16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("entry {index} is {value}, more negative than the -{:e} clamp", NEG_CLAMP)]
    NegativeEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, expected 1 within {:e}", SUM_TOL)]
    SumNotOne { sum: f64 },
    #[error("conditioning value {value} of the common variable has zero mass")]
    ZeroConditioningMass { value: u8 },
    #[error("distributions have different support sizes ({left} vs {right})")]
    SupportMismatch { left: usize, right: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("variable `{0}` not found")]
    UnknownVariable(String),
    #[error("variable `{name}` has domain size {size}, need at least 2")]
    DegenerateDomain { name: String, size: usize },
    #[error("row value {value} out of range for variable `{name}` (domain size {size})")]
    ValueOutOfRange { name: String, value: Cat, size: usize },
    #[error("row has {got} values, dataset has {want} variables")]
    RowWidthMismatch { got: usize, want: usize },
    #[error("table over {got} variables cannot convert to {want}")]
    ShapeMismatch { got: usize, want: &'static str },
}

/// One of the three binary variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Internal,
    Common,
    External,
}

/// An ordered pair of distinct axes identifying a two-variable marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisPair {
    /// (internal, common) — the internal-data marginal.
    InternalCommon,
    /// (internal, external).
    InternalExternal,
    /// (common, external) — the external-data marginal.
    CommonExternal,
}

impl AxisPair {
    pub fn axes(self) -> (Axis, Axis) {
        match self {
            AxisPair::InternalCommon => (Axis::Internal, Axis::Common),
            AxisPair::InternalExternal => (Axis::Internal, Axis::External),
            AxisPair::CommonExternal => (Axis::Common, Axis::External),
        }
    }
}

fn clamp_entries<const N: usize>(mut p: [f64; N]) -> Result<[f64; N], ProbError> {
    let mut sum = 0.0;
    for (i, v) in p.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -NEG_CLAMP {
                return Err(ProbError::NegativeEntry { index: i, value: *v });
            }
            *v = 0.0;
        }
        sum += *v;
    }
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(ProbError::SumNotOne { sum });
    }
    Ok(p)
}

/// Joint distribution over the three binary variables, indexed
/// `4*internal + 2*common + external`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryJoint3 {
    p: [f64; 8],
}

impl BinaryJoint3 {
    pub fn new(p: [f64; 8]) -> Result<Self, ProbError> {
        Ok(Self { p: clamp_entries(p)? })
    }

    pub fn uniform() -> Self {
        Self { p: [0.125; 8] }
    }

    pub fn entries(&self) -> &[f64; 8] {
        &self.p
    }

    pub fn get(&self, internal: u8, common: u8, external: u8) -> f64 {
        self.p[Self::index(internal, common, external)]
    }

    pub fn index(internal: u8, common: u8, external: u8) -> usize {
        debug_assert!(internal < 2 && common < 2 && external < 2);
        (4 * internal + 2 * common + external) as usize
    }

    /// Two-variable marginal over the kept axis pair.
    pub fn marginalize(&self, keep: AxisPair) -> Marginal2 {
        let mut m = [0.0f64; 4];
        for i in 0..2u8 {
            for c in 0..2u8 {
                for e in 0..2u8 {
                    let v = self.get(i, c, e);
                    let (a, b) = match keep {
                        AxisPair::InternalCommon => (i, c),
                        AxisPair::InternalExternal => (i, e),
                        AxisPair::CommonExternal => (c, e),
                    };
                    m[(2 * a + b) as usize] += v;
                }
            }
        }
        Marginal2 { p: m, axes: keep }
    }

    /// Single-variable marginal `[p(x=0), p(x=1)]`.
    pub fn axis_marginal(&self, axis: Axis) -> [f64; 2] {
        let mut m = [0.0f64; 2];
        for i in 0..2u8 {
            for c in 0..2u8 {
                for e in 0..2u8 {
                    let x = match axis {
                        Axis::Internal => i,
                        Axis::Common => c,
                        Axis::External => e,
                    };
                    m[x as usize] += self.get(i, c, e);
                }
            }
        }
        m
    }

    /// Convex mixture `lambda * self + (1 - lambda) * other`.
    pub fn mix(&self, other: &Self, lambda: f64) -> Self {
        let mut p = [0.0f64; 8];
        for (idx, v) in p.iter_mut().enumerate() {
            *v = lambda * self.p[idx] + (1.0 - lambda) * other.p[idx];
        }
        Self { p }
    }
}

/// Probability table over an ordered pair of binary variables, indexed
/// `2*first + second`. The axis pair records which marginal this is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal2 {
    p: [f64; 4],
    axes: AxisPair,
}

impl Marginal2 {
    pub fn new(p: [f64; 4], axes: AxisPair) -> Result<Self, ProbError> {
        Ok(Self { p: clamp_entries(p)?, axes })
    }

    /// Internal-data marginal over (internal, common).
    pub fn internal(p: [f64; 4]) -> Result<Self, ProbError> {
        Self::new(p, AxisPair::InternalCommon)
    }

    /// External-data marginal over (common, external).
    pub fn external(p: [f64; 4]) -> Result<Self, ProbError> {
        Self::new(p, AxisPair::CommonExternal)
    }

    pub fn uniform(axes: AxisPair) -> Self {
        Self { p: [0.25; 4], axes }
    }

    pub fn axes(&self) -> AxisPair {
        self.axes
    }

    pub fn entries(&self) -> &[f64; 4] {
        &self.p
    }

    pub fn get(&self, a: u8, b: u8) -> f64 {
        self.p[(2 * a + b) as usize]
    }

    /// Marginal of the first variable: `[p(a=0), p(a=1)]`.
    pub fn first_marginal(&self) -> [f64; 2] {
        [self.p[0] + self.p[1], self.p[2] + self.p[3]]
    }

    /// Marginal of the second variable: `[p(b=0), p(b=1)]`.
    pub fn second_marginal(&self) -> [f64; 2] {
        [self.p[0] + self.p[2], self.p[1] + self.p[3]]
    }

    /// Conditional table p(a | b), conditioning on the second variable.
    ///
    /// Errors with [`ProbError::ZeroConditioningMass`] when some value of the
    /// conditioning variable carries no mass; the caller decides whether to
    /// resample (simulation) or abort (real-data pipeline).
    pub fn condition_on_second(&self) -> Result<Conditional2, ProbError> {
        let pb = self.second_marginal();
        for (b, mass) in pb.iter().enumerate() {
            if *mass <= 0.0 {
                return Err(ProbError::ZeroConditioningMass { value: b as u8 });
            }
        }
        let mut c = [0.0f64; 4];
        for a in 0..2u8 {
            for b in 0..2u8 {
                c[(2 * a + b) as usize] = self.get(a, b) / pb[b as usize];
            }
        }
        Ok(Conditional2 { p: c })
    }
}

/// Conditional table p(a | b) over two binary variables, indexed `2*a + b`.
/// Each column over `a` sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional2 {
    p: [f64; 4],
}

impl Conditional2 {
    pub fn get(&self, a: u8, b: u8) -> f64 {
        self.p[(2 * a + b) as usize]
    }
}

/// Kullback–Leibler divergence KL(p || q) in nats.
///
/// Terms with `p_i = 0` contribute 0. If `p_i > 0` where `q_i = 0` the
/// divergence is `+inf` (returned as a sentinel, not an error, so that
/// downstream binning keeps a total order on divergences).
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, ProbError> {
    if p.len() != q.len() {
        return Err(ProbError::SupportMismatch { left: p.len(), right: q.len() });
    }
    let mut kl = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        if *pi <= 0.0 {
            continue;
        }
        if *qi <= 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pi * (pi / qi).ln();
    }
    // Tiny negatives arise from rounding when p ~ q.
    Ok(kl.max(0.0))
}

/// Seed for all randomized operations.
///
/// The generator is pinned: ChaCha8 seeded through `seed_from_u64`.
/// Sub-seeds are derived with the SplitMix64 finalizer over
/// `seed + tag * 0x9E3779B97F4A7C15`, so the full stream layout is
/// reproducible from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derive an independent sub-seed for the given tag.
    pub fn derive(self, tag: u64) -> RngSeed {
        RngSeed(splitmix64(
            self.0.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        ))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample a probability vector from a symmetric Dirichlet distribution via
/// normalized Gamma(concentration, 1) draws (Marsaglia–Tsang sampler from
/// `rand_distr`, ChaCha8 stream).
///
/// Panics if `dim < 2` or `concentration <= 0`.
pub fn sample_dirichlet(dim: usize, concentration: f64, seed: RngSeed) -> Vec<f64> {
    let mut rng = seed.rng();
    sample_dirichlet_with(dim, concentration, &mut rng)
}

/// As [`sample_dirichlet`] but drawing from a caller-owned generator.
pub fn sample_dirichlet_with<R: Rng>(dim: usize, concentration: f64, rng: &mut R) -> Vec<f64> {
    assert!(dim >= 2, "Dirichlet dimension must be at least 2");
    assert!(concentration > 0.0, "Dirichlet concentration must be positive");
    let gamma = Gamma::new(concentration, 1.0).expect("valid shape");
    loop {
        let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        // All-zero draws can occur for very small concentrations; redraw.
        if sum > 0.0 {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

/// A named categorical variable with an ordered domain of category labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub domain: Vec<String>,
}

impl Variable {
    pub fn new(name: impl Into<String>, domain: Vec<String>) -> Result<Self, ProbError> {
        let name = name.into();
        if domain.len() < 2 {
            return Err(ProbError::DegenerateDomain { name, size: domain.len() });
        }
        Ok(Self { name, domain })
    }

    /// Binary variable with domain `["0", "1"]`.
    pub fn binary(name: impl Into<String>) -> Self {
        Self { name: name.into(), domain: vec!["0".into(), "1".into()] }
    }

    pub fn arity(&self) -> usize {
        self.domain.len()
    }
}

/// Rows of category indices over a fixed, ordered variable schema.
/// Storage is a flat row-major index buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDataset {
    variables: Vec<Variable>,
    data: Vec<Cat>,
    n_rows: usize,
}

impl CategoricalDataset {
    pub fn new(variables: Vec<Variable>) -> Result<Self, ProbError> {
        for v in &variables {
            if v.arity() < 2 {
                return Err(ProbError::DegenerateDomain {
                    name: v.name.clone(),
                    size: v.arity(),
                });
            }
        }
        Ok(Self { variables, data: Vec::new(), n_rows: 0 })
    }

    pub fn push_row(&mut self, row: &[Cat]) -> Result<(), ProbError> {
        if row.len() != self.variables.len() {
            return Err(ProbError::RowWidthMismatch {
                got: row.len(),
                want: self.variables.len(),
            });
        }
        for (v, &x) in self.variables.iter().zip(row) {
            if (x as usize) >= v.arity() {
                return Err(ProbError::ValueOutOfRange {
                    name: v.name.clone(),
                    value: x,
                    size: v.arity(),
                });
            }
        }
        self.data.extend_from_slice(row);
        self.n_rows += 1;
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn row(&self, i: usize) -> &[Cat] {
        let w = self.variables.len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Cat]> {
        self.data.chunks_exact(self.variables.len())
    }

    pub fn var_index(&self, name: &str) -> Result<usize, ProbError> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| ProbError::UnknownVariable(name.to_string()))
    }

    /// New dataset with the selected columns (same rows, schema reordered).
    pub fn project(&self, cols: &[usize]) -> Self {
        let variables = cols.iter().map(|&c| self.variables[c].clone()).collect();
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for row in self.rows() {
            for &c in cols {
                data.push(row[c]);
            }
        }
        Self { variables, data, n_rows: self.n_rows }
    }

    /// New dataset with the selected rows (same schema).
    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        let w = self.variables.len();
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self { variables: self.variables.clone(), data, n_rows: rows.len() }
    }

    /// Relative-frequency table over the selected variables.
    pub fn empirical_marginal(&self, vars: &[usize]) -> Result<CategoricalTable, ProbError> {
        if self.n_rows == 0 {
            return Err(ProbError::EmptyDataset);
        }
        let mut counts: BTreeMap<Vec<Cat>, f64> = BTreeMap::new();
        for row in self.rows() {
            let key: Vec<Cat> = vars.iter().map(|&v| row[v]).collect();
            *counts.entry(key).or_insert(0.0) += 1.0;
        }
        let n = self.n_rows as f64;
        for v in counts.values_mut() {
            *v /= n;
        }
        let variables = vars.iter().map(|&v| self.variables[v].clone()).collect();
        Ok(CategoricalTable { variables, cells: counts })
    }
}

/// Sparse probability table over a tuple of categorical variables, keyed by
/// category-index tuples. Cells absent from the map have probability zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalTable {
    variables: Vec<Variable>,
    cells: BTreeMap<Vec<Cat>, f64>,
}

impl CategoricalTable {
    pub fn new(variables: Vec<Variable>, cells: BTreeMap<Vec<Cat>, f64>) -> Self {
        Self { variables, cells }
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn cells(&self) -> &BTreeMap<Vec<Cat>, f64> {
        &self.cells
    }

    pub fn prob(&self, key: &[Cat]) -> f64 {
        self.cells.get(key).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.cells.values().sum()
    }

    /// Marginal table over a subset of this table's variables (by position).
    pub fn marginal(&self, vars: &[usize]) -> CategoricalTable {
        let mut cells: BTreeMap<Vec<Cat>, f64> = BTreeMap::new();
        for (key, p) in &self.cells {
            let sub: Vec<Cat> = vars.iter().map(|&v| key[v]).collect();
            *cells.entry(sub).or_insert(0.0) += p;
        }
        let variables = vars.iter().map(|&v| self.variables[v].clone()).collect();
        CategoricalTable { variables, cells }
    }

    /// Interpret a table over exactly three binary variables, ordered
    /// (internal, common, external), as a [`BinaryJoint3`].
    pub fn to_binary_joint3(&self) -> Result<BinaryJoint3, ProbError> {
        if self.variables.len() != 3 || self.variables.iter().any(|v| v.arity() != 2) {
            return Err(ProbError::ShapeMismatch {
                got: self.variables.len(),
                want: "three binary variables",
            });
        }
        let mut p = [0.0f64; 8];
        for (key, v) in &self.cells {
            p[BinaryJoint3::index(key[0] as u8, key[1] as u8, key[2] as u8)] = *v;
        }
        BinaryJoint3::new(p)
    }

    /// Interpret a table over exactly two binary variables as a [`Marginal2`]
    /// with the given axis pair.
    pub fn to_marginal2(&self, axes: AxisPair) -> Result<Marginal2, ProbError> {
        if self.variables.len() != 2 || self.variables.iter().any(|v| v.arity() != 2) {
            return Err(ProbError::ShapeMismatch {
                got: self.variables.len(),
                want: "two binary variables",
            });
        }
        let mut p = [0.0f64; 4];
        for (key, v) in &self.cells {
            p[(2 * key[0] + key[1]) as usize] = *v;
        }
        Marginal2::new(p, axes)
    }

    /// Draw `n` i.i.d. rows from the table's distribution.
    pub fn sample(&self, n: usize, seed: RngSeed) -> Result<CategoricalDataset, ProbError> {
        let mut dataset = CategoricalDataset::new(self.variables.clone())?;
        let keys: Vec<&Vec<Cat>> = self.cells.keys().collect();
        let mut cumulative = Vec::with_capacity(self.cells.len());
        let mut acc = 0.0;
        for p in self.cells.values() {
            acc += p;
            cumulative.push(acc);
        }
        if keys.is_empty() || acc <= 0.0 {
            return Err(ProbError::EmptyDataset);
        }
        let mut rng = seed.rng();
        for _ in 0..n {
            let u: f64 = rng.gen::<f64>() * acc;
            let idx = match cumulative.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
                Ok(i) => i,
                Err(i) => i.min(keys.len() - 1),
            };
            dataset.push_row(keys[idx])?;
        }
        Ok(dataset)
    }
}
