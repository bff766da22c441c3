//! Enumeration of the feasible set of joint distributions over three binary
//! variables consistent with an internal marginal over (internal, common) and
//! an external marginal over (common, external).
//!
//! The external marginal is always preserved exactly. When the two marginals
//! agree on the common variable the internal marginal is matched cell by cell
//! (consistent mode); otherwise only the internal conditionals
//! p(internal | common) are enforced (inconsistent mode). Either way the
//! constraint system leaves two degrees of freedom, `c = p(0,0,0)` and
//! `k = p(0,1,0)`; the feasible set is produced by solving the closed forms
//! on an inclusive linear grid over the valid (c, k) box.
//!
//! The box bounds implemented here keep only the direct bound constraints on
//! each entry; grid points whose closed-form solution still has a negative
//! entry are dropped and counted, so the reported set can be smaller than
//! `resolution^2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{AxisPair, BinaryJoint3, Marginal2, ProbError};

/// Tolerance on common-marginal agreement required by consistent mode.
pub const CONSISTENCY_TOL: f64 = 1e-6;
/// Constraint residuals up to this magnitude count as satisfied.
pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeasibleError {
    #[error("marginal has axes {got:?}, expected {want:?}")]
    WrongAxes { got: AxisPair, want: AxisPair },
    #[error("grid resolution {0} is below the minimum of 2")]
    ResolutionTooSmall(usize),
    #[error(
        "common-variable marginals disagree by {gap:e} (> {:e}); use inconsistent mode",
        CONSISTENCY_TOL
    )]
    InconsistentCommon { gap: f64 },
    #[error("feasible set is empty: c in [{c_lo}, {c_hi}], k in [{k_lo}, {k_hi}]")]
    EmptyFeasibleSet { c_lo: f64, c_hi: f64, k_lo: f64, k_hi: f64 },
    #[error("({c}, {k}) lies outside the free-parameter box")]
    OutOfBox { c: f64, k: f64 },
    #[error("closed forms at ({c}, {k}) produce an entry of {min_entry}, not a distribution")]
    InfeasiblePoint { c: f64, k: f64, min_entry: f64 },
    #[error("degenerate internal conditional: {0}")]
    DegenerateConditional(#[from] ProbError),
    #[error("variable counts give {n} joint variables, overflow guard is 62")]
    Overflow { n: u32 },
}

/// Whether the two marginals are treated as arising from one joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalMode {
    Consistent,
    Inconsistent,
}

/// The two observed marginals plus enumeration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSpec {
    internal: Marginal2,
    external: Marginal2,
    mode: MarginalMode,
    grid_resolution: usize,
}

impl FeasibleSpec {
    pub const DEFAULT_RESOLUTION: usize = 100;

    pub fn new(
        internal: Marginal2,
        external: Marginal2,
        mode: MarginalMode,
        grid_resolution: usize,
    ) -> Result<Self, FeasibleError> {
        if internal.axes() != AxisPair::InternalCommon {
            return Err(FeasibleError::WrongAxes {
                got: internal.axes(),
                want: AxisPair::InternalCommon,
            });
        }
        if external.axes() != AxisPair::CommonExternal {
            return Err(FeasibleError::WrongAxes {
                got: external.axes(),
                want: AxisPair::CommonExternal,
            });
        }
        if grid_resolution < 2 {
            return Err(FeasibleError::ResolutionTooSmall(grid_resolution));
        }
        if mode == MarginalMode::Consistent {
            let gap = common_gap(&internal, &external);
            if gap > CONSISTENCY_TOL {
                return Err(FeasibleError::InconsistentCommon { gap });
            }
        }
        Ok(Self { internal, external, mode, grid_resolution })
    }

    /// Build with the mode chosen by whether the common marginals agree
    /// within [`CONSISTENCY_TOL`].
    pub fn auto(
        internal: Marginal2,
        external: Marginal2,
        grid_resolution: usize,
    ) -> Result<Self, FeasibleError> {
        let mode = if common_gap(&internal, &external) <= CONSISTENCY_TOL {
            MarginalMode::Consistent
        } else {
            MarginalMode::Inconsistent
        };
        Self::new(internal, external, mode, grid_resolution)
    }

    pub fn internal(&self) -> &Marginal2 {
        &self.internal
    }

    pub fn external(&self) -> &Marginal2 {
        &self.external
    }

    pub fn mode(&self) -> MarginalMode {
        self.mode
    }

    pub fn grid_resolution(&self) -> usize {
        self.grid_resolution
    }

    /// Per-mode target for the entry pair (p001-like, p011-like): in
    /// consistent mode the internal cells themselves, in inconsistent mode
    /// the internal conditionals scaled by the external common masses.
    fn internal_targets(&self) -> Result<(f64, f64), FeasibleError> {
        match self.mode {
            MarginalMode::Consistent => {
                Ok((self.internal.get(0, 0), self.internal.get(0, 1)))
            }
            MarginalMode::Inconsistent => {
                let cond = self.internal.condition_on_second()?;
                let q = &self.external;
                let mass0 = q.get(0, 0) + q.get(0, 1);
                let mass1 = q.get(1, 0) + q.get(1, 1);
                Ok((cond.get(0, 0) * mass0, cond.get(0, 1) * mass1))
            }
        }
    }
}

fn common_gap(internal: &Marginal2, external: &Marginal2) -> f64 {
    let pi = internal.second_marginal();
    let pe = external.first_marginal();
    (pi[0] - pe[0]).abs().max((pi[1] - pe[1]).abs())
}

/// Valid ranges of the two free parameters `c = p(0,0,0)` and `k = p(0,1,0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeParamBox {
    pub c_lo: f64,
    pub c_hi: f64,
    pub k_lo: f64,
    pub k_hi: f64,
    /// Set when a lower bound exceeds its upper bound, which can happen
    /// under strongly inconsistent marginals.
    pub empty: bool,
}

impl FreeParamBox {
    pub fn contains(&self, c: f64, k: f64) -> bool {
        !self.empty
            && c >= self.c_lo - f64::EPSILON
            && c <= self.c_hi + f64::EPSILON
            && k >= self.k_lo - f64::EPSILON
            && k <= self.k_hi + f64::EPSILON
    }

    pub fn c_width(&self) -> f64 {
        (self.c_hi - self.c_lo).max(0.0)
    }

    pub fn k_width(&self) -> f64 {
        (self.k_hi - self.k_lo).max(0.0)
    }
}

/// Bounds on the free parameters such that the directly bounded closed-form
/// entries stay in [0, 1].
///
/// For `c`: `max(0, q(0,0)-1, t0-1) <= c <= min(1, q(0,0), t0)` where
/// `q` is the external marginal and `t0` the internal target for `p(0,0,1)`;
/// the `k` bounds mirror them on the common=1 slice.
pub fn param_bounds(spec: &FeasibleSpec) -> Result<FreeParamBox, FeasibleError> {
    let q = spec.external();
    let (t0, t1) = spec.internal_targets()?;

    let c_lo = 0.0f64.max(q.get(0, 0) - 1.0).max(t0 - 1.0);
    let c_hi = 1.0f64.min(q.get(0, 0)).min(t0);
    let k_lo = 0.0f64.max(q.get(1, 0) - 1.0).max(t1 - 1.0);
    let k_hi = 1.0f64.min(q.get(1, 0)).min(t1);

    let empty = c_lo > c_hi || k_lo > k_hi;
    let bounds = FreeParamBox { c_lo, c_hi, k_lo, k_hi, empty };
    if empty {
        return Err(FeasibleError::EmptyFeasibleSet { c_lo, c_hi, k_lo, k_hi });
    }
    Ok(bounds)
}

/// The eight closed-form entries as a raw array, without validation.
/// Entry order is `4*internal + 2*common + external`.
fn closed_form(spec: &FeasibleSpec, c: f64, k: f64) -> Result<[f64; 8], FeasibleError> {
    let (t0, t1) = spec.internal_targets()?;
    Ok(closed_form_with(spec.external(), t0, t1, c, k))
}

fn closed_form_with(q: &Marginal2, t0: f64, t1: f64, c: f64, k: f64) -> [f64; 8] {
    let p000 = c;
    let p010 = k;
    let p100 = q.get(0, 0) - c;
    let p110 = q.get(1, 0) - k;
    let p001 = t0 - c;
    let p101 = q.get(0, 1) - p001;
    let p011 = t1 - k;
    let p111 = q.get(1, 1) - p011;

    [p000, p001, p010, p011, p100, p101, p110, p111]
}

/// Solve the constraint system at a fixed (c, k).
///
/// Inside the box the directly bounded entries are non-negative by
/// construction; the remaining two entries per slice can still come out
/// negative, in which case the point is infeasible and reported as such
/// (enumeration drops and counts these points).
pub fn solve_joint(spec: &FeasibleSpec, c: f64, k: f64) -> Result<BinaryJoint3, FeasibleError> {
    let bounds = param_bounds(spec)?;
    if !bounds.contains(c, k) {
        return Err(FeasibleError::OutOfBox { c, k });
    }
    let entries = closed_form(spec, c, k)?;
    BinaryJoint3::new(entries).map_err(|_| {
        let min_entry = entries.iter().cloned().fold(f64::INFINITY, f64::min);
        FeasibleError::InfeasiblePoint { c, k, min_entry }
    })
}

/// The enumerated feasible set with the (c, k) pair behind each joint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub joints: Vec<BinaryJoint3>,
    /// (c, k) generating each joint, parallel to `joints`, in row-major
    /// grid order (c outer, k inner).
    pub params: Vec<(f64, f64)>,
    pub spec: FeasibleSpec,
    pub bounds: FreeParamBox,
    /// Total grid points evaluated (`#c values * #k values`).
    pub n_grid: usize,
    /// Grid points dropped because a closed-form entry was negative.
    pub n_dropped: usize,
}

impl FeasibleSet {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

fn grid_axis(lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    let width = hi - lo;
    if width <= f64::EPSILON {
        return vec![lo];
    }
    (0..resolution)
        .map(|i| lo + width * (i as f64) / ((resolution - 1) as f64))
        .collect()
}

/// Enumerate the feasible set over the inclusive (c, k) grid.
pub fn enumerate(spec: &FeasibleSpec) -> Result<FeasibleSet, FeasibleError> {
    let bounds = param_bounds(spec)?;
    let (t0, t1) = spec.internal_targets()?;
    let res = spec.grid_resolution();
    let cs = grid_axis(bounds.c_lo, bounds.c_hi, res);
    let ks = grid_axis(bounds.k_lo, bounds.k_hi, res);
    let n_grid = cs.len() * ks.len();

    let mut joints = Vec::with_capacity(n_grid);
    let mut params = Vec::with_capacity(n_grid);
    let mut n_dropped = 0usize;
    for &c in &cs {
        for &k in &ks {
            match BinaryJoint3::new(closed_form_with(spec.external(), t0, t1, c, k)) {
                Ok(j) => {
                    joints.push(j);
                    params.push((c, k));
                }
                Err(_) => n_dropped += 1,
            }
        }
    }
    Ok(FeasibleSet { joints, params, spec: spec.clone(), bounds, n_grid, n_dropped })
}

/// Named residual of one constraint equation.
#[derive(Debug, Clone, Serialize)]
pub struct Residual {
    pub name: String,
    pub value: f64,
}

/// Residuals of every applicable constraint, plus the pass verdict at
/// [`RESIDUAL_TOL`].
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintReport {
    pub ok: bool,
    pub max_abs: f64,
    pub residuals: Vec<Residual>,
}

/// Evaluate all constraint residuals of `joint` against `spec`.
///
/// External-marginal and normalisation residuals always apply; consistent
/// mode adds internal-marginal cell residuals, inconsistent mode adds the
/// conditional-matching residuals in multiplied-through form
/// `p(common=o) * p_i(s | o) - p(s, o)` so zero common mass needs no division.
pub fn verify_constraints(joint: &BinaryJoint3, spec: &FeasibleSpec) -> ConstraintReport {
    let mut residuals = Vec::new();

    let ext = joint.marginalize(AxisPair::CommonExternal);
    for o in 0..2u8 {
        for e in 0..2u8 {
            residuals.push(Residual {
                name: format!("external[{o},{e}]"),
                value: ext.get(o, e) - spec.external().get(o, e),
            });
        }
    }

    let int = joint.marginalize(AxisPair::InternalCommon);
    match spec.mode() {
        MarginalMode::Consistent => {
            for s in 0..2u8 {
                for o in 0..2u8 {
                    residuals.push(Residual {
                        name: format!("internal[{s},{o}]"),
                        value: int.get(s, o) - spec.internal().get(s, o),
                    });
                }
            }
        }
        MarginalMode::Inconsistent => {
            // The spec constructor only admits inconsistent specs whose
            // internal marginal conditions cleanly, so this cannot fail here.
            if let Ok(cond) = spec.internal().condition_on_second() {
                let common = int.second_marginal();
                for s in 0..2u8 {
                    for o in 0..2u8 {
                        residuals.push(Residual {
                            name: format!("conditional[{s}|{o}]"),
                            value: common[o as usize] * cond.get(s, o) - int.get(s, o),
                        });
                    }
                }
            }
        }
    }

    residuals.push(Residual {
        name: "normalisation".into(),
        value: joint.entries().iter().sum::<f64>() - 1.0,
    });

    let max_abs = residuals.iter().map(|r| r.value.abs()).fold(0.0, f64::max);
    ConstraintReport { ok: max_abs <= RESIDUAL_TOL, max_abs, residuals }
}

/// Number of free parameters left in a joint over `n_i + n_o + n_e` binary
/// variables after imposing the marginal constraints.
///
/// Consistent: `2^n - 2^(n_i+n_o) - 2^(n_o+n_e) + 2`.
/// Inconsistent: `2^n - 2^(n_o+n_e) - 2^(n_i+n_o) + 2^n_o`.
pub fn count_free_params(
    n_i: u32,
    n_o: u32,
    n_e: u32,
    mode: MarginalMode,
) -> Result<u64, FeasibleError> {
    assert!(n_i >= 1 && n_o >= 1 && n_e >= 1, "variable counts must be at least 1");
    let n = n_i + n_o + n_e;
    if n > 62 {
        return Err(FeasibleError::Overflow { n });
    }
    let pow = |e: u32| -> i128 { 1i128 << e };
    let free = match mode {
        MarginalMode::Consistent => pow(n) - pow(n_i + n_o) - pow(n_o + n_e) + 2,
        MarginalMode::Inconsistent => pow(n) - pow(n_o + n_e) - pow(n_i + n_o) + pow(n_o),
    };
    debug_assert!(free >= 0);
    Ok(free as u64)
}
