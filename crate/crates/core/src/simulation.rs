//! Simulation-study harness: sample ground-truth joints and classifiers,
//! derive consistent and distorted marginal pairs, run the feasible-set
//! pipeline on every scenario, and aggregate coverage / bias / range
//! statistics per KL-inconsistency bin.
//!
//! All randomness flows from one root seed; ground truth `i` draws from
//! sub-seed `seed.derive(1).derive(i)` and its classifier from
//! `seed.derive(2).derive(i)`, so scenarios are independent and the study is
//! reproducible bit for bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fairness::{
    summarize, ClassifierTable, FairnessError, FairnessSummary, Metric,
};
use crate::feasible::{enumerate, FeasibleError, FeasibleSpec};
use crate::prob::{
    kl_divergence, sample_dirichlet_with, Axis, AxisPair, BinaryJoint3, Marginal2, ProbError,
    RngSeed,
};

const GROUND_TRUTH_TAG: u64 = 1;
const CLASSIFIER_TAG: u64 = 2;

/// Ground truths whose single-variable marginals dip below this mass are
/// rejected and resampled, so protected groups are never empty by
/// construction.
pub const MIN_AXIS_MASS: f64 = 1e-3;

/// KL bin edges; the last bin is open-ended and also receives the
/// infinite-divergence sentinel.
pub const KL_BIN_EDGES: [f64; 5] = [0.01, 0.05, 0.1, 0.3, 0.5];
pub const KL_BIN_LABELS: [&str; 6] =
    ["0-0.01", "0.01-0.05", "0.05-0.1", "0.1-0.3", "0.3-0.5", "0.5+"];

pub fn kl_bin_index(kl: f64) -> usize {
    KL_BIN_EDGES.iter().position(|&edge| kl < edge).unwrap_or(KL_BIN_EDGES.len())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("distorted marginal is degenerate (normaliser {0:e})")]
    DegenerateResult(f64),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// Study configuration. `distortions` holds one (alpha, beta) pair per
/// inconsistent variant; variant 0 is always the undistorted consistent one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_ground_truths: usize,
    pub distortions: Vec<(f64, f64)>,
    pub joint_concentration: f64,
    pub classifier_concentration: f64,
    pub grid_resolution: usize,
    pub di_cap: f64,
    pub seed: RngSeed,
}

impl ScenarioConfig {
    /// Desk-scale defaults: 200 ground truths x 25 variants.
    pub fn desk(seed: RngSeed) -> Self {
        Self {
            n_ground_truths: 200,
            distortions: default_distortions(),
            joint_concentration: 1.0,
            classifier_concentration: 1.0,
            grid_resolution: 100,
            di_cap: 5.0,
            seed,
        }
    }

    /// Full-scale run: 1,000 ground truths x 25 variants.
    pub fn paper_scale(seed: RngSeed) -> Self {
        Self { n_ground_truths: 1000, ..Self::desk(seed) }
    }

    pub fn n_variants(&self) -> usize {
        self.distortions.len() + 1
    }

    pub fn n_scenarios(&self) -> usize {
        self.n_ground_truths * self.n_variants()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_ground_truths == 0 {
            return Err(SimError::InvalidConfig("need at least one ground truth".into()));
        }
        if self.joint_concentration <= 0.0 || self.classifier_concentration <= 0.0 {
            return Err(SimError::InvalidConfig("concentrations must be positive".into()));
        }
        if self.grid_resolution < 2 {
            return Err(SimError::InvalidConfig("grid resolution must be at least 2".into()));
        }
        if self.di_cap <= 0.0 {
            return Err(SimError::InvalidConfig("di_cap must be positive".into()));
        }
        if self.distortions.iter().any(|&(a, b)| a <= 0.0 || b <= 0.0) {
            return Err(SimError::InvalidConfig("distortion factors must be positive".into()));
        }
        Ok(())
    }
}

/// The default 24 inconsistent variants: for each ratio r in
/// {1.1, 1.25, 1.5, 2, 3, 5}, both one-sided scalings (r, 1) and (1/r, 1)
/// and both opposing scalings (r, 1/r) and (1/r, r). The opposing pairs
/// drive the common marginal hard enough to populate the 0.5+ KL bin.
pub fn default_distortions() -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(24);
    for r in [1.1, 1.25, 1.5, 2.0, 3.0, 5.0] {
        out.push((r, 1.0));
        out.push((1.0 / r, 1.0));
        out.push((r, 1.0 / r));
        out.push((1.0 / r, r));
    }
    out
}

/// Sample the ground-truth joint for `index`, resampling until every
/// single-variable marginal keeps at least [`MIN_AXIS_MASS`]. Returns the
/// joint and the number of rejected draws.
pub fn gen_ground_truth(cfg: &ScenarioConfig, index: usize) -> (BinaryJoint3, u64) {
    let mut rng = cfg.seed.derive(GROUND_TRUTH_TAG).derive(index as u64).rng();
    let mut rejections = 0;
    loop {
        let draw = sample_dirichlet_with(8, cfg.joint_concentration, &mut rng);
        let joint = BinaryJoint3::new(draw.try_into().expect("dim 8"))
            .expect("Dirichlet draw is a distribution");
        let ok = [Axis::Internal, Axis::Common, Axis::External].iter().all(|&axis| {
            joint.axis_marginal(axis).iter().all(|&m| m >= MIN_AXIS_MASS)
        });
        if ok {
            return (joint, rejections);
        }
        rejections += 1;
    }
}

/// Sample the classifier for ground truth `index`: each feature cell's
/// favourable probability is the first coordinate of a symmetric
/// two-dimensional Dirichlet draw (a Beta(c, c) variate).
pub fn gen_classifier(cfg: &ScenarioConfig, index: usize) -> ClassifierTable {
    let mut rng = cfg.seed.derive(CLASSIFIER_TAG).derive(index as u64).rng();
    let mut rates = [0.0f64; 4];
    for r in rates.iter_mut() {
        *r = sample_dirichlet_with(2, cfg.classifier_concentration, &mut rng)[0];
    }
    ClassifierTable::binary_pair(rates).expect("Beta draws are in [0, 1]")
}

/// Scale the common=0 cells of the internal marginal by `alpha` and the
/// common=1 cells by `beta`, then renormalize. `alpha == beta` leaves the
/// marginal unchanged.
pub fn distort_marginal(
    internal: &Marginal2,
    alpha: f64,
    beta: f64,
) -> Result<Marginal2, SimError> {
    let p = internal.entries();
    let scaled = [p[0] * alpha, p[1] * beta, p[2] * alpha, p[3] * beta];
    let z: f64 = scaled.iter().sum();
    if z < 1e-12 {
        return Err(SimError::DegenerateResult(z));
    }
    Ok(Marginal2::new(
        [scaled[0] / z, scaled[1] / z, scaled[2] / z, scaled[3] / z],
        internal.axes(),
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// The true Disparate Impact exceeded the cap, or every feasible DI
    /// value did.
    DiCap,
    EmptyFeasibleSet,
    ZeroGroupMass,
}

impl ExclusionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExclusionReason::DiCap => "di_cap",
            ExclusionReason::EmptyFeasibleSet => "empty_feasible_set",
            ExclusionReason::ZeroGroupMass => "zero_group_mass",
        }
    }
}

/// Per-metric outcome of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOutcome {
    pub true_value: f64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub contains_truth: bool,
    pub n_feasible: usize,
    pub n_filtered: usize,
}

impl MetricOutcome {
    fn from_summary(s: &FairnessSummary) -> Self {
        Self {
            true_value: s.true_value.unwrap_or(f64::NAN),
            min: s.min,
            mean: s.mean,
            max: s.max,
            contains_truth: s.contains_truth.unwrap_or(false),
            n_feasible: s.values.len(),
            n_filtered: s.n_filtered,
        }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn diff(&self) -> f64 {
        self.true_value - self.mean
    }
}

/// One fairness-testing scenario: a (ground truth, classifier, marginal
/// variant) triple pushed through the feasible-set pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario_id: usize,
    pub gt_index: usize,
    pub variant_index: usize,
    /// Distortion factors; (1, 1) for the consistent variant.
    pub alpha: f64,
    pub beta: f64,
    /// KL(p_internal(common) || p_external(common)); may be infinite.
    pub kl_common: f64,
    pub excluded: Option<ExclusionReason>,
    pub di: Option<MetricOutcome>,
    pub dd: Option<MetricOutcome>,
    /// Range of all finite DI values before the cap filter (reported
    /// alongside the capped range; the paper does not say which it used).
    pub di_range_unfiltered: Option<f64>,
}

impl ScenarioResult {
    pub fn csv_header() -> &'static [&'static str] {
        &[
            "scenario_id",
            "gt_index",
            "variant_index",
            "alpha",
            "beta",
            "kl_common",
            "excluded",
            "exclusion_reason",
            "di_true",
            "di_min",
            "di_mean",
            "di_max",
            "di_contains_truth",
            "di_n_feasible",
            "di_n_filtered",
            "di_range_unfiltered",
            "dd_true",
            "dd_min",
            "dd_mean",
            "dd_max",
            "dd_contains_truth",
            "dd_n_feasible",
            "dd_n_filtered",
        ]
    }

    pub fn csv_record(&self) -> Vec<String> {
        let fmt = |v: f64| {
            if v.is_finite() {
                format!("{v}")
            } else if v.is_nan() {
                "nan".to_string()
            } else {
                "inf".to_string()
            }
        };
        let metric = |m: &Option<MetricOutcome>| -> Vec<String> {
            match m {
                Some(m) => vec![
                    fmt(m.true_value),
                    fmt(m.min),
                    fmt(m.mean),
                    fmt(m.max),
                    m.contains_truth.to_string(),
                    m.n_feasible.to_string(),
                    m.n_filtered.to_string(),
                ],
                None => vec![String::new(); 7],
            }
        };
        let mut rec = vec![
            self.scenario_id.to_string(),
            self.gt_index.to_string(),
            self.variant_index.to_string(),
            fmt(self.alpha),
            fmt(self.beta),
            fmt(self.kl_common),
            self.excluded.is_some().to_string(),
            self.excluded.map(|r| r.as_str().to_string()).unwrap_or_default(),
        ];
        let mut di = metric(&self.di);
        di.push(self.di_range_unfiltered.map(fmt).unwrap_or_default());
        rec.extend(di);
        rec.extend(metric(&self.dd));
        rec
    }
}

/// Run one scenario: derive the marginals from the ground truth (external
/// exact, internal distorted when a variant is given), enumerate the
/// feasible set with the mode auto-detected from the common marginals, and
/// summarize both metrics against the true joint.
///
/// Mathematical degeneracies become scenario-level exclusions, never errors.
pub fn run_scenario(
    ground_truth: &BinaryJoint3,
    classifier: &ClassifierTable,
    distortion: Option<(f64, f64)>,
    grid_resolution: usize,
    di_cap: f64,
    scenario_id: usize,
    gt_index: usize,
    variant_index: usize,
) -> Result<ScenarioResult, SimError> {
    let internal_exact = ground_truth.marginalize(AxisPair::InternalCommon);
    let external = ground_truth.marginalize(AxisPair::CommonExternal);
    let (alpha, beta) = distortion.unwrap_or((1.0, 1.0));
    let internal = match distortion {
        None => internal_exact,
        Some((a, b)) => distort_marginal(&internal_exact, a, b)?,
    };

    let kl_common = kl_divergence(&internal.second_marginal(), &external.first_marginal())
        .expect("matching support");

    let mut result = ScenarioResult {
        scenario_id,
        gt_index,
        variant_index,
        alpha,
        beta,
        kl_common,
        excluded: None,
        di: None,
        dd: None,
        di_range_unfiltered: None,
    };

    let exclude = |mut r: ScenarioResult, reason: ExclusionReason| {
        r.excluded = Some(reason);
        r.di = None;
        r.dd = None;
        r
    };

    let spec = match FeasibleSpec::auto(internal, external, grid_resolution) {
        Ok(s) => s,
        Err(FeasibleError::EmptyFeasibleSet { .. }) => {
            return Ok(exclude(result, ExclusionReason::EmptyFeasibleSet))
        }
        Err(e) => return Err(SimError::InvalidConfig(e.to_string())),
    };
    let fs = match enumerate(&spec) {
        Ok(fs) if !fs.is_empty() => fs,
        Ok(_) => return Ok(exclude(result, ExclusionReason::EmptyFeasibleSet)),
        Err(FeasibleError::EmptyFeasibleSet { .. }) => {
            return Ok(exclude(result, ExclusionReason::EmptyFeasibleSet))
        }
        Err(e) => return Err(SimError::InvalidConfig(e.to_string())),
    };

    let dd = match summarize(
        classifier,
        &fs,
        Metric::DemographicDisparity,
        Some(ground_truth),
        di_cap,
    ) {
        Ok(s) => s,
        Err(FairnessError::ZeroGroupMass { .. }) => {
            return Ok(exclude(result, ExclusionReason::ZeroGroupMass))
        }
        Err(e) => return Err(SimError::InvalidConfig(e.to_string())),
    };
    let di = match summarize(classifier, &fs, Metric::DisparateImpact, Some(ground_truth), di_cap)
    {
        Ok(s) => s,
        Err(FairnessError::ZeroGroupMass { .. }) => {
            return Ok(exclude(result, ExclusionReason::ZeroGroupMass))
        }
        Err(FairnessError::AllValuesFiltered { .. }) => {
            return Ok(exclude(result, ExclusionReason::DiCap))
        }
        Err(e) => return Err(SimError::InvalidConfig(e.to_string())),
    };
    if di.true_filtered {
        return Ok(exclude(result, ExclusionReason::DiCap));
    }

    // Uncapped (but still finite) DI range, for the side-by-side report.
    result.di_range_unfiltered =
        summarize(classifier, &fs, Metric::DisparateImpact, None, f64::INFINITY)
            .ok()
            .map(|s| s.range());
    result.di = Some(MetricOutcome::from_summary(&di));
    result.dd = Some(MetricOutcome::from_summary(&dd));
    Ok(result)
}

/// Per-KL-bin aggregate statistics over non-excluded scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub bin: String,
    /// Mean of (true - mean-estimate) per metric.
    pub avg_diff_dd: Option<f64>,
    pub avg_diff_di: Option<f64>,
    /// Mean of (max - min) per metric; the DI range is after cap filtering,
    /// with the unfiltered variant reported separately.
    pub avg_range_dd: Option<f64>,
    pub avg_range_di: Option<f64>,
    pub avg_range_di_unfiltered: Option<f64>,
    /// Fraction of scenarios whose bounds contain the truth for both
    /// metrics.
    pub coverage_rate: Option<f64>,
    pub n_scenarios: usize,
    pub n_excluded: usize,
}

/// Study-level aggregate: the six KL bins plus overall bias statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub bins: Vec<BinStats>,
    pub overall_diff_dd_mean: f64,
    pub overall_diff_dd_std: f64,
    pub overall_diff_di_mean: f64,
    pub overall_diff_di_std: f64,
    pub overall_range_dd_mean: f64,
    pub overall_range_di_mean: f64,
    pub coverage_rate: f64,
    pub n_scenarios: usize,
    pub n_excluded: usize,
    pub ground_truth_rejections: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub scenarios: Vec<ScenarioResult>,
    pub aggregate: AggregateReport,
}

/// Run the full Cartesian product of ground truths x marginal variants.
/// Scenarios execute in parallel; output order and content are deterministic
/// in the config.
pub fn run_study(cfg: &ScenarioConfig) -> Result<StudyOutput, SimError> {
    cfg.validate()?;
    let n_variants = cfg.n_variants();

    let per_gt: Vec<Result<(Vec<ScenarioResult>, u64), SimError>> = (0..cfg.n_ground_truths)
        .into_par_iter()
        .map(|g| {
            let (gt, rejections) = gen_ground_truth(cfg, g);
            let classifier = gen_classifier(cfg, g);
            let mut rows = Vec::with_capacity(n_variants);
            for v in 0..n_variants {
                let distortion = if v == 0 { None } else { Some(cfg.distortions[v - 1]) };
                rows.push(run_scenario(
                    &gt,
                    &classifier,
                    distortion,
                    cfg.grid_resolution,
                    cfg.di_cap,
                    g * n_variants + v,
                    g,
                    v,
                )?);
            }
            Ok((rows, rejections))
        })
        .collect();

    let mut scenarios = Vec::with_capacity(cfg.n_scenarios());
    let mut rejections = 0u64;
    for r in per_gt {
        let (rows, rej) = r?;
        scenarios.extend(rows);
        rejections += rej;
    }
    let aggregate = aggregate(&scenarios, rejections);
    Ok(StudyOutput { scenarios, aggregate })
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn sample_std(xs: &[f64], m: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn aggregate(scenarios: &[ScenarioResult], ground_truth_rejections: u64) -> AggregateReport {
    struct BinAcc {
        diff_dd: Vec<f64>,
        diff_di: Vec<f64>,
        range_dd: Vec<f64>,
        range_di: Vec<f64>,
        range_di_raw: Vec<f64>,
        covered: usize,
        n: usize,
        n_excluded: usize,
    }
    let mut bins: Vec<BinAcc> = (0..KL_BIN_LABELS.len())
        .map(|_| BinAcc {
            diff_dd: vec![],
            diff_di: vec![],
            range_dd: vec![],
            range_di: vec![],
            range_di_raw: vec![],
            covered: 0,
            n: 0,
            n_excluded: 0,
        })
        .collect();

    for s in scenarios {
        let b = &mut bins[kl_bin_index(s.kl_common)];
        if s.excluded.is_some() {
            b.n_excluded += 1;
            continue;
        }
        let (di, dd) = (s.di.as_ref().unwrap(), s.dd.as_ref().unwrap());
        b.n += 1;
        b.diff_dd.push(dd.diff());
        b.diff_di.push(di.diff());
        b.range_dd.push(dd.range());
        b.range_di.push(di.range());
        if let Some(raw) = s.di_range_unfiltered {
            b.range_di_raw.push(raw);
        }
        if di.contains_truth && dd.contains_truth {
            b.covered += 1;
        }
    }

    let mut all_dd = Vec::new();
    let mut all_di = Vec::new();
    let mut all_range_dd = Vec::new();
    let mut all_range_di = Vec::new();
    let mut covered = 0usize;
    let mut n = 0usize;
    let mut n_excluded = 0usize;
    let mut stats = Vec::with_capacity(KL_BIN_LABELS.len());
    for (label, b) in KL_BIN_LABELS.iter().zip(&bins) {
        stats.push(BinStats {
            bin: label.to_string(),
            avg_diff_dd: mean(&b.diff_dd),
            avg_diff_di: mean(&b.diff_di),
            avg_range_dd: mean(&b.range_dd),
            avg_range_di: mean(&b.range_di),
            avg_range_di_unfiltered: mean(&b.range_di_raw),
            coverage_rate: if b.n > 0 { Some(b.covered as f64 / b.n as f64) } else { None },
            n_scenarios: b.n,
            n_excluded: b.n_excluded,
        });
        all_dd.extend_from_slice(&b.diff_dd);
        all_di.extend_from_slice(&b.diff_di);
        all_range_dd.extend_from_slice(&b.range_dd);
        all_range_di.extend_from_slice(&b.range_di);
        covered += b.covered;
        n += b.n;
        n_excluded += b.n_excluded;
    }

    let dd_mean = mean(&all_dd).unwrap_or(f64::NAN);
    let di_mean = mean(&all_di).unwrap_or(f64::NAN);
    AggregateReport {
        bins: stats,
        overall_diff_dd_mean: dd_mean,
        overall_diff_dd_std: sample_std(&all_dd, dd_mean),
        overall_diff_di_mean: di_mean,
        overall_diff_di_std: sample_std(&all_di, di_mean),
        overall_range_dd_mean: mean(&all_range_dd).unwrap_or(f64::NAN),
        overall_range_di_mean: mean(&all_range_di).unwrap_or(f64::NAN),
        coverage_rate: if n > 0 { covered as f64 / n as f64 } else { f64::NAN },
        n_scenarios: n,
        n_excluded,
        ground_truth_rejections,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig {
            n_ground_truths: 12,
            grid_resolution: 40,
            ..ScenarioConfig::desk(RngSeed(7))
        }
    }

    #[test]
    fn default_grid_has_24_variants() {
        assert_eq!(default_distortions().len(), 24);
        assert_eq!(ScenarioConfig::desk(RngSeed(0)).n_variants(), 25);
    }

    #[test]
    fn ground_truth_is_deterministic_and_rejects_thin_margins() {
        let cfg = small_cfg();
        let (a, _) = gen_ground_truth(&cfg, 3);
        let (b, _) = gen_ground_truth(&cfg, 3);
        assert_eq!(a, b);
        for i in 0..50 {
            let (g, _) = gen_ground_truth(&cfg, i);
            for axis in [Axis::Internal, Axis::Common, Axis::External] {
                for m in g.axis_marginal(axis) {
                    assert!(m >= MIN_AXIS_MASS);
                }
            }
        }
    }

    #[test]
    fn high_concentration_ground_truth_is_near_uniform() {
        let cfg = ScenarioConfig {
            joint_concentration: 1000.0,
            ..ScenarioConfig::desk(RngSeed(5))
        };
        for i in 0..50 {
            let (g, _) = gen_ground_truth(&cfg, i);
            for &v in g.entries() {
                assert!((v - 0.125).abs() < 0.05, "entry {v}");
            }
        }
    }

    #[test]
    fn classifier_is_deterministic_with_mean_near_half() {
        let cfg = small_cfg();
        assert_eq!(
            gen_classifier(&cfg, 2).binary_pair_rates().unwrap(),
            gen_classifier(&cfg, 2).binary_pair_rates().unwrap()
        );
        let mut totals = [0.0f64; 4];
        let n = 10_000;
        for i in 0..n {
            let rates = gen_classifier(&cfg, i).binary_pair_rates().unwrap();
            for (t, r) in totals.iter_mut().zip(rates) {
                assert!((0.0..=1.0).contains(&r));
                *t += r;
            }
        }
        for t in totals {
            assert!((t / n as f64 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn identity_distortion_is_identity() {
        let m = Marginal2::internal([0.3, 0.1, 0.2, 0.4]).unwrap();
        let d = distort_marginal(&m, 1.0, 1.0).unwrap();
        assert_eq!(m.entries(), d.entries());
    }

    #[test]
    fn distortion_matches_hand_renormalization() {
        let m = Marginal2::uniform(AxisPair::InternalCommon);
        let d = distort_marginal(&m, 3.0, 1.0).unwrap();
        let expected = [0.375, 0.125, 0.375, 0.125];
        for (got, want) in d.entries().iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(d.second_marginal()[0], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn proportional_distortion_cancels_in_kl() {
        let m = Marginal2::internal([0.3, 0.1, 0.2, 0.4]).unwrap();
        for r in [0.5, 1.0, 2.0, 7.5] {
            let d = distort_marginal(&m, r, r).unwrap();
            let kl =
                kl_divergence(&d.second_marginal(), &m.second_marginal()).unwrap();
            assert_abs_diff_eq!(kl, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn distortion_kl_increases_with_ratio() {
        let m = Marginal2::internal([0.3, 0.1, 0.2, 0.4]).unwrap();
        let base_common = m.second_marginal();
        let mut last = -1.0;
        for r in [1.0, 1.1, 1.25, 1.5, 2.0, 3.0, 5.0] {
            let d = distort_marginal(&m, r, 1.0).unwrap();
            let kl = kl_divergence(&d.second_marginal(), &base_common).unwrap();
            assert!(kl > last, "ratio {r}: kl {kl} <= {last}");
            last = kl;
        }
    }

    #[test]
    fn consistent_scenario_covers_truth_with_zero_kl() {
        let cfg = small_cfg();
        for i in 0..20 {
            let (gt, _) = gen_ground_truth(&cfg, i);
            let clf = gen_classifier(&cfg, i);
            let r = run_scenario(&gt, &clf, None, 60, 5.0, i, i, 0).unwrap();
            assert!(r.kl_common <= 1e-12, "kl {}", r.kl_common);
            if r.excluded.is_some() {
                assert_eq!(r.excluded, Some(ExclusionReason::DiCap));
                continue;
            }
            assert!(r.dd.unwrap().contains_truth);
            assert!(r.di.unwrap().contains_truth);
        }
    }

    #[test]
    fn constant_classifier_scenario_has_zero_dd_range() {
        let cfg = small_cfg();
        let (gt, _) = gen_ground_truth(&cfg, 0);
        let clf = ClassifierTable::constant(0.4).unwrap();
        let r = run_scenario(&gt, &clf, None, 50, 5.0, 0, 0, 0).unwrap();
        let dd = r.dd.unwrap();
        assert_abs_diff_eq!(dd.true_value, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dd.range(), 0.0, epsilon = 1e-9);
        let di = r.di.unwrap();
        assert_abs_diff_eq!(di.true_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn study_is_deterministic_and_accounts_for_exclusions() {
        let cfg = ScenarioConfig {
            n_ground_truths: 6,
            grid_resolution: 25,
            ..ScenarioConfig::desk(RngSeed(11))
        };
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scenarios.len(), cfg.n_scenarios());
        assert_eq!(
            a.aggregate.n_scenarios + a.aggregate.n_excluded,
            cfg.n_scenarios()
        );
        for s in &a.scenarios {
            if let (Some(di), Some(dd)) = (&s.di, &s.dd) {
                assert!(di.min <= di.mean && di.mean <= di.max);
                assert!(dd.min <= dd.mean && dd.mean <= dd.max);
            }
        }
        // Scenario ids are dense and ordered.
        for (i, s) in a.scenarios.iter().enumerate() {
            assert_eq!(s.scenario_id, i);
        }
    }

    #[test]
    fn consistent_variants_have_full_coverage() {
        let cfg = ScenarioConfig {
            n_ground_truths: 15,
            grid_resolution: 50,
            ..ScenarioConfig::desk(RngSeed(13))
        };
        let out = run_study(&cfg).unwrap();
        for s in out.scenarios.iter().filter(|s| s.variant_index == 0) {
            assert!(s.kl_common <= 1e-12);
            if s.excluded.is_none() {
                assert!(s.di.as_ref().unwrap().contains_truth, "scenario {}", s.scenario_id);
                assert!(s.dd.as_ref().unwrap().contains_truth, "scenario {}", s.scenario_id);
            }
        }
    }

    #[test]
    fn aggregate_has_exactly_six_bins() {
        let out = run_study(&ScenarioConfig {
            n_ground_truths: 4,
            grid_resolution: 20,
            ..ScenarioConfig::desk(RngSeed(3))
        })
        .unwrap();
        let labels: Vec<&str> = out.aggregate.bins.iter().map(|b| b.bin.as_str()).collect();
        assert_eq!(labels, KL_BIN_LABELS.to_vec());
    }

    #[test]
    fn bin_index_handles_sentinel() {
        assert_eq!(kl_bin_index(0.0), 0);
        assert_eq!(kl_bin_index(0.02), 1);
        assert_eq!(kl_bin_index(0.07), 2);
        assert_eq!(kl_bin_index(0.2), 3);
        assert_eq!(kl_bin_index(0.4), 4);
        assert_eq!(kl_bin_index(0.9), 5);
        assert_eq!(kl_bin_index(f64::INFINITY), 5);
    }

    #[test]
    fn csv_record_width_matches_header() {
        let cfg = small_cfg();
        let (gt, _) = gen_ground_truth(&cfg, 1);
        let clf = gen_classifier(&cfg, 1);
        let r = run_scenario(&gt, &clf, Some((2.0, 0.5)), 30, 5.0, 1, 1, 1).unwrap();
        assert_eq!(r.csv_record().len(), ScenarioResult::csv_header().len());
    }
}
