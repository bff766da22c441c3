//! Classifier propagation and fairness metrics over feasible sets.
//!
//! A fixed classifier p(favourable | features) is pushed through a joint
//! distribution to obtain the group-conditional favourable rates
//! p(favourable | protected), from which Disparate Impact (ratio) and
//! Demographic Disparity (difference) are computed. Group 0 of the protected
//! variable is the unprivileged group and forms the DI numerator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feasible::FeasibleSet;
use crate::prob::{BinaryJoint3, Cat, Variable};

/// Default cap above which Disparate Impact values are treated as artefacts
/// of near-infeasible distributions and filtered.
pub const DEFAULT_DI_CAP: f64 = 5.0;
/// Disparate Impact below this value is the conventional regulatory
/// concern threshold.
pub const EEOC_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FairnessError {
    #[error("classifier rate {value} for {combo:?} outside [0, 1]")]
    RateOutOfRange { combo: Vec<Cat>, value: f64 },
    #[error("classifier is incomplete: no rate for feature combination {0:?}")]
    IncompleteClassifier(Vec<Cat>),
    #[error("classifier does not cover the two binary variables of the joint")]
    NotBinaryPair,
    #[error("protected group {group} has zero mass")]
    ZeroGroupMass { group: u8 },
    #[error("feasible set is empty")]
    EmptyFeasibleSet,
    #[error("every metric value was filtered by the cap of {cap}")]
    AllValuesFiltered { cap: f64 },
}

/// Conditional probability of the favourable outcome for every feature
/// combination, with a fallback rate for combinations unseen at training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTable {
    features: Vec<Variable>,
    rates: BTreeMap<Vec<Cat>, f64>,
    default_rate: f64,
}

impl ClassifierTable {
    pub fn new(
        features: Vec<Variable>,
        rates: BTreeMap<Vec<Cat>, f64>,
        default_rate: f64,
    ) -> Result<Self, FairnessError> {
        for (combo, &v) in &rates {
            if !(0.0..=1.0).contains(&v) {
                return Err(FairnessError::RateOutOfRange { combo: combo.clone(), value: v });
            }
        }
        if !(0.0..=1.0).contains(&default_rate) {
            return Err(FairnessError::RateOutOfRange { combo: vec![], value: default_rate });
        }
        Ok(Self { features, rates, default_rate })
    }

    /// Classifier over the (internal, common) binary pair, with rates indexed
    /// `2*internal + common`.
    pub fn binary_pair(rates: [f64; 4]) -> Result<Self, FairnessError> {
        let features = vec![Variable::binary("internal"), Variable::binary("common")];
        let mut map = BTreeMap::new();
        for i in 0..2 {
            for c in 0..2 {
                map.insert(vec![i as Cat, c as Cat], rates[2 * i + c]);
            }
        }
        Self::new(features, map, 0.0)
    }

    /// Classifier that returns `rate` for every feature combination.
    pub fn constant(rate: f64) -> Result<Self, FairnessError> {
        Self::binary_pair([rate; 4])
    }

    pub fn features(&self) -> &[Variable] {
        &self.features
    }

    pub fn rates(&self) -> &BTreeMap<Vec<Cat>, f64> {
        &self.rates
    }

    pub fn default_rate(&self) -> f64 {
        self.default_rate
    }

    /// Favourable-outcome probability for a feature combination; unseen
    /// combinations fall back to the default rate.
    pub fn rate(&self, combo: &[Cat]) -> f64 {
        self.rates.get(combo).copied().unwrap_or(self.default_rate)
    }

    /// Extract the four rates over the (internal, common) binary pair,
    /// indexed `2*internal + common`. Requires exactly two binary features
    /// with all four combinations present.
    pub fn binary_pair_rates(&self) -> Result<[f64; 4], FairnessError> {
        if self.features.len() != 2 || self.features.iter().any(|v| v.arity() != 2) {
            return Err(FairnessError::NotBinaryPair);
        }
        let mut out = [0.0f64; 4];
        for i in 0..2u16 {
            for c in 0..2u16 {
                let combo = vec![i, c];
                out[(2 * i + c) as usize] = *self
                    .rates
                    .get(&combo)
                    .ok_or(FairnessError::IncompleteClassifier(combo))?;
            }
        }
        Ok(out)
    }
}

/// Favourable rates and masses of the two protected groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    /// p(favourable | protected = 0), the unprivileged group.
    pub p_yes_given_e0: f64,
    /// p(favourable | protected = 1), the privileged group.
    pub p_yes_given_e1: f64,
    pub p_e0: f64,
    pub p_e1: f64,
}

impl GroupOutcome {
    /// Swap the group convention (which group is unprivileged).
    pub fn flipped(self) -> Self {
        Self {
            p_yes_given_e0: self.p_yes_given_e1,
            p_yes_given_e1: self.p_yes_given_e0,
            p_e0: self.p_e1,
            p_e1: self.p_e0,
        }
    }
}

/// Push the classifier through the joint:
/// `p(favourable | e) = sum_{s,o} rate(s, o) p(s, o | e)`.
pub fn propagate(
    classifier: &ClassifierTable,
    joint: &BinaryJoint3,
) -> Result<GroupOutcome, FairnessError> {
    propagate_rates(classifier.binary_pair_rates()?, joint)
}

/// As [`propagate`] with pre-extracted rates; this is the hot path when
/// sweeping a feasible set.
pub fn propagate_rates(
    rates: [f64; 4],
    joint: &BinaryJoint3,
) -> Result<GroupOutcome, FairnessError> {
    let mut yes = [0.0f64; 2];
    let mut mass = [0.0f64; 2];
    for s in 0..2u8 {
        for o in 0..2u8 {
            let r = rates[(2 * s + o) as usize];
            for e in 0..2u8 {
                let p = joint.get(s, o, e);
                mass[e as usize] += p;
                yes[e as usize] += r * p;
            }
        }
    }
    for e in 0..2u8 {
        if mass[e as usize] <= 0.0 {
            return Err(FairnessError::ZeroGroupMass { group: e });
        }
    }
    Ok(GroupOutcome {
        p_yes_given_e0: yes[0] / mass[0],
        p_yes_given_e1: yes[1] / mass[1],
        p_e0: mass[0],
        p_e1: mass[1],
    })
}

/// Ratio of favourable rates, unprivileged over privileged. A value of 1 is
/// parity. Returns `+inf` when only the denominator is zero and `NaN` for
/// 0/0; both sentinels are filtered downstream rather than erroring.
pub fn disparate_impact(g: &GroupOutcome) -> f64 {
    if g.p_yes_given_e1 == 0.0 {
        if g.p_yes_given_e0 == 0.0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        g.p_yes_given_e0 / g.p_yes_given_e1
    }
}

/// Difference of favourable rates, unprivileged minus privileged, in [-1, 1].
/// A value of 0 is parity.
pub fn demographic_disparity(g: &GroupOutcome) -> f64 {
    g.p_yes_given_e0 - g.p_yes_given_e1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "DI")]
    DisparateImpact,
    #[serde(rename = "DD")]
    DemographicDisparity,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::DisparateImpact => f.write_str("DI"),
            Metric::DemographicDisparity => f.write_str("DD"),
        }
    }
}

/// Metric values over a feasible set with their envelope and, when a true
/// joint is supplied, the true metric and whether the envelope contains it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FairnessSummary {
    pub metric: Metric,
    /// Retained values, one per feasible joint in grid order (after the DI
    /// cap filter for Disparate Impact).
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub true_value: Option<f64>,
    pub contains_truth: Option<bool>,
    /// Values removed by the cap / sentinel filter.
    pub n_filtered: usize,
    /// Set when the true metric itself exceeds the cap (or is a sentinel);
    /// callers treat the whole scenario as excluded.
    pub true_filtered: bool,
}

impl FairnessSummary {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// Compute `metric` for every joint of the feasible set and summarize.
///
/// For Disparate Impact, values above `di_cap` together with infinite and
/// undefined sentinels are excluded and counted in `n_filtered`; Demographic
/// Disparity is bounded and never filtered.
pub fn summarize(
    classifier: &ClassifierTable,
    fs: &FeasibleSet,
    metric: Metric,
    true_joint: Option<&BinaryJoint3>,
    di_cap: f64,
) -> Result<FairnessSummary, FairnessError> {
    if fs.is_empty() {
        return Err(FairnessError::EmptyFeasibleSet);
    }
    let rates = classifier.binary_pair_rates()?;
    let eval = |joint: &BinaryJoint3| -> Result<f64, FairnessError> {
        let g = propagate_rates(rates, joint)?;
        Ok(match metric {
            Metric::DisparateImpact => disparate_impact(&g),
            Metric::DemographicDisparity => demographic_disparity(&g),
        })
    };

    let keep = |v: f64| match metric {
        Metric::DisparateImpact => v.is_finite() && v <= di_cap,
        Metric::DemographicDisparity => true,
    };

    let mut values = Vec::with_capacity(fs.len());
    let mut n_filtered = 0usize;
    for joint in &fs.joints {
        let v = eval(joint)?;
        if keep(v) {
            values.push(v);
        } else {
            n_filtered += 1;
        }
    }
    if values.is_empty() {
        return Err(FairnessError::AllValuesFiltered { cap: di_cap });
    }

    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;

    let (true_value, contains_truth, true_filtered) = match true_joint {
        None => (None, None, false),
        Some(j) => {
            let t = eval(j)?;
            let filtered = !keep(t);
            (Some(t), Some(!filtered && min <= t && t <= max), filtered)
        }
    };

    Ok(FairnessSummary {
        metric,
        values,
        min,
        max,
        mean,
        true_value,
        contains_truth,
        n_filtered,
        true_filtered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasible::{enumerate, FeasibleSpec, MarginalMode};
    use crate::prob::{sample_dirichlet, AxisPair, Marginal2, RngSeed};
    use approx::assert_abs_diff_eq;

    fn worked_joint() -> BinaryJoint3 {
        BinaryJoint3::new([0.1, 0.2, 0.05, 0.05, 0.15, 0.05, 0.2, 0.2]).unwrap()
    }

    /// rate(s, o) = s XOR o.
    fn xor_classifier() -> ClassifierTable {
        ClassifierTable::binary_pair([0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn constant_classifier_gives_equal_rates() {
        let clf = ClassifierTable::constant(0.7).unwrap();
        let g = propagate(&clf, &worked_joint()).unwrap();
        assert_abs_diff_eq!(g.p_yes_given_e0, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(g.p_yes_given_e1, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(disparate_impact(&g), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(demographic_disparity(&g), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_joint_indicator_classifier_gives_half() {
        let clf = ClassifierTable::binary_pair([0.0, 0.0, 1.0, 1.0]).unwrap(); // 1 iff s=1
        let g = propagate(&clf, &BinaryJoint3::uniform()).unwrap();
        assert_abs_diff_eq!(g.p_yes_given_e0, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.p_yes_given_e1, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn worked_propagation_matches_hand_sums() {
        // p(yes, e=0) = p100 + p010 = 0.15 + 0.05 = 0.2, p(e=0) = 0.5;
        // p(yes, e=1) = p101 + p011 = 0.05 + 0.05 = 0.1, p(e=1) = 0.5.
        let g = propagate(&xor_classifier(), &worked_joint()).unwrap();
        assert_abs_diff_eq!(g.p_yes_given_e0, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(g.p_yes_given_e1, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(disparate_impact(&g), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(demographic_disparity(&g), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn propagate_agrees_with_brute_force_oracle() {
        // Independent accumulation over all 8 outcomes.
        for i in 0..1000u64 {
            let joint = BinaryJoint3::new(
                sample_dirichlet(8, 1.0, RngSeed(21).derive(i)).try_into().unwrap(),
            )
            .unwrap();
            let rates: Vec<f64> = sample_dirichlet(4, 1.0, RngSeed(22).derive(i));
            let clf = ClassifierTable::binary_pair([rates[0], rates[1], rates[2], rates[3]])
                .unwrap();

            let mut yes = [0.0f64; 2];
            let mut mass = [0.0f64; 2];
            for idx in 0..8usize {
                let s = (idx >> 2) & 1;
                let o = (idx >> 1) & 1;
                let e = idx & 1;
                mass[e] += joint.entries()[idx];
                yes[e] += rates[2 * s + o] * joint.entries()[idx];
            }
            if mass[0] <= 0.0 || mass[1] <= 0.0 {
                continue;
            }
            let g = propagate(&clf, &joint).unwrap();
            assert_abs_diff_eq!(g.p_yes_given_e0, yes[0] / mass[0], epsilon = 1e-12);
            assert_abs_diff_eq!(g.p_yes_given_e1, yes[1] / mass[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_group_mass_errors() {
        let mut p = [0.0f64; 8];
        p[BinaryJoint3::index(0, 0, 0)] = 0.5;
        p[BinaryJoint3::index(1, 1, 0)] = 0.5;
        let joint = BinaryJoint3::new(p).unwrap();
        assert!(matches!(
            propagate(&xor_classifier(), &joint),
            Err(FairnessError::ZeroGroupMass { group: 1 })
        ));
    }

    #[test]
    fn di_sentinels() {
        let g = GroupOutcome { p_yes_given_e0: 0.3, p_yes_given_e1: 0.0, p_e0: 0.5, p_e1: 0.5 };
        assert_eq!(disparate_impact(&g), f64::INFINITY);
        let g0 = GroupOutcome { p_yes_given_e0: 0.0, p_yes_given_e1: 0.0, p_e0: 0.5, p_e1: 0.5 };
        assert!(disparate_impact(&g0).is_nan());
        let eq = GroupOutcome { p_yes_given_e0: 0.4, p_yes_given_e1: 0.4, p_e0: 0.5, p_e1: 0.5 };
        assert_eq!(disparate_impact(&eq), 1.0);
    }

    #[test]
    fn dd_extremes() {
        let g = GroupOutcome { p_yes_given_e0: 1.0, p_yes_given_e1: 0.0, p_e0: 0.5, p_e1: 0.5 };
        assert_eq!(demographic_disparity(&g), 1.0);
        let f = g.flipped();
        assert_eq!(demographic_disparity(&f), -1.0);
    }

    fn worked_feasible_set() -> FeasibleSet {
        let spec = FeasibleSpec::new(
            Marginal2::internal([0.3, 0.1, 0.2, 0.4]).unwrap(),
            Marginal2::uniform(AxisPair::CommonExternal),
            MarginalMode::Consistent,
            100,
        )
        .unwrap();
        enumerate(&spec).unwrap()
    }

    #[test]
    fn summary_envelope_is_ordered_and_contains_hand_value() {
        let fs = worked_feasible_set();
        let s = summarize(&xor_classifier(), &fs, Metric::DisparateImpact, None, 5.0).unwrap();
        assert!(s.min <= s.mean && s.mean <= s.max);
        // DI = 2.0 at the interior point (c, k) = (0.1, 0.05).
        assert!(s.min <= 2.0 && 2.0 <= s.max, "envelope [{}, {}]", s.min, s.max);
    }

    #[test]
    fn summary_with_true_joint_sets_containment() {
        let fs = worked_feasible_set();
        let s = summarize(
            &xor_classifier(),
            &fs,
            Metric::DemographicDisparity,
            Some(&worked_joint()),
            5.0,
        )
        .unwrap();
        assert_eq!(s.true_value, Some(0.2));
        assert_eq!(s.contains_truth, Some(true));
        assert!(!s.true_filtered);
        assert!(s.range() <= 2.0);
    }

    #[test]
    fn degenerate_set_collapses_summary() {
        let spec = FeasibleSpec::new(
            Marginal2::uniform(AxisPair::InternalCommon),
            Marginal2::uniform(AxisPair::CommonExternal),
            MarginalMode::Consistent,
            2,
        )
        .unwrap();
        let mut fs = enumerate(&spec).unwrap();
        fs.joints.truncate(1);
        fs.params.truncate(1);
        let s = summarize(&xor_classifier(), &fs, Metric::DemographicDisparity, None, 5.0)
            .unwrap();
        assert_eq!(s.min, s.max);
        assert_eq!(s.min, s.mean);
    }

    #[test]
    fn constant_classifier_is_parity_for_every_joint() {
        for i in 0..100u64 {
            let joint = BinaryJoint3::new(
                sample_dirichlet(8, 1.0, RngSeed(23).derive(i)).try_into().unwrap(),
            )
            .unwrap();
            if joint.axis_marginal(crate::prob::Axis::External).iter().any(|&m| m <= 0.0) {
                continue;
            }
            for j in 0..10 {
                let rate = (j as f64 + 0.5) / 10.0;
                let clf = ClassifierTable::constant(rate).unwrap();
                let g = propagate(&clf, &joint).unwrap();
                assert_abs_diff_eq!(disparate_impact(&g), 1.0, epsilon = 1e-9);
                assert_abs_diff_eq!(demographic_disparity(&g), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn dd_is_affine_along_segments_with_fixed_group_masses() {
        let fs = worked_feasible_set();
        let clf = xor_classifier();
        let j1 = &fs.joints[0];
        let j2 = &fs.joints[fs.len() - 1];
        let d1 = demographic_disparity(&propagate(&clf, j1).unwrap());
        let d2 = demographic_disparity(&propagate(&clf, j2).unwrap());
        for step in 0..=10 {
            let lambda = step as f64 / 10.0;
            let mixed = j1.mix(j2, lambda);
            let dm = demographic_disparity(&propagate(&clf, &mixed).unwrap());
            assert_abs_diff_eq!(dm, lambda * d1 + (1.0 - lambda) * d2, epsilon = 1e-9);
        }
    }

    #[test]
    fn di_cap_filters_values_and_flags_true() {
        // Classifier nearly zero on one group's support drives DI sky-high.
        let fs = worked_feasible_set();
        let clf = ClassifierTable::binary_pair([1.0, 1e-4, 1.0, 1e-4]).unwrap();
        let res = summarize(&clf, &fs, Metric::DisparateImpact, None, 5.0);
        match res {
            Ok(s) => assert!(s.n_filtered > 0 || s.max <= 5.0),
            Err(FairnessError::AllValuesFiltered { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
