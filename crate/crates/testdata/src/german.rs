//! German-credit-shaped generator: housing is the overlap, a hidden
//! four-level creditworthiness profile drives the internal block, and the
//! demographic external block depends on housing alone. Values are written
//! as the A-codes the recipe decodes.

use std::path::Path;

use rand::Rng;

use crate::{bernoulli, cat, rng_from, write_rows};

const HEADER: &str = "checking_status,duration,credit_history,purpose,credit_amount,savings,\
employment,installment_rate,personal_status,other_debtors,residence_since,property,age,\
other_installment_plans,housing,existing_credits,job,num_maintenance,telephone,foreign_worker,\
class";

const HOUSING: [f64; 3] = [0.55, 0.33, 0.12]; // own, rent, for free
const HOUSING_RAW: [&str; 3] = ["A152", "A151", "A153"];

// The creditworthiness profile is independent of housing; see the adult
// generator for why this makes a four-class mixture structurally unable to
// carry the housing-to-demographics coupling.
const PROFILE: [f64; 4] = [0.30, 0.30, 0.25, 0.15];

// External block, by housing.
const P_MALE: [f64; 3] = [0.88, 0.42, 0.30];
const P_MARRIED: [f64; 3] = [0.85, 0.38, 0.30];
const P_OVER_25: [f64; 3] = [0.95, 0.60, 0.45];
const P_FOREIGN: [f64; 3] = [0.96, 0.96, 0.96];

// Internal block, by profile. Four core variables (checking, savings,
// employment, property) carry most of the profile signal; the remaining
// columns are written with heavily dominant categories so that feature
// combinations repeat and the per-combination classifier sees most of the
// probability mass.
const CHECKING: [[f64; 4]; 4] = [
    [0.85, 0.10, 0.01, 0.04],
    [0.35, 0.50, 0.03, 0.12],
    [0.08, 0.42, 0.12, 0.38],
    [0.02, 0.08, 0.32, 0.58],
];
const DURATION: [[f64; 3]; 4] = [
    [0.01, 0.05, 0.94],
    [0.02, 0.14, 0.84],
    [0.04, 0.26, 0.70],
    [0.08, 0.38, 0.54],
];
const HISTORY: [[f64; 5]; 4] = [
    [0.02, 0.01, 0.90, 0.05, 0.02],
    [0.01, 0.01, 0.92, 0.02, 0.04],
    [0.005, 0.005, 0.91, 0.01, 0.07],
    [0.003, 0.003, 0.884, 0.01, 0.10],
];
const PURPOSE: [[f64; 10]; 4] = [
    [0.93, 0.005, 0.01, 0.03, 0.002, 0.005, 0.005, 0.001, 0.01, 0.002],
    [0.92, 0.01, 0.01, 0.03, 0.002, 0.005, 0.005, 0.001, 0.015, 0.002],
    [0.90, 0.02, 0.01, 0.03, 0.002, 0.005, 0.005, 0.001, 0.025, 0.002],
    [0.87, 0.04, 0.01, 0.03, 0.002, 0.005, 0.005, 0.001, 0.035, 0.002],
];
const PURPOSE_RAW: [&str; 10] =
    ["A40", "A41", "A42", "A43", "A44", "A45", "A46", "A48", "A49", "A410"];
const AMOUNT: [[f64; 3]; 4] = [
    [0.90, 0.08, 0.02],
    [0.85, 0.12, 0.03],
    [0.78, 0.17, 0.05],
    [0.70, 0.22, 0.08],
];
const SAVINGS: [[f64; 5]; 4] = [
    [0.92, 0.04, 0.01, 0.01, 0.02],
    [0.72, 0.16, 0.04, 0.03, 0.05],
    [0.42, 0.24, 0.12, 0.14, 0.08],
    [0.16, 0.22, 0.16, 0.38, 0.08],
];
const EMPLOYMENT: [[f64; 5]; 4] = [
    [0.30, 0.42, 0.22, 0.04, 0.02],
    [0.06, 0.20, 0.52, 0.14, 0.08],
    [0.02, 0.06, 0.32, 0.34, 0.26],
    [0.01, 0.02, 0.12, 0.32, 0.53],
];
const PROPERTY: [[f64; 4]; 4] = [
    [0.03, 0.10, 0.27, 0.60],
    [0.14, 0.24, 0.44, 0.18],
    [0.42, 0.30, 0.23, 0.05],
    [0.70, 0.18, 0.10, 0.02],
];
const JOB: [[f64; 4]; 4] = [
    [0.06, 0.42, 0.50, 0.02],
    [0.02, 0.16, 0.76, 0.06],
    [0.005, 0.045, 0.80, 0.15],
    [0.002, 0.018, 0.58, 0.40],
];
const P_GOOD: [[f64; 4]; 3] = [
    [0.45, 0.65, 0.85, 0.97],
    [0.22, 0.42, 0.68, 0.90],
    [0.10, 0.30, 0.55, 0.80],
];

/// Write `rows` German-credit-shaped records (A-coded). Every 173rd row has
/// an empty savings field, exercising null handling.
pub fn write_german_csv(path: &Path, rows: usize, seed: u64) -> std::io::Result<()> {
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let h = cat(&mut rng, &HOUSING);
        let profile = cat(&mut rng, &PROFILE);

        let male = bernoulli(&mut rng, P_MALE[h]);
        let married = bernoulli(&mut rng, P_MARRIED[h]);
        let personal_status = match (male, married) {
            (true, true) => "A94",
            (true, false) => "A91",
            (false, true) => "A95",
            (false, false) => "A92",
        };
        let age = if bernoulli(&mut rng, P_OVER_25[h]) {
            rng.gen_range(26..=75)
        } else {
            rng.gen_range(19..=25)
        };
        let foreign = if bernoulli(&mut rng, P_FOREIGN[h]) { "A201" } else { "A202" };

        let checking = ["A11", "A12", "A13", "A14"][cat(&mut rng, &CHECKING[profile])];
        let duration = match cat(&mut rng, &DURATION[profile]) {
            0 => rng.gen_range(4..=6),
            1 => rng.gen_range(7..=12),
            _ => rng.gen_range(13..=60),
        };
        let history = ["A30", "A31", "A32", "A33", "A34"][cat(&mut rng, &HISTORY[profile])];
        let purpose = PURPOSE_RAW[cat(&mut rng, &PURPOSE[profile])];
        let amount = match cat(&mut rng, &AMOUNT[profile]) {
            0 => rng.gen_range(250..=2000),
            1 => rng.gen_range(2001..=5000),
            _ => rng.gen_range(5001..=18_000),
        };
        let savings = ["A61", "A62", "A63", "A64", "A65"][cat(&mut rng, &SAVINGS[profile])];
        let employment =
            ["A71", "A72", "A73", "A74", "A75"][cat(&mut rng, &EMPLOYMENT[profile])];
        let property = ["A121", "A122", "A123", "A124"][cat(&mut rng, &PROPERTY[profile])];
        let job = ["A171", "A172", "A173", "A174"][cat(&mut rng, &JOB[profile])];
        // Low-entropy side columns keep the feature-combination space small.
        let installment = cat(&mut rng, &[0.04, 0.06, 0.08, 0.82]) + 1;
        let debtors = ["A101", "A102", "A103"][cat(&mut rng, &[0.94, 0.02, 0.04])];
        let residence = cat(&mut rng, &[0.05, 0.05, 0.05, 0.85]) + 1;
        let other_plans = ["A141", "A142", "A143"][cat(&mut rng, &[0.08, 0.03, 0.89])];
        let credits = cat(&mut rng, &[0.88, 0.10, 0.015, 0.005]) + 1;
        let maintenance = if bernoulli(&mut rng, 0.92) { 1 } else { 2 };
        let telephone = if bernoulli(&mut rng, 0.12) { "A192" } else { "A191" };
        let class = if bernoulli(&mut rng, P_GOOD[h][profile]) { 1 } else { 2 };

        let savings = if i % 173 == 172 { "" } else { savings };
        out.push(format!(
            "{checking},{duration},{history},{purpose},{amount},{savings},{employment},\
{installment},{personal_status},{debtors},{residence},{property},{age},{other_plans},\
{housing},{credits},{job},{maintenance},{telephone},{foreign},{class}",
            housing = HOUSING_RAW[h],
        ));
    }
    write_rows(path, HEADER, out)
}
