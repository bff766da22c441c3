//! Adult-shaped generator: marital status is the overlap, a hidden
//! four-level earnings profile drives the internal block, and the
//! demographic external block depends on marital status alone.

use std::path::Path;

use rand::Rng;

use crate::{bernoulli, cat, rng_from, write_rows};

const HEADER: &str = "age,workclass,fnlwgt,education,education-num,marital-status,occupation,\
relationship,race,sex,capital-gain,capital-loss,hours-per-week,native-country,income";

const P_MARRIED: f64 = 0.47;
// The earnings profile is independent of marital status: the profile alone
// explains the internal block, while the overlap-to-demographics coupling
// lives entirely outside it. A four-class mixture then has to spend its
// states on the profile and cannot also carry that coupling.
const PROFILE: [f64; 4] = [0.30, 0.30, 0.25, 0.15];

// Education over (primary, high-school, HS-grad, some-college, assoc-acdm,
// assoc-voc, bachelors, masters, prof-school, doctorate), per profile.
const EDUCATION: [[f64; 10]; 4] = [
    [0.18, 0.22, 0.35, 0.15, 0.03, 0.03, 0.03, 0.005, 0.0025, 0.0025],
    [0.04, 0.10, 0.38, 0.25, 0.06, 0.07, 0.08, 0.015, 0.0025, 0.0025],
    [0.01, 0.04, 0.22, 0.26, 0.07, 0.08, 0.24, 0.06, 0.01, 0.01],
    [0.002, 0.008, 0.06, 0.13, 0.04, 0.05, 0.38, 0.22, 0.06, 0.05],
];

const EDUCATION_RAW: [&[&str]; 10] = [
    &["7th-8th", "5th-6th", "1st-4th", "Preschool"],
    &["11th", "10th", "9th", "12th"],
    &["HS-grad"],
    &["Some-college"],
    &["Assoc-acdm"],
    &["Assoc-voc"],
    &["Bachelors"],
    &["Masters"],
    &["Prof-school"],
    &["Doctorate"],
];

// Rough years-of-education used only for the dropped education-num column.
const EDUCATION_NUM: [u32; 10] = [4, 10, 9, 10, 12, 11, 13, 14, 15, 16];

const OCCUPATION_RAW: [&str; 14] = [
    "Adm-clerical",
    "Armed-Forces",
    "Craft-repair",
    "Exec-managerial",
    "Farming-fishing",
    "Handlers-cleaners",
    "Machine-op-inspct",
    "Other-service",
    "Priv-house-serv",
    "Prof-specialty",
    "Protective-serv",
    "Sales",
    "Tech-support",
    "Transport-moving",
];

const OCCUPATION: [[f64; 14]; 4] = [
    [0.08, 0.001, 0.16, 0.02, 0.06, 0.12, 0.14, 0.18, 0.03, 0.02, 0.02, 0.08, 0.01, 0.079],
    [0.16, 0.002, 0.14, 0.05, 0.03, 0.06, 0.10, 0.11, 0.01, 0.05, 0.03, 0.13, 0.04, 0.088],
    [0.12, 0.002, 0.10, 0.14, 0.02, 0.03, 0.05, 0.06, 0.004, 0.16, 0.04, 0.14, 0.09, 0.044],
    [0.05, 0.001, 0.04, 0.30, 0.01, 0.01, 0.02, 0.02, 0.002, 0.33, 0.02, 0.12, 0.06, 0.017],
];

const P_GAIN_HIGH: [f64; 4] = [0.005, 0.02, 0.09, 0.42];
const P_LOSS_HIGH: [f64; 4] = [0.02, 0.04, 0.08, 0.18];
const HOURS: [[f64; 3]; 4] = [
    [0.45, 0.50, 0.05],
    [0.30, 0.62, 0.08],
    [0.20, 0.68, 0.12],
    [0.10, 0.72, 0.18],
];
const P_PRIVATE: [f64; 4] = [0.82, 0.78, 0.72, 0.58];
const P_INCOME_HIGH_MARRIED: [f64; 4] = [0.05, 0.20, 0.45, 0.80];
const P_INCOME_HIGH_OTHER: [f64; 4] = [0.01, 0.05, 0.15, 0.45];

const P_MALE: [f64; 2] = [0.45, 0.90]; // by married flag
const AGE: [[f64; 3]; 2] = [[0.27, 0.63, 0.10], [0.02, 0.83, 0.15]];
const P_WHITE: [f64; 2] = [0.83, 0.87];
const P_SPOUSE: [f64; 2] = [0.03, 0.93];
const P_US: [f64; 2] = [0.91, 0.90];

/// Write `rows` Adult-shaped records. Every 97th row carries a "?"
/// workclass so ingestion's null handling is exercised.
pub fn write_adult_csv(path: &Path, rows: usize, seed: u64) -> std::io::Result<()> {
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let married = bernoulli(&mut rng, P_MARRIED);
        let m = married as usize;
        let profile = cat(&mut rng, &PROFILE);

        // Internal block, profile-driven.
        let edu = cat(&mut rng, &EDUCATION[profile]);
        let edu_raw = EDUCATION_RAW[edu][rng.gen_range(0..EDUCATION_RAW[edu].len())];
        let occupation = OCCUPATION_RAW[cat(&mut rng, &OCCUPATION[profile])];
        let gain_high = bernoulli(&mut rng, P_GAIN_HIGH[profile]);
        let gain = if gain_high {
            *[7688, 7298, 15024, 99999].iter().nth(rng.gen_range(0..4)).unwrap()
        } else if bernoulli(&mut rng, 0.92) {
            0
        } else {
            [594, 2174, 3103, 4386, 5000][rng.gen_range(0..5)]
        };
        let loss_high = bernoulli(&mut rng, P_LOSS_HIGH[profile]);
        let loss = if loss_high {
            [1887, 1977, 2415][rng.gen_range(0..3)]
        } else if bernoulli(&mut rng, 0.97) {
            0
        } else {
            40
        };
        let hours_bucket = cat(&mut rng, &HOURS[profile]);
        let hours = match hours_bucket {
            0 => rng.gen_range(10..40),
            1 => rng.gen_range(40..=60),
            _ => rng.gen_range(61..=99),
        };
        let workclass = if bernoulli(&mut rng, P_PRIVATE[profile]) {
            "Private"
        } else {
            ["Self-emp-not-inc", "Local-gov", "State-gov", "Federal-gov", "Self-emp-inc"]
                [rng.gen_range(0..5)]
        };
        let income_p =
            if married { P_INCOME_HIGH_MARRIED[profile] } else { P_INCOME_HIGH_OTHER[profile] };
        let income = if bernoulli(&mut rng, income_p) { ">50K" } else { "<=50K" };

        // External block, marital-driven only.
        let male = bernoulli(&mut rng, P_MALE[m]);
        let sex = if male { "Male" } else { "Female" };
        let age_bucket = cat(&mut rng, &AGE[m]);
        let age = match age_bucket {
            0 => rng.gen_range(17..25),
            1 => rng.gen_range(25..=60),
            _ => rng.gen_range(61..=80),
        };
        let race = if bernoulli(&mut rng, P_WHITE[m]) {
            "White"
        } else {
            ["Black", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other"][rng.gen_range(0..4)]
        };
        let relationship = if bernoulli(&mut rng, P_SPOUSE[m]) {
            if male {
                "Husband"
            } else {
                "Wife"
            }
        } else {
            ["Not-in-family", "Own-child", "Unmarried", "Other-relative"][rng.gen_range(0..4)]
        };
        let native = if bernoulli(&mut rng, P_US[m]) {
            "United-States"
        } else {
            ["Mexico", "Philippines", "Germany", "Canada", "India"][rng.gen_range(0..5)]
        };
        let marital = if married {
            ["Married-civ-spouse", "Married-civ-spouse", "Married-spouse-absent", "Married-AF-spouse"]
                [rng.gen_range(0..4)]
        } else {
            ["Never-married", "Divorced", "Separated", "Widowed"][rng.gen_range(0..4)]
        };

        let fnlwgt = rng.gen_range(12_000..400_000);
        let workclass = if i % 97 == 96 { "?" } else { workclass };
        out.push(format!(
            "{age},{workclass},{fnlwgt},{edu_raw},{edu_num},{marital},{occupation},\
{relationship},{race},{sex},{gain},{loss},{hours},{native},{income}",
            edu_num = EDUCATION_NUM[edu],
        ));
    }
    write_rows(path, HEADER, out)
}
