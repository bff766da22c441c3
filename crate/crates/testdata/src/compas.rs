//! COMPAS-shaped generator: the risk-score text is the latent class, and
//! every other variable is conditionally independent given it.

use std::path::Path;

use rand::Rng;

use crate::{bernoulli, cat, rng_from, write_rows};

const HEADER: &str = "id,sex,age_cat,race,juv_fel_count,juv_misd_count,juv_other_count,\
priors_count,c_charge_degree,score_text,v_score_text,two_year_recid,decile_score";

const SCORE: [f64; 3] = [0.52, 0.27, 0.21]; // Low, Medium, High
const SCORE_RAW: [&str; 3] = ["Low", "Medium", "High"];

const P_BLACK: [f64; 3] = [0.30, 0.46, 0.60];
const P_MALE: [f64; 3] = [0.78, 0.82, 0.85];
// (25 - 45, Greater than 45, Less than 25)
const AGE_CAT: [[f64; 3]; 3] = [
    [0.50, 0.35, 0.15],
    [0.55, 0.22, 0.23],
    [0.55, 0.12, 0.33],
];
const AGE_RAW: [&str; 3] = ["25 - 45", "Greater than 45", "Less than 25"];
const P_FELONY: [f64; 3] = [0.58, 0.66, 0.74];
const P_ANY_JUVENILE: [f64; 3] = [0.03, 0.09, 0.20];
// Exponential rate for the priors count, per score level.
const PRIORS_RATE: [f64; 3] = [1.0, 0.5, 0.28];
const V_SCORE: [[f64; 3]; 3] = [
    [0.75, 0.20, 0.05],
    [0.30, 0.50, 0.20],
    [0.10, 0.35, 0.55],
];
const P_RECID: [f64; 3] = [0.22, 0.45, 0.68];

/// Write `rows` COMPAS-shaped records. About 3% of rows carry other race
/// values (exercising the recipe's race filter) and every 211th row has an
/// "N/A" score text (exercising null handling).
pub fn write_compas_csv(path: &Path, rows: usize, seed: u64) -> std::io::Result<()> {
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let z = cat(&mut rng, &SCORE);
        let race = if bernoulli(&mut rng, 0.03) {
            ["Hispanic", "Other", "Asian"][rng.gen_range(0..3)]
        } else if bernoulli(&mut rng, P_BLACK[z]) {
            "African-American"
        } else {
            "Caucasian"
        };
        let sex = if bernoulli(&mut rng, P_MALE[z]) { "Male" } else { "Female" };
        let age_cat = AGE_RAW[cat(&mut rng, &AGE_CAT[z])];
        let charge = if bernoulli(&mut rng, P_FELONY[z]) { "F" } else { "M" };

        let (juv_fel, juv_misd, juv_other) = if bernoulli(&mut rng, P_ANY_JUVENILE[z]) {
            let mut counts = [0u32; 3];
            let total = 1 + sample_geometric(&mut rng, 0.6).min(13);
            for _ in 0..total {
                counts[rng.gen_range(0..3)] += 1;
            }
            (counts[0], counts[1], counts[2])
        } else {
            (0, 0, 0)
        };

        let priors = sample_exponential_count(&mut rng, PRIORS_RATE[z]).min(38);
        let v_score = SCORE_RAW[cat(&mut rng, &V_SCORE[z])];
        let recid = bernoulli(&mut rng, P_RECID[z]) as u8;
        let decile = match z {
            0 => rng.gen_range(1..=4),
            1 => rng.gen_range(5..=7),
            _ => rng.gen_range(8..=10),
        };
        let score = if i % 211 == 210 { "N/A" } else { SCORE_RAW[z] };

        out.push(format!(
            "{id},{sex},{age_cat},{race},{juv_fel},{juv_misd},{juv_other},{priors},\
{charge},{score},{v_score},{recid},{decile}",
            id = i + 1,
        ));
    }
    write_rows(path, HEADER, out)
}

fn sample_geometric<R: Rng>(rng: &mut R, p: f64) -> u32 {
    let mut n = 0;
    while !bernoulli(rng, p) && n < 30 {
        n += 1;
    }
    n
}

fn sample_exponential_count<R: Rng>(rng: &mut R, rate: f64) -> u32 {
    let u: f64 = rng.gen::<f64>().max(1e-12);
    (-u.ln() / rate).floor() as u32
}
