//! Deterministic synthetic raw-CSV generators shaped like the Adult, COMPAS
//! and German-credit exports the shipped recipes expect.
//!
//! Each generator draws from a fixed latent-structure model chosen to mirror
//! the corresponding dataset's known behaviour under the two structural
//! estimators:
//!
//! * `compas`: every variable is conditionally independent given the risk
//!   score (the overlap variable), so both the latent Naive Bayes and the
//!   marginal-preservation assumptions hold and both estimators should be
//!   accurate.
//! * `adult` / `german`: the internal block depends on a hidden four-level
//!   profile on top of the overlap variable while the external block depends
//!   on the overlap only. Internal and external are conditionally
//!   independent given the overlap (marginal preservation is consistent),
//!   but the joint needs eight latent states, so a four-class Naive Bayes
//!   fit is misspecified.
//!
//! Rows are written with realistic raw values (numeric ages, A-codes,
//! "?" markers) so the recipes' filters, null handling, derived columns and
//! bucketing all get exercised.

mod adult;
mod compas;
mod german;

pub use adult::write_adult_csv;
pub use compas::write_compas_csv;
pub use german::write_german_csv;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draw a category index from an unnormalized weight vector.
pub(crate) fn cat<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.len() - 1
}

pub(crate) fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.gen::<f64>() < p
}

pub(crate) fn write_rows(
    path: &std::path::Path,
    header: &str,
    rows: Vec<String>,
) -> std::io::Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()
}
