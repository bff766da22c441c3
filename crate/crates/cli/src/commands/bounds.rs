//! `fairbound bounds`: feasible-set fairness bounds from two marginal files
//! and a classifier file.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use fairbound_core::fairness::{
    demographic_disparity, disparate_impact, propagate_rates, summarize, FairnessSummary,
    Metric,
};
use fairbound_core::feasible::{enumerate, FeasibleSpec, MarginalMode};
use fairbound_core::prob::{AxisPair, Marginal2};

use crate::error::CliError;
use crate::io::{fmt_float, read_classifier_csv, read_marginal_csv};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Auto,
    Consistent,
    Inconsistent,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundsArgs {
    /// Internal marginal over (internal, common): CSV `var_a,var_b,prob`.
    #[arg(long)]
    pub internal: PathBuf,
    /// External marginal over (common, external): CSV `var_a,var_b,prob`.
    #[arg(long)]
    pub external: PathBuf,
    /// Classifier table: CSV `s,o,p_yes`.
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    pub mode: ModeArg,
    /// Grid points per free parameter.
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
    /// Disparate Impact values above this cap are filtered.
    #[arg(long, default_value_t = 5.0)]
    pub di_cap: f64,
    /// Swap which protected group is treated as unprivileged.
    #[arg(long)]
    pub flip_groups: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct MetricJson {
    metric: String,
    min: f64,
    mean: f64,
    max: f64,
    n_feasible: usize,
    n_filtered: usize,
}

impl MetricJson {
    fn from_summary(s: &FairnessSummary) -> Self {
        Self {
            metric: s.metric.to_string(),
            min: s.min,
            mean: s.mean,
            max: s.max,
            n_feasible: s.values.len(),
            n_filtered: s.n_filtered,
        }
    }
}

#[derive(Serialize)]
struct BoundsJson {
    mode: MarginalMode,
    n_grid: usize,
    n_feasible: usize,
    n_dropped: usize,
    di: MetricJson,
    dd: MetricJson,
}

pub fn run(args: &BoundsArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out_dir)?;
    let internal = read_marginal_csv(&args.internal, AxisPair::InternalCommon)?;
    let mut external = read_marginal_csv(&args.external, AxisPair::CommonExternal)?;
    let classifier = read_classifier_csv(&args.classifier)?;

    if args.flip_groups {
        // Relabel the protected variable by swapping its columns; every
        // downstream quantity then uses the flipped group convention.
        let q = external.entries();
        external = Marginal2::new([q[1], q[0], q[3], q[2]], AxisPair::CommonExternal)?;
    }

    let spec = match args.mode {
        ModeArg::Auto => FeasibleSpec::auto(internal, external, args.resolution)?,
        ModeArg::Consistent => {
            FeasibleSpec::new(internal, external, MarginalMode::Consistent, args.resolution)?
        }
        ModeArg::Inconsistent => {
            FeasibleSpec::new(internal, external, MarginalMode::Inconsistent, args.resolution)?
        }
    };
    let fs = enumerate(&spec)?;
    if fs.is_empty() {
        return Err(CliError::Infeasible(format!(
            "every grid point was infeasible ({} candidates dropped)",
            fs.n_dropped
        )));
    }
    let di = summarize(&classifier, &fs, Metric::DisparateImpact, None, args.di_cap)?;
    let dd = summarize(&classifier, &fs, Metric::DemographicDisparity, None, args.di_cap)?;

    let summary = BoundsJson {
        mode: spec.mode(),
        n_grid: fs.n_grid,
        n_feasible: fs.len(),
        n_dropped: fs.n_dropped,
        di: MetricJson::from_summary(&di),
        dd: MetricJson::from_summary(&dd),
    };
    std::fs::write(
        args.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;

    let rates = classifier.binary_pair_rates()?;
    let mut writer = csv::Writer::from_path(args.out_dir.join("feasible.csv"))?;
    writer.write_record(["c", "k", "di", "dd"])?;
    for (joint, (c, k)) in fs.joints.iter().zip(&fs.params) {
        let g = propagate_rates(rates, joint)?;
        writer.write_record([
            fmt_float(*c),
            fmt_float(*k),
            fmt_float(disparate_impact(&g)),
            fmt_float(demographic_disparity(&g)),
        ])?;
    }
    writer.flush().map_err(|e| CliError::Internal(e.to_string()))?;

    ManifestBuilder::new("bounds", 0, serde_json::to_value(args)?)
        .input(&args.internal)
        .input(&args.external)
        .input(&args.classifier)
        .write(&args.out_dir)?;

    println!(
        "mode {:?}: {} feasible joints ({} dropped); DI [{:.6}, {:.6}] mean {:.6} ({} filtered); DD [{:.6}, {:.6}] mean {:.6}",
        spec.mode(),
        fs.len(),
        fs.n_dropped,
        di.min,
        di.max,
        di.mean,
        di.n_filtered,
        dd.min,
        dd.max,
        dd.mean,
    );
    Ok(())
}
