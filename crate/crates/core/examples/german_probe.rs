// probe: criterion 9 containment on the three feasible reductions
use fairbound_core::pipeline::{
    feasible_real_experiment, ingest, DatasetRecipe, SplitFile, TaskSpec,
};
use fairbound_core::prob::RngSeed;
use fairbound_core::structural::EmConfig;

fn main() {
    let dir = std::path::PathBuf::from("/tmp/standins");
    for name in ["adult", "compas", "german"] {
        let recipe =
            DatasetRecipe::from_path(std::path::Path::new(&format!("recipes/{name}/recipe.toml")))
                .unwrap();
        let splits =
            SplitFile::from_path(std::path::Path::new(&format!("recipes/{name}/splits.toml")))
                .unwrap();
        let report = ingest(&recipe, Some(&dir.join(format!("{name}.csv")))).unwrap();
        let task = TaskSpec::from_recipe(&recipe);
        let fspec = splits.feasible.unwrap();
        let cfg = EmConfig::new(RngSeed(777));
        let exp = feasible_real_experiment(&report.dataset, &task, &fspec, 100, 5.0, Some(&cfg))
            .unwrap();
        println!(
            "== {name}: mode {:?} grid {} kept {} dropped {}",
            exp.mode, exp.n_grid, exp.n_feasible, exp.n_dropped
        );
        println!(
            "   DD true {:.4} env [{:.4}, {:.4}] contains {:?}",
            exp.dd.true_value.unwrap(), exp.dd.min, exp.dd.max, exp.dd.contains_truth
        );
        println!(
            "   DI true {:.4} env [{:.4}, {:.4}] contains {:?} (filtered {}) eeoc_breach {}",
            exp.di.true_value.unwrap(), exp.di.min, exp.di.max, exp.di.contains_truth,
            exp.di.n_filtered, exp.eeoc_breach
        );
        let l = exp.latent.unwrap();
        let m = exp.marginal.unwrap();
        for (tag, p) in [("latent", l), ("marginal", m)] {
            let dd_in = exp.dd.min <= p.dd && p.dd <= exp.dd.max;
            let di_in = exp.di.min <= p.di && p.di <= exp.di.max;
            println!("   {tag}: DI {:.4} in-env {di_in}; DD {:.4} in-env {dd_in}", p.di, p.dd);
        }
    }
}
