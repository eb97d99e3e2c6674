//! Runs both selection strategies over several master seeds and prints the
//! per-iteration test EER of each.
//!
//! ```text
//! cargo run --release --example sweep -- [n_seeds] [config.toml]
//! ```
//!
//! Master seeds start at `FIRST_SEED` (default 0). With `VARY_BENCHMARK`
//! set, the benchmark is regenerated with each master seed as well.

use std::path::PathBuf;

use activepool::cli::{eval_set, CliConfig, Subset};
use activepool::datapool::{synth_generate, Split};
use activepool::metrics::evaluate_eer;
use activepool::run_loop::{run, RunStrategy};

fn main() -> activepool::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n_seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let first: u64 = std::env::var("FIRST_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let cfg = CliConfig::load(args.get(2).map(PathBuf::from).as_deref())?;
    let dir = std::env::temp_dir().join(format!("activepool-sweep-{}", std::process::id()));

    let mut finals = [0.0f64; 2];
    for seed in first..first + n_seeds {
        let mut cfg = cfg.clone();
        if std::env::var_os("VARY_BENCHMARK").is_some() {
            cfg.synth.seed = seed;
        }
        cfg.run.seed = seed;
        let data = synth_generate(&cfg.synth)?;
        for (i, strategy) in [RunStrategy::NegEnergy, RunStrategy::Random]
            .into_iter()
            .enumerate()
        {
            let mut run_cfg = cfg.run_config(dir.join(format!("{seed}-{i}")));
            run_cfg.strategy = strategy;
            let out = run(&data, &run_cfg)?;
            let eers: Vec<String> = out
                .records
                .iter()
                .map(|r| format!("{:5.2}", 100.0 * r.eer_test))
                .collect();
            let novel: usize = out
                .records
                .iter()
                .skip(1)
                .take(1)
                .flat_map(|r| r.per_source_counts.iter())
                .filter(|(s, _)| s.starts_with("novel"))
                .map(|(_, c)| c)
                .sum();
            if i == 0 {
                let base =
                    activepool::model::load_checkpoint(&dir.join(format!("{seed}-0/ckpt_iter0")))?;
                let seen = evaluate_eer(
                    &base,
                    &data.store,
                    &eval_set(&data, Split::Test, Subset::Seen),
                )?;
                println!("seed {seed}: base seen-only EER {:.2}", 100.0 * seen.eer);
            }
            println!("  {:<10?} novel@1 {novel:>3}  {}", strategy, eers.join(" "));
            finals[i] += out.records.last().unwrap().eer_test;
        }
    }
    println!(
        "mean final EER: neg-energy {:.2}  random {:.2}",
        100.0 * finals[0] / n_seeds as f64,
        100.0 * finals[1] / n_seeds as f64
    );
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
