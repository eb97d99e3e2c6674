//! Config file and subcommand bodies behind the `activepool` binary.
//!
//! The config is TOML with one table per component; every key is optional
//! and defaults to the reference benchmark:
//!
//! ```toml
//! synth.seed = 42
//! synth.samples.pool = 500
//! run.strategy = "neg-energy"   # base | neg-energy | random
//! run.budget = 50
//! run.iterations = 6
//! scoring.temperature = 1.0
//! scratch.epochs = 50
//! finetune.epochs = 3
//! ```
//!
//! Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datapool::{self, Dataset, SampleSet, Split, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, EerResult};
use crate::model::{self, TrainConfig};
use crate::run_loop::{self, RunConfig, RunOutcome, RunStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub strategy: RunStrategy,
    pub budget: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        let d = RunConfig::default();
        RunSection {
            strategy: d.strategy,
            budget: d.budget,
            iterations: d.iterations,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringSection {
    pub temperature: f64,
}

impl Default for ScoringSection {
    fn default() -> Self {
        ScoringSection { temperature: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub synth: SynthConfig,
    pub run: RunSection,
    pub scoring: ScoringSection,
    pub scratch: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            synth: SynthConfig::default(),
            run: RunSection::default(),
            scoring: ScoringSection::default(),
            scratch: TrainConfig::default(),
            finetune: TrainConfig::finetune_default(),
        }
    }
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = e
                .span()
                .and_then(|span| text.get(span))
                .map(|s| s.trim().to_string())
                .unwrap_or_else(|| "config".into());
            Error::config(key, msg)
        })?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(CliConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                CliConfig::parse(&text)
            }
        }
    }

    pub fn run_config(&self, output_dir: PathBuf) -> RunConfig {
        RunConfig {
            strategy: self.run.strategy,
            budget: self.run.budget,
            iterations: self.run.iterations,
            seed: self.run.seed,
            temperature: self.scoring.temperature,
            scratch: self.scratch.clone(),
            finetune: self.finetune.clone(),
            output_dir,
        }
    }
}

/// Generates the synthetic benchmark and writes its manifest to `out`.
pub fn cmd_synth(cfg: &CliConfig, out: &Path) -> Result<Dataset> {
    let data = datapool::synth_generate(&cfg.synth)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    datapool::emit_manifest(&data, out)?;
    log::info!("wrote {} samples to {}", data.store.len(), out.display());
    Ok(data)
}

/// Runs the selection loop on the samples in `manifest`.
pub fn cmd_run(cfg: &CliConfig, manifest: &Path, out: &Path) -> Result<RunOutcome> {
    let run_cfg = cfg.run_config(out.to_path_buf());
    run_cfg.validate()?;
    let data = datapool::ingest_manifest(manifest)?;
    run_loop::run(&data, &run_cfg)
}

pub fn cmd_resume(dir: &Path) -> Result<RunOutcome> {
    run_loop::resume(dir)
}

/// Which sources of a split to evaluate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    All,
    /// Sources that also occur in the SEED split.
    Seen,
    /// Sources absent from the SEED split.
    Unseen,
}

impl std::str::FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(Subset::All),
            "seen" => Ok(Subset::Seen),
            "unseen" => Ok(Subset::Unseen),
            other => Err(format!(
                "unknown subset `{other}` (expected all, seen or unseen)"
            )),
        }
    }
}

/// Samples of `split` restricted to `subset`.
pub fn eval_set(data: &Dataset, split: Split, subset: Subset) -> SampleSet {
    let seen = data.seed_sources();
    data.splits
        .get(split)
        .filter(&data.store, |s| match subset {
            Subset::All => true,
            Subset::Seen => seen.contains(&s.source),
            Subset::Unseen => !seen.contains(&s.source),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub subset: Subset,
    pub result: EerResult,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let threshold = if self.result.threshold.is_finite() {
            serde_json::json!(self.result.threshold)
        } else {
            serde_json::json!(self.result.threshold.to_string())
        };
        let value = serde_json::json!({
            "split": self.split.as_str(),
            "subset": self.subset,
            "eer": self.result.eer,
            "eer_pct": format!("{:.2}", 100.0 * self.result.eer),
            "threshold": threshold,
            "far": self.result.far,
            "frr": self.result.frr,
            "n_real": self.result.n_real,
            "n_fake": self.result.n_fake,
        });
        let mut text = serde_json::to_string_pretty(&value).expect("report serializes");
        text.push('\n');
        text
    }
}

/// Scores `split` of `manifest` with the checkpoint and writes the EER
/// report to `out`.
pub fn cmd_eval(
    checkpoint: &Path,
    manifest: &Path,
    split: Split,
    subset: Subset,
    out: &Path,
) -> Result<EvalReport> {
    let model = model::load_checkpoint(checkpoint)?;
    let data = datapool::ingest_manifest(manifest)?;
    if model.input_dim() != data.store.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: data.store.dim(),
        });
    }
    let set = eval_set(&data, split, subset);
    let result = metrics::evaluate_eer(&model, &data.store, &set)?;
    let report = EvalReport {
        split,
        subset,
        result,
    };
    fs::write(out, report.to_json()).map_err(|e| Error::io(out, e))?;
    Ok(report)
}
