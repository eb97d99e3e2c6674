//! Per-sample certainty scores for pool ranking.
//!
//! Orientation: a LOWER score marks a LESS certain, MORE useful sample.
//! Selection always takes the smallest scores, whatever the strategy.
//!
//! [`negative_energy`] evaluates `-T * log(sum_j exp(l_j / T))`. That
//! quantity is the free energy of the logits and is *high* for inputs the
//! model is unsure about, so [`Strategy::NegEnergy`] ranks the pool by its
//! negation, [`certainty`] = `T * log(sum_j exp(l_j / T))`, which is low for
//! unfamiliar inputs. [`Strategy::Random`] draws uniform scores that ignore
//! the model, so both strategies share the same selection path.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapool::{SampleId, SampleSet, SampleStore};
use crate::error::{Error, Result};
use crate::model::{self, ModelState};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertaintyScore {
    pub sample_id: SampleId,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    NegEnergy,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub temperature: f64,
    pub strategy: Strategy,
    /// Only used by [`Strategy::Random`].
    pub seed: u64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            temperature: 1.0,
            strategy: Strategy::NegEnergy,
            seed: 0,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config(
                "scoring.temperature",
                "must be finite and > 0",
            ));
        }
        Ok(())
    }
}

/// `-T * log(sum_j exp(l_j / T))`, evaluated with the max-shift trick.
pub fn negative_energy(logits: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidInput(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::InvalidInput("no logits".into()));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!("logits {logits:?}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    Ok(-temperature * model::log_sum_exp(&scaled))
}

/// Certainty of the model about one input: `T * log(sum_j exp(l_j / T))`,
/// the negation of [`negative_energy`]. Low values mark unfamiliar inputs.
pub fn certainty(logits: &[f64], temperature: f64) -> Result<f64> {
    negative_energy(logits, temperature).map(|e| -e)
}

/// Scores every pool sample, in pool order.
pub fn score_pool(
    model: &ModelState,
    store: &SampleStore,
    pool: &SampleSet,
    cfg: &ScoringConfig,
) -> Result<Vec<CertaintyScore>> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidInput("pool is empty".into()));
    }
    match cfg.strategy {
        Strategy::NegEnergy => pool
            .ids()
            .iter()
            .map(|&id| {
                let x = model::features_f64(store.resolve(id)?);
                let logits = model::forward(model, &x)?;
                Ok(CertaintyScore {
                    sample_id: id,
                    value: certainty(logits.values(), cfg.temperature)?,
                })
            })
            .collect(),
        Strategy::Random => {
            let mut draws = rng::stream(cfg.seed, "random-scores");
            Ok(pool
                .ids()
                .iter()
                .map(|&id| CertaintyScore {
                    sample_id: id,
                    value: draws.random::<f64>(),
                })
                .collect())
        }
    }
}

/// Writes `sample_id,source,label,score` rows.
pub fn write_score_dump(
    scores: &[CertaintyScore],
    store: &SampleStore,
    out: &mut impl Write,
) -> Result<()> {
    let io = |e| Error::io("score dump", e);
    writeln!(out, "sample_id,source,label,score").map_err(io)?;
    for s in scores {
        let sample = store.resolve(s.sample_id)?;
        writeln!(
            out,
            "{},{},{},{:.17e}",
            s.sample_id, sample.source, sample.label, s.value
        )
        .map_err(io)?;
    }
    Ok(())
}
