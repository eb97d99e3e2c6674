//! Equal error rate and selection composition.
//!
//! Scores are oriented so that higher means "more likely FAKE" and a sample
//! is classified FAKE iff `score >= threshold`. A false acceptance is a fake
//! scored below the threshold, a false rejection a real scored at or above
//! it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datapool::{Label, SampleSet, SampleStore};
use crate::error::{Error, Result};
use crate::model::{self, ModelState};
use crate::selection::SelectionResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub n_real: usize,
    pub n_fake: usize,
}

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidInput(format!("no {what} scores")));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{what} score {bad}")));
    }
    Ok(())
}

/// EER over the discrete threshold set `{-inf, +inf}` plus the midpoints
/// between adjacent distinct scores.
///
/// The chosen threshold minimizes `|FAR - FRR|`; ties go to the smaller
/// `FAR + FRR`, then to the smaller threshold. The reported rate is
/// `(FAR + FRR) / 2` at that threshold.
pub fn compute_eer(real_scores: &[f64], fake_scores: &[f64]) -> Result<EerResult> {
    check_scores(real_scores, "real")?;
    check_scores(fake_scores, "fake")?;
    let mut real = real_scores.to_vec();
    let mut fake = fake_scores.to_vec();
    real.sort_by(f64::total_cmp);
    fake.sort_by(f64::total_cmp);
    let (nr, nf) = (real.len() as u128, fake.len() as u128);

    // Exact comparison on the common denominator nr * nf:
    // FAR = below / nf, FRR = above / nr.
    let key = |fakes_below: usize, reals_above: usize| {
        let far = fakes_below as u128 * nr;
        let frr = reals_above as u128 * nf;
        (far.abs_diff(frr), far + frr)
    };

    // theta = -inf: nothing below, every real above
    let (mut fi, mut ri) = (0usize, 0usize);
    let mut best = (key(0, real.len()), f64::NEG_INFINITY, 0usize, real.len());
    while fi < fake.len() || ri < real.len() {
        let v = match (fake.get(fi), real.get(ri)) {
            (Some(&f), Some(&r)) => f.min(r),
            (Some(&f), None) => f,
            (None, Some(&r)) => r,
            (None, None) => unreachable!(),
        };
        while fi < fake.len() && fake[fi] == v {
            fi += 1;
        }
        while ri < real.len() && real[ri] == v {
            ri += 1;
        }
        let next = match (fake.get(fi), real.get(ri)) {
            (Some(&f), Some(&r)) => Some(f.min(r)),
            (Some(&f), None) => Some(f),
            (None, Some(&r)) => Some(r),
            (None, None) => None,
        };
        let theta = next.map_or(f64::INFINITY, |n| v + (n - v) / 2.0);
        let reals_above = real.len() - ri;
        let k = key(fi, reals_above);
        if k < best.0 {
            best = (k, theta, fi, reals_above);
        }
    }

    let (_, threshold, fakes_below, reals_above) = best;
    let far = fakes_below as f64 / fake.len() as f64;
    let frr = reals_above as f64 / real.len() as f64;
    Ok(EerResult {
        eer: (far + frr) / 2.0,
        threshold,
        far,
        frr,
        n_real: real.len(),
        n_fake: fake.len(),
    })
}

/// Detection scores of `set`, grouped as `(real, fake)`.
pub fn detection_scores(
    model: &ModelState,
    store: &SampleStore,
    set: &SampleSet,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut real = Vec::new();
    let mut fake = Vec::new();
    for sample in store.resolve_all(set)? {
        let score = model::detection_score(model, &model::features_f64(sample))?;
        match sample.label {
            Label::Real => real.push(score),
            Label::Fake => fake.push(score),
        }
    }
    Ok((real, fake))
}

/// EER of `model` on `set`.
pub fn evaluate_eer(model: &ModelState, store: &SampleStore, set: &SampleSet) -> Result<EerResult> {
    let (real, fake) = detection_scores(model, store, set)?;
    compute_eer(&real, &fake)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceShare {
    pub count: usize,
    /// Percentage of the selection, in hundredths of a percent.
    pub basis_points: u32,
}

impl SourceShare {
    pub fn percent(&self) -> f64 {
        self.basis_points as f64 / 100.0
    }
}

/// Per-source counts and percentages (2 decimals) of a selection.
pub fn composition(
    sel: &SelectionResult,
    store: &SampleStore,
) -> Result<BTreeMap<String, SourceShare>> {
    Ok(apportion(&sel.as_set().source_counts(store)?))
}

/// Turns per-source counts into percentages with 2 decimals.
///
/// Percentages are apportioned by largest remainder so the rendered values
/// always add up to exactly 100.00; remainder ties go to the source that
/// sorts first.
pub fn apportion(counts: &BTreeMap<String, usize>) -> BTreeMap<String, SourceShare> {
    let total: u64 = counts.values().map(|&c| c as u64).sum();
    if total == 0 {
        return BTreeMap::new();
    }
    let mut shares: Vec<(&String, usize, u64, u64)> = counts
        .iter()
        .map(|(source, &count)| {
            let scaled = 10_000 * count as u64;
            (source, count, scaled / total, scaled % total)
        })
        .collect();
    let assigned: u64 = shares.iter().map(|s| s.2).sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].3.cmp(&shares[a].3).then(a.cmp(&b)));
    for &i in order.iter().take((10_000 - assigned) as usize) {
        shares[i].2 += 1;
    }
    shares
        .into_iter()
        .map(|(source, count, bp, _)| {
            (
                source.clone(),
                SourceShare {
                    count,
                    basis_points: bp as u32,
                },
            )
        })
        .collect()
}
