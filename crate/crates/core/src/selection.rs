//! Lowest-score selection and the pool/train set moves.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use crate::datapool::{Role, SampleId, SampleSet, SampleStore};
use crate::error::{Error, Result};
use crate::scoring::CertaintyScore;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub iteration: usize,
    /// Selected ids in ascending `(score, id)` order.
    pub selected_ids: Vec<SampleId>,
    pub per_source_counts: BTreeMap<String, usize>,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.selected_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_ids.is_empty()
    }

    pub fn as_set(&self) -> SampleSet {
        SampleSet::from_trusted(Role::Selected, self.selected_ids.clone())
    }

    /// Fills `per_source_counts` from `store`.
    pub fn with_sources(mut self, store: &SampleStore) -> Result<Self> {
        self.per_source_counts = self.as_set().source_counts(store)?;
        Ok(self)
    }
}

/// Ids of the `min(budget, n)` smallest scores; ties go to the lower id.
pub fn select_lowest(scores: &[CertaintyScore], budget: usize) -> Vec<SampleId> {
    let mut ranked: Vec<&CertaintyScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.sample_id.cmp(&b.sample_id))
    });
    ranked
        .into_iter()
        .take(budget)
        .map(|s| s.sample_id)
        .collect()
}

/// Moves the selected ids from `pool` to the end of `train`. Survivor order
/// is preserved in both sets. Inputs are left untouched on error.
pub fn apply_selection(
    pool: &SampleSet,
    train: &SampleSet,
    selected: &[SampleId],
) -> Result<(SampleSet, SampleSet)> {
    let chosen: HashSet<SampleId> = selected.iter().copied().collect();
    if chosen.len() != selected.len() {
        let dup = selected
            .iter()
            .find(|id| selected.iter().filter(|x| x == id).count() > 1)
            .unwrap();
        return Err(Error::DuplicateId(*dup));
    }
    let pool_ids: HashSet<SampleId> = pool.ids().iter().copied().collect();
    if let Some(&missing) = selected.iter().find(|id| !pool_ids.contains(id)) {
        return Err(Error::InvalidInput(format!(
            "selected id {missing} is not in the pool"
        )));
    }
    let train_ids: HashSet<SampleId> = train.ids().iter().copied().collect();
    if let Some(&dup) = selected.iter().find(|id| train_ids.contains(id)) {
        return Err(Error::InvalidInput(format!(
            "selected id {dup} is already in the training set"
        )));
    }
    let new_pool = pool
        .ids()
        .iter()
        .copied()
        .filter(|id| !chosen.contains(id))
        .collect();
    let mut new_train = train.ids().to_vec();
    new_train.extend_from_slice(selected);
    Ok((
        SampleSet::from_trusted(pool.role(), new_pool),
        SampleSet::from_trusted(train.role(), new_train),
    ))
}

pub fn selection_file_name(iteration: usize) -> String {
    format!("selection_iter{iteration}.txt")
}

/// One id per line.
pub fn write_selection(ids: &[SampleId], path: &Path) -> Result<()> {
    let mut text = String::with_capacity(ids.len() * 6);
    for id in ids {
        text.push_str(&id.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_selection(path: &Path) -> Result<Vec<SampleId>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad id `{l}`"),
            })
        })
        .collect()
}
