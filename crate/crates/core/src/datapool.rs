//! Samples, role-tagged id sets, manifests and the synthetic benchmark.
//!
//! A [`SampleStore`] owns every [`Sample`] of a run and is never mutated
//! once built. Everything downstream (pool, training set, selections)
//! refers to samples through [`SampleSet`]s of ids.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type SampleId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Output index of this class in the detector's logits.
    pub fn class_index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "REAL",
            Label::Fake => "FAKE",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "REAL" => Ok(Label::Real),
            "FAKE" => Ok(Label::Fake),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Seed,
    Pool,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Seed, Split::Pool, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Seed => "SEED",
            Split::Pool => "POOL",
            Split::Val => "VAL",
            Split::Test => "TEST",
        }
    }

    pub fn role(self) -> Role {
        match self {
            Split::Seed => Role::Seed,
            Split::Pool => Role::Pool,
            Split::Val => Role::Val,
            Split::Test => Role::Test,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "SEED" => Ok(Split::Seed),
            "POOL" => Ok(Split::Pool),
            "VAL" => Ok(Split::Val),
            "TEST" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// The part a [`SampleSet`] plays in the selection loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Seed,
    Pool,
    Train,
    Val,
    Test,
    Selected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: SampleId,
    pub features: Vec<f32>,
    pub label: Label,
    pub source: String,
    pub split: Split,
}

/// Immutable owner of all samples of a run, indexed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    dim: usize,
    samples: Vec<Sample>,
    index: HashMap<SampleId, usize>,
}

impl SampleStore {
    /// Builds a store, checking that every sample has dimension `dim`,
    /// finite features and a unique id.
    pub fn new(dim: usize, samples: Vec<Sample>) -> Result<Self> {
        let mut index = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of sample {}", s.id)));
            }
            if index.insert(s.id, pos).is_some() {
                return Err(Error::DuplicateId(s.id));
            }
        }
        Ok(SampleStore {
            dim,
            samples,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, id: SampleId) -> Option<&Sample> {
        self.index.get(&id).map(|&pos| &self.samples[pos])
    }

    pub fn resolve(&self, id: SampleId) -> Result<&Sample> {
        self.get(id).ok_or(Error::UnknownId(id))
    }

    /// Resolves every id of `set`, in set order.
    pub fn resolve_all(&self, set: &SampleSet) -> Result<Vec<&Sample>> {
        set.ids().iter().map(|&id| self.resolve(id)).collect()
    }
}

/// Ordered, duplicate-free list of sample ids with a role tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    role: Role,
    ids: Vec<SampleId>,
}

impl SampleSet {
    /// Creates a set after checking for duplicates and that every id
    /// resolves in `store`.
    pub fn new(role: Role, ids: Vec<SampleId>, store: &SampleStore) -> Result<Self> {
        let mut seen = HashSet::with_capacity(ids.len());
        for &id in &ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
            store.resolve(id)?;
        }
        Ok(SampleSet { role, ids })
    }

    pub fn empty(role: Role) -> Self {
        SampleSet {
            role,
            ids: Vec::new(),
        }
    }

    /// Callers guarantee uniqueness and resolvability.
    pub(crate) fn from_trusted(role: Role, ids: Vec<SampleId>) -> Self {
        SampleSet { role, ids }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.ids.contains(&id)
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Subset of this set whose samples satisfy `keep`, order preserved.
    pub fn filter(&self, store: &SampleStore, mut keep: impl FnMut(&Sample) -> bool) -> SampleSet {
        let ids = self
            .ids
            .iter()
            .copied()
            .filter(|&id| store.get(id).is_some_and(&mut keep))
            .collect();
        SampleSet {
            role: self.role,
            ids,
        }
    }

    /// Number of members per source tag.
    pub fn source_counts(&self, store: &SampleStore) -> Result<BTreeMap<String, usize>> {
        let mut counts = BTreeMap::new();
        for &id in &self.ids {
            *counts.entry(store.resolve(id)?.source.clone()).or_insert(0) += 1;
        }
        Ok(counts)
    }
}

/// The four split sets of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub seed: SampleSet,
    pub pool: SampleSet,
    pub val: SampleSet,
    pub test: SampleSet,
}

impl Splits {
    fn from_store(store: &SampleStore) -> Splits {
        let mut by_split: [Vec<SampleId>; 4] = Default::default();
        for s in store.samples() {
            by_split[s.split as usize].push(s.id);
        }
        let [seed, pool, val, test] = by_split;
        Splits {
            seed: SampleSet::from_trusted(Role::Seed, seed),
            pool: SampleSet::from_trusted(Role::Pool, pool),
            val: SampleSet::from_trusted(Role::Val, val),
            test: SampleSet::from_trusted(Role::Test, test),
        }
    }

    pub fn get(&self, split: Split) -> &SampleSet {
        match split {
            Split::Seed => &self.seed,
            Split::Pool => &self.pool,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// A sample store together with its split sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub store: SampleStore,
    pub splits: Splits,
}

impl Dataset {
    pub fn from_store(store: SampleStore) -> Dataset {
        let splits = Splits::from_store(&store);
        Dataset { store, splits }
    }

    /// Source tags that occur in the SEED split.
    pub fn seed_sources(&self) -> HashSet<String> {
        self.splits
            .seed
            .ids()
            .iter()
            .filter_map(|&id| self.store.get(id))
            .map(|s| s.source.clone())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Manifest CSV

/// Writes `id,source,label,split,f0,...` with 9 significant digits per
/// feature, which reproduces every `f32` exactly on re-ingestion.
pub fn write_manifest(dataset: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    let dim = dataset.store.dim();
    write!(out, "id,source,label,split")?;
    for j in 0..dim {
        write!(out, ",f{j}")?;
    }
    writeln!(out)?;
    for s in dataset.store.samples() {
        write!(out, "{},{},{},{}", s.id, s.source, s.label, s.split)?;
        for v in &s.features {
            write!(out, ",{v:.8e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn emit_manifest(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_manifest(dataset, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn ingest_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// Parses manifest text; `origin` is only used in error messages.
pub fn parse_manifest(text: &str, origin: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header row".into()))?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if cols.len() < 5 || cols[..4] != ["id", "source", "label", "split"] {
        return Err(parse_err(
            1,
            "header must be `id,source,label,split,f0,...`".into(),
        ));
    }
    for (j, c) in cols[4..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(parse_err(1, format!("expected column `f{j}`, found `{c}`")));
        }
    }
    let dim = cols.len() - 4;

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, found {}", dim + 4, fields.len()),
            ));
        }
        if fields.len() != dim + 4 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: fields.len() - 4,
            });
        }
        let id: SampleId = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad id `{}`", fields[0])))?;
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        let source = fields[1].to_string();
        if source.is_empty() {
            return Err(parse_err(line_no, "empty source".into()));
        }
        let label = fields[2].parse().map_err(|m| parse_err(line_no, m))?;
        let split = fields[3].parse().map_err(|m| parse_err(line_no, m))?;
        let features = fields[4..]
            .iter()
            .map(|f| {
                f.parse::<f32>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line_no, format!("bad feature `{f}`")))
            })
            .collect::<Result<Vec<f32>>>()?;
        samples.push(Sample {
            id,
            features,
            label,
            source,
            split,
        });
    }
    Ok(Dataset::from_store(SampleStore::new(dim, samples)?))
}

// ---------------------------------------------------------------------------
// Equalization

/// Keeps at most `cap` samples per source tag (lowest ids first), preserving
/// the relative order of the survivors.
pub fn equalize_pool(pool: &SampleSet, store: &SampleStore, cap: usize) -> Result<SampleSet> {
    if cap == 0 {
        return Err(Error::config("cap", "must be at least 1"));
    }
    let mut by_source: HashMap<&str, Vec<SampleId>> = HashMap::new();
    for &id in pool.ids() {
        by_source
            .entry(store.resolve(id)?.source.as_str())
            .or_default()
            .push(id);
    }
    let mut keep = HashSet::new();
    for ids in by_source.values_mut() {
        ids.sort_unstable();
        keep.extend(ids.iter().take(cap).copied());
    }
    let ids = pool
        .ids()
        .iter()
        .copied()
        .filter(|id| keep.contains(id))
        .collect();
    Ok(SampleSet::from_trusted(pool.role(), ids))
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

/// Per-method sample counts for each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitCounts {
    pub seed: usize,
    pub pool: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            seed: 500,
            pool: 500,
            val: 100,
            test: 100,
        }
    }
}

/// Gaussian-cluster stand-in for a seed corpus plus a pool of newer methods.
///
/// Every method is one isotropic Gaussian in `d` dimensions. Seed ("known")
/// methods fill SEED, VAL and TEST and, when `known_in_pool` is set, also
/// contribute `samples.pool` samples each to POOL. Pool-only ("novel")
/// methods fill POOL, VAL and TEST.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub d: usize,
    pub n_real_methods_seed: usize,
    pub n_fake_methods_seed: usize,
    pub n_real_methods_pool: usize,
    pub n_fake_methods_pool: usize,
    pub samples: SplitCounts,
    pub known_in_pool: bool,
    pub cluster_mean_scale: f64,
    pub cluster_stddev: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 16,
            n_real_methods_seed: 4,
            n_fake_methods_seed: 4,
            n_real_methods_pool: 3,
            n_fake_methods_pool: 3,
            samples: SplitCounts::default(),
            known_in_pool: true,
            cluster_mean_scale: 3.0,
            cluster_stddev: 1.0,
            seed: 42,
        }
    }
}

/// One Gaussian cluster of the benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub label: Label,
    pub novel: bool,
    pub mean: Vec<f64>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("synth.d", "must be at least 1"));
        }
        if self.n_real_methods_seed == 0 {
            return Err(Error::config(
                "synth.n_real_methods_seed",
                "must be at least 1",
            ));
        }
        if self.n_fake_methods_seed == 0 {
            return Err(Error::config(
                "synth.n_fake_methods_seed",
                "must be at least 1",
            ));
        }
        let counts = [
            ("synth.samples.seed", self.samples.seed),
            ("synth.samples.val", self.samples.val),
            ("synth.samples.test", self.samples.test),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        let has_pool_methods = self.n_real_methods_pool + self.n_fake_methods_pool > 0;
        if (has_pool_methods || self.known_in_pool) && self.samples.pool == 0 {
            return Err(Error::config("synth.samples.pool", "must be at least 1"));
        }
        if !(self.cluster_mean_scale.is_finite() && self.cluster_mean_scale > 0.0) {
            return Err(Error::config(
                "synth.cluster_mean_scale",
                "must be finite and > 0",
            ));
        }
        if !(self.cluster_stddev.is_finite() && self.cluster_stddev > 0.0) {
            return Err(Error::config(
                "synth.cluster_stddev",
                "must be finite and > 0",
            ));
        }
        Ok(())
    }

    /// Total number of samples [`synth_generate`] produces per split.
    pub fn expected_counts(&self) -> SplitCounts {
        let known = self.n_real_methods_seed + self.n_fake_methods_seed;
        let novel = self.n_real_methods_pool + self.n_fake_methods_pool;
        let pool_methods = novel + if self.known_in_pool { known } else { 0 };
        SplitCounts {
            seed: known * self.samples.seed,
            pool: pool_methods * self.samples.pool,
            val: (known + novel) * self.samples.val,
            test: (known + novel) * self.samples.test,
        }
    }

    /// The benchmark's clusters in generation order: known real, known fake,
    /// novel real, novel fake.
    pub fn methods(&self) -> Vec<Method> {
        let groups = [
            ("known_real", Label::Real, false, self.n_real_methods_seed),
            ("known_fake", Label::Fake, false, self.n_fake_methods_seed),
            ("novel_real", Label::Real, true, self.n_real_methods_pool),
            ("novel_fake", Label::Fake, true, self.n_fake_methods_pool),
        ];
        let mut means = rng::stream(self.seed, "synth/means");
        let scale = self.cluster_mean_scale;
        let mut out = Vec::new();
        for (prefix, label, novel, count) in groups {
            for i in 0..count {
                let mean = (0..self.d)
                    .map(|_| means.random_range(-scale..=scale))
                    .collect();
                out.push(Method {
                    name: format!("{prefix}_{i}"),
                    label,
                    novel,
                    mean,
                });
            }
        }
        out
    }
}

/// Generates the benchmark described by `cfg`. Ids are assigned
/// consecutively from 0, split by split (SEED, POOL, VAL, TEST) and method
/// by method within a split.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let methods = cfg.methods();
    let mut per_method: Vec<[Vec<Vec<f32>>; 4]> = Vec::with_capacity(methods.len());
    for m in &methods {
        let mut draws = rng::stream(cfg.seed, &format!("synth/samples/{}", m.name));
        let mut block: [Vec<Vec<f32>>; 4] = Default::default();
        for split in Split::ALL {
            let n = match split {
                Split::Seed if m.novel => 0,
                Split::Seed => cfg.samples.seed,
                Split::Pool if !m.novel && !cfg.known_in_pool => 0,
                Split::Pool => cfg.samples.pool,
                Split::Val => cfg.samples.val,
                Split::Test => cfg.samples.test,
            };
            block[split as usize] = (0..n)
                .map(|_| {
                    m.mean
                        .iter()
                        .map(|&mu| {
                            let z: f64 = draws.sample(StandardNormal);
                            (mu + cfg.cluster_stddev * z) as f32
                        })
                        .collect()
                })
                .collect();
        }
        per_method.push(block);
    }

    let mut samples = Vec::new();
    for split in Split::ALL {
        for (m, block) in methods.iter().zip(per_method.iter_mut()) {
            for features in block[split as usize].drain(..) {
                samples.push(Sample {
                    id: samples.len() as SampleId,
                    features,
                    label: m.label,
                    source: m.name.clone(),
                    split,
                });
            }
        }
    }
    Ok(Dataset::from_store(SampleStore::new(cfg.d, samples)?))
}
