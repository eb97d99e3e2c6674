//! The selection loop: train a base model on the seed set, then repeatedly
//! score the pool, move the lowest-scoring samples into the training set
//! and fine-tune on the combined set.
//!
//! Every run persists its full state under `output_dir` after each
//! iteration, so an interrupted run can be resumed and still produce the
//! same artifacts as an uninterrupted one.
//!
//! Run directory layout:
//!
//! | file                   | content                                         |
//! |------------------------|-------------------------------------------------|
//! | `config.snapshot`      | resolved [`RunConfig`] (TOML)                   |
//! | `manifest.csv`         | the input samples                               |
//! | `ckpt_iter{k}`         | model after iteration `k` (0 = base model)      |
//! | `selection_iter{k}.txt`| ids moved into the training set at iteration `k`|
//! | `records.csv`          | one row per [`RunRecord`]                       |
//! | `composition.csv`      | per-source share of each selection              |
//! | `state.json`           | resume point                                    |
//! | `run.log`              | human-readable progress                         |

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datapool::{self, Dataset, Role, SampleId, SampleSet};
use crate::error::{Error, Result};
use crate::metrics::{self, EerResult};
use crate::model::{self, ModelState, TrainConfig};
use crate::rng;
use crate::scoring::{self, CertaintyScore, ScoringConfig, Strategy};
use crate::selection::{self, SelectionResult};

pub const CONFIG_FILE: &str = "config.snapshot";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const COMPOSITION_FILE: &str = "composition.csv";
pub const STATE_FILE: &str = "state.json";
pub const LOG_FILE: &str = "run.log";

pub fn checkpoint_file_name(iteration: usize) -> String {
    format!("ckpt_iter{iteration}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStrategy {
    /// Train the base model only.
    Base,
    NegEnergy,
    Random,
}

impl RunStrategy {
    fn scoring(self) -> Option<Strategy> {
        match self {
            RunStrategy::Base => None,
            RunStrategy::NegEnergy => Some(Strategy::NegEnergy),
            RunStrategy::Random => Some(Strategy::Random),
        }
    }
}

impl std::str::FromStr for RunStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "base" => Ok(RunStrategy::Base),
            "neg-energy" => Ok(RunStrategy::NegEnergy),
            "random" => Ok(RunStrategy::Random),
            other => Err(format!(
                "unknown strategy `{other}` (expected base, neg-energy or random)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub strategy: RunStrategy,
    /// Samples moved from the pool per iteration.
    pub budget: usize,
    /// Number of selection iterations after the base model.
    pub iterations: usize,
    /// Master seed; every random stream of the run derives from it.
    pub seed: u64,
    pub temperature: f64,
    pub scratch: TrainConfig,
    pub finetune: TrainConfig,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: RunStrategy::NegEnergy,
            budget: 50,
            iterations: 6,
            seed: 42,
            temperature: 1.0,
            scratch: TrainConfig::default(),
            finetune: TrainConfig::finetune_default(),
            output_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::config("run.budget", "must be at least 1"));
        }
        if self.iterations == 0 && self.strategy != RunStrategy::Base {
            return Err(Error::config("run.iterations", "must be at least 1"));
        }
        ScoringConfig {
            temperature: self.temperature,
            ..ScoringConfig::default()
        }
        .validate()?;
        self.scratch.validate("scratch")?;
        self.finetune.validate("finetune")
    }

    fn scratch_config(&self) -> TrainConfig {
        TrainConfig {
            seed: rng::derive_seed(self.seed, "scratch"),
            ..self.scratch.clone()
        }
    }

    fn finetune_config(&self, iteration: usize) -> TrainConfig {
        TrainConfig {
            seed: rng::derive_seed(self.seed, &format!("finetune/{iteration}")),
            ..self.finetune.clone()
        }
    }

    fn scoring_config(&self, iteration: usize) -> Option<ScoringConfig> {
        self.strategy.scoring().map(|strategy| ScoringConfig {
            temperature: self.temperature,
            strategy,
            seed: rng::derive_seed(self.seed, &format!("random-scores/{iteration}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iteration: usize,
    pub cumulative_selected: usize,
    pub pool_fraction_used: f64,
    pub eer_val: f64,
    pub eer_test: f64,
    /// Threshold at which the test-set EER was reached.
    pub threshold_at_eer: f64,
    pub per_source_counts: BTreeMap<String, usize>,
}

/// What one iteration saw and did; handed to [`Observer`]s.
#[derive(Debug)]
pub struct IterationTrace<'a> {
    pub iteration: usize,
    pub scores: &'a [CertaintyScore],
    pub selection: &'a SelectionResult,
    pub pool_before: &'a SampleSet,
    pub train_before: &'a SampleSet,
    pub pool_after: &'a SampleSet,
    pub train_after: &'a SampleSet,
    pub record: &'a RunRecord,
}

pub trait Observer {
    fn base_trained(&mut self, _model: &ModelState, _record: &RunRecord) {}
    fn iteration(&mut self, _trace: &IterationTrace<'_>) {}
}

impl Observer for () {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PersistedState {
    completed_iterations: usize,
    initial_pool_size: usize,
    finished: bool,
    truncated: bool,
    pool: Vec<SampleId>,
    train: Vec<SampleId>,
    records: Vec<RunRecord>,
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub model: ModelState,
    /// Set when the pool ran out before the configured iterations.
    pub truncated: bool,
}

/// An in-progress run: the current sets and model.
pub struct Run<'d> {
    cfg: RunConfig,
    data: &'d Dataset,
    pool: SampleSet,
    train: SampleSet,
    model: ModelState,
    records: Vec<RunRecord>,
    initial_pool_size: usize,
    completed: usize,
    truncated: bool,
    finished: bool,
    log: RunLog,
}

struct RunLog {
    path: PathBuf,
    started: Instant,
}

impl RunLog {
    fn line(&self, msg: &str) -> Result<()> {
        log::info!("{msg}");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "[{:>8.2}s] {msg}", self.started.elapsed().as_secs_f64())
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn check_inputs(data: &Dataset) -> Result<()> {
    let splits = &data.splits;
    let mut seen = HashSet::new();
    for set in [&splits.seed, &splits.pool, &splits.val, &splits.test] {
        for &id in set.ids() {
            if !seen.insert(id) {
                return Err(Error::InvalidInput(format!(
                    "sample {id} appears in more than one split"
                )));
            }
        }
    }
    if splits.val.is_empty() || splits.test.is_empty() {
        return Err(Error::InvalidInput(
            "validation and test splits must be non-empty".into(),
        ));
    }
    Ok(())
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Renders `records.csv`; EERs are percentages with 2 decimals.
pub fn render_records(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "iteration,cumulative_selected,pool_fraction_used,eer_val,eer_test,threshold_at_eer\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.2},{:.2},{:.6}",
            r.iteration,
            r.cumulative_selected,
            r.pool_fraction_used,
            100.0 * r.eer_val,
            100.0 * r.eer_test,
            r.threshold_at_eer
        );
    }
    out
}

/// Renders `composition.csv` from per-iteration compositions.
pub fn render_composition(rows: &[(usize, BTreeMap<String, metrics::SourceShare>)]) -> String {
    let mut out = String::from("iteration,source,count,pct\n");
    for (iteration, comp) in rows {
        for (source, share) in comp {
            let _ = writeln!(
                out,
                "{iteration},{source},{},{:.2}",
                share.count,
                share.percent()
            );
        }
    }
    out
}

impl<'d> Run<'d> {
    /// Creates the run directory, trains the base model on the seed set
    /// and records iteration 0.
    pub fn start(data: &'d Dataset, cfg: &RunConfig, observer: &mut dyn Observer) -> Result<Self> {
        cfg.validate()?;
        check_inputs(data)?;
        let dir = &cfg.output_dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log = RunLog {
            path: dir.join(LOG_FILE),
            started: Instant::now(),
        };
        let _ = fs::remove_file(&log.path);
        let snapshot = toml::to_string(cfg).map_err(|e| Error::config("run", e.to_string()))?;
        write_atomic(&dir.join(CONFIG_FILE), &snapshot)?;
        datapool::emit_manifest(data, &dir.join(MANIFEST_FILE))?;

        let splits = &data.splits;
        log.line(&format!(
            "start: strategy {:?}, seed {} samples, pool {}, val {}, test {}",
            cfg.strategy,
            splits.seed.len(),
            splits.pool.len(),
            splits.val.len(),
            splits.test.len()
        ))?;
        let train = splits.seed.clone().with_role(Role::Train);
        let trained =
            model::train_from_scratch(&data.store, &train, &splits.val, &cfg.scratch_config())?;
        log.line(&format!(
            "base model: best epoch {} of {}",
            trained.best_epoch,
            trained.history.len()
        ))?;

        let mut run = Run {
            cfg: cfg.clone(),
            data,
            pool: splits.pool.clone(),
            train,
            model: trained.model,
            records: Vec::new(),
            initial_pool_size: splits.pool.len(),
            completed: 0,
            truncated: false,
            finished: false,
            log,
        };
        let record = run.evaluate(0, BTreeMap::new())?;
        observer.base_trained(&run.model, &record);
        run.records.push(record);
        run.finished = run.cfg.strategy == RunStrategy::Base;
        run.persist(None)?;
        Ok(run)
    }

    /// Reopens the run stored in `dir`. The dataset must be the one saved
    /// in the directory (see [`load_run_inputs`]).
    pub fn reopen(dir: &Path, data: &'d Dataset, cfg: RunConfig) -> Result<Self> {
        let state_err = |msg: String| Error::RunState {
            path: dir.to_path_buf(),
            msg,
        };
        let state_path = dir.join(STATE_FILE);
        let text = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let state: PersistedState = serde_json::from_str(&text)
            .map_err(|e| state_err(format!("unreadable {STATE_FILE}: {e}")))?;

        if state.records.len() != state.completed_iterations + 1 {
            return Err(state_err(format!(
                "{} records for {} completed iterations",
                state.records.len(),
                state.completed_iterations
            )));
        }
        if state.initial_pool_size != data.splits.pool.len() {
            return Err(state_err(
                "pool size differs from the saved manifest".into(),
            ));
        }
        let pool = SampleSet::new(Role::Pool, state.pool, &data.store)
            .map_err(|e| state_err(e.to_string()))?;
        let train = SampleSet::new(Role::Train, state.train, &data.store)
            .map_err(|e| state_err(e.to_string()))?;
        let initial: HashSet<SampleId> = data
            .splits
            .seed
            .ids()
            .iter()
            .chain(data.splits.pool.ids())
            .copied()
            .collect();
        let current: HashSet<SampleId> = pool.ids().iter().chain(train.ids()).copied().collect();
        if current.len() != pool.len() + train.len() || current != initial {
            return Err(state_err(
                "pool and training set do not partition the seed and pool splits".into(),
            ));
        }

        let ckpt = dir.join(checkpoint_file_name(state.completed_iterations));
        if !ckpt.exists() {
            return Err(Error::Checkpoint {
                path: ckpt,
                msg: "missing checkpoint for the last completed iteration".into(),
            });
        }
        let model = model::load_checkpoint(&ckpt)?;
        if model.input_dim() != data.store.dim() {
            return Err(state_err(
                "checkpoint dimension differs from the manifest".into(),
            ));
        }

        Ok(Run {
            cfg: RunConfig {
                output_dir: dir.to_path_buf(),
                ..cfg
            },
            data,
            pool,
            train,
            model,
            records: state.records,
            initial_pool_size: state.initial_pool_size,
            completed: state.completed_iterations,
            truncated: state.truncated,
            finished: state.finished,
            log: RunLog {
                path: dir.join(LOG_FILE),
                started: Instant::now(),
            },
        })
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn completed_iterations(&self) -> usize {
        self.completed
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn pool(&self) -> &SampleSet {
        &self.pool
    }

    pub fn train(&self) -> &SampleSet {
        &self.train
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    fn evaluate(
        &self,
        iteration: usize,
        per_source_counts: BTreeMap<String, usize>,
    ) -> Result<RunRecord> {
        let store = &self.data.store;
        let val: EerResult = metrics::evaluate_eer(&self.model, store, &self.data.splits.val)?;
        let test: EerResult = metrics::evaluate_eer(&self.model, store, &self.data.splits.test)?;
        let cumulative_selected = self.train.len() - self.data.splits.seed.len();
        let pool_fraction_used = if self.initial_pool_size == 0 {
            0.0
        } else {
            cumulative_selected as f64 / self.initial_pool_size as f64
        };
        Ok(RunRecord {
            iteration,
            cumulative_selected,
            pool_fraction_used,
            eer_val: val.eer,
            eer_test: test.eer,
            threshold_at_eer: test.threshold,
            per_source_counts,
        })
    }

    /// Runs the next iteration. Returns `false` once the run is finished.
    pub fn step(&mut self, observer: &mut dyn Observer) -> Result<bool> {
        if self.finished {
            return Ok(false);
        }
        let iteration = self.completed + 1;
        if self.pool.is_empty() {
            self.truncated = true;
            self.finished = true;
            self.log.line(&format!(
                "pool exhausted before iteration {iteration}; stopping after {} of {} iterations",
                self.completed, self.cfg.iterations
            ))?;
            self.persist(None)?;
            return Ok(false);
        }

        let store = &self.data.store;
        let scoring_cfg = self
            .cfg
            .scoring_config(iteration)
            .expect("selection strategy");
        let scores = scoring::score_pool(&self.model, store, &self.pool, &scoring_cfg)?;
        let selected_ids = selection::select_lowest(&scores, self.cfg.budget);
        let selection = SelectionResult {
            iteration,
            selected_ids,
            per_source_counts: BTreeMap::new(),
        }
        .with_sources(store)?;
        let (pool, train) =
            selection::apply_selection(&self.pool, &self.train, &selection.selected_ids)?;

        let model = model::continuous_train(
            &self.model,
            store,
            &train,
            &self.cfg.finetune_config(iteration),
        )?;
        let pool_before = std::mem::replace(&mut self.pool, pool);
        let train_before = std::mem::replace(&mut self.train, train);
        self.model = model;

        let record = self.evaluate(iteration, selection.per_source_counts.clone())?;
        observer.iteration(&IterationTrace {
            iteration,
            scores: &scores,
            selection: &selection,
            pool_before: &pool_before,
            train_before: &train_before,
            pool_after: &self.pool,
            train_after: &self.train,
            record: &record,
        });
        self.log.line(&format!(
            "iteration {iteration}: selected {}, pool fraction {:.4}, EER val {:.2}% test {:.2}%",
            selection.len(),
            record.pool_fraction_used,
            100.0 * record.eer_val,
            100.0 * record.eer_test
        ))?;
        self.records.push(record);
        self.completed = iteration;
        if self.completed >= self.cfg.iterations {
            self.finished = true;
        }
        self.persist(Some(&selection))?;
        Ok(!self.finished)
    }

    /// Writes the artifacts of the latest iteration; `state.json` goes last
    /// and marks the iteration as complete.
    fn persist(&self, selection: Option<&SelectionResult>) -> Result<()> {
        let dir = &self.cfg.output_dir;
        model::save_checkpoint(&self.model, &dir.join(checkpoint_file_name(self.completed)))?;
        if let Some(sel) = selection {
            selection::write_selection(
                &sel.selected_ids,
                &dir.join(selection::selection_file_name(sel.iteration)),
            )?;
        }
        write_atomic(&dir.join(RECORDS_FILE), &render_records(&self.records))?;
        let compositions = self
            .records
            .iter()
            .filter(|r| r.iteration > 0)
            .map(|r| (r.iteration, metrics::apportion(&r.per_source_counts)))
            .collect::<Vec<_>>();
        write_atomic(
            &dir.join(COMPOSITION_FILE),
            &render_composition(&compositions),
        )?;

        let state = PersistedState {
            completed_iterations: self.completed,
            initial_pool_size: self.initial_pool_size,
            finished: self.finished,
            truncated: self.truncated,
            pool: self.pool.ids().to_vec(),
            train: self.train.ids().to_vec(),
            records: self.records.clone(),
        };
        let text = serde_json::to_string(&state).expect("state serializes");
        write_atomic(&dir.join(STATE_FILE), &text)
    }

    pub fn into_outcome(self) -> RunOutcome {
        RunOutcome {
            records: self.records,
            model: self.model,
            truncated: self.truncated,
        }
    }
}

/// Runs the whole loop.
pub fn run(data: &Dataset, cfg: &RunConfig) -> Result<RunOutcome> {
    run_observed(data, cfg, &mut ())
}

pub fn run_observed(
    data: &Dataset,
    cfg: &RunConfig,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    let mut run = Run::start(data, cfg, observer)?;
    while run.step(observer)? {}
    Ok(run.into_outcome())
}

/// Reads the config snapshot and manifest saved in a run directory.
pub fn load_run_inputs(dir: &Path) -> Result<(RunConfig, Dataset)> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::RunState {
        path: dir.to_path_buf(),
        msg: format!("unreadable {CONFIG_FILE}: {e}"),
    })?;
    cfg.output_dir = dir.to_path_buf();
    cfg.validate()?;
    let data = datapool::ingest_manifest(&dir.join(MANIFEST_FILE))?;
    Ok((cfg, data))
}

/// Continues the run stored in `dir` from its first incomplete iteration.
/// A finished run is left untouched.
pub fn resume(dir: &Path) -> Result<RunOutcome> {
    let (cfg, data) = load_run_inputs(dir)?;
    let mut run = Run::reopen(dir, &data, cfg)?;
    if run.is_finished() {
        log::info!("run in {} is already complete", dir.display());
    } else {
        run.log
            .line(&format!("resuming after iteration {}", run.completed))?;
        while run.step(&mut ())? {}
    }
    Ok(run.into_outcome())
}
