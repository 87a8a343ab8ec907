//! The optimization loop and its baselines.
//!
//! Every arm starts from the same seeded initial design (a few random points
//! per algorithm) and then spends `iterations` evaluations. GP arms refit the
//! surrogate from its previous parameters before each acquisition step.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquire::{maximize_acquisition, AcqConfig};
use crate::bench::Objective;
use crate::embed::{EmbeddingModel, PtemBundle, TrainMode, DEFAULT_HIDDEN, DEFAULT_LATENT_DIM};
use crate::error::{Error, Result};
use crate::obs::{self, Observation};
use crate::space::{HpVector, SearchSpace};
use crate::surrogate::{FitConfig, KernelParams, PriorMean, Standardization, SurrogateState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Proposed,
    ProposedNoPretrain,
    ProposedRandomPtem,
    IndependentGp,
    RandomSearch,
}

impl Arm {
    pub const ALL: [Arm; 5] = [
        Arm::Proposed,
        Arm::ProposedNoPretrain,
        Arm::ProposedRandomPtem,
        Arm::IndependentGp,
        Arm::RandomSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Proposed => "proposed",
            Arm::ProposedNoPretrain => "proposed-no-pretrain",
            Arm::ProposedRandomPtem => "proposed-random-ptem",
            Arm::IndependentGp => "independent-gp",
            Arm::RandomSearch => "random-search",
        }
    }

    pub fn needs_ptem(self) -> bool {
        matches!(self, Arm::Proposed | Arm::ProposedRandomPtem)
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown arm `{s}`")))
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub arm: Arm,
    pub seed: u64,
    /// Evaluations after the initial design.
    pub iterations: usize,
    pub init_per_algo: usize,
    pub latent_dim: usize,
    pub hidden: [usize; 2],
    pub fit: FitConfig,
    pub acq: AcqConfig,
    /// Abort on the first failed evaluation instead of skipping it.
    pub fail_fast: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arm: Arm::Proposed,
            seed: 0,
            iterations: 50,
            init_per_algo: 2,
            latent_dim: DEFAULT_LATENT_DIM,
            hidden: DEFAULT_HIDDEN,
            fit: FitConfig::default(),
            acq: AcqConfig::default(),
            fail_fast: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_per_algo == 0 {
            return Err(Error::config("init_per_algo must be at least 1"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim must be at least 1"));
        }
        if !(self.fit.alpha >= 0.0) || !(self.fit.lr_kernel >= 0.0) || !(self.fit.lr_embed >= 0.0) {
            return Err(Error::config("alpha and learning rates must be non-negative"));
        }
        Ok(())
    }
}

/// Fitted kernel hyper-parameters as logged: one shared set, or one per
/// algorithm for the independent baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelLog {
    Shared(KernelParams),
    PerAlgorithm(Vec<Option<KernelParams>>),
}

/// One evaluated point. `y` is absent when the evaluation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub algorithm: String,
    pub algo: usize,
    pub raw: Vec<f64>,
    pub unit: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Best score so far, including this point.
    pub y_best: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Config {
        arm: Arm,
        space_fingerprint: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        ptem_source: Option<String>,
        settings: RunConfig,
    },
    Init {
        index: usize,
        #[serde(flatten)]
        eval: Evaluation,
    },
    Iter {
        t: usize,
        #[serde(flatten)]
        eval: Evaluation,
        #[serde(skip_serializing_if = "Option::is_none")]
        acq: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        kernel: Option<KernelLog>,
    },
    Final {
        #[serde(skip_serializing_if = "Option::is_none")]
        algorithm: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        raw: Option<Vec<f64>>,
        y_best: Option<f64>,
        observations: usize,
    },
}

/// Append-only record of one run, stored as JSON lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<Record>,
}

impl RunLog {
    pub fn config(&self) -> Option<(&Arm, &RunConfig)> {
        self.records.iter().find_map(|r| match r {
            Record::Config { arm, settings, .. } => Some((arm, settings)),
            _ => None,
        })
    }

    pub fn arm(&self) -> Option<Arm> {
        self.config().map(|(a, _)| *a)
    }

    pub fn seed(&self) -> Option<u64> {
        self.config().map(|(_, c)| c.seed)
    }

    /// Best score after the initial design.
    pub fn initial_best(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Init { eval, .. } => Some(eval.y_best),
                _ => None,
            })
            .last()
            .flatten()
    }

    /// Best-so-far score after each iteration `t = 1..=T`.
    pub fn trace(&self) -> Vec<Option<f64>> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Iter { eval, .. } => Some(eval.y_best),
                _ => None,
            })
            .collect()
    }

    pub fn final_best(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| match r {
            Record::Final { y_best, .. } => Some(*y_best),
            _ => None,
        })?
    }

    /// Evaluation records (initial design and iterations) in order.
    pub fn evaluations(&self) -> impl Iterator<Item = &Evaluation> {
        self.records.iter().filter_map(|r| match r {
            Record::Init { eval, .. } | Record::Iter { eval, .. } => Some(eval),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Corrupt(format!("run log line {}: {e}", i + 1))))
            .collect::<Result<_>>()?;
        Ok(RunLog { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(f).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        Self::from_jsonl(&text)
    }
}

/// Independent random stream `k` of a run seed.
fn substream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

const STREAM_INIT: u64 = 1;
const STREAM_SEARCH: u64 = 2;
const STREAM_EMBED: u64 = 3;

/// Bookkeeping shared by all arms.
struct Recorder<'a> {
    space: &'a SearchSpace,
    fail_fast: bool,
    obs: Vec<Observation>,
    log: RunLog,
    best: Option<(HpVector, f64)>,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &RunConfig, space: &'a SearchSpace, ptem_source: Option<String>) -> Self {
        let log = RunLog {
            records: vec![Record::Config {
                arm: cfg.arm,
                space_fingerprint: space.fingerprint(),
                ptem_source,
                settings: cfg.clone(),
            }],
        };
        Recorder {
            space,
            fail_fast: cfg.fail_fast,
            obs: Vec::new(),
            log,
            best: None,
        }
    }

    fn y_best(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, y)| *y)
    }

    fn evaluate(&mut self, objective: &mut dyn Objective, x: HpVector) -> Result<Evaluation> {
        let outcome = objective.evaluate(self.space, &x);
        let mut eval = Evaluation {
            algorithm: self.space.algorithms[x.algo].name.clone(),
            algo: x.algo,
            raw: self.space.to_raw(&x),
            unit: x.values.clone(),
            y: None,
            error: None,
            y_best: None,
        };
        match outcome {
            Ok(y) if y.is_finite() => {
                eval.y = Some(y);
                if self.y_best().is_none_or(|b| y > b) {
                    self.best = Some((x.clone(), y));
                }
                self.obs.push(Observation::new(x, y));
            }
            Ok(y) => {
                if self.fail_fast {
                    return Err(Error::Numerical(format!("objective returned {y}")));
                }
                warn!("objective returned {y}; skipping");
                eval.error = Some(format!("non-finite score {y}"));
            }
            Err(e) => {
                if self.fail_fast {
                    return Err(e.into());
                }
                warn!("evaluation failed: {e}; skipping");
                eval.error = Some(e.to_string());
            }
        }
        eval.y_best = self.y_best();
        Ok(eval)
    }

    fn initial_design(&mut self, cfg: &RunConfig, objective: &mut dyn Objective) -> Result<()> {
        let mut rng = substream(cfg.seed, STREAM_INIT);
        let mut index = 0;
        for m in 0..self.space.num_algorithms() {
            for _ in 0..cfg.init_per_algo {
                let x = self.space.sample_uniform(m, &mut rng);
                let eval = self.evaluate(objective, x)?;
                self.log.records.push(Record::Init { index, eval });
                index += 1;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> RunLog {
        let (algorithm, raw) = match &self.best {
            Some((x, _)) => (
                Some(self.space.algorithms[x.algo].name.clone()),
                Some(self.space.to_raw(x)),
            ),
            None => (None, None),
        };
        self.log.records.push(Record::Final {
            algorithm,
            raw,
            y_best: self.y_best(),
            observations: self.obs.len(),
        });
        self.log
    }
}

/// How the quadratic prior's peak value is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorPolicy {
    /// A fixed value, normally the PTEM source's best score.
    Fixed(f64),
    /// The target's best score so far, updated before every refit.
    TargetBest,
}

/// Initial embeddings and fitting options for the shared-latent-space GP.
#[derive(Debug, Clone)]
pub struct LatentSetup {
    pub models: Vec<EmbeddingModel>,
    /// Pre-trained weights the regularizer pulls towards.
    pub pretrained: Option<PtemBundle>,
    pub prior: PriorPolicy,
    pub mode: TrainMode,
}

impl LatentSetup {
    /// Start from a PTEM, fine-tuning with the configured mask.
    pub fn from_ptem(ptem: &PtemBundle, cfg: &RunConfig) -> Self {
        LatentSetup {
            models: ptem.models.clone(),
            pretrained: Some(ptem.clone()),
            prior: PriorPolicy::Fixed(ptem.y_best),
            mode: cfg.fit.mode,
        }
    }

    /// Randomly initialized embeddings trained in full, no regularizer.
    pub fn untrained(space: &SearchSpace, cfg: &RunConfig) -> Self {
        LatentSetup {
            models: random_models(space, cfg),
            pretrained: None,
            prior: PriorPolicy::TargetBest,
            mode: TrainMode::All,
        }
    }
}

/// The seeded random embeddings used when no PTEM is available.
pub fn random_models(space: &SearchSpace, cfg: &RunConfig) -> Vec<EmbeddingModel> {
    let mut rng = substream(cfg.seed, STREAM_EMBED);
    space
        .dims()
        .into_iter()
        .map(|d| EmbeddingModel::new(d, cfg.latent_dim, cfg.hidden, &mut rng))
        .collect()
}

/// Runs the configured arm.
pub fn run(
    cfg: &RunConfig,
    space: &SearchSpace,
    objective: &mut dyn Objective,
    ptem: Option<&PtemBundle>,
) -> Result<RunLog> {
    cfg.validate()?;
    match (cfg.arm, ptem) {
        (Arm::Proposed | Arm::ProposedRandomPtem, None) => {
            Err(Error::config(format!("arm `{}` needs a PTEM", cfg.arm)))
        }
        (Arm::Proposed | Arm::ProposedRandomPtem, Some(p)) => {
            p.validate_against(space)?;
            run_bo(cfg, space, objective, LatentSetup::from_ptem(p, cfg))
        }
        (Arm::ProposedNoPretrain, _) => run_bo(cfg, space, objective, LatentSetup::untrained(space, cfg)),
        (Arm::IndependentGp, _) => run_independent_gp(cfg, space, objective),
        (Arm::RandomSearch, _) => run_random_search(cfg, space, objective),
    }
}

/// Shared-latent-space BO: fit the multi-task GP, maximize EI over every
/// algorithm, evaluate, repeat.
pub fn run_bo(cfg: &RunConfig, space: &SearchSpace, objective: &mut dyn Objective, setup: LatentSetup) -> Result<RunLog> {
    cfg.validate()?;
    let label = setup.pretrained.as_ref().map(|p| p.source_id.clone());
    let mut rec = Recorder::new(cfg, space, label);
    rec.initial_design(cfg, objective)?;

    let prior = |policy: PriorPolicy, best: Option<f64>| match policy {
        PriorPolicy::Fixed(y) => PriorMean::Quadratic { y_best: y },
        PriorPolicy::TargetBest => PriorMean::Quadratic {
            y_best: best.unwrap_or(0.0),
        },
    };
    let mut state = SurrogateState::new(
        KernelParams::new(space.num_algorithms()),
        setup.models,
        prior(setup.prior, rec.y_best()),
    )?;
    let fit_cfg = FitConfig {
        mode: setup.mode,
        ..cfg.fit
    };
    let mut rng = substream(cfg.seed, STREAM_SEARCH);
    for t in 1..=cfg.iterations {
        let (x, acq, kernel) = match rec.y_best() {
            Some(y_best) => {
                state.prior = prior(setup.prior, Some(y_best));
                state.fit(&rec.obs, &fit_cfg, setup.pretrained.as_ref())?;
                let r = maximize_acquisition(&state, space, y_best, &mut rng, &cfg.acq);
                (r.x, Some(r.value), Some(KernelLog::Shared(state.params.clone())))
            }
            // Nothing observed yet: keep exploring at random.
            None => (random_point(space, &mut rng), None, None),
        };
        let eval = rec.evaluate(objective, x)?;
        rec.log.records.push(Record::Iter { t, eval, acq, kernel });
    }
    info!("{} seed {}: best {:?}", cfg.arm, cfg.seed, rec.y_best());
    Ok(rec.finish())
}

fn random_point<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> HpVector {
    let m = rng.random_range(0..space.num_algorithms());
    space.sample_uniform(m, rng)
}

/// Uniform random algorithm, uniform random hyper-parameters.
pub fn run_random_search(cfg: &RunConfig, space: &SearchSpace, objective: &mut dyn Objective) -> Result<RunLog> {
    cfg.validate()?;
    let mut rec = Recorder::new(cfg, space, None);
    rec.initial_design(cfg, objective)?;
    let mut rng = substream(cfg.seed, STREAM_SEARCH);
    for t in 1..=cfg.iterations {
        let eval = rec.evaluate(objective, random_point(space, &mut rng))?;
        rec.log.records.push(Record::Iter {
            t,
            eval,
            acq: None,
            kernel: None,
        });
    }
    Ok(rec.finish())
}

/// One single-task GP per algorithm on its unit-scaled hyper-parameters; the
/// next point is the best EI over the per-algorithm maximizers.
pub fn run_independent_gp(cfg: &RunConfig, space: &SearchSpace, objective: &mut dyn Objective) -> Result<RunLog> {
    cfg.validate()?;
    let mut rec = Recorder::new(cfg, space, None);
    rec.initial_design(cfg, objective)?;
    let mut states: Vec<SurrogateState> = space
        .dims()
        .into_iter()
        .map(|d| SurrogateState::new(KernelParams::independent(1), vec![EmbeddingModel::identity(d, d)], PriorMean::Constant))
        .collect::<Result<_>>()?;
    let fit_cfg = FitConfig {
        mode: TrainMode::Frozen,
        alpha: 0.0,
        ..cfg.fit
    };
    let single = |space: &SearchSpace, m: usize| -> Result<SearchSpace> {
        SearchSpace::new(vec![space.algorithms[m].clone()])
    };
    let subspaces: Vec<SearchSpace> = (0..space.num_algorithms()).map(|m| single(space, m)).collect::<Result<_>>()?;
    let mut rng = substream(cfg.seed, STREAM_SEARCH);
    for t in 1..=cfg.iterations {
        let Some(y_best) = rec.y_best() else {
            let eval = rec.evaluate(objective, random_point(space, &mut rng))?;
            rec.log.records.push(Record::Iter {
                t,
                eval,
                acq: None,
                kernel: None,
            });
            continue;
        };
        // One score scale for every algorithm keeps their EI values comparable.
        let shared = Standardization::from_scores(&rec.obs.iter().map(|o| o.y).collect::<Vec<_>>());
        let mut best: Option<(HpVector, f64, f64)> = None;
        let mut kernels = Vec::with_capacity(states.len());
        for (m, state) in states.iter_mut().enumerate() {
            let local: Vec<Observation> = obs::for_algo(&rec.obs, m)
                .into_iter()
                .map(|o| Observation::new(HpVector::new(0, o.x.values), o.y))
                .collect();
            state.set_fixed_standardization(Some(shared));
            if !local.is_empty() {
                state.fit(&local, &fit_cfg, None)?;
                kernels.push(Some(state.params.clone()));
            } else {
                kernels.push(None);
            }
            let r = maximize_acquisition(state, &subspaces[m], y_best, &mut rng, &cfg.acq);
            if best.as_ref().is_none_or(|(_, s, _)| r.score > *s) {
                best = Some((HpVector::new(m, r.x.values), r.score, r.value));
            }
        }
        let (x, _, acq) = best.expect("at least one algorithm");
        let eval = rec.evaluate(objective, x)?;
        rec.log.records.push(Record::Iter {
            t,
            eval,
            acq: Some(acq),
            kernel: Some(KernelLog::PerAlgorithm(kernels)),
        });
    }
    Ok(rec.finish())
}

/// Per-iteration summary of several arms over paired seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub arms: Vec<String>,
    /// Iteration index; 0 is the initial design.
    pub iterations: Vec<usize>,
    pub mean_rank: Vec<Vec<f64>>,
    pub rank_se: Vec<Vec<f64>>,
    pub mean_best: Vec<Vec<f64>>,
    pub best_se: Vec<Vec<f64>>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ranks with 1 for the largest value; ties share the average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Best-so-far curve `[initial, after t=1, ..., after t=T]`; missing values
/// (nothing observed yet) count as negative infinity.
fn curve(log: &RunLog) -> Vec<f64> {
    std::iter::once(log.initial_best())
        .chain(log.trace())
        .map(|v| v.unwrap_or(f64::NEG_INFINITY))
        .collect()
}

/// Summarizes logs grouped by arm. Runs are paired by seed, so every arm
/// needs the same seeds and the same `T`.
pub fn report(logs: &[RunLog]) -> Result<Report> {
    let mut by_arm: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for log in logs {
        let (arm, cfg) = log.config().ok_or_else(|| Error::Corrupt("run log has no config record".into()))?;
        by_arm.entry(arm.name().to_string()).or_default().insert(cfg.seed, curve(log));
    }
    let arms: Vec<String> = by_arm.keys().cloned().collect();
    let first = by_arm.values().next().ok_or_else(|| Error::config("no run logs to report"))?;
    let seeds: Vec<u64> = first.keys().copied().collect();
    let len = first.values().next().map_or(0, Vec::len);
    for (arm, runs) in &by_arm {
        if runs.keys().copied().collect::<Vec<_>>() != seeds {
            return Err(Error::config(format!("arm `{arm}` was run with different seeds")));
        }
        if runs.values().any(|c| c.len() != len) {
            return Err(Error::config(format!("arm `{arm}` has runs with a different iteration count")));
        }
    }
    let a = arms.len();
    let mut mean_rank = vec![vec![0.0; len]; a];
    let mut rank_se = vec![vec![0.0; len]; a];
    let mut mean_best = vec![vec![0.0; len]; a];
    let mut best_se = vec![vec![0.0; len]; a];
    for t in 0..len {
        let mut ranks = vec![Vec::with_capacity(seeds.len()); a];
        for s in &seeds {
            let vals: Vec<f64> = arms.iter().map(|arm| by_arm[arm][s][t]).collect();
            for (i, r) in average_ranks(&vals).into_iter().enumerate() {
                ranks[i].push(r);
            }
        }
        for (i, arm) in arms.iter().enumerate() {
            (mean_rank[i][t], rank_se[i][t]) = mean_se(&ranks[i]);
            let vals: Vec<f64> = seeds.iter().map(|s| by_arm[arm][s][t]).collect();
            (mean_best[i][t], best_se[i][t]) = mean_se(&vals);
        }
    }
    Ok(Report {
        arms,
        iterations: (0..len).collect(),
        mean_rank,
        rank_se,
        mean_best,
        best_se,
    })
}

impl Report {
    /// Long-format table: `t,arm,mean_rank,rank_se,mean_best,best_se`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,arm,mean_rank,rank_se,mean_best,best_se\n");
        for &t in &self.iterations {
            for (i, arm) in self.arms.iter().enumerate() {
                s.push_str(&format!(
                    "{t},{arm},{},{},{},{}\n",
                    self.mean_rank[i][t], self.rank_se[i][t], self.mean_best[i][t], self.best_se[i][t]
                ));
            }
        }
        s
    }

    /// Final-iteration row per arm, best mean rank first.
    pub fn summary_csv(&self) -> String {
        let last = self.iterations.len() - 1;
        let mut order: Vec<usize> = (0..self.arms.len()).collect();
        order.sort_by(|&a, &b| self.mean_rank[a][last].total_cmp(&self.mean_rank[b][last]));
        let mut s = String::from("arm,mean_rank,rank_se,mean_best,best_se\n");
        for i in order {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                self.arms[i], self.mean_rank[i][last], self.rank_se[i][last], self.mean_best[i][last], self.best_se[i][last]
            ));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("report.csv", self.to_csv()), ("summary.csv", self.summary_csv())] {
            let path = dir.join(name);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
