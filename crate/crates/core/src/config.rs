//! Project files: one TOML document naming the search space, the target
//! objective, the source datasets and the run settings. Relative paths are
//! resolved against the directory holding the project file.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{self, ExternalEvaluator, Objective, SuiteSpec, SyntheticObjective, SyntheticSuite};
use crate::driver::RunConfig;
use crate::embed::PtemBundle;
use crate::error::{Error, Result};
use crate::pretrain::PretrainConfig;
use crate::rank::{MetaFeatureVector, RankerConfig, RankerModel, SourceCandidate};
use crate::space::SearchSpace;

/// Where the PTEM for a run comes from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PtemChoice {
    #[default]
    None,
    /// The file named in `[ptem] file`.
    File,
    /// The ranker's top recommendation among the sources.
    Auto,
    /// A source drawn uniformly with the run seed.
    Random,
}

impl FromStr for PtemChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PtemChoice::None),
            "file" => Ok(PtemChoice::File),
            "auto" => Ok(PtemChoice::Auto),
            "random" => Ok(PtemChoice::Random),
            other => Err(Error::config(format!("unknown PTEM choice `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtemSettings {
    pub choice: PtemChoice,
    pub file: Option<PathBuf>,
}

/// A target objective: a synthetic suite or an external evaluator process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Synthetic {
        family_seed: u64,
        descriptor: Vec<f64>,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        /// Meta-features of the target dataset, used for recommendation.
        #[serde(default)]
        meta: Option<Vec<f64>>,
    },
}

fn default_noise() -> f64 {
    0.01
}

fn default_timeout() -> f64 {
    600.0
}

impl ObjectiveConfig {
    pub fn synthetic_suite(&self, space: &SearchSpace) -> Option<SyntheticSuite> {
        match self {
            ObjectiveConfig::Synthetic {
                family_seed,
                descriptor,
                noise_std,
            } => Some(SyntheticSuite::generate(
                &SuiteSpec {
                    family_seed: *family_seed,
                    descriptor: descriptor.clone(),
                    noise_std: *noise_std,
                },
                space,
            )),
            ObjectiveConfig::External { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ObjectiveConfig::Synthetic { noise_std, .. } if !(*noise_std >= 0.0) => {
                Err(Error::config("noise_std must be non-negative"))
            }
            ObjectiveConfig::External { command, .. } if command.is_empty() => {
                Err(Error::config("external objective needs a command"))
            }
            ObjectiveConfig::External { timeout_secs, .. } if !(*timeout_secs > 0.0) => {
                Err(Error::config("timeout_secs must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// A fresh objective; `seed` drives the synthetic noise.
    pub fn build(&self, space: &SearchSpace, seed: u64, base: &Path) -> Result<Box<dyn Objective>> {
        self.validate()?;
        match self {
            ObjectiveConfig::Synthetic { .. } => {
                let suite = self.synthetic_suite(space).expect("synthetic objective");
                Ok(Box::new(SyntheticObjective::new(suite, seed)))
            }
            ObjectiveConfig::External {
                command, timeout_secs, ..
            } => {
                let mut cmd = command.clone();
                // A relative program path that exists next to the project file wins.
                let local = base.join(&cmd[0]);
                if Path::new(&cmd[0]).is_relative() && local.exists() {
                    cmd[0] = local.to_string_lossy().into_owned();
                }
                Ok(Box::new(ExternalEvaluator::new(cmd, Duration::from_secs_f64(*timeout_secs))))
            }
        }
    }

    pub fn meta(&self) -> Option<MetaFeatureVector> {
        match self {
            ObjectiveConfig::Synthetic { descriptor, .. } => Some(MetaFeatureVector::from_descriptor(descriptor)),
            ObjectiveConfig::External { meta, .. } => meta.clone().and_then(|m| MetaFeatureVector::new(m).ok()),
        }
    }
}

/// One source dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub id: String,
    /// Observation CSV used for pre-training.
    pub observations: PathBuf,
    /// Where its PTEM is written and read.
    pub ptem: PathBuf,
    /// Meta-feature vector; defaults to the objective's meta-features.
    #[serde(default)]
    pub meta: Option<Vec<f64>>,
    /// The source treated as a target when building ranking data.
    pub objective: ObjectiveConfig,
}

impl SourceConfig {
    pub fn meta(&self) -> Result<MetaFeatureVector> {
        match &self.meta {
            Some(m) => MetaFeatureVector::new(m.clone()),
            None => self
                .objective
                .meta()
                .ok_or_else(|| Error::config(format!("source `{}` has no meta-features", self.id))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankSettings {
    pub ranker: RankerConfig,
    /// BO iterations per (target, source) run.
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub k: usize,
    /// Ranking dataset CSV.
    pub dataset: PathBuf,
}

impl Default for RankSettings {
    fn default() -> Self {
        RankSettings {
            ranker: RankerConfig::default(),
            iterations: 20,
            seeds: vec![0, 1, 2],
            k: 3,
            dataset: PathBuf::from("ranking.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    /// Search-space TOML; the built-in synthetic space when absent.
    #[serde(default)]
    pub space: Option<PathBuf>,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub ptem: PtemSettings,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub rank: RankSettings,
    /// Ranker model JSON.
    #[serde(default)]
    pub ranker: Option<PathBuf>,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    #[serde(skip)]
    pub base: PathBuf,
}

impl ProjectConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ProjectConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.base = base.to_path_buf();
        cfg.run.validate()?;
        cfg.objective.validate()?;
        for s in &cfg.sources {
            s.objective.validate()?;
        }
        let mut ids: Vec<&str> = cfg.sources.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!("duplicate source id `{}`", w[0])));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("project config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn load_space(&self) -> Result<SearchSpace> {
        match &self.space {
            Some(p) => SearchSpace::load(&self.resolve(p)),
            None => Ok(bench::default_space()),
        }
    }

    pub fn ranker_path(&self) -> Result<PathBuf> {
        self.ranker
            .as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::config("no `ranker` path configured"))
    }

    /// Candidate sources for recommendation.
    pub fn candidates(&self) -> Result<Vec<SourceCandidate>> {
        self.sources
            .iter()
            .map(|s| {
                Ok(SourceCandidate {
                    id: s.id.clone(),
                    meta: s.meta()?,
                })
            })
            .collect()
    }

    fn source_ptem(&self, id: &str, space: &SearchSpace) -> Result<PtemBundle> {
        let s = self
            .sources
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::config(format!("unknown source `{id}`")))?;
        PtemBundle::load(&self.resolve(&s.ptem), space)
    }

    /// Resolves the PTEM for one run. `choice` overrides the configured one.
    pub fn select_ptem<R: Rng + ?Sized>(
        &self,
        choice: &PtemChoice,
        space: &SearchSpace,
        rng: &mut R,
    ) -> Result<Option<PtemBundle>> {
        match choice {
            PtemChoice::None => Ok(None),
            PtemChoice::File => {
                let p = self
                    .ptem
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::config("`[ptem] file` is not set"))?;
                PtemBundle::load(&self.resolve(p), space).map(Some)
            }
            PtemChoice::Random => {
                if self.sources.is_empty() {
                    return Err(Error::config("random PTEM needs at least one source"));
                }
                let i = rng.random_range(0..self.sources.len());
                self.source_ptem(&self.sources[i].id, space).map(Some)
            }
            PtemChoice::Auto => {
                let model = RankerModel::load(&self.ranker_path()?)?;
                let target = self
                    .objective
                    .meta()
                    .ok_or_else(|| Error::config("recommendation needs target meta-features"))?;
                let order = crate::rank::recommend_ptem(&model, &target, &self.candidates()?)?;
                let top = order.first().ok_or_else(|| Error::config("no sources to recommend from"))?;
                self.source_ptem(top, space).map(Some)
            }
        }
    }
}
