//! Heterogeneous per-algorithm hyper-parameter spaces.
//!
//! Every algorithm owns its own list of variables; vectors handed to the rest
//! of the crate are always in unit-scaled coordinates (`[0, 1]` per
//! variable). Discrete variables (counts and ordinal categories) occupy a
//! regular grid inside the unit interval, and every operation here keeps them
//! on that grid.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Standard deviation of the Gaussian used for continuous neighbors.
pub const NEIGHBOR_STD: f64 = 0.1;
/// Number of neighbors proposed around a center point.
pub const NEIGHBOR_COUNT: usize = 10;
/// Redraw budget for a continuous neighbor that falls outside `[0, 1]`.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Continuous,
    Count,
    /// Ordered categorical levels `1..=cardinality`.
    Ordinal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VarKind,
    #[serde(default)]
    pub lower: f64,
    #[serde(default)]
    pub upper: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub log_scale: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<u32>,
}

impl VariableSpec {
    pub fn continuous(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VarKind::Continuous,
            lower,
            upper,
            log_scale: false,
            cardinality: None,
        }
    }

    pub fn log_continuous(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        VariableSpec {
            log_scale: true,
            ..Self::continuous(name, lower, upper)
        }
    }

    pub fn count(name: impl Into<String>, lower: i64, upper: i64) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VarKind::Count,
            lower: lower as f64,
            upper: upper as f64,
            log_scale: false,
            cardinality: None,
        }
    }

    pub fn ordinal(name: impl Into<String>, cardinality: u32) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VarKind::Ordinal,
            lower: 1.0,
            upper: cardinality as f64,
            log_scale: false,
            cardinality: Some(cardinality),
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self.kind, VarKind::Continuous)
    }

    /// Number of grid levels for discrete variables.
    pub fn levels(&self) -> Option<usize> {
        self.is_discrete()
            .then(|| (self.upper - self.lower) as usize + 1)
    }

    /// Fills implied bounds and checks the variable's invariants.
    fn normalize(&mut self) -> Result<()> {
        if self.kind == VarKind::Ordinal {
            let card = self.cardinality.ok_or_else(|| {
                Error::config(format!("ordinal variable `{}` needs a cardinality", self.name))
            })?;
            self.lower = 1.0;
            self.upper = card as f64;
        }
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::config(format!(
                "variable `{}` needs finite bounds with lower < upper (got {}, {})",
                self.name, self.lower, self.upper
            )));
        }
        match self.kind {
            VarKind::Continuous => {
                if self.log_scale && self.lower <= 0.0 {
                    return Err(Error::config(format!(
                        "log-scaled variable `{}` needs a positive lower bound",
                        self.name
                    )));
                }
            }
            VarKind::Count | VarKind::Ordinal => {
                if self.lower.fract() != 0.0 || self.upper.fract() != 0.0 {
                    return Err(Error::config(format!(
                        "discrete variable `{}` needs integer bounds",
                        self.name
                    )));
                }
                if self.log_scale {
                    return Err(Error::config(format!(
                        "log scaling is only supported for continuous variables (`{}`)",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Maps a raw value into `[0, 1]`.
    pub fn scale_to_unit(&self, raw: f64) -> Result<f64> {
        if !(raw >= self.lower && raw <= self.upper) {
            return Err(Error::Domain {
                value: raw,
                lower: self.lower,
                upper: self.upper,
            });
        }
        if self.is_discrete() && raw.fract() != 0.0 {
            return Err(Error::Domain {
                value: raw,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let unit = if self.log_scale {
            (raw.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln())
        } else {
            (raw - self.lower) / (self.upper - self.lower)
        };
        Ok(unit.clamp(0.0, 1.0))
    }

    /// Inverse of [`scale_to_unit`](Self::scale_to_unit). Discrete variables
    /// round to the nearest integer level.
    pub fn unscale(&self, unit: f64) -> f64 {
        let unit = unit.clamp(0.0, 1.0);
        if self.log_scale {
            let v = (self.lower.ln() + unit * (self.upper.ln() - self.lower.ln())).exp();
            v.clamp(self.lower, self.upper)
        } else if self.is_discrete() {
            (self.lower + unit * (self.upper - self.lower)).round()
        } else {
            (self.lower + unit * (self.upper - self.lower)).clamp(self.lower, self.upper)
        }
    }

    /// Projects a unit coordinate onto this variable's grid (identity for
    /// continuous variables).
    pub fn snap(&self, unit: f64) -> f64 {
        if self.is_discrete() {
            let raw = self.unscale(unit);
            (raw - self.lower) / (self.upper - self.lower)
        } else {
            unit.clamp(0.0, 1.0)
        }
    }

    /// Half-width of the integer window used for discrete neighbors:
    /// `floor((upper - lower + 1) / 10)`.
    pub fn neighbor_radius(&self) -> i64 {
        ((self.upper - self.lower + 1.0) / 10.0).floor() as i64
    }

    fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.is_discrete() {
            let lo = self.lower as i64;
            let hi = self.upper as i64;
            let c = rng.random_range(lo..=hi);
            (c as f64 - self.lower) / (self.upper - self.lower)
        } else {
            rng.random::<f64>()
        }
    }

    fn sample_neighbor<R: Rng + ?Sized>(&self, center: f64, rng: &mut R) -> f64 {
        if self.is_discrete() {
            let c = self.unscale(center) as i64;
            // Ranges narrower than ten levels would give a zero-width window.
            let z = self.neighbor_radius().max(1);
            let lo = (c - z).max(self.lower as i64);
            let hi = (c + z).min(self.upper as i64);
            let v = rng.random_range(lo..=hi);
            (v as f64 - self.lower) / (self.upper - self.lower)
        } else {
            let normal = Normal::new(center, NEIGHBOR_STD).expect("positive std");
            for _ in 0..MAX_REDRAWS {
                let v = normal.sample(rng);
                if (0.0..=1.0).contains(&v) {
                    return v;
                }
            }
            normal.sample(rng).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub name: String,
    pub variables: Vec<VariableSpec>,
}

impl AlgorithmSpec {
    pub fn new(name: impl Into<String>, variables: Vec<VariableSpec>) -> Self {
        AlgorithmSpec {
            name: name.into(),
            variables,
        }
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }
}

/// A unit-scaled hyper-parameter vector for one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpVector {
    pub algo: usize,
    pub values: Vec<f64>,
}

impl HpVector {
    pub fn new(algo: usize, values: Vec<f64>) -> Self {
        HpVector { algo, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub algorithms: Vec<AlgorithmSpec>,
}

impl SearchSpace {
    pub fn new(algorithms: Vec<AlgorithmSpec>) -> Result<Self> {
        let mut space = SearchSpace { algorithms };
        space.normalize()?;
        Ok(space)
    }

    fn normalize(&mut self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::config("search space needs at least one algorithm"));
        }
        for algo in &mut self.algorithms {
            if algo.variables.is_empty() {
                return Err(Error::config(format!(
                    "algorithm `{}` has no variables",
                    algo.name
                )));
            }
            for var in &mut algo.variables {
                var.normalize()?;
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let space: SearchSpace =
            toml::from_str(text).map_err(|e| Error::config(format!("search space: {e}")))?;
        SearchSpace::new(space.algorithms)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("search space serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn num_algorithms(&self) -> usize {
        self.algorithms.len()
    }

    pub fn dim(&self, m: usize) -> usize {
        self.algorithms[m].dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.algorithms.iter().map(AlgorithmSpec::dim).collect()
    }

    /// Stable digest of the space's structure; PTEM files carry it so they
    /// cannot be loaded against a different space.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for algo in &self.algorithms {
            hasher.update(format!("algo:{}\n", algo.name).as_bytes());
            for v in &algo.variables {
                hasher.update(
                    format!(
                        "var:{}:{:?}:{:016x}:{:016x}:{}:{:?}\n",
                        v.name,
                        v.kind,
                        v.lower.to_bits(),
                        v.upper.to_bits(),
                        v.log_scale,
                        v.cardinality
                    )
                    .as_bytes(),
                );
            }
        }
        hex::encode(&hasher.finalize()[..16])
    }

    pub fn check(&self, x: &HpVector) -> Result<()> {
        if x.algo >= self.num_algorithms() {
            return Err(Error::config(format!(
                "algorithm index {} out of range (M = {})",
                x.algo,
                self.num_algorithms()
            )));
        }
        let dim = self.dim(x.algo);
        if x.dim() != dim {
            return Err(Error::Shape {
                expected: dim,
                got: x.dim(),
            });
        }
        if let Some(&v) = x.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain {
                value: v,
                lower: 0.0,
                upper: 1.0,
            });
        }
        Ok(())
    }

    /// Scales a raw vector for algorithm `m`.
    pub fn from_raw(&self, m: usize, raw: &[f64]) -> Result<HpVector> {
        let vars = &self.algorithms[m].variables;
        if raw.len() != vars.len() {
            return Err(Error::Shape {
                expected: vars.len(),
                got: raw.len(),
            });
        }
        let values = vars
            .iter()
            .zip(raw)
            .map(|(v, &r)| v.scale_to_unit(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(HpVector::new(m, values))
    }

    pub fn to_raw(&self, x: &HpVector) -> Vec<f64> {
        self.algorithms[x.algo]
            .variables
            .iter()
            .zip(&x.values)
            .map(|(v, &u)| v.unscale(u))
            .collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> HpVector {
        let values = self.algorithms[m]
            .variables
            .iter()
            .map(|v| v.sample_uniform(rng))
            .collect();
        HpVector::new(m, values)
    }

    /// Draws [`NEIGHBOR_COUNT`] local perturbations of `center`.
    ///
    /// Continuous coordinates follow `N(center, 0.1)` restricted to `[0, 1]`
    /// by rejection; discrete coordinates are uniform over the integer window
    /// of half-width [`VariableSpec::neighbor_radius`] around the center.
    pub fn neighbor_samples<R: Rng + ?Sized>(&self, center: &HpVector, rng: &mut R) -> Vec<HpVector> {
        let vars = &self.algorithms[center.algo].variables;
        (0..NEIGHBOR_COUNT)
            .map(|_| {
                let values = vars
                    .iter()
                    .zip(&center.values)
                    .map(|(v, &c)| v.sample_neighbor(c, rng))
                    .collect();
                HpVector::new(center.algo, values)
            })
            .collect()
    }
}
