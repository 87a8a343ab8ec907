//! Objective functions: a synthetic stand-in for "train algorithm `m` with
//! hyper-parameters `x` and report validation accuracy", plus a bridge to an
//! external evaluator process for real workloads.
//!
//! Synthetic suites share one hidden latent bowl across all algorithms. Each
//! algorithm maps its unit hyper-parameters through its own affine + tanh map
//! into that bowl, so the objective is genuinely transferable through a
//! common latent space. A suite is generated from a family seed (shared
//! structure) and a descriptor vector (smooth, dataset-like variation);
//! suites with nearby descriptors have similar landscapes.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::obs::Observation;
use crate::rank::MetaFeatureVector;
use crate::space::{AlgorithmSpec, HpVector, SearchSpace, VarKind, VariableSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("evaluator did not answer within {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("evaluator process exited")]
    ChildExited,
    #[error("evaluator reported: {0}")]
    Evaluator(String),
    #[error("could not run evaluator: {0}")]
    Spawn(String),
}

/// Hidden latent dimension of the synthetic bowl.
pub const TRUE_LATENT_DIM: usize = 2;
const OUTPUT_GAIN: f64 = 0.55;
const INPUT_GAIN: f64 = 6.0;
const CENTER_SHIFT: f64 = 0.35;
const OPTIMUM_SHIFT: f64 = 0.06;
const AXIS_STRETCH: f64 = 0.8;

/// Ground truth for one synthetic algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub algo: usize,
    /// Planted optimum in unit coordinates.
    pub center: Vec<f64>,
    /// `TRUE_LATENT_DIM x dim` row-major linear map.
    pub map: Vec<f64>,
    pub y_opt: f64,
    pub noise_std: f64,
}

impl SyntheticTask {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Hidden latent image `T(x) = g * tanh(A (x - c))`.
    pub fn latent(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..TRUE_LATENT_DIM)
            .map(|k| {
                let z: f64 = (0..d).map(|i| self.map[k * d + i] * (x[i] - self.center[i])).sum();
                OUTPUT_GAIN * z.tanh()
            })
            .collect()
    }

    pub fn noiseless(&self, x: &[f64]) -> f64 {
        let t = self.latent(x);
        (self.y_opt - t.iter().map(|v| v * v).sum::<f64>()).clamp(0.0, 1.0)
    }
}

/// Noisy accuracy of `x` under `task`.
pub fn synth_eval<R: Rng + ?Sized>(task: &SyntheticTask, x: &HpVector, rng: &mut R) -> f64 {
    assert_eq!(x.algo, task.algo, "hyper-parameters belong to another algorithm");
    let t = task.latent(&x.values);
    let noise = if task.noise_std > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        task.noise_std * z
    } else {
        0.0
    };
    let y: f64 = task.y_opt - t.iter().map(|v| v * v).sum::<f64>() + noise;
    y.clamp(0.0, 1.0)
}

/// Declarative description of a synthetic suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub family_seed: u64,
    pub descriptor: Vec<f64>,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
}

fn default_noise() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub spec: SuiteSpec,
    pub tasks: Vec<SyntheticTask>,
}

/// The default four-algorithm space: dimensions 2, 3, 3 and 5 with a mix of
/// log-scaled, linear, count and ordinal variables.
pub fn default_space() -> SearchSpace {
    SearchSpace::new(vec![
        AlgorithmSpec::new(
            "svc",
            vec![
                VariableSpec::log_continuous("C", 1e-3, 1e3),
                VariableSpec::log_continuous("gamma", 1e-4, 1e1),
            ],
        ),
        AlgorithmSpec::new(
            "random_forest",
            vec![
                VariableSpec::count("n_estimators", 2, 512),
                VariableSpec::count("max_depth", 1, 50),
                VariableSpec::continuous("max_features", 0.1, 1.0),
            ],
        ),
        AlgorithmSpec::new(
            "knn",
            vec![
                VariableSpec::count("n_neighbors", 1, 50),
                VariableSpec::ordinal("weights", 2),
                VariableSpec::continuous("p", 1.0, 2.0),
            ],
        ),
        AlgorithmSpec::new(
            "mlp",
            vec![
                VariableSpec::log_continuous("alpha", 1e-6, 1e-1),
                VariableSpec::log_continuous("learning_rate", 1e-4, 1e-1),
                VariableSpec::count("hidden_units", 8, 256),
                VariableSpec::count("layers", 1, 4),
                VariableSpec::continuous("momentum", 0.5, 0.99),
            ],
        ),
    ])
    .expect("default space is valid")
}

impl SyntheticSuite {
    /// Deterministically builds a suite for `space`. Discrete coordinates of
    /// the planted optima are snapped onto the space's grid.
    pub fn generate(spec: &SuiteSpec, space: &SearchSpace) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.family_seed);
        let q = spec.descriptor.len();
        let delta: Vec<f64> = spec.descriptor.iter().map(|d| d - 0.5).collect();
        let stretch = delta.first().map_or(0.0, |d| AXIS_STRETCH * d);
        let tasks = space
            .algorithms
            .iter()
            .enumerate()
            .map(|(m, algo)| {
                let dim = algo.dim();
                // Family structure: drawn in a fixed order, independent of the descriptor.
                let base_center: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..0.8)).collect();
                let shift: Vec<f64> = (0..dim * q).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut map = vec![0.0; TRUE_LATENT_DIM * dim];
                for k in 0..TRUE_LATENT_DIM {
                    let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = row.iter().map(|v: &f64| v * v).sum::<f64>().sqrt().max(1e-12);
                    for i in 0..dim {
                        map[k * dim + i] = INPUT_GAIN * row[i] / norm;
                    }
                }
                let base_opt = rng.random_range(0.80..0.92);
                let opt_dir: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();

                let center = (0..dim)
                    .map(|i| {
                        let s: f64 = (0..q).map(|j| shift[i * q + j] * delta[j]).sum();
                        let c = (base_center[i] + CENTER_SHIFT * s).clamp(0.05, 0.95);
                        algo.variables[i].snap(c)
                    })
                    .collect();
                let axis = [1.0 + stretch, 1.0 - stretch];
                for k in 0..TRUE_LATENT_DIM {
                    for i in 0..dim {
                        map[k * dim + i] *= axis[k % 2];
                    }
                }
                let y_opt = base_opt + OPTIMUM_SHIFT * opt_dir.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>();
                SyntheticTask {
                    algo: m,
                    center,
                    map,
                    y_opt: y_opt.clamp(0.05, 0.98),
                    noise_std: spec.noise_std,
                }
            })
            .collect();
        SyntheticSuite {
            spec: spec.clone(),
            tasks,
        }
    }

    /// Best attainable noiseless score over all algorithms.
    pub fn optimum(&self) -> f64 {
        self.tasks.iter().map(|t| t.y_opt).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn meta_features(&self) -> MetaFeatureVector {
        MetaFeatureVector::from_descriptor(&self.spec.descriptor)
    }

    /// Random observations, `per_algo` for each algorithm.
    pub fn sample_observations<R: Rng + ?Sized>(&self, space: &SearchSpace, per_algo: usize, rng: &mut R) -> Vec<Observation> {
        let mut out = Vec::with_capacity(per_algo * self.tasks.len());
        for task in &self.tasks {
            for _ in 0..per_algo {
                let x = space.sample_uniform(task.algo, rng);
                let y = synth_eval(task, &x, rng);
                out.push(Observation::new(x, y));
            }
        }
        out
    }
}

/// Anything that can score a hyper-parameter vector.
pub trait Objective: Send {
    fn evaluate(&mut self, space: &SearchSpace, x: &HpVector) -> Result<f64, EvalError>;
}

/// A synthetic suite with its own noise stream.
pub struct SyntheticObjective {
    pub suite: SyntheticSuite,
    rng: ChaCha8Rng,
}

impl SyntheticObjective {
    pub fn new(suite: SyntheticSuite, seed: u64) -> Self {
        SyntheticObjective {
            suite,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Objective for SyntheticObjective {
    fn evaluate(&mut self, _space: &SearchSpace, x: &HpVector) -> Result<f64, EvalError> {
        Ok(synth_eval(&self.suite.tasks[x.algo], x, &mut self.rng))
    }
}

/// One line sent to an external evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorRequest {
    pub id: u64,
    pub algorithm: String,
    /// Raw (unscaled) hyper-parameter values by variable name.
    pub params: BTreeMap<String, serde_json::Value>,
}

impl EvaluatorRequest {
    pub fn from_hp(id: u64, space: &SearchSpace, x: &HpVector) -> Self {
        let algo = &space.algorithms[x.algo];
        let params = algo
            .variables
            .iter()
            .zip(space.to_raw(x))
            .map(|(v, raw)| {
                let value = match v.kind {
                    VarKind::Continuous => serde_json::Value::from(raw),
                    VarKind::Count | VarKind::Ordinal => serde_json::Value::from(raw as i64),
                };
                (v.name.clone(), value)
            })
            .collect();
        EvaluatorRequest {
            id,
            algorithm: algo.name.clone(),
            params,
        }
    }
}

/// One line received from an external evaluator: exactly one of `accuracy`
/// and `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvaluatorResponse {
    pub fn parse(line: &str, expected_id: u64) -> Result<Self, EvalError> {
        let resp: EvaluatorResponse = serde_json::from_str(line.trim())
            .map_err(|e| EvalError::Protocol(format!("malformed response `{}`: {e}", line.trim())))?;
        if resp.id != expected_id {
            return Err(EvalError::Protocol(format!(
                "response id {} does not match request id {expected_id}",
                resp.id
            )));
        }
        match (&resp.accuracy, &resp.error) {
            (Some(a), None) if a.is_finite() && (0.0..=1.0).contains(a) => Ok(resp),
            (Some(a), None) => Err(EvalError::Protocol(format!("accuracy {a} outside [0, 1]"))),
            (None, Some(_)) => Ok(resp),
            _ => Err(EvalError::Protocol("response needs exactly one of `accuracy` or `error`".into())),
        }
    }
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// A long-lived child process speaking the line protocol on stdin/stdout.
/// One request is in flight at a time.
pub struct ExternalEvaluator {
    command: Vec<String>,
    timeout: Duration,
    running: Option<Running>,
    next_id: u64,
}

impl ExternalEvaluator {
    pub fn new(command: Vec<String>, timeout: Duration) -> Self {
        ExternalEvaluator {
            command,
            timeout,
            running: None,
            next_id: 0,
        }
    }

    fn spawn(&self) -> Result<Running, EvalError> {
        let (prog, args) = self
            .command
            .split_first()
            .ok_or_else(|| EvalError::Spawn("empty evaluator command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::Spawn(format!("{prog}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running {
            child,
            stdin,
            lines: rx,
        })
    }

    fn shutdown(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }

    /// Sends one request and waits for its response line.
    pub fn request(&mut self, req: &EvaluatorRequest) -> Result<EvaluatorResponse, EvalError> {
        if self.running.is_none() {
            self.running = Some(self.spawn()?);
        }
        let line = serde_json::to_string(req).expect("request serializes");
        let running = self.running.as_mut().unwrap();
        let sent = writeln!(running.stdin, "{line}").and_then(|_| running.stdin.flush());
        if sent.is_err() {
            self.shutdown();
            return Err(EvalError::ChildExited);
        }
        let outcome = match running.lines.recv_timeout(self.timeout) {
            Ok(Ok(text)) => EvaluatorResponse::parse(&text, req.id),
            Ok(Err(e)) => Err(EvalError::Protocol(format!("unreadable response: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(EvalError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(EvalError::ChildExited),
        };
        // After a timeout or broken stream the child's state is unknown.
        if matches!(outcome, Err(EvalError::Timeout(_)) | Err(EvalError::ChildExited)) {
            self.shutdown();
        }
        outcome
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Objective for ExternalEvaluator {
    fn evaluate(&mut self, space: &SearchSpace, x: &HpVector) -> Result<f64, EvalError> {
        let id = self.next_id;
        self.next_id += 1;
        let resp = self.request(&EvaluatorRequest::from_hp(id, space, x))?;
        match (resp.accuracy, resp.error) {
            (Some(a), _) => Ok(a),
            (None, Some(e)) => Err(EvalError::Evaluator(e)),
            (None, None) => unreachable!("validated by EvaluatorResponse::parse"),
        }
    }
}

/// Draws `n` descriptors uniformly from the unit cube.
pub fn random_descriptors<R: Rng + ?Sized>(n: usize, q: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..q).map(|_| rng.random()).collect()).collect()
}

/// Descriptor jittered by Gaussian noise and clamped into the unit cube.
pub fn nearby_descriptor<R: Rng + ?Sized>(base: &[f64], spread: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, spread).expect("non-negative spread");
    base.iter().map(|b| (b + normal.sample(rng)).clamp(0.0, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn suite(noise: f64) -> (SearchSpace, SyntheticSuite) {
        let space = default_space();
        let spec = SuiteSpec {
            family_seed: 3,
            descriptor: vec![0.4, 0.7],
            noise_std: noise,
        };
        let s = SyntheticSuite::generate(&spec, &space);
        (space, s)
    }

    #[test]
    fn optimum_is_attained_at_center() {
        let (_, s) = suite(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in &s.tasks {
            let x = HpVector::new(t.algo, t.center.clone());
            assert_eq!(synth_eval(t, &x, &mut rng), t.y_opt);
            assert!(t.center.iter().all(|c| (0.0..=1.0).contains(c)));
            assert!((0.0..=1.0).contains(&t.y_opt));
        }
    }

    #[test]
    fn corner_is_worse_than_optimum() {
        let (_, s) = suite(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in &s.tasks {
            let corner: Vec<f64> = t.center.iter().map(|&c| if c < 0.5 { 1.0 } else { 0.0 }).collect();
            assert!(synth_eval(t, &HpVector::new(t.algo, corner), &mut rng) < t.y_opt);
        }
    }

    #[test]
    fn dense_grid_max_is_close_to_optimum() {
        let (_, s) = suite(0.0);
        let t = &s.tasks[0];
        assert_eq!(t.dim(), 2);
        let mut best = f64::NEG_INFINITY;
        for i in 0..100 {
            for j in 0..100 {
                let x = [i as f64 / 99.0, j as f64 / 99.0];
                best = best.max(t.noiseless(&x));
            }
        }
        assert!(t.y_opt - best <= 0.01, "{best} vs {}", t.y_opt);
        assert!(best <= t.y_opt);
    }

    #[test]
    fn generation_and_noise_are_deterministic() {
        let (space, a) = suite(0.01);
        let (_, b) = suite(0.01);
        assert_eq!(a, b);
        let oa = a.sample_observations(&space, 5, &mut ChaCha8Rng::seed_from_u64(4));
        let ob = b.sample_observations(&space, 5, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(oa, ob);
        assert!(oa.iter().all(|o| (0.0..=1.0).contains(&o.y)));
    }

    #[test]
    fn nearby_descriptors_give_nearby_optima() {
        let space = default_space();
        let gen = |d: Vec<f64>| {
            SyntheticSuite::generate(
                &SuiteSpec {
                    family_seed: 1,
                    descriptor: d,
                    noise_std: 0.0,
                },
                &space,
            )
        };
        let base = gen(vec![0.5, 0.5]);
        let near = gen(vec![0.55, 0.5]);
        let far = gen(vec![1.0, 0.0]);
        let dist = |a: &SyntheticSuite, b: &SyntheticSuite| -> f64 {
            a.tasks
                .iter()
                .zip(&b.tasks)
                .map(|(x, y)| x.center.iter().zip(&y.center).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
                .sum()
        };
        assert!(dist(&base, &near) < dist(&base, &far));
    }

    #[test]
    fn request_carries_raw_values() {
        let space = default_space();
        let x = space.from_raw(2, &[25.0, 2.0, 1.5]).unwrap();
        let req = EvaluatorRequest::from_hp(7, &space, &x);
        let line = serde_json::to_string(&req).unwrap();
        assert_eq!(
            line,
            r#"{"id":7,"algorithm":"knn","params":{"n_neighbors":25,"p":1.5,"weights":2}}"#
        );
    }

    #[test]
    fn response_validation() {
        assert_eq!(EvaluatorResponse::parse(r#"{"id":1,"accuracy":0.5}"#, 1).unwrap().accuracy, Some(0.5));
        assert!(matches!(EvaluatorResponse::parse("not json", 1), Err(EvalError::Protocol(_))));
        assert!(matches!(EvaluatorResponse::parse(r#"{"id":2,"accuracy":0.5}"#, 1), Err(EvalError::Protocol(_))));
        assert!(matches!(EvaluatorResponse::parse(r#"{"id":1,"accuracy":1.5}"#, 1), Err(EvalError::Protocol(_))));
        assert!(matches!(EvaluatorResponse::parse(r#"{"id":1}"#, 1), Err(EvalError::Protocol(_))));
        assert!(EvaluatorResponse::parse(r#"{"id":1,"error":"oom"}"#, 1).unwrap().error.is_some());
    }
}
