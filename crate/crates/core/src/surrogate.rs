//! Multi-task GP over embedded hyper-parameters.
//!
//! Each observation `(m, x, y)` is mapped to a latent point `u = phi_m(x)`.
//! The covariance between two observations is
//! `B[m, m'] * exp(-|u - u'|^2 / (2 l^2))` with a rank-one-plus-diagonal task
//! matrix `B = w w^T + diag(v)`, and the prior mean is the quadratic bowl
//! `-|u|^2 + y_best'` learned during pre-training.
//!
//! All GP algebra runs on standardized scores; [`Standardization`] maps the
//! prior mean with the same affine transform, and [`SurrogateState::posterior`]
//! reports results in raw score units.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingModel, PtemBundle, Tape, TrainMode};
use crate::error::{Error, Result};
use crate::obs::Observation;
use crate::optim::Adam;
use crate::space::HpVector;

/// Diagonal jitter tried, in order, when the covariance is not numerically PD.
pub const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

const LOG_LENGTHSCALE_RANGE: (f64, f64) = (-4.605170185988091, 4.605170185988091); // ln 1e-2 .. ln 1e2
const LOG_NOISE_RANGE: (f64, f64) = (-9.210340371976182, 2.302585092994046); // ln 1e-4 .. ln 10
const LOG_TASK_VAR_RANGE: (f64, f64) = (-4.605170185988091, 4.605170185988091); // ln 1e-2 .. ln 1e2
const LMC_RANGE: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub log_lengthscale: f64,
    /// Log of the observation noise variance.
    pub log_noise: f64,
    /// Rank-one coregionalization factor `w`.
    pub lmc: Vec<f64>,
    /// Log of the per-task diagonal `v`.
    pub log_task_var: Vec<f64>,
}

impl KernelParams {
    pub fn new(num_tasks: usize) -> Self {
        KernelParams {
            log_lengthscale: 0.5f64.ln(),
            log_noise: 1e-2f64.ln(),
            lmc: vec![0.5; num_tasks],
            log_task_var: vec![0.0; num_tasks],
        }
    }

    /// Same defaults with `w = 0`, i.e. uncoupled tasks.
    pub fn independent(num_tasks: usize) -> Self {
        KernelParams {
            lmc: vec![0.0; num_tasks],
            ..Self::new(num_tasks)
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.lmc.len()
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn task_cov(&self, a: usize, b: usize) -> f64 {
        let diag = if a == b { self.log_task_var[a].exp() } else { 0.0 };
        self.lmc[a] * self.lmc[b] + diag
    }

    pub fn task_matrix(&self) -> DMatrix<f64> {
        let m = self.num_tasks();
        DMatrix::from_fn(m, m, |a, b| self.task_cov(a, b))
    }

    /// Flat layout used by the optimizer: `[log l, log noise, w.., log v..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.log_lengthscale, self.log_noise];
        v.extend(&self.lmc);
        v.extend(&self.log_task_var);
        v
    }

    pub fn set_from_slice(&mut self, v: &[f64]) {
        let m = self.num_tasks();
        assert_eq!(v.len(), 2 + 2 * m);
        self.log_lengthscale = v[0];
        self.log_noise = v[1];
        self.lmc.copy_from_slice(&v[2..2 + m]);
        self.log_task_var.copy_from_slice(&v[2 + m..]);
    }

    fn project(&mut self) {
        let clamp = |x: &mut f64, (lo, hi): (f64, f64)| *x = x.clamp(lo, hi);
        clamp(&mut self.log_lengthscale, LOG_LENGTHSCALE_RANGE);
        clamp(&mut self.log_noise, LOG_NOISE_RANGE);
        self.lmc.iter_mut().for_each(|w| clamp(w, LMC_RANGE));
        self.log_task_var.iter_mut().for_each(|v| clamp(v, LOG_TASK_VAR_RANGE));
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Covariance between latent point `u` of task `m` and `u2` of task `m2`.
pub fn kernel_eval(p: &KernelParams, u: &[f64], m: usize, u2: &[f64], m2: usize) -> f64 {
    let l = p.lengthscale();
    p.task_cov(m, m2) * (-sq_dist(u, u2) / (2.0 * l * l)).exp()
}

/// Quadratic prior mean `-|u|^2 + y_best`.
pub fn prior_mean(u: &[f64], y_best: f64) -> f64 {
    -u.iter().map(|v| v * v).sum::<f64>() + y_best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorMean {
    Quadratic { y_best: f64 },
    /// Zero in standardized units, i.e. the mean of the observed scores.
    Constant,
}

/// Affine map `y -> (y - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub shift: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn identity() -> Self {
        Standardization { shift: 0.0, scale: 1.0 }
    }

    /// Zero mean, unit (population) variance; falls back to unit scale when
    /// the scores carry no spread.
    pub fn from_scores(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::identity();
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        Standardization {
            shift: mean,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub steps: usize,
    pub lr_kernel: f64,
    pub lr_embed: f64,
    /// Weight of the pull towards the pre-trained embedding weights.
    pub alpha: f64,
    pub mode: TrainMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 200,
            lr_kernel: 1e-2,
            lr_embed: 1e-3,
            alpha: 1e-3,
            mode: TrainMode::LastLayer,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss of every evaluated iterate, starting with the entry point.
    pub trace: Vec<f64>,
}

/// Loss and its gradient with respect to [`KernelParams::to_vec`] and every
/// embedding parameter.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub kernel: Vec<f64>,
    pub embed: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
struct Cache {
    latent: Vec<Vec<f64>>,
    tasks: Vec<usize>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: Option<DVector<f64>>,
    jitter: f64,
}

#[derive(Debug, Clone)]
pub struct SurrogateState {
    pub params: KernelParams,
    pub models: Vec<EmbeddingModel>,
    pub prior: PriorMean,
    fixed_standardization: Option<Standardization>,
    standardization: Standardization,
    obs: Vec<Observation>,
    cache: Cache,
}

fn cholesky_with_jitter(c: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = c.clone().cholesky() {
        return Ok((ch, 0.0));
    }
    for &j in &JITTER_LADDER {
        let mut cj = c.clone();
        for i in 0..cj.nrows() {
            cj[(i, i)] += j;
        }
        if let Some(ch) = cj.cholesky() {
            return Ok((ch, j));
        }
    }
    Err(Error::Numerical(format!(
        "covariance not positive definite after jitter {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

impl SurrogateState {
    pub fn new(params: KernelParams, models: Vec<EmbeddingModel>, prior: PriorMean) -> Result<Self> {
        if models.len() != params.num_tasks() {
            return Err(Error::Shape {
                expected: params.num_tasks(),
                got: models.len(),
            });
        }
        let d = models[0].latent_dim();
        if let Some(m) = models.iter().find(|m| m.latent_dim() != d) {
            return Err(Error::Shape {
                expected: d,
                got: m.latent_dim(),
            });
        }
        Ok(SurrogateState {
            params,
            models,
            prior,
            fixed_standardization: None,
            standardization: Standardization::identity(),
            obs: Vec::new(),
            cache: Cache::default(),
        })
    }

    /// Pins the score standardization instead of re-deriving it from the data
    /// on every refit.
    pub fn with_fixed_standardization(mut self, s: Standardization) -> Self {
        self.fixed_standardization = Some(s);
        self.standardization = s;
        self
    }

    /// Replaces (or with `None`, releases) the pinned standardization; takes
    /// effect at the next `set_data` or `fit`.
    pub fn set_fixed_standardization(&mut self, s: Option<Standardization>) {
        self.fixed_standardization = s;
    }

    pub fn num_tasks(&self) -> usize {
        self.models.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.models[0].latent_dim()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    /// Jitter added to the covariance diagonal by the last rebuild.
    pub fn jitter(&self) -> f64 {
        self.cache.jitter
    }

    /// Embedded training inputs, in observation order.
    pub fn latent_points(&self) -> &[Vec<f64>] {
        &self.cache.latent
    }

    pub fn embed(&self, x: &HpVector) -> Vec<f64> {
        self.models[x.algo].forward(&x.values)
    }

    /// Prior mean in standardized units.
    fn prior_std(&self, u: &[f64]) -> f64 {
        match self.prior {
            PriorMean::Quadratic { y_best } => self.standardization.apply(prior_mean(u, y_best)),
            PriorMean::Constant => 0.0,
        }
    }

    fn check_obs(&self, obs: &[Observation]) -> Result<()> {
        for o in obs {
            let m = o.algo();
            if m >= self.num_tasks() {
                return Err(Error::config(format!("observation for unknown algorithm {m}")));
            }
            if o.x.dim() != self.models[m].input_dim() {
                return Err(Error::Shape {
                    expected: self.models[m].input_dim(),
                    got: o.x.dim(),
                });
            }
            if !o.y.is_finite() {
                return Err(Error::Numerical(format!("non-finite score {}", o.y)));
            }
        }
        Ok(())
    }

    /// Replaces the training data and rebuilds the cached factorization.
    pub fn set_data(&mut self, obs: &[Observation]) -> Result<()> {
        self.check_obs(obs)?;
        self.obs = obs.to_vec();
        self.standardization = self.fixed_standardization.unwrap_or_else(|| {
            Standardization::from_scores(&obs.iter().map(|o| o.y).collect::<Vec<_>>())
        });
        self.rebuild()
    }

    /// Recomputes the cache from the current parameters and data.
    pub fn rebuild(&mut self) -> Result<()> {
        let latent: Vec<Vec<f64>> = self.obs.iter().map(|o| self.embed(&o.x)).collect();
        let tasks: Vec<usize> = self.obs.iter().map(Observation::algo).collect();
        let n = latent.len();
        if n == 0 {
            self.cache = Cache::default();
            return Ok(());
        }
        let resid = DVector::from_fn(n, |i, _| self.standardization.apply(self.obs[i].y) - self.prior_std(&latent[i]));
        let c = self.covariance(&latent, &tasks);
        let (chol, jitter) = cholesky_with_jitter(&c)?;
        let alpha = chol.solve(&resid);
        self.cache = Cache {
            latent,
            tasks,
            chol: Some(chol),
            alpha: Some(alpha),
            jitter,
        };
        Ok(())
    }

    fn covariance(&self, latent: &[Vec<f64>], tasks: &[usize]) -> DMatrix<f64> {
        let n = latent.len();
        let noise = self.params.noise();
        DMatrix::from_fn(n, n, |i, j| {
            let k = kernel_eval(&self.params, &latent[i], tasks[i], &latent[j], tasks[j]);
            if i == j { k + noise } else { k }
        })
    }

    /// Posterior mean and variance of the latent objective at `u` for task
    /// `m`, in raw score units.
    pub fn posterior_latent(&self, u: &[f64], m: usize) -> (f64, f64) {
        let prior = self.prior_std(u);
        let kss = self.params.task_cov(m, m);
        let (mean_s, var_s) = match (&self.cache.chol, &self.cache.alpha) {
            (Some(chol), Some(alpha)) => {
                let k = DVector::from_fn(self.cache.latent.len(), |i, _| {
                    kernel_eval(&self.params, u, m, &self.cache.latent[i], self.cache.tasks[i])
                });
                let mean = prior + k.dot(alpha);
                let v = chol.l_dirty().solve_lower_triangular(&k).expect("non-singular factor");
                (mean, (kss - v.dot(&v)).max(0.0))
            }
            _ => (prior, kss),
        };
        let s = self.standardization;
        (s.shift + s.scale * mean_s, s.scale * s.scale * var_s)
    }

    pub fn posterior(&self, x: &HpVector) -> (f64, f64) {
        self.posterior_latent(&self.embed(x), x.algo)
    }

    /// Negative log marginal likelihood plus the pre-training regularizer.
    pub fn nll_loss(&self, alpha: f64, pre: Option<&PtemBundle>) -> Result<f64> {
        Ok(self.loss_and_grad(alpha, pre, &vec![false; self.num_tasks()])?.loss)
    }

    /// [`nll_loss`](Self::nll_loss) with gradients. Embedding gradients are
    /// only computed for models flagged in `embed_grads`; the others are zero.
    pub fn loss_and_grad(&self, alpha: f64, pre: Option<&PtemBundle>, embed_grads: &[bool]) -> Result<LossGrad> {
        let n = self.obs.len();
        if n == 0 {
            return Err(Error::config("marginal likelihood needs at least one observation"));
        }
        if let Some(b) = pre {
            if b.models.len() != self.num_tasks() {
                return Err(Error::Shape {
                    expected: self.num_tasks(),
                    got: b.models.len(),
                });
            }
        }
        let p = &self.params;
        let m_tasks = self.num_tasks();
        let tapes: Vec<Tape> = self.obs.iter().map(|o| self.models[o.algo()].forward_tape(&o.x.values)).collect();
        let latent: Vec<&[f64]> = tapes.iter().map(Tape::output).collect();
        let tasks: Vec<usize> = self.obs.iter().map(Observation::algo).collect();

        let l = p.lengthscale();
        let inv_l2 = 1.0 / (l * l);
        let mut dist = DMatrix::zeros(n, n);
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let d2 = sq_dist(latent[i], latent[j]);
                let kij = p.task_cov(tasks[i], tasks[j]) * (-0.5 * d2 * inv_l2).exp();
                dist[(i, j)] = d2;
                dist[(j, i)] = d2;
                k[(i, j)] = kij;
                k[(j, i)] = kij;
            }
        }
        let noise = p.noise();
        let mut c = k.clone();
        for i in 0..n {
            c[(i, i)] += noise;
        }
        let (chol, _) = cholesky_with_jitter(&c)?;
        let resid = DVector::from_fn(n, |i, _| self.standardization.apply(self.obs[i].y) - self.prior_std(latent[i]));
        let a = chol.solve(&resid);
        let logdet_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let mut loss = 0.5 * resid.dot(&a) + logdet_half;

        let mut embed_grad: Vec<Vec<f64>> = self.models.iter().map(|m| vec![0.0; m.param_count()]).collect();
        if let Some(b) = pre {
            for (mi, (model, pre_model)) in self.models.iter().zip(&b.models).enumerate() {
                let km = model.param_count() as f64;
                let mut sq = 0.0;
                for (g, (t, t0)) in embed_grad[mi].iter_mut().zip(model.params().iter().zip(pre_model.params())) {
                    let diff = t - t0;
                    sq += diff * diff;
                    *g += 2.0 * alpha * diff / km;
                }
                loss += alpha * sq / km;
            }
        }

        // dL/dC = (C^-1 - a a^T) / 2
        let cinv = chol.inverse();
        let g = DMatrix::from_fn(n, n, |i, j| 0.5 * (cinv[(i, j)] - a[i] * a[j]));

        let mut kgrad = vec![0.0; 2 + 2 * m_tasks];
        kgrad[1] = noise * (0..n).map(|i| g[(i, i)]).sum::<f64>();
        let mut dtask = DMatrix::<f64>::zeros(m_tasks, m_tasks);
        let mut dls = 0.0;
        for i in 0..n {
            for j in 0..n {
                let gij = g[(i, j)];
                let kij = k[(i, j)];
                dls += gij * kij * dist[(i, j)] * inv_l2;
                let e = (-0.5 * dist[(i, j)] * inv_l2).exp();
                dtask[(tasks[i], tasks[j])] += gij * e;
            }
        }
        kgrad[0] = dls;
        for ta in 0..m_tasks {
            let mut dw = 0.0;
            for tb in 0..m_tasks {
                dw += (dtask[(ta, tb)] + dtask[(tb, ta)]) * p.lmc[tb];
            }
            kgrad[2 + ta] = dw;
            kgrad[2 + m_tasks + ta] = dtask[(ta, ta)] * p.log_task_var[ta].exp();
        }

        if embed_grads.iter().any(|&b| b) {
            let quad_scale = match self.prior {
                PriorMean::Quadratic { .. } => Some(self.standardization.scale),
                PriorMean::Constant => None,
            };
            let d = self.latent_dim();
            for i in 0..n {
                if !embed_grads[tasks[i]] {
                    continue;
                }
                let mut du = vec![0.0; d];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let coef = -2.0 * g[(i, j)] * k[(i, j)] * inv_l2;
                    for (q, dq) in du.iter_mut().enumerate() {
                        *dq += coef * (latent[i][q] - latent[j][q]);
                    }
                }
                if let Some(scale) = quad_scale {
                    // r_i = y_i - mu0(u_i), mu0 = (-|u|^2 + y') / scale + const
                    for (q, dq) in du.iter_mut().enumerate() {
                        *dq += a[i] * 2.0 * latent[i][q] / scale;
                    }
                }
                self.models[tasks[i]].backward(&tapes[i], &du, &mut embed_grad[tasks[i]]);
            }
        }

        Ok(LossGrad {
            loss,
            kernel: kgrad,
            embed: embed_grad,
        })
    }

    /// Fits kernel parameters and the trainable embedding weights to `obs`
    /// with Adam, keeping the best iterate.
    pub fn fit(&mut self, obs: &[Observation], cfg: &FitConfig, pre: Option<&PtemBundle>) -> Result<FitReport> {
        if obs.is_empty() {
            return Err(Error::config("fitting needs at least one observation"));
        }
        self.check_obs(obs)?;
        self.obs = obs.to_vec();
        self.standardization = self.fixed_standardization.unwrap_or_else(|| {
            Standardization::from_scores(&obs.iter().map(|o| o.y).collect::<Vec<_>>())
        });

        let masks: Vec<Vec<bool>> = self.models.iter().map(|m| m.trainable_mask(cfg.mode)).collect();
        let embed_grads: Vec<bool> = masks.iter().map(|m| m.iter().any(|&b| b)).collect();
        let mut kopt = Adam::new(self.params.to_vec().len(), cfg.lr_kernel);
        let mut eopt: Vec<Adam> = self.models.iter().map(|m| Adam::new(m.param_count(), cfg.lr_embed)).collect();

        let mut trace = Vec::with_capacity(cfg.steps + 1);
        let mut best: Option<(f64, KernelParams, Vec<EmbeddingModel>)> = None;
        for step in 0..=cfg.steps {
            let lg = match self.loss_and_grad(cfg.alpha, pre, &embed_grads) {
                Ok(lg) if lg.loss.is_finite() => lg,
                Ok(_) | Err(Error::Numerical(_)) if step > 0 => break,
                Ok(lg) => return Err(Error::Numerical(format!("non-finite loss {}", lg.loss))),
                Err(e) => return Err(e),
            };
            trace.push(lg.loss);
            if best.as_ref().is_none_or(|(b, _, _)| lg.loss < *b) {
                best = Some((lg.loss, self.params.clone(), self.models.clone()));
            }
            if step == cfg.steps {
                break;
            }
            let mut kv = self.params.to_vec();
            kopt.step(&mut kv, &lg.kernel, None);
            self.params.set_from_slice(&kv);
            self.params.project();
            for (mi, model) in self.models.iter_mut().enumerate() {
                if embed_grads[mi] {
                    eopt[mi].step(model.params_mut(), &lg.embed[mi], Some(&masks[mi]));
                }
            }
        }
        let (final_loss, params, models) = best.expect("at least one evaluation");
        self.params = params;
        self.models = models;
        self.rebuild()?;
        Ok(FitReport {
            initial_loss: trace[0],
            final_loss,
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::DEFAULT_HIDDEN;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_basics() {
        let mut p = KernelParams::new(2);
        p.lmc = vec![0.7, -0.3];
        p.log_task_var = vec![0.2f64.ln(), 0.5f64.ln()];
        let u = [0.1, 0.2, 0.3];
        assert!((kernel_eval(&p, &u, 0, &u, 0) - (0.49 + 0.2)).abs() < 1e-15);
        assert!(kernel_eval(&p, &u, 0, &[1e3, 0.0, 0.0], 1).abs() < 1e-300);
        let v = [0.4, -0.2, 0.0];
        assert_eq!(kernel_eval(&p, &u, 0, &v, 1), kernel_eval(&p, &v, 1, &u, 0));
        p.lmc = vec![0.0, 0.0];
        assert_eq!(kernel_eval(&p, &u, 0, &v, 1), 0.0);
    }

    #[test]
    fn prior_mean_values() {
        assert_eq!(prior_mean(&[0.0, 0.0, 0.0], 0.7), 0.7);
        assert_eq!(prior_mean(&[1.0, 0.0, 0.0], 1.0), 0.0);
        assert!((prior_mean(&[1.0, 1.0, 1.0], 0.9) + 2.1).abs() < 1e-15);
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> SurrogateState {
        let dims = [2, 3];
        let models = dims.iter().map(|&d| EmbeddingModel::new(d, 3, DEFAULT_HIDDEN, rng)).collect();
        let mut state = SurrogateState::new(KernelParams::new(2), models, PriorMean::Quadratic { y_best: 0.9 }).unwrap();
        let obs: Vec<Observation> = (0..n)
            .map(|i| {
                let m = i % 2;
                let x = HpVector::new(m, (0..dims[m]).map(|_| rng.random()).collect());
                Observation::new(x, rng.random_range(0.3..0.9))
            })
            .collect();
        state.set_data(&obs).unwrap();
        state
    }

    #[test]
    fn interpolates_with_tiny_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = random_state(&mut rng, 6);
        state.params.log_noise = 1e-10f64.ln();
        state.rebuild().unwrap();
        for o in state.observations().to_vec() {
            let (mu, var) = state.posterior(&o.x);
            assert!((mu - o.y).abs() < 1e-4, "{mu} vs {}", o.y);
            assert!(var < 1e-4);
        }
    }

    #[test]
    fn empty_posterior_is_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let models = vec![EmbeddingModel::new(2, 3, DEFAULT_HIDDEN, &mut rng)];
        let state = SurrogateState::new(KernelParams::new(1), models, PriorMean::Quadratic { y_best: 0.8 }).unwrap();
        let x = HpVector::new(0, vec![0.3, 0.6]);
        let u = state.embed(&x);
        let (mu, var) = state.posterior(&x);
        assert_eq!(mu, prior_mean(&u, 0.8));
        assert_eq!(var, kernel_eval(&state.params, &u, 0, &u, 0));
    }

    #[test]
    fn single_observation_at_prior_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let models = vec![EmbeddingModel::new(2, 3, DEFAULT_HIDDEN, &mut rng)];
        let mut state = SurrogateState::new(KernelParams::new(1), models, PriorMean::Quadratic { y_best: 0.8 })
            .unwrap()
            .with_fixed_standardization(Standardization::identity());
        let x = HpVector::new(0, vec![0.3, 0.6]);
        let y = prior_mean(&state.embed(&x), 0.8);
        state.set_data(&[Observation::new(x.clone(), y)]).unwrap();
        let u = state.embed(&x);
        let expected = 0.5 * (kernel_eval(&state.params, &u, 0, &u, 0) + state.params.noise()).ln();
        assert!((state.nll_loss(1e-3, None).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn regularizer_vanishes_at_pretrained_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let state = random_state(&mut rng, 5);
        let bundle = PtemBundle {
            models: state.models.clone(),
            y_best: 0.9,
            source_id: "s".into(),
            fingerprint: String::new(),
        };
        assert_eq!(state.nll_loss(10.0, Some(&bundle)).unwrap(), state.nll_loss(0.0, None).unwrap());
    }

    #[test]
    fn gram_matrices_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let m = 3;
            let mut p = KernelParams::new(m);
            p.log_lengthscale = rng.random_range(-2.0..1.0);
            p.lmc = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            p.log_task_var = (0..m).map(|_| rng.random_range(-4.0..1.0)).collect();
            let pts: Vec<(Vec<f64>, usize)> = (0..15)
                .map(|_| ((0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(0..m)))
                .collect();
            let k = DMatrix::from_fn(15, 15, |i, j| kernel_eval(&p, &pts[i].0, pts[i].1, &pts[j].0, pts[j].1));
            assert_eq!(k, k.transpose());
            let min_eig = k.symmetric_eigen().eigenvalues.min();
            assert!(min_eig > -1e-8, "min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn posterior_variance_below_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let state = random_state(&mut rng, 12);
        let s = state.standardization().scale;
        for _ in 0..500 {
            let m = rng.random_range(0..2);
            let x = HpVector::new(m, (0..[2, 3][m]).map(|_| rng.random()).collect());
            let u = state.embed(&x);
            let (_, var) = state.posterior(&x);
            assert!(var <= s * s * kernel_eval(&state.params, &u, m, &u, m) + 1e-10);
        }
    }

    #[test]
    fn fit_keeps_best_iterate_and_lr_zero_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut state = random_state(&mut rng, 10);
        let obs = state.observations().to_vec();
        let cfg = FitConfig {
            steps: 40,
            lr_kernel: 0.0,
            lr_embed: 0.0,
            ..FitConfig::default()
        };
        let before = (state.params.clone(), state.models.clone());
        state.fit(&obs, &cfg, None).unwrap();
        assert_eq!(state.params, before.0);
        assert_eq!(state.models, before.1);

        let report = state.fit(&obs, &FitConfig { steps: 60, ..FitConfig::default() }, None).unwrap();
        assert!(report.final_loss <= report.initial_loss);
        assert_eq!(report.final_loss, report.trace.iter().cloned().fold(f64::INFINITY, f64::min));
        assert!((state.nll_loss(1e-3, None).unwrap() - report.final_loss).abs() < 1e-9);
    }

    #[test]
    fn masked_fit_leaves_frozen_layers_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut state = random_state(&mut rng, 10);
        let obs = state.observations().to_vec();
        let before = state.models.clone();
        state
            .fit(&obs, &FitConfig { steps: 30, lr_embed: 1e-2, ..FitConfig::default() }, None)
            .unwrap();
        for (a, b) in state.models.iter().zip(&before) {
            let start = a.mlp().last_layer_offset();
            assert!(a.params()[..start].iter().zip(&b.params()[..start]).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn no_data_nll_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let models = vec![EmbeddingModel::new(2, 3, DEFAULT_HIDDEN, &mut rng)];
        let state = SurrogateState::new(KernelParams::new(1), models, PriorMean::Constant).unwrap();
        assert!(matches!(state.nll_loss(0.0, None), Err(Error::Config(_))));
    }
}
