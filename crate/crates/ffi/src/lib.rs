//! C interface to the `latentcash` library.
//!
//! Every fallible function returns an [`LcStatus`]; on failure a message is
//! kept per thread and can be read with [`lc_last_error_message`]. Objects
//! are opaque handles created by `*_new`/`*_load` functions and released with
//! the matching `*_free`. Hyper-parameter vectors are exchanged in unit
//! coordinates, one `double` per variable of the chosen algorithm.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use latentcash::acquire::{expected_improvement, maximize_acquisition, AcqConfig};
use latentcash::embed::PtemBundle;
use latentcash::obs::Observation;
use latentcash::rank::ndcg_at_k;
use latentcash::space::{HpVector, SearchSpace};
use latentcash::surrogate::{FitConfig, KernelParams, PriorMean, SurrogateState};
use latentcash::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Domain = 4,
    Shape = 5,
    Numerical = 6,
    Version = 7,
    Fingerprint = 8,
    Corrupt = 9,
    Evaluation = 10,
    Io = 11,
    Panic = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(LcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Domain { .. } => LcStatus::Domain,
            Error::Config(_) => LcStatus::Config,
            Error::Shape { .. } => LcStatus::Shape,
            Error::Numerical(_) => LcStatus::Numerical,
            Error::Version { .. } => LcStatus::Version,
            Error::Fingerprint { .. } => LcStatus::Fingerprint,
            Error::Corrupt(_) => LcStatus::Corrupt,
            Error::Eval(_) => LcStatus::Evaluation,
            Error::Io { .. } => LcStatus::Io,
        };
        Failure(code, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LcStatus::NullPointer, format!("`{what}` is null"))
}

fn shape(expected: usize, got: usize) -> Failure {
    Error::Shape { expected, got }.into()
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LcStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (LcStatus::Ok, String::new()),
        Ok(Err(Failure(code, msg))) => (code, msg),
        Err(_) => (LcStatus::Panic, "internal panic".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LcStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated) and returns its full length in bytes, excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// ---------------------------------------------------------------------------
// Search space

/// Opaque search space.
pub struct LcSpace {
    inner: SearchSpace,
}

/// Parses a search space from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_space_from_toml(toml: *const c_char, out: *mut *mut LcSpace) -> LcStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let out = out_arg(out, "out")?;
        let inner = SearchSpace::from_toml_str(text)?;
        *out = Box::into_raw(Box::new(LcSpace { inner }));
        Ok(())
    })
}

/// The built-in four-algorithm synthetic benchmark space.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_space_default(out: *mut *mut LcSpace) -> LcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(LcSpace {
            inner: latentcash::bench::default_space(),
        }));
        Ok(())
    })
}

/// Number of algorithms, or 0 for a null handle.
///
/// # Safety
/// `space` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_space_num_algorithms(space: *const LcSpace) -> usize {
    space.as_ref().map_or(0, |s| s.inner.num_algorithms())
}

/// Number of hyper-parameters of algorithm `algo`.
///
/// # Safety
/// `space` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_space_dim(space: *const LcSpace, algo: usize, out: *mut usize) -> LcStatus {
    guard(|| {
        let s = ref_arg(space, "space")?;
        let out = out_arg(out, "out")?;
        if algo >= s.inner.num_algorithms() {
            return Err(Error::Config(format!("unknown algorithm index {algo}")).into());
        }
        *out = s.inner.dim(algo);
        Ok(())
    })
}

/// # Safety
/// `space` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_space_free(space: *mut LcSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

// ---------------------------------------------------------------------------
// Pre-trained embeddings

/// Opaque pre-trained embedding bundle.
pub struct LcPtem {
    inner: PtemBundle,
}

/// Loads a PTEM file and checks it against `space`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `space` a live handle; `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_ptem_load(path: *const c_char, space: *const LcSpace, out: *mut *mut LcPtem) -> LcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let space = ref_arg(space, "space")?;
        let out = out_arg(out, "out")?;
        let inner = PtemBundle::load(Path::new(path), &space.inner)?;
        *out = Box::into_raw(Box::new(LcPtem { inner }));
        Ok(())
    })
}

/// Latent dimension, or 0 for a null handle.
///
/// # Safety
/// `ptem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_ptem_latent_dim(ptem: *const LcPtem) -> usize {
    ptem.as_ref().map_or(0, |p| p.inner.latent_dim())
}

/// Embeds one hyper-parameter vector of algorithm `algo`.
///
/// # Safety
/// `x` must point to `x_len` doubles and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_ptem_embed(
    ptem: *const LcPtem,
    algo: usize,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> LcStatus {
    guard(|| {
        let p = ref_arg(ptem, "ptem")?;
        let model = p
            .inner
            .models
            .get(algo)
            .ok_or_else(|| Failure::from(Error::Config(format!("unknown algorithm index {algo}"))))?;
        if x_len != model.input_dim() {
            return Err(shape(model.input_dim(), x_len));
        }
        if out_len != model.latent_dim() {
            return Err(shape(model.latent_dim(), out_len));
        }
        let x = slice_arg(x, x_len, "x")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let u = model.forward(x);
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&u);
        Ok(())
    })
}

/// # Safety
/// `ptem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_ptem_free(ptem: *mut LcPtem) {
    if !ptem.is_null() {
        drop(Box::from_raw(ptem));
    }
}

// ---------------------------------------------------------------------------
// Surrogate

/// Opaque multi-task GP surrogate over a search space.
pub struct LcSurrogate {
    space: SearchSpace,
    state: SurrogateState,
    pretrained: Option<PtemBundle>,
    fit: FitConfig,
}

/// Creates a surrogate. With a PTEM its embeddings and best score seed the
/// model; without one (`ptem` null) embeddings of dimension `latent_dim` are
/// drawn from `seed`.
///
/// # Safety
/// `space` must be a live handle, `ptem` null or a live handle, `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_surrogate_new(
    space: *const LcSpace,
    ptem: *const LcPtem,
    latent_dim: usize,
    seed: u64,
    out: *mut *mut LcSurrogate,
) -> LcStatus {
    guard(|| {
        let space = ref_arg(space, "space")?.inner.clone();
        let out = out_arg(out, "out")?;
        let pretrained = ptem.as_ref().map(|p| p.inner.clone());
        let (models, prior) = match &pretrained {
            Some(p) => {
                p.validate_against(&space)?;
                (p.models.clone(), PriorMean::Quadratic { y_best: p.y_best })
            }
            None => {
                if latent_dim == 0 {
                    return Err(Error::Config("latent dimension must be positive".into()).into());
                }
                let cfg = latentcash::driver::RunConfig {
                    seed,
                    latent_dim,
                    ..Default::default()
                };
                (latentcash::driver::random_models(&space, &cfg), PriorMean::Quadratic { y_best: 0.0 })
            }
        };
        let fit = FitConfig {
            mode: if pretrained.is_some() {
                FitConfig::default().mode
            } else {
                latentcash::embed::TrainMode::All
            },
            ..FitConfig::default()
        };
        let state = SurrogateState::new(KernelParams::new(space.num_algorithms()), models, prior)?;
        *out = Box::into_raw(Box::new(LcSurrogate {
            space,
            state,
            pretrained,
            fit,
        }));
        Ok(())
    })
}

/// Fits the surrogate to `n` observations. `algos[i]` names the algorithm
/// of observation `i`; `xs` holds their unit-coordinate vectors back to back
/// (`xs_len` doubles in total) and `ys` their scores.
///
/// # Safety
/// Array arguments must point to the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn lc_surrogate_fit(
    surrogate: *mut LcSurrogate,
    algos: *const u32,
    xs: *const f64,
    xs_len: usize,
    ys: *const f64,
    n: usize,
) -> LcStatus {
    guard(|| {
        let s = out_arg(surrogate, "surrogate")?;
        let algos = slice_arg(algos, n, "algos")?;
        let ys = slice_arg(ys, n, "ys")?;
        let xs = slice_arg(xs, xs_len, "xs")?;
        let mut obs = Vec::with_capacity(n);
        let mut at = 0;
        for (&m, &y) in algos.iter().zip(ys) {
            let m = m as usize;
            if m >= s.space.num_algorithms() {
                return Err(Error::Config(format!("unknown algorithm index {m}")).into());
            }
            let d = s.space.dim(m);
            let x = xs.get(at..at + d).ok_or_else(|| shape(at + d, xs_len))?;
            at += d;
            let hp = HpVector::new(m, x.to_vec());
            s.space.check(&hp)?;
            obs.push(Observation::new(hp, y));
        }
        if at != xs_len {
            return Err(shape(at, xs_len));
        }
        if s.pretrained.is_none() {
            let best = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s.state.prior = PriorMean::Quadratic { y_best: best };
        }
        s.state.fit(&obs, &s.fit, s.pretrained.as_ref())?;
        Ok(())
    })
}

/// Posterior mean and variance at one point of algorithm `algo`.
///
/// # Safety
/// `x` must point to `x_len` doubles; `mean` and `var` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_surrogate_posterior(
    surrogate: *const LcSurrogate,
    algo: usize,
    x: *const f64,
    x_len: usize,
    mean: *mut f64,
    var: *mut f64,
) -> LcStatus {
    guard(|| {
        let s = ref_arg(surrogate, "surrogate")?;
        let hp = point(&s.space, algo, x, x_len)?;
        let (mu, v) = s.state.posterior(&hp);
        *out_arg(mean, "mean")? = mu;
        *out_arg(var, "var")? = v;
        Ok(())
    })
}

unsafe fn point(space: &SearchSpace, algo: usize, x: *const f64, x_len: usize) -> Result<HpVector, Failure> {
    if algo >= space.num_algorithms() {
        return Err(Error::Config(format!("unknown algorithm index {algo}")).into());
    }
    if x_len != space.dim(algo) {
        return Err(shape(space.dim(algo), x_len));
    }
    let hp = HpVector::new(algo, slice_arg(x, x_len, "x")?.to_vec());
    space.check(&hp)?;
    Ok(hp)
}

/// Maximizes expected improvement over `y_best` across all algorithms.
/// Writes the chosen algorithm, its unit-coordinate vector (into `x_out`,
/// which must hold the largest algorithm dimension; the written length goes
/// to `x_len_out`) and the EI value.
///
/// # Safety
/// `x_out` must point to `x_cap` writable doubles; other outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_surrogate_suggest(
    surrogate: *const LcSurrogate,
    y_best: f64,
    seed: u64,
    algo_out: *mut usize,
    x_out: *mut f64,
    x_cap: usize,
    x_len_out: *mut usize,
    ei_out: *mut f64,
) -> LcStatus {
    guard(|| {
        let s = ref_arg(surrogate, "surrogate")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = maximize_acquisition(&s.state, &s.space, y_best, &mut rng, &AcqConfig::default());
        let d = r.x.dim();
        if x_cap < d {
            return Err(shape(d, x_cap));
        }
        if x_out.is_null() {
            return Err(null("x_out"));
        }
        std::slice::from_raw_parts_mut(x_out, d).copy_from_slice(&r.x.values);
        *out_arg(algo_out, "algo_out")? = r.algo;
        *out_arg(x_len_out, "x_len_out")? = d;
        *out_arg(ei_out, "ei_out")? = r.value;
        Ok(())
    })
}

/// # Safety
/// `surrogate` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_surrogate_free(surrogate: *mut LcSurrogate) {
    if !surrogate.is_null() {
        drop(Box::from_raw(surrogate));
    }
}

// ---------------------------------------------------------------------------
// Stateless helpers

/// `E[max(f - y_best, 0)]` for `f ~ N(mu, sigma^2)`.
#[no_mangle]
pub extern "C" fn lc_expected_improvement(mu: f64, sigma: f64, y_best: f64) -> f64 {
    expected_improvement(mu, sigma, y_best)
}

/// NDCG@k of ordering `n` items by `predicted` given their `truth` scores.
///
/// # Safety
/// `truth` and `predicted` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_ndcg_at_k(
    truth: *const f64,
    predicted: *const f64,
    n: usize,
    k: usize,
    out: *mut f64,
) -> LcStatus {
    guard(|| {
        if k == 0 || k > n {
            return Err(Error::Config(format!("k = {k} outside 1..={n}")).into());
        }
        let t = slice_arg(truth, n, "truth")?;
        let p = slice_arg(predicted, n, "predicted")?;
        *out_arg(out, "out")? = ndcg_at_k(t, p, k);
        Ok(())
    })
}
