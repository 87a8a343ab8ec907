//! Expected improvement and its maximization over every algorithm's space.
//!
//! The maximizer is a multi-start stochastic hill climber: from each random
//! start it repeatedly draws ten neighbors, moves to the best one, and stops
//! once no neighbor strictly improves the acquisition value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::space::{HpVector, SearchSpace, VarKind};
use crate::surrogate::SurrogateState;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[max(f - y_best, 0)]` for `f ~ N(mu, sigma^2)`.
pub fn expected_improvement(mu: f64, sigma: f64, y_best: f64) -> f64 {
    let gap = mu - y_best;
    if !(sigma > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// `ln(1 - x R(x))` for `x >= 0`, where `R` is the Mills ratio `Phi(-x) / phi(x)`.
fn log_one_minus_x_mills(x: f64) -> f64 {
    if x > 1e3 {
        // Asymptotic series; the continued fraction loses every digit here.
        let r = 1.0 / (x * x);
        return (r * (1.0 - 3.0 * r + 15.0 * r * r)).ln();
    }
    // Lentz-free backward evaluation of R(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...)))).
    let mut tail = x;
    for k in (1..=200).rev() {
        tail = x + k as f64 / tail;
    }
    (1.0 - x / tail).ln()
}

/// Natural log of [`expected_improvement`], accurate where the plain value
/// underflows to zero.
pub fn log_expected_improvement(mu: f64, sigma: f64, y_best: f64) -> f64 {
    let gap = mu - y_best;
    if !(sigma > 0.0) {
        return if gap > 0.0 { gap.ln() } else { f64::NEG_INFINITY };
    }
    let z = gap / sigma;
    if z > -5.0 {
        return (z * normal_cdf(z) + normal_pdf(z)).ln() + sigma.ln();
    }
    // z * Phi(z) + phi(z) = phi(z) (1 - x R(x)) with x = -z.
    INV_SQRT_2PI.ln() - 0.5 * z * z + log_one_minus_x_mills(-z) + sigma.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcqConfig {
    pub restarts: usize,
    /// Hill-climbing iterations allowed per restart.
    pub max_iters: usize,
    /// Ordinal variables up to this cardinality are searched exhaustively.
    pub enumerate_cardinality: u32,
}

impl Default for AcqConfig {
    fn default() -> Self {
        AcqConfig {
            restarts: 10,
            max_iters: 100,
            enumerate_cardinality: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcqResult {
    pub algo: usize,
    pub x: HpVector,
    pub value: f64,
    /// The quantity the search maximized (`ln EI` for the surrogate search,
    /// otherwise equal to `value`).
    pub score: f64,
    pub restarts: usize,
    /// Hill-climbing moves summed over all restarts and algorithms.
    pub iterations: usize,
    /// Acquisition value at each restart's starting point.
    pub start_values: Vec<f64>,
}

/// Upper bound on the ordinal combinations tried for a single candidate.
const MAX_ORDINAL_COMBOS: usize = 64;

/// Replaces the small ordinal coordinates of `x` with their best joint setting.
fn best_ordinal_completion<F: Fn(&HpVector) -> f64>(
    space: &SearchSpace,
    x: HpVector,
    score: &F,
    max_card: u32,
) -> (HpVector, f64) {
    let vars = &space.algorithms[x.algo].variables;
    let ordinals: Vec<(usize, usize)> = vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Ordinal && v.cardinality.is_some_and(|c| c <= max_card))
        .map(|(i, v)| (i, v.levels().unwrap()))
        .collect();
    let combos: usize = ordinals.iter().map(|&(_, l)| l).product();
    if ordinals.is_empty() || combos > MAX_ORDINAL_COMBOS {
        let v = score(&x);
        return (x, v);
    }
    let mut best: Option<(HpVector, f64)> = None;
    for mut code in 0..combos {
        let mut cand = x.clone();
        for &(i, levels) in &ordinals {
            let level = code % levels;
            code /= levels;
            cand.values[i] = level as f64 / (levels - 1) as f64;
        }
        let v = score(&cand);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((cand, v));
        }
    }
    best.unwrap()
}

struct ClimbOutcome {
    x: HpVector,
    value: f64,
    start_value: f64,
    iterations: usize,
}

fn climb<F: Fn(&HpVector) -> f64>(space: &SearchSpace, m: usize, score: &F, seed: u64, cfg: &AcqConfig) -> ClimbOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = space.sample_uniform(m, &mut rng);
    let (mut cur, mut cur_val) = best_ordinal_completion(space, start, score, cfg.enumerate_cardinality);
    let start_value = cur_val;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let mut best: Option<(HpVector, f64)> = None;
        for nb in space.neighbor_samples(&cur, &mut rng) {
            let (cand, v) = best_ordinal_completion(space, nb, score, cfg.enumerate_cardinality);
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((cand, v));
            }
        }
        let (nb, v) = best.expect("neighbors are never empty");
        if v > cur_val {
            cur = nb;
            cur_val = v;
            iterations += 1;
        } else {
            break;
        }
    }
    ClimbOutcome {
        x: cur,
        value: cur_val,
        start_value,
        iterations,
    }
}

/// Maximizes `score(m, x)` over the listed algorithms. Ties between
/// algorithms or restarts resolve to the earliest one.
pub fn maximize_with<F, R>(space: &SearchSpace, algos: &[usize], score: F, rng: &mut R, cfg: &AcqConfig) -> AcqResult
where
    F: Fn(&HpVector) -> f64 + Sync,
    R: Rng + ?Sized,
{
    assert!(!algos.is_empty(), "no algorithms to search");
    let jobs: Vec<(usize, u64)> = algos
        .iter()
        .flat_map(|&m| (0..cfg.restarts.max(1)).map(move |_| m))
        .map(|m| (m, rng.next_u64()))
        .collect();
    let outcomes: Vec<(usize, ClimbOutcome)> = jobs
        .par_iter()
        .map(|&(m, seed)| (m, climb(space, m, &score, seed, cfg)))
        .collect();
    let mut best = 0;
    for (i, (_, o)) in outcomes.iter().enumerate() {
        if o.value > outcomes[best].1.value {
            best = i;
        }
    }
    let iterations = outcomes.iter().map(|(_, o)| o.iterations).sum();
    let start_values = outcomes.iter().map(|(_, o)| o.start_value).collect();
    let (algo, o) = outcomes.into_iter().nth(best).unwrap();
    AcqResult {
        algo,
        x: o.x,
        value: o.value,
        score: o.value,
        restarts: jobs.len(),
        iterations,
        start_values,
    }
}

/// Next point to evaluate: the EI maximizer of the fitted surrogate across
/// all algorithms. Candidates are compared through `ln EI`, which orders them
/// exactly like EI but keeps doing so where EI underflows; the reported
/// values are plain EI.
pub fn maximize_acquisition<R: Rng + ?Sized>(
    state: &SurrogateState,
    space: &SearchSpace,
    y_best: f64,
    rng: &mut R,
    cfg: &AcqConfig,
) -> AcqResult {
    let algos: Vec<usize> = (0..space.num_algorithms()).collect();
    let ei = |x: &HpVector| {
        let (mu, var) = state.posterior(x);
        (mu, var.sqrt())
    };
    let mut r = maximize_with(
        space,
        &algos,
        |x| {
            let (mu, sd) = ei(x);
            log_expected_improvement(mu, sd, y_best)
        },
        rng,
        cfg,
    );
    let (mu, sd) = ei(&r.x);
    r.value = expected_improvement(mu, sd, y_best);
    r.start_values.iter_mut().for_each(|v| *v = v.exp());
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{AlgorithmSpec, VariableSpec};
    use proptest::prelude::*;

    #[test]
    fn ei_closed_form_values() {
        assert!((expected_improvement(0.3, 1.0, 0.3) - 0.398942).abs() < 1e-6);
        assert_eq!(expected_improvement(-4.7, 0.0, 0.3), 0.0);
        assert!(expected_improvement(-4.7, 1e-12, 0.3) < 1e-300);
        assert_eq!(expected_improvement(1.3, 0.0, 0.3), 1.0);
    }

    #[test]
    fn cdf_matches_known_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let p = normal_cdf(1.959963984540054);
        assert!((p - 0.975).abs() < 1e-10, "{p}");
    }

    fn space() -> SearchSpace {
        SearchSpace::new(vec![
            AlgorithmSpec::new("a", vec![VariableSpec::continuous("x", 0.0, 1.0)]),
            AlgorithmSpec::new(
                "b",
                vec![
                    VariableSpec::count("k", 1, 50),
                    VariableSpec::ordinal("w", 2),
                    VariableSpec::continuous("y", 0.0, 1.0),
                ],
            ),
        ])
        .unwrap()
    }

    #[test]
    fn constant_score_returns_valid_point() {
        let sp = space();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = maximize_with(&sp, &[0, 1], |_| 0.25, &mut rng, &AcqConfig::default());
        assert_eq!(r.value, 0.25);
        sp.check(&r.x).unwrap();
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn result_dominates_every_start() {
        let sp = space();
        let score = |x: &HpVector| -> f64 { -x.values.iter().map(|v| (v - 0.7).powi(2)).sum::<f64>() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = maximize_with(&sp, &[0, 1], score, &mut rng, &AcqConfig::default());
        assert_eq!(r.start_values.len(), 20);
        assert!(r.start_values.iter().all(|&s| r.value >= s));
        assert_eq!(r.value, score(&r.x));
    }

    #[test]
    fn ordinal_levels_are_enumerated() {
        let sp = space();
        // Only the ordinal coordinate matters; level 2 (unit 1.0) is best.
        let score = |x: &HpVector| if x.algo == 1 { x.values[1] } else { -1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = AcqConfig {
            restarts: 1,
            ..AcqConfig::default()
        };
        let r = maximize_with(&sp, &[1], score, &mut rng, &cfg);
        assert_eq!(r.x.values[1], 1.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let sp = space();
        let score = |x: &HpVector| (x.values[0] * 7.0).sin();
        let a = maximize_with(&sp, &[0, 1], score, &mut ChaCha8Rng::seed_from_u64(5), &AcqConfig::default());
        let b = maximize_with(&sp, &[0, 1], score, &mut ChaCha8Rng::seed_from_u64(5), &AcqConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn log_ei_matches_plain_ei() {
        for &(mu, sigma) in &[(0.3, 1.0), (-1.0, 0.5), (-2.4, 0.5), (-2.6, 0.5), (-9.0, 1.0), (2.0, 0.1), (-30.0, 1.0)] {
            let e = expected_improvement(mu, sigma, 0.0);
            let l = log_expected_improvement(mu, sigma, 0.0);
            assert!((l - e.ln()).abs() < 1e-9 * e.ln().abs().max(1.0), "{mu} {sigma}: {l} vs {}", e.ln());
        }
        // Far below the incumbent EI underflows but its log stays ordered.
        let a = log_expected_improvement(-60.0, 1.0, 0.0);
        let b = log_expected_improvement(-50.0, 1.0, 0.0);
        assert_eq!(expected_improvement(-60.0, 1.0, 0.0), 0.0);
        assert!(a.is_finite() && a < b);
        assert!((log_expected_improvement(-1e4, 1.0, 0.0) - (-0.5e8 - 2.0 * 1e4f64.ln() + INV_SQRT_2PI.ln())).abs() < 1e-6 * 0.5e8);
        assert_eq!(log_expected_improvement(1.0, 0.0, 0.0), 0.0);
        assert_eq!(log_expected_improvement(-1.0, 0.0, 0.0), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn log_ei_is_continuous_at_switch(sigma in 0.1f64..3.0) {
            let lo = log_expected_improvement(-5.0 * sigma - 1e-9, sigma, 0.0);
            let hi = log_expected_improvement(-5.0 * sigma + 1e-9, sigma, 0.0);
            prop_assert!((lo - hi).abs() < 1e-6);
        }

        #[test]
        fn ei_is_nonnegative_and_monotone(mu in -3.0f64..3.0, sigma in 0.0f64..3.0, yb in -3.0f64..3.0, dmu in 0.0f64..1.0, ds in 0.0f64..1.0) {
            let e = expected_improvement(mu, sigma, yb);
            prop_assert!(e >= 0.0);
            prop_assert!(expected_improvement(mu + dmu, sigma, yb) >= e - 1e-12);
            if mu <= yb {
                prop_assert!(expected_improvement(mu, sigma + ds, yb) >= e - 1e-12);
            }
        }
    }
}
