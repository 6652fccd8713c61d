//! Quenched and annealed means of the first passage time, the velocity, and
//! the statistical checks used to compare samplers.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::branching::{reconstruct_t1, simulate_branching};
use crate::env::{check_conditions, EnvironmentLaw, EnvironmentWindow};
use crate::error::{Error, Result};
use crate::matrices::{build_m, classify_recurrence, lyapunov_top, spectral_radius, RecurrenceVerdict, Verdict};
use crate::par::map_replicas;
use crate::rng::{tags, StreamKey};
use crate::simulate::{first_passage_time, position_at, DiscretePath};
use crate::stats::mean_and_se;

/// Asymptotic two-sample KS coefficient at the 1% level.
pub const KS_COEFFICIENT_1PCT: f64 = 1.63;
/// Relative slack when deciding that a term did not decrease.
const NON_DECREASE_SLACK: f64 = 1e-12;
/// Spectral radii within this of one count as critical.
const CRITICAL_RADIUS_SLACK: f64 = 1e-9;
/// Half-width of the initially realized window around the origin.
const INITIAL_HALF_WIDTH: i64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesResult {
    pub value: f64,
    pub terms_used: u64,
    pub tail_estimate: f64,
    pub converged: bool,
    pub diverging: bool,
}

/// `v <- v · M(site)` without materializing `M`:
/// `(vM)_j = (sum v) mu^{j+1} / lambda + v_{j+1}`.
#[inline]
fn left_mul_m(v: &mut [f64], mu: &[f64], lambda: f64) {
    let mass: f64 = v.iter().sum();
    let n = v.len();
    for j in 0..n {
        let carry = if j + 1 < n { v[j + 1] } else { 0.0 };
        v[j] = mass * mu[j] / lambda + carry;
    }
}

/// Sum nonnegative terms produced by `next_term(k, v)`, where `v` is a
/// running row vector the closure advances.
///
/// Converged once each of the last `L + 3` terms is below `rel_tol` times the
/// partial sum and the geometric tail extrapolated from the last two terms is
/// as well. Diverging once `L + 3` consecutive terms fail to decrease.
fn sum_series(
    jump_bound: usize,
    max_terms: u64,
    rel_tol: f64,
    mut next_term: impl FnMut(u64, &mut [f64]) -> Result<f64>,
) -> Result<SeriesResult> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidParameter { name: "rel_tol", reason: format!("{rel_tol} is not in (0, 1)") });
    }
    let window = jump_bound + 3;
    let mut v = vec![0.0; jump_bound];
    v[0] = 1.0;
    let mut sum = 0.0;
    let mut recent: Vec<f64> = Vec::with_capacity(window + 1);
    let mut small_run = 0usize;
    let mut rising_run = 0usize;
    let mut tail_estimate = f64::INFINITY;
    for k in 0..max_terms {
        let term = next_term(k, &mut v)?;
        if !term.is_finite() {
            return Ok(SeriesResult { value: sum, terms_used: k + 1, tail_estimate: f64::INFINITY, converged: false, diverging: true });
        }
        sum += term;
        if let Some(&prev) = recent.last() {
            if term >= prev * (1.0 - NON_DECREASE_SLACK) {
                rising_run += 1;
            } else {
                rising_run = 0;
            }
            tail_estimate = if prev > 0.0 && term < prev {
                let r = term / prev;
                term * r / (1.0 - r)
            } else if term == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
        }
        if recent.len() == window {
            recent.remove(0);
        }
        recent.push(term);
        small_run = if term < rel_tol * sum { small_run + 1 } else { 0 };
        if small_run >= window && tail_estimate <= rel_tol * sum.abs() {
            return Ok(SeriesResult { value: sum, terms_used: k + 1, tail_estimate, converged: true, diverging: false });
        }
        if rising_run >= window {
            return Ok(SeriesResult { value: sum, terms_used: k + 1, tail_estimate: f64::INFINITY, converged: false, diverging: true });
        }
    }
    Ok(SeriesResult { value: sum, terms_used: max_terms, tail_estimate, converged: false, diverging: false })
}

/// Quenched mean of `T_1`: `sum_{i <= 0} (1/lambda_i) e_1 M_0 M_{-1} ... M_{i+1} 1`,
/// the `i = 0` term using the empty product.
pub fn quenched_mean_t1(window: &EnvironmentWindow, max_terms: u64, rel_tol: f64) -> Result<SeriesResult> {
    let mut cursor = window.cursor();
    sum_series(window.jump_bound(), max_terms, rel_tol, |k, v| {
        let i = -(k as i64);
        let site = cursor.site(i)?;
        if site.lambda() <= 0.0 {
            return Err(Error::ZeroLambdaAtSite { site: i });
        }
        let term = v.iter().sum::<f64>() / site.lambda();
        left_mul_m(v, site.mu(), site.lambda());
        Ok(term)
    })
}

/// The forward series `(1/lambda_0) sum_{n >= 1} e_1 M_1 ... M_n 1`.
///
/// Its environment average differs from the annealed mean of `T_1` by
/// `E[1/lambda]`; it is reported alongside for comparison only.
pub fn forward_series(window: &EnvironmentWindow, max_terms: u64, rel_tol: f64) -> Result<SeriesResult> {
    let mut cursor = window.cursor();
    let lambda0 = cursor.site(0)?.lambda();
    if lambda0 <= 0.0 {
        return Err(Error::ZeroLambdaAtSite { site: 0 });
    }
    sum_series(window.jump_bound(), max_terms, rel_tol, |k, v| {
        let i = k as i64 + 1;
        let site = cursor.site(i)?;
        if site.lambda() <= 0.0 {
            return Err(Error::ZeroLambdaAtSite { site: i });
        }
        left_mul_m(v, site.mu(), site.lambda());
        Ok(v.iter().sum::<f64>() / lambda0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnealedEstimate {
    /// `None` when some environment's series failed to converge.
    pub mean: Option<f64>,
    pub std_error: f64,
    pub n_env: u64,
    pub diverged_envs: u64,
    /// Same average for the forward series (see [`forward_series`]).
    pub forward_mean: Option<f64>,
}

impl AnnealedEstimate {
    pub fn diverged(&self) -> bool {
        self.mean.is_none()
    }
}

fn check_law(law: &EnvironmentLaw) -> Result<()> {
    let report = check_conditions(law);
    if report.all_hold() {
        Ok(())
    } else {
        Err(Error::ConditionsViolated(report.violations))
    }
}

fn env_window(law: &EnvironmentLaw, key: StreamKey) -> Result<EnvironmentWindow> {
    EnvironmentWindow::new(law.clone(), key.raw(), -INITIAL_HALF_WIDTH, INITIAL_HALF_WIDTH)
}

/// Environment average of the quenched mean over `n_env` independent windows.
pub fn annealed_et1(law: &EnvironmentLaw, n_env: u64, max_terms: u64, rel_tol: f64, key: StreamKey) -> Result<AnnealedEstimate> {
    check_law(law)?;
    if n_env == 0 {
        return Err(Error::InvalidParameter { name: "n_env", reason: "must be at least 1".into() });
    }
    let base = key.child(tags::ENVIRONMENT);
    let per_env = map_replicas(n_env, |e| -> Result<(SeriesResult, SeriesResult)> {
        let w = env_window(law, base.child(e))?;
        Ok((quenched_mean_t1(&w, max_terms, rel_tol)?, forward_series(&w, max_terms, rel_tol)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let diverged_envs = per_env.iter().filter(|(q, _)| !q.converged).count() as u64;
    let values: Vec<f64> = per_env.iter().map(|(q, _)| q.value).collect();
    let (mean, std_error) = mean_and_se(&values);
    let forward_ok = per_env.iter().all(|(_, f)| f.converged);
    let forward: Vec<f64> = per_env.iter().map(|(_, f)| f.value).collect();
    Ok(AnnealedEstimate {
        mean: (diverged_envs == 0).then_some(mean),
        std_error: if diverged_envs == 0 { std_error } else { f64::INFINITY },
        n_env,
        diverged_envs,
        forward_mean: forward_ok.then(|| mean_and_se(&forward).0),
    })
}

/// Closed form of the annealed mean for a finite-support law:
/// `E[1/lambda] · e_1 (I - E M)^{-1} 1`, or `None` when `E M` has spectral
/// radius at least one (the mean is infinite) or within `1e-9` of it.
pub fn annealed_et1_exact(law: &EnvironmentLaw) -> Result<Option<f64>> {
    let n = law.jump_bound();
    let mut mean_m = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut mean_inv_lambda = 0.0;
    for atom in law.atoms() {
        mean_m += build_m(&atom.rates)?.as_matrix() * atom.weight;
        mean_inv_lambda += atom.weight / atom.rates.lambda();
    }
    let rho = match spectral_radius(&mean_m.clone().into()) {
        Ok(r) => r,
        Err(_) => mean_m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
    };
    // power iteration is accurate to ~1e-12; a radius that close to one is critical
    if rho >= 1.0 - CRITICAL_RADIUS_SLACK {
        return Ok(None);
    }
    let a = nalgebra::DMatrix::<f64>::identity(n, n) - mean_m;
    let ones = nalgebra::DVector::<f64>::from_element(n, 1.0);
    let x = a.lu().solve(&ones).ok_or(Error::NoConvergence { iterations: 0 })?;
    Ok(Some(mean_inv_lambda * x[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpeedRegime {
    PositiveSpeed,
    ZeroSpeed,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalSpeed {
    pub mean: f64,
    pub std_error: f64,
    pub horizon: f64,
    pub n_paths: u64,
    pub censored_paths: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VelocityReport {
    pub regime: SpeedRegime,
    pub speed: Option<f64>,
    /// Monte Carlo annealed mean of `T_1`; `None` when divergent or not computed.
    pub es_estimate: Option<f64>,
    pub es_std_error: Option<f64>,
    /// Closed-form annealed mean; `None` when infinite.
    pub es_exact: Option<f64>,
    /// Environment average of the forward series, when it differs from `es_estimate`.
    pub es_forward_estimate: Option<f64>,
    pub empirical_speed: EmpiricalSpeed,
    pub recurrence: RecurrenceVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VelocityParams {
    pub lyapunov_steps: u64,
    pub lyapunov_replicas: u64,
    pub burn_in: u64,
    pub tolerance: f64,
    pub max_terms: u64,
    pub rel_tol: f64,
    pub step_cap: u64,
}

impl Default for VelocityParams {
    fn default() -> Self {
        VelocityParams {
            lyapunov_steps: 100_000,
            lyapunov_replicas: 8,
            burn_in: crate::matrices::DEFAULT_BURN_IN,
            tolerance: 1e-3,
            max_terms: 1_000_000,
            rel_tol: 1e-10,
            step_cap: crate::simulate::DEFAULT_STEP_CAP,
        }
    }
}

/// Empirical `N_t / t` at `horizon` over `n_paths` paths, each in its own environment.
pub fn empirical_speed(law: &EnvironmentLaw, horizon: f64, n_paths: u64, step_cap: u64, key: StreamKey) -> Result<EmpiricalSpeed> {
    if n_paths == 0 {
        return Err(Error::InvalidParameter { name: "n_paths", reason: "must be at least 1".into() });
    }
    let base = key.child(tags::PATHS);
    let runs = map_replicas(n_paths, |p| -> Result<(f64, bool)> {
        let k = base.child(p);
        let w = env_window(law, k.child(tags::ENVIRONMENT))?;
        let (state, censored) = position_at(&w, horizon, step_cap, k)?;
        Ok((state as f64 / horizon, censored))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let (mean, std_error) = mean_and_se(&ratios);
    Ok(EmpiricalSpeed { mean, std_error, horizon, n_paths, censored_paths: runs.iter().filter(|r| r.1).count() as u64 })
}

/// Law-of-large-numbers velocity: `1 / E T_1` when that mean is finite and the
/// process is not transient to the left, zero when it is infinite.
pub fn velocity(
    law: &EnvironmentLaw,
    n_env: u64,
    horizon: f64,
    n_paths: u64,
    key: StreamKey,
    params: &VelocityParams,
) -> Result<VelocityReport> {
    check_law(law)?;
    let est = lyapunov_top(law, params.lyapunov_steps, params.lyapunov_replicas, params.burn_in, key)?;
    let recurrence = classify_recurrence(&est, params.tolerance)?;
    let empirical_speed = empirical_speed(law, horizon, n_paths, params.step_cap, key)?;
    if !matches!(recurrence.verdict, Verdict::TransientRight | Verdict::Recurrent) {
        return Ok(VelocityReport {
            regime: SpeedRegime::NotApplicable,
            speed: None,
            es_estimate: None,
            es_std_error: None,
            es_exact: None,
            es_forward_estimate: None,
            empirical_speed,
            recurrence,
        });
    }
    let annealed = annealed_et1(law, n_env, params.max_terms, params.rel_tol, key)?;
    let es_exact = annealed_et1_exact(law)?;
    let finite = annealed.mean.filter(|_| es_exact.is_some());
    let (regime, speed) = match finite {
        Some(es) => (SpeedRegime::PositiveSpeed, Some(1.0 / es)),
        None => (SpeedRegime::ZeroSpeed, Some(0.0)),
    };
    Ok(VelocityReport {
        regime,
        speed,
        es_estimate: finite,
        es_std_error: finite.map(|_| annealed.std_error),
        es_exact,
        es_forward_estimate: annealed.forward_mean,
        empirical_speed,
        recurrence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionOptions {
    pub step_cap: u64,
    pub generation_cap: u64,
    pub max_terms: u64,
    pub rel_tol: f64,
}

impl Default for DecompositionOptions {
    fn default() -> Self {
        DecompositionOptions {
            step_cap: crate::simulate::DEFAULT_STEP_CAP,
            generation_cap: crate::branching::DEFAULT_GENERATION_CAP,
            max_terms: 1_000_000,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub ks_stat: f64,
    pub ks_critical: f64,
    pub mean_direct: f64,
    pub se_direct: f64,
    pub mean_reconstructed: f64,
    pub se_reconstructed: f64,
    pub censored_direct: f64,
    pub censored_reconstructed: f64,
    /// Series value of the quenched mean in the same window (if it converged).
    pub quenched_mean: Option<f64>,
    pub environment_seed: u64,
    pub pass: bool,
}

/// Per-replica values; `None` marks a censored replica.
pub type Samples = Vec<Option<f64>>;

/// Samples of `T_1` in one frozen environment: simulated directly and
/// reconstructed from branching realizations. `None` marks a censored sample.
pub fn decomposition_samples(
    window: &EnvironmentWindow,
    n_samples: u64,
    key: StreamKey,
    opts: &DecompositionOptions,
) -> Result<(Samples, Samples)> {
    let direct_key = key.child(tags::DIRECT);
    let direct = map_replicas(n_samples, |r| {
        first_passage_time(window, 1, direct_key.child(r), opts.step_cap).map(|p| (!p.censored).then_some(p.time))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let branch_key = key.child(tags::BRANCHING);
    let clock_key = key.child(tags::CLOCKS);
    let rebuilt = map_replicas(n_samples, |r| -> Result<Option<f64>> {
        let real = simulate_branching(window, opts.generation_cap, branch_key.child(r))?;
        if real.censored {
            return Ok(None);
        }
        reconstruct_t1(&real, window, clock_key.child(r)).map(Some)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((direct, rebuilt))
}

/// Compare direct first-passage times with branching reconstructions in one
/// frozen environment: KS at the 1% level and means within three combined SEs.
pub fn compare_decomposition(
    law: &EnvironmentLaw,
    n_samples: u64,
    key: StreamKey,
    opts: &DecompositionOptions,
) -> Result<DecompositionReport> {
    check_law(law)?;
    if n_samples == 0 {
        return Err(Error::InvalidParameter { name: "n_samples", reason: "must be at least 1".into() });
    }
    let env_key = key.child(tags::ENVIRONMENT);
    let window = env_window(law, env_key)?;
    let (direct, rebuilt) = decomposition_samples(&window, n_samples, key, opts)?;
    let censored = |v: &[Option<f64>]| v.iter().filter(|x| x.is_none()).count() as f64 / v.len() as f64;
    let (censored_direct, censored_reconstructed) = (censored(&direct), censored(&rebuilt));
    if censored_direct > 0.01 || censored_reconstructed > 0.01 {
        return Err(Error::ExcessCensoring { direct: censored_direct, reconstructed: censored_reconstructed });
    }
    let direct: Vec<f64> = direct.into_iter().flatten().collect();
    let rebuilt: Vec<f64> = rebuilt.into_iter().flatten().collect();
    let ks_stat = ks_two_sample(&direct, &rebuilt)?;
    let ks_critical = ks_critical_1pct(direct.len(), rebuilt.len());
    let (mean_direct, se_direct) = mean_and_se(&direct);
    let (mean_reconstructed, se_reconstructed) = mean_and_se(&rebuilt);
    let combined = (se_direct * se_direct + se_reconstructed * se_reconstructed).sqrt();
    let series = quenched_mean_t1(&window, opts.max_terms, opts.rel_tol)?;
    Ok(DecompositionReport {
        ks_stat,
        ks_critical,
        mean_direct,
        se_direct,
        mean_reconstructed,
        se_reconstructed,
        censored_direct,
        censored_reconstructed,
        quenched_mean: series.converged.then_some(series.value),
        environment_seed: env_key.raw(),
        pass: ks_stat < ks_critical && (mean_direct - mean_reconstructed).abs() <= 3.0 * combined,
    })
}

/// Largest gap between the empirical CDFs of `a` and `b`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0f64, |d, (k, &x)| {
        let f = cdf(x);
        d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n)
    }))
}

/// Asymptotic 1% critical value of the two-sample statistic.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    KS_COEFFICIENT_1PCT * ((n + m) / (n * m)).sqrt()
}

/// For each ladder level `n >= 0` completed by the path, the number of
/// distinct states below `n` visited between the first hits of `n` and `n + 1`.
pub fn ladder_left_visits(path: &DiscretePath) -> Vec<u64> {
    let states = path.states();
    let mut out = Vec::new();
    let mut level = 0i64;
    let mut seen = BTreeSet::new();
    let mut started = states.first() == Some(&0);
    for &s in states.iter().skip(1) {
        if !started {
            started = s == 0;
            continue;
        }
        if s == level + 1 {
            out.push(seen.len() as u64);
            seen.clear();
            level += 1;
        } else if s < level {
            seen.insert(s);
        }
    }
    out
}
