//! Structural matrices of the model and the top Lyapunov exponent.
//!
//! `M_i` carries the offspring means of the crossing-count branching process
//! and its products govern recurrence: the sign of the top exponent of
//! `M_1 M_2 ... M_n` separates right-transience, recurrence and left-transience.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::env::{check_conditions, EnvironmentLaw, SiteRates};
use crate::error::{Error, Result};
use crate::par::map_replicas;
use crate::rng::{tags, StreamKey};

pub const DEFAULT_BURN_IN: u64 = 1_000;
pub const SPECTRAL_TOLERANCE: f64 = 1e-12;
pub const SPECTRAL_MAX_ITERATIONS: u64 = 100_000;

/// The L×L mean matrix attached to one site.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMatrix(DMatrix<f64>);

impl JumpMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    /// `out = v · self` for a row vector `v`.
    #[inline]
    pub fn left_mul_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (j, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|k| v[k] * self.0[(k, j)]).sum();
        }
    }
}

impl From<DMatrix<f64>> for JumpMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        JumpMatrix(m)
    }
}

/// Row 1 is `(mu^1, ..., mu^L) / lambda`; row `k >= 2` is row 1 plus `e_{k-1}`.
pub fn build_m(site: &SiteRates) -> Result<JumpMatrix> {
    let lambda = site.lambda();
    if lambda <= 0.0 {
        return Err(Error::ZeroLambda);
    }
    let n = site.jump_bound();
    let mut m = DMatrix::from_fn(n, n, |_, j| site.mu()[j] / lambda);
    for k in 1..n {
        m[(k, k - 1)] += 1.0;
    }
    Ok(JumpMatrix(m))
}

fn b_preconditions(site: &SiteRates) -> Result<()> {
    if site.lambda() <= 0.0 {
        return Err(Error::ZeroLambda);
    }
    if site.mu()[site.jump_bound() - 1] <= 0.0 {
        return Err(Error::ZeroMuL);
    }
    Ok(())
}

/// Companion matrix with superdiagonal ones and last row `(b(1), -b(2), ..., -b(L))`,
/// where `b(1) = lambda / mu^L` and `b(k) = (mu^{k-1} + ... + mu^L) / mu^L`.
pub fn build_b(site: &SiteRates) -> Result<DMatrix<f64>> {
    b_preconditions(site)?;
    let n = site.jump_bound();
    let mu = site.mu();
    let mu_last = mu[n - 1];
    let mut b = DMatrix::zeros(n, n);
    for r in 0..n - 1 {
        b[(r, r + 1)] = 1.0;
    }
    b[(n - 1, 0)] = site.lambda() / mu_last;
    for k in 2..=n {
        let tail: f64 = mu[k - 2..].iter().sum();
        b[(n - 1, k - 1)] = -tail / mu_last;
    }
    Ok(b)
}

/// First row `(a(1), ..., a(L))` with `a(k) = (mu^k + ... + mu^L) / lambda`, subdiagonal ones.
pub fn build_b_inv(site: &SiteRates) -> Result<DMatrix<f64>> {
    b_preconditions(site)?;
    let n = site.jump_bound();
    let mu = site.mu();
    let mut b = DMatrix::zeros(n, n);
    for k in 1..=n {
        b[(0, k - 1)] = mu[k - 1..].iter().sum::<f64>() / site.lambda();
    }
    for r in 1..n {
        b[(r, r - 1)] = 1.0;
    }
    Ok(b)
}

/// Lower-triangular all-ones matrix.
pub fn lambda_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |r, c| if c <= r { 1.0 } else { 0.0 })
}

/// Its inverse: ones on the diagonal, minus ones on the subdiagonal.
pub fn lambda_matrix_inv(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            1.0
        } else if r == c + 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Max-entry gap between `B_1^{-1} ... B_n^{-1}` and `Λ^{-1} M_1 ... M_n Λ`,
/// divided by `max(1, max entry)`.
pub fn lambda_conjugacy_residual(sites: &[SiteRates]) -> Result<f64> {
    let first = sites.first().ok_or(Error::InvalidParameter {
        name: "sites",
        reason: "need at least one site".into(),
    })?;
    let n = first.jump_bound();
    let mut prod_b = DMatrix::identity(n, n);
    let mut prod_m = DMatrix::identity(n, n);
    for site in sites {
        if site.jump_bound() != n {
            return Err(Error::InvalidParameter { name: "sites", reason: "mixed jump bounds".into() });
        }
        prod_b *= build_b_inv(site)?;
        prod_m *= build_m(site)?.0;
    }
    let conj = lambda_matrix_inv(n) * prod_m * lambda_matrix(n);
    // relative to the product's scale once entries exceed one
    Ok((prod_b - &conj).amax() / conj.amax().max(1.0))
}

/// Dominant eigenvalue of a nonnegative primitive matrix by power iteration.
pub fn spectral_radius(m: &JumpMatrix) -> Result<f64> {
    let n = m.dim();
    let mut v = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut prev = f64::NAN;
    for it in 0..SPECTRAL_MAX_ITERATIONS {
        m.left_mul_into(&v, &mut next);
        let norm: f64 = next.iter().map(|x| x.abs()).sum();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::NoConvergence { iterations: it + 1 });
        }
        for (a, b) in v.iter_mut().zip(&next) {
            *a = b / norm;
        }
        if (norm - prev).abs() <= SPECTRAL_TOLERANCE * norm {
            return Ok(norm);
        }
        prev = norm;
    }
    Err(Error::NoConvergence { iterations: SPECTRAL_MAX_ITERATIONS })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub gamma_top: f64,
    pub std_error: f64,
    pub steps_per_replica: u64,
    pub replicas: u64,
    pub burn_in: u64,
}

fn lyapunov_replica(mats: &[JumpMatrix], law: &EnvironmentLaw, steps: u64, burn_in: u64, key: StreamKey) -> Result<f64> {
    let n = law.jump_bound();
    let mut rng = key.rng();
    let mut v = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut log_sum = 0.0;
    for step in 0..burn_in + steps {
        let m = &mats[law.atom_index(rng.random::<f64>())];
        m.left_mul_into(&v, &mut next);
        let norm: f64 = next.iter().sum();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::NumericalUnderflow { step });
        }
        for (a, b) in v.iter_mut().zip(&next) {
            *a = b / norm;
        }
        if step >= burn_in {
            log_sum += norm.ln();
        }
    }
    Ok(log_sum / steps as f64)
}

/// Top Lyapunov exponent of i.i.d. products of `M` matrices drawn from `law`.
///
/// Each replica propagates a positive row vector through fresh matrices,
/// renormalizing in the 1-norm every step, and averages the log growth after
/// `burn_in` steps. The standard error is over replicas (zero with one replica).
pub fn lyapunov_top(law: &EnvironmentLaw, steps: u64, replicas: u64, burn_in: u64, key: StreamKey) -> Result<LyapunovEstimate> {
    let report = check_conditions(law);
    if !report.all_hold() {
        return Err(Error::ConditionsViolated(report.violations));
    }
    if steps < law.jump_bound() as u64 {
        return Err(Error::InvalidParameter { name: "steps", reason: format!("steps = {steps} must be at least L") });
    }
    if replicas == 0 {
        return Err(Error::InvalidParameter { name: "replicas", reason: "must be at least 1".into() });
    }
    let mats = law.atoms().iter().map(|a| build_m(&a.rates)).collect::<Result<Vec<_>>>()?;
    let base = key.child(tags::LYAPUNOV);
    let per_replica = map_replicas(replicas, |r| lyapunov_replica(&mats, law, steps, burn_in, base.child(r)))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let (gamma_top, std_error) = crate::stats::mean_and_se(&per_replica);
    Ok(LyapunovEstimate { gamma_top, std_error, steps_per_replica: steps, replicas, burn_in })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    TransientRight,
    Recurrent,
    TransientLeft,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrenceVerdict {
    pub verdict: Verdict,
    pub gamma_estimate: LyapunovEstimate,
    pub tolerance: f64,
}

/// Decide the recurrence regime from an estimate, using the wider of `tolerance`
/// and three standard errors as the uncertainty band. A `Recurrent` call means
/// the exponent is indistinguishable from zero, not a proof of oscillation.
pub fn classify_recurrence(est: &LyapunovEstimate, tolerance: f64) -> Result<RecurrenceVerdict> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::InvalidParameter { name: "tolerance", reason: format!("{tolerance} is not positive") });
    }
    let band = tolerance.max(3.0 * est.std_error);
    let g = est.gamma_top;
    let verdict = if g + band < 0.0 {
        Verdict::TransientRight
    } else if g - band > 0.0 {
        Verdict::TransientLeft
    } else if g.abs() <= tolerance && 3.0 * est.std_error <= tolerance {
        Verdict::Recurrent
    } else {
        Verdict::Inconclusive
    };
    Ok(RecurrenceVerdict { verdict, gamma_estimate: est.clone(), tolerance })
}
