//! The L-type branching process hidden in the down-crossings.
//!
//! An individual of type `l` in generation `U_i` is a jump that, seen from
//! site `i`, landed at `i - l + 1`. Its children in `U_{i-1}` are the
//! down-jumps taken from site `i` before the walk leaves `i` upward (a
//! multinomial-geometric count), plus, for `l >= 2`, the same jump re-typed
//! as `l - 1`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::env::{EnvironmentWindow, SiteRates};
use crate::error::{Error, Result};
use crate::matrices::{build_m, JumpMatrix};
use crate::rng::StreamKey;
use crate::simulate::draw_jump;
use crate::stats::PairwiseSum;

pub const DEFAULT_GENERATION_CAP: u64 = 10_000;
/// A generation larger than this is treated as a cap hit.
pub const POPULATION_CAP: u64 = 100_000_000;

/// Category probabilities of the offspring law at one site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffspringLaw {
    pub p_up: f64,
    /// `p_down[l-1] = mu^l / q`.
    pub p_down: Vec<f64>,
}

impl OffspringLaw {
    pub fn new(site: &SiteRates) -> Result<Self> {
        if site.lambda() <= 0.0 {
            return Err(Error::ZeroLambda);
        }
        let q = site.total_rate();
        Ok(OffspringLaw { p_up: site.lambda() / q, p_down: site.mu().iter().map(|m| m / q).collect() })
    }
}

fn check_parent(site: &SiteRates, parent_type: usize) -> Result<()> {
    if parent_type == 0 || parent_type > site.jump_bound() {
        return Err(Error::InvalidParameter {
            name: "parent_type",
            reason: format!("{parent_type} is outside 1..={}", site.jump_bound()),
        });
    }
    Ok(())
}

/// Add one individual's random offspring (down-jump categories drawn until
/// the first up-jump) into `out`.
#[inline]
fn add_random_part(site: &SiteRates, rng: &mut impl Rng, out: &mut [u64]) {
    loop {
        let d = draw_jump(site, rng.random::<f64>());
        if d == 1 {
            return;
        }
        out[(-d - 1) as usize] += 1;
    }
}

/// Offspring vector of one individual of `parent_type` (1-based) at `site`.
pub fn offspring_sample(site: &SiteRates, parent_type: usize, rng: &mut impl Rng) -> Result<Vec<u64>> {
    if site.lambda() <= 0.0 {
        return Err(Error::ZeroLambda);
    }
    check_parent(site, parent_type)?;
    let mut out = vec![0u64; site.jump_bound()];
    add_random_part(site, rng, &mut out);
    if parent_type >= 2 {
        out[parent_type - 2] += 1;
    }
    Ok(out)
}

/// Exact probability of offspring vector `u` for a parent of `parent_type`.
pub fn offspring_pmf(site: &SiteRates, parent_type: usize, u: &[u64]) -> f64 {
    let Ok(law) = OffspringLaw::new(site) else {
        return 0.0;
    };
    if check_parent(site, parent_type).is_err() || u.len() != site.jump_bound() {
        return 0.0;
    }
    let mut v = u.to_vec();
    if parent_type >= 2 {
        if v[parent_type - 2] == 0 {
            return 0.0;
        }
        v[parent_type - 2] -= 1;
    }
    let n: u64 = v.iter().sum();
    let mut log_p = ln_gamma(n as f64 + 1.0) + law.p_up.ln();
    for (&k, &p) in v.iter().zip(&law.p_down) {
        if k == 0 {
            continue;
        }
        if p == 0.0 {
            return 0.0;
        }
        log_p += k as f64 * p.ln() - ln_gamma(k as f64 + 1.0);
    }
    log_p.exp()
}

/// Offspring mean matrix; identical to [`build_m`].
pub fn mean_matrix(site: &SiteRates) -> Result<JumpMatrix> {
    build_m(site)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BranchingRealization {
    /// `generations[j]` is `U_{-j}`; the first entry is `e_1`.
    pub generations: Vec<Vec<u64>>,
    pub totals: Vec<u64>,
    pub censored: bool,
}

impl BranchingRealization {
    /// `U_i` for `i <= 0` (zeros past the last generation).
    pub fn at(&self, i: i64) -> Vec<u64> {
        let l = self.generations[0].len();
        if i > 0 {
            return vec![0; l];
        }
        self.generations.get((-i) as usize).cloned().unwrap_or_else(|| vec![0; l])
    }

    pub fn total_at(&self, i: i64) -> u64 {
        if i > 0 {
            return 0;
        }
        self.totals.get((-i) as usize).copied().unwrap_or(0)
    }

    pub fn is_extinct(&self) -> bool {
        !self.censored && self.totals.last() == Some(&0)
    }
}

/// Grow `U_0 = e_1, U_{-1}, U_{-2}, ...` in the quenched environment until a
/// generation is empty or `generation_cap` generations below the root exist.
pub fn simulate_branching(window: &EnvironmentWindow, generation_cap: u64, key: StreamKey) -> Result<BranchingRealization> {
    let l = window.jump_bound();
    let mut rng = key.rng();
    let mut cursor = window.cursor();
    let mut root = vec![0u64; l];
    root[0] = 1;
    let mut generations = vec![root];
    let mut totals = vec![1u64];
    let mut censored = false;
    let mut site_index = 0i64;
    while *totals.last().unwrap() > 0 {
        if generations.len() as u64 > generation_cap || *totals.last().unwrap() > POPULATION_CAP {
            censored = true;
            break;
        }
        let site = cursor.site(site_index)?;
        if site.lambda() <= 0.0 {
            return Err(Error::ZeroLambdaAtSite { site: site_index });
        }
        let parents = generations.last().unwrap();
        let mut next = vec![0u64; l];
        for (t, &count) in parents.iter().enumerate() {
            for _ in 0..count {
                add_random_part(site, &mut rng, &mut next);
            }
            if t >= 1 {
                next[t - 1] += count;
            }
        }
        totals.push(next.iter().sum());
        generations.push(next);
        site_index -= 1;
    }
    Ok(BranchingRealization { generations, totals, censored })
}

/// Rebuild a first-passage time from a realization by attaching exponential
/// holding times: one at the origin, one at `i` per type-1 individual of `U_i`,
/// and one at `i + 1` per individual of `U_i`.
pub fn reconstruct_t1(realization: &BranchingRealization, window: &EnvironmentWindow, key: StreamKey) -> Result<f64> {
    if !realization.is_extinct() {
        return Err(Error::CensoredRealization);
    }
    let mut rng = key.rng();
    let mut cursor = window.cursor();
    let mut clock = PairwiseSum::new();
    let exp = |rate: f64, rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        let x: f64 = Exp1.sample(rng);
        x / rate
    };
    let mut q_above = cursor.site(0)?.total_rate();
    clock.add(exp(q_above, &mut rng));
    for (j, u) in realization.generations.iter().enumerate().skip(1) {
        let total: u64 = u.iter().sum();
        if total == 0 {
            break;
        }
        let q_here = cursor.site(-(j as i64))?.total_rate();
        for _ in 0..u[0] {
            clock.add(exp(q_here, &mut rng));
        }
        for _ in 0..total {
            clock.add(exp(q_above, &mut rng));
        }
        q_above = q_here;
    }
    Ok(clock.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{window, EnvironmentLaw};

    fn rates(lambda: f64, mu: &[f64]) -> SiteRates {
        SiteRates::new(lambda, mu.to_vec()).unwrap()
    }

    #[test]
    fn pmf_examples() {
        assert!((offspring_pmf(&rates(1.0, &[1.0]), 1, &[0]) - 0.5).abs() < 1e-15);
        let s = rates(4.0, &[1.0, 1.0]);
        assert!((offspring_pmf(&s, 2, &[1, 0]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(offspring_pmf(&s, 2, &[0, 3]), 0.0);
        // multinomial (2 choose 1) * (1/6)^2 * (4/6)
        assert!((offspring_pmf(&s, 1, &[1, 1]) - 2.0 / 36.0 * 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(offspring_pmf(&rates(1.0, &[1.0, 0.0]), 1, &[0, 1]), 0.0);
        assert_eq!(offspring_pmf(&rates(0.0, &[1.0]), 1, &[0]), 0.0);
    }

    #[test]
    fn pmf_mass_up_to_total_30() {
        let s = rates(4.0, &[1.0, 1.0]);
        let mut sum = 0.0;
        for a in 0..=30u64 {
            for b in 0..=(30 - a) {
                sum += offspring_pmf(&s, 1, &[a, b]);
            }
        }
        let bound = 1.0 - (2.0f64 / 6.0).powi(31);
        assert!(sum >= bound - 1e-12 && sum <= 1.0 + 1e-12, "sum {sum}");
    }

    #[test]
    fn sample_rejects_bad_parents() {
        let mut rng = StreamKey::new(1).rng();
        assert_eq!(offspring_sample(&rates(0.0, &[1.0]), 1, &mut rng), Err(Error::ZeroLambda));
        assert!(offspring_sample(&rates(1.0, &[1.0]), 2, &mut rng).is_err());
        assert!(offspring_sample(&rates(1.0, &[1.0]), 0, &mut rng).is_err());
        let v = offspring_sample(&rates(1.0, &[0.0, 0.0]), 2, &mut rng).unwrap();
        assert_eq!(v, vec![1, 0]);
    }

    #[test]
    fn mean_matrix_is_build_m() {
        let s = rates(4.0, &[1.0, 1.0]);
        assert_eq!(mean_matrix(&s).unwrap(), build_m(&s).unwrap());
        assert_eq!(mean_matrix(&rates(2.0, &[1.0])).unwrap().get(0, 0), 0.5);
    }

    #[test]
    fn pure_birth_root_goes_extinct_immediately() {
        let law = EnvironmentLaw::constant(rates(2.0, &[0.0, 0.0])).unwrap();
        let w = window(&law, 0, -5, 5).unwrap();
        let r = simulate_branching(&w, 100, StreamKey::new(4)).unwrap();
        assert_eq!(r.generations, vec![vec![1, 0], vec![0, 0]]);
        assert!(r.is_extinct());
        assert_eq!(r.at(-1), vec![0, 0]);
        assert_eq!(r.at(-7), vec![0, 0]);
    }

    #[test]
    fn branching_is_deterministic_and_caps() {
        let law = EnvironmentLaw::constant(rates(3.0, &[1.0, 1.0])).unwrap();
        let w = window(&law, 0, -5, 5).unwrap();
        let a = simulate_branching(&w, 50, StreamKey::new(8)).unwrap();
        let b = simulate_branching(&w, 50, StreamKey::new(8)).unwrap();
        assert_eq!(a, b);
        let supercritical = EnvironmentLaw::constant(rates(1.0, &[2.0, 4.0])).unwrap();
        let w = window(&supercritical, 0, -5, 5).unwrap();
        let r = simulate_branching(&w, 5, StreamKey::new(8)).unwrap();
        assert!(r.censored || r.is_extinct());
        if r.censored {
            assert_eq!(reconstruct_t1(&r, &w, StreamKey::new(1)), Err(Error::CensoredRealization));
        }
    }

    #[test]
    fn zero_lambda_site_is_reported() {
        let law = EnvironmentLaw::constant(rates(0.0, &[1.0])).unwrap();
        let w = window(&law, 0, -5, 5).unwrap();
        assert_eq!(simulate_branching(&w, 10, StreamKey::new(1)), Err(Error::ZeroLambdaAtSite { site: 0 }));
    }
}
