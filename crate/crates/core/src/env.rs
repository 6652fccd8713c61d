//! The i.i.d. random environment.
//!
//! A law is a finite list of weighted atoms, each atom a full set of site
//! rates. Realizations are addressed by site index and derived from the seed
//! with a counter-based mix, so a window can grow in either direction, be
//! shared between threads, and always produce the same values.

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::counter_uniform;

/// Weights must sum to one within this tolerance once a law is built.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;
/// Looser tolerance accepted from text configs; weights are renormalized after.
pub const CONFIG_WEIGHT_TOLERANCE: f64 = 1e-9;
/// No site index may exceed this in magnitude.
pub const MAX_SITE_INDEX: i64 = 1 << 40;
/// Default limit on how far left of the origin a window may grow.
pub const DEFAULT_MAX_LEFT_SITES: u64 = 1_000_000;

/// Rates at one site: `lambda` for the +1 jump and `mu[l-1]` for the jump `-l`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteRates {
    lambda: f64,
    mu: Vec<f64>,
    #[serde(skip)]
    total_rate: f64,
}

impl SiteRates {
    pub fn new(lambda: f64, mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidLaw("mu must have length L >= 1".into()));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidLaw(format!("lambda = {lambda} is not a finite nonnegative rate")));
        }
        if let Some((l, m)) = mu.iter().enumerate().find(|(_, m)| !m.is_finite() || **m < 0.0) {
            return Err(Error::InvalidLaw(format!("mu^{} = {m} is not a finite nonnegative rate", l + 1)));
        }
        let total_rate = lambda + mu.iter().sum::<f64>();
        Ok(SiteRates { lambda, mu, total_rate })
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `mu()[l-1]` is the rate of the jump `-l`.
    #[inline]
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    #[inline]
    pub fn jump_bound(&self) -> usize {
        self.mu.len()
    }

    #[inline]
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// Multiply every rate by `c`.
    pub fn scaled(&self, c: f64) -> Result<SiteRates> {
        SiteRates::new(self.lambda * c, self.mu.iter().map(|m| m * c).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub weight: f64,
    pub rates: SiteRates,
}

/// Finite-support law of a single site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvironmentLaw {
    jump_bound: usize,
    atoms: Vec<Atom>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl EnvironmentLaw {
    pub fn new(jump_bound: usize, atoms: Vec<(f64, SiteRates)>) -> Result<Self> {
        if jump_bound == 0 {
            return Err(Error::InvalidLaw("L must be a positive integer".into()));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidLaw("a law needs at least one atom".into()));
        }
        let mut total = 0.0;
        for (k, (w, rates)) in atoms.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidLaw(format!("atom {k}: weight {w} is not a probability")));
            }
            if rates.jump_bound() != jump_bound {
                return Err(Error::InvalidLaw(format!(
                    "atom {k}: mu has length {}, expected L = {jump_bound}",
                    rates.jump_bound()
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidLaw(format!("weights sum to {total}, not 1")));
        }
        let atoms: Vec<Atom> = atoms.into_iter().map(|(weight, rates)| Atom { weight, rates }).collect();
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.weight;
                acc
            })
            .collect();
        Ok(EnvironmentLaw { jump_bound, atoms, cumulative })
    }

    /// Degenerate law: every site has the same rates.
    pub fn constant(rates: SiteRates) -> Result<Self> {
        EnvironmentLaw::new(rates.jump_bound(), vec![(1.0, rates)])
    }

    pub fn from_config(config: &LawConfig) -> Result<Self> {
        let total: f64 = config.atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > CONFIG_WEIGHT_TOLERANCE {
            return Err(Error::InvalidLaw(format!("weights sum to {total}, not 1 (tolerance 1e-9)")));
        }
        let atoms = config
            .atoms
            .iter()
            .map(|a| Ok((a.weight / total, SiteRates::new(a.lambda, a.mu.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        EnvironmentLaw::new(config.jump_bound, atoms)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: LawConfig = serde_json::from_str(text).map_err(|e| Error::InvalidLaw(e.to_string()))?;
        EnvironmentLaw::from_config(&config)
    }

    pub fn to_config(&self) -> LawConfig {
        LawConfig {
            jump_bound: self.jump_bound,
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomConfig { weight: a.weight, lambda: a.rates.lambda, mu: a.rates.mu.clone() })
                .collect(),
        }
    }

    #[inline]
    pub fn jump_bound(&self) -> usize {
        self.jump_bound
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Index of the atom selected by a uniform `u` in `[0, 1)`.
    #[inline]
    pub fn atom_index(&self, u: f64) -> usize {
        self.cumulative.iter().position(|&c| u < c).unwrap_or(self.atoms.len() - 1)
    }

    /// Law with every rate multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Ok((a.weight, a.rates.scaled(c)?)))
            .collect::<Result<Vec<_>>>()?;
        EnvironmentLaw::new(self.jump_bound, atoms)
    }
}

/// Text form of a law: `{ "L": int, "atoms": [ { "weight", "lambda", "mu" } ] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    #[serde(rename = "L")]
    pub jump_bound: usize,
    pub atoms: Vec<AtomConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub weight: f64,
    pub lambda: f64,
    pub mu: Vec<f64>,
}

fn sample_atom_index(law: &EnvironmentLaw, seed: u64, index: i64) -> usize {
    law.atom_index(counter_uniform(seed, index as u64))
}

/// The rates at site `index` of the realization with this `seed`.
pub fn sample_site(law: &EnvironmentLaw, seed: u64, index: i64) -> &SiteRates {
    &law.atoms[sample_atom_index(law, seed, index)].rates
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    pub violations: Vec<String>,
    pub notes: Vec<String>,
}

impl ConditionReport {
    pub fn all_hold(&self) -> bool {
        self.c1 && self.c2 && self.c3
    }
}

/// Check the existence and integrability hypotheses atom by atom.
///
/// For a finite-support law:
/// * positivity of the total rate holds iff every atom has a positive total rate;
/// * the reciprocal-rate series both diverge whenever rates are bounded, which
///   finite support guarantees, so that condition reduces to the first;
/// * the log-moments of `lambda / q` and `mu^L / q` are finite iff both are
///   positive on every atom.
pub fn check_conditions(law: &EnvironmentLaw) -> ConditionReport {
    let big_l = law.jump_bound();
    let mut violations = Vec::new();
    let mut c1 = true;
    let mut c3 = true;
    for (k, atom) in law.atoms().iter().enumerate() {
        let r = &atom.rates;
        if r.total_rate() <= 0.0 {
            c1 = false;
            violations.push(format!("C1: atom {k} has total rate 0"));
        }
        if r.lambda() <= 0.0 {
            c3 = false;
            violations.push(format!("C3: atom {k} has lambda = 0, so E ln(lambda/q) = -inf"));
        }
        if r.mu()[big_l - 1] <= 0.0 {
            c3 = false;
            violations.push(format!("C3: atom {k} has mu^{big_l} = 0, so E ln(mu^L/q) = -inf"));
        }
    }
    let c2 = c1;
    let mut notes = Vec::new();
    if c2 {
        let q_max = law.atoms().iter().map(|a| a.rates.total_rate()).fold(0.0, f64::max);
        notes.push(format!(
            "C2: finite support bounds every total rate by {q_max}, so both reciprocal-rate series diverge almost surely"
        ));
    } else {
        violations.push("C2: not certified because C1 fails".into());
    }
    ConditionReport { c1, c2, c3, violations, notes }
}

#[derive(Debug)]
struct Realized {
    lo: i64,
    atoms: Vec<u32>,
}

impl Realized {
    fn hi(&self) -> i64 {
        self.lo + self.atoms.len() as i64 - 1
    }
}

/// A lazily realized stretch of the environment.
///
/// Reads go through a shared snapshot; extension swaps in a larger one under a
/// write lock. Since every site value is a pure function of `(seed, index)`,
/// concurrent extensions can only race on bookkeeping, never on values.
#[derive(Debug)]
pub struct EnvironmentWindow {
    law: EnvironmentLaw,
    seed: u64,
    max_left_sites: u64,
    realized: RwLock<Arc<Realized>>,
}

impl Clone for EnvironmentWindow {
    fn clone(&self) -> Self {
        EnvironmentWindow {
            law: self.law.clone(),
            seed: self.seed,
            max_left_sites: self.max_left_sites,
            realized: RwLock::new(self.snapshot()),
        }
    }
}

fn check_index(index: i64) -> Result<()> {
    if index.abs() > MAX_SITE_INDEX {
        return Err(Error::InvalidParameter {
            name: "site index",
            reason: format!("{index} exceeds the limit of 2^40 in magnitude"),
        });
    }
    Ok(())
}

/// Realize `[lo, hi]` of the environment with this seed.
pub fn window(law: &EnvironmentLaw, seed: u64, lo: i64, hi: i64) -> Result<EnvironmentWindow> {
    EnvironmentWindow::new(law.clone(), seed, lo, hi)
}

impl EnvironmentWindow {
    pub fn new(law: EnvironmentLaw, seed: u64, lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidParameter { name: "lo", reason: format!("lo = {lo} > hi = {hi}") });
        }
        check_index(lo)?;
        check_index(hi)?;
        let atoms = (lo..=hi).map(|i| sample_atom_index(&law, seed, i) as u32).collect();
        Ok(EnvironmentWindow {
            law,
            seed,
            max_left_sites: DEFAULT_MAX_LEFT_SITES,
            realized: RwLock::new(Arc::new(Realized { lo, atoms })),
        })
    }

    /// Limit how far left of the origin extension may go.
    pub fn with_max_left_sites(mut self, max_left_sites: u64) -> Self {
        self.max_left_sites = max_left_sites;
        self
    }

    pub fn law(&self) -> &EnvironmentLaw {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn jump_bound(&self) -> usize {
        self.law.jump_bound()
    }

    pub fn bounds(&self) -> (i64, i64) {
        let snap = self.snapshot();
        (snap.lo, snap.hi())
    }

    fn snapshot(&self) -> Arc<Realized> {
        Arc::clone(&self.realized.read().unwrap_or_else(|e| e.into_inner()))
    }

    fn left_limit(&self) -> i64 {
        -(self.max_left_sites.min(MAX_SITE_INDEX as u64) as i64)
    }

    /// Make sure `index` is realized; grows geometrically to amortize.
    pub fn extend_to(&self, index: i64) -> Result<()> {
        self.grow(index).map(|_| ())
    }

    fn grow(&self, index: i64) -> Result<Arc<Realized>> {
        if index < self.left_limit() || index > MAX_SITE_INDEX {
            return Err(Error::WindowOverflow { index });
        }
        let mut guard = self.realized.write().unwrap_or_else(|e| e.into_inner());
        let cur = Arc::clone(&guard);
        if index >= cur.lo && index <= cur.hi() {
            return Ok(cur);
        }
        let span = cur.atoms.len() as i64;
        let (lo, hi) = if index < cur.lo {
            ((index - span).max(self.left_limit()).min(index), cur.hi())
        } else {
            (cur.lo, (index + span).min(MAX_SITE_INDEX).max(index))
        };
        let mut atoms = Vec::with_capacity((hi - lo + 1) as usize);
        atoms.extend((lo..cur.lo).map(|i| sample_atom_index(&self.law, self.seed, i) as u32));
        atoms.extend_from_slice(&cur.atoms);
        atoms.extend((cur.hi() + 1..=hi).map(|i| sample_atom_index(&self.law, self.seed, i) as u32));
        let next = Arc::new(Realized { lo, atoms });
        *guard = Arc::clone(&next);
        Ok(next)
    }

    /// Rates at `index`, extending the window if needed.
    pub fn site(&self, index: i64) -> Result<&SiteRates> {
        self.cursor().site(index)
    }

    /// A reader that caches the current snapshot; cheap per-site lookups.
    pub fn cursor(&self) -> SiteCursor<'_> {
        SiteCursor { window: self, snap: self.snapshot() }
    }
}

pub struct SiteCursor<'a> {
    window: &'a EnvironmentWindow,
    snap: Arc<Realized>,
}

impl<'a> SiteCursor<'a> {
    #[inline]
    pub fn site(&mut self, index: i64) -> Result<&'a SiteRates> {
        let off = index.wrapping_sub(self.snap.lo);
        if off < 0 || off >= self.snap.atoms.len() as i64 {
            self.snap = self.window.grow(index)?;
        }
        let atom = self.snap.atoms[(index - self.snap.lo) as usize] as usize;
        Ok(&self.window.law.atoms[atom].rates)
    }
}
