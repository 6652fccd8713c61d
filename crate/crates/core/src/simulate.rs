//! Trajectories of the continuous-time process and its jump chain.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::env::{EnvironmentWindow, SiteRates};
use crate::error::{Error, Result};
use crate::stats::PairwiseSum;

pub const DEFAULT_STEP_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StopRule {
    /// Stop on the first arrival at this state.
    HitState(i64),
    /// Stop at this time; the state then is the last recorded one.
    TimeHorizon(f64),
    /// Stop after exactly this many jumps.
    StepCap(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub new_state: i64,
}

/// Set when the safety step cap fired before the stop rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Censoring {
    pub step_cap: u64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub start_state: i64,
    pub jump_bound: usize,
    pub events: Vec<Event>,
    pub censored: Option<Censoring>,
}

impl PathRecord {
    pub fn is_censored(&self) -> bool {
        self.censored.is_some()
    }

    pub fn final_state(&self) -> i64 {
        self.events.last().map_or(self.start_state, |e| e.new_state)
    }

    /// `(state, holding time)` for every completed sojourn.
    pub fn holding_times(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let mut state = self.start_state;
        let mut t = 0.0;
        self.events.iter().map(move |e| {
            let out = (state, e.time - t);
            state = e.new_state;
            t = e.time;
            out
        })
    }
}

/// States of the jump chain, `states[0]` being the start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiscretePath {
    states: Vec<i64>,
    jump_bound: usize,
    censored: bool,
}

impl DiscretePath {
    /// Validates that every step is `+1` or `-l` with `1 <= l <= jump_bound`.
    pub fn new(states: Vec<i64>, jump_bound: usize) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidParameter { name: "states", reason: "a path has at least one state".into() });
        }
        if let Some(w) = states.windows(2).find(|w| {
            let d = w[1] - w[0];
            d != 1 && !(d < 0 && -d <= jump_bound as i64)
        }) {
            return Err(Error::InvalidParameter {
                name: "states",
                reason: format!("step {} -> {} is not +1 or -l with l <= {jump_bound}", w[0], w[1]),
            });
        }
        Ok(DiscretePath { states, jump_bound, censored: false })
    }

    pub fn states(&self) -> &[i64] {
        &self.states
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn jump_bound(&self) -> usize {
        self.jump_bound
    }

    pub fn is_censored(&self) -> bool {
        self.censored
    }
}

/// Jump size for a uniform `u` in `[0, 1)`: `+1` with probability `lambda/q`,
/// `-l` with probability `mu^l/q`.
#[inline]
pub(crate) fn draw_jump(site: &SiteRates, u: f64) -> i64 {
    let mut r = u * site.total_rate();
    if r < site.lambda() {
        return 1;
    }
    r -= site.lambda();
    let mut last = 0;
    for (k, &m) in site.mu().iter().enumerate() {
        if m > 0.0 {
            if r < m {
                return -(k as i64 + 1);
            }
            last = k + 1;
        }
        r -= m;
    }
    // rounding pushed r past the end; take the last jump with positive rate
    if last == 0 {
        1
    } else {
        -(last as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    state: i64,
    time: f64,
    steps: u64,
    censored: bool,
}

/// Core event loop; `observe(time, new_state)` sees every jump.
fn run_clock(
    window: &EnvironmentWindow,
    start: i64,
    stop: StopRule,
    step_cap: u64,
    rng: &mut impl Rng,
    mut observe: impl FnMut(f64, i64),
) -> Result<Outcome> {
    let mut cursor = window.cursor();
    let mut state = start;
    let mut clock = PairwiseSum::new();
    let mut time = 0.0f64;
    let mut steps = 0u64;
    loop {
        match stop {
            StopRule::HitState(n) if state == n => break,
            StopRule::StepCap(m) if steps == m => break,
            _ => {}
        }
        if steps == step_cap {
            return Ok(Outcome { state, time, steps, censored: true });
        }
        let site = cursor.site(state)?;
        let q = site.total_rate();
        if q <= 0.0 {
            return Err(Error::AbsorbedState { state });
        }
        let hold: f64 = Exp1.sample(rng);
        let hold = hold / q;
        if let StopRule::TimeHorizon(h) = stop {
            if time + hold > h {
                break;
            }
        }
        clock.add(hold);
        let t = clock.total();
        time = if t > time { t } else { time.next_up() };
        state += draw_jump(site, rng.random::<f64>());
        steps += 1;
        observe(time, state);
    }
    Ok(Outcome { state, time, steps, censored: false })
}

fn check_step_cap(step_cap: u64) -> Result<()> {
    if step_cap == 0 {
        return Err(Error::InvalidParameter { name: "step_cap", reason: "must be positive".into() });
    }
    Ok(())
}

/// Simulate `N_t` from `start`: exponential holding times with rate `q_n`,
/// then a jump drawn from the site's rates.
pub fn simulate_path(
    window: &EnvironmentWindow,
    start: i64,
    stop: StopRule,
    step_cap: u64,
    key: crate::rng::StreamKey,
) -> Result<PathRecord> {
    check_step_cap(step_cap)?;
    let mut events = Vec::new();
    let out = run_clock(window, start, stop, step_cap, &mut key.rng(), |time, new_state| {
        events.push(Event { time, new_state })
    })?;
    Ok(PathRecord {
        start_state: start,
        jump_bound: window.jump_bound(),
        events,
        censored: out.censored.then_some(Censoring { step_cap, time: out.time }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Passage {
    pub time: f64,
    pub censored: bool,
    pub steps: u64,
}

/// First time the process started at 0 reaches `n >= 1`, or the time at
/// which `step_cap` jumps were used up (flagged as censored).
pub fn first_passage_time(
    window: &EnvironmentWindow,
    n: i64,
    key: crate::rng::StreamKey,
    step_cap: u64,
) -> Result<Passage> {
    if n < 1 {
        return Err(Error::InvalidParameter { name: "n", reason: format!("target {n} must be at least 1") });
    }
    check_step_cap(step_cap)?;
    let out = run_clock(window, 0, StopRule::HitState(n), step_cap, &mut key.rng(), |_, _| {})?;
    Ok(Passage { time: out.time, censored: out.censored, steps: out.steps })
}

/// State at time `horizon` of the process started at 0, and whether the cap fired.
pub fn position_at(
    window: &EnvironmentWindow,
    horizon: f64,
    step_cap: u64,
    key: crate::rng::StreamKey,
) -> Result<(i64, bool)> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::InvalidParameter { name: "horizon", reason: format!("{horizon} is not a positive time") });
    }
    check_step_cap(step_cap)?;
    let out = run_clock(window, 0, StopRule::TimeHorizon(horizon), step_cap, &mut key.rng(), |_, _| {})?;
    Ok((out.state, out.censored))
}

/// The jump chain: the start state followed by the state after each event.
pub fn embedded_chain(path: &PathRecord) -> DiscretePath {
    let mut states = Vec::with_capacity(path.events.len() + 1);
    states.push(path.start_state);
    states.extend(path.events.iter().map(|e| e.new_state));
    DiscretePath { states, jump_bound: path.jump_bound, censored: path.is_censored() }
}

/// Simulate the jump chain directly from its transition probabilities.
pub fn simulate_walk(
    window: &EnvironmentWindow,
    start: i64,
    stop: StopRule,
    step_cap: u64,
    key: crate::rng::StreamKey,
) -> Result<DiscretePath> {
    check_step_cap(step_cap)?;
    if let StopRule::TimeHorizon(_) = stop {
        return Err(Error::InvalidParameter {
            name: "stop",
            reason: "the jump chain has no clock; use HitState or StepCap".into(),
        });
    }
    let mut rng = key.rng();
    let mut cursor = window.cursor();
    let mut state = start;
    let mut states = vec![start];
    let mut censored = false;
    loop {
        let steps = states.len() as u64 - 1;
        match stop {
            StopRule::HitState(n) if state == n => break,
            StopRule::StepCap(m) if steps == m => break,
            _ => {}
        }
        if steps == step_cap {
            censored = true;
            break;
        }
        let site = cursor.site(state)?;
        if site.total_rate() <= 0.0 {
            return Err(Error::AbsorbedState { state });
        }
        state += draw_jump(site, rng.random::<f64>());
        states.push(state);
    }
    Ok(DiscretePath { states, jump_bound: window.jump_bound(), censored })
}

/// Down-crossing counts `U_i` of a first-passage path from 0 to 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CrossingCounts {
    /// Most negative site reached (0 if the path never went below 0).
    pub depth: i64,
    pub jump_bound: usize,
    /// `counts[j]` is `U_{-(j+1)}`.
    pub counts: Vec<Vec<u64>>,
}

impl CrossingCounts {
    /// `U_i` for `i <= 0`; `U_0 = e_1`, zero below the depth.
    pub fn at(&self, i: i64) -> Vec<u64> {
        let mut out = vec![0; self.jump_bound];
        if i == 0 {
            out[0] = 1;
        } else if i < 0 {
            if let Some(u) = self.counts.get((-i - 1) as usize) {
                out.copy_from_slice(u);
            }
        }
        out
    }

    pub fn total_at(&self, i: i64) -> u64 {
        self.at(i).iter().sum()
    }
}

/// `U_{i,l}` counts jumps before the first visit to 1 that start above `i` and
/// land at `i - l + 1`. A jump `a -> b` with `b < a` therefore contributes type
/// `i - b + 1` to every `i` in `b..a` (restricted to `i <= -1`).
pub fn crossing_counts(path: &DiscretePath) -> Result<CrossingCounts> {
    let states = path.states();
    if states[0] != 0 {
        return Err(Error::PathNotFirstPassage(format!("starts at {}, not 0", states[0])));
    }
    if *states.last().unwrap() != 1 {
        return Err(Error::PathNotFirstPassage("does not end at 1".into()));
    }
    if states[..states.len() - 1].iter().any(|&s| s >= 1) {
        return Err(Error::PathNotFirstPassage("visits 1 before its last step".into()));
    }
    let depth = states.iter().copied().min().unwrap_or(0).min(0);
    let l = path.jump_bound();
    let mut counts = vec![vec![0u64; l]; (-depth) as usize];
    for w in states.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b >= a {
            continue;
        }
        for i in b..a.min(0) {
            counts[(-i - 1) as usize][(i - b) as usize] += 1;
        }
    }
    Ok(CrossingCounts { depth, jump_bound: l, counts })
}
