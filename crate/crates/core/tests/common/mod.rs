#![allow(dead_code)]

use bdpre::env::{window, EnvironmentLaw, EnvironmentWindow, SiteRates};

pub fn rates(lambda: f64, mu: &[f64]) -> SiteRates {
    SiteRates::new(lambda, mu.to_vec()).unwrap()
}

pub fn constant_law(lambda: f64, mu: &[f64]) -> EnvironmentLaw {
    EnvironmentLaw::constant(rates(lambda, mu)).unwrap()
}

pub fn constant_window(lambda: f64, mu: &[f64]) -> EnvironmentWindow {
    window(&constant_law(lambda, mu), 0, -16, 16).unwrap()
}

/// Two-atom L = 2 law whose atoms are both subcritical.
pub fn two_atom_l2() -> EnvironmentLaw {
    EnvironmentLaw::new(2, vec![(0.5, rates(4.0, &[1.0, 1.0])), (0.5, rates(5.0, &[1.0, 1.0]))]).unwrap()
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    bdpre::stats::mean_and_se(xs)
}

/// |observed - p| within `k` binomial standard deviations for `n` trials.
pub fn within_binomial(hits: u64, n: u64, p: f64, k: f64) -> bool {
    let f = hits as f64 / n as f64;
    (f - p).abs() <= k * (p * (1.0 - p) / n as f64).sqrt()
}
