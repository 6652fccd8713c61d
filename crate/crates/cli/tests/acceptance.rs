//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Run alone with `cargo test -p bdpre-cli --test acceptance`.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use bdpre::analysis::{
    compare_decomposition, empirical_speed, ks_critical_1pct, ks_two_sample, quenched_mean_t1, DecompositionOptions,
};
use bdpre::branching::{offspring_pmf, offspring_sample, simulate_branching};
use bdpre::env::{window, EnvironmentLaw, SiteRates};
use bdpre::matrices::{build_m, classify_recurrence, lambda_conjugacy_residual, lyapunov_top, Verdict};
use bdpre::par::map_replicas;
use bdpre::simulate::{crossing_counts, simulate_walk, StopRule, DEFAULT_STEP_CAP};
use bdpre::stats::mean_and_se;
use bdpre::StreamKey;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn rates(lambda: f64, mu: &[f64]) -> SiteRates {
    SiteRates::new(lambda, mu.to_vec()).unwrap()
}

fn constant(lambda: f64, mu: &[f64]) -> EnvironmentLaw {
    EnvironmentLaw::constant(rates(lambda, mu)).unwrap()
}

fn two_atom() -> EnvironmentLaw {
    EnvironmentLaw::new(2, vec![(0.5, rates(4.0, &[1.0, 1.0])), (0.5, rates(5.0, &[1.0, 1.0]))]).unwrap()
}

/// `M` written out by hand: first row `mu / lambda`, row `k` adds `e_{k-1}`.
fn hand_m(site: &SiteRates) -> DMatrix<f64> {
    let l = site.jump_bound();
    DMatrix::from_fn(l, l, |r, c| site.mu()[c] / site.lambda() + if r >= 1 && c == r - 1 { 1.0 } else { 0.0 })
}

fn spectral_radius_oracle(site: &SiteRates) -> f64 {
    hand_m(site).complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn lyapunov_oracle() -> Check {
    let mut notes = Vec::new();
    for (lambda, mu) in [(4.0, vec![1.0, 1.0]), (3.0, vec![1.0, 1.0]), (2.0, vec![1.0, 2.0]), (2.0, vec![1.0]), (5.0, vec![1.0, 0.5, 2.0])] {
        let site = rates(lambda, &mu);
        let est = lyapunov_top(&constant(lambda, &mu), 100_000, 8, 1_000, StreamKey::new(1)).map_err(|e| e.to_string())?;
        let target = spectral_radius_oracle(&site).ln();
        let gap = (est.gamma_top - target).abs();
        ensure(
            gap <= 3.0 * est.std_error + 1e-6,
            format!("({lambda},{mu:?}): gamma {} vs ln rho {target}, SE {}", est.gamma_top, est.std_error),
        )?;
        notes.push(format!("{:.5}", est.gamma_top));
        if mu == [1.0, 1.0] {
            let expected = if lambda == 4.0 { -0.2120 } else { 0.0 };
            ensure((est.gamma_top - expected).abs() <= 1e-3, format!("({lambda},1,1): gamma {} not within 1e-3 of {expected}", est.gamma_top))?;
        }
    }
    Ok(format!("gammas {}", notes.join(", ")))
}

fn trichotomy() -> Check {
    let mut seen = Vec::new();
    for (lambda, mu, want) in [
        (4.0, [1.0, 1.0], Verdict::TransientRight),
        (3.0, [1.0, 1.0], Verdict::Recurrent),
        (2.0, [1.0, 2.0], Verdict::TransientLeft),
    ] {
        let est = lyapunov_top(&constant(lambda, &mu), 100_000, 8, 1_000, StreamKey::new(2)).map_err(|e| e.to_string())?;
        let v = classify_recurrence(&est, 1e-3).map_err(|e| e.to_string())?;
        ensure(v.verdict == want, format!("({lambda},{mu:?}) classified {:?}, expected {want:?}", v.verdict))?;
        seen.push(format!("{:?}", v.verdict));
    }
    Ok(seen.join(" / "))
}

fn conjugacy() -> Check {
    let mut rng = StreamKey::new(3).rng();
    let mut worst = 0.0f64;
    for case in 0..100 {
        let l = rng.random_range(1..=4usize);
        let n = rng.random_range(1..=8usize);
        let sites: Vec<SiteRates> = (0..n)
            .map(|_| {
                let mu: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..5.0)).collect();
                rates(rng.random_range(0.05..5.0), &mu)
            })
            .collect();
        let r = lambda_conjugacy_residual(&sites).map_err(|e| e.to_string())?;
        ensure(r < 1e-10, format!("case {case} (n={n}, L={l}): residual {r:e}"))?;
        worst = worst.max(r);
    }
    Ok(format!("worst residual {worst:.2e} over 100 sequences"))
}

fn quenched_mean() -> Check {
    let mut notes = Vec::new();
    for (lambda, mu) in [(4.0, vec![1.0, 1.0]), (2.0, vec![1.0])] {
        let site = rates(lambda, &mu);
        let w = window(&constant(lambda, &mu), 0, -8, 8).unwrap();
        let s = quenched_mean_t1(&w, 10_000_000, 1e-10).map_err(|e| e.to_string())?;
        let l = site.jump_bound();
        let x = (DMatrix::identity(l, l) - hand_m(&site)).lu().solve(&DVector::from_element(l, 1.0)).unwrap();
        let oracle = x[0] / lambda;
        ensure(s.converged, format!("({lambda},{mu:?}) did not converge"))?;
        ensure((s.value - 1.0).abs() <= 1e-8, format!("({lambda},{mu:?}) value {}", s.value))?;
        ensure((s.value - oracle).abs() <= 1e-8 * oracle, format!("({lambda},{mu:?}) series {} vs solve {oracle}", s.value))?;
        notes.push(format!("{:.10}", s.value));
    }
    Ok(format!("E T1 = {}", notes.join(", ")))
}

fn decomposition() -> Check {
    let two = two_atom();
    let est = lyapunov_top(&two, 100_000, 8, 1_000, StreamKey::new(5)).map_err(|e| e.to_string())?;
    ensure(est.gamma_top + 3.0 * est.std_error < 0.0, format!("two-atom law has gamma {}", est.gamma_top))?;
    let mut notes = vec![format!("two-atom gamma {:.4}", est.gamma_top)];
    for (name, law) in [("(2,1)", constant(2.0, &[1.0])), ("(4,1,1)", constant(4.0, &[1.0, 1.0])), ("two-atom", two)] {
        let r = compare_decomposition(&law, 10_000, StreamKey::new(50), &DecompositionOptions::default()).map_err(|e| e.to_string())?;
        ensure(r.pass, format!("{name}: ks {:.4} (crit {:.4}), means {:.4} vs {:.4}", r.ks_stat, r.ks_critical, r.mean_direct, r.mean_reconstructed))?;
        notes.push(format!("{name} ks {:.4}<{:.4}", r.ks_stat, r.ks_critical));
    }
    Ok(notes.join(", "))
}

fn branching_structure() -> Check {
    let w = window(&two_atom(), 6, -64, 64).unwrap();
    let n = 10_000;
    let walk = map_replicas(n, |r| {
        let p = simulate_walk(&w, 0, StopRule::HitState(1), DEFAULT_STEP_CAP, StreamKey::new(60).child(r)).unwrap();
        crossing_counts(&p).unwrap().total_at(-1) as f64
    });
    let tree = map_replicas(n, |r| simulate_branching(&w, 10_000, StreamKey::new(61).child(r)).unwrap().total_at(-1) as f64);
    let d = ks_two_sample(&walk, &tree).map_err(|e| e.to_string())?;
    let crit = ks_critical_1pct(walk.len(), tree.len());
    ensure(d < crit, format!("U_-1 totals: ks {d:.4} >= {crit:.4}"))?;
    let mut rng = StreamKey::new(62).rng();
    for site in [rates(4.0, &[1.0, 1.0]), rates(5.0, &[1.0, 1.0]), rates(2.0, &[1.0])] {
        let m = hand_m(&site);
        let l = site.jump_bound();
        for parent in 1..=l {
            let draws: Vec<Vec<u64>> = (0..100_000).map(|_| offspring_sample(&site, parent, &mut rng).unwrap()).collect();
            for k in 0..l {
                let xs: Vec<f64> = draws.iter().map(|u| u[k] as f64).collect();
                let (mean, se) = mean_and_se(&xs);
                ensure(
                    (mean - m[(parent - 1, k)]).abs() <= 4.0 * se.max(1e-12),
                    format!("site {site:?} parent {parent} entry {k}: {mean} vs {}", m[(parent - 1, k)]),
                )?;
            }
        }
        ensure(build_m(&site).unwrap().as_matrix() == &m, "build_M differs from hand-written M".into())?;
    }
    Ok(format!("U_-1 ks {d:.4} < {crit:.4}; offspring means within 4 sigma"))
}

fn lln() -> Check {
    let s = empirical_speed(&constant(4.0, &[1.0, 1.0]), 1_000.0, 200, DEFAULT_STEP_CAP, StreamKey::new(7)).map_err(|e| e.to_string())?;
    ensure((s.mean - 1.0).abs() <= 3.0 * s.std_error, format!("(4,1,1): {} +- {}", s.mean, s.std_error))?;
    let c = empirical_speed(&constant(3.0, &[1.0, 1.0]), 10_000.0, 200, DEFAULT_STEP_CAP, StreamKey::new(8)).map_err(|e| e.to_string())?;
    ensure(c.mean.abs() <= 3.0 * c.std_error, format!("(3,1,1): {} +- {}", c.mean, c.std_error))?;
    Ok(format!("(4,1,1) {:.4} +- {:.4}; (3,1,1) {:.4} +- {:.4}", s.mean, s.std_error, c.mean, c.std_error))
}

fn offspring_law() -> Check {
    let n = 100_000usize;
    let mut cells = 0;
    let mut rng = StreamKey::new(9).rng();
    for site in [rates(1.0, &[1.0]), rates(2.5, &[1.5]), rates(4.0, &[1.0, 1.0]), rates(1.0, &[0.5, 1.5]), rates(3.0, &[0.0, 1.0])] {
        for parent in 1..=site.jump_bound() {
            let mut freq: HashMap<Vec<u64>, u64> = HashMap::new();
            for _ in 0..n {
                *freq.entry(offspring_sample(&site, parent, &mut rng).unwrap()).or_default() += 1;
            }
            for (u, &count) in &freq {
                let p = offspring_pmf(&site, parent, u);
                if p * (n as f64) < 10.0 {
                    continue;
                }
                let sd = (p * (1.0 - p) / n as f64).sqrt();
                ensure(
                    (count as f64 / n as f64 - p).abs() <= 4.0 * sd,
                    format!("site {site:?} parent {parent} cell {u:?}: {count} vs p {p}"),
                )?;
                cells += 1;
            }
        }
    }
    let site = rates(4.0, &[1.0, 1.0]);
    let mut total = 0.0;
    for a in 0..=30u64 {
        for b in 0..=30 - a {
            total += offspring_pmf(&site, 1, &[a, b]);
        }
    }
    let bound = 1.0 - (2.0f64 / 6.0).powi(31);
    ensure(total >= bound - 1e-12 && total <= 1.0 + 1e-12, format!("partial sum {total} below {bound}"))?;
    Ok(format!("{cells} cells within 4 sigma; partial mass {total:.15}"))
}

fn run_cli(dir: &Path, command: &str, config: &serde_json::Value, tag: &str, threads: usize) -> Result<(serde_json::Value, Vec<u8>), String> {
    let mut config = config.clone();
    let out = dir.join(format!("{command}-{tag}.out"));
    config["output_path"] = serde_json::Value::String(out.display().to_string());
    let cfg = dir.join(format!("{command}-{tag}.json"));
    std::fs::write(&cfg, serde_json::to_vec(&config).unwrap()).map_err(|e| e.to_string())?;
    let dump = dir.join(format!("{command}-{tag}.paths.csv"));
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bdpre"));
    cmd.arg(command).arg(&cfg).arg("--threads").arg(threads.to_string());
    if command == "passage" {
        cmd.arg("--dump-paths").arg(&dump);
    }
    let status = cmd.status().map_err(|e| e.to_string())?;
    ensure(status.success(), format!("{command} exited with {status}"))?;
    let (report_path, extra) = if command == "simulate" {
        (dir.join(format!("{command}-{tag}.out.json")), std::fs::read(&out).map_err(|e| e.to_string())?)
    } else if command == "passage" {
        (out.clone(), std::fs::read(&dump).map_err(|e| e.to_string())?)
    } else {
        (out.clone(), Vec::new())
    };
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(report_path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    Ok((report, extra))
}

fn reproducibility() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = serde_json::json!({
        "L": 2,
        "atoms": [
            {"weight": 0.5, "lambda": 4.0, "mu": [1.0, 1.0]},
            {"weight": 0.5, "lambda": 5.0, "mu": [1.0, 1.0]}
        ],
        "seed": 2024,
        "steps": 10000,
        "replicas": 4,
        "horizon": 50.0,
        "n_paths": 20,
        "n_samples": 2000,
        "n_env": 20
    });
    for command in ["check", "classify", "passage", "velocity", "verify-decomposition", "simulate"] {
        let (first, first_extra) = run_cli(dir.path(), command, &base, "a", 1)?;
        let mut embedded = first["config"].clone();
        ensure(embedded["seed"] == first["seed"], format!("{command}: report seed differs from config seed"))?;
        embedded.as_object_mut().unwrap().remove("output_path");
        for (tag, threads) in [("b", 1), ("c", 3), ("d", 0)] {
            let (again, extra) = run_cli(dir.path(), command, &embedded, tag, threads)?;
            let (x, y) = (first["result"].to_string(), again["result"].to_string());
            ensure(x == y, format!("{command} at {threads} threads: result differs\n  {x}\n  {y}"))?;
            ensure(first_extra == extra, format!("{command} at {threads} threads: path dump differs"))?;
        }
    }
    Ok("6 commands re-run from embedded config at 1, 3 and default threads".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("lyapunov oracle", lyapunov_oracle),
        ("recurrence trichotomy", trichotomy),
        ("conjugacy identity", conjugacy),
        ("quenched mean series", quenched_mean),
        ("first-passage decomposition", decomposition),
        ("branching structure", branching_structure),
        ("law of large numbers", lln),
        ("offspring law", offspring_law),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {}. {name} [{secs:.1}s]: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {}. {name} [{secs:.1}s]: {reason}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
