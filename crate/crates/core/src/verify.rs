//! Runtime property suites behind the `verify` command: the divergence
//! sandwiches, the elementary log inequality, convexity closure, contraction
//! of local packings, and the trajectory Cauchy bound.
//!
//! Each suite re-evaluates its inequality from scratch against the public
//! operations, so a regression anywhere in the chain turns a check red.

use serde::Serialize;

use crate::classes::{convex_combine, membership, sample_member_on_grid, ClassSpec};
use crate::config::RunConfig;
use crate::error::Result;
use crate::grid::{
    chi_square, equivalence_constants, h_function, hellinger, kl_divergence, l2_distance_sq,
};
use crate::mc::sample_iid;
use crate::packing::{contract_packing, greedy_maximal_packing, CandidatePool};
use crate::seeding::{stream, Domain};
use crate::sieve::{compute_constants, run_sieve};

const SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        Self { name, pass, detail }
    }
}

/// Run every suite; pass iff all checks pass.
pub fn verify_all(config: &RunConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    out.extend(divergence_sandwiches(config)?);
    out.push(log_inequality_sweep(config)?);
    out.push(h_monotone_check()?);
    out.push(convexity_closure(config)?);
    out.push(contraction_check(config)?);
    out.push(cauchy_trajectory(config)?);
    Ok(out)
}

/// KL/L2 sandwich, Hellinger/L2 sandwich, and KL <= chi-square over seeded
/// random pairs from the ambient class.
fn divergence_sandwiches(config: &RunConfig) -> Result<Vec<CheckResult>> {
    let bounds = config.bounds;
    let equiv = equivalence_constants(&bounds)?;
    let ambient = ClassSpec::Ambient { bounds };
    let mut rng = stream(config.seed, Domain::Verify, 1);
    let mut worst_kl_lower = f64::INFINITY;
    let mut worst_kl_upper = f64::INFINITY;
    let mut worst_hell_lower = f64::INFINITY;
    let mut worst_hell_upper = f64::INFINITY;
    let mut worst_chi = f64::INFINITY;
    for _ in 0..config.verify_pairs {
        let f = sample_member_on_grid(&ambient, &mut rng, config.m)?;
        let g = sample_member_on_grid(&ambient, &mut rng, config.m)?;
        let l2sq = l2_distance_sq(&f, &g)?;
        let kl = kl_divergence(&f, &g)?;
        let chi = chi_square(&f, &g)?;
        let hell = hellinger(&f, &g)?;
        let hsq = hell * hell;
        worst_kl_lower = worst_kl_lower.min(kl - equiv.c_ab * l2sq);
        worst_kl_upper = worst_kl_upper.min(l2sq / bounds.alpha - kl);
        worst_hell_lower = worst_hell_lower.min(hsq - l2sq / (4.0 * bounds.beta));
        worst_hell_upper = worst_hell_upper.min(l2sq / bounds.alpha - hsq);
        worst_chi = worst_chi.min(chi - kl);
    }
    let kl_pass = worst_kl_lower >= -SLACK && worst_kl_upper >= -SLACK;
    let hell_pass = worst_hell_lower >= -SLACK && worst_hell_upper >= -SLACK;
    let chi_pass = worst_chi >= -SLACK;
    Ok(vec![
        CheckResult::new(
            "kl_l2_sandwich",
            kl_pass,
            format!(
                "{} pairs, worst slacks: lower {worst_kl_lower:.3e}, upper {worst_kl_upper:.3e}",
                config.verify_pairs
            ),
        ),
        CheckResult::new(
            "hellinger_l2_sandwich",
            hell_pass,
            format!(
                "worst slacks: lower {worst_hell_lower:.3e}, upper {worst_hell_upper:.3e}"
            ),
        ),
        CheckResult::new(
            "kl_below_chi_square",
            chi_pass,
            format!("worst slack {worst_chi:.3e}"),
        ),
    ])
}

/// `log x <= (x-1) - h(gamma)(x-1)^2` on a dense `(gamma, x)` grid with
/// `gamma` log-spaced in (0, 100] and `x` spanning `(0, gamma]`.
fn log_inequality_sweep(config: &RunConfig) -> Result<CheckResult> {
    let gammas = 400usize;
    let xs = (config.verify_log_grid / gammas).max(1);
    let mut checked = 0usize;
    let mut failures = 0usize;
    for gi in 0..gammas {
        let gamma = 1e-3 * (1e5f64).powf(gi as f64 / (gammas - 1) as f64);
        for xi in 0..xs {
            let x = (gamma * ((xi as f64 + 1.0) / xs as f64)).min(gamma);
            checked += 1;
            if !crate::grid::elementary_log_check(gamma, x)? {
                failures += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "elementary_log_inequality",
        failures == 0,
        format!("{checked} grid points, {failures} failures"),
    ))
}

/// `h` strictly decreasing on a log grid, with the exact branch value at 1.
fn h_monotone_check() -> Result<CheckResult> {
    if h_function(1.0)? != 0.5 {
        return Ok(CheckResult::new(
            "h_strictly_decreasing",
            false,
            "h(1) != 1/2".into(),
        ));
    }
    let n = 4000;
    let mut prev = f64::INFINITY;
    let mut ok = true;
    for i in 0..=n {
        let gamma = 1e-3 * (1e6f64).powf(i as f64 / n as f64);
        let h = h_function(gamma)?;
        if h >= prev {
            ok = false;
            break;
        }
        prev = h;
    }
    Ok(CheckResult::new(
        "h_strictly_decreasing",
        ok,
        format!("{} log-grid points, h(1) = 1/2 exact", n + 1),
    ))
}

/// Random convex combinations of members stay members.
fn convexity_closure(config: &RunConfig) -> Result<CheckResult> {
    use rand::Rng;
    let spec = config.resolve_class()?;
    let m = spec.grid_size().unwrap_or(config.m);
    let mut rng = stream(config.seed, Domain::Verify, 2);
    let mut failures = 0usize;
    for _ in 0..config.verify_combos {
        let f = sample_member_on_grid(&spec, &mut rng, m)?;
        let g = sample_member_on_grid(&spec, &mut rng, m)?;
        let kappa: f64 = rng.gen();
        let combo = convex_combine(&f, &g, kappa)?;
        if !membership(&spec, &combo)?.is_member {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "convexity_closure",
        failures == 0,
        format!(
            "{} combinations in {}, {failures} left the class",
            config.verify_combos,
            spec.tag()
        ),
    ))
}

/// Contract random local packings to eps/2 and eps/3 and re-validate them:
/// same cardinality, inside the shrunk ball, separated at the shrunk scale,
/// still members.
fn contraction_check(config: &RunConfig) -> Result<CheckResult> {
    let spec = config.resolve_class()?;
    let m = spec.grid_size().unwrap_or(config.m);
    let c = config.c;
    let mut rng = stream(config.seed, Domain::Verify, 3);
    let mut checked = 0usize;
    let mut failures = 0usize;
    let mut attempts = 0usize;
    while checked < config.verify_contractions && attempts < config.verify_contractions * 8 {
        attempts += 1;
        let theta = sample_member_on_grid(&spec, &mut rng, m)?;
        let members: Vec<_> = (0..20)
            .map(|_| sample_member_on_grid(&spec, &mut rng, m))
            .collect::<Result<_>>()?;
        let pool = CandidatePool::new(members, "contraction-check")?;
        let mut radii: Vec<f64> = (0..pool.len())
            .map(|i| l2_distance_sq(&theta, pool.get(i)).map(f64::sqrt))
            .collect::<Result<_>>()?;
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let eps = radii[pool.len() / 2].max(1e-6) * 1.2;
        let packing = greedy_maximal_packing(&pool, Some((&theta, eps)), eps / c)?;
        if packing.len() < 2 {
            continue;
        }
        checked += 1;
        let children: Vec<_> = packing
            .center_indices
            .iter()
            .map(|&i| pool.get(i).clone())
            .collect();
        for shrink in [2.0, 3.0] {
            let eps_prime = eps / shrink;
            let contracted = contract_packing(&theta, eps, eps_prime, &children, eps / c)?;
            if contracted.len() != children.len() {
                failures += 1;
                continue;
            }
            let sep_prime = eps_prime / c;
            let mut ok = true;
            for (i, g) in contracted.iter().enumerate() {
                let d = l2_distance_sq(g, &theta)?.sqrt();
                ok &= d <= eps_prime * (1.0 + 1e-9);
                ok &= membership(&spec, g)?.is_member;
                for h in contracted.iter().skip(i + 1) {
                    ok &= l2_distance_sq(g, h)?.sqrt() > sep_prime;
                }
            }
            if !ok {
                failures += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "contraction_packing",
        failures == 0 && checked >= config.verify_contractions,
        format!("{checked} packings contracted twice each, {failures} invalid"),
    ))
}

/// The trajectory Cauchy bound over seeded sieve runs.
fn cauchy_trajectory(config: &RunConfig) -> Result<CheckResult> {
    let spec = config.resolve_class()?;
    let m = spec.grid_size().unwrap_or(config.m);
    let mut rng = stream(config.seed, Domain::Verify, 4);
    let members: Vec<_> = (0..48)
        .map(|_| sample_member_on_grid(&spec, &mut rng, m))
        .collect::<Result<_>>()?;
    let pool = CandidatePool::new(members, "cauchy-check")?;
    let constants = compute_constants(&config.bounds, config.c)?.with_pool_diameter(&pool);
    let mut worst = f64::NEG_INFINITY;
    for run in 0..config.verify_sieve_runs {
        let truth = pool.get(run % pool.len());
        let mut srng = stream(config.seed, Domain::Verify, 1000 + run as u64);
        let samples = sample_iid(truth, 120, &mut srng);
        let (_, trace) = run_sieve(&samples, &constants, &pool, config.j_cap.min(8))?;
        worst = worst.max(trace.max_cauchy_violation(&pool));
    }
    Ok(CheckResult::new(
        "cauchy_trajectory",
        worst <= 1e-12,
        format!(
            "{} runs, worst bound violation {worst:.3e}",
            config.verify_sieve_runs
        ),
    ))
}
