//! Sampling from grid densities, Monte Carlo risk estimation, rate-exponent
//! sweeps, and the empirical concentration experiments.
//!
//! Every report here is a pure function of `(spec, config, master seed)`:
//! replicates draw from counter-derived streams (see [`crate::seeding`]) and
//! are reduced in index order, so results do not depend on scheduling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classes::{convex_combine, membership, sample_member_on_grid, ClassSpec};
use crate::error::{Error, Result};
use crate::grid::{l2_distance, l2_distance_sq, BoundsSpec, GridDensity};
use crate::packing::{local_entropy_estimate, CandidatePool, MonotoneEntropy};
use crate::parallel::{map_indexed, ExecMode};
use crate::seeding::{replicate_index, stream, Domain};
use crate::sieve::{
    compute_constants, run_adaptive_sieve, run_sieve, solve_j_bar, AdaptiveConfig, SieveConstants,
};

/// Draw one point from `f` by inverse CDF: locate the cell by cumulative
/// mass, then place the point uniformly inside it.
pub fn draw_one(f: &GridDensity, rng: &mut ChaCha8Rng) -> f64 {
    let m = f.m();
    let u: f64 = rng.gen();
    let target = u * m as f64; // total mass scaled by m
    let mut cum = 0.0;
    for (i, &v) in f.values().iter().enumerate() {
        let next = cum + v;
        if target <= next || i == m - 1 {
            let frac = if v > 0.0 {
                ((target - cum) / v).clamp(0.0, 1.0)
            } else {
                rng.gen()
            };
            return ((i as f64 + frac) / m as f64).clamp(0.0, 1.0);
        }
        cum = next;
    }
    1.0
}

/// `n` iid draws from `f`, deterministic given the stream.
pub fn sample_iid(f: &GridDensity, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| draw_one(f, rng)).collect()
}

/// How the traversal depth is chosen for estimator runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum DepthPolicy {
    /// Descend a fixed number of levels (the desk-scale default: the
    /// theorem's depth condition keeps its conservative constants and stops
    /// at 1 for any n this lab can afford).
    Fixed(usize),
    /// Solve the depth condition with local entropy estimated from the pool.
    Theorem,
}

/// Estimator configuration shared by the risk harness and the CLI.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimatorConfig {
    pub depth: DepthPolicy,
    pub j_cap: usize,
    pub radius_multiplier: f64,
    pub adaptive: bool,
    pub packing_budget: usize,
    /// Centers used when the theorem depth needs entropy estimates.
    pub center_count: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            depth: DepthPolicy::Fixed(10),
            j_cap: 10,
            radius_multiplier: 1.0,
            adaptive: false,
            packing_budget: 1 << 20,
            center_count: 32,
        }
    }
}

/// Resolve the depth for a given sample size.
fn resolve_depth(
    n: usize,
    constants: &SieveConstants,
    pool: &CandidatePool,
    config: &EstimatorConfig,
) -> Result<usize> {
    match config.depth {
        DepthPolicy::Fixed(j) => Ok(j.min(config.j_cap).max(1)),
        DepthPolicy::Theorem => {
            let centers: Vec<GridDensity> = (0..pool.len().min(config.center_count))
                .map(|i| pool.get(i).clone())
                .collect();
            let radii: Vec<f64> = (1..=config.j_cap)
                .map(|j| {
                    config.radius_multiplier * constants.epsilon_at(j) * constants.c
                        / constants.l_const.sqrt()
                })
                .collect();
            let mut points = Vec::with_capacity(radii.len());
            for &r in &radii {
                let est = local_entropy_estimate(r, constants.c, pool, &centers)?;
                points.push((r, est.log_count));
            }
            let fitted = MonotoneEntropy::fit(&points)?;
            Ok(solve_j_bar(
                n,
                constants,
                config.j_cap,
                config.radius_multiplier,
                |r| fitted.eval(r),
            ))
        }
    }
}

fn run_estimator(
    samples: &[f64],
    constants: &SieveConstants,
    pool: &CandidatePool,
    config: &EstimatorConfig,
    depth: usize,
) -> Result<GridDensity> {
    if config.adaptive {
        let cfg = AdaptiveConfig {
            j_cap: config.j_cap,
            packing_budget: config.packing_budget,
            radius_multiplier: config.radius_multiplier,
        };
        Ok(run_adaptive_sieve(samples, constants, pool, &cfg)?.0)
    } else {
        Ok(run_sieve(samples, constants, pool, depth)?.0)
    }
}

/// Mean and standard error of the squared L2 risk over seeded replicates.
pub fn risk_estimate(
    spec: &ClassSpec,
    f_true: &GridDensity,
    n: usize,
    replicates: usize,
    constants: &SieveConstants,
    pool: &CandidatePool,
    config: &EstimatorConfig,
    master_seed: u64,
    n_idx: usize,
    mode: ExecMode,
) -> Result<(f64, f64, Vec<f64>)> {
    let report = membership(spec, f_true)?;
    if !report.is_member {
        return Err(Error::Input(format!(
            "f_true fails membership for {}: worst constraint {:?}",
            spec.tag(),
            report.worst()
        )));
    }
    if replicates == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    let depth = resolve_depth(n, constants, pool, config)?;
    let risks: Vec<Result<f64>> = map_indexed(replicates, mode, |rep| {
        let mut rng = stream(master_seed, Domain::Samples, replicate_index(n_idx, rep));
        let samples = sample_iid(f_true, n, &mut rng);
        let est = run_estimator(&samples, constants, pool, config, depth)?;
        l2_distance_sq(&est, f_true)
    });
    let risks: Vec<f64> = risks.into_iter().collect::<Result<_>>()?;
    let (mean, stderr) = mean_stderr(&risks);
    Ok((mean, stderr, risks))
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ordinary least squares of `y` on `x`; returns `(slope, halfwidth)` where
/// the halfwidth is `1.96` standard errors of the slope.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    if xs.len() <= 2 {
        return (slope, f64::INFINITY);
    }
    let intercept = ybar - slope * xbar;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let se = (rss / (k - 2.0) / sxx).sqrt();
    (slope, 1.96 * se)
}

/// One row of a rate sweep.
#[derive(Debug, Clone, Serialize)]
pub struct RiskRow {
    pub n: usize,
    pub replicates: usize,
    pub mean_risk: f64,
    pub stderr: f64,
}

/// Rate sweep result: per-n risks, the fitted log-log slope, and pool
/// diagnostics for the regimes where the finite pool is the binding
/// constraint rather than the sample size.
#[derive(Debug, Clone, Serialize)]
pub struct RiskSweepReport {
    pub class: String,
    pub rows: Vec<RiskRow>,
    pub slope: f64,
    pub slope_halfwidth: f64,
    pub theoretical_exponent: Option<f64>,
    /// Set when the best risk the pool allows is within a factor two of the
    /// smallest achieved risk: the sweep is resolution-limited.
    pub pool_limited: bool,
    pub pool_size: usize,
    /// Smallest squared distance from the truth to any pool element.
    pub floor_risk: f64,
    pub master_seed: u64,
    /// `(n, replicate, risk)` triples in deterministic order.
    #[serde(skip)]
    pub per_replicate: Vec<(usize, usize, f64)>,
}

/// Run the full pipeline over `n_list` and fit `log(mean risk) ~ log n`.
#[allow(clippy::too_many_arguments)]
pub fn rate_sweep(
    spec: &ClassSpec,
    f_true: &GridDensity,
    n_list: &[usize],
    replicates: usize,
    constants: &SieveConstants,
    pool: &CandidatePool,
    config: &EstimatorConfig,
    master_seed: u64,
    mode: ExecMode,
) -> Result<RiskSweepReport> {
    if n_list.len() < 4 {
        return Err(Error::Config(format!(
            "rate sweep needs at least 4 sample sizes, got {}",
            n_list.len()
        )));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    let mut per_replicate = Vec::with_capacity(n_list.len() * replicates);
    for (n_idx, &n) in n_list.iter().enumerate() {
        let (mean, stderr, risks) = risk_estimate(
            spec,
            f_true,
            n,
            replicates,
            constants,
            pool,
            config,
            master_seed,
            n_idx,
            mode,
        )?;
        for (rep, &r) in risks.iter().enumerate() {
            per_replicate.push((n, rep, r));
        }
        rows.push(RiskRow {
            n,
            replicates,
            mean_risk: mean,
            stderr,
        });
    }
    if rows.iter().any(|r| r.mean_risk <= 0.0) {
        return Err(Error::Input(
            "a sweep point achieved exactly zero risk; exclude the truth from the pool".into(),
        ));
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_risk.ln()).collect();
    let (slope, slope_halfwidth) = ols_slope(&xs, &ys);

    let floor_risk = (0..pool.len())
        .map(|i| l2_distance_sq(pool.get(i), f_true).unwrap_or(f64::INFINITY))
        .fold(f64::INFINITY, f64::min);
    let best_achieved = rows
        .iter()
        .map(|r| r.mean_risk)
        .fold(f64::INFINITY, f64::min);
    let pool_limited = floor_risk > 0.5 * best_achieved;

    Ok(RiskSweepReport {
        class: spec.tag().to_string(),
        rows,
        slope,
        slope_halfwidth,
        theoretical_exponent: spec.theoretical_exponent(),
        pool_limited,
        pool_size: pool.len(),
        floor_risk,
        master_seed,
        per_replicate,
    })
}

/// Candidate pool for sweeps: broad samples from the class plus multiscale
/// contractions toward a focus density.
///
/// The contractions `focus + 2^{-level} (g - focus)` are convex combinations
/// of members, hence members; they emulate a class that stays locally rich
/// near the focus all the way down to the resolution the largest `n` needs.
/// The focus itself is not included, and broad samples come first so the
/// root of every sieve run is unrelated to the focus.
pub fn enriched_pool(
    spec: &ClassSpec,
    focus: &GridDensity,
    m: usize,
    broad: usize,
    shells: usize,
    per_shell: usize,
    seed: u64,
) -> Result<CandidatePool> {
    if broad == 0 {
        return Err(Error::Config("enriched pool needs broad samples".into()));
    }
    let mut rng = stream(seed, Domain::Pool, 0);
    let mut densities = Vec::with_capacity(broad + shells * per_shell);
    for _ in 0..broad {
        densities.push(sample_member_on_grid(spec, &mut rng, m)?);
    }
    for level in 1..=shells {
        let kappa = 0.5f64.powi(level as i32);
        for _ in 0..per_shell {
            let g = sample_member_on_grid(spec, &mut rng, m)?;
            densities.push(convex_combine(&g, focus, kappa)?);
        }
    }
    CandidatePool::new(
        densities,
        format!(
            "enriched({}, m={m}, broad={broad}, shells={shells}x{per_shell}, seed={seed})",
            spec.tag()
        ),
    )
}

/// Empirical concentration measurement against its theoretical bound.
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub n: usize,
    pub delta: f64,
    pub big_c: f64,
    pub l_const: f64,
    pub frequency: f64,
    pub bound: f64,
    pub replicates: usize,
    pub stderr: f64,
}

fn binomial_stderr(p: f64, replicates: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let base = (p * (1.0 - p) / replicates as f64).sqrt();
    // never report a zero allowance at the boundary
    base.max((0.25 / replicates as f64).sqrt() * 0.1)
}

/// Frequency of a positive log-likelihood difference `psi(g, g', X) > 0`
/// under `X ~ f`, against `exp(-n L delta^2)` with `delta = ||g - g'|| / C`.
#[allow(clippy::too_many_arguments)]
pub fn bernstein_experiment(
    f: &GridDensity,
    g: &GridDensity,
    g_prime: &GridDensity,
    bounds: &BoundsSpec,
    c: f64,
    n: usize,
    replicates: usize,
    master_seed: u64,
    mode: ExecMode,
) -> Result<ConcentrationReport> {
    let constants = compute_constants(bounds, c)?;
    for (name, d) in [("f", f), ("g", g), ("g_prime", g_prime)] {
        if !d.within_bounds(bounds, 1e-8) {
            return Err(Error::Input(format!(
                "{name} violates the ambient bounds [{}, {}]",
                bounds.alpha, bounds.beta
            )));
        }
    }
    let sep = l2_distance(g, g_prime)?;
    let close = l2_distance(g_prime, f)?;
    let delta = sep / constants.big_c;
    if close > delta {
        return Err(Error::Input(format!(
            "geometry violated: need ||g' - f|| <= ||g - g'|| / C, got {close} > {delta}"
        )));
    }
    let m = f.m();
    let hits: Vec<bool> = map_indexed(replicates, mode, |rep| {
        let mut rng = stream(master_seed, Domain::Samples, rep as u64);
        let samples = sample_iid(f, n, &mut rng);
        let counts = crate::sieve::CellCounts::from_samples(&samples, m).expect("valid samples");
        counts.log_likelihood(g) - counts.log_likelihood(g_prime) > 0.0
    });
    let frequency = hits.iter().filter(|&&h| h).count() as f64 / replicates.max(1) as f64;
    let bound = (-(n as f64) * constants.l_const * delta * delta).exp();
    Ok(ConcentrationReport {
        n,
        delta,
        big_c: constants.big_c,
        l_const: constants.l_const,
        frequency,
        bound: bound.min(1.0),
        replicates,
        stderr: binomial_stderr(frequency, replicates.max(1)),
    })
}

/// Frequency of the likelihood-selected packing element landing farther than
/// `(C+1) delta` from the truth, against `m exp(-n L delta^2)`.
#[allow(clippy::too_many_arguments)]
pub fn packing_mle_experiment(
    f: &GridDensity,
    packing: &[GridDensity],
    bounds: &BoundsSpec,
    big_c: f64,
    delta: f64,
    n: usize,
    replicates: usize,
    master_seed: u64,
    mode: ExecMode,
) -> Result<ConcentrationReport> {
    let c = 2.0 * (big_c + 1.0);
    let constants = compute_constants(bounds, c)?;
    if packing.is_empty() {
        return Err(Error::Input("packing must be nonempty".into()));
    }
    for i in 0..packing.len() {
        for j in (i + 1)..packing.len() {
            let d = l2_distance(&packing[i], &packing[j])?;
            if d <= delta {
                return Err(Error::Input(format!(
                    "geometry violated: packing elements {i}, {j} at distance {d} <= delta = {delta}"
                )));
            }
        }
    }
    let within = packing
        .iter()
        .map(|g| l2_distance(g, f))
        .collect::<Result<Vec<f64>>>()?;
    if !within.iter().any(|&d| d <= delta) {
        return Err(Error::Input(format!(
            "geometry violated: no packing element within delta = {delta} of f"
        )));
    }
    let m = f.m();
    let threshold = (big_c + 1.0) * delta;
    let hits: Vec<bool> = map_indexed(replicates, mode, |rep| {
        let mut rng = stream(master_seed, Domain::Samples, rep as u64);
        let samples = sample_iid(f, n, &mut rng);
        let counts = crate::sieve::CellCounts::from_samples(&samples, m).expect("valid samples");
        let mut best = 0usize;
        let mut best_ll = f64::NEG_INFINITY;
        for (j, g) in packing.iter().enumerate() {
            let ll = counts.log_likelihood(g);
            if ll > best_ll {
                best_ll = ll;
                best = j;
            }
        }
        within[best] > threshold
    });
    let frequency = hits.iter().filter(|&&h| h).count() as f64 / replicates.max(1) as f64;
    let bound = packing.len() as f64 * (-(n as f64) * constants.l_const * delta * delta).exp();
    Ok(ConcentrationReport {
        n,
        delta,
        big_c,
        l_const: constants.l_const,
        frequency,
        bound: bound.min(1.0),
        replicates,
        stderr: binomial_stderr(frequency, replicates.max(1)),
    })
}
