//! Command-line front end: seeded reproducible runs of the verification,
//! entropy, estimation, rate-sweep and concentration experiments, with CSV
//! and JSON emission.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use sievelab::classes::{sample_member_on_grid, sin_family, uniform_density, ClassSpec};
use sievelab::config::RunConfig;
use sievelab::error::{Error, Result};
use sievelab::grid::{diameter_upper_bound, GridDensity};
use sievelab::mc::{
    bernstein_experiment, enriched_pool, packing_mle_experiment, rate_sweep, ConcentrationReport,
};
use sievelab::packing::{
    adaptive_local_entropy, global_entropy_estimate, local_entropy_estimate,
    solve_critical_epsilon, CandidatePool, EntropyEstimate, MonotoneEntropy,
};
use sievelab::parallel::ExecMode;
use sievelab::report::{entropy_csv, sweep_csv, trace_csv, write_atomic, write_json};
use sievelab::seeding::{stream, Domain};
use sievelab::sieve::{run_adaptive_sieve, run_sieve, solve_j_bar, AdaptiveConfig};
use sievelab::verify::verify_all;

#[derive(Parser)]
#[command(
    name = "sievelab",
    version,
    about = "Sieve density estimation lab: verification suites, entropy sweeps, \
             estimation runs and Monte Carlo rate experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file; flags override file values, file overrides defaults
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (0 = all cores, 1 = sequential)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Use the adaptive (online-depth) estimator
    #[arg(long, global = true)]
    adaptive: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the property suites and write a pass/fail report
    Verify,
    /// Estimate entropies over an epsilon grid and solve the critical radius
    Entropy,
    /// Run the sieve estimator on a sample file
    Estimate {
        /// Newline-delimited samples in [0, 1]
        #[arg(long, value_name = "PATH")]
        samples: PathBuf,
    },
    /// Monte Carlo risk sweep over n_list with a log-log rate fit
    Sweep,
    /// Concentration experiments for the likelihood-difference and
    /// packing-MLE bounds
    Bernstein,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    init_threads(config.threads);
    let outcome = match &cli.command {
        Command::Verify => cmd_verify(&config),
        Command::Entropy => cmd_entropy(&config),
        Command::Estimate { samples } => cmd_estimate(&config, samples),
        Command::Sweep => cmd_sweep(&config),
        Command::Bernstein => cmd_bernstein(&config),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if cli.adaptive {
        config.adaptive = true;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(feature = "parallel")]
fn init_threads(threads: usize) {
    if threads > 1 {
        // best effort: the global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_threads: usize) {}

/// The common experiment setup: resolved class, a pool enriched around a
/// seeded focus member, and constants with the pool diameter folded in.
struct Workbench {
    spec: ClassSpec,
    focus: GridDensity,
    pool: CandidatePool,
    constants: sievelab::sieve::SieveConstants,
}

fn workbench(config: &RunConfig) -> Result<Workbench> {
    let spec = config.resolve_class()?;
    let m = spec.grid_size().unwrap_or(config.m);
    let mut rng = stream(config.seed, Domain::Member, 0);
    let focus = sample_member_on_grid(&spec, &mut rng, m)?;
    let pool = enriched_pool(
        &spec,
        &focus,
        m,
        config.pool_size,
        config.shells,
        config.per_shell,
        config.seed,
    )?;
    let constants =
        sievelab::sieve::compute_constants(&config.bounds, config.c)?.with_pool_diameter(&pool);
    Ok(Workbench {
        spec,
        focus,
        pool,
        constants,
    })
}

fn cmd_verify(config: &RunConfig) -> Result<bool> {
    let checks = verify_all(config)?;
    let all_pass = checks.iter().all(|c| c.pass);
    for check in &checks {
        println!(
            "[{}] {}: {}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    #[derive(Serialize)]
    struct VerifyReport<'a> {
        all_pass: bool,
        checks: &'a [sievelab::verify::CheckResult],
    }
    write_json(
        &config.out_dir.join("verify.json"),
        &config.hash(),
        &VerifyReport {
            all_pass,
            checks: &checks,
        },
    )?;
    Ok(all_pass)
}

fn cmd_entropy(config: &RunConfig) -> Result<bool> {
    let bench = workbench(config)?;
    let pool = &bench.pool;
    let eps_grid: Vec<f64> = if config.eps_grid.is_empty() {
        let hi = pool.diameter();
        let lo = hi / 64.0;
        let count = 16;
        (0..count)
            .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
            .collect()
    } else {
        config.eps_grid.clone()
    };

    // Centers for the sup: spread evenly through the pool so both broad and
    // focus-adjacent elements are covered.
    let step = (pool.len() / config.center_count.min(pool.len())).max(1);
    let centers: Vec<GridDensity> = (0..pool.len())
        .step_by(step)
        .take(config.center_count)
        .map(|i| pool.get(i).clone())
        .collect();

    let mut rows: Vec<EntropyEstimate> = Vec::new();
    let mut local_points: Vec<(f64, f64)> = Vec::new();
    for &eps in &eps_grid {
        rows.push(global_entropy_estimate(pool, eps)?);
        let local = local_entropy_estimate(eps, config.c, pool, &centers)?;
        local_points.push((eps, local.log_count));
        rows.push(local);
        rows.push(adaptive_local_entropy(&bench.focus, eps, config.c, pool)?);
    }
    let hash = config.hash();
    write_atomic(
        &config.out_dir.join("entropy.csv"),
        &entropy_csv(&hash, &rows),
    )?;

    let fitted = MonotoneEntropy::fit(&local_points)?;
    let eps_upper = diameter_upper_bound(&config.bounds);
    #[derive(Serialize)]
    struct CriticalRow {
        n: usize,
        eps_star: f64,
        eps_star_sq: f64,
    }
    #[derive(Serialize)]
    struct CriticalReport {
        class: String,
        rows: Vec<CriticalRow>,
    }
    let rows: Vec<CriticalRow> = config
        .n_list
        .iter()
        .map(|&n| {
            let eps_star = solve_critical_epsilon(n, |e| fitted.eval(e), eps_upper);
            CriticalRow {
                n,
                eps_star,
                eps_star_sq: eps_star * eps_star,
            }
        })
        .collect();
    write_json(
        &config.out_dir.join("critical.json"),
        &hash,
        &CriticalReport {
            class: bench.spec.tag().to_string(),
            rows,
        },
    )?;
    Ok(true)
}

fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let x: f64 = line.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            msg: format!("not a decimal number: {line:?}"),
        })?;
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("sample {x} outside [0, 1]"),
            });
        }
        samples.push(x);
    }
    if samples.is_empty() {
        return Err(Error::Input(format!(
            "sample file {} holds no samples",
            path.display()
        )));
    }
    Ok(samples)
}

fn cmd_estimate(config: &RunConfig, samples_path: &Path) -> Result<bool> {
    let samples = read_samples(samples_path)?;
    let bench = workbench(config)?;
    let constants = &bench.constants;
    let pool = &bench.pool;

    let (estimate, trace) = if config.adaptive {
        let cfg = AdaptiveConfig {
            j_cap: config.j_cap,
            packing_budget: config.packing_budget,
            radius_multiplier: config.radius_multiplier,
        };
        run_adaptive_sieve(&samples, constants, pool, &cfg)?
    } else {
        let depth = match config.depth_policy.as_str() {
            "theorem" => {
                let est_cfg = config.estimator_config();
                let step = (pool.len() / est_cfg.center_count.min(pool.len())).max(1);
                let centers: Vec<GridDensity> = (0..pool.len())
                    .step_by(step)
                    .take(est_cfg.center_count)
                    .map(|i| pool.get(i).clone())
                    .collect();
                let radii: Vec<f64> = (1..=config.j_cap)
                    .map(|j| {
                        config.radius_multiplier * constants.epsilon_at(j) * constants.c
                            / constants.l_const.sqrt()
                    })
                    .collect();
                let mut points = Vec::new();
                for &r in &radii {
                    points.push((r, local_entropy_estimate(r, config.c, pool, &centers)?.log_count));
                }
                let fitted = MonotoneEntropy::fit(&points)?;
                solve_j_bar(
                    samples.len(),
                    constants,
                    config.j_cap,
                    config.radius_multiplier,
                    |r| fitted.eval(r),
                )
            }
            _ => config.j_cap,
        };
        run_sieve(&samples, constants, pool, depth)?
    };

    let hash = config.hash();
    #[derive(Serialize)]
    struct EstimateReport<'a> {
        class: &'a str,
        n: usize,
        depth: usize,
        estimate: &'a GridDensity,
    }
    write_json(
        &config.out_dir.join("estimate.json"),
        &hash,
        &EstimateReport {
            class: bench.spec.tag(),
            n: samples.len(),
            depth: trace.depth(),
            estimate: &estimate,
        },
    )?;
    write_json(&config.out_dir.join("trace.json"), &hash, &trace)?;
    write_atomic(&config.out_dir.join("trace.csv"), &trace_csv(&hash, &trace))?;
    println!(
        "estimated from {} samples at depth {} ({})",
        samples.len(),
        trace.depth(),
        if trace.adaptive { "adaptive" } else { "fixed" }
    );
    Ok(true)
}

fn cmd_sweep(config: &RunConfig) -> Result<bool> {
    let bench = workbench(config)?;
    let report = rate_sweep(
        &bench.spec,
        &bench.focus,
        &config.n_list,
        config.replicates,
        &bench.constants,
        &bench.pool,
        &config.estimator_config(),
        config.seed,
        ExecMode::from_threads(config.threads),
    )?;
    let hash = config.hash();
    write_atomic(&config.out_dir.join("sweep.csv"), &sweep_csv(&hash, &report))?;
    write_json(&config.out_dir.join("sweep.json"), &hash, &report)?;
    println!(
        "slope {:.4} (halfwidth {:.4}, theoretical {:?}, pool_limited {})",
        report.slope, report.slope_halfwidth, report.theoretical_exponent, report.pool_limited
    );
    // risk never exceeds the squared diameter
    let d_sq = diameter_upper_bound(&config.bounds).powi(2);
    let risks_ok = report
        .per_replicate
        .iter()
        .all(|&(_, _, risk)| risk <= d_sq + 1e-12);
    Ok(risks_ok)
}

fn cmd_bernstein(config: &RunConfig) -> Result<bool> {
    let mode = ExecMode::from_threads(config.threads);
    let hash = config.hash();
    let mut rows: Vec<(String, ConcentrationReport)> = Vec::new();

    // likelihood-difference scenario: flat truth vs a two-level tilt
    let m = config.m.max(2) & !1; // even cell count
    let f = uniform_density(m);
    let amp = 0.9 * (config.bounds.beta - 1.0).min(1.0 - config.bounds.alpha);
    let g = GridDensity::new(
        (0..m)
            .map(|i| if i < m / 2 { 1.0 + amp } else { 1.0 - amp })
            .collect(),
    )?;
    for &n in &config.n_list {
        let report = bernstein_experiment(
            &f,
            &g,
            &f,
            &config.bounds,
            config.c,
            n,
            config.replicates,
            config.seed,
            mode,
        )?;
        rows.push(("likelihood_diff".into(), report));
    }

    // packing-MLE scenario: sine-derived packing, truth at the first element
    let m_pack = config.m.max(128);
    let packing: Vec<GridDensity> = (1..=8)
        .map(|j| sin_family(j, 0.5, m_pack))
        .collect::<Result<_>>()?;
    let min_pairwise = {
        let mut min = f64::INFINITY;
        for i in 0..packing.len() {
            for j in (i + 1)..packing.len() {
                min = min.min(sievelab::grid::l2_distance(&packing[i], &packing[j])?);
            }
        }
        min
    };
    let big_c = config.c / 2.0 - 1.0;
    let delta = min_pairwise / (2.0 * (big_c + 1.0));
    for &n in &config.n_list {
        let report = packing_mle_experiment(
            &packing[0],
            &packing,
            &config.bounds,
            big_c,
            delta,
            n,
            config.replicates,
            config.seed,
            mode,
        )?;
        rows.push(("packing_mle".into(), report));
    }

    let mut csv = format!(
        "# config_hash={hash}\nexperiment,n,delta,big_c,l_const,frequency,bound,stderr,replicates\n"
    );
    let mut all_within = true;
    for (name, r) in &rows {
        all_within &= r.frequency <= r.bound + 3.0 * r.stderr;
        csv.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{}\n",
            r.n, r.delta, r.big_c, r.l_const, r.frequency, r.bound, r.stderr, r.replicates
        ));
    }
    write_atomic(&config.out_dir.join("bernstein.csv"), &csv)?;
    #[derive(Serialize)]
    struct BernsteinReport {
        all_within_bound: bool,
        scenarios: Vec<ScenarioRow>,
    }
    #[derive(Serialize)]
    struct ScenarioRow {
        experiment: String,
        #[serde(flatten)]
        report: ConcentrationReport,
    }
    write_json(
        &config.out_dir.join("bernstein.json"),
        &hash,
        &BernsteinReport {
            all_within_bound: all_within,
            scenarios: rows
                .into_iter()
                .map(|(experiment, report)| ScenarioRow { experiment, report })
                .collect(),
        },
    )?;
    Ok(all_within)
}
