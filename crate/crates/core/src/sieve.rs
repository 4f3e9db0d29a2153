//! The multistage sieve MLE in its online form: derived constants, the
//! halving radius schedule, depth selection, the tree traversal, the
//! adaptive variant, and the mixture-lift reduction for classes that are
//! only upper bounded.

use serde::Serialize;

use crate::classes::clip_renormalize;
use crate::error::{Error, Result};
use crate::grid::{
    diameter_upper_bound, equivalence_constants, BoundsSpec, EquivalenceConstants, GridDensity,
};
use crate::packing::{adaptive_local_entropy, greedy_packing_around_index, CandidatePool};

/// Constants derived from the bounds and the scale `c = 2(C + 1)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SieveConstants {
    pub bounds: BoundsSpec,
    /// Local-entropy scale `c = 2(C + 1)`.
    pub c: f64,
    /// Test separation constant `C = c/2 - 1`.
    pub big_c: f64,
    /// `h(beta/alpha)`, `c(alpha, beta)`, `K(alpha, beta)`.
    pub equiv: EquivalenceConstants,
    /// Concentration exponent constant `L(alpha, beta, C)`.
    pub l_const: f64,
    /// Diameter `d` driving the radius schedule.
    pub diameter: f64,
}

/// Smallest admissible scale `c = 2(2 + sqrt(1/(alpha c(alpha,beta))))`.
pub fn minimal_scale(bounds: &BoundsSpec) -> Result<f64> {
    let equiv = equivalence_constants(bounds)?;
    Ok(2.0 * (2.0 + (1.0 / (bounds.alpha * equiv.c_ab)).sqrt()))
}

/// Derive all sieve constants, failing loudly when `C = c/2 - 1` does not
/// clear the threshold `C > 1 + sqrt(1/(alpha c(alpha,beta)))`.
pub fn compute_constants(bounds: &BoundsSpec, c: f64) -> Result<SieveConstants> {
    bounds.require_positive_lower()?;
    let equiv = equivalence_constants(bounds)?;
    let big_c = c / 2.0 - 1.0;
    let threshold = 1.0 + (1.0 / (bounds.alpha * equiv.c_ab)).sqrt();
    if !(big_c > threshold) {
        return Err(Error::Config(format!(
            "c = {c} gives C = {big_c}, which violates C > 1 + sqrt(1/(alpha c_ab)) = {threshold}; \
             smallest admissible c is {}",
            2.0 * (threshold + 1.0)
        )));
    }
    let num = (equiv.c_ab.sqrt() * (big_c - 1.0) - (1.0 / bounds.alpha).sqrt()).powi(2);
    let den = 2.0 * (2.0 * equiv.k_ab + (2.0 / 3.0) * (bounds.beta / bounds.alpha).ln());
    let l_const = num / den;
    Ok(SieveConstants {
        bounds: *bounds,
        c,
        big_c,
        equiv,
        l_const,
        diameter: diameter_upper_bound(bounds),
    })
}

impl SieveConstants {
    /// Shrink the schedule diameter to `min(d, pool diameter)`; the pool
    /// diameter is the tightest data-independent surrogate. A degenerate
    /// (single-element) pool keeps the ambient bound.
    pub fn with_pool_diameter(mut self, pool: &CandidatePool) -> Self {
        if pool.diameter() > 0.0 {
            self.diameter = self.diameter.min(pool.diameter());
        }
        self
    }

    /// Radius schedule `eps_J = sqrt(L) d / (2^(J-2) c)`, halving in `J`.
    pub fn epsilon_at(&self, j: usize) -> f64 {
        self.l_const.sqrt() * self.diameter / (2f64.powi(j as i32 - 2) * self.c)
    }

    /// Ball radius `d / 2^(k-1)` for the packing built at level `k`.
    pub fn level_radius(&self, k: usize) -> f64 {
        self.diameter / 2f64.powi(k as i32 - 1)
    }

    /// Separation `d / (2^k (C + 1))` for the packing built at level `k`.
    pub fn level_separation(&self, k: usize) -> f64 {
        self.diameter / (2f64.powi(k as i32) * (self.big_c + 1.0))
    }
}

/// Depth selection: the maximal `J <= j_cap` with
/// `n eps_J^2 > 2 log M_loc(mult * eps_J c / sqrt(L), c)  v  log 2`,
/// or 1 when no such `J` exists.
///
/// `entropy_fn` supplies monotonized local-entropy estimates by radius;
/// `radius_multiplier` exposes the radius convention as a knob (1.0 is the
/// plain `eps_J c / sqrt(L) = d / 2^(J-2)` convention).
pub fn solve_j_bar<F: Fn(f64) -> f64>(
    n: usize,
    constants: &SieveConstants,
    j_cap: usize,
    radius_multiplier: f64,
    entropy_fn: F,
) -> usize {
    let mut best = 1;
    for j in 1..=j_cap.max(1) {
        let eps = constants.epsilon_at(j);
        let radius = radius_multiplier * eps * constants.c / constants.l_const.sqrt();
        let rhs = (2.0 * entropy_fn(radius)).max(std::f64::consts::LN_2);
        if (n as f64) * eps * eps > rhs {
            best = best.max(j);
        }
    }
    best
}

/// Per-cell sample counts; one histogram pass makes every log-likelihood
/// evaluation O(m) instead of O(n).
#[derive(Debug, Clone)]
pub struct CellCounts {
    counts: Vec<u64>,
    n: usize,
}

impl CellCounts {
    pub fn from_samples(samples: &[f64], m: usize) -> Result<Self> {
        let mut counts = vec![0u64; m];
        let probe = GridDensity::uniform(m);
        for (i, &x) in samples.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Domain(format!(
                    "sample {i} is outside [0, 1]: {x}"
                )));
            }
            counts[probe.cell_of(x)] += 1;
        }
        Ok(Self {
            counts,
            n: samples.len(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `Σ_i log f(X_i)`; cells holding samples where `f` vanishes push the
    /// value to `-inf`, which the selection rules treat as "never chosen
    /// unless every sibling is equally impossible".
    pub fn log_likelihood(&self, f: &GridDensity) -> f64 {
        let mut sum = 0.0;
        for (&count, &v) in self.counts.iter().zip(f.values()) {
            if count > 0 {
                sum += count as f64 * v.ln();
            }
        }
        sum
    }
}

/// Log-likelihood difference `Σ log g(X_i) - Σ log g'(X_i)`.
///
/// Errors when either density vanishes on a cell containing a sample.
pub fn log_likelihood_diff(
    g: &GridDensity,
    g_prime: &GridDensity,
    samples: &[f64],
) -> Result<f64> {
    if g.m() != g_prime.m() {
        return Err(Error::GridMismatch(g.m(), g_prime.m()));
    }
    let counts = CellCounts::from_samples(samples, g.m())?;
    for (cell, &count) in counts.counts.iter().enumerate() {
        if count > 0 && (g.values()[cell] <= 0.0 || g_prime.values()[cell] <= 0.0) {
            return Err(Error::Domain(format!(
                "log-likelihood undefined: zero density on occupied cell {cell}"
            )));
        }
    }
    Ok(counts.log_likelihood(g) - counts.log_likelihood(g_prime))
}

/// Why a traversal ended where it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Ran the full requested depth.
    Completed,
    /// A level produced an empty packing (trace is truncated).
    EmptyPacking,
    /// The packing reduced to the current node; descending cannot move.
    NoProgress,
    /// Adaptive condition failed at the next level.
    ConditionFailed,
    /// Next packing exceeded the configured size budget.
    BudgetExceeded,
}

/// One row of the traversal record. `packing_size`/`ties` describe the
/// packing built at this node to pick the next level (zero on the last row).
#[derive(Debug, Clone, Serialize)]
pub struct LevelRecord {
    pub level: usize,
    pub selected_index: usize,
    pub packing_size: usize,
    pub ties: usize,
    pub radius: f64,
    pub separation: f64,
}

/// Full estimator trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct SieveTrace {
    pub levels: Vec<LevelRecord>,
    pub j_bar: usize,
    pub epsilon_schedule: Vec<f64>,
    pub adaptive: bool,
    pub stop_reason: StopReason,
    pub constants: SieveConstants,
}

impl SieveTrace {
    /// Largest violation of the trajectory Cauchy bound
    /// `||Y_J - Y_J'|| <= d / 2^(J'-2)` over all level pairs; `<= 0` is clean.
    pub fn max_cauchy_violation(&self, pool: &CandidatePool) -> f64 {
        let d = self.constants.diameter;
        let mut worst = f64::NEG_INFINITY;
        for a in 0..self.levels.len() {
            for b in (a + 1)..self.levels.len() {
                let dist = pool.distance(
                    self.levels[a].selected_index,
                    self.levels[b].selected_index,
                );
                let bound = d / 2f64.powi(self.levels[a].level as i32 - 2);
                worst = worst.max(dist - bound);
            }
        }
        worst
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Pick the likelihood-maximizing child, smallest pool index on exact ties.
///
/// Children must be listed in increasing pool order (greedy emits them that
/// way), so the first strict maximum is the smallest-index winner.
fn select_child(children: &[usize], pool: &CandidatePool, counts: &CellCounts) -> (usize, usize) {
    debug_assert!(!children.is_empty());
    let mut best_idx = children[0];
    let mut best_ll = counts.log_likelihood(pool.get(children[0]));
    let mut ties = 0;
    for &child in &children[1..] {
        let ll = counts.log_likelihood(pool.get(child));
        if ll > best_ll {
            best_ll = ll;
            best_idx = child;
            ties = 0;
        } else if ll == best_ll {
            ties += 1;
        }
    }
    (best_idx, ties)
}

/// Run the online multistage sieve for `j_bar` levels over the pool.
///
/// The root is the first pool element (data-independent). At level `k` the
/// children are the greedy maximal packing of the closed ball of radius
/// `d/2^(k-1)` around the current node at separation `d/(2^k (C+1))`; the
/// next node maximizes the sample log-likelihood among them.
pub fn run_sieve(
    samples: &[f64],
    constants: &SieveConstants,
    pool: &CandidatePool,
    j_bar: usize,
) -> Result<(GridDensity, SieveTrace)> {
    run_traversal(samples, constants, pool, j_bar, None)
}

/// Knobs for the adaptive traversal.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveConfig {
    /// Hard cap on depth.
    pub j_cap: usize,
    /// Stop when a packing would exceed this many children.
    pub packing_budget: usize,
    /// Radius-convention knob shared with [`solve_j_bar`].
    pub radius_multiplier: f64,
}

/// Adaptive variant: identical traversal, but the depth is chosen online by
/// the entropy condition at the current node (radius doubled, scale `2c`),
/// the packing-size budget, and the no-progress check.
pub fn run_adaptive_sieve(
    samples: &[f64],
    constants: &SieveConstants,
    pool: &CandidatePool,
    config: &AdaptiveConfig,
) -> Result<(GridDensity, SieveTrace)> {
    run_traversal(samples, constants, pool, config.j_cap, Some(config))
}

fn run_traversal(
    samples: &[f64],
    constants: &SieveConstants,
    pool: &CandidatePool,
    depth_cap: usize,
    adaptive: Option<&AdaptiveConfig>,
) -> Result<(GridDensity, SieveTrace)> {
    let m = pool.get(0).m();
    let counts = CellCounts::from_samples(samples, m)?;
    let n = counts.n();

    let mut current = 0usize;
    let mut levels: Vec<LevelRecord> = Vec::new();
    let mut stop_reason = StopReason::Completed;

    let mut k = 1usize;
    loop {
        if k >= depth_cap.max(1) {
            levels.push(final_record(constants, k, current));
            break;
        }
        if let Some(cfg) = adaptive {
            // Condition for descending to level k+1, evaluated at the
            // current node: n eps^2 > 2 log M_adapt(2 mult eps c/sqrt(L), 2c) v log 2.
            let eps = constants.epsilon_at(k + 1);
            let radius =
                2.0 * cfg.radius_multiplier * eps * constants.c / constants.l_const.sqrt();
            let entropy =
                adaptive_local_entropy(pool.get(current), radius, 2.0 * constants.c, pool)?
                    .log_count;
            let rhs = (2.0 * entropy).max(std::f64::consts::LN_2);
            if (n as f64) * eps * eps <= rhs {
                stop_reason = StopReason::ConditionFailed;
                levels.push(final_record(constants, k, current));
                break;
            }
        }
        let radius = constants.level_radius(k);
        let separation = constants.level_separation(k);
        let packing = greedy_packing_around_index(pool, current, radius, separation)?;
        if packing.is_empty() {
            stop_reason = StopReason::EmptyPacking;
            levels.push(final_record(constants, k, current));
            break;
        }
        if let Some(cfg) = adaptive {
            if packing.len() > cfg.packing_budget {
                stop_reason = StopReason::BudgetExceeded;
                levels.push(final_record(constants, k, current));
                break;
            }
            if packing.center_indices == [current] {
                stop_reason = StopReason::NoProgress;
                levels.push(final_record(constants, k, current));
                break;
            }
        }
        let (next, ties) = select_child(&packing.center_indices, pool, &counts);
        levels.push(LevelRecord {
            level: k,
            selected_index: current,
            packing_size: packing.len(),
            ties,
            radius,
            separation,
        });
        current = next;
        k += 1;
    }

    let j_bar = levels.len();
    let trace = SieveTrace {
        epsilon_schedule: (1..=j_bar).map(|j| constants.epsilon_at(j)).collect(),
        levels,
        j_bar,
        adaptive: adaptive.is_some(),
        stop_reason,
        constants: *constants,
    };
    Ok((pool.get(current).clone(), trace))
}

fn final_record(constants: &SieveConstants, k: usize, current: usize) -> LevelRecord {
    LevelRecord {
        level: k,
        selected_index: current,
        packing_size: 0,
        ties: 0,
        radius: constants.level_radius(k),
        separation: constants.level_separation(k),
    }
}

/// Estimate a density that is only 0-lower-bounded by estimating the
/// mixture `(1/2) f_alpha + (1/2) f` on coin-flip randomized samples and
/// unmixing, averaged over `rounds` Monte Carlo rounds.
///
/// `estimate_fn` receives the randomized samples and must return an estimate
/// within the mixture class. The averaged `2 f_hat - f_alpha` is clipped
/// into `[0, beta]` and renormalized. Rounds use prefix-consistent derived
/// streams, so doubling `rounds` refines rather than reshuffles.
pub fn mixture_lift<F>(
    f_alpha: &GridDensity,
    estimate_fn: F,
    samples: &[f64],
    master_seed: u64,
    rounds: usize,
    beta: f64,
) -> Result<GridDensity>
where
    F: Fn(&[f64]) -> Result<GridDensity>,
{
    use rand::Rng;
    if rounds == 0 {
        return Err(Error::Domain("mixture lift needs at least one round".into()));
    }
    let min_val = f_alpha
        .values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(min_val > 0.0) {
        return Err(Error::Domain(
            "mixture lift requires a strictly lower-bounded f_alpha".into(),
        ));
    }
    let m = f_alpha.m();
    let mut acc = vec![0.0; m];
    for round in 0..rounds {
        let mut rng = crate::seeding::stream(master_seed, crate::seeding::Domain::Lift, round as u64);
        let randomized: Vec<f64> = samples
            .iter()
            .map(|&x| {
                if rng.gen_bool(0.5) {
                    crate::mc::draw_one(f_alpha, &mut rng)
                } else {
                    x
                }
            })
            .collect();
        let f_hat = estimate_fn(&randomized)?;
        if f_hat.m() != m {
            return Err(Error::GridMismatch(f_hat.m(), m));
        }
        for (a, (&h, &fa)) in acc.iter_mut().zip(f_hat.values().iter().zip(f_alpha.values())) {
            *a += 2.0 * h - fa;
        }
    }
    let averaged: Vec<f64> = acc.iter().map(|a| a / rounds as f64).collect();
    clip_renormalize(&averaged, 0.0, beta)
}
