//! Greedy maximal packings over finite candidate pools, local/adaptive
//! metric entropy estimates, the contraction construction, and the
//! critical-radius solver.
//!
//! All counts here are estimates from finite pools and are lower bounds on
//! the class quantities they stand in for: a pool is a subset of the class,
//! and greedy first-fit packings are maximal but not maximum. Pools of at
//! most [`EXACT_POOL_LIMIT`] elements can be packed exactly, which the test
//! oracles and the global/local sandwich check rely on.

use serde::Serialize;

use crate::classes::{membership, ClassSpec};
use crate::error::{Error, Result};
use crate::grid::{l2_distance, GridDensity};

/// Largest pool for which exact maximum-cardinality packing is attempted.
pub const EXACT_POOL_LIMIT: usize = 20;

/// A finite ordered set of candidate densities standing in for the class.
///
/// The order is part of the pool's identity: it fixes the greedy admission
/// sequence and the downstream smallest-index tie-break. Pairwise distances
/// are precomputed.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    densities: Vec<GridDensity>,
    provenance: String,
    distances: Vec<f64>,
    diameter: f64,
}

impl CandidatePool {
    /// Build a pool from densities already known (or checked) to be members.
    pub fn new(densities: Vec<GridDensity>, provenance: impl Into<String>) -> Result<Self> {
        if densities.is_empty() {
            return Err(Error::Domain("candidate pool must be nonempty".into()));
        }
        let m = densities[0].m();
        if densities.iter().any(|d| d.m() != m) {
            return Err(Error::Domain("pool densities must share one grid".into()));
        }
        let n = densities.len();
        let mut distances = vec![0.0; n * n];
        let mut diameter: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = l2_distance(&densities[i], &densities[j])?;
                distances[i * n + j] = d;
                distances[j * n + i] = d;
                diameter = diameter.max(d);
            }
        }
        Ok(Self {
            densities,
            provenance: provenance.into(),
            distances,
            diameter,
        })
    }

    /// Validate every density against `spec` before building the pool.
    pub fn from_members(
        spec: &ClassSpec,
        densities: Vec<GridDensity>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        for (i, d) in densities.iter().enumerate() {
            let report = membership(spec, d)?;
            if !report.is_member {
                return Err(Error::Input(format!(
                    "pool element {i} fails membership for {}: worst constraint {:?}",
                    spec.tag(),
                    report.worst()
                )));
            }
        }
        Self::new(densities, provenance)
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn get(&self, i: usize) -> &GridDensity {
        &self.densities[i]
    }

    pub fn densities(&self) -> &[GridDensity] {
        &self.densities
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Precomputed pairwise distance.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.densities.len() + j]
    }

    /// Largest pairwise distance in the pool.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Indices within the closed ball of `radius` around pool element `center`.
    pub fn ball_indices(&self, center: usize, radius: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.distance(center, i) <= radius)
            .collect()
    }
}

/// A validated packing: pairwise distances of the selected centers strictly
/// exceed `separation`, with a maximality certificate over the eligible set.
#[derive(Debug, Clone, Serialize)]
pub struct PackingResult {
    pub center_indices: Vec<usize>,
    pub separation: f64,
    pub maximal: bool,
}

impl PackingResult {
    pub fn len(&self) -> usize {
        self.center_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center_indices.is_empty()
    }
}

fn greedy_over<F: Fn(usize, usize) -> f64>(
    eligible: &[usize],
    dist: F,
    separation: f64,
) -> PackingResult {
    let mut centers: Vec<usize> = Vec::new();
    for &i in eligible {
        if centers.iter().all(|&c| dist(c, i) > separation) {
            centers.push(i);
        }
    }
    // Cover check: greedy is maximal by construction, but certify it.
    let maximal = eligible
        .iter()
        .all(|&i| centers.iter().any(|&c| dist(c, i) <= separation));
    PackingResult {
        center_indices: centers,
        separation,
        maximal,
    }
}

/// First-fit greedy packing of the pool (optionally restricted to the closed
/// ball around `restrict`) at the given separation.
///
/// Deterministic: admission follows pool order. An empty eligible set yields
/// an empty packing, not an error.
pub fn greedy_maximal_packing(
    pool: &CandidatePool,
    restrict: Option<(&GridDensity, f64)>,
    separation: f64,
) -> Result<PackingResult> {
    if !(separation > 0.0) {
        return Err(Error::Domain(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let eligible: Vec<usize> = match restrict {
        None => (0..pool.len()).collect(),
        Some((theta, radius)) => {
            let mut out = Vec::new();
            for i in 0..pool.len() {
                if l2_distance(theta, pool.get(i))? <= radius {
                    out.push(i);
                }
            }
            out
        }
    };
    Ok(greedy_over(
        &eligible,
        |a, b| pool.distance(a, b),
        separation,
    ))
}

/// As [`greedy_maximal_packing`] with the ball centered on a pool element,
/// using only precomputed distances.
pub fn greedy_packing_around_index(
    pool: &CandidatePool,
    center: usize,
    radius: f64,
    separation: f64,
) -> Result<PackingResult> {
    if !(separation > 0.0) {
        return Err(Error::Domain(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let eligible = pool.ball_indices(center, radius);
    Ok(greedy_over(
        &eligible,
        |a, b| pool.distance(a, b),
        separation,
    ))
}

/// Exact maximum-cardinality packing of `eligible` at `separation`, by
/// branch and bound on the conflict graph. Only for tiny eligible sets.
pub fn exact_max_packing<F: Fn(usize, usize) -> f64>(
    eligible: &[usize],
    dist: F,
    separation: f64,
) -> Result<usize> {
    let n = eligible.len();
    if n > EXACT_POOL_LIMIT {
        return Err(Error::Domain(format!(
            "exact packing limited to {EXACT_POOL_LIMIT} elements, got {n}"
        )));
    }
    if n == 0 {
        return Ok(0);
    }
    // conflicts[i]: elements too close to i (cannot share a packing).
    let mut conflicts = vec![0u64; n];
    for a in 0..n {
        for b in (a + 1)..n {
            if dist(eligible[a], eligible[b]) <= separation {
                conflicts[a] |= 1 << b;
                conflicts[b] |= 1 << a;
            }
        }
    }
    fn mis(candidates: u64, conflicts: &[u64], best: &mut usize, current: usize) {
        if candidates == 0 {
            *best = (*best).max(current);
            return;
        }
        if current + candidates.count_ones() as usize <= *best {
            return;
        }
        let v = candidates.trailing_zeros() as usize;
        // take v
        mis(
            candidates & !(1 << v) & !conflicts[v],
            conflicts,
            best,
            current + 1,
        );
        // skip v
        mis(candidates & !(1 << v), conflicts, best, current);
    }
    let mut best = 0;
    mis((1u64 << n) - 1, &conflicts, &mut best, 0);
    Ok(best)
}

/// How an entropy estimate was formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMode {
    Global,
    LocalSup,
    Adaptive,
}

impl std::fmt::Display for EntropyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EntropyMode::Global => write!(f, "global"),
            EntropyMode::LocalSup => write!(f, "local-sup"),
            EntropyMode::Adaptive => write!(f, "adaptive"),
        }
    }
}

/// A single (natural-log) packing-count estimate.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyEstimate {
    pub epsilon: f64,
    pub scale_c: f64,
    pub log_count: f64,
    pub center_used: Option<usize>,
    pub mode: EntropyMode,
}

fn log_of_count(count: usize) -> f64 {
    (count.max(1) as f64).ln()
}

/// Global entropy estimate: log of the greedy packing count of the whole
/// pool at separation `epsilon`.
pub fn global_entropy_estimate(pool: &CandidatePool, epsilon: f64) -> Result<EntropyEstimate> {
    let packing = greedy_maximal_packing(pool, None, epsilon)?;
    Ok(EntropyEstimate {
        epsilon,
        scale_c: 1.0,
        log_count: log_of_count(packing.len()),
        center_used: None,
        mode: EntropyMode::Global,
    })
}

/// Local entropy estimate: the sup over centers is approximated by a max
/// over the supplied finite center set. Always a lower estimate of the true
/// local entropy.
pub fn local_entropy_estimate(
    epsilon: f64,
    c: f64,
    pool: &CandidatePool,
    centers: &[GridDensity],
) -> Result<EntropyEstimate> {
    if !(c > 1.0) {
        return Err(Error::Domain(format!("local entropy needs c > 1, got {c}")));
    }
    if centers.is_empty() {
        return Err(Error::Domain("center set must be nonempty".into()));
    }
    let mut best = 0usize;
    let mut best_center = 0usize;
    for (idx, theta) in centers.iter().enumerate() {
        let packing = greedy_maximal_packing(pool, Some((theta, epsilon)), epsilon / c)?;
        if packing.len() > best {
            best = packing.len();
            best_center = idx;
        }
    }
    Ok(EntropyEstimate {
        epsilon,
        scale_c: c,
        log_count: log_of_count(best),
        center_used: Some(best_center),
        mode: EntropyMode::LocalSup,
    })
}

/// Adaptive local entropy: the same count at one fixed center, no sup.
pub fn adaptive_local_entropy(
    theta: &GridDensity,
    epsilon: f64,
    c: f64,
    pool: &CandidatePool,
) -> Result<EntropyEstimate> {
    if !(c > 1.0) {
        return Err(Error::Domain(format!("local entropy needs c > 1, got {c}")));
    }
    let packing = greedy_maximal_packing(pool, Some((theta, epsilon)), epsilon / c)?;
    Ok(EntropyEstimate {
        epsilon,
        scale_c: c,
        log_count: log_of_count(packing.len()),
        center_used: None,
        mode: EntropyMode::Adaptive,
    })
}

/// Contract a local packing toward its center: `theta (1 - r) + r g_j` with
/// `r = eps_prime / eps`.
///
/// Pairwise distances scale exactly by `r`, so a valid `(eps, min_sep)`
/// local packing becomes a valid `(eps_prime, r * min_sep)` local packing of
/// the same cardinality, and convex combinations keep class membership.
pub fn contract_packing(
    theta: &GridDensity,
    eps: f64,
    eps_prime: f64,
    children: &[GridDensity],
    min_separation: f64,
) -> Result<Vec<GridDensity>> {
    if !(eps > 0.0 && eps_prime > 0.0 && eps_prime <= eps) {
        return Err(Error::Contract(format!(
            "need 0 < eps_prime <= eps, got eps = {eps}, eps_prime = {eps_prime}"
        )));
    }
    for (j, g) in children.iter().enumerate() {
        let d = l2_distance(theta, g)?;
        if d > eps * (1.0 + 1e-12) {
            return Err(Error::Contract(format!(
                "child {j} lies at distance {d} > eps = {eps} from the center"
            )));
        }
    }
    for a in 0..children.len() {
        for b in (a + 1)..children.len() {
            let d = l2_distance(&children[a], &children[b])?;
            if d <= min_separation {
                return Err(Error::Contract(format!(
                    "children {a}, {b} at distance {d} <= required separation {min_separation}"
                )));
            }
        }
    }
    let r = eps_prime / eps;
    children
        .iter()
        .map(|g| crate::classes::convex_combine(g, theta, r))
        .collect()
}

/// Monotone (non-increasing) envelope of noisy entropy estimates, fitted by
/// pool-adjacent-violators and evaluated by linear interpolation.
#[derive(Debug, Clone)]
pub struct MonotoneEntropy {
    eps: Vec<f64>,
    values: Vec<f64>,
}

impl MonotoneEntropy {
    /// Fit to `(epsilon, log_count)` points; input need not be sorted.
    pub fn fit(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("no entropy points to monotonize".into()));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // PAV for a non-increasing sequence: merge adjacent blocks whose
        // means violate v[i] >= v[i+1].
        struct Block {
            sum: f64,
            count: usize,
        }
        let mut blocks: Vec<Block> = Vec::new();
        for &(_, v) in &pts {
            blocks.push(Block { sum: v, count: 1 });
            while blocks.len() >= 2 {
                let last = blocks.len() - 1;
                let mean_last = blocks[last].sum / blocks[last].count as f64;
                let mean_prev = blocks[last - 1].sum / blocks[last - 1].count as f64;
                if mean_prev >= mean_last {
                    break;
                }
                let b = blocks.pop().unwrap();
                blocks[last - 1].sum += b.sum;
                blocks[last - 1].count += b.count;
            }
        }
        let mut values = Vec::with_capacity(pts.len());
        for b in &blocks {
            let mean = b.sum / b.count as f64;
            for _ in 0..b.count {
                values.push(mean.max(0.0));
            }
        }
        let eps = pts.into_iter().map(|(e, _)| e).collect();
        Ok(Self { eps, values })
    }

    /// Interpolated value, constant beyond the fitted range.
    pub fn eval(&self, epsilon: f64) -> f64 {
        let n = self.eps.len();
        if epsilon <= self.eps[0] {
            return self.values[0];
        }
        if epsilon >= self.eps[n - 1] {
            return self.values[n - 1];
        }
        let hi = self.eps.partition_point(|&e| e < epsilon);
        let (e0, e1) = (self.eps[hi - 1], self.eps[hi]);
        let (v0, v1) = (self.values[hi - 1], self.values[hi]);
        if e1 == e0 {
            return v0.min(v1);
        }
        v0 + (v1 - v0) * (epsilon - e0) / (e1 - e0)
    }
}

/// Largest `eps` in `(0, eps_upper]` with `n eps^2 <= entropy(eps)`, by
/// bisection. Returns 0 when no positive radius satisfies the inequality.
///
/// `entropy` must be non-increasing (use [`MonotoneEntropy`] on estimates),
/// which makes `eps -> n eps^2 - entropy(eps)` monotone and the bisection
/// bracket valid. Tolerance: relative 1e-3 on eps, at most 60 halvings.
pub fn solve_critical_epsilon<F: Fn(f64) -> f64>(n: usize, entropy: F, eps_upper: f64) -> f64 {
    let satisfied = |e: f64| (n as f64) * e * e <= entropy(e);
    if satisfied(eps_upper) {
        return eps_upper;
    }
    let mut lo = 0.0;
    let mut hi = eps_upper;
    for _ in 0..60 {
        if hi - lo <= 1e-3 * lo {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if satisfied(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// The packing-count condition sufficient for the local-entropy lower bound:
/// `entropy_value > 2 n eps^2 / alpha + 2 log 2` (strict).
pub fn lower_bound_condition(n: usize, epsilon: f64, alpha: f64, entropy_value: f64) -> bool {
    entropy_value > 2.0 * (n as f64) * epsilon * epsilon / alpha + 2.0 * std::f64::consts::LN_2
}

/// Sandwich check between global entropies at two scales and the local
/// entropy: `log M(e/c) - log M(e) <= log M_loc(e, c) <= log M(e/c)`.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub epsilon: f64,
    pub scale_c: f64,
    /// `log M(epsilon / c)`.
    pub log_global_fine: f64,
    /// `log M(epsilon)`.
    pub log_global_coarse: f64,
    /// `log M_loc(epsilon, c)` with centers ranging over the pool.
    pub log_local: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// Whether exact maximum packings were used (pools of at most
    /// [`EXACT_POOL_LIMIT`]) rather than greedy estimates.
    pub exact: bool,
}

pub fn global_local_gap_check(epsilon: f64, c: f64, pool: &CandidatePool) -> Result<GapReport> {
    if !(c > 1.0) {
        return Err(Error::Domain(format!("gap check needs c > 1, got {c}")));
    }
    let exact = pool.len() <= EXACT_POOL_LIMIT;
    let all: Vec<usize> = (0..pool.len()).collect();
    let dist = |a: usize, b: usize| pool.distance(a, b);

    let (fine, coarse, local) = if exact {
        let fine = exact_max_packing(&all, dist, epsilon / c)?;
        let coarse = exact_max_packing(&all, dist, epsilon)?;
        let mut local = 0usize;
        for center in 0..pool.len() {
            let ball = pool.ball_indices(center, epsilon);
            local = local.max(exact_max_packing(&ball, dist, epsilon / c)?);
        }
        (fine, coarse, local)
    } else {
        let fine = greedy_maximal_packing(pool, None, epsilon / c)?.len();
        let coarse = greedy_maximal_packing(pool, None, epsilon)?.len();
        let mut local = 0usize;
        for center in 0..pool.len() {
            local = local
                .max(greedy_packing_around_index(pool, center, epsilon, epsilon / c)?.len());
        }
        (fine, coarse, local)
    };

    let log_global_fine = log_of_count(fine);
    let log_global_coarse = log_of_count(coarse);
    let log_local = log_of_count(local);
    Ok(GapReport {
        epsilon,
        scale_c: c,
        log_global_fine,
        log_global_coarse,
        log_local,
        lower_ok: log_global_fine - log_global_coarse <= log_local + 1e-12,
        upper_ok: log_local <= log_global_fine + 1e-12,
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{sample_member_on_grid, sin_family, uniform_density, ClassSpec};
    use crate::grid::{l2_distance, BoundsSpec};
    use crate::seeding::{stream, Domain};

    fn sine_pool() -> CandidatePool {
        let densities: Vec<GridDensity> =
            (1..=8).map(|j| sin_family(j, 0.5, 4096).unwrap()).collect();
        CandidatePool::new(densities, "sin_family j=1..8 alpha=0.5").unwrap()
    }

    #[test]
    fn singleton_pool_packs_to_one() {
        let pool = CandidatePool::new(vec![uniform_density(8)], "uniform").unwrap();
        for sep in [0.01, 0.5, 10.0] {
            let p = greedy_maximal_packing(&pool, None, sep).unwrap();
            assert_eq!(p.len(), 1);
            assert!(p.maximal);
        }
    }

    #[test]
    fn sine_pool_separation_thresholds() {
        let pool = sine_pool();
        // Brute-force oracle: every pairwise distance is (1-alpha) / sqrt(2)
        // = 0.5 * sqrt(1/2 + 1/2) = 0.5 with alpha = 0.5.
        for i in 0..pool.len() {
            for j in (i + 1)..pool.len() {
                let d = pool.distance(i, j);
                assert!((d - 0.5).abs() < 0.01, "pair ({i},{j}) at {d}");
            }
        }
        // below the pairwise distance: everything is admitted
        let all = greedy_maximal_packing(&pool, None, 0.35).unwrap();
        assert_eq!(all.len(), 8);
        // above it: the first element covers the pool
        let one = greedy_maximal_packing(&pool, None, 0.8).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one.maximal);
    }

    #[test]
    fn greedy_is_deterministic() {
        let pool = sine_pool();
        let a = greedy_maximal_packing(&pool, None, 0.35).unwrap();
        let b = greedy_maximal_packing(&pool, None, 0.35).unwrap();
        assert_eq!(a.center_indices, b.center_indices);
    }

    #[test]
    fn appending_to_pool_never_decreases_count() {
        let mut densities: Vec<GridDensity> =
            (1..=5).map(|j| sin_family(j, 0.5, 256).unwrap()).collect();
        let small = CandidatePool::new(densities.clone(), "prefix").unwrap();
        let before = greedy_maximal_packing(&small, None, 0.3).unwrap().len();
        densities.push(uniform_density(256));
        densities.push(sin_family(6, 0.5, 256).unwrap());
        let big = CandidatePool::new(densities, "extended").unwrap();
        let after = greedy_maximal_packing(&big, None, 0.3).unwrap().len();
        assert!(after > before);
    }

    #[test]
    fn restricted_packing_and_empty_ball() {
        let pool = sine_pool();
        let far = uniform_density(4096);
        // A radius too small to reach any sine member: empty packing, no error.
        let p = greedy_maximal_packing(&pool, Some((&far, 1e-6)), 0.1).unwrap();
        assert!(p.is_empty());
        assert!(p.maximal);
    }

    #[test]
    fn local_entropy_recovers_global_for_huge_ball() {
        let pool = sine_pool();
        let centers = vec![pool.get(0).clone()];
        // Ball covers everything; separation epsilon/c = 0.35.
        let est = local_entropy_estimate(3.5, 10.0, &pool, &centers).unwrap();
        let global = greedy_maximal_packing(&pool, None, 0.35).unwrap();
        assert_eq!(est.log_count, (global.len() as f64).ln());
        assert_eq!(est.center_used, Some(0));
        assert_eq!(global.len(), 8);
    }

    #[test]
    fn adaptive_equals_single_center_local() {
        let pool = sine_pool();
        let theta = pool.get(3).clone();
        let a = adaptive_local_entropy(&theta, 0.9, 2.0, &pool).unwrap();
        let l = local_entropy_estimate(0.9, 2.0, &pool, &[theta]).unwrap();
        assert_eq!(a.log_count, l.log_count);
        assert_eq!(a.mode, EntropyMode::Adaptive);
    }

    #[test]
    fn tiny_epsilon_gives_zero_log_count() {
        let pool = sine_pool();
        let theta = pool.get(0).clone();
        let est = adaptive_local_entropy(&theta, 1e-9, 2.0, &pool).unwrap();
        assert_eq!(est.log_count, 0.0);
    }

    #[test]
    fn nearby_center_entropy_bound_exact_pools() {
        // ||nu - mu|| <= delta <= eps implies exact local count at (nu, eps, c)
        // is at most the count at (mu, 2 eps, 2c): same separation, larger ball.
        let spec = ClassSpec::Bv { zeta: 1.5 };
        let mut rng = stream(17, Domain::Pool, 0);
        let densities: Vec<GridDensity> = (0..16)
            .map(|_| sample_member_on_grid(&spec, &mut rng, 32).unwrap())
            .collect();
        let pool = CandidatePool::new(densities, "bv16").unwrap();
        let dist = |a: usize, b: usize| pool.distance(a, b);
        let eps = 0.3;
        for nu in 0..pool.len() {
            // pick mu: the closest distinct element, when within eps
            let mut mu = None;
            for j in 0..pool.len() {
                if j != nu && pool.distance(nu, j) <= eps {
                    mu = Some(j);
                    break;
                }
            }
            let Some(mu) = mu else { continue };
            let ball_nu = pool.ball_indices(nu, eps);
            let ball_mu = pool.ball_indices(mu, 2.0 * eps);
            let count_nu = exact_max_packing(&ball_nu, dist, eps / 2.0).unwrap();
            let count_mu = exact_max_packing(&ball_mu, dist, eps / 2.0).unwrap();
            assert!(
                count_nu <= count_mu,
                "center {nu}: {count_nu} > {count_mu}"
            );
        }
    }

    #[test]
    fn contraction_identity_and_halving() {
        let pool = sine_pool();
        let theta = uniform_density(4096);
        let children: Vec<GridDensity> = (0..4).map(|i| pool.get(i).clone()).collect();
        let eps = 0.6;
        let sep = 0.4;

        let same = contract_packing(&theta, eps, eps, &children, sep).unwrap();
        for (a, b) in same.iter().zip(&children) {
            assert!(l2_distance(a, b).unwrap() < 1e-12);
        }

        let half = contract_packing(&theta, eps, eps / 2.0, &children, sep).unwrap();
        for i in 0..children.len() {
            let d_new = l2_distance(&half[i], &theta).unwrap();
            assert!(d_new <= eps / 2.0 + 1e-12);
            for j in (i + 1)..children.len() {
                let before = l2_distance(&children[i], &children[j]).unwrap();
                let after = l2_distance(&half[i], &half[j]).unwrap();
                assert!((after - before / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contraction_rejects_bad_geometry() {
        let theta = uniform_density(64);
        let children = vec![sin_family(1, 0.5, 64).unwrap()];
        // child at distance ~0.5*sqrt(2) from uniform; eps too small
        assert!(matches!(
            contract_packing(&theta, 0.1, 0.05, &children, 0.01),
            Err(Error::Contract(_))
        ));
        // eps_prime > eps
        assert!(matches!(
            contract_packing(&theta, 0.5, 0.6, &children, 0.01),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn critical_epsilon_zero_entropy() {
        assert_eq!(solve_critical_epsilon(100, |_| 0.0, 2.0), 0.0);
    }

    #[test]
    fn critical_epsilon_constant_entropy_closed_form() {
        for (n, e) in [(100usize, 4.0), (10_000, 0.7)] {
            let got = solve_critical_epsilon(n, |_| e, 10.0);
            let expect = (e / n as f64).sqrt();
            assert!(
                (got - expect).abs() <= 2e-3 * expect,
                "n={n}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn critical_epsilon_reciprocal_entropy_matches_cube_root() {
        for n in [100usize, 10_000, 1_000_000] {
            let got = solve_critical_epsilon(n, |e| 1.0 / e, 3.0);
            let expect = (n as f64).powf(-1.0 / 3.0);
            assert!(
                ((got - expect) / expect).abs() < 0.02,
                "n={n}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn lower_bound_condition_arithmetic() {
        assert!(!lower_bound_condition(100, 0.1, 0.5, 0.0));
        // 10 > 2*100*0.01/0.5 + 2 ln 2 = 4 + 1.386...
        assert!(lower_bound_condition(100, 0.1, 0.5, 10.0));
        // boundary equality is false (strict)
        let boundary = 2.0 * 100.0 * 0.01 / 0.5 + 2.0 * std::f64::consts::LN_2;
        assert!(!lower_bound_condition(100, 0.1, 0.5, boundary));
    }

    #[test]
    fn gap_check_degenerate_and_small_pools() {
        let single = CandidatePool::new(vec![uniform_density(16)], "one").unwrap();
        let r = global_local_gap_check(0.5, 2.0, &single).unwrap();
        assert_eq!(r.log_global_fine, 0.0);
        assert_eq!(r.log_global_coarse, 0.0);
        assert_eq!(r.log_local, 0.0);
        assert!(r.lower_ok && r.upper_ok && r.exact);

        let spec = ClassSpec::Bv { zeta: 1.5 };
        let mut rng = stream(29, Domain::Pool, 1);
        let densities: Vec<GridDensity> = (0..14)
            .map(|_| sample_member_on_grid(&spec, &mut rng, 32).unwrap())
            .collect();
        let pool = CandidatePool::new(densities, "bv14").unwrap();
        for eps in [0.1, 0.2, 0.4] {
            let r = global_local_gap_check(eps, 2.0, &pool).unwrap();
            assert!(r.exact);
            assert!(r.lower_ok, "lower sandwich failed at eps={eps}: {r:?}");
            assert!(r.upper_ok, "upper sandwich failed at eps={eps}: {r:?}");
        }
    }

    #[test]
    fn monotonize_fixes_noise_and_interpolates() {
        let fit = MonotoneEntropy::fit(&[(0.1, 5.0), (0.2, 5.5), (0.3, 2.0), (0.4, 2.2)]).unwrap();
        // PAV merges the violating neighbors
        assert!((fit.eval(0.1) - 5.25).abs() < 1e-12);
        assert!((fit.eval(0.2) - 5.25).abs() < 1e-12);
        assert!((fit.eval(0.35) - 2.1).abs() < 1e-12);
        // non-increasing everywhere on a sweep
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let v = fit.eval(0.05 + i as f64 * 0.004);
            assert!(v <= prev + 1e-12);
            prev = v;
        }
        // constant extension
        assert_eq!(fit.eval(0.01), fit.eval(0.1));
        assert_eq!(fit.eval(9.0), fit.eval(0.4));
    }

    #[test]
    fn pool_membership_validation() {
        let spec = ClassSpec::Ambient {
            bounds: BoundsSpec::new(0.9, 1.1).unwrap(),
        };
        let bad = GridDensity::new(vec![0.5, 1.5]).unwrap();
        assert!(CandidatePool::from_members(&spec, vec![bad], "bad").is_err());
        let ok = uniform_density(2);
        assert!(CandidatePool::from_members(&spec, vec![ok], "ok").is_ok());
    }
}
