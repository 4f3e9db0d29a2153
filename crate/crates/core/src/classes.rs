//! Convex density classes on the grid: declarative specs, membership
//! checks, member samplers, and the closure operations the estimator
//! relies on.
//!
//! Bounds, normalization and total variation are exact for piecewise-constant
//! densities. The Lipschitz shift modulus and the curvature bound are checked
//! through their grid transcriptions (all shifts `s/m`, second differences at
//! cell scale), which are the class definitions this lab works with.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundsSpec, GridDensity, NORM_TOL};

/// Tolerance on constraint slacks for membership.
pub const MEMBER_TOL: f64 = 1e-8;

/// Residual tolerance for mixture membership (simplex least squares).
pub const MIX_RESIDUAL_TOL: f64 = 1e-8;

const SAMPLER_MAX_ATTEMPTS: usize = 64;

/// Serialize `q = inf` as the string `"inf"`, finite q as a number.
pub(crate) mod q_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &f64, s: S) -> Result<S::Ok, S::Error> {
        if q.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*q)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Q {
            Num(f64),
            Str(String),
        }
        match Q::deserialize(d)? {
            Q::Num(x) => Ok(x),
            Q::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Q::Str(s) => Err(serde::de::Error::custom(format!("bad q value: {s}"))),
        }
    }
}

/// Declarative description of a convex density class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ClassSpec {
    /// All grid densities with values in `[alpha, beta]`.
    Ambient { bounds: BoundsSpec },
    /// Shift modulus `||f(.+h) - f(.)||_q <= psi * h^gamma`, values in `[0, psi]`,
    /// `||f||_q <= psi`.
    Lipschitz {
        gamma: f64,
        #[serde(with = "q_serde")]
        q: f64,
        psi: f64,
    },
    /// Total variation and sup norm at most `zeta`, values in `[0, zeta]`.
    Bv { zeta: f64 },
    /// Second derivative bounded by `gamma` (grid second differences),
    /// values in `[alpha, beta]`.
    Quad { gamma: f64, bounds: BoundsSpec },
    /// Convex mixtures of `k` fixed ambient components.
    ConvMix {
        k: usize,
        components: Vec<GridDensity>,
    },
}

impl ClassSpec {
    /// Validate parameter ranges.
    pub fn validate(&self) -> Result<()> {
        match self {
            ClassSpec::Ambient { bounds } => {
                BoundsSpec::new(bounds.alpha, bounds.beta)?;
                Ok(())
            }
            ClassSpec::Lipschitz { gamma, q, psi } => {
                if !(*q >= 1.0) {
                    return Err(Error::Domain(format!("Lipschitz q must be >= 1, got {q}")));
                }
                let lower = (1.0 / q - 0.5).max(0.0);
                if !(*gamma > lower && *gamma <= 1.0) {
                    return Err(Error::Domain(format!(
                        "Lipschitz gamma must lie in ({lower}, 1], got {gamma}"
                    )));
                }
                if !(*psi > 1.0) {
                    return Err(Error::Domain(format!("Lipschitz psi must exceed 1, got {psi}")));
                }
                Ok(())
            }
            ClassSpec::Bv { zeta } => {
                if !(*zeta > 1.0) {
                    return Err(Error::Domain(format!("BV zeta must exceed 1, got {zeta}")));
                }
                Ok(())
            }
            ClassSpec::Quad { gamma, bounds } => {
                if !(*gamma > 1.0) {
                    return Err(Error::Domain(format!("Quad gamma must exceed 1, got {gamma}")));
                }
                if !(bounds.alpha > 0.0 && bounds.alpha < 1.0 && bounds.beta > 1.0) {
                    return Err(Error::Domain(format!(
                        "Quad bounds must satisfy 0 < alpha < 1 < beta, got [{}, {}]",
                        bounds.alpha, bounds.beta
                    )));
                }
                Ok(())
            }
            ClassSpec::ConvMix { k, components } => {
                if *k == 0 || components.len() != *k {
                    return Err(Error::Domain(format!(
                        "ConvMix k = {k} does not match {} components",
                        components.len()
                    )));
                }
                let m = components[0].m();
                if components.iter().any(|c| c.m() != m) {
                    return Err(Error::Domain(
                        "ConvMix components must share one grid size".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Grid size the spec pins down, if any (only mixtures do).
    pub fn grid_size(&self) -> Option<usize> {
        match self {
            ClassSpec::ConvMix { components, .. } => components.first().map(|c| c.m()),
            _ => None,
        }
    }

    /// Theoretical exponent `r` in risk `~ n^r` for the example classes.
    ///
    /// `None` for the ambient class (not totally bounded, no rate).
    pub fn theoretical_exponent(&self) -> Option<f64> {
        match self {
            ClassSpec::Ambient { .. } => None,
            ClassSpec::Lipschitz { gamma, .. } => Some(-2.0 * gamma / (2.0 * gamma + 1.0)),
            ClassSpec::Bv { .. } => Some(-2.0 / 3.0),
            ClassSpec::Quad { .. } => Some(-4.0 / 5.0),
            ClassSpec::ConvMix { .. } => Some(-1.0),
        }
    }

    /// A short tag for file names and report rows.
    pub fn tag(&self) -> &'static str {
        match self {
            ClassSpec::Ambient { .. } => "ambient",
            ClassSpec::Lipschitz { .. } => "lipschitz",
            ClassSpec::Bv { .. } => "bv",
            ClassSpec::Quad { .. } => "quad",
            ClassSpec::ConvMix { .. } => "conv_mix",
        }
    }
}

/// One named constraint with its slack (`>= 0` means satisfied).
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintSlack {
    pub name: &'static str,
    pub slack: f64,
}

/// Outcome of a membership check: member iff every slack `>= -MEMBER_TOL`.
#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    pub is_member: bool,
    pub slacks: Vec<ConstraintSlack>,
}

impl MembershipReport {
    fn from_slacks(slacks: Vec<ConstraintSlack>) -> Self {
        let is_member = slacks.iter().all(|s| s.slack >= -MEMBER_TOL);
        Self { is_member, slacks }
    }

    /// The most violated (or least satisfied) constraint.
    pub fn worst(&self) -> Option<&ConstraintSlack> {
        self.slacks
            .iter()
            .min_by(|a, b| a.slack.partial_cmp(&b.slack).unwrap())
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// `((1/m) Σ |d_i|^q)^(1/q)`, or `max |d_i|` for `q = inf`.
fn grid_q_norm(diffs: impl Iterator<Item = f64>, m: usize, q: f64) -> f64 {
    if q.is_infinite() {
        diffs.map(f64::abs).fold(0.0, f64::max)
    } else {
        (diffs.map(|d| d.abs().powf(q)).sum::<f64>() / m as f64).powf(1.0 / q)
    }
}

/// Total variation `Σ |f_{i+1} - f_i|` (exact for piecewise-constant f).
pub fn total_variation(f: &GridDensity) -> f64 {
    f.values().windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Largest scaled second difference `m^2 max |f_{i+1} - 2 f_i + f_{i-1}|`.
pub fn max_curvature(f: &GridDensity) -> f64 {
    let v = f.values();
    let m = f.m() as f64;
    v.windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
        .fold(0.0, f64::max)
        * m
        * m
}

/// Worst shift-modulus slack over all shifts `s in 1..m`:
/// `min_s [ psi (s/m)^gamma - ||f(.+s/m) - f(.)||_q ]`.
///
/// Uses the boundary convention `f(x + h) = f(1)` for `x + h > 1`.
fn lipschitz_shift_slack(f: &GridDensity, gamma: f64, q: f64, psi: f64) -> f64 {
    let v = f.values();
    let m = v.len();
    let mut worst = f64::INFINITY;
    for s in 1..m {
        let lhs = grid_q_norm(
            (0..m).map(|i| v[(i + s).min(m - 1)] - v[i]),
            m,
            q,
        );
        let rhs = psi * (s as f64 / m as f64).powf(gamma);
        worst = worst.min(rhs - lhs);
    }
    worst
}

/// Membership of `f` in the class described by `spec`.
pub fn membership(spec: &ClassSpec, f: &GridDensity) -> Result<MembershipReport> {
    spec.validate()?;
    if let Some(m) = spec.grid_size() {
        if f.m() != m {
            return Err(Error::GridMismatch(f.m(), m));
        }
    }
    let (lo, hi) = min_max(f.values());
    let mean = f.values().iter().sum::<f64>() / f.m() as f64;
    let norm_slack = NORM_TOL - (mean - 1.0).abs();

    let slacks = match spec {
        ClassSpec::Ambient { bounds } => vec![
            ConstraintSlack { name: "normalization", slack: norm_slack },
            ConstraintSlack { name: "lower_bound", slack: lo - bounds.alpha },
            ConstraintSlack { name: "upper_bound", slack: bounds.beta - hi },
        ],
        ClassSpec::Lipschitz { gamma, q, psi } => {
            let qn = grid_q_norm(f.values().iter().copied(), f.m(), *q);
            vec![
                ConstraintSlack { name: "normalization", slack: norm_slack },
                ConstraintSlack { name: "lower_bound", slack: lo },
                ConstraintSlack { name: "upper_bound", slack: psi - hi },
                ConstraintSlack { name: "q_norm", slack: psi - qn },
                ConstraintSlack {
                    name: "shift_modulus",
                    slack: lipschitz_shift_slack(f, *gamma, *q, *psi),
                },
            ]
        }
        ClassSpec::Bv { zeta } => vec![
            ConstraintSlack { name: "normalization", slack: norm_slack },
            ConstraintSlack { name: "lower_bound", slack: lo },
            ConstraintSlack { name: "sup_norm", slack: zeta - hi },
            ConstraintSlack { name: "total_variation", slack: zeta - total_variation(f) },
        ],
        ClassSpec::Quad { gamma, bounds } => vec![
            ConstraintSlack { name: "normalization", slack: norm_slack },
            ConstraintSlack { name: "lower_bound", slack: lo - bounds.alpha },
            ConstraintSlack { name: "upper_bound", slack: bounds.beta - hi },
            ConstraintSlack { name: "curvature", slack: gamma - max_curvature(f) },
        ],
        ClassSpec::ConvMix { components, .. } => {
            let fit = simplex_least_squares(components, f)?;
            vec![
                ConstraintSlack { name: "normalization", slack: norm_slack },
                ConstraintSlack {
                    name: "mixture_residual",
                    slack: MIX_RESIDUAL_TOL - fit.residual,
                },
            ]
        }
    };
    Ok(MembershipReport::from_slacks(slacks))
}

/// `kappa f + (1 - kappa) g`; member of every convex class containing both.
pub fn convex_combine(f: &GridDensity, g: &GridDensity, kappa: f64) -> Result<GridDensity> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::Domain(format!("kappa must lie in [0, 1], got {kappa}")));
    }
    if f.m() != g.m() {
        return Err(Error::GridMismatch(f.m(), g.m()));
    }
    let values = f
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| kappa * a + (1.0 - kappa) * b)
        .collect();
    GridDensity::new(values)
}

/// The uniform density: the `alpha`-lower-bounded witness every example
/// class contains.
pub fn uniform_density(m: usize) -> GridDensity {
    GridDensity::uniform(m)
}

/// `f_j(x) = 1 + (1 - alpha) sin(2 pi j x)` at cell midpoints, renormalized.
///
/// Distinct members sit at pairwise squared L2 distance `(1 - alpha)^2`
/// independent of `(j, k)` (the sines are orthogonal with squared norm 1/2),
/// which makes this family the witness that the ambient class is not
/// totally bounded.
pub fn sin_family(j: usize, alpha: f64, m: usize) -> Result<GridDensity> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("sin family needs alpha in (0,1), got {alpha}")));
    }
    if j == 0 {
        return Err(Error::Domain("sin family index j must be >= 1".into()));
    }
    if m < 16 * j {
        return Err(Error::Resolution { m, j, min: 16 * j });
    }
    let amp = 1.0 - alpha;
    let mut values: Vec<f64> = (0..m)
        .map(|i| {
            let x = (i as f64 + 0.5) / m as f64;
            1.0 + amp * (2.0 * std::f64::consts::PI * j as f64 * x).sin()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / m as f64;
    for v in &mut values {
        *v /= mean;
    }
    GridDensity::new(values)
}

/// Gram matrix of mixture components with a positive-definiteness report.
#[derive(Debug, Clone, Serialize)]
pub struct GramReport {
    pub matrix: Vec<Vec<f64>>,
    pub positive_definite: bool,
}

/// `G_ij = (1/m) Σ f_i f_j` over the mixture components of `spec`.
pub fn gram_matrix(spec: &ClassSpec) -> Result<GramReport> {
    let ClassSpec::ConvMix { components, .. } = spec else {
        return Err(Error::Domain("gram_matrix requires a ConvMix spec".into()));
    };
    spec.validate()?;
    let g = gram_of(components);
    let positive_definite = cholesky_is_pd(&g);
    Ok(GramReport {
        matrix: g,
        positive_definite,
    })
}

fn gram_of(components: &[GridDensity]) -> Vec<Vec<f64>> {
    let k = components.len();
    let m = components[0].m() as f64;
    let mut g = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let dot: f64 = components[i]
                .values()
                .iter()
                .zip(components[j].values())
                .map(|(a, b)| a * b)
                .sum();
            g[i][j] = dot / m;
            g[j][i] = g[i][j];
        }
    }
    g
}

fn cholesky_is_pd(a: &[Vec<f64>]) -> bool {
    let k = a.len();
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i][j];
            for t in 0..j {
                s -= l[i][t] * l[j][t];
            }
            if i == j {
                if s <= 1e-14 {
                    return false;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    true
}

/// Result of fitting `f` by a simplex-weighted combination of components.
#[derive(Debug, Clone)]
pub struct SimplexFit {
    pub weights: Vec<f64>,
    /// L2 distance between the fitted combination and `f`.
    pub residual: f64,
}

/// Solve `min_w ||Σ w_i f_i - f||_2` over the unit simplex.
///
/// Tries the unconstrained normal-equation solution first (exact mixtures
/// land inside the simplex and finish immediately), then falls back to
/// projected gradient descent capped at 200 iterations.
pub fn simplex_least_squares(components: &[GridDensity], f: &GridDensity) -> Result<SimplexFit> {
    let k = components.len();
    if k == 0 {
        return Err(Error::Domain("no mixture components".into()));
    }
    let m = components[0].m();
    if f.m() != m {
        return Err(Error::GridMismatch(f.m(), m));
    }
    let g = gram_of(components);
    let b: Vec<f64> = components
        .iter()
        .map(|c| {
            c.values()
                .iter()
                .zip(f.values())
                .map(|(a, x)| a * x)
                .sum::<f64>()
                / m as f64
        })
        .collect();

    let mut w = match solve_spd(&g, &b) {
        Some(w0)
            if w0.iter().all(|&x| x >= -1e-10)
                && (w0.iter().sum::<f64>() - 1.0).abs() <= 1e-10 =>
        {
            project_simplex(&w0)
        }
        _ => {
            // Gershgorin row-sum bound on lambda_max gives a safe step size.
            let lmax = g
                .iter()
                .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max)
                .max(1e-12);
            let step = 1.0 / (2.0 * lmax);
            let mut w = vec![1.0 / k as f64; k];
            for _ in 0..200 {
                let grad: Vec<f64> = (0..k)
                    .map(|i| {
                        2.0 * ((0..k).map(|j| g[i][j] * w[j]).sum::<f64>() - b[i])
                    })
                    .collect();
                let moved: Vec<f64> = w
                    .iter()
                    .zip(&grad)
                    .map(|(wi, gi)| wi - step * gi)
                    .collect();
                w = project_simplex(&moved);
            }
            w
        }
    };

    // Clean tiny negatives from the projection and renormalize.
    for x in &mut w {
        *x = x.max(0.0);
    }
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }

    let residual = {
        let mut sum = 0.0;
        for cell in 0..m {
            let mix: f64 = components
                .iter()
                .zip(&w)
                .map(|(c, wi)| wi * c.values()[cell])
                .sum();
            let d = mix - f.values()[cell];
            sum += d * d;
        }
        (sum / m as f64).sqrt()
    };
    Ok(SimplexFit {
        weights: w,
        residual,
    })
}

/// Solve `A x = b` for small symmetric positive definite `A` by Gaussian
/// elimination with partial pivoting. `None` when a pivot degenerates.
fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let k = b.len();
    let mut aug: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row = a[i].clone();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..k {
        let pivot = (col..k).max_by(|&r1, &r2| {
            aug[r1][col]
                .abs()
                .partial_cmp(&aug[r2][col].abs())
                .unwrap()
        })?;
        if aug[pivot][col].abs() < 1e-14 {
            return None;
        }
        aug.swap(col, pivot);
        for row in (col + 1)..k {
            let factor = aug[row][col] / aug[col][col];
            for c in col..=k {
                aug[row][c] -= factor * aug[col][c];
            }
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let mut s = aug[row][k];
        for c in (row + 1)..k {
            s -= aug[row][c] * x[c];
        }
        x[row] = s / aug[row][row];
    }
    Some(x)
}

/// Euclidean projection onto the unit simplex (sort-based).
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Draw a member of `spec`, deterministic given the RNG stream.
pub fn sample_member(spec: &ClassSpec, rng: &mut ChaCha8Rng) -> Result<GridDensity> {
    sample_member_on_grid(spec, rng, spec.grid_size().unwrap_or(64))
}

/// Draw a member of `spec` on an `m`-cell grid (mixtures pin `m` themselves).
pub fn sample_member_on_grid(
    spec: &ClassSpec,
    rng: &mut ChaCha8Rng,
    m: usize,
) -> Result<GridDensity> {
    spec.validate()?;
    for _ in 0..SAMPLER_MAX_ATTEMPTS {
        let candidate = propose_member(spec, rng, m)?;
        if membership(spec, &candidate)?.is_member {
            return Ok(candidate);
        }
    }
    Err(Error::Generation {
        attempts: SAMPLER_MAX_ATTEMPTS,
    })
}

fn propose_member(spec: &ClassSpec, rng: &mut ChaCha8Rng, m: usize) -> Result<GridDensity> {
    match spec {
        ClassSpec::Ambient { bounds } => sample_ambient(bounds, rng, m),
        ClassSpec::Lipschitz { gamma, q, psi } => {
            let p = smooth_perturbation(rng, m, *gamma + 0.5);
            let mut cap = bound_scale(&p, 1.0 - 0.0, *psi - 1.0);
            for s in 1..m {
                let lhs = grid_q_norm((0..m).map(|i| p[(i + s).min(m - 1)] - p[i]), m, *q);
                if lhs > 0.0 {
                    cap = cap.min(psi * (s as f64 / m as f64).powf(*gamma) / lhs);
                }
            }
            perturbed_density(&p, cap, rng)
        }
        ClassSpec::Quad { gamma, bounds } => {
            let p = smooth_perturbation(rng, m, 2.5);
            let mut cap = bound_scale(&p, 1.0 - bounds.alpha, bounds.beta - 1.0);
            let curv = {
                let mm = m as f64;
                p.windows(3)
                    .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
                    .fold(0.0, f64::max)
                    * mm
                    * mm
            };
            if curv > 0.0 {
                cap = cap.min(gamma / curv);
            }
            perturbed_density(&p, cap, rng)
        }
        ClassSpec::Bv { zeta } => {
            let p = step_perturbation(rng, m);
            let mut cap = bound_scale(&p, 1.0, *zeta - 1.0);
            let tv: f64 = p.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
            if tv > 0.0 {
                cap = cap.min(zeta / tv);
            }
            perturbed_density(&p, cap, rng)
        }
        ClassSpec::ConvMix { components, .. } => {
            let w = dirichlet_uniform(rng, components.len());
            let mm = components[0].m();
            let values: Vec<f64> = (0..mm)
                .map(|cell| {
                    components
                        .iter()
                        .zip(&w)
                        .map(|(c, wi)| wi * c.values()[cell])
                        .sum()
                })
                .collect();
            GridDensity::new(values)
        }
    }
}

/// Zero-mean smooth perturbation: a short random Fourier series whose mode
/// amplitudes decay like `j^-decay`. Cell-midpoint sums of each mode vanish,
/// so the mean stays at zero to rounding.
fn smooth_perturbation(rng: &mut ChaCha8Rng, m: usize, decay: f64) -> Vec<f64> {
    let modes = (m / 4).clamp(1, 12);
    let coeffs: Vec<(f64, f64)> = (1..=modes)
        .map(|j| {
            let scale = (j as f64).powf(-decay);
            (
                scale * (rng.gen::<f64>() * 2.0 - 1.0),
                scale * (rng.gen::<f64>() * 2.0 - 1.0),
            )
        })
        .collect();
    (0..m)
        .map(|i| {
            let x = (i as f64 + 0.5) / m as f64;
            coeffs
                .iter()
                .enumerate()
                .map(|(idx, (a, b))| {
                    let w = 2.0 * std::f64::consts::PI * (idx + 1) as f64 * x;
                    a * w.sin() + b * w.cos()
                })
                .sum()
        })
        .collect()
}

/// Zero-mean random step function with a handful of knots.
fn step_perturbation(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let knots = rng.gen_range(1..=6.min(m.saturating_sub(1)).max(1));
    let mut cuts: Vec<usize> = (0..knots).map(|_| rng.gen_range(1..m.max(2))).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut p = Vec::with_capacity(m);
    let mut level = rng.gen::<f64>() * 2.0 - 1.0;
    let mut next_cut = 0;
    for i in 0..m {
        if next_cut < cuts.len() && i == cuts[next_cut] {
            level = rng.gen::<f64>() * 2.0 - 1.0;
            next_cut += 1;
        }
        p.push(level);
    }
    let mean = p.iter().sum::<f64>() / m as f64;
    for v in &mut p {
        *v -= mean;
    }
    p
}

/// Largest scale keeping `1 + scale * p` inside `[1 - down, 1 + up]`.
fn bound_scale(p: &[f64], down: f64, up: f64) -> f64 {
    let (lo, hi) = min_max(p);
    let mut cap = f64::INFINITY;
    if hi > 0.0 {
        cap = cap.min(up / hi);
    }
    if lo < 0.0 {
        cap = cap.min(down / -lo);
    }
    cap
}

/// `1 + u * margin * cap * p`, renormalized to cell mean exactly 1.
fn perturbed_density(p: &[f64], cap: f64, rng: &mut ChaCha8Rng) -> Result<GridDensity> {
    let cap = if cap.is_finite() { cap } else { 0.0 };
    let scale = cap * 0.98 * (0.2 + 0.75 * rng.gen::<f64>());
    let mut values: Vec<f64> = p.iter().map(|&x| 1.0 + scale * x).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in &mut values {
        *v /= mean;
    }
    GridDensity::new(values)
}

/// Symmetric Dirichlet(1, ..., 1) weights via normalized exponentials.
fn dirichlet_uniform(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Ambient sampler: uniform draws in `[alpha, beta]` shifted (and clipped)
/// so the cell mean is exactly 1, with the shift found by bisection.
fn sample_ambient(bounds: &BoundsSpec, rng: &mut ChaCha8Rng, m: usize) -> Result<GridDensity> {
    if bounds.alpha > 1.0 || bounds.beta < 1.0 {
        return Err(Error::Domain(format!(
            "ambient class [{}, {}] contains no density (needs alpha <= 1 <= beta)",
            bounds.alpha, bounds.beta
        )));
    }
    let raw: Vec<f64> = (0..m)
        .map(|_| bounds.alpha + (bounds.beta - bounds.alpha) * rng.gen::<f64>())
        .collect();
    clip_renormalize(&raw, bounds.alpha, bounds.beta)
}

/// Shift-and-clip `raw` into `[lo, hi]` so the cell mean is exactly 1.
///
/// The clipped mean is continuous and non-decreasing in the shift, so
/// bisection pins it; requires `lo <= 1 <= hi`.
pub fn clip_renormalize(raw: &[f64], lo: f64, hi: f64) -> Result<GridDensity> {
    if !(lo <= 1.0 && hi >= 1.0 && lo < hi) {
        return Err(Error::Domain(format!(
            "clip range [{lo}, {hi}] cannot hold a density mean of 1"
        )));
    }
    let m = raw.len() as f64;
    let clipped_mean = |t: f64| raw.iter().map(|&v| (v + t).clamp(lo, hi)).sum::<f64>() / m;
    let (vmin, vmax) = min_max(raw);
    let mut a = lo - vmax;
    let mut b = hi - vmin;
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if clipped_mean(mid) < 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let t = 0.5 * (a + b);
    let values: Vec<f64> = raw.iter().map(|&v| (v + t).clamp(lo, hi)).collect();
    GridDensity::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_distance, l2_distance_sq};
    use crate::seeding::{stream, Domain};

    fn bounds(a: f64, b: f64) -> BoundsSpec {
        BoundsSpec::new(a, b).unwrap()
    }

    fn example_specs(m: usize) -> Vec<ClassSpec> {
        let mut rng = stream(11, Domain::Member, 999);
        let ambient = ClassSpec::Ambient { bounds: bounds(0.5, 2.0) };
        let components: Vec<GridDensity> = (0..3)
            .map(|_| sample_member_on_grid(&ambient, &mut rng, m).unwrap())
            .collect();
        vec![
            ClassSpec::Lipschitz { gamma: 0.8, q: 2.0, psi: 1.6 },
            ClassSpec::Bv { zeta: 1.5 },
            ClassSpec::Quad { gamma: 5.0, bounds: bounds(0.2, 2.0) },
            ClassSpec::ConvMix { k: 3, components },
        ]
    }

    #[test]
    fn uniform_is_member_of_every_functional_class() {
        // Lip, BV, Quad and Ambient all contain the flat density; mixtures
        // only contain it when it happens to lie in the component hull.
        let u = uniform_density(32);
        let ambient = ClassSpec::Ambient { bounds: bounds(0.5, 2.0) };
        assert!(membership(&ambient, &u).unwrap().is_member);
        for spec in example_specs(32) {
            if matches!(spec, ClassSpec::ConvMix { .. }) {
                continue;
            }
            let report = membership(&spec, &u).unwrap();
            assert!(report.is_member, "uniform rejected by {:?}", spec.tag());
        }
    }

    #[test]
    fn uniform_density_values() {
        let u = uniform_density(4);
        assert_eq!(u.values(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(l2_distance(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn conv_mix_vertices_are_members() {
        let specs = example_specs(32);
        let ClassSpec::ConvMix { components, .. } = specs.last().unwrap() else {
            unreachable!()
        };
        for c in components {
            let report = membership(specs.last().unwrap(), c).unwrap();
            assert!(report.is_member);
        }
    }

    #[test]
    fn bv_rejects_oversized_variation() {
        // Two-step density with total step sum 2 > zeta = 1.5:
        // jumps 0 -> 2 -> 0 across thirds would break normalization, so use
        // the direct transcription (1.5 alternating pattern has V = 2).
        let f = GridDensity::new(vec![0.5, 1.5, 0.5, 1.5]).unwrap();
        assert_eq!(total_variation(&f), 3.0);
        let two_step = GridDensity::new(vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        assert_eq!(total_variation(&two_step), 4.0);
        let spec = ClassSpec::Bv { zeta: 1.5 };
        let report = membership(&spec, &two_step).unwrap();
        assert!(!report.is_member);
        assert!(report.worst().unwrap().slack < -1.0);
    }

    #[test]
    fn convex_combine_edge_cases() {
        let f = GridDensity::new(vec![0.5, 1.5]).unwrap();
        let g = GridDensity::new(vec![1.5, 0.5]).unwrap();
        assert_eq!(convex_combine(&f, &g, 1.0).unwrap(), f);
        let mid = convex_combine(&f, &g, 0.5).unwrap();
        assert_eq!(mid.values(), &[1.0, 1.0]);
        assert!(convex_combine(&f, &g, 1.5).is_err());
        assert!(convex_combine(&f, &g, -0.1).is_err());
    }

    #[test]
    fn convex_combinations_stay_members() {
        for spec in example_specs(32) {
            let mut rng = stream(23, Domain::Member, 7);
            for _ in 0..25 {
                let f = sample_member_on_grid(&spec, &mut rng, 32).unwrap();
                let g = sample_member_on_grid(&spec, &mut rng, 32).unwrap();
                let kappa = rng.gen::<f64>();
                let combo = convex_combine(&f, &g, kappa).unwrap();
                let report = membership(&spec, &combo).unwrap();
                assert!(
                    report.is_member,
                    "combination left {:?}: worst {:?}",
                    spec.tag(),
                    report.worst()
                );
            }
        }
    }

    #[test]
    fn samplers_are_deterministic() {
        for spec in example_specs(32) {
            let mut a = stream(5, Domain::Member, 1);
            let mut b = stream(5, Domain::Member, 1);
            let fa = sample_member_on_grid(&spec, &mut a, 32).unwrap();
            let fb = sample_member_on_grid(&spec, &mut b, 32).unwrap();
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn sampled_members_pass_membership() {
        for spec in example_specs(24) {
            let mut rng = stream(31, Domain::Member, 2);
            for _ in 0..50 {
                let f = sample_member_on_grid(&spec, &mut rng, 24).unwrap();
                assert!(membership(&spec, &f).unwrap().is_member);
            }
        }
    }

    #[test]
    fn sin_family_range_and_distance() {
        let alpha = 0.5;
        let m = 4096;
        for j in 1..=8 {
            let f = sin_family(j, alpha, m).unwrap();
            let (lo, hi) = min_max(f.values());
            assert!(lo >= alpha - 1e-9 && hi <= 2.0 - alpha + 1e-9);
        }
        // Quadrature oracle: the sines are orthogonal with squared norm 1/2,
        // so distinct members sit at squared distance (1-alpha)^2 = 0.25.
        let f1 = sin_family(1, alpha, m).unwrap();
        let f5 = sin_family(5, alpha, m).unwrap();
        let oracle: f64 = f1
            .values()
            .iter()
            .zip(f5.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / m as f64;
        let sq = l2_distance_sq(&f1, &f5).unwrap();
        assert_eq!(sq, oracle);
        assert!((sq - 0.25).abs() < 0.01, "squared distance {sq}");
    }

    #[test]
    fn sin_family_resolution_guard() {
        assert!(matches!(
            sin_family(8, 0.5, 64),
            Err(Error::Resolution { .. })
        ));
        assert!(sin_family(4, 0.5, 64).is_ok());
    }

    #[test]
    fn gram_matrix_single_uniform_component() {
        let spec = ClassSpec::ConvMix {
            k: 1,
            components: vec![uniform_density(16)],
        };
        let report = gram_matrix(&spec).unwrap();
        assert_eq!(report.matrix, vec![vec![1.0]]);
        assert!(report.positive_definite);
    }

    #[test]
    fn gram_matrix_sine_components_match_quadrature() {
        // 1 + small sine modes: diagonal 1 + amp^2/2, off-diagonal 1.
        let m = 1024;
        let comps: Vec<GridDensity> = (1..=3).map(|j| sin_family(j, 0.7, m).unwrap()).collect();
        let spec = ClassSpec::ConvMix { k: 3, components: comps.clone() };
        let report = gram_matrix(&spec).unwrap();
        let amp: f64 = 0.3;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 + amp * amp / 2.0 } else { 1.0 };
                assert!(
                    (report.matrix[i][j] - expect).abs() < 1e-3,
                    "G[{i}][{j}] = {}",
                    report.matrix[i][j]
                );
                assert!((report.matrix[i][j] - report.matrix[j][i]).abs() < 1e-12);
            }
        }
        assert!(report.positive_definite);
    }

    #[test]
    fn mixture_membership_invariant_under_permutation() {
        let specs = example_specs(32);
        let spec = specs.last().unwrap().clone();
        let ClassSpec::ConvMix { components, k } = &spec else {
            unreachable!()
        };
        let mut rng = stream(3, Domain::Member, 0);
        let f = sample_member_on_grid(&spec, &mut rng, 32).unwrap();
        let mut reversed = components.clone();
        reversed.reverse();
        let permuted = ClassSpec::ConvMix { k: *k, components: reversed };
        assert!(membership(&spec, &f).unwrap().is_member);
        assert!(membership(&permuted, &f).unwrap().is_member);
    }

    #[test]
    fn class_spec_json_round_trip() {
        let spec = ClassSpec::Lipschitz { gamma: 0.8, q: f64::INFINITY, psi: 1.6 };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains(r#""variant":"lipschitz""#));
        assert!(json.contains(r#""q":"inf""#));
        let back: ClassSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);

        let bv: ClassSpec = serde_json::from_str(r#"{"variant":"bv","zeta":1.5}"#).unwrap();
        assert_eq!(bv, ClassSpec::Bv { zeta: 1.5 });
    }

    #[test]
    fn parameter_validation() {
        assert!(ClassSpec::Lipschitz { gamma: 0.3, q: 2.0, psi: 1.5 }.validate().is_ok());
        // gamma below the q-dependent floor
        assert!(ClassSpec::Lipschitz { gamma: 0.3, q: 1.0, psi: 1.5 }.validate().is_err());
        assert!(ClassSpec::Bv { zeta: 1.0 }.validate().is_err());
        assert!(ClassSpec::Quad { gamma: 0.5, bounds: bounds(0.2, 2.0) }.validate().is_err());
    }
}
