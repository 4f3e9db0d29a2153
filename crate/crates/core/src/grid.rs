//! Piecewise-constant densities on a uniform grid over [0, 1], the metrics
//! and divergences between them, and the constants tying those together.
//!
//! A [`GridDensity`] holds one value per cell under the normalized Lebesgue
//! measure, so every integral below is an exact cell average: for a grid with
//! `m` cells, `∫ φ(f) dμ = (1/m) Σ_i φ(f_i)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `(1/m) Σ v_i = 1` for a valid density.
pub const NORM_TOL: f64 = 1e-9;

/// Slack used when asserting analytic inequalities in floating point.
pub const INEQ_SLACK: f64 = 1e-12;

/// Lower/upper bounds `[alpha, beta]` for an ambient density class.
///
/// `alpha = 0` is admitted for the mixture-lift path only; every operation
/// that divides by a density value or derives likelihood constants requires
/// `alpha > 0` and says so.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsSpec {
    pub alpha: f64,
    pub beta: f64,
}

impl BoundsSpec {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha < beta && beta.is_finite()) {
            return Err(Error::Domain(format!(
                "bounds must satisfy 0 <= alpha < beta < inf, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// Bounds usable for KL and the likelihood constants (`alpha > 0`).
    pub fn require_positive_lower(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::Domain(format!(
                "alpha must be strictly positive here, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Density with constant value on each of `m` uniform cells of [0, 1].
///
/// Cells are right-closed: cell `i` is `(i/m, (i+1)/m]`, with `x = 0`
/// assigned to cell 0. The invariant `(1/m) Σ v_i = 1` is checked on
/// construction and on deserialization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridDensity {
    m: usize,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("density needs at least one cell".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("density values must be finite".into()));
        }
        let m = values.len();
        let mean = values.iter().sum::<f64>() / m as f64;
        if (mean - 1.0).abs() > NORM_TOL {
            return Err(Error::Domain(format!(
                "density does not integrate to 1: cell mean = {mean}"
            )));
        }
        Ok(Self { m, values })
    }

    /// The uniform density (the all-ones vector).
    pub fn uniform(m: usize) -> Self {
        Self {
            m,
            values: vec![1.0; m],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the cell containing `x`, right-closed convention.
    pub fn cell_of(&self, x: f64) -> usize {
        if x <= 0.0 {
            return 0;
        }
        let idx = (x * self.m as f64).ceil() as usize;
        idx.saturating_sub(1).min(self.m - 1)
    }

    /// Density value at a point (the value of its cell).
    pub fn value_at(&self, x: f64) -> f64 {
        self.values[self.cell_of(x)]
    }

    /// Whether every cell value lies in `[alpha - tol, beta + tol]`.
    pub fn within_bounds(&self, bounds: &BoundsSpec, tol: f64) -> bool {
        self.values
            .iter()
            .all(|&v| v >= bounds.alpha - tol && v <= bounds.beta + tol)
    }
}

impl<'de> Deserialize<'de> for GridDensity {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            m: usize,
            values: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.m != raw.values.len() {
            return Err(serde::de::Error::custom(format!(
                "m = {} does not match values length {}",
                raw.m,
                raw.values.len()
            )));
        }
        GridDensity::new(raw.values).map_err(serde::de::Error::custom)
    }
}

fn check_same_grid(f: &GridDensity, g: &GridDensity) -> Result<()> {
    if f.m != g.m {
        return Err(Error::GridMismatch(f.m, g.m));
    }
    Ok(())
}

/// L2 metric `sqrt((1/m) Σ (f_i - g_i)^2)`.
pub fn l2_distance(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    check_same_grid(f, g)?;
    let sum: f64 = f
        .values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / f.m as f64).sqrt())
}

/// Squared L2 metric, avoiding the square root when only the square is needed.
pub fn l2_distance_sq(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    check_same_grid(f, g)?;
    let sum: f64 = f
        .values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / f.m as f64)
}

/// KL divergence `(1/m) Σ f_i log(f_i / g_i)`.
///
/// Requires every `g_i > 0`; cells with `f_i = 0` contribute zero.
pub fn kl_divergence(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    check_same_grid(f, g)?;
    let mut sum = 0.0;
    for (&fi, &gi) in f.values.iter().zip(&g.values) {
        if gi <= 0.0 {
            return Err(Error::Domain(format!(
                "KL undefined: second argument has cell value {gi} <= 0"
            )));
        }
        if fi > 0.0 {
            sum += fi * (fi / gi).ln();
        } else if fi < 0.0 {
            return Err(Error::Domain(format!(
                "KL undefined: first argument has negative cell value {fi}"
            )));
        }
    }
    Ok(sum / f.m as f64)
}

/// Chi-square divergence `(1/m) Σ (f_i - g_i)^2 / g_i`.
pub fn chi_square(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    check_same_grid(f, g)?;
    let mut sum = 0.0;
    for (&fi, &gi) in f.values.iter().zip(&g.values) {
        if gi <= 0.0 {
            return Err(Error::Domain(format!(
                "chi-square undefined: second argument has cell value {gi} <= 0"
            )));
        }
        sum += (fi - gi) * (fi - gi) / gi;
    }
    Ok(sum / f.m as f64)
}

/// Hellinger distance `sqrt((1/m) Σ (sqrt(f_i) - sqrt(g_i))^2)`.
pub fn hellinger(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    check_same_grid(f, g)?;
    let mut sum = 0.0;
    for (&fi, &gi) in f.values.iter().zip(&g.values) {
        if fi < 0.0 || gi < 0.0 {
            return Err(Error::Domain(
                "Hellinger undefined for negative values".into(),
            ));
        }
        let d = fi.sqrt() - gi.sqrt();
        sum += d * d;
    }
    Ok((sum / f.m as f64).sqrt())
}

/// The function `h(γ) = (γ - 1 - log γ) / (γ - 1)^2`, extended by its limit
/// value 1/2 at γ = 1.
///
/// The branch value is used on `|γ - 1| < 1e-8` where the quotient form
/// cancels catastrophically.
pub fn h_function(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("h(gamma) needs gamma > 0, got {gamma}")));
    }
    if (gamma - 1.0).abs() < 1e-8 {
        return Ok(0.5);
    }
    let d = gamma - 1.0;
    Ok((d - gamma.ln()) / (d * d))
}

/// The derived constants of the KL/L2 sandwich and the likelihood
/// second-moment bound: `c(α,β) = h(β/α)/β` and `K(α,β) = β/(α² c(α,β))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceConstants {
    /// `h(β/α)`.
    pub h_of_ratio: f64,
    /// `c(α,β) = h(β/α)/β`.
    pub c_ab: f64,
    /// `K(α,β) = β/(α² c(α,β))`.
    pub k_ab: f64,
}

pub fn equivalence_constants(bounds: &BoundsSpec) -> Result<EquivalenceConstants> {
    bounds.require_positive_lower()?;
    let h = h_function(bounds.beta / bounds.alpha)?;
    let c_ab = h / bounds.beta;
    let k_ab = bounds.beta / (bounds.alpha * bounds.alpha * c_ab);
    Ok(EquivalenceConstants {
        h_of_ratio: h,
        c_ab,
        k_ab,
    })
}

/// Check `log x <= (x - 1) - h(γ)(x - 1)^2` for `0 < x <= γ`.
///
/// Holds everywhere on the valid domain; the check allows [`INEQ_SLACK`]
/// of rounding.
pub fn elementary_log_check(gamma: f64, x: f64) -> Result<bool> {
    if !(gamma > 0.0) || !(x > 0.0) || x > gamma {
        return Err(Error::Domain(format!(
            "log inequality needs gamma > 0 and 0 < x <= gamma, got gamma={gamma}, x={x}"
        )));
    }
    let h = h_function(gamma)?;
    let rhs = (x - 1.0) - h * (x - 1.0) * (x - 1.0);
    Ok(x.ln() <= rhs + INEQ_SLACK)
}

/// Upper bound `2 sqrt(β)` on the L2 diameter of the ambient class.
pub fn diameter_upper_bound(bounds: &BoundsSpec) -> f64 {
    2.0 * bounds.beta.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gd(values: &[f64]) -> GridDensity {
        GridDensity::new(values.to_vec()).unwrap()
    }

    // Scalar oracle for the (1/m)-weighted quadrature sums used throughout:
    // evaluates Σ φ(f_i, g_i) / m with f64 arithmetic, term by term.
    fn quad_oracle(f: &[f64], g: &[f64], phi: impl Fn(f64, f64) -> f64) -> f64 {
        f.iter().zip(g).map(|(&a, &b)| phi(a, b)).sum::<f64>() / f.len() as f64
    }

    #[test]
    fn l2_identity_is_zero() {
        let f = gd(&[0.7, 1.3, 1.0, 1.0]);
        assert_eq!(l2_distance(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn l2_hand_evaluated_pair() {
        let f = gd(&[0.5, 1.5]);
        let g = gd(&[1.0, 1.0]);
        // (1/2)(0.25 + 0.25) = 0.25, sqrt = 0.5
        assert_eq!(l2_distance(&f, &g).unwrap(), 0.5);
        let expect = quad_oracle(f.values(), g.values(), |a, b| (a - b) * (a - b)).sqrt();
        assert_eq!(l2_distance(&f, &g).unwrap(), expect);
    }

    #[test]
    fn l2_rejects_mismatched_grids() {
        let f = gd(&[1.0, 1.0]);
        let g = GridDensity::uniform(3);
        assert!(matches!(
            l2_distance(&f, &g),
            Err(Error::GridMismatch(2, 3))
        ));
    }

    #[test]
    fn kl_hand_evaluated_pairs() {
        let f = gd(&[0.5, 1.5]);
        let g = gd(&[1.0, 1.0]);
        // (1/2)(0.5 ln 0.5 + 1.5 ln 1.5) = 0.130812035941137...
        let expect = 0.5 * (0.5 * 0.5_f64.ln() + 1.5 * 1.5_f64.ln());
        assert!((kl_divergence(&f, &g).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.13081).abs() < 5e-6);

        // Reversed arguments demonstrate asymmetry:
        // (1/2)(ln 2 + ln(2/3)) = 0.14384103622589045...
        let expect_rev = 0.5 * (2.0_f64.ln() + (2.0 / 3.0_f64).ln());
        assert!((kl_divergence(&g, &f).unwrap() - expect_rev).abs() < 1e-15);
        assert!((expect_rev - 0.14384).abs() < 5e-6);
        assert_ne!(
            kl_divergence(&f, &g).unwrap(),
            kl_divergence(&g, &f).unwrap()
        );
    }

    #[test]
    fn kl_identity_is_zero() {
        let f = gd(&[0.5, 1.5]);
        assert_eq!(kl_divergence(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn kl_rejects_zero_cells_in_second_argument() {
        let f = gd(&[1.0, 1.0]);
        let g = gd(&[2.0, 0.0]);
        assert!(matches!(kl_divergence(&f, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn chi_square_hand_evaluated_pair() {
        let f = gd(&[0.5, 1.5]);
        let g = gd(&[1.0, 1.0]);
        assert_eq!(chi_square(&f, &g).unwrap(), 0.25);
        assert_eq!(chi_square(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn hellinger_hand_evaluated_pair() {
        let f = gd(&[0.5, 1.5]);
        let g = gd(&[1.0, 1.0]);
        let expect = quad_oracle(f.values(), g.values(), |a, b| {
            (a.sqrt() - b.sqrt()).powi(2)
        })
        .sqrt();
        assert_eq!(hellinger(&f, &g).unwrap(), expect);
        assert!((expect - 0.26105).abs() < 5e-6);
        assert_eq!(hellinger(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn h_at_one_is_exactly_half() {
        assert_eq!(h_function(1.0).unwrap(), 0.5);
        // Branch window
        assert_eq!(h_function(1.0 + 5e-9).unwrap(), 0.5);
    }

    #[test]
    fn h_at_four_matches_scalar_formula() {
        let expect = (3.0 - 4.0_f64.ln()) / 9.0;
        assert_eq!(h_function(4.0).unwrap(), expect);
        assert!((expect - 0.17930).abs() < 5e-6);
    }

    #[test]
    fn h_is_strictly_decreasing_on_log_grid() {
        // log grid over [1e-3, 1e3]
        let n = 2000;
        let mut prev = f64::INFINITY;
        for i in 0..=n {
            let g = 1e-3 * 1e6_f64.powf(i as f64 / n as f64);
            let h = h_function(g).unwrap();
            assert!(
                h < prev,
                "h not strictly decreasing at gamma = {g}: {h} >= {prev}"
            );
            prev = h;
        }
    }

    #[test]
    fn h_rejects_nonpositive_gamma() {
        assert!(h_function(0.0).is_err());
        assert!(h_function(-1.0).is_err());
    }

    #[test]
    fn equivalence_constants_chained_oracle() {
        let bounds = BoundsSpec::new(0.5, 2.0).unwrap();
        let ec = equivalence_constants(&bounds).unwrap();
        let h4 = (3.0 - 4.0_f64.ln()) / 9.0;
        assert_eq!(ec.h_of_ratio, h4);
        assert_eq!(ec.c_ab, h4 / 2.0);
        assert!((ec.c_ab - 0.08965).abs() < 5e-6);
        assert_eq!(ec.k_ab, 2.0 / (0.25 * ec.c_ab));
        assert!((ec.k_ab - 89.24).abs() < 0.01);
    }

    #[test]
    fn equivalence_constants_near_equal_bounds_limit() {
        // alpha -> beta forces c_ab -> h(1)/beta = 1/(2 beta)
        let beta = 2.0;
        let bounds = BoundsSpec::new(beta - 1e-12, beta).unwrap();
        let ec = equivalence_constants(&bounds).unwrap();
        assert!((ec.c_ab - 1.0 / (2.0 * beta)).abs() < 1e-12);
    }

    #[test]
    fn equivalence_constants_reject_zero_alpha() {
        let bounds = BoundsSpec::new(0.0, 2.0).unwrap();
        assert!(equivalence_constants(&bounds).is_err());
    }

    #[test]
    fn log_check_holds_at_one_and_sampled_points() {
        assert!(elementary_log_check(7.0, 1.0).unwrap());
        for &x in &[0.01, 0.5, 2.0, 4.0] {
            assert!(elementary_log_check(4.0, x).unwrap());
        }
    }

    #[test]
    fn log_check_rejects_out_of_domain() {
        assert!(elementary_log_check(4.0, 5.0).is_err());
        assert!(elementary_log_check(4.0, 0.0).is_err());
        assert!(elementary_log_check(0.0, 0.5).is_err());
    }

    #[test]
    fn diameter_bound_values() {
        let bounds = BoundsSpec::new(0.5, 2.0).unwrap();
        assert!((diameter_upper_bound(&bounds) - 2.0 * 2.0_f64.sqrt()).abs() < 1e-15);
        let unit = BoundsSpec::new(0.5, 1.0).unwrap();
        assert_eq!(diameter_upper_bound(&unit), 2.0);
    }

    #[test]
    fn normalization_enforced() {
        assert!(GridDensity::new(vec![1.0, 0.5]).is_err());
        assert!(GridDensity::new(vec![]).is_err());
        assert!(GridDensity::new(vec![0.5, 1.5]).is_ok());
    }

    #[test]
    fn cell_lookup_right_closed() {
        let f = gd(&[0.5, 1.5]);
        assert_eq!(f.cell_of(0.0), 0);
        assert_eq!(f.cell_of(0.5), 0); // 0.5 is the right edge of cell 0
        assert_eq!(f.cell_of(0.500000001), 1);
        assert_eq!(f.cell_of(1.0), 1);
        assert_eq!(f.value_at(1.0), 1.5);
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let f = gd(&[0.5, 1.5]);
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, r#"{"m":2,"values":[0.5,1.5]}"#);
        let back: GridDensity = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
        // mismatched m and bad normalization both rejected
        assert!(serde_json::from_str::<GridDensity>(r#"{"m":3,"values":[0.5,1.5]}"#).is_err());
        assert!(serde_json::from_str::<GridDensity>(r#"{"m":2,"values":[0.5,1.0]}"#).is_err());
    }
}
