//! Expanding polynomial maps with real Julia sets: invariant interval,
//! critical-value gap, fiber trees `T_n^{-1}(x)` and the Schwarzian.

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::poly::{solve_bracketed, Jet3, RealPolynomial};
use crate::precision::{checked_pow, Limits, PrecisionConfig};
use crate::real::Real;

/// A real polynomial of degree `d ≥ 2` with all critical points real and all
/// critical values outside its invariant interval `[-ξ, ξ]`.
#[derive(Debug, Clone)]
pub struct ExpandingMap {
    poly: RealPolynomial,
    derivative: RealPolynomial,
    degree: usize,
    xi: Real,
    critical_points: Vec<Real>,
    delta: Real,
    boundary: bool,
    expansion: Option<(Real, Real)>,
    cfg: PrecisionConfig,
    limits: Limits,
}

impl ExpandingMap {
    /// Validates `poly` as a strictly expanding map (δ > 0).
    pub fn new(poly: RealPolynomial, cfg: PrecisionConfig, limits: Limits) -> Result<Self> {
        Self::build(poly, cfg, limits, false)
    }

    /// Like [`ExpandingMap::new`] but also admits the boundary case δ = 0
    /// (e.g. the Chebyshev map z² − 2).
    pub fn with_boundary(poly: RealPolynomial, cfg: PrecisionConfig, limits: Limits) -> Result<Self> {
        Self::build(poly, cfg, limits, true)
    }

    /// Convenience constructor from ascending `f64` coefficients.
    pub fn from_coeffs(coeffs: &[f64], cfg: PrecisionConfig, allow_boundary: bool) -> Result<Self> {
        let _g = cfg.install();
        let poly = RealPolynomial::from_f64(coeffs)?;
        Self::build(poly, cfg, Limits::default(), allow_boundary)
    }

    fn build(poly: RealPolynomial, cfg: PrecisionConfig, limits: Limits, allow_boundary: bool) -> Result<Self> {
        let _g = cfg.install();
        let poly = RealPolynomial::new(
            poly.coeffs()
                .iter()
                .map(|c| c.to_prec(cfg.significand_bits))
                .collect(),
        )?;
        let degree = poly.degree();
        if degree < 2 {
            return Err(Error::NonExpandingInput(format!("degree {degree} < 2")));
        }
        let derivative = poly.derivative();
        let critical_points = derivative.real_roots();
        if critical_points.len() != degree - 1 {
            return Err(Error::NonExpandingInput(format!(
                "only {} of {} critical points are real",
                critical_points.len(),
                degree - 1
            )));
        }
        let xi = halfwidth_with_critical(&poly, &critical_points, &cfg)?;
        let delta = gap(&poly, &critical_points, &xi);
        let tol = cfg.collision_tol();
        let boundary = delta <= tol;
        if boundary && !allow_boundary {
            return Err(Error::NonExpandingInput(format!(
                "critical value touches the invariant interval (delta = {:e})",
                delta.to_f64()
            )));
        }
        Ok(ExpandingMap {
            poly,
            derivative,
            degree,
            xi,
            critical_points,
            delta: delta.max_of(Real::zero()),
            boundary,
            expansion: None,
            cfg,
            limits,
        })
    }

    pub fn poly(&self) -> &RealPolynomial {
        &self.poly
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn xi(&self) -> &Real {
        &self.xi
    }

    pub fn critical_points(&self) -> &[Real] {
        &self.critical_points
    }

    pub fn delta(&self) -> &Real {
        &self.delta
    }

    pub fn is_boundary(&self) -> bool {
        self.boundary
    }

    pub fn precision(&self) -> &PrecisionConfig {
        &self.cfg
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    pub fn with_limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    /// Same map rebuilt at another precision.
    pub fn at_precision(&self, cfg: PrecisionConfig) -> Result<Self> {
        let mut rebuilt = Self::build(self.poly.clone(), cfg, self.limits, self.boundary)?;
        rebuilt.expansion = self.expansion.clone();
        Ok(rebuilt)
    }

    /// `(A, c)` with `min |T_n'| ≥ A cⁿ` on sampled fibers, if estimated.
    pub fn expansion_estimate(&self) -> Option<&(Real, Real)> {
        self.expansion.as_ref()
    }

    pub fn eval(&self, y: &Real) -> Real {
        self.poly.eval(y)
    }

    pub fn derivative_at(&self, y: &Real) -> Real {
        self.derivative.eval(y)
    }

    pub fn jet(&self, y: &Real) -> Jet3 {
        self.poly.jet(y)
    }

    /// Jet of `T_n` at `y`, composed along the forward orbit of `y`.
    pub fn iterate_jet(&self, y: &Real, n: usize) -> Jet3 {
        let mut acc = Jet3::identity(y);
        for _ in 0..n {
            let outer = self.poly.jet(&acc.value);
            acc = Jet3::compose(&outer, &acc);
        }
        acc
    }

    /// Schwarzian derivative `S(T)(y)`.
    pub fn schwarzian(&self, y: &Real) -> Result<Real> {
        let _g = self.cfg.install();
        let jet = self.poly.jet(y);
        self.check_nonsingular(y, &jet.d1)?;
        Ok(jet.schwarzian())
    }

    /// Schwarzian of the iterate `T_n` at `y`, from the composed jet.
    pub fn iterate_schwarzian(&self, y: &Real, n: usize) -> Result<Real> {
        let _g = self.cfg.install();
        let jet = self.iterate_jet(y, n);
        self.check_nonsingular(y, &jet.d1)?;
        Ok(jet.schwarzian())
    }

    pub(crate) fn check_nonsingular(&self, y: &Real, slope: &Real) -> Result<()> {
        if slope.abs() < self.cfg.collision_tol() {
            return Err(Error::SingularPoint {
                at: y.to_f64(),
                magnitude: slope.abs().to_f64(),
            });
        }
        Ok(())
    }

    /// Coefficients of the n-fold composition `T_n` (degree dⁿ).
    pub fn iterate(&self, n: usize) -> Result<RealPolynomial> {
        if n == 0 {
            return Err(Error::InvalidInput("iterate needs n >= 1".into()));
        }
        let _g = self.cfg.install();
        self.limits.check_size(checked_pow(self.degree, n)?)?;
        let mut acc = self.poly.clone();
        for _ in 1..n {
            acc = self.poly.compose(&acc);
        }
        Ok(acc)
    }

    fn check_in_interval(&self, what: &str, x: &Real) -> Result<()> {
        // Points produced by rounding may overshoot ±ξ by a few ulps.
        let slack = self.cfg.collision_tol() * &self.xi;
        if x.abs() > &self.xi + &slack {
            return Err(Error::OutOfRange {
                what: what.to_string(),
                value: x.to_f64(),
                bound: self.xi.to_f64(),
            });
        }
        Ok(())
    }

    /// The d solutions of `T(y) = target`, ascending, one per monotone branch.
    pub fn branch_roots(&self, target: &Real) -> Result<Vec<Real>> {
        let _g = self.cfg.install();
        self.check_in_interval("fiber target", target)?;
        Ok(self.branch_roots_unchecked(target))
    }

    fn branch_roots_unchecked(&self, target: &Real) -> Vec<Real> {
        let outer = &self.xi + 1.0;
        let mut roots = Vec::with_capacity(self.degree);
        let mut lo = -outer.clone();
        for k in 0..self.degree {
            let hi = if k + 1 < self.degree {
                self.critical_points[k].clone()
            } else {
                outer.clone()
            };
            roots.push(solve_bracketed(&self.poly, target, &lo, &hi));
            lo = hi;
        }
        roots
    }

    /// All dⁿ real solutions of `T_n(y) = x`, ascending, computed level by
    /// level on the fiber tree (never by expanding `T_n`).
    pub fn preimages(&self, x: &Real, n: usize) -> Result<Vec<Real>> {
        if n == 0 {
            return Err(Error::InvalidInput("preimages need n >= 1".into()));
        }
        let _g = self.cfg.install();
        self.check_in_interval("x", x)?;
        self.limits.check_size(checked_pow(self.degree, n)?)?;
        let mut level = vec![x.to_prec(self.cfg.significand_bits)];
        for _ in 0..n {
            let mut next = Vec::with_capacity(level.len() * self.degree);
            for target in &level {
                next.extend(self.branch_roots_unchecked(target));
            }
            level = next;
        }
        level.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        self.check_separated(&level)?;
        Ok(level)
    }

    pub(crate) fn check_separated(&self, sorted: &[Real]) -> Result<()> {
        let tol = self.cfg.collision_tol();
        for w in sorted.windows(2) {
            let gap = &w[1] - &w[0];
            if gap <= tol {
                return Err(Error::RootCollision {
                    near: w[0].to_f64(),
                    gap: gap.to_f64(),
                });
            }
        }
        Ok(())
    }

    /// `δ = min_c dist(T(c), [-ξ, ξ])`; errors unless strictly positive.
    pub fn critical_gap(&self) -> Result<Real> {
        let _g = self.cfg.install();
        let delta = gap(&self.poly, &self.critical_points, &self.xi);
        if delta <= self.cfg.collision_tol() {
            return Err(Error::NonExpandingInput(format!(
                "critical gap {:e} is not positive",
                delta.to_f64()
            )));
        }
        Ok(delta)
    }

    /// Fits `min_fiber |T_n'| ≈ A cⁿ` over the given x-samples for n = 1..=n_max
    /// and stores the pair; returns the per-n minima as well.
    pub fn estimate_expansion(&mut self, xs: &[Real], n_max: usize) -> Result<Vec<Real>> {
        let _g = self.cfg.install();
        let mut minima = Vec::with_capacity(n_max);
        for n in 1..=n_max {
            let mut best: Option<Real> = None;
            for x in xs {
                for y in self.preimages(x, n)? {
                    let slope = self.iterate_jet(&y, n).d1.abs();
                    best = Some(match best {
                        Some(b) => b.min_of(slope),
                        None => slope,
                    });
                }
            }
            minima.push(best.ok_or_else(|| Error::InvalidInput("empty x sample".into()))?);
        }
        // Least squares on log(min) = log A + n log c.
        let logs: Vec<f64> = minima.iter().map(|m| m.to_f64().ln()).collect();
        let ns: Vec<f64> = (1..=n_max).map(|n| n as f64).collect();
        let count = ns.len() as f64;
        let mean_n = ns.iter().sum::<f64>() / count;
        let mean_l = logs.iter().sum::<f64>() / count;
        let sxx: f64 = ns.iter().map(|n| (n - mean_n).powi(2)).sum();
        let slope = if sxx > 0.0 {
            ns.iter()
                .zip(&logs)
                .map(|(n, l)| (n - mean_n) * (l - mean_l))
                .sum::<f64>()
                / sxx
        } else {
            logs[0]
        };
        // Shift the intercept down so the bound holds at every sample.
        let intercept = ns
            .iter()
            .zip(&logs)
            .map(|(n, l)| l - slope * n)
            .fold(f64::INFINITY, f64::min);
        self.expansion = Some((Real::from_f64(intercept.exp()), Real::from_f64(slope.exp())));
        Ok(minima)
    }
}

fn gap(poly: &RealPolynomial, critical: &[Real], xi: &Real) -> Real {
    critical
        .iter()
        .map(|c| poly.eval(c).abs() - xi)
        .reduce(Real::min_of)
        .expect("degree >= 2 has critical points")
}

/// Largest |y| over real solutions of `T(y) = ±h`.
fn outermost_preimage(poly: &RealPolynomial, critical: &[Real], h: &Real) -> Option<Real> {
    let mut roots = poly.solutions_between_critical(h, critical);
    roots.extend(poly.solutions_between_critical(&-h, critical));
    roots.into_iter().map(|r| r.abs()).reduce(Real::max_of)
}

fn halfwidth_with_critical(poly: &RealPolynomial, critical: &[Real], cfg: &PrecisionConfig) -> Result<Real> {
    let admissible = |h: &Real| outermost_preimage(poly, critical, h).is_some_and(|m| &m <= h);
    let mut hi = Real::from_i64(1);
    let mut guard = 0;
    while !admissible(&hi) {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::NonExpandingInput("no invariant interval found".into()));
        }
    }
    let mut lo = Real::zero();
    let tol = Real::exp2(2 - cfg.significand_bits as i32);
    while (&hi - &lo) > &tol * &hi {
        let mid = (&lo + &hi) * 0.5;
        if admissible(&mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let xi = hi;
    let slack = cfg.collision_tol();
    for c in critical {
        if poly.eval(c).abs() < &xi - &slack {
            return Err(Error::NonExpandingInput(format!(
                "critical value T({}) = {} lies inside [-xi, xi] with xi = {}",
                c.to_f64(),
                poly.eval(c).to_f64(),
                xi.to_f64()
            )));
        }
    }
    Ok(xi)
}

/// Smallest ξ with `T⁻¹([-ξ, ξ]) ⊆ [-ξ, ξ]`, by bisection on the monotone
/// condition `max |T⁻¹(±ξ)| ≤ ξ`.
pub fn invariant_halfwidth(poly: &RealPolynomial, cfg: &PrecisionConfig) -> Result<Real> {
    let _g = cfg.install();
    if poly.degree() < 2 {
        return Err(Error::NonExpandingInput("degree < 2".into()));
    }
    let critical = poly.derivative().real_roots();
    if critical.len() != poly.degree() - 1 {
        return Err(Error::NonExpandingInput("complex critical points".into()));
    }
    halfwidth_with_critical(poly, &critical, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(c: f64) -> ExpandingMap {
        ExpandingMap::from_coeffs(&[-c, 0.0, 1.0], PrecisionConfig::default(), false).unwrap()
    }

    fn closed_xi(c: f64) -> f64 {
        (1.0 + (1.0 + 4.0 * c).sqrt()) / 2.0
    }

    #[test]
    fn halfwidth_is_the_fixed_point() {
        for c in [3.0, 4.0, 5.0] {
            let t = quad(c);
            assert!((t.xi().to_f64() - closed_xi(c)).abs() < 1e-12, "C = {c}");
        }
    }

    #[test]
    fn halfwidth_full_precision_for_z2_minus_3() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let exact = (Real::from_i64(13).sqrt() + 1.0) * 0.5;
        assert!((t.xi() - &exact).abs() < Real::exp2(-240));
    }

    #[test]
    fn chebyshev_boundary_rejected_unless_allowed() {
        let cfg = PrecisionConfig::default();
        let err = ExpandingMap::from_coeffs(&[-2.0, 0.0, 1.0], cfg, false).unwrap_err();
        assert!(matches!(err, Error::NonExpandingInput(_)));
        let t = ExpandingMap::from_coeffs(&[-2.0, 0.0, 1.0], cfg, true).unwrap();
        assert!(t.is_boundary());
        assert!((t.xi().to_f64() - 2.0).abs() < 1e-12);
        assert!(matches!(t.critical_gap(), Err(Error::NonExpandingInput(_))));
    }

    #[test]
    fn non_expanding_quadratic_rejected() {
        let _g = PrecisionConfig::default().install();
        let p = RealPolynomial::from_f64(&[-1.0, 0.0, 1.0]).unwrap();
        let err = invariant_halfwidth(&p, &PrecisionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonExpandingInput(_)));
    }

    #[test]
    fn critical_gap_values() {
        let t = quad(3.0);
        assert!((t.critical_gap().unwrap().to_f64() - (3.0 - closed_xi(3.0))).abs() < 1e-12);
        let t = quad(4.0);
        assert!((t.critical_gap().unwrap().to_f64() - 1.438447187191170).abs() < 1e-12);
    }

    #[test]
    fn schwarzian_of_quadratic() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let one = t.schwarzian(&Real::from_i64(1)).unwrap();
        assert!((one.to_f64() + 1.5).abs() < 1e-15);
        let s3 = t.schwarzian(&Real::from_i64(3).sqrt()).unwrap();
        assert!((s3.to_f64() + 0.5).abs() < 1e-15);
        assert!(matches!(
            t.schwarzian(&Real::zero()),
            Err(Error::SingularPoint { .. })
        ));
    }

    #[test]
    fn iterate_examples() {
        let t = quad(3.0);
        let _g = t.precision().install();
        assert_eq!(t.iterate(1).unwrap(), t.poly().clone());
        assert_eq!(
            t.iterate(2).unwrap(),
            RealPolynomial::from_f64(&[6.0, 0.0, -6.0, 0.0, 1.0]).unwrap()
        );
        let small = t.clone().with_limits(Limits {
            size_cap: 8,
            tree_cap: 8,
        });
        assert!(matches!(small.iterate(4), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn preimage_examples() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let s3 = Real::from_i64(3).sqrt();
        let one = t.preimages(&Real::zero(), 1).unwrap();
        assert!((&one[0] + &s3).abs() < Real::exp2(-240));
        assert!((&one[1] - &s3).abs() < Real::exp2(-240));
        let two = t.preimages(&Real::zero(), 2).unwrap();
        let a = (Real::from_i64(3) + &s3).sqrt();
        let b = (Real::from_i64(3) - &s3).sqrt();
        let expect = [-a.clone(), -b.clone(), b, a];
        for (got, want) in two.iter().zip(&expect) {
            assert!((got - want).abs() < Real::exp2(-240));
        }
        assert!(matches!(
            t.preimages(&Real::from_i64(-3), 1),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn cubic_map_is_expanding() {
        let t = ExpandingMap::from_coeffs(&[0.5, -5.0, 0.0, 1.0], PrecisionConfig::default(), false)
            .unwrap();
        assert_eq!(t.critical_points().len(), 2);
        let _g = t.precision().install();
        let fiber = t.preimages(&Real::from_f64(0.3), 3).unwrap();
        assert_eq!(fiber.len(), 27);
        for y in &fiber {
            assert!(y.abs() <= *t.xi());
        }
    }

    #[test]
    fn expansion_estimate_bounds_samples() {
        let mut t = quad(3.0);
        let _g = t.precision().install();
        let xs: Vec<Real> = [-2.0, 0.0, 1.5].iter().map(|&v| Real::from_f64(v)).collect();
        let minima = t.estimate_expansion(&xs, 5).unwrap();
        let (a, c) = t.expansion_estimate().unwrap().clone();
        assert!(c > 1.0);
        for (k, m) in minima.iter().enumerate() {
            let bound = &a * &c.powi(k as i32 + 1);
            assert!(*m >= &bound * (1.0 - 1e-12));
        }
    }
}
