//! Fiber Jacobi matrices and the renormalization identities relating a
//! Jacobi matrix to its d-fold refinement.

use std::io::Write;

use num_traits::{One, Zero};

use crate::dynamics::ExpandingMap;
use crate::error::{Error, Result};
use crate::jacobi::{jacobi_from_measure, JacobiMatrix, Kind};
use crate::linalg;
use crate::poly::RealPolynomial;
use crate::precision::checked_pow;
use crate::real::{cabs, Complex, Real};
use crate::transfer::{balanced_measure_approx, pullback_measure, pushforward_measure, DiscreteMeasure};

/// Leading `size x size` Jacobi matrix of the uniform measure on
/// `T_depth⁻¹(x0)`, raising precision until the construction succeeds.
pub fn balanced_jacobi(map: &ExpandingMap, x0: &Real, depth: usize, size: usize) -> Result<JacobiMatrix> {
    let mut cfg = *map.precision();
    loop {
        let at = map.at_precision(cfg)?;
        let _g = cfg.install();
        let measure = balanced_measure_approx(&at, &x0.to_prec(cfg.significand_bits), depth)?;
        match jacobi_from_measure(&measure, size, &cfg) {
            Err(Error::PrecisionExhausted { bits, detail }) => match cfg.raised() {
                Some(next) => cfg = next,
                None => return Err(Error::PrecisionExhausted { bits, detail }),
            },
            other => return other,
        }
    }
}

/// `J_n(x)`: the Jacobi matrix of the uniform measure on `T_n⁻¹(x)`, of size dⁿ.
pub fn fiber_jacobi(map: &ExpandingMap, x: &Real, n: usize) -> Result<JacobiMatrix> {
    let size = checked_pow(map.degree(), n)?;
    balanced_jacobi(map, x, n, size)
}

/// Max-abs entry of `V*(z − J)⁻¹V − (T(z) − J̃)⁻¹ T'(z)/d` with `V|k⟩ = |kd⟩`.
pub fn renorm_residual(fine: &JacobiMatrix, coarse: &JacobiMatrix, map: &ExpandingMap, z: &Complex) -> Result<Real> {
    let _g = map.precision().install();
    let m = coarse.size();
    let d = map.degree();
    if fine.size() < m * d {
        return Err(Error::OutOfRange {
            what: "rows of the fine matrix".into(),
            value: fine.size() as f64,
            bound: (m * d) as f64,
        });
    }
    let rows: Vec<usize> = (0..m).map(|k| k * d).collect();
    let lhs = linalg::compressed_resolvent(fine.q(), fine.p(), z, &rows)?;
    let tz = map.poly().eval_complex(z);
    let dtz = map.poly().derivative().eval_complex(z);
    let scale = dtz / Complex::new(Real::from_usize(d), Real::zero());
    let all: Vec<usize> = (0..m).collect();
    let rhs = linalg::compressed_resolvent(coarse.q(), coarse.p(), &tz, &all)?;
    let mut worst = Real::zero();
    for i in 0..m {
        for j in 0..m {
            let diff = &lhs[i][j] - &rhs[i][j] * &scale;
            worst = worst.max_of(cabs(&diff));
        }
    }
    Ok(worst)
}

/// Jacobi matrix of the n-fold pullback of `base` dilated by `t`.
pub fn homotopy_chain(map: &ExpandingMap, n: usize, t: &Real, base: &DiscreteMeasure) -> Result<JacobiMatrix> {
    let _g = map.precision().install();
    let dilated = base.dilate(t)?;
    let slack = map.precision().collision_tol() * map.xi();
    let bound = map.xi() + &slack;
    if let Some(x) = dilated.nodes().iter().find(|x| x.abs() > bound) {
        return Err(Error::OutOfRange {
            what: "dilated node".into(),
            value: x.to_f64(),
            bound: map.xi().to_f64(),
        });
    }
    let mut measure = dilated;
    for _ in 0..n {
        measure = pullback_measure(map, &measure)?;
    }
    jacobi_from_measure(&measure, measure.len(), map.precision())
}

/// `‖J_n(1) − J_n(0)‖₂` over the common leading dⁿ block.
pub fn homotopy_endpoint_gap(map: &ExpandingMap, n: usize, base: &DiscreteMeasure) -> Result<Real> {
    let _g = map.precision().install();
    let one = homotopy_chain(map, n, &Real::one(), base)?;
    let zero = homotopy_chain(map, n, &Real::zero(), base)?;
    let size = zero.size().min(one.size());
    one.truncated(size)?.distance(&zero.truncated(size)?)
}

/// Max over `z_grid` of `|P_{sd}(z) − P_s(T(z))|` and
/// `|Q_{sd}(z) − (T'(z)/d) Q_s(T(z))|`, each divided by `max(1, |P_{sd}(z)|)`.
pub fn composition_residual(j: &JacobiMatrix, map: &ExpandingMap, s: usize, z_grid: &[Real]) -> Result<Real> {
    let _g = map.precision().install();
    let d = map.degree();
    let sd = s * d;
    if s == 0 || sd >= j.size() {
        return Err(Error::OutOfRange {
            what: "composed index sd".into(),
            value: sd as f64,
            bound: (j.size() - 1) as f64,
        });
    }
    let inv_d = Real::ratio(1, d as i64);
    let mut worst = Real::zero();
    for z in z_grid {
        let tz = map.eval(z);
        let p_fine = j.ortho_values(Kind::First, sd, z)?;
        let q_fine = j.ortho_values(Kind::Second, sd, z)?;
        let p_coarse = j.ortho_values(Kind::First, s, &tz)?;
        let q_coarse = j.ortho_values(Kind::Second, s, &tz)?;
        let norm = p_fine[sd].abs().max_of(Real::one());
        let dp = (&p_fine[sd] - &p_coarse[s]).abs() / &norm;
        let dq = (&q_fine[sd] - map.derivative_at(z) * &inv_d * &q_coarse[s]).abs() / &norm;
        worst = worst.max_of(dp).max_of(dq);
    }
    Ok(worst)
}

/// Monic characteristic polynomial `det(z − B)` of a tridiagonal block.
pub fn monic_char_poly(q: &[Real], p: &[Real]) -> RealPolynomial {
    let z = RealPolynomial::monomial_z();
    let mut prev = RealPolynomial::constant(Real::one());
    if q.is_empty() {
        return prev;
    }
    let mut cur = z.add(&RealPolynomial::constant(-q[0].clone()));
    for k in 1..q.len() {
        let shift = z.add(&RealPolynomial::constant(-q[k].clone()));
        let next = shift.mul(&cur).add(&prev.scale(&(-p[k - 1].square())));
        prev = std::mem::replace(&mut cur, next);
    }
    cur
}

/// `T^{(s)}` data of one d x d block, paired with the coarse coefficients.
#[derive(Debug, Clone)]
pub struct BlockPolynomialData {
    pub s: usize,
    /// `(c, T^{(s)}(c))` for every critical point c.
    pub t_s_at: Vec<(Real, Real)>,
    pub q_tilde: Real,
    /// `p̃_s`; absent for s = 0.
    pub p_tilde: Option<Real>,
    /// Max coefficient deviation of the monic `Q̂_s` from the monic `T'`.
    pub proportionality: Real,
}

/// Result of [`continued_fraction_check`].
#[derive(Debug, Clone)]
pub struct ContinuedFractionReport {
    pub blocks: Vec<BlockPolynomialData>,
    /// `residuals[0] = |T^{(0)}(c) − (T(c) − q̃₀)|`, then the recursion residual
    /// for each s = 0..s_max-1.
    pub residuals: Vec<Real>,
}

impl ContinuedFractionReport {
    pub fn max_residual(&self) -> Real {
        self.residuals.iter().fold(Real::zero(), |acc, r| acc.max_of(r.abs()))
    }
}

/// Builds `T^{(s)}(c) = P̂_s(c)·(T'/d)/Q̂_s` from the diagonal blocks of
/// `fine` and checks the recursion
/// `T(c) − q̃_{s+1} = T^{(s+1)}(c) + p̃²_{s+1}/T^{(s)}(c)` against `coarse`.
pub fn continued_fraction_check(
    fine: &JacobiMatrix,
    coarse: &JacobiMatrix,
    map: &ExpandingMap,
    c: &Real,
    s_max: usize,
    tol: &Real,
) -> Result<ContinuedFractionReport> {
    let _g = map.precision().install();
    let d = map.degree();
    if (s_max + 1) * d > fine.size() || s_max + 1 > coarse.size() {
        return Err(Error::OutOfRange {
            what: "block count s_max + 1".into(),
            value: (s_max + 1) as f64,
            bound: (fine.size() / d).min(coarse.size()) as f64,
        });
    }
    let derivative = map.poly().derivative();
    let monic_dt = derivative.scale(&derivative.leading().recip());
    // (T'/d) divided by a monic polynomial of degree d-1 leaves lead(T).
    let kappa = map.poly().leading().clone();
    let mut blocks = Vec::with_capacity(s_max + 1);
    let mut t_at_c = Vec::with_capacity(s_max + 1);
    for s in 0..=s_max {
        let block = fine.block(s, d)?;
        let p_hat = monic_char_poly(block.q(), block.p());
        let q_hat = monic_char_poly(&block.q()[1..], &block.p()[1.min(block.p().len())..]);
        let deviation = q_hat
            .coeffs()
            .iter()
            .zip(monic_dt.coeffs())
            .fold(Real::zero(), |acc, (a, b)| acc.max_of((a - b).abs()));
        if deviation > *tol || q_hat.degree() != monic_dt.degree() {
            return Err(Error::ProportionalityViolation {
                block: s,
                deviation: deviation.to_f64(),
            });
        }
        let t_s_at: Vec<(Real, Real)> = map
            .critical_points()
            .iter()
            .map(|cp| (cp.clone(), &kappa * &p_hat.eval(cp)))
            .collect();
        t_at_c.push(&kappa * &p_hat.eval(c));
        blocks.push(BlockPolynomialData {
            s,
            t_s_at,
            q_tilde: coarse.q()[s].clone(),
            p_tilde: (s > 0).then(|| coarse.p_at(s).clone()),
            proportionality: deviation,
        });
    }
    let tc = map.eval(c);
    let mut residuals = Vec::with_capacity(s_max + 1);
    residuals.push((&t_at_c[0] - (&tc - &coarse.q()[0])).abs());
    for s in 0..s_max {
        let p2 = coarse.p_at(s + 1).square();
        let lhs = &tc - &coarse.q()[s + 1];
        let rhs = &t_at_c[s + 1] + &(p2 / &t_at_c[s]);
        residuals.push((lhs - rhs).abs());
    }
    Ok(ContinuedFractionReport { blocks, residuals })
}

/// Jacobi matrix of `T_* σ`, where σ is the spectral measure of `j`.
pub fn coarse_partner(j: &JacobiMatrix, map: &ExpandingMap) -> Result<JacobiMatrix> {
    let _g = map.precision().install();
    let image = pushforward_measure(map, &j.spectral_measure()?)?;
    jacobi_from_measure(&image, image.len(), map.precision())
}

/// One row of [`decay_profile`].
#[derive(Debug, Clone)]
pub struct DecayRow {
    pub n: usize,
    /// `p_{dⁿ}`.
    pub p_dn: Real,
    /// `p_{d^{n+1}} / p_{dⁿ}`; absent on the last row.
    pub ratio: Option<Real>,
    /// `q_{dⁿ} − q₀`.
    pub q_drift: Real,
}

#[derive(Debug, Clone)]
pub struct DecayProfile {
    pub rows: Vec<DecayRow>,
    /// `max_s |q_{sd} − q₀|` over every available s ≥ 1.
    pub max_q_drift: Real,
    /// Slope of `log p_{dⁿ}` against n, exponentiated: the fitted ρd.
    pub fitted_rate: Real,
}

impl DecayProfile {
    pub fn ratios(&self) -> Vec<Real> {
        self.rows.iter().filter_map(|r| r.ratio.clone()).collect()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, digits: usize) -> std::io::Result<()> {
        writeln!(out, "n,p_dn,ratio,q_drift")?;
        for r in &self.rows {
            let ratio = r.ratio.as_ref().map(|x| x.to_decimal(digits)).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{}",
                r.n,
                r.p_dn.to_decimal(digits),
                ratio,
                r.q_drift.to_decimal(digits)
            )?;
        }
        Ok(())
    }
}

/// `p_{dⁿ}` for n = 0..=n_max from the balanced approximation at depth
/// `n_max + 2` based at `x0`.
pub fn decay_profile(map: &ExpandingMap, x0: &Real, n_max: usize) -> Result<DecayProfile> {
    let _g = map.precision().install();
    let d = map.degree();
    if n_max < 1 {
        return Err(Error::InvalidInput("decay profile needs n_max >= 1".into()));
    }
    let top = checked_pow(d, n_max)?;
    let atoms = checked_pow(d, n_max + 2)?;
    map.limits().check_size(atoms)?;
    let j = balanced_jacobi(map, x0, n_max + 2, top + 1)?;
    let q0 = j.q()[0].clone();
    let mut rows = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let idx = checked_pow(d, n)?;
        let p_dn = j.p_at(idx).clone();
        let ratio = (n < n_max).then(|| j.p_at(idx * d) / &p_dn);
        rows.push(DecayRow {
            n,
            p_dn,
            ratio,
            q_drift: &j.q()[idx] - &q0,
        });
    }
    let max_q_drift = q_subperiod_drift(&j, d);
    let fit_from = if n_max >= 5 { 3 } else { 0 };
    let xs: Vec<f64> = (fit_from..=n_max).map(|n| n as f64).collect();
    let ys: Vec<Real> = rows[fit_from..].iter().map(|r| r.p_dn.ln()).collect();
    let fitted_rate = log_slope(&xs, &ys);
    Ok(DecayProfile {
        rows,
        max_q_drift,
        fitted_rate,
    })
}

/// `max_s |q_{sd} − q₀|` over every s ≥ 1 with `sd < N`.
pub fn q_subperiod_drift(j: &JacobiMatrix, d: usize) -> Real {
    let q0 = &j.q()[0];
    (1..)
        .map(|s| s * d)
        .take_while(|&k| k < j.size())
        .fold(Real::zero(), |acc, k| acc.max_of((&j.q()[k] - q0).abs()))
}

/// `exp` of the least-squares slope of `ys` against `xs`.
fn log_slope(xs: &[f64], ys: &[Real]) -> Real {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my: Real = ys.iter().sum::<Real>() / n;
    let mut num = Real::zero();
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (y - &my) * (x - mx);
        den += (x - mx) * (x - mx);
    }
    let slope = num / den;
    Real::from_f64(slope.to_f64().exp())
}

/// ε(n) over k ≤ d_n and its exploratory variant over k ≤ d_n².
#[derive(Debug, Clone)]
pub struct LimitPeriod {
    pub n: usize,
    pub eps_dn: Real,
    pub eps_dn2: Real,
}

impl LimitPeriod {
    pub fn write_csv<W: Write>(rows: &[LimitPeriod], out: &mut W, digits: usize) -> std::io::Result<()> {
        writeln!(out, "n,eps_dn,eps_dn2")?;
        for r in rows {
            writeln!(out, "{},{},{}", r.n, r.eps_dn.to_decimal(digits), r.eps_dn2.to_decimal(digits))?;
        }
        Ok(())
    }
}

/// Largest deviation of the coefficients from period d_n², with `d_n = dⁿ`.
pub fn limit_period_from(j: &JacobiMatrix, d: usize, n: usize, s_max: usize) -> Result<LimitPeriod> {
    let dn = checked_pow(d, n)?;
    let period = dn * dn;
    let needed = (s_max + 1) * period + 1;
    if j.size() < needed {
        return Err(Error::OutOfRange {
            what: "matrix size for limit-period metric".into(),
            value: j.size() as f64,
            bound: needed as f64,
        });
    }
    let dev = |k: usize, s: usize| -> Real {
        let shifted = k + s * period;
        let dp = (j.p_at(shifted) - j.p_at(k)).abs();
        let dq = (&j.q()[shifted] - &j.q()[k]).abs();
        dp.max_of(dq)
    };
    let mut eps_dn = Real::zero();
    let mut eps_dn2 = Real::zero();
    for s in 0..=s_max {
        for k in 1..=period {
            let v = dev(k, s);
            if k <= dn {
                eps_dn = eps_dn.max_of(v.clone());
            }
            eps_dn2 = eps_dn2.max_of(v);
        }
    }
    Ok(LimitPeriod { n, eps_dn, eps_dn2 })
}

/// ε(n) on the balanced approximation based at `x0`, built one level deeper
/// than the coefficient count requires.
pub fn limit_period_metric(map: &ExpandingMap, x0: &Real, n: usize, s_max: usize) -> Result<LimitPeriod> {
    let _g = map.precision().install();
    let j = limit_period_matrix(map, x0, n, s_max)?;
    limit_period_from(&j, map.degree(), n, s_max)
}

/// The balanced-approximation matrix [`limit_period_metric`] reads its
/// coefficients from.
pub fn limit_period_matrix(map: &ExpandingMap, x0: &Real, n: usize, s_max: usize) -> Result<JacobiMatrix> {
    let _g = map.precision().install();
    let d = map.degree();
    let dn = checked_pow(d, n)?;
    let needed = (s_max + 1) * dn * dn + 1;
    let mut depth = 0;
    while checked_pow(d, depth)? < needed {
        depth += 1;
    }
    depth += 1;
    map.limits().check_size(checked_pow(d, depth)?)?;
    balanced_jacobi(map, x0, depth, needed)
}
