//! Jacobi matrices, their orthonormal polynomials and spectral measures.

use std::io::{Read, Write};

use num_traits::{Num, One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::poly::RealPolynomial;
use crate::precision::PrecisionConfig;
use crate::real::{cabs, working_bits, Complex, Real};
use crate::transfer::DiscreteMeasure;

/// Symmetric tridiagonal matrix with diagonal `q_0..q_{N-1}` and positive
/// off-diagonal `p_1..p_{N-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobiMatrix {
    q: Vec<Real>,
    p: Vec<Real>,
}

/// First-kind `P_k` or second-kind `Q_k` orthonormal polynomials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    First,
    Second,
}

impl JacobiMatrix {
    pub fn new(q: Vec<Real>, p: Vec<Real>) -> Result<Self> {
        if q.is_empty() || p.len() + 1 != q.len() {
            return Err(Error::InvalidInput(format!(
                "{} diagonal vs {} off-diagonal entries",
                q.len(),
                p.len()
            )));
        }
        if let Some(k) = p.iter().position(|x| !(*x > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "p_{} = {} is not positive",
                k + 1,
                p[k]
            )));
        }
        if let Some(x) = q.iter().chain(&p).find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite entry {x}")));
        }
        Ok(JacobiMatrix { q, p })
    }

    pub fn from_f64(q: &[f64], p: &[f64]) -> Result<Self> {
        Self::new(
            q.iter().map(|&x| Real::from_f64(x)).collect(),
            p.iter().map(|&x| Real::from_f64(x)).collect(),
        )
    }

    pub fn size(&self) -> usize {
        self.q.len()
    }

    /// Diagonal `q_0..q_{N-1}`.
    pub fn q(&self) -> &[Real] {
        &self.q
    }

    /// Off-diagonal; `p()[k-1]` is `p_k`.
    pub fn p(&self) -> &[Real] {
        &self.p
    }

    /// `p_k` for `1 <= k < N`.
    pub fn p_at(&self, k: usize) -> &Real {
        &self.p[k - 1]
    }

    /// Leading principal `n x n` block.
    pub fn truncated(&self, n: usize) -> Result<JacobiMatrix> {
        if n == 0 || n > self.size() {
            return Err(Error::OutOfRange {
                what: "truncation size".into(),
                value: n as f64,
                bound: self.size() as f64,
            });
        }
        Ok(JacobiMatrix {
            q: self.q[..n].to_vec(),
            p: self.p[..n - 1].to_vec(),
        })
    }

    /// The `s`-th diagonal `d x d` block; the connector `p_{sd}` is excluded.
    pub fn block(&self, s: usize, d: usize) -> Result<JacobiMatrix> {
        if d == 0 || (s + 1) * d > self.size() {
            return Err(Error::OutOfRange {
                what: "block end (s+1)d".into(),
                value: ((s + 1) * d) as f64,
                bound: self.size() as f64,
            });
        }
        let start = s * d;
        Ok(JacobiMatrix {
            q: self.q[start..start + d].to_vec(),
            p: self.p[start..start + d - 1].to_vec(),
        })
    }

    pub fn to_dense(&self) -> Matrix {
        Matrix::tridiagonal(&self.q, &self.p)
    }

    /// Ascending eigenvalues (Sturm bisection plus Newton).
    pub fn eigenvalues(&self) -> Vec<Real> {
        linalg::tridiagonal_eigenvalues(&self.q, &self.p)
    }

    /// Operator 2-norm, `max |λ|`.
    pub fn operator_norm(&self) -> Real {
        linalg::tridiagonal_norm(&self.q, &self.p)
    }

    /// Operator 2-norm of `self - other` (same size).
    pub fn distance(&self, other: &JacobiMatrix) -> Result<Real> {
        if self.size() != other.size() {
            return Err(Error::InvalidInput("size mismatch".into()));
        }
        let q: Vec<Real> = self.q.iter().zip(&other.q).map(|(a, b)| a - b).collect();
        let p: Vec<Real> = self.p.iter().zip(&other.p).map(|(a, b)| a - b).collect();
        if self.size() == 1 {
            return Ok(q[0].abs());
        }
        // The difference may have zero or negative couplings; the spectrum
        // only depends on |p_k|, and zero couplings split into blocks.
        let p_abs: Vec<Real> = p.iter().map(Real::abs).collect();
        let mut best = Real::zero();
        let mut start = 0;
        for k in 0..=p_abs.len() {
            if k == p_abs.len() || p_abs[k].is_zero() {
                let qs = &q[start..=k];
                let ps = &p_abs[start..k];
                let norm = if qs.len() == 1 {
                    qs[0].abs()
                } else {
                    linalg::tridiagonal_norm(qs, ps)
                };
                best = best.max_of(norm);
                start = k + 1;
            }
        }
        Ok(best)
    }

    /// Largest entrywise difference over the common leading block.
    pub fn max_coeff_diff(&self, other: &JacobiMatrix) -> Real {
        let n = self.size().min(other.size());
        let mut acc = Real::zero();
        for k in 0..n {
            acc = acc.max_of((&self.q[k] - &other.q[k]).abs());
            if k > 0 {
                acc = acc.max_of((&self.p[k - 1] - &other.p[k - 1]).abs());
            }
        }
        acc
    }

    fn coupling(&self, k: usize) -> Real {
        if k < self.size() {
            self.p[k - 1].clone()
        } else {
            Real::one()
        }
    }

    /// `[P_0(z), .., P_k(z)]` or `[Q_0(z), .., Q_k(z)]`, with `p_N := 1`.
    fn sequence<S>(&self, kind: Kind, k: usize, z: &S, lift: impl Fn(&Real) -> S) -> Result<Vec<S>>
    where
        S: Clone + Num,
    {
        if k > self.size() {
            return Err(Error::OutOfRange {
                what: "polynomial index".into(),
                value: k as f64,
                bound: self.size() as f64,
            });
        }
        let mut out: Vec<S> = Vec::with_capacity(k + 1);
        match kind {
            Kind::First => {
                out.push(S::one());
                if k >= 1 {
                    out.push((z.clone() - lift(&self.q[0])) / lift(&self.coupling(1)));
                }
            }
            Kind::Second => {
                out.push(S::zero());
                if k >= 1 {
                    out.push(S::one() / lift(&self.coupling(1)));
                }
            }
        }
        for j in 1..k {
            let next = ((z.clone() - lift(&self.q[j])) * out[j].clone() - lift(&self.p[j - 1]) * out[j - 1].clone())
                / lift(&self.coupling(j + 1));
            out.push(next);
        }
        Ok(out)
    }

    /// Values `[X_0(z), .., X_k(z)]` at a real point.
    pub fn ortho_values(&self, kind: Kind, k: usize, z: &Real) -> Result<Vec<Real>> {
        self.sequence(kind, k, z, Real::clone)
    }

    /// Values `[X_0(z), .., X_k(z)]` at a complex point.
    pub fn ortho_values_complex(&self, kind: Kind, k: usize, z: &Complex) -> Result<Vec<Complex>> {
        self.sequence(kind, k, z, |r| Complex::new(r.clone(), Real::zero()))
    }

    /// `P_k(z)` and `P_k'(z)` for k = 0..=k.
    pub fn first_kind_with_derivative(&self, k: usize, z: &Real) -> Result<(Vec<Real>, Vec<Real>)> {
        let vals = self.ortho_values(Kind::First, k, z)?;
        let mut ders = Vec::with_capacity(k + 1);
        ders.push(Real::zero());
        if k >= 1 {
            ders.push(Real::one() / self.coupling(1));
        }
        for j in 1..k {
            let next = (&vals[j] + (z - &self.q[j]) * &ders[j] - &self.p[j - 1] * &ders[j - 1]) / self.coupling(j + 1);
            ders.push(next);
        }
        Ok((vals, ders))
    }

    /// Coefficients of `P_k` (or `Q_k`) in the monomial basis.
    pub fn ortho_polynomial(&self, kind: Kind, k: usize) -> Result<RealPolynomial> {
        if k > self.size() {
            return Err(Error::OutOfRange {
                what: "polynomial index".into(),
                value: k as f64,
                bound: self.size() as f64,
            });
        }
        let z = RealPolynomial::monomial_z();
        let constant = |c: Real| RealPolynomial::constant(c);
        let mut seq: Vec<Option<RealPolynomial>> = Vec::with_capacity(k + 1);
        // `None` encodes the zero polynomial.
        match kind {
            Kind::First => {
                seq.push(Some(constant(Real::one())));
                if k >= 1 {
                    let lin = z.add(&constant(-self.q[0].clone()));
                    seq.push(Some(lin.scale(&self.coupling(1).recip())));
                }
            }
            Kind::Second => {
                seq.push(None);
                if k >= 1 {
                    seq.push(Some(constant(self.coupling(1).recip())));
                }
            }
        }
        for j in 1..k {
            let shift = z.add(&constant(-self.q[j].clone()));
            let mut next = shift.mul(seq[j].as_ref().expect("nonzero for j >= 1"));
            if let Some(prev) = &seq[j - 1] {
                next = next.add(&prev.scale(&(-self.p[j - 1].clone())));
            }
            seq.push(Some(next.scale(&self.coupling(j + 1).recip())));
        }
        Ok(seq.pop().flatten().unwrap_or_else(|| constant(Real::zero())))
    }

    /// Spectral measure: eigenvalues with squared first eigenvector components.
    pub fn spectral_measure(&self) -> Result<DiscreteMeasure> {
        let lambdas = self.eigenvalues();
        let n = self.size();
        let mut weights = Vec::with_capacity(n);
        for lam in &lambdas {
            let vals = self.ortho_values(Kind::First, n - 1, lam)?;
            let norm2: Real = vals.iter().map(Real::square).sum();
            weights.push(norm2.recip());
        }
        DiscreteMeasure::new_finite(lambdas, weights)
    }

    /// CSV with header `index,q,p`; row k carries `p_{k+1}` (empty on the last row).
    pub fn write_csv<W: Write>(&self, out: W, digits: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidInput(format!("csv write: {e}"));
        w.write_record(["index", "q", "p"]).map_err(io)?;
        for k in 0..self.size() {
            let p = self.p.get(k).map(|x| x.to_decimal(digits)).unwrap_or_default();
            w.write_record([k.to_string(), self.q[k].to_decimal(digits), p])
                .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidInput(format!("csv flush: {e}")))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let headers = r
            .headers()
            .map_err(|e| Error::Parse(format!("csv header: {e}")))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["index", "q", "p"] {
            return Err(Error::Parse(format!("unexpected header {headers:?}")));
        }
        let mut q = Vec::new();
        let mut p = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("csv record: {e}")))?;
            let index: usize = rec[0]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("index {:?}: {e}", &rec[0])))?;
            if index != row {
                return Err(Error::Parse(format!("index {index} at row {row}")));
            }
            q.push(Real::parse(&rec[1])?);
            if !rec[2].trim().is_empty() {
                p.push(Real::parse(&rec[2])?);
            }
        }
        Self::new(q, p)
    }
}

/// Resolvent `⟨0|(z − J)⁻¹|0⟩` by backward continued fraction.
pub fn resolvent(j: &JacobiMatrix, z: &Complex) -> Result<Complex> {
    let tol = PrecisionConfig::for_bits(working_bits()).collision_tol();
    if linalg::near_spectrum(j.q(), j.p(), z, &tol) {
        return Err(Error::SpectrumCollision {
            z: format!("{}{:+}i", z.re.to_f64(), z.im.to_f64()),
            tol: tol.to_f64(),
        });
    }
    let lift = |r: &Real| Complex::new(r.clone(), Real::zero());
    let n = j.size();
    let mut g = z - lift(&j.q[n - 1]);
    let guard = &tol * &(cabs(z) + 1.0);
    let mut stable = cabs(&g) > guard;
    for k in (0..n - 1).rev() {
        if !stable {
            break;
        }
        g = z - lift(&j.q[k]) - lift(&j.p[k].square()) / &g;
        stable = cabs(&g) > guard;
    }
    if stable {
        return Ok(Complex::new(Real::one(), Real::zero()) / g);
    }
    // A tail block has an eigenvalue at z: use Q_N / P_N instead.
    let pn = j.ortho_values_complex(Kind::First, n, z)?;
    let qn = j.ortho_values_complex(Kind::Second, n, z)?;
    Ok(qn[n].clone() / pn[n].clone())
}

/// `|p_k (P_{k-1} Q_k − Q_{k-1} P_k)(z) − 1|` for `1 <= k < N`.
pub fn wronskian_residual(j: &JacobiMatrix, k: usize, z: &Real) -> Result<Real> {
    if k == 0 || k >= j.size() {
        return Err(Error::OutOfRange {
            what: "Wronskian index".into(),
            value: k as f64,
            bound: (j.size() - 1) as f64,
        });
    }
    let p = j.ortho_values(Kind::First, k, z)?;
    let q = j.ortho_values(Kind::Second, k, z)?;
    let w = j.p_at(k) * &(&p[k - 1] * &q[k] - &q[k - 1] * &p[k]);
    Ok((w - 1.0).abs())
}

/// Degree threshold for [`gauss_quadrature`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exactness {
    /// `deg R < 2k`.
    Classical,
    /// `deg R < k`.
    Strict,
}

/// k-point Gauss rule of a Jacobi matrix.
#[derive(Debug, Clone)]
pub struct GaussRule {
    /// Zeros of `P_k`.
    pub nodes: Vec<Real>,
    /// `Q_k / P_k'` at the nodes.
    pub weights: Vec<Real>,
    /// `1 / Σ_{i<k} P_i²` at the nodes (eigenvector form).
    pub eigen_weights: Vec<Real>,
}

impl GaussRule {
    pub fn new(j: &JacobiMatrix, k: usize) -> Result<GaussRule> {
        let block = j.truncated(k)?;
        let nodes = block.eigenvalues();
        let mut weights = Vec::with_capacity(k);
        let mut eigen_weights = Vec::with_capacity(k);
        for x in &nodes {
            let (vals, ders) = j.first_kind_with_derivative(k, x)?;
            let second = j.ortho_values(Kind::Second, k, x)?;
            weights.push(&second[k] / &ders[k]);
            let norm2: Real = vals[..k].iter().map(Real::square).sum();
            eigen_weights.push(norm2.recip());
        }
        Ok(GaussRule {
            nodes,
            weights,
            eigen_weights,
        })
    }

    pub fn apply(&self, r: &RealPolynomial) -> Real {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| r.eval(x) * w)
            .sum()
    }

    /// Largest difference between the two weight constructions.
    pub fn weight_discrepancy(&self) -> Real {
        self.weights
            .iter()
            .zip(&self.eigen_weights)
            .fold(Real::zero(), |acc, (a, b)| acc.max_of((a - b).abs()))
    }
}

/// `∫ R dσ` by the k-point Gauss rule of `J`, refusing degrees beyond `rule`.
pub fn gauss_quadrature(j: &JacobiMatrix, k: usize, r: &RealPolynomial, rule: Exactness) -> Result<Real> {
    let limit = match rule {
        Exactness::Classical => 2 * k,
        Exactness::Strict => k,
    };
    if r.degree() >= limit {
        return Err(Error::DegreeTooHigh {
            degree: r.degree(),
            nodes: k,
        });
    }
    Ok(GaussRule::new(j, k)?.apply(r))
}

/// Lanczos on `diag(nodes)` from `√w`: the Jacobi matrix of the measure.
///
/// Orthogonality is monitored with Simon's ω-recurrence; whenever the
/// estimate passes `residual_tol` the new vector is reorthogonalized
/// against all previous ones (twice), as is the following vector.
pub fn jacobi_from_measure(m: &DiscreteMeasure, n: usize, cfg: &PrecisionConfig) -> Result<JacobiMatrix> {
    let _g = cfg.install();
    let bits = cfg.significand_bits;
    let atoms = m.len();
    if n == 0 || n > atoms {
        return Err(Error::OutOfRange {
            what: "matrix size".into(),
            value: n as f64,
            bound: atoms as f64,
        });
    }
    let x: Vec<Real> = m.nodes().iter().map(|v| v.to_prec(bits)).collect();
    let mass: Real = m.weights().iter().map(|w| w.to_prec(bits)).sum();
    let mut v: Vec<Real> = m.weights().iter().map(|w| (w.to_prec(bits) / &mass).sqrt()).collect();
    let anorm = x.iter().fold(0.0f64, |acc, t| acc.max(t.to_f64().abs())).max(1e-300);
    let eps = 2f64.powi(-(bits as i32)).max(1e-300);
    let threshold = cfg.residual_tol().to_f64().max(1e-290);
    let tol = cfg.residual_tol();
    let breakdown = cfg.collision_tol() * Real::from_f64(anorm);

    let mut basis: Vec<Vec<Real>> = Vec::with_capacity(n);
    let mut alpha: Vec<Real> = Vec::with_capacity(n);
    let mut beta: Vec<Real> = Vec::with_capacity(n);
    let mut alpha_f: Vec<f64> = Vec::with_capacity(n);
    // beta_f[k] couples v_{k-1} and v_k; beta_f[0] = 0.
    let mut beta_f: Vec<f64> = vec![0.0];
    let mut omega_prev: Vec<f64> = Vec::new();
    let mut omega: Vec<f64> = vec![1.0];
    let mut force_next = false;

    for k in 0..n {
        let mut w: Vec<Real> = x.iter().zip(&v).map(|(a, b)| a * b).collect();
        if k > 0 {
            let b = &beta[k - 1];
            for (wi, pi) in w.iter_mut().zip(&basis[k - 1]) {
                *wi -= pi * b;
            }
        }
        let a = Real::dot(&w, &v);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= vi * &a;
        }
        alpha_f.push(a.to_f64());
        alpha.push(a);
        basis.push(v);
        if k + 1 == n {
            break;
        }
        let mut b = Real::dot(&w, &w).sqrt();
        let bf = b.to_f64().max(1e-300);

        // ω_{k+1}[j] ≈ ⟨v_{k+1}, v_j⟩ for j <= k.
        let mut omega_next = vec![0.0f64; k + 2];
        for j in 0..k {
            let mut t = beta_f[j + 1] * omega[j + 1] + (alpha_f[j] - alpha_f[k]) * omega[j];
            if j > 0 {
                t += beta_f[j] * omega[j - 1];
            }
            if j < omega_prev.len() {
                t -= beta_f[k] * omega_prev[j];
            }
            t += t.signum() * eps * anorm * 2.0;
            omega_next[j] = t / bf;
        }
        omega_next[k] = eps * (atoms as f64).sqrt();
        omega_next[k + 1] = 1.0;
        let worst = omega_next[..=k].iter().fold(0.0f64, |acc, t| acc.max(t.abs()));

        if force_next || worst > threshold {
            let mut loss = Real::zero();
            for pass in 0..2 {
                for prev in &basis {
                    let c = Real::dot(prev, &w);
                    if pass == 1 {
                        loss = loss.max_of(c.abs() / &b);
                    }
                    for (wi, pi) in w.iter_mut().zip(prev) {
                        *wi -= pi * &c;
                    }
                }
                b = Real::dot(&w, &w).sqrt();
            }
            if loss > tol {
                return Err(Error::PrecisionExhausted {
                    bits,
                    detail: format!(
                        "orthogonality loss {:e} at step {}",
                        loss.to_f64(),
                        k + 1
                    ),
                });
            }
            for o in omega_next[..=k].iter_mut() {
                *o = eps;
            }
            force_next = !force_next;
        }
        if b <= breakdown {
            return Err(Error::PrecisionExhausted {
                bits,
                detail: format!("Lanczos breakdown at step {} (p = {:e})", k + 1, b.to_f64()),
            });
        }
        v = w.iter().map(|wi| wi / &b).collect();
        beta_f.push(b.to_f64());
        beta.push(b);
        omega_prev = std::mem::replace(&mut omega, omega_next);
    }
    JacobiMatrix::new(alpha, beta)
}

/// [`jacobi_from_measure`] retried at doubled precision on exhaustion.
pub fn jacobi_from_measure_auto(m: &DiscreteMeasure, n: usize, cfg: &PrecisionConfig) -> Result<JacobiMatrix> {
    let mut current = *cfg;
    loop {
        match jacobi_from_measure(m, n, &current) {
            Err(Error::PrecisionExhausted { bits, detail }) => match current.raised() {
                Some(next) => current = next,
                None => return Err(Error::PrecisionExhausted { bits, detail }),
            },
            other => return other,
        }
    }
}

/// Outcome of comparing `|p̃_s − p_s|` with `ε/(1−ε)·‖J‖`.
#[derive(Debug, Clone)]
pub struct DensityPerturbationReport {
    pub lhs: Real,
    pub rhs: Real,
    pub holds: bool,
}

/// Perturbs `m` by the density `f` and compares the s-th off-diagonal
/// coefficients of the full Jacobi matrices.
pub fn density_perturbation_check(
    m: &DiscreteMeasure,
    f_values: &[Real],
    eps: &Real,
    s: usize,
    normalize: bool,
    cfg: &PrecisionConfig,
) -> Result<DensityPerturbationReport> {
    let _g = cfg.install();
    if !(*eps > 0.0 && *eps < 1.0) {
        return Err(Error::InvalidInput(format!("eps = {eps} not in (0, 1)")));
    }
    let one_minus = Real::one() - eps;
    let lo = one_minus.clone();
    let hi = one_minus.recip();
    let slack = cfg.residual_tol();
    if let Some(f) = f_values
        .iter()
        .find(|f| **f < &lo - &slack || **f > &hi + &slack)
    {
        return Err(Error::InvalidInput(format!("density value {f} outside [1-eps, 1/(1-eps)]")));
    }
    let n = m.len();
    if s == 0 || s >= n {
        return Err(Error::OutOfRange {
            what: "coefficient index s".into(),
            value: s as f64,
            bound: (n - 1) as f64,
        });
    }
    let j = jacobi_from_measure_auto(m, n, cfg)?;
    let jt = jacobi_from_measure_auto(&m.reweighted(f_values, normalize)?, n, cfg)?;
    let lhs = (jt.p_at(s) - j.p_at(s)).abs();
    let rhs = eps / &one_minus * j.operator_norm();
    let holds = lhs <= rhs;
    Ok(DensityPerturbationReport { lhs, rhs, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ExpandingMap;
    use crate::transfer::balanced_measure_approx;

    fn tight() -> Real {
        Real::exp2(-200)
    }

    fn fiber_matrix(c: f64, n: usize) -> JacobiMatrix {
        let t = ExpandingMap::from_coeffs(&[-c, 0.0, 1.0], PrecisionConfig::default(), false).unwrap();
        let _g = t.precision().install();
        let m = balanced_measure_approx(&t, &Real::zero(), n).unwrap();
        jacobi_from_measure(&m, m.len(), t.precision()).unwrap()
    }

    #[test]
    fn two_atom_measure() {
        let s3 = Real::from_i64(3).sqrt();
        let m = DiscreteMeasure::new(vec![-s3.clone(), s3.clone()], vec![Real::ratio(1, 2), Real::ratio(1, 2)]).unwrap();
        let j = jacobi_from_measure(&m, 2, &PrecisionConfig::default()).unwrap();
        assert!(j.q().iter().all(|q| q.abs() < tight()));
        assert!((j.p_at(1) - &s3).abs() < tight());
    }

    #[test]
    fn four_atom_fiber() {
        let j = fiber_matrix(3.0, 2);
        let expect = [Real::from_i64(3).sqrt(), Real::one(), Real::from_i64(2).sqrt()];
        for (k, e) in expect.iter().enumerate() {
            assert!((j.p_at(k + 1) - e).abs() < tight(), "p_{}", k + 1);
        }
        assert!(j.q().iter().all(|q| q.abs() < tight()));
        let z = Real::from_f64(0.37);
        let p1 = j.ortho_values(Kind::First, 1, &z).unwrap();
        assert!((&p1[1] - &(&z / &Real::from_i64(3).sqrt())).abs() < tight());
        let q1 = j.ortho_values(Kind::Second, 1, &z).unwrap();
        assert!((&q1[1] - &Real::from_i64(3).sqrt().recip()).abs() < tight());
        assert_eq!(p1[0], Real::one());
    }

    #[test]
    fn resolvent_examples() {
        let j = JacobiMatrix::new(vec![Real::zero(), Real::zero()], vec![Real::from_i64(3).sqrt()]).unwrap();
        let r = resolvent(&j, &Complex::new(Real::from_i64(2), Real::zero())).unwrap();
        assert!((&r.re - 2.0).abs() < tight() && r.im.abs() < tight());
        let r = resolvent(&j, &Complex::new(Real::zero(), Real::from_i64(2))).unwrap();
        assert!(r.re.abs() < tight());
        assert!((&r.im + &Real::ratio(2, 7)).abs() < tight());
        let big = Real::from_f64(1e6);
        let r = resolvent(&j, &Complex::new(big.clone(), Real::zero())).unwrap();
        assert!(((&r.re * &big) - 1.0).abs() < 1e-11);
        let hit = resolvent(&j, &Complex::new(Real::from_i64(3).sqrt(), Real::zero()));
        assert!(matches!(hit, Err(Error::SpectrumCollision { .. })));
    }

    #[test]
    fn resolvent_falls_back_when_tail_block_resonates() {
        // The tail block [q_1] = [0.5] has its eigenvalue at z = 0.5.
        let j = JacobiMatrix::from_f64(&[0.0, 0.5], &[1.0]).unwrap();
        let z = Complex::new(Real::from_f64(0.5), Real::zero());
        let r = resolvent(&j, &z).unwrap();
        // (z - q1)/((z - q0)(z - q1) - p1²) = 0.
        assert!(cabs(&r) < tight());
    }

    #[test]
    fn blocks_and_truncation() {
        let j = fiber_matrix(3.0, 2);
        let b = j.block(1, 2).unwrap();
        assert_eq!(b.q(), &j.q()[2..4]);
        assert_eq!(b.p_at(1), j.p_at(3));
        assert_eq!(j.block(0, 2).unwrap(), j.truncated(2).unwrap());
        assert!(matches!(j.block(2, 2), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn wronskian_on_fiber() {
        let j = fiber_matrix(3.0, 2);
        for k in 1..4 {
            let r = wronskian_residual(&j, k, &Real::zero()).unwrap();
            assert!(r < tight(), "k = {k}");
        }
    }

    #[test]
    fn quadrature_examples() {
        let j = fiber_matrix(3.0, 2);
        let one = RealPolynomial::constant(Real::one());
        let v = gauss_quadrature(&j, 4, &one, Exactness::Classical).unwrap();
        assert!((v - 1.0).abs() < tight());
        let y2 = RealPolynomial::from_f64(&[0.0, 0.0, 1.0]).unwrap();
        let v = gauss_quadrature(&j, 4, &y2, Exactness::Classical).unwrap();
        assert!((v - 3.0).abs() < tight());
        let y6 = RealPolynomial::from_f64(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let v = gauss_quadrature(&j, 4, &y6, Exactness::Classical).unwrap();
        assert!((v - 54.0).abs() < Real::exp2(-190));
        assert!(matches!(
            gauss_quadrature(&j, 4, &y6, Exactness::Strict),
            Err(Error::DegreeTooHigh { .. })
        ));
        let y8 = RealPolynomial::from_f64(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(gauss_quadrature(&j, 4, &y8, Exactness::Classical).is_err());
        let rule = GaussRule::new(&j, 3).unwrap();
        assert!(rule.weight_discrepancy() < PrecisionConfig::default().residual_tol());
        assert!(rule.weights.iter().all(|w| *w > 0.0));
    }

    #[test]
    fn ortho_polynomial_matches_recurrence() {
        let j = JacobiMatrix::from_f64(&[0.1, -0.3, 0.2, 0.0], &[0.9, 1.1, 0.7]).unwrap();
        let z = Real::from_f64(0.77);
        for kind in [Kind::First, Kind::Second] {
            let vals = j.ortho_values(kind, 4, &z).unwrap();
            for k in 0..=4 {
                let poly = j.ortho_polynomial(kind, k).unwrap();
                assert!((poly.eval(&z) - &vals[k]).abs() < tight(), "{kind:?} {k}");
            }
        }
    }

    #[test]
    fn round_trip_through_spectral_measure() {
        let j = JacobiMatrix::from_f64(&[0.1, -0.3, 0.2, 0.0, 0.4], &[0.9, 1.1, 0.7, 0.6]).unwrap();
        let m = j.spectral_measure().unwrap();
        let back = jacobi_from_measure(&m, 5, &PrecisionConfig::default()).unwrap();
        assert!(j.max_coeff_diff(&back) < Real::exp2(-220));
    }

    #[test]
    fn density_perturbation_identity() {
        let t = ExpandingMap::from_coeffs(&[-3.0, 0.0, 1.0], PrecisionConfig::default(), false).unwrap();
        let _g = t.precision().install();
        let m = balanced_measure_approx(&t, &Real::zero(), 2).unwrap();
        let ones = vec![Real::one(); 4];
        let r = density_perturbation_check(&m, &ones, &Real::from_f64(0.1), 2, true, t.precision()).unwrap();
        assert!(r.lhs.abs() < tight());
        assert!(r.holds);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let j = fiber_matrix(3.0, 3);
        let mut buf = Vec::new();
        j.write_csv(&mut buf, 77).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index,q,p\n"));
        assert!(text.trim_end().ends_with(','));
        let back = JacobiMatrix::read_csv(&buf[..]).unwrap();
        let mut again = Vec::new();
        back.write_csv(&mut again, 77).unwrap();
        assert_eq!(buf, again);
        let json = serde_json::to_string(&j).unwrap();
        let from_json: JacobiMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(from_json, j);
    }

    #[test]
    fn rejects_nonpositive_coupling() {
        assert!(JacobiMatrix::from_f64(&[0.0, 0.0], &[-1.0]).is_err());
        assert!(JacobiMatrix::from_f64(&[0.0, 0.0], &[0.0]).is_err());
    }
}
