//! Real polynomials in ascending coefficient order, third-order jets and
//! real-root isolation.

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::real::{Complex, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct RealPolynomial {
    coeffs: Vec<Real>,
}

/// Value and first three derivatives of a function at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet3 {
    pub value: Real,
    pub d1: Real,
    pub d2: Real,
    pub d3: Real,
}

impl Jet3 {
    /// Jet of the identity map at `y`.
    pub fn identity(y: &Real) -> Jet3 {
        Jet3 {
            value: y.clone(),
            d1: Real::from_i64(1),
            d2: Real::zero(),
            d3: Real::zero(),
        }
    }

    /// Jet of `f ∘ g` from the jet of `f` taken at `g`'s value and the jet of `g`.
    pub fn compose(outer: &Jet3, inner: &Jet3) -> Jet3 {
        let g1 = &inner.d1;
        let g1sq = g1.square();
        let d1 = &outer.d1 * g1;
        let d2 = &outer.d2 * &g1sq + &outer.d1 * &inner.d2;
        let d3 = &outer.d3 * &(&g1sq * g1)
            + (&outer.d2 * g1) * &inner.d2 * 3.0
            + &outer.d1 * &inner.d3;
        Jet3 {
            value: outer.value.clone(),
            d1,
            d2,
            d3,
        }
    }

    /// Schwarzian derivative f'''/f' − 3/2 (f''/f')².
    pub fn schwarzian(&self) -> Real {
        let ratio = &self.d2 / &self.d1;
        &self.d3 / &self.d1 - ratio.square() * 1.5
    }
}

impl RealPolynomial {
    /// Trailing zero coefficients are dropped; the zero polynomial is rejected.
    pub fn new(mut coeffs: Vec<Real>) -> Result<Self> {
        while coeffs.last().is_some_and(Real::is_zero) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            return Err(Error::InvalidInput("zero polynomial".into()));
        }
        if let Some(bad) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coefficient {bad}")));
        }
        Ok(RealPolynomial { coeffs })
    }

    pub fn from_f64(coeffs: &[f64]) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Self::new(coeffs.iter().map(|&c| Real::from_f64(c)).collect())
    }

    pub fn constant(c: Real) -> Self {
        RealPolynomial { coeffs: vec![c] }
    }

    /// The polynomial `z`.
    pub fn monomial_z() -> Self {
        RealPolynomial {
            coeffs: vec![Real::zero(), Real::from_i64(1)],
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[Real] {
        &self.coeffs
    }

    pub fn leading(&self) -> &Real {
        self.coeffs.last().expect("nonempty")
    }

    pub fn eval(&self, z: &Real) -> Real {
        let mut acc = Real::zero().to_prec(z.prec().max(self.leading().prec()));
        for c in self.coeffs.iter().rev() {
            acc *= z;
            acc += c;
        }
        acc
    }

    pub fn eval_complex(&self, z: &Complex) -> Complex {
        let mut acc = Complex::new(Real::zero(), Real::zero());
        for c in self.coeffs.iter().rev() {
            acc = acc * z.clone() + Complex::new(c.clone(), Real::zero());
        }
        acc
    }

    /// Value and first derivative by a two-row Horner scheme.
    pub fn eval_d1(&self, z: &Real) -> (Real, Real) {
        let mut v = Real::zero();
        let mut d = Real::zero();
        for c in self.coeffs.iter().rev() {
            d *= z;
            d += &v;
            v *= z;
            v += c;
        }
        (v, d)
    }

    /// Value and derivatives up to third order by Horner's scheme.
    pub fn jet(&self, z: &Real) -> Jet3 {
        let mut v = Real::zero();
        let mut d1 = Real::zero();
        let mut d2 = Real::zero();
        let mut d3 = Real::zero();
        for c in self.coeffs.iter().rev() {
            d3 *= z;
            d3 += &d2;
            d2 *= z;
            d2 += &d1;
            d1 *= z;
            d1 += &v;
            v *= z;
            v += c;
        }
        Jet3 {
            value: v,
            d1,
            d2: d2 * 2.0,
            d3: d3 * 6.0,
        }
    }

    /// `(p(z), p'(z), …)` truncated after the derivative of order `order ≤ 3`.
    pub fn eval_with_derivatives(&self, z: &Real, order: usize) -> Vec<Real> {
        assert!(order <= 3, "derivative order {order} > 3");
        let j = self.jet(z);
        let mut out = vec![j.value, j.d1, j.d2, j.d3];
        out.truncate(order + 1);
        out
    }

    pub fn derivative(&self) -> RealPolynomial {
        if self.degree() == 0 {
            return RealPolynomial::constant(Real::zero());
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| c * (k as f64))
            .collect();
        RealPolynomial { coeffs }
    }

    pub fn add(&self, other: &RealPolynomial) -> RealPolynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n)
            .map(|k| match (self.coeffs.get(k), other.coeffs.get(k)) {
                (Some(a), Some(b)) => a + b,
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b.clone(),
                (None, None) => unreachable!(),
            })
            .collect();
        RealPolynomial::new(coeffs).unwrap_or_else(|_| RealPolynomial::constant(Real::zero()))
    }

    pub fn scale(&self, s: &Real) -> RealPolynomial {
        RealPolynomial {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn mul(&self, other: &RealPolynomial) -> RealPolynomial {
        let mut coeffs = vec![Real::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        RealPolynomial { coeffs }
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &RealPolynomial) -> RealPolynomial {
        let mut acc = RealPolynomial::constant(Real::zero());
        for c in self.coeffs.iter().rev() {
            acc = acc.mul(inner).add(&RealPolynomial::constant(c.clone()));
        }
        acc
    }

    /// Cauchy bound: every root of `self − target` has modulus below it.
    pub fn root_bound(&self, target: &Real) -> Real {
        let lead = self.leading().abs();
        let mut worst = Real::zero();
        for (k, c) in self.coeffs[..self.degree()].iter().enumerate() {
            let a = if k == 0 { c - target } else { c.clone() };
            worst = worst.max_of(a.abs() / &lead);
        }
        worst + 1.0
    }

    /// All simple real roots in ascending order.
    pub fn real_roots(&self) -> Vec<Real> {
        self.real_solutions(&Real::zero())
    }

    /// All real solutions of `self(y) = target` that are sign changes, ascending.
    pub fn real_solutions(&self, target: &Real) -> Vec<Real> {
        match self.degree() {
            0 => Vec::new(),
            1 => vec![(target - &self.coeffs[0]) / &self.coeffs[1]],
            _ => {
                let critical = self.derivative().real_roots();
                self.solutions_between_critical(target, &critical)
            }
        }
    }

    /// Real solutions of `self(y) = target`, given the ascending real
    /// critical points that split the line into monotone pieces.
    pub fn solutions_between_critical(&self, target: &Real, critical: &[Real]) -> Vec<Real> {
        let bound = self.root_bound(target);
        let mut breaks = Vec::with_capacity(critical.len() + 2);
        breaks.push(-bound.clone());
        breaks.extend(critical.iter().cloned());
        breaks.push(bound);
        let values: Vec<Real> = breaks.iter().map(|b| self.eval(b) - target).collect();
        let mut roots = Vec::new();
        for k in 0..breaks.len() - 1 {
            let (sa, sb) = (values[k].signum_i(), values[k + 1].signum_i());
            if sa == 0 && k > 0 {
                // Root sitting exactly on a critical point.
                roots.push(breaks[k].clone());
            } else if sa * sb < 0 {
                roots.push(solve_bracketed(self, target, &breaks[k], &breaks[k + 1]));
            }
        }
        roots
    }
}

/// Root of `p(y) = target` on `[lo, hi]`, where `p − target` changes sign.
/// Safeguarded Newton iteration: Newton steps that leave the bracket or stall
/// are replaced by bisection.
pub fn solve_bracketed(p: &RealPolynomial, target: &Real, lo: &Real, hi: &Real) -> Real {
    let f_lo = p.eval(lo) - target;
    if f_lo.is_zero() {
        return lo.clone();
    }
    let f_hi = p.eval(hi) - target;
    if f_hi.is_zero() {
        return hi.clone();
    }
    // Keep f(neg) < 0 < f(pos).
    let (mut neg, mut pos) = if f_lo.is_sign_negative() {
        (lo.clone(), hi.clone())
    } else {
        (hi.clone(), lo.clone())
    };
    let bits = lo.prec().max(hi.prec());
    let tol = Real::exp2(4 - bits as i32);
    let mut y = (&neg + &pos) * 0.5;
    let mut last_f = None::<Real>;
    for _ in 0..(4 * bits as usize + 64) {
        let (v, dv) = p.eval_d1(&y);
        let fv = v - target;
        if fv.is_zero() {
            return y;
        }
        if fv.is_sign_negative() {
            neg = y.clone();
        } else {
            pos = y.clone();
        }
        let scale = y.abs().max_of(Real::from_i64(1));
        let width = (&pos - &neg).abs();
        let stalled = last_f
            .as_ref()
            .is_some_and(|prev| fv.abs() * 2.0 > prev.abs());
        last_f = Some(fv.clone());
        let newton = (!dv.is_zero() && !stalled).then(|| &y - &(&fv / &dv));
        let inside = newton.as_ref().is_some_and(|c| {
            let (a, b) = if neg < pos { (&neg, &pos) } else { (&pos, &neg) };
            c > a && c < b
        });
        if inside {
            let cand = newton.expect("checked");
            let step = (&cand - &y).abs();
            y = cand;
            if step <= &tol * &scale {
                return y;
            }
        } else {
            y = (&neg + &pos) * 0.5;
            if width <= &tol * &scale {
                return y;
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::set_working_bits;

    fn poly(c: &[f64]) -> RealPolynomial {
        RealPolynomial::from_f64(c).unwrap()
    }

    #[test]
    fn horner_derivatives_of_quadratic() {
        let _g = set_working_bits(128);
        let p = poly(&[-3.0, 0.0, 1.0]);
        let v = p.eval_with_derivatives(&Real::from_i64(2), 3);
        let got: Vec<f64> = v.iter().map(Real::to_f64).collect();
        assert_eq!(got, vec![1.0, 4.0, 2.0, 0.0]);
        let v = p.eval_with_derivatives(&Real::zero(), 1);
        assert_eq!(v.iter().map(Real::to_f64).collect::<Vec<_>>(), vec![-3.0, 0.0]);
    }

    #[test]
    fn horner_matches_symbolic_derivatives_of_quartic() {
        // Oracle: differentiate the coefficient list term by term.
        let _g = set_working_bits(128);
        let p = poly(&[6.0, 0.0, -6.0, 0.0, 1.0]);
        let mut sym = p.clone();
        let z = Real::from_i64(1);
        let horner = p.eval_with_derivatives(&z, 3);
        for (k, h) in horner.iter().enumerate() {
            assert_eq!(h, &sym.eval(&z), "order {k}");
            sym = sym.derivative();
        }
        let got: Vec<f64> = horner.iter().map(Real::to_f64).collect();
        assert_eq!(got, vec![1.0, -8.0, 0.0, 24.0]);
    }

    #[test]
    fn composition_expands_iterate() {
        let _g = set_working_bits(128);
        let t = poly(&[-3.0, 0.0, 1.0]);
        let t2 = t.compose(&t);
        assert_eq!(t2, poly(&[6.0, 0.0, -6.0, 0.0, 1.0]));
        let c = poly(&[-2.0, 0.0, 1.0]);
        assert_eq!(c.compose(&c), poly(&[2.0, 0.0, -4.0, 0.0, 1.0]));
    }

    #[test]
    fn jet_composition_matches_expanded_iterate() {
        let _g = set_working_bits(192);
        let t = poly(&[0.5, -5.0, 0.0, 1.0]);
        let t2 = t.compose(&t);
        let y = Real::from_f64(0.37);
        let inner = t.jet(&y);
        let outer = t.jet(&inner.value);
        let composed = Jet3::compose(&outer, &inner);
        let direct = t2.jet(&y);
        for (a, b) in [
            (&composed.value, &direct.value),
            (&composed.d1, &direct.d1),
            (&composed.d2, &direct.d2),
            (&composed.d3, &direct.d3),
        ] {
            assert!((a - b).abs().to_f64() < 1e-45, "{a} vs {b}");
        }
    }

    #[test]
    fn real_roots_of_chebyshev_like_quartic() {
        let _g = set_working_bits(256);
        let p = poly(&[6.0, 0.0, -6.0, 0.0, 1.0]);
        let roots = p.real_roots();
        assert_eq!(roots.len(), 4);
        let s3 = Real::from_i64(3).sqrt();
        let expect = [
            -(Real::from_i64(3) + &s3).sqrt(),
            -(Real::from_i64(3) - &s3).sqrt(),
            (Real::from_i64(3) - &s3).sqrt(),
            (Real::from_i64(3) + &s3).sqrt(),
        ];
        for (r, e) in roots.iter().zip(&expect) {
            assert!((r - e).abs() < Real::exp2(-240), "{r} vs {e}");
        }
    }

    #[test]
    fn complex_eval_agrees_with_real_axis() {
        let _g = set_working_bits(128);
        let p = poly(&[1.0, -2.0, 0.5, 3.0]);
        let z = Real::from_f64(0.75);
        let zc = Complex::new(z.clone(), Real::zero());
        assert_eq!(p.eval_complex(&zc).re, p.eval(&z));
    }
}
