//! Symmetric tridiagonal eigenvalues, shifted complex solves and small dense
//! matrices over [`Real`].

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::precision::PrecisionConfig;
use crate::real::{cabs, working_bits, Complex, Real};

/// Number of eigenvalues strictly below `x` of the tridiagonal matrix with
/// diagonal `q` and off-diagonal `p` (`p[k-1]` couples rows `k-1` and `k`).
pub fn sturm_count(q: &[Real], p2: &[Real], x: &Real) -> usize {
    let tiny = Real::epsilon() * Real::epsilon();
    let mut count = 0;
    let mut d = &q[0] - x;
    for k in 0..q.len() {
        if k > 0 {
            d = &q[k] - x - &p2[k - 1] / &d;
        }
        if d.is_zero() {
            d = -tiny.clone();
        }
        if d.is_sign_negative() {
            count += 1;
        }
    }
    count
}

fn gershgorin(q: &[Real], p: &[Real]) -> (Real, Real) {
    let n = q.len();
    let mut lo = q[0].clone();
    let mut hi = q[0].clone();
    for k in 0..n {
        let mut r = Real::zero();
        if k > 0 {
            r += p[k - 1].abs();
        }
        if k + 1 < n {
            r += p[k].abs();
        }
        lo = lo.min_of(&q[k] - &r);
        hi = hi.max_of(&q[k] + &r);
    }
    let pad = (hi.clone() - &lo).abs() * 1e-3 + 1e-3;
    (lo - &pad, hi + pad)
}

/// Characteristic polynomial `det(x - J)` and its derivative.
fn char_poly(q: &[Real], p2: &[Real], x: &Real) -> (Real, Real) {
    let mut d_prev = Real::one();
    let mut d = x - &q[0];
    let mut dd_prev = Real::zero();
    let mut dd = Real::one();
    for k in 1..q.len() {
        let shift = x - &q[k];
        let d_next = &shift * &d - &p2[k - 1] * &d_prev;
        let dd_next = &d + &shift * &dd - &p2[k - 1] * &dd_prev;
        d_prev = std::mem::replace(&mut d, d_next);
        dd_prev = std::mem::replace(&mut dd, dd_next);
    }
    (d, dd)
}

/// Eigenvalues with index in `range` (ascending order), by Sturm bisection
/// until isolated, then bracketed Newton on the characteristic polynomial.
pub fn tridiagonal_eigenvalues_in(q: &[Real], p: &[Real], range: std::ops::Range<usize>) -> Vec<Real> {
    let n = q.len();
    assert_eq!(p.len() + 1, n, "off-diagonal length");
    assert!(range.end <= n);
    let p2: Vec<Real> = p.iter().map(Real::square).collect();
    let (lo, hi) = gershgorin(q, p);
    let scale = lo.abs().max_of(hi.abs()).max_of(Real::one());
    let coarse = &scale * &Real::exp2(-40);
    let fine = &scale * &Real::exp2(6 - working_bits() as i32);
    let mut out = Vec::with_capacity(range.len());
    for i in range {
        // Invariant: count(a) <= i < count(b).
        let mut a = lo.clone();
        let mut b = hi.clone();
        let mut ca = 0;
        let mut cb = n;
        while !(ca == i && cb == i + 1 && &b - &a < coarse) {
            if &b - &a < fine {
                break;
            }
            let mid = (&a + &b) * 0.5;
            let c = sturm_count(q, &p2, &mid);
            if c > i {
                b = mid;
                cb = c;
            } else {
                a = mid;
                ca = c;
            }
        }
        let mut x = (&a + &b) * 0.5;
        if ca == i && cb == i + 1 {
            for _ in 0..200 {
                let (f, df) = char_poly(q, &p2, &x);
                if f.is_zero() {
                    break;
                }
                let newton = if df.is_zero() { None } else { Some(&x - &(&f / &df)) };
                if let Some(t) = &newton {
                    if (t - &x).abs() <= fine {
                        x = t.clone();
                        break;
                    }
                }
                let (next, converged) = match newton {
                    Some(t) if t >= a && t <= b => {
                        let step = (&t - &x).abs();
                        (t, step <= fine)
                    }
                    _ => ((&a + &b) * 0.5, false),
                };
                if sturm_count(q, &p2, &next) > i {
                    b = next.clone();
                } else {
                    a = next.clone();
                }
                x = next;
                if converged || &b - &a <= fine {
                    break;
                }
            }
        }
        out.push(x);
    }
    out
}

pub fn tridiagonal_eigenvalues(q: &[Real], p: &[Real]) -> Vec<Real> {
    tridiagonal_eigenvalues_in(q, p, 0..q.len())
}

/// Spectral norm of a symmetric tridiagonal matrix: the largest |eigenvalue|.
pub fn tridiagonal_norm(q: &[Real], p: &[Real]) -> Real {
    let n = q.len();
    let lo = tridiagonal_eigenvalues_in(q, p, 0..1).remove(0);
    let hi = tridiagonal_eigenvalues_in(q, p, n - 1..n).remove(0);
    lo.abs().max_of(hi.abs())
}

/// True when `z` lies within `tol` of an eigenvalue.
pub fn near_spectrum(q: &[Real], p: &[Real], z: &Complex, tol: &Real) -> bool {
    if z.im.abs() >= *tol {
        return false;
    }
    let p2: Vec<Real> = p.iter().map(Real::square).collect();
    sturm_count(q, &p2, &(&z.re - tol)) != sturm_count(q, &p2, &(&z.re + tol))
}

/// Solves `(z - J) x = e_col` for the symmetric tridiagonal `J`.
pub fn shifted_solve(q: &[Real], p: &[Real], z: &Complex, col: usize, tol: &Real) -> Result<Vec<Complex>> {
    let n = q.len();
    let zero = Complex::new(Real::zero(), Real::zero());
    // Forward elimination: c[k] superdiagonal multipliers, g[k] pivots.
    let mut g: Vec<Complex> = Vec::with_capacity(n);
    let mut y: Vec<Complex> = Vec::with_capacity(n);
    for k in 0..n {
        let mut piv = z - Complex::new(q[k].clone(), Real::zero());
        let mut rhs = if k == col {
            Complex::new(Real::one(), Real::zero())
        } else {
            zero.clone()
        };
        if k > 0 {
            let p2 = p[k - 1].square();
            let m = Complex::new(p2, Real::zero()) / &g[k - 1];
            piv = piv - m;
            let coupling = Complex::new(p[k - 1].clone(), Real::zero()) / &g[k - 1];
            rhs = rhs + coupling * &y[k - 1];
        }
        if cabs(&piv) < *tol {
            return Err(Error::SpectrumCollision {
                z: format!("{}{:+}i", z.re.to_f64(), z.im.to_f64()),
                tol: tol.to_f64(),
            });
        }
        g.push(piv);
        y.push(rhs);
    }
    let mut x = vec![zero; n];
    for k in (0..n).rev() {
        let mut rhs = y[k].clone();
        if k + 1 < n {
            rhs = rhs + Complex::new(p[k].clone(), Real::zero()) * &x[k + 1];
        }
        x[k] = rhs / &g[k];
    }
    Ok(x)
}

/// Selected entries `⟨rows[i] | (z - J)⁻¹ | rows[j]⟩`.
pub fn compressed_resolvent(q: &[Real], p: &[Real], z: &Complex, rows: &[usize]) -> Result<Vec<Vec<Complex>>> {
    let tol = PrecisionConfig::for_bits(working_bits()).collision_tol();
    if near_spectrum(q, p, z, &tol) {
        return Err(Error::SpectrumCollision {
            z: format!("{}{:+}i", z.re.to_f64(), z.im.to_f64()),
            tol: tol.to_f64(),
        });
    }
    let mut out = vec![Vec::with_capacity(rows.len()); rows.len()];
    for (j, &col) in rows.iter().enumerate() {
        let x = shifted_solve(q, p, z, col, &tol)?;
        for (i, &row) in rows.iter().enumerate() {
            debug_assert!(out[i].len() == j);
            out[i].push(x[row].clone());
        }
    }
    Ok(out)
}

/// Row-major dense real matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Real>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![Real::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Real::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Real) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn diagonal(values: &[Real]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = v.clone();
        }
        m
    }

    pub fn tridiagonal(q: &[Real], p: &[Real]) -> Self {
        let mut m = Self::diagonal(q);
        for (k, pk) in p.iter().enumerate() {
            m[(k, k + 1)] = pk.clone();
            m[(k + 1, k)] = pk.clone();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[Real] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Real> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    pub fn scale(&self, s: &Real) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn trace(&self) -> Real {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)].clone()).sum()
    }

    /// Largest |entry|, the residual norm used throughout.
    pub fn max_abs(&self) -> Real {
        self.data
            .iter()
            .fold(Real::zero(), |acc, x| acc.max_of(x.abs()))
    }

    /// Largest |entry| with |i - j| > 1.
    pub fn off_tridiagonal_max(&self) -> Real {
        let mut acc = Real::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if i.abs_diff(j) > 1 {
                    acc = acc.max_of(self[(i, j)].abs());
                }
            }
        }
        acc
    }

    /// `self·other − other·self`.
    pub fn commutator(&self, other: &Matrix) -> Matrix {
        &(self * other) - &(other * self)
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[Real], v: &[Real]) -> Matrix {
        Matrix::from_fn(u.len(), v.len(), |i, j| &u[i] * &v[j])
    }

    pub fn mul_vec(&self, v: &[Real]) -> Vec<Real> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| Real::dot(self.row(i), v)).collect()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = Real;
    fn index(&self, (i, j): (usize, usize)) -> &Real {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Real {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "shape mismatch");
        let rt = rhs.transpose();
        Matrix::from_fn(self.rows, rhs.cols, |i, j| Real::dot(self.row(i), rt.row(j)))
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|x| format!("{:.6e}", x.to_f64())).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}
