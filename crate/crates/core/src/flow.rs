//! The FG flow `dJ/dx = F + [G, J]` on fiber Jacobi matrices, the matrices
//! D, F, FD and G, and the algebraic identities they satisfy.

use std::io::Write;

use num_traits::{One, Zero};

use crate::dynamics::ExpandingMap;
use crate::error::{Error, Result};
use crate::jacobi::{JacobiMatrix, Kind};
use crate::linalg::Matrix;
use crate::precision::{checked_pow, PrecisionConfig};
use crate::real::{working_bits, Real};
use crate::renorm::fiber_jacobi;
use crate::transfer::{neumann_l2_sum, ruelle_apply, RuelleWeight};

/// Coordinates a matrix is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// The polynomial basis `|k⟩ = P_k(J)|0⟩`.
    Standard,
    /// Eigenvectors of J.
    Eigen,
}

/// Spectral decomposition `J B = B Λ` with `B_kj = √w_j P_k(λ_j)`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub lambdas: Vec<Real>,
    pub weights: Vec<Real>,
    pub b: Matrix,
}

impl EigenSystem {
    pub fn size(&self) -> usize {
        self.lambdas.len()
    }

    /// `B X Bᵀ`.
    pub fn to_standard(&self, x: &Matrix) -> Matrix {
        &(&self.b * x) * &self.b.transpose()
    }

    /// `Bᵀ X B`.
    pub fn to_eigen(&self, x: &Matrix) -> Matrix {
        &(&self.b.transpose() * x) * &self.b
    }

    /// `|0⟩` in eigen coordinates: `(√w_1, …, √w_m)`.
    pub fn ground_state(&self) -> Vec<Real> {
        self.b.row(0).to_vec()
    }

    /// `max |BᵀB − I|`.
    pub fn orthogonality_residual(&self) -> Real {
        (&(&self.b.transpose() * &self.b) - &Matrix::identity(self.size())).max_abs()
    }

    /// `max |J B − B Λ|`.
    pub fn eigen_residual(&self, j: &JacobiMatrix) -> Real {
        let lhs = &j.to_dense() * &self.b;
        let rhs = &self.b * &Matrix::diagonal(&self.lambdas);
        (&lhs - &rhs).max_abs()
    }
}

/// Eigenvalues by bisection, eigenvectors from the orthonormal polynomials.
pub fn eigensystem(j: &JacobiMatrix) -> Result<EigenSystem> {
    let m = j.size();
    let lambdas = j.eigenvalues();
    let mut columns: Vec<Vec<Real>> = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for lam in &lambdas {
        let vals = j.ortho_values(Kind::First, m - 1, lam)?;
        let norm2: Real = vals.iter().map(Real::square).sum();
        let w = norm2.recip();
        let sw = w.sqrt();
        columns.push(vals.iter().map(|v| v * &sw).collect());
        weights.push(w);
    }
    let b = Matrix::from_fn(m, m, |k, jj| columns[jj][k].clone());
    let eig = EigenSystem { lambdas, weights, b };
    let cfg = PrecisionConfig::for_bits(working_bits());
    let resid = eig.orthogonality_residual();
    if resid > cfg.residual_tol() * Real::from_usize(m) {
        return Err(Error::PrecisionExhausted {
            bits: cfg.significand_bits,
            detail: format!("eigenvector orthogonality residual {:e}", resid.to_f64()),
        });
    }
    Ok(eig)
}

/// `T_n'` and `T_n''` at the eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralJets {
    pub n: usize,
    pub d1: Vec<Real>,
    pub d2: Vec<Real>,
}

impl SpectralJets {
    pub fn new(eig: &EigenSystem, map: &ExpandingMap, n: usize) -> Result<Self> {
        let tol = map.precision().collision_tol();
        let mut d1 = Vec::with_capacity(eig.size());
        let mut d2 = Vec::with_capacity(eig.size());
        for lam in &eig.lambdas {
            let jet = map.iterate_jet(lam, n);
            if jet.d1.abs() < tol {
                return Err(Error::SingularPoint {
                    at: lam.to_f64(),
                    magnitude: jet.d1.abs().to_f64(),
                });
            }
            d1.push(jet.d1);
            d2.push(jet.d2);
        }
        Ok(SpectralJets { n, d1, d2 })
    }
}

/// Exponent n with `dⁿ = size`.
pub fn fiber_depth(map: &ExpandingMap, size: usize) -> Result<usize> {
    let d = map.degree();
    let mut n = 0;
    let mut acc = 1usize;
    while acc < size {
        acc = acc.saturating_mul(d);
        n += 1;
    }
    if acc != size {
        return Err(Error::InvalidInput(format!(
            "matrix size {size} is not a power of the degree {d}"
        )));
    }
    Ok(n)
}

/// D in eigen coordinates: `D_ij = T_n'(λ_i) / (T_n'(λ_j)(λ_i − λ_j))`,
/// `D_ii = ½ T_n''(λ_i) / T_n'(λ_i)`.
pub fn build_d(eig: &EigenSystem, jets: &SpectralJets) -> Matrix {
    let m = eig.size();
    Matrix::from_fn(m, m, |i, j| {
        if i == j {
            &jets.d2[i] / &jets.d1[i] * 0.5
        } else {
            &jets.d1[i] / &(&jets.d1[j] * &(&eig.lambdas[i] - &eig.lambdas[j]))
        }
    })
}

/// D in the standard basis by the derivative recurrence
/// `p_{k+1} d_{k+1} = e_k + (J − q_k) d_k − p_k d_{k-1}` on its columns.
pub fn d_by_recurrence(j: &JacobiMatrix) -> Matrix {
    let m = j.size();
    let dense = j.to_dense();
    let mut cols: Vec<Vec<Real>> = vec![vec![Real::zero(); m]];
    for k in 0..m - 1 {
        let jd = dense.mul_vec(&cols[k]);
        let mut next: Vec<Real> = jd
            .iter()
            .zip(&cols[k])
            .map(|(a, b)| a - &(b * &j.q()[k]))
            .collect();
        next[k] += 1.0;
        if k > 0 {
            let pk = j.p_at(k);
            for (x, prev) in next.iter_mut().zip(&cols[k - 1]) {
                *x -= prev * pk;
            }
        }
        let pk1 = j.p_at(k + 1);
        cols.push(next.iter().map(|x| x / pk1).collect());
    }
    Matrix::from_fn(m, m, |i, k| cols[k][i].clone())
}

/// `F = T_n'(J)⁻¹` in eigen coordinates.
pub fn build_f(jets: &SpectralJets) -> Matrix {
    let inv: Vec<Real> = jets.d1.iter().map(Real::recip).collect();
    Matrix::diagonal(&inv)
}

/// `F, D, FD, G₊, G` in one basis.
#[derive(Debug, Clone)]
pub struct FlowMatrices {
    pub basis: Basis,
    pub f: Matrix,
    pub d: Matrix,
    pub fd: Matrix,
    pub g_plus: Matrix,
    pub g: Matrix,
}

/// `G₊ = −(FD)` strictly below the diagonal and `G = G₊ − G₊ᵀ`, from F and D
/// in the standard basis.
pub fn build_g(f_std: Matrix, d_std: Matrix) -> FlowMatrices {
    let fd = &f_std * &d_std;
    let m = fd.rows();
    let g_plus = Matrix::from_fn(m, m, |i, j| if i > j { -fd[(i, j)].clone() } else { Real::zero() });
    let g = &g_plus - &g_plus.transpose();
    FlowMatrices {
        basis: Basis::Standard,
        f: f_std,
        d: d_std,
        fd,
        g_plus,
        g,
    }
}

/// Everything the flow and the identities need for one fiber matrix.
#[derive(Debug, Clone)]
pub struct FgSystem {
    pub j: JacobiMatrix,
    pub eig: EigenSystem,
    pub jets: SpectralJets,
    pub d_eig: Matrix,
    pub f_eig: Matrix,
    pub std: FlowMatrices,
}

impl FgSystem {
    /// `j` must be a fiber matrix of `T_n`, n inferred from its size.
    pub fn new(j: &JacobiMatrix, map: &ExpandingMap) -> Result<Self> {
        let _g = map.precision().install();
        let n = fiber_depth(map, j.size())?;
        let eig = eigensystem(j)?;
        let jets = SpectralJets::new(&eig, map, n)?;
        let d_eig = build_d(&eig, &jets);
        let f_eig = build_f(&jets);
        let std = build_g(eig.to_standard(&f_eig), eig.to_standard(&d_eig));
        Ok(FgSystem {
            j: j.clone(),
            eig,
            jets,
            d_eig,
            f_eig,
            std,
        })
    }

    pub fn size(&self) -> usize {
        self.j.size()
    }

    /// `F + GJ − JG` in the standard basis, unchecked.
    pub fn derivative_matrix(&self) -> Matrix {
        let jd = self.j.to_dense();
        &self.std.f + &self.std.g.commutator(&jd)
    }
}

fn structure_tol() -> Real {
    let digits = Real::digits_for_bits(working_bits()) as i32;
    Real::from_f64(10f64.powi(-(digits - 10).max(1)))
}

/// `dJ/dx = F + GJ − JG`, required to be tridiagonal.
pub fn flow_derivative(j: &JacobiMatrix, map: &ExpandingMap) -> Result<Matrix> {
    let _g = map.precision().install();
    derivative_within(j, map, &structure_tol())
}

fn derivative_within(j: &JacobiMatrix, map: &ExpandingMap, leak_tol: &Real) -> Result<Matrix> {
    let sys = FgSystem::new(j, map)?;
    let out = sys.derivative_matrix();
    let leak = out.off_tridiagonal_max();
    if &leak > leak_tol {
        return Err(Error::StructureViolation { leak: leak.to_f64() });
    }
    Ok(out)
}

/// Tridiagonal part of a derivative matrix as `(dq, dp)`.
pub fn tridiagonal_part(m: &Matrix) -> (Vec<Real>, Vec<Real>) {
    let n = m.rows();
    let dq = (0..n).map(|k| m[(k, k)].clone()).collect();
    let dp = (1..n).map(|k| m[(k - 1, k)].clone()).collect();
    (dq, dp)
}

/// Outcome of [`integrate_flow`].
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub end: JacobiMatrix,
    /// Accepted frames `(x, J(x))`, starting at `x0`.
    pub trajectory: Vec<(Real, JacobiMatrix)>,
    pub steps: usize,
    pub rejected: usize,
}

impl FlowRun {
    /// CSV frames `x,q0..,p1..`.
    pub fn write_csv<W: Write>(&self, out: &mut W, digits: usize) -> std::io::Result<()> {
        let m = self.end.size();
        let mut header = vec!["x".to_string()];
        header.extend((0..m).map(|k| format!("q{k}")));
        header.extend((1..m).map(|k| format!("p{k}")));
        writeln!(out, "{}", header.join(","))?;
        for (x, j) in &self.trajectory {
            let mut row = vec![x.to_decimal(digits)];
            row.extend(j.q().iter().map(|v| v.to_decimal(digits)));
            row.extend(j.p().iter().map(|v| v.to_decimal(digits)));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn pack(j: &JacobiMatrix) -> Vec<Real> {
    j.q().iter().chain(j.p()).cloned().collect()
}

fn unpack(y: &[Real], m: usize) -> Result<JacobiMatrix> {
    let q = y[..m].to_vec();
    let p = y[m..].to_vec();
    if let Some(bad) = p.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::StructureViolation { leak: bad.to_f64() });
    }
    JacobiMatrix::new(q, p)
}

/// Off the exact orbit the leak grows quadratically in the distance, so stages
/// are checked against the integration tolerance and projected.
fn rhs(y: &[Real], m: usize, map: &ExpandingMap, leak_tol: &Real) -> Result<Vec<Real>> {
    let j = unpack(y, m)?;
    let (dq, dp) = tridiagonal_part(&derivative_within(&j, map, leak_tol)?);
    Ok(dq.into_iter().chain(dp).collect())
}

/// Dormand–Prince 5(4) integration of the flow from `J_n(x0)` to `x1`.
/// The field does not depend on x explicitly, so stage nodes are not needed.
pub fn integrate_flow(map: &ExpandingMap, n: usize, x0: &Real, x1: &Real, tol: f64) -> Result<FlowRun> {
    let _g = map.precision().install();
    let start = fiber_jacobi(map, x0, n)?;
    let m = start.size();
    let mut trajectory = vec![(x0.clone(), start.clone())];
    let span = (x1 - x0).to_f64();
    if span == 0.0 {
        return Ok(FlowRun {
            end: start,
            trajectory,
            steps: 0,
            rejected: 0,
        });
    }
    let r = |a: i64, b: i64| Real::ratio(a, b);
    let a: Vec<Vec<Real>> = vec![
        vec![],
        vec![r(1, 5)],
        vec![r(3, 40), r(9, 40)],
        vec![r(44, 45), r(-56, 15), r(32, 9)],
        vec![r(19372, 6561), r(-25360, 2187), r(64448, 6561), r(-212, 729)],
        vec![r(9017, 3168), r(-355, 33), r(46732, 5247), r(49, 176), r(-5103, 18656)],
        vec![r(35, 384), r(0, 1), r(500, 1113), r(125, 192), r(-2187, 6784), r(11, 84)],
    ];
    let e = [
        r(71, 57600),
        r(0, 1),
        r(-71, 16695),
        r(71, 1920),
        r(-17253, 339200),
        r(22, 525),
        r(-1, 40),
    ];
    let dir = span.signum();
    let mut x = x0.clone();
    let mut y = pack(&start);
    let mut h = span.abs() / 16.0;
    let h_min = span.abs() * 1e-12;
    let leak_tol = structure_tol().max_of(Real::from_f64(tol));
    let mut k1 = rhs(&y, m, map, &leak_tol)?;
    let mut steps = 0;
    let mut rejected = 0;
    loop {
        let remaining = (x1 - &x).to_f64() * dir;
        if remaining <= 0.0 {
            break;
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = Real::from_f64(h * dir);
        let mut ks: Vec<Vec<Real>> = vec![k1.clone()];
        let mut stage_err = None;
        for s in 1..7 {
            let ys: Vec<Real> = (0..y.len())
                .map(|i| {
                    let mut acc = Real::zero();
                    for (aj, kj) in a[s].iter().zip(&ks) {
                        acc += aj * &kj[i];
                    }
                    &y[i] + &(acc * &hs)
                })
                .collect();
            if s == 6 {
                // Seventh stage evaluates at the fifth-order solution.
                match rhs(&ys, m, map, &leak_tol) {
                    Ok(k) => {
                        ks.push(k);
                        ks.push(ys);
                    }
                    Err(err) => stage_err = Some(err),
                }
                break;
            }
            match rhs(&ys, m, map, &leak_tol) {
                Ok(k) => ks.push(k),
                Err(err) => {
                    stage_err = Some(err);
                    break;
                }
            }
        }
        let accepted = match stage_err {
            Some(Error::InvalidInput(_)) => None,
            Some(err) => return Err(err),
            None => {
                let y_new = ks.pop().expect("stage solution");
                let mut err_norm = 0.0f64;
                for i in 0..y.len() {
                    let mut acc = Real::zero();
                    for (ej, kj) in e.iter().zip(&ks) {
                        acc += ej * &kj[i];
                    }
                    let est = (acc * &hs).abs().to_f64();
                    let scale = tol * (1.0 + y[i].abs().to_f64().max(y_new[i].abs().to_f64()));
                    err_norm = err_norm.max(est / scale);
                }
                Some((y_new, ks.pop().expect("last stage"), err_norm))
            }
        };
        match accepted {
            Some((y_new, k_last, err_norm)) if err_norm <= 1.0 => {
                x = if last { x1.clone() } else { &x + &hs };
                y = y_new;
                k1 = k_last;
                steps += 1;
                trajectory.push((x.clone(), unpack(&y, m)?));
                let grow = if err_norm == 0.0 { 5.0 } else { (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0) };
                h *= grow;
                if last {
                    break;
                }
            }
            other => {
                rejected += 1;
                let shrink = match other {
                    Some((_, _, err_norm)) => (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9),
                    None => 0.25,
                };
                h *= shrink;
                if h < h_min {
                    return Err(Error::StepFailure {
                        at: x.to_f64(),
                        detail: format!("step size {h:e} below minimum"),
                    });
                }
            }
        }
        if steps + rejected > 100_000 {
            return Err(Error::StepFailure {
                at: x.to_f64(),
                detail: "step budget exhausted".into(),
            });
        }
    }
    Ok(FlowRun {
        end: unpack(&y, m)?,
        trajectory,
        steps,
        rejected,
    })
}

/// Names accepted by [`identity_residuals`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Identity {
    Commutant,
    FdForm,
    Trace,
    OffDiagonal,
    Laplacian,
    AsymptoticCommutation,
}

impl Identity {
    pub const ALL: [Identity; 6] = [
        Identity::Commutant,
        Identity::FdForm,
        Identity::Trace,
        Identity::OffDiagonal,
        Identity::Laplacian,
        Identity::AsymptoticCommutation,
    ];
}

/// Named residuals, in evaluation order.
#[derive(Debug, Clone, Default)]
pub struct IdentityReport {
    pub entries: Vec<(String, Real)>,
}

impl IdentityReport {
    pub fn get(&self, name: &str) -> Option<&Real> {
        self.entries.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    fn push(&mut self, name: &str, value: Real) {
        self.entries.push((name.to_string(), value));
    }

    /// CSV `identity,residual`.
    pub fn write_csv<W: Write>(&self, out: &mut W, digits: usize) -> std::io::Result<()> {
        writeln!(out, "identity,residual")?;
        for (k, v) in &self.entries {
            writeln!(out, "{k},{}", v.to_decimal(digits))?;
        }
        Ok(())
    }
}

/// Residuals of the FG-flow identities for a fiber matrix `J = J_n(x)`.
///
/// Entries: `commutant` (standard basis) and `commutant_eig`;
/// `fd_form`; `trace_identity` with `trace_lhs`; `offdiag_j` and
/// `offdiag_i` for the two readings of the second factor; `laplacian`
/// (eigen basis) and `laplacian_std`; `asym_commute` with
/// `asym_commute_norm = max |F − m|0⟩⟨0|F|`.
pub fn identity_residuals(sys: &FgSystem, map: &ExpandingMap, x: &Real, which: &[Identity]) -> Result<IdentityReport> {
    let _g = map.precision().install();
    let m = sys.size();
    let n = sys.jets.n;
    let eig = &sys.eig;
    let lam = &eig.lambdas;
    let t1 = &sys.jets.d1;
    let t2 = &sys.jets.d2;
    let jd = sys.j.to_dense();
    let e0e0 = Matrix::from_fn(m, m, |i, j| if i == 0 && j == 0 { Real::one() } else { Real::zero() });
    let fd_eig = &sys.f_eig * &sys.d_eig;
    let mut report = IdentityReport::default();
    for id in which {
        match id {
            Identity::Commutant => {
                // C = 1 / (p_1 ⋯ p_{m-1} · lead(T_n)).
                let d = map.degree() as i64;
                let lead_exp = (checked_pow(map.degree(), n)? as i64 - 1) / (d - 1);
                let lead_n = map.poly().leading().powi(lead_exp as i32);
                let prod: Real = sys.j.p().iter().fold(Real::one(), |acc, p| acc * p);
                let c = (prod * lead_n).recip();
                let ground = eig.ground_state();
                let tprime_eig: Vec<Real> = t1.iter().zip(&ground).map(|(a, b)| a * b).collect();
                let tprime_std = eig.b.mul_vec(&tprime_eig);
                let mut last = vec![Real::zero(); m];
                last[m - 1] = Real::one();
                let rank_one = Matrix::outer(&tprime_std, &last).scale(&c);
                let expect = &Matrix::identity(m) - &rank_one;
                let lhs = sys.std.d.commutator(&jd);
                report.push("commutant", (&lhs - &expect).max_abs());
                let lam_diag = Matrix::diagonal(lam);
                let lhs_eig = sys.d_eig.commutator(&lam_diag);
                let expect_eig = eig.to_eigen(&expect);
                report.push("commutant_eig", (&lhs_eig - &expect_eig).max_abs());
            }
            Identity::FdForm => {
                let kernel = Matrix::from_fn(m, m, |i, j| {
                    if i == j {
                        &t2[i] / &t1[i] * 0.5
                    } else {
                        (&lam[i] - &lam[j]).recip()
                    }
                });
                let inv: Vec<Real> = t1.iter().map(Real::recip).collect();
                let displayed = &kernel * &Matrix::diagonal(&inv);
                report.push("fd_form", (&fd_eig - &displayed).max_abs());
            }
            Identity::Trace => {
                let gram = &fd_eig.transpose() * &fd_eig;
                let lhs = gram.trace() / Real::from_usize(m);
                let schwarzian = |y: &Real| map.iterate_schwarzian(y, n);
                let l2 = ruelle_apply(map, RuelleWeight::InverseSquareDerivative, &schwarzian, x, n)?;
                let rhs = l2 * &Real::ratio(-1, 3);
                report.push("trace_identity", (&lhs - &rhs).abs());
                report.push("trace_lhs", lhs);
            }
            Identity::OffDiagonal => {
                let gram = &fd_eig.transpose() * &fd_eig;
                let mut worst_j = Real::zero();
                let mut worst_i = Real::zero();
                for i in 0..m {
                    for j in 0..m {
                        if i == j {
                            continue;
                        }
                        let kernel = (&lam[i] - &lam[j]).square().recip() * 2.0;
                        let j_reading = &kernel / &(&t1[i] * &t1[j]);
                        let i_reading = &kernel / &t1[i].square();
                        worst_j = worst_j.max_of((&gram[(i, j)] - &j_reading).abs());
                        worst_i = worst_i.max_of((&gram[(i, j)] - &i_reading).abs());
                    }
                }
                report.push("offdiag_j", worst_j);
                report.push("offdiag_i", worst_i);
            }
            Identity::Laplacian => {
                // F D F⁻¹ in eigen coordinates: Hilbert kernel with ½T''/T' diagonal.
                let t1_diag = Matrix::diagonal(t1);
                let conj = &fd_eig * &t1_diag;
                let delta = &conj.transpose() * &conj;
                let lam_diag = Matrix::diagonal(lam);
                let double = lam_diag.commutator(&lam_diag.commutator(&delta));
                let ground = eig.ground_state();
                let proj = Matrix::outer(&ground, &ground).scale(&Real::from_usize(2 * m));
                let expect = &proj - &Matrix::identity(m).scale(&Real::from_i64(2));
                report.push("laplacian", (&double - &expect).max_abs());
                let delta_std = eig.to_standard(&delta);
                let double_std = jd.commutator(&jd.commutator(&delta_std));
                let expect_std = &e0e0.scale(&Real::from_usize(2 * m)) - &Matrix::identity(m).scale(&Real::from_i64(2));
                report.push("laplacian_std", (&double_std - &expect_std).max_abs());
            }
            Identity::AsymptoticCommutation => {
                let lhs = sys.std.fd.commutator(&jd);
                let tail = &sys.std.f - &(&e0e0 * &sys.std.f).scale(&Real::from_usize(m));
                report.push("asym_commute", (&lhs - &tail).max_abs());
                report.push("asym_commute_norm", tail.max_abs());
            }
        }
    }
    Ok(report)
}

/// One row of [`trace_limit_sequence`].
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub n: usize,
    pub s_n: Real,
    pub limit: Real,
    pub gap: Real,
}

/// `sₙ = −⅓ L₂ⁿ S(T_n)(x)` on the fiber tree for n = 1..=n_max, with the
/// Neumann limit `−⅓ Σ_{m≥1} L₂^m S(T)(x)`.
pub fn trace_limit_sequence(map: &ExpandingMap, x: &Real, n_max: usize, tol: &Real) -> Result<Vec<TraceRow>> {
    let _g = map.precision().install();
    let third = Real::ratio(-1, 3);
    let s_t = |y: &Real| map.schwarzian(y);
    let limit = neumann_l2_sum(map, &s_t, x, tol)?.total * &third;
    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let s_tn = |y: &Real| map.iterate_schwarzian(y, n);
        let s_n = ruelle_apply(map, RuelleWeight::InverseSquareDerivative, &s_tn, x, n)? * &third;
        let gap = (&s_n - &limit).abs();
        rows.push(TraceRow {
            n,
            s_n,
            limit: limit.clone(),
            gap,
        });
    }
    Ok(rows)
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: &mut W, digits: usize) -> std::io::Result<()> {
    writeln!(out, "n,s_n,limit,gap")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.n,
            r.s_n.to_decimal(digits),
            r.limit.to_decimal(digits),
            r.gap.to_decimal(digits)
        )?;
    }
    Ok(())
}

/// `‖F_n‖₂ = max_λ 1/|T_n'(λ)|` over the fiber `T_n⁻¹(x)`.
pub fn f_norm(map: &ExpandingMap, x: &Real, n: usize) -> Result<Real> {
    let _g = map.precision().install();
    let mut best = Real::zero();
    for y in map.preimages(x, n)? {
        best = best.max_of(map.iterate_jet(&y, n).d1.abs().recip());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(c: f64) -> ExpandingMap {
        ExpandingMap::from_coeffs(&[-c, 0.0, 1.0], PrecisionConfig::default(), false).unwrap()
    }

    fn tight() -> Real {
        Real::exp2(-200)
    }

    fn system(t: &ExpandingMap, x: f64, n: usize) -> FgSystem {
        let j = fiber_jacobi(t, &Real::from_f64(x), n).unwrap();
        FgSystem::new(&j, t).unwrap()
    }

    #[test]
    fn two_by_two_eigensystem() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let sys = system(&t, 0.0, 1);
        let s3 = Real::from_i64(3).sqrt();
        let h = Real::ratio(1, 2).sqrt();
        assert!((&sys.eig.lambdas[0] + &s3).abs() < tight());
        let expect = [[h.clone(), h.clone()], [-h.clone(), h.clone()]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((&sys.eig.b[(i, j)] - &expect[i][j]).abs() < tight());
            }
        }
    }

    #[test]
    fn hand_values_at_degree_two() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let sys = system(&t, 0.0, 1);
        let k = (Real::from_i64(2) * Real::from_i64(3).sqrt()).recip();
        let d_expect = [[-k.clone(), k.clone()], [-k.clone(), k.clone()]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((&sys.d_eig[(i, j)] - &d_expect[i][j]).abs() < tight());
            }
        }
        let ground = sys.eig.ground_state();
        assert!(sys.d_eig.mul_vec(&ground).iter().all(|v| v.abs() < tight()));
        assert!((&sys.std.f[(0, 1)] - &k).abs() < tight());
        assert!(sys.std.f[(0, 0)].abs() < tight());
        assert!(sys.std.fd[(0, 0)].abs() < tight());
        assert!((&sys.std.fd[(1, 1)] - &Real::ratio(1, 6)).abs() < tight());
        assert!(sys.std.g.max_abs() < tight());
        let dj = flow_derivative(&sys.j, &t).unwrap();
        assert!((&dj[(0, 1)] - &k).abs() < tight());
        assert!(dj[(0, 0)].abs() < tight());
    }

    #[test]
    fn identities_at_degree_two() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let sys = system(&t, 0.0, 1);
        let rep = identity_residuals(&sys, &t, &Real::zero(), &Identity::ALL).unwrap();
        for name in [
            "commutant",
            "commutant_eig",
            "fd_form",
            "trace_identity",
            "offdiag_j",
            "laplacian",
            "laplacian_std",
            "asym_commute",
        ] {
            assert!(*rep.get(name).unwrap() < tight(), "{name}: {}", rep.get(name).unwrap());
        }
        assert!((rep.get("trace_lhs").unwrap() - &Real::ratio(1, 72)).abs() < tight());
        assert!((rep.get("offdiag_i").unwrap() - &Real::ratio(2, 72)).abs() < tight());
    }

    #[test]
    fn standard_d_matches_recurrence() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let sys = system(&t, 0.2, 3);
        let rec = d_by_recurrence(&sys.j);
        assert!((&sys.std.d - &rec).max_abs() < Real::exp2(-180));
        let below = Matrix::from_fn(8, 8, |i, j| if i >= j { sys.std.d[(i, j)].clone() } else { Real::zero() });
        assert!(below.max_abs() < Real::exp2(-180));
        assert!((&sys.std.g + &sys.std.g.transpose()).max_abs().is_zero());
        assert!(sys.std.g.row(0).iter().all(|v| v.abs() < Real::exp2(-180)));
    }

    #[test]
    fn zero_length_integration() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let run = integrate_flow(&t, 1, &Real::from_f64(0.1), &Real::from_f64(0.1), 1e-8).unwrap();
        assert_eq!(run.steps, 0);
        assert_eq!(run.trajectory.len(), 1);
    }

    #[test]
    fn flow_reaches_closed_form() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let run = integrate_flow(&t, 1, &Real::zero(), &Real::from_f64(0.5), 1e-8).unwrap();
        assert!((run.end.p_at(1) - &Real::from_f64(3.5).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn trace_sequence_starts_at_one_seventy_second() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let rows = trace_limit_sequence(&t, &Real::zero(), 3, &Real::from_f64(1e-10)).unwrap();
        assert!((&rows[0].s_n - &Real::ratio(1, 72)).abs() < tight());
        assert!(rows[1].gap < rows[0].gap && rows[2].gap < rows[1].gap);
    }
}
