//! Acceptance criteria, one line each. Exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use jjl::experiments::{conjecture_sweep, parse_config, sweep_checks, write_sweep_csv, Experiment};
use jjl::flow::{
    flow_derivative, identity_residuals, integrate_flow, trace_limit_sequence, tridiagonal_part, FgSystem, Identity,
};
use jjl::jacobi::{gauss_quadrature, density_perturbation_check, wronskian_residual, Exactness};
use jjl::renorm::{
    balanced_jacobi, decay_profile, fiber_jacobi, limit_period_from, limit_period_matrix, q_subperiod_drift,
    renorm_residual,
};
use jjl::transfer::{balanced_measure_approx, chebyshev_grid, l2_spectral_radius, ruelle_apply, RuelleWeight};
use jjl::{Complex, ExpandingMap, JacobiMatrix, PrecisionConfig, Real, RealPolynomial, Result};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<(bool, String)>;

fn map(coeffs: &[f64], boundary: bool) -> ExpandingMap {
    ExpandingMap::from_coeffs(coeffs, PrecisionConfig::default(), boundary).expect("valid map")
}

fn quad(c: f64) -> ExpandingMap {
    map(&[-c, 0.0, 1.0], false)
}

/// `(z²−3)²−3`.
fn t2() -> ExpandingMap {
    map(&[6.0, 0.0, -6.0, 0.0, 1.0], false)
}

fn r(x: f64) -> Real {
    Real::from_f64(x)
}

fn grid(lo: f64, hi: f64, count: usize) -> Vec<Real> {
    (0..count).map(|i| r(lo + (hi - lo) * i as f64 / (count - 1) as f64)).collect()
}

fn worst(values: impl IntoIterator<Item = Real>) -> Real {
    values.into_iter().fold(Real::zero(), |a, b| a.max_of(b.abs()))
}

fn fiber_oracle() -> Verdict {
    let t = quad(3.0);
    let _g = t.precision().install();
    let j = fiber_jacobi(&t, &Real::zero(), 2)?;
    let want = [Real::from_i64(3).sqrt(), Real::one(), Real::from_i64(2).sqrt()];
    let dq = worst(j.q().iter().cloned());
    let dp = worst(j.p().iter().zip(&want).map(|(a, b)| a - b));
    let e = dq.max_of(dp).to_f64();
    Ok((e <= 1e-12, format!("max deviation {e:.2e}")))
}

fn chebyshev_oracle() -> Verdict {
    let t = map(&[-2.0, 0.0, 1.0], true);
    let _g = t.precision().install();
    let j = balanced_jacobi(&t, &Real::zero(), 12, 33)?;
    let e1 = (j.p_at(1) - &Real::from_i64(2).sqrt()).abs().to_f64();
    let ek = worst((2..=32).map(|k| j.p_at(k) - 1.0)).to_f64();
    let eq = worst(j.q().iter().cloned()).to_f64();
    Ok((
        e1 <= 1e-8 && ek <= 1e-6 && eq <= 1e-8,
        format!("|p1-sqrt2| {e1:.2e}, max|p_k-1| {ek:.2e}, max|q| {eq:.2e}"),
    ))
}

fn renormalization_equation() -> Verdict {
    let zs = [
        Complex::new(r(3.0), r(0.0)),
        Complex::new(r(3.0), r(1.0)),
        Complex::new(r(5.0), r(0.0)),
    ];
    let mut e = Real::zero();
    for c in [3.0, 4.0] {
        let t = quad(c);
        let _g = t.precision().install();
        for x in [0.0, 0.37, -1.1] {
            let x = r(x);
            for n in 1..=4 {
                let coarse = fiber_jacobi(&t, &x, n)?;
                let fine = fiber_jacobi(&t, &x, n + 1)?;
                for z in &zs {
                    e = e.max_of(renorm_residual(&fine, &coarse, &t, z)?);
                }
            }
        }
    }
    let e = e.to_f64();
    Ok((e <= 1e-10, format!("max residual {e:.2e} over 2 maps, 3 x, n<=4, 3 z")))
}

fn trace_identity() -> Verdict {
    let xs = grid(-1.5, 1.5, 10);
    let mut e = Real::zero();
    for (t, ns) in [(quad(3.0), 1..=3usize), (t2(), 1..=2)] {
        let _g = t.precision().install();
        for x in &xs {
            for n in ns.clone() {
                let sys = FgSystem::new(&fiber_jacobi(&t, x, n)?, &t)?;
                let rep = identity_residuals(&sys, &t, x, &[Identity::Trace])?;
                e = e.max_of(rep.get("trace_identity").expect("trace entry").clone());
            }
        }
    }
    let t = quad(3.0);
    let _g = t.precision().install();
    let mut closed = Real::zero();
    for x in &xs {
        let sys = FgSystem::new(&fiber_jacobi(&t, x, 1)?, &t)?;
        let rep = identity_residuals(&sys, &t, x, &[Identity::Trace])?;
        let want = (Real::from_i64(8) * (x + 3.0).square()).recip();
        closed = closed.max_of((rep.get("trace_lhs").expect("lhs") - &want).abs());
    }
    let sys = FgSystem::new(&fiber_jacobi(&t, &Real::zero(), 1)?, &t)?;
    let rep = identity_residuals(&sys, &t, &Real::zero(), &[Identity::Trace])?;
    let at_zero = (rep.get("trace_lhs").expect("lhs") - &Real::ratio(1, 72)).abs().to_f64();
    let (e, closed) = (e.to_f64(), closed.to_f64());
    Ok((
        e <= 1e-10 && closed <= 1e-12 && at_zero <= 1e-12,
        format!("identity {e:.2e} (d=2, d=4), closed form {closed:.2e}, 1/72 at x=0 {at_zero:.2e}"),
    ))
}

fn flow_identities() -> Verdict {
    let t = quad(3.0);
    let _g = t.precision().install();
    let names = ["commutant", "commutant_eig", "fd_form", "offdiag_j", "laplacian", "laplacian_std"];
    let mut worst_by = vec![Real::zero(); names.len()];
    for x in [0.0, 0.37, -1.1] {
        let x = r(x);
        for n in 1..=3 {
            let sys = FgSystem::new(&fiber_jacobi(&t, &x, n)?, &t)?;
            let rep = identity_residuals(
                &sys,
                &t,
                &x,
                &[Identity::Commutant, Identity::FdForm, Identity::OffDiagonal, Identity::Laplacian],
            )?;
            for (slot, name) in worst_by.iter_mut().zip(names) {
                *slot = slot.clone().max_of(rep.get(name).expect("entry").clone());
            }
        }
    }
    let sys = FgSystem::new(&fiber_jacobi(&t, &Real::zero(), 1)?, &t)?;
    let fd = &sys.f_eig * &sys.d_eig;
    let gram = &fd.transpose() * &fd;
    let hand = (&gram[(0, 1)] + &Real::ratio(1, 72)).abs().to_f64();
    let w: Vec<f64> = worst_by.iter().map(Real::to_f64).collect();
    let ok = w[..4].iter().all(|&v| v <= 1e-10) && w[4..].iter().all(|&v| v <= 1e-8) && hand <= 1e-12;
    Ok((
        ok,
        format!(
            "commutant {:.1e}/{:.1e}, FD form {:.1e}, off-diagonal {:.1e}, -1/72 entry {hand:.1e}, laplacian {:.1e}/{:.1e} (sizes 2,4,8)",
            w[0], w[1], w[2], w[3], w[4], w[5]
        ),
    ))
}

fn size_two_degeneracy() -> Verdict {
    let t = quad(3.0);
    let _g = t.precision().install();
    let xi = t.xi().to_f64();
    let mut e = Real::zero();
    for x in grid(-0.95 * xi, 0.95 * xi, 20) {
        let j = fiber_jacobi(&t, &x, 1)?;
        let sys = FgSystem::new(&j, &t)?;
        let dj = flow_derivative(&j, &t)?;
        e = e.max_of(sys.std.g.max_abs()).max_of((&dj - &sys.std.f).max_abs());
    }
    let e = e.to_f64();
    Ok((e <= 1e-12, format!("max |G|, |J' - F| = {e:.2e} on 20 points")))
}

fn flow_integration() -> Verdict {
    let t = quad(3.0);
    let _g = t.precision().install();
    let half = r(0.5);
    let run2 = integrate_flow(&t, 2, &Real::zero(), &half, 1e-8)?;
    let e2 = run2.end.max_coeff_diff(&fiber_jacobi(&t, &half, 2)?).to_f64();
    let run1 = integrate_flow(&t, 1, &Real::zero(), &half, 1e-8)?;
    let e1 = (run1.end.p_at(1) - &r(3.5).sqrt()).abs().to_f64();
    let h = r(1e-6);
    let x = r(0.3);
    let mut fd = 0.0f64;
    for n in 1..=2 {
        let jp = fiber_jacobi(&t, &(&x + &h), n)?;
        let jm = fiber_jacobi(&t, &(&x - &h), n)?;
        let (dq, dp) = tridiagonal_part(&flow_derivative(&fiber_jacobi(&t, &x, n)?, &t)?);
        let two_h = &h * 2.0;
        for k in 0..dq.len() {
            fd = fd.max(((&(&jp.q()[k] - &jm.q()[k]) / &two_h) - &dq[k]).abs().to_f64());
        }
        for k in 0..dp.len() {
            fd = fd.max(((&(&jp.p()[k] - &jm.p()[k]) / &two_h) - &dp[k]).abs().to_f64());
        }
    }
    Ok((
        e2 <= 1e-6 && e1 <= 1e-6 && fd <= 1e-6,
        format!("n=2 endpoint {e2:.2e}, n=1 vs sqrt(3.5) {e1:.2e}, finite difference {fd:.2e}"),
    ))
}

fn trace_limit() -> Verdict {
    let t = quad(3.0);
    let _g = t.precision().install();
    let s_t = |y: &Real| t.schwarzian(y);
    let mut tele = Real::zero();
    for x in grid(-1.5, 1.5, 10) {
        for n in 1..=2usize {
            let lhs = ruelle_apply(
                &t,
                RuelleWeight::InverseSquareDerivative,
                &|y: &Real| t.iterate_schwarzian(y, n + 1),
                &x,
                n + 1,
            )?;
            let mut rhs = Real::zero();
            for m in 1..=n + 1 {
                rhs += ruelle_apply(&t, RuelleWeight::InverseSquareDerivative, &s_t, &x, m)?;
            }
            tele = tele.max_of((lhs - rhs).abs());
        }
    }
    let rows = trace_limit_sequence(&t, &Real::zero(), 6, &r(1e-12))?;
    let gaps: Vec<&Real> = rows.iter().filter(|row| row.n >= 2).map(|row| &row.gap).collect();
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let last = rows.last().expect("rows");
    let (tele, gap, limit) = (tele.to_f64(), last.gap.to_f64(), last.limit.to_f64());
    Ok((
        tele <= 1e-10 && decreasing && gap <= 1e-4 && limit > 1e-4,
        format!("telescoping {tele:.2e}, gaps decreasing {decreasing}, final gap {gap:.2e}, limit {limit:.6}"),
    ))
}

fn decay() -> Verdict {
    let t = quad(3.0);
    let _g = t.precision().install();
    let prof = decay_profile(&t, &Real::zero(), 8)?;
    let ratios: Vec<f64> = prof.ratios().iter().map(Real::to_f64).collect();
    let below = ratios.iter().all(|&v| v < 1.0);
    let diffs: Vec<f64> = ratios[3..].windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let stabilizing = diffs.windows(2).all(|w| w[1] < w[0]);
    let est = l2_spectral_radius(&t, &chebyshev_grid(t.xi(), 33), 10)?;
    let rho2 = est.estimate.to_f64();
    let predicted = rho2.sqrt() * 2.0;
    let fitted = prof.fitted_rate.to_f64();
    let rel = (fitted - predicted).abs() / predicted;
    Ok((
        below && stabilizing && rho2 * 4.0 < 1.0 && rel <= 0.1,
        format!(
            "max ratio {:.4}, stabilizing {stabilizing}, rho^2 d^2 {:.4}, fitted {fitted:.5} vs {predicted:.5} ({rel:.1e})",
            ratios.iter().cloned().fold(0.0, f64::max),
            rho2 * 4.0
        ),
    ))
}

fn q_subperiod() -> Verdict {
    let mut e = Real::zero();
    for c in [3.0, 4.0] {
        let t = quad(c);
        let _g = t.precision().install();
        let j = balanced_jacobi(&t, &Real::zero(), 10, 257)?;
        e = e.max_of(q_subperiod_drift(&j, 2));
    }
    let e = e.to_f64();
    Ok((e <= 1e-10, format!("max |q_sd - q_0| = {e:.2e} (N=257)")))
}

fn limit_periodicity() -> Verdict {
    let t = quad(3.0);
    let _g = t.precision().install();
    let mut eps = Vec::new();
    let mut q = Real::zero();
    for n in 1..=3 {
        let j = limit_period_matrix(&t, &Real::zero(), n, 3)?;
        q = q.max_of(q_subperiod_drift(&j, 2));
        eps.push(limit_period_from(&j, 2, n, 3)?.eps_dn.to_f64());
    }
    let decreasing = eps.windows(2).all(|w| w[1] < w[0]);
    let q = q.to_f64();
    Ok((
        decreasing && q <= 1e-10,
        format!("eps(1..3) = {:.3e} {:.3e} {:.3e}, q subperiod {q:.2e}", eps[0], eps[1], eps[2]),
    ))
}

fn density_perturbation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let maps = [quad(3.0), quad(4.0)];
    let mut violations = 0;
    let mut trials = 0;
    let mut max_ratio = 0.0f64;
    for eps in [0.05, 0.1, 0.2] {
        for i in 0..100 {
            let t = &maps[i % 2];
            let _g = t.precision().install();
            let m = balanced_measure_approx(t, &r(rng.gen_range(-1.0..1.0)), 5)?;
            let lo: f64 = 1.0 - eps;
            let f: Vec<Real> = (0..m.len()).map(|_| r(lo.powf(rng.gen_range(-0.999..0.999)))).collect();
            let s = rng.gen_range(1..m.len());
            let rep = density_perturbation_check(&m, &f, &r(eps), s, rng.gen_bool(0.5), t.precision())?;
            trials += 1;
            if !rep.holds {
                violations += 1;
            }
            max_ratio = max_ratio.max((&rep.lhs / &rep.rhs).to_f64());
        }
    }
    Ok((
        violations == 0,
        format!("{violations} violations in {trials} trials, max lhs/rhs {max_ratio:.3e}"),
    ))
}

fn conjecture() -> Verdict {
    let cfg = parse_config(r#"{"poly":[-3,0,1],"n_max":4,"x_grid":{"count":9,"lo":-1,"hi":1}}"#)?;
    let exp = Experiment::new(cfg)?;
    let render = || -> Result<(Vec<u8>, bool, usize)> {
        let rows = conjecture_sweep(&exp)?;
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf)?;
        Ok((buf, sweep_checks(&rows).iter().all(|c| c.passed), rows.len()))
    };
    let (first, bound_ok, count) = render()?;
    let (second, _, _) = render()?;
    let identical = first == second;
    Ok((
        bound_ok && identical && count == 4 * 9,
        format!("eigenvalue bound holds {bound_ok}, {count} rows, reruns byte-identical {identical}"),
    ))
}

/// `⟨0|R(J)|0⟩` by Horner's rule on vectors.
fn moment_functional(j: &JacobiMatrix, poly: &RealPolynomial) -> Real {
    let n = j.size();
    let apply = |v: &[Real]| -> Vec<Real> {
        (0..n)
            .map(|i| {
                let mut acc = &j.q()[i] * &v[i];
                if i > 0 {
                    acc += j.p_at(i) * &v[i - 1];
                }
                if i + 1 < n {
                    acc += j.p_at(i + 1) * &v[i + 1];
                }
                acc
            })
            .collect()
    };
    let mut e0 = vec![Real::zero(); n];
    e0[0] = Real::one();
    let mut acc = vec![Real::zero(); n];
    for c in poly.coeffs().iter().rev() {
        acc = apply(&acc);
        for (a, e) in acc.iter_mut().zip(&e0) {
            *a += c * e;
        }
    }
    acc[0].clone()
}

fn wronskian_and_quadrature() -> Verdict {
    let cfg = PrecisionConfig::default();
    let _g = cfg.install();
    let tol = 10f64.powi(-(cfg.digits() as i32 - 6));
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut w_max = 0.0f64;
    let mut g_max = 0.0f64;
    for _ in 0..200 {
        let size = rng.gen_range(2..=12usize);
        let q: Vec<f64> = (0..size).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let p: Vec<f64> = (1..size).map(|_| rng.gen_range(0.5..1.5)).collect();
        let j = JacobiMatrix::from_f64(&q, &p)?;
        let k = rng.gen_range(1..size.min(11));
        let z = r(rng.gen_range(-1.0..1.0));
        w_max = w_max.max(wronskian_residual(&j, k, &z)?.to_f64());
        let degree = rng.gen_range(0..2 * k);
        let coeffs: Vec<f64> = (0..=degree).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let poly = RealPolynomial::from_f64(&coeffs)?;
        let gauss = gauss_quadrature(&j, k, &poly, Exactness::Classical)?;
        let exact = moment_functional(&j, &poly);
        g_max = g_max.max((gauss - exact).abs().to_f64());
    }
    Ok((
        w_max <= tol && g_max <= tol,
        format!("200 cases: Wronskian {w_max:.2e}, quadrature {g_max:.2e} (tol {tol:.0e})"),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 14] = [
        ("fiber oracle", fiber_oracle),
        ("Chebyshev oracle", chebyshev_oracle),
        ("renormalization equation", renormalization_equation),
        ("trace identity", trace_identity),
        ("FG-flow identities", flow_identities),
        ("size-two degeneracy", size_two_degeneracy),
        ("flow integration", flow_integration),
        ("trace limit", trace_limit),
        ("coefficient decay", decay),
        ("q subperiod identity", q_subperiod),
        ("limit periodicity", limit_periodicity),
        ("density perturbation bound", density_perturbation),
        ("norm-closeness sweep", conjecture),
        ("Wronskian and quadrature", wronskian_and_quadrature),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2} {name}: {detail} ({:.1}s)", i + 1, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
