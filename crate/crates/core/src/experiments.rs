//! Experiment configuration, the suite runner and the norm-closeness sweep.
//!
//! Every artifact starts with a `# {json}` line holding the effective
//! configuration; [`read_provenance`] turns it back into the config.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::dynamics::ExpandingMap;
use crate::error::{Error, Result};
use crate::flow::{flow_derivative, identity_residuals, integrate_flow, trace_limit_sequence, FgSystem, Identity};
use crate::jacobi::{jacobi_from_measure_auto, density_perturbation_check, JacobiMatrix};
use crate::precision::{checked_pow, Limits, PrecisionConfig, DEFAULT_SIZE_CAP};
use crate::real::{Complex, Real};
use crate::renorm::{
    balanced_jacobi, composition_residual, continued_fraction_check, decay_profile, fiber_jacobi,
    limit_period_from, limit_period_matrix, q_subperiod_drift, renorm_residual, LimitPeriod,
};
use crate::transfer::{balanced_measure_approx, chebyshev_grid, l2_spectral_radius, ruelle_apply, RuelleWeight};

/// Significant digits for every number written to CSV.
pub const CSV_DIGITS: usize = 20;

/// Environment variable overriding `size_cap`.
pub const SIZE_CAP_ENV: &str = "JJL_SIZE_CAP";

/// Largest matrix the dense checks build.
const DENSE_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformGrid {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XGrid {
    Points(Vec<f64>),
    Uniform(UniformGrid),
}

impl Default for XGrid {
    fn default() -> Self {
        XGrid::Uniform(UniformGrid {
            count: 5,
            lo: -0.5,
            hi: 0.5,
        })
    }
}

impl XGrid {
    /// Grid points, ascending, without duplicates.
    pub fn values(&self) -> Vec<f64> {
        let mut v = match self {
            XGrid::Points(p) => p.clone(),
            XGrid::Uniform(u) if u.count == 1 => vec![u.lo],
            XGrid::Uniform(u) => (0..u.count)
                .map(|i| u.lo + (u.hi - u.lo) * i as f64 / (u.count - 1) as f64)
                .collect(),
        };
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

fn default_bits() -> u32 {
    256
}
fn default_n_max() -> usize {
    4
}
fn default_s_max() -> usize {
    3
}
fn default_output() -> String {
    "out".into()
}
fn default_size_cap() -> usize {
    DEFAULT_SIZE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Ascending coefficients of T.
    pub poly: Vec<f64>,
    #[serde(default = "default_bits")]
    pub precision_bits: u32,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_s_max")]
    pub s_max: usize,
    #[serde(default)]
    pub x_grid: XGrid,
    #[serde(default = "default_output")]
    pub output_path: String,
    #[serde(default)]
    pub allow_boundary: bool,
    #[serde(default = "default_size_cap")]
    pub size_cap: usize,
}

/// Parses and checks everything that does not need the map itself.
pub fn parse_config(document: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(document).map_err(|e| Error::Config(e.to_string()))?;
    cfg.check_fields()?;
    Ok(cfg)
}

impl ExperimentConfig {
    fn check_fields(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.poly.len() < 3 {
            return bad("poly", format!("need degree >= 2, got {} coefficients", self.poly.len()));
        }
        if self.poly.iter().any(|c| !c.is_finite()) {
            return bad("poly", "coefficients must be finite".into());
        }
        if self.poly.last() == Some(&0.0) {
            return bad("poly", "leading coefficient is zero".into());
        }
        if !(53..=1 << 16).contains(&self.precision_bits) {
            return bad("precision_bits", format!("{} not in [53, 65536]", self.precision_bits));
        }
        if self.n_max == 0 {
            return bad("n_max", "must be at least 1".into());
        }
        if self.size_cap < 2 {
            return bad("size_cap", "must be at least 2".into());
        }
        match &self.x_grid {
            XGrid::Points(p) if p.is_empty() => return bad("x_grid", "empty list".into()),
            XGrid::Points(p) if p.iter().any(|x| !x.is_finite()) => {
                return bad("x_grid", "points must be finite".into())
            }
            XGrid::Uniform(u) if u.count == 0 => return bad("x_grid.count", "must be at least 1".into()),
            XGrid::Uniform(u) if !(u.lo.is_finite() && u.hi.is_finite() && u.lo <= u.hi) => {
                return bad("x_grid", format!("need finite lo <= hi, got [{}, {}]", u.lo, u.hi))
            }
            _ => {}
        }
        if self.output_path.is_empty() {
            return bad("output_path", "must not be empty".into());
        }
        Ok(())
    }

    /// Applies `JJL_SIZE_CAP` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SIZE_CAP_ENV) {
            self.size_cap = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SIZE_CAP_ENV}: not an integer: {v:?}")))?;
            self.check_fields()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn provenance_line(&self) -> String {
        format!("# {}", self.to_json())
    }

    pub fn precision(&self) -> Result<PrecisionConfig> {
        PrecisionConfig::new(self.precision_bits)
    }

    pub fn limits(&self) -> Limits {
        Limits {
            size_cap: self.size_cap,
            ..Limits::default()
        }
    }
}

/// Recovers the config from the first line of an artifact.
pub fn read_provenance(artifact: &str) -> Result<ExperimentConfig> {
    let first = artifact.lines().next().unwrap_or_default();
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::Parse("artifact has no provenance line".into()))?;
    parse_config(json)
}

/// A validated config with its map and grid.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub map: ExpandingMap,
    pub grid: Vec<Real>,
    out_dir: PathBuf,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.check_fields()?;
        let precision = cfg.precision()?;
        let _g = precision.install();
        let map = ExpandingMap::from_coeffs(&cfg.poly, precision, cfg.allow_boundary)?.with_limits(cfg.limits());
        let xi = map.xi().to_f64();
        let mut grid = Vec::new();
        for x in cfg.x_grid.values() {
            let r = Real::from_f64(x);
            if r.abs() > *map.xi() {
                return Err(Error::OutOfRange {
                    what: "x_grid point".into(),
                    value: x,
                    bound: xi,
                });
            }
            grid.push(r);
        }
        let out_dir = PathBuf::from(&cfg.output_path);
        Ok(Experiment { cfg, map, grid, out_dir })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Base point for balanced approximations: 0.
    fn base_point(&self) -> Real {
        Real::zero()
    }

    /// Largest n ≤ `n_max` with `dⁿ⁺ᵉˣᵗʳᵃ ≤ cap`.
    fn depth_within(&self, extra: usize, cap: usize) -> usize {
        let d = self.map.degree();
        (1..=self.cfg.n_max)
            .take_while(|&n| checked_pow(d, n + extra).map(|s| s <= cap).unwrap_or(false))
            .last()
            .unwrap_or(0)
    }

    fn dense_cap(&self) -> usize {
        DENSE_LIMIT.min(self.cfg.size_cap)
    }

    /// Writes `name` under the output directory, provenance line first.
    pub fn write_artifact(
        &self,
        name: &str,
        body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.cfg.provenance_line())?;
        body(&mut buf)?;
        let path = self.out_dir.join(name);
        fs::write(&path, buf)?;
        Ok(path)
    }
}

fn fmt_real(x: &Real) -> String {
    x.to_decimal(CSV_DIGITS)
}

/// One pass/fail item; failures serialize to the report format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub check: String,
    pub expected: String,
    pub actual: String,
    pub tolerance: Option<f64>,
    #[serde(skip)]
    pub passed: bool,
}

impl Check {
    pub fn at_most(check: impl Into<String>, actual: f64, tol: f64) -> Self {
        Check {
            check: check.into(),
            expected: format!("<= {tol:e}"),
            actual: format!("{actual:e}"),
            tolerance: Some(tol),
            passed: actual <= tol,
        }
    }

    pub fn holds(check: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>, passed: bool) -> Self {
        Check {
            check: check.into(),
            expected: expected.into(),
            actual: actual.into(),
            tolerance: None,
            passed,
        }
    }

    /// A run error turned into a failed check.
    pub fn from_error(check: impl Into<String>, err: &Error) -> Self {
        Check::holds(check, "completion without error", err.to_string(), false)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {} (expected {})", self.check, self.actual, self.expected)
    }
}

/// Exit status for a run error: usage and config problems are 2, precision
/// exhaustion 3, everything else counts as an assertion failure.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Parse(_)
        | Error::InvalidInput(_)
        | Error::NonExpandingInput(_)
        | Error::OutOfRange { .. }
        | Error::SizeLimit { .. }
        | Error::Io(_) => 2,
        Error::PrecisionExhausted { .. } => 3,
        _ => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Renorm,
    Flow,
    Traces,
    Decay,
    LimitPeriod,
    Conjecture,
    All,
}

impl Suite {
    pub const PARTS: [Suite; 6] = [
        Suite::Renorm,
        Suite::Flow,
        Suite::Traces,
        Suite::Decay,
        Suite::LimitPeriod,
        Suite::Conjecture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Renorm => "renorm",
            Suite::Flow => "flow",
            Suite::Traces => "traces",
            Suite::Decay => "decay",
            Suite::LimitPeriod => "limitperiod",
            Suite::Conjecture => "conjecture",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::PARTS
            .iter()
            .chain(&[Suite::All])
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown suite {s:?}; expected one of renorm, flow, traces, decay, limitperiod, conjecture, all"
                ))
            })
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
    pub artifacts: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    /// JSON array of `{check, expected, actual, tolerance}` for the failures.
    pub fn failure_json(&self) -> String {
        serde_json::to_string_pretty(&self.failures()).expect("checks serialize")
    }

    fn merge(&mut self, other: SuiteReport) {
        self.checks.extend(other.checks);
        self.artifacts.extend(other.artifacts);
    }
}

pub fn run_suite(exp: &Experiment, suite: Suite) -> Result<SuiteReport> {
    let _g = exp.map.precision().install();
    match suite {
        Suite::Renorm => renorm_suite(exp),
        Suite::Flow => flow_suite(exp),
        Suite::Traces => traces_suite(exp),
        Suite::Decay => decay_suite(exp),
        Suite::LimitPeriod => limit_period_suite(exp),
        Suite::Conjecture => conjecture_suite(exp),
        Suite::All => {
            let mut all = SuiteReport::default();
            for part in Suite::PARTS {
                all.merge(run_suite(exp, part)?);
            }
            Ok(all)
        }
    }
}

/// Test points `{a, a+i, a+2}` with `a = max(3, ⌊ξ⌋+1)`, clear of the spectrum.
pub fn renorm_points(map: &ExpandingMap) -> Vec<Complex> {
    let a = map.xi().to_f64().floor().max(2.0) + 1.0;
    [(a, 0.0), (a, 1.0), (a + 2.0, 0.0)]
        .iter()
        .map(|&(re, im)| Complex::new(Real::from_f64(re), Real::from_f64(im)))
        .collect()
}

fn no_pairs(name: &str) -> Check {
    Check::holds(name, "at least one size within the cap", "none", false)
}

fn renorm_suite(exp: &Experiment) -> Result<SuiteReport> {
    let map = &exp.map;
    let d = map.degree();
    let mut report = SuiteReport::default();
    let n_top = exp.depth_within(1, exp.dense_cap()).min(4);
    if n_top == 0 {
        report.checks.push(no_pairs("renorm.pairs"));
        return Ok(report);
    }
    let zs = renorm_points(map);
    let tol_collision = map.precision().collision_tol();
    let cf_tol = Real::from_f64(1e-8);
    let mut rows = Vec::new();
    for n in 1..=n_top {
        let mut worst = Real::zero();
        let mut worst_transport = Real::zero();
        let mut worst_weight = Real::zero();
        let mut worst_cf = Real::zero();
        let mut cf_error = None;
        let inv = Real::from_usize(checked_pow(d, n + 1)?).recip();
        for x in &exp.grid {
            let coarse = fiber_jacobi(map, x, n)?;
            let fine = fiber_jacobi(map, x, n + 1)?;
            for z in &zs {
                let r = renorm_residual(&fine, &coarse, map, z)?;
                rows.push(format!("{},{},{},{},{}", n, fmt_real(x), fmt_real(&z.re), fmt_real(&z.im), fmt_real(&r)));
                worst = worst.max_of(r);
            }
            let pre = map.preimages(x, n + 1)?;
            for (a, b) in fine.eigenvalues().iter().zip(&pre) {
                worst_transport = worst_transport.max_of((a - b).abs());
            }
            for w in fine.spectral_measure()?.weights() {
                worst_weight = worst_weight.max_of((w - &inv).abs());
            }
            let s_cf = exp.cfg.s_max.min(checked_pow(d, n)? - 1);
            for c in map.critical_points() {
                match continued_fraction_check(&fine, &coarse, map, c, s_cf, &cf_tol) {
                    Ok(rep) => worst_cf = worst_cf.max_of(rep.max_residual()),
                    Err(e @ Error::ProportionalityViolation { .. }) => cf_error = Some(e),
                    Err(e) => return Err(e),
                }
            }
        }
        report
            .checks
            .push(Check::at_most(format!("renorm.residual[n={n}]"), worst.to_f64(), 1e-10));
        report.checks.push(Check::at_most(
            format!("renorm.eigenvalue_transport[n={}]", n + 1),
            worst_transport.to_f64(),
            tol_collision.to_f64(),
        ));
        report
            .checks
            .push(Check::at_most(format!("renorm.spectral_weights[n={}]", n + 1), worst_weight.to_f64(), 1e-10));
        report.checks.push(match cf_error {
            Some(e) => Check::from_error(format!("renorm.continued_fraction[n={n}]"), &e),
            None => Check::at_most(format!("renorm.continued_fraction[n={n}]"), worst_cf.to_f64(), 1e-8),
        });
    }
    report.checks.extend(density_perturbation_checks(exp)?);
    report.artifacts.push(exp.write_artifact("renorm.csv", |w| {
        writeln!(w, "n,x,z_re,z_im,residual")?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })?);
    Ok(report)
}

/// Density perturbations `(1−ε)^u` with |u| < 1, inside `[1−ε, 1/(1−ε)]`.
fn density_perturbation_checks(exp: &Experiment) -> Result<Vec<Check>> {
    let map = &exp.map;
    let cfg = map.precision();
    let depth = (1..=6)
        .take_while(|&k| checked_pow(map.degree(), k).map(|s| s <= 64.min(exp.cfg.size_cap)).unwrap_or(false))
        .last()
        .unwrap_or(1);
    let m = balanced_measure_approx(map, &exp.base_point(), depth)?;
    let j = jacobi_from_measure_auto(&m, m.len(), cfg)?;
    let mut out = Vec::new();
    for eps in [0.05, 0.1, 0.2] {
        let e = Real::from_f64(eps);
        let base = Real::from_f64(1.0 - eps);
        let mut violations = 0;
        let mut worst_ratio = 0.0f64;
        for trial in 0..8 {
            let f: Vec<Real> = (0..m.len())
                .map(|k| {
                    let u = 0.999 * (1.7 * k as f64 + 0.9 * trial as f64).cos();
                    Real::from_f64(base.to_f64().powf(u))
                })
                .collect();
            let s = 1 + trial % (j.size() - 1);
            let r = density_perturbation_check(&m, &f, &e, s, trial % 2 == 0, cfg)?;
            if !r.holds {
                violations += 1;
            }
            worst_ratio = worst_ratio.max((&r.lhs / &r.rhs).to_f64());
        }
        out.push(Check::holds(
            format!("renorm.density_perturbation[eps={eps}]"),
            "0 violations",
            format!("{violations} violations, max lhs/rhs {worst_ratio:.3e}"),
            violations == 0,
        ));
    }
    Ok(out)
}

/// Residual names checked by the flow suite, with their tolerances.
const FLOW_LIMITS: [(&str, f64); 8] = [
    ("commutant", 1e-10),
    ("commutant_eig", 1e-10),
    ("fd_form", 1e-10),
    ("trace_identity", 1e-10),
    ("offdiag_j", 1e-10),
    ("laplacian", 1e-8),
    ("laplacian_std", 1e-8),
    ("asym_commute", 1e-8),
];

fn flow_suite(exp: &Experiment) -> Result<SuiteReport> {
    let map = &exp.map;
    let d = map.degree();
    let mut report = SuiteReport::default();
    let n_top = exp.depth_within(0, 64.min(exp.cfg.size_cap)).min(3);
    if n_top == 0 {
        report.checks.push(no_pairs("flow.sizes"));
        return Ok(report);
    }
    let mut rows = Vec::new();
    let mut worst: Vec<Real> = vec![Real::zero(); FLOW_LIMITS.len()];
    let mut worst_skew = Real::zero();
    let mut worst_row = Real::zero();
    let mut worst_degenerate = Real::zero();
    for n in 1..=n_top {
        for x in &exp.grid {
            let j = fiber_jacobi(map, x, n)?;
            let sys = FgSystem::new(&j, map)?;
            let rep = identity_residuals(&sys, map, x, &Identity::ALL)?;
            for (name, value) in &rep.entries {
                rows.push(format!("{},{},{},{}", n, fmt_real(x), name, fmt_real(value)));
            }
            for (slot, (name, _)) in worst.iter_mut().zip(FLOW_LIMITS) {
                if let Some(v) = rep.get(name) {
                    *slot = slot.clone().max_of(v.clone());
                }
            }
            let g = &sys.std.g;
            worst_skew = worst_skew.max_of((g + &g.transpose()).max_abs());
            for k in 0..g.rows() {
                worst_row = worst_row.max_of(g[(0, k)].abs()).max_of(g[(k, 0)].abs());
            }
            if j.size() == 2 {
                let dj = flow_derivative(&j, map)?;
                worst_degenerate = worst_degenerate.max_of(g.max_abs()).max_of((&dj - &sys.std.f).max_abs());
            }
        }
    }
    for ((name, tol), v) in FLOW_LIMITS.iter().zip(&worst) {
        report.checks.push(Check::at_most(format!("flow.{name}"), v.to_f64(), *tol));
    }
    report.checks.push(Check::at_most("flow.g_skew", worst_skew.to_f64(), 1e-10));
    report.checks.push(Check::at_most("flow.g_first_row", worst_row.to_f64(), 1e-10));
    if d == 2 {
        report.checks.push(Check::at_most("flow.size_two_g_zero", worst_degenerate.to_f64(), 1e-12));
    }
    report.artifacts.push(exp.write_artifact("flow_identities.csv", |w| {
        writeln!(w, "n,x,identity,residual")?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })?);

    let (x0, x1) = (&exp.grid[0], &exp.grid[exp.grid.len() - 1]);
    let tol = 1e-8;
    let mut last_run = None;
    for n in 1..=n_top {
        let run = integrate_flow(map, n, x0, x1, tol)?;
        let direct = fiber_jacobi(map, x1, n)?;
        report.checks.push(Check::at_most(
            format!("flow.integration[n={n}]"),
            run.end.max_coeff_diff(&direct).to_f64(),
            10.0 * tol,
        ));
        last_run = Some(run);
    }
    if let Some(run) = last_run {
        report
            .artifacts
            .push(exp.write_artifact("flow_trajectory.csv", |w| run.write_csv(w, CSV_DIGITS))?);
    }
    Ok(report)
}

fn traces_suite(exp: &Experiment) -> Result<SuiteReport> {
    let map = &exp.map;
    let mut report = SuiteReport::default();
    let tree_cap = map.limits().tree_cap;
    let n_top = exp.depth_within(0, tree_cap.min(exp.cfg.size_cap));
    let tol = Real::from_f64(1e-12);
    let mut rows = Vec::new();
    let mut worst_tele = Real::zero();
    let s_t = |y: &Real| map.schwarzian(y);
    for x in &exp.grid {
        let seq = trace_limit_sequence(map, x, n_top, &tol)?;
        for r in &seq {
            rows.push(format!(
                "{},{},{},{},{}",
                fmt_real(x),
                r.n,
                fmt_real(&r.s_n),
                fmt_real(&r.limit),
                fmt_real(&r.gap)
            ));
        }
        let tail: Vec<&Real> = seq.iter().filter(|r| r.n >= 2).map(|r| &r.gap).collect();
        let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
        report.checks.push(Check::holds(
            format!("traces.gap_decreasing[x={}]", x.to_f64()),
            "strictly decreasing for n >= 2",
            tail.iter().map(|g| format!("{:.3e}", g.to_f64())).collect::<Vec<_>>().join(" "),
            decreasing,
        ));
        if let Some(last) = seq.last() {
            report
                .checks
                .push(Check::at_most(format!("traces.final_gap[x={}]", x.to_f64()), last.gap.to_f64(), 1e-4));
            report.checks.push(Check::holds(
                format!("traces.limit_positive[x={}]", x.to_f64()),
                "> 1e-4",
                format!("{:e}", last.limit.to_f64()),
                last.limit > 1e-4,
            ));
        }
        for n in 1..=2usize {
            if checked_pow(map.degree(), n + 1)? > tree_cap {
                break;
            }
            let lhs = ruelle_apply(
                map,
                RuelleWeight::InverseSquareDerivative,
                &|y: &Real| map.iterate_schwarzian(y, n + 1),
                x,
                n + 1,
            )?;
            let mut rhs = Real::zero();
            for m in 1..=n + 1 {
                rhs += ruelle_apply(map, RuelleWeight::InverseSquareDerivative, &s_t, x, m)?;
            }
            worst_tele = worst_tele.max_of((lhs - rhs).abs());
        }
    }
    report.checks.push(Check::at_most("traces.telescoping", worst_tele.to_f64(), 1e-10));
    report.artifacts.push(exp.write_artifact("traces.csv", |w| {
        writeln!(w, "x,n,s_n,limit,gap")?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })?);
    Ok(report)
}

fn decay_suite(exp: &Experiment) -> Result<SuiteReport> {
    let map = &exp.map;
    let d = map.degree();
    let mut report = SuiteReport::default();
    let n_top = exp.depth_within(2, exp.cfg.size_cap);
    if n_top == 0 {
        report.checks.push(no_pairs("decay.depth"));
        return Ok(report);
    }
    let x0 = exp.base_point();
    let prof = decay_profile(map, &x0, n_top)?;
    let ratios = prof.ratios();
    let worst_ratio = ratios.iter().fold(Real::zero(), |a, r| a.max_of(r.clone()));
    report.checks.push(Check::holds(
        "decay.ratios_below_one",
        "all p_{d^{n+1}}/p_{d^n} < 1",
        format!("max ratio {}", worst_ratio.to_f64()),
        worst_ratio < 1.0,
    ));
    if ratios.len() >= 6 {
        let diffs: Vec<Real> = ratios[3..].windows(2).map(|w| (&w[1] - &w[0]).abs()).collect();
        report.checks.push(Check::holds(
            "decay.ratios_stabilize",
            "|r_{n+1} - r_n| decreasing for n >= 3",
            diffs.iter().map(|g| format!("{:.3e}", g.to_f64())).collect::<Vec<_>>().join(" "),
            diffs.windows(2).all(|w| w[1] < w[0]),
        ));
    }
    report
        .checks
        .push(Check::at_most("decay.q_subperiod", prof.max_q_drift.to_f64(), 1e-10));

    let tree_m = (4..=10)
        .take_while(|&m| checked_pow(d, m).map(|s| s <= map.limits().tree_cap).unwrap_or(false))
        .last();
    if let Some(m_max) = tree_m {
        let grid = chebyshev_grid(map.xi(), 33);
        let est = l2_spectral_radius(map, &grid, m_max)?;
        let rho2 = est.estimate.to_f64();
        let dd = (d * d) as f64;
        report.checks.push(Check::holds(
            "decay.rho2_d2_below_one",
            "rho^2 d^2 < 1",
            format!("{:e}", rho2 * dd),
            rho2 * dd < 1.0,
        ));
        report
            .checks
            .push(Check::at_most("decay.power_iteration_converged", est.last_change().to_f64(), 1e-3));
        if n_top >= 5 {
            let predicted = rho2.sqrt() * d as f64;
            let fitted = prof.fitted_rate.to_f64();
            report.checks.push(Check::at_most(
                "decay.fitted_rate_vs_rho",
                (fitted - predicted).abs() / predicted,
                0.1,
            ));
        }
    }

    let size = 4 * d + 1;
    let depth = (1..).find(|&k| checked_pow(d, k).map(|s| s > size).unwrap_or(true)).unwrap_or(1) + 1;
    if checked_pow(d, depth)? <= exp.cfg.size_cap {
        let j = balanced_jacobi(map, &x0, depth, size)?;
        let xi = map.xi();
        let zgrid: Vec<Real> = (0..20).map(|i| xi * (-1.0 + 2.0 * i as f64 / 19.0)).collect();
        let mut worst = Real::zero();
        for s in 1..=2 {
            worst = worst.max_of(composition_residual(&j, map, s, &zgrid)?);
        }
        report.checks.push(Check::at_most("decay.composition", worst.to_f64(), 1e-8));
    }
    report
        .artifacts
        .push(exp.write_artifact("decay.csv", |w| prof.write_csv(w, CSV_DIGITS))?);
    Ok(report)
}

fn limit_period_suite(exp: &Experiment) -> Result<SuiteReport> {
    let map = &exp.map;
    let d = map.degree();
    let s_max = exp.cfg.s_max;
    let mut report = SuiteReport::default();
    let x0 = exp.base_point();
    let mut rows: Vec<LimitPeriod> = Vec::new();
    let mut worst_q = Real::zero();
    for n in 1..=exp.cfg.n_max {
        let dn = checked_pow(d, n)?;
        let needed = (s_max + 1) * dn * dn + 1;
        // limit_period_matrix goes one level past the first depth covering `needed`.
        let mut atoms = 1usize;
        while atoms < needed {
            atoms = atoms.saturating_mul(d);
        }
        if atoms.saturating_mul(d) > exp.cfg.size_cap {
            break;
        }
        let j = limit_period_matrix(map, &x0, n, s_max)?;
        worst_q = worst_q.max_of(q_subperiod_drift(&j, d));
        rows.push(limit_period_from(&j, d, n, s_max)?);
    }
    if rows.len() < 2 {
        report.checks.push(Check::holds(
            "limitperiod.levels",
            "at least two levels within the size cap",
            format!("{}", rows.len()),
            false,
        ));
    } else {
        report.checks.push(Check::holds(
            "limitperiod.eps_decreasing",
            "eps(n) strictly decreasing",
            rows.iter().map(|r| format!("{:.3e}", r.eps_dn.to_f64())).collect::<Vec<_>>().join(" "),
            rows.windows(2).all(|w| w[1].eps_dn < w[0].eps_dn),
        ));
    }
    report.checks.push(Check::at_most("limitperiod.q_subperiod", worst_q.to_f64(), 1e-10));
    report
        .artifacts
        .push(exp.write_artifact("limitperiod.csv", |w| LimitPeriod::write_csv(&rows, w, CSV_DIGITS))?);
    Ok(report)
}

/// One row of [`conjecture_sweep`].
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n: usize,
    pub x: Real,
    /// `‖J_n(x) − J_n(0)‖₂`.
    pub opnorm_diff: Real,
    /// `max_j |λ_j(x) − λ_j(0)|`.
    pub max_eig_dist: Real,
    /// `|x| / min |T_n'|` over both fibers.
    pub bound: Real,
}

/// Distances between `J_n(x)` and `J_n(0)` for every n whose matrix fits the
/// dense limit, rows ordered by (n, x).
pub fn conjecture_sweep(exp: &Experiment) -> Result<Vec<SweepRow>> {
    let map = &exp.map;
    let _g = map.precision().install();
    let n_top = exp.depth_within(0, exp.dense_cap());
    let zero = Real::zero();
    let mut rows = Vec::new();
    for n in 1..=n_top {
        let j0 = fiber_jacobi(map, &zero, n)?;
        let ev0 = j0.eigenvalues();
        let min_derivative = |ev: &[Real]| {
            ev.iter()
                .map(|l| map.iterate_jet(l, n).d1.abs())
                .reduce(|a, b| a.min_of(b))
                .expect("non-empty spectrum")
        };
        let d0 = min_derivative(&ev0);
        for x in &exp.grid {
            let jx = fiber_jacobi(map, x, n)?;
            let evx = jx.eigenvalues();
            let max_eig_dist = evx
                .iter()
                .zip(&ev0)
                .fold(Real::zero(), |acc, (a, b)| acc.max_of((a - b).abs()));
            let dmin = d0.clone().min_of(min_derivative(&evx));
            rows.push(SweepRow {
                n,
                x: x.clone(),
                opnorm_diff: jx.distance(&j0)?,
                max_eig_dist,
                bound: x.abs() / dmin,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "n,x,opnorm_diff,max_eig_dist")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.n,
            fmt_real(&r.x),
            fmt_real(&r.opnorm_diff),
            fmt_real(&r.max_eig_dist)
        )?;
    }
    Ok(())
}

/// Mean-value bound on the eigenvalue column, 10% slack, one check per n.
pub fn sweep_checks(rows: &[SweepRow]) -> Vec<Check> {
    let mut out = Vec::new();
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.dedup();
    for n in ns {
        let mut worst = 0.0f64;
        let mut ok = true;
        for r in rows.iter().filter(|r| r.n == n) {
            let limit = &r.bound * 1.1;
            ok &= r.max_eig_dist <= limit;
            if !r.bound.is_zero() {
                worst = worst.max((&r.max_eig_dist / &r.bound).to_f64());
            } else if !r.max_eig_dist.is_zero() {
                worst = f64::INFINITY;
            }
        }
        out.push(Check::holds(
            format!("conjecture.eigen_bound[n={n}]"),
            "max |dlambda| <= 1.1 |x| / min|T_n'|",
            format!("max ratio {worst:.4}"),
            ok,
        ));
    }
    out
}

fn conjecture_suite(exp: &Experiment) -> Result<SuiteReport> {
    let rows = conjecture_sweep(exp)?;
    let mut report = SuiteReport {
        checks: sweep_checks(&rows),
        ..Default::default()
    };
    report
        .artifacts
        .push(exp.write_artifact("conjecture.csv", |w| write_sweep_csv(&rows, w))?);
    Ok(report)
}

/// `J_n(x)` for every n within the size cap and every grid point.
pub fn write_fibers(exp: &Experiment) -> Result<PathBuf> {
    let map = &exp.map;
    let _g = map.precision().install();
    let n_top = exp.depth_within(0, exp.cfg.size_cap);
    let mut rows = Vec::new();
    for n in 1..=n_top {
        for x in &exp.grid {
            let j: JacobiMatrix = fiber_jacobi(map, x, n)?;
            for k in 0..j.size() {
                let p = if k + 1 < j.size() { fmt_real(j.p_at(k + 1)) } else { String::new() };
                rows.push(format!("{},{},{},{},{}", n, fmt_real(x), k, fmt_real(&j.q()[k]), p));
            }
        }
    }
    exp.write_artifact("fiber.csv", |w| {
        writeln!(w, "n,x,index,q,p")?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })
}
