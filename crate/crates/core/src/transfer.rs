//! Discrete measures on fiber trees and the Ruelle operators
//! `L g(x) = (1/d) Σ_{Ty=x} g(y)` and `L₂ g(x) = (1/d) Σ_{Ty=x} g(y)/T'(y)²`.

use std::io::{Read, Write};

use num_traits::Zero;

use crate::dynamics::ExpandingMap;
use crate::error::{Error, Result};
use crate::precision::{checked_pow, PrecisionConfig};
use crate::real::{working_bits, Real};

/// Finite atomic measure with strictly ascending nodes and positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    nodes: Vec<Real>,
    weights: Vec<Real>,
}

impl DiscreteMeasure {
    /// Probability measure; atoms are sorted and exactly coincident nodes merged.
    pub fn new(nodes: Vec<Real>, weights: Vec<Real>) -> Result<Self> {
        let m = Self::new_finite(nodes, weights)?;
        let bits = m.nodes[0].prec().max(working_bits());
        let digits = Real::digits_for_bits(bits) as i32;
        // 10^-(digits-4) expressed as a power of two.
        let tol_exp = -(((digits - 4) as f64) * std::f64::consts::LOG2_10).floor() as i32;
        let tol = Real::exp2(tol_exp);
        let mass = m.total_mass();
        if (mass.clone() - 1.0).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "weights sum to {} instead of 1",
                mass.to_f64()
            )));
        }
        Ok(m)
    }

    /// Positive finite measure of arbitrary total mass.
    pub fn new_finite(nodes: Vec<Real>, weights: Vec<Real>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} nodes vs {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::InvalidInput(format!("non-positive weight {w}")));
        }
        let mut atoms: Vec<(Real, Real)> = nodes.into_iter().zip(weights).collect();
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
        let mut merged: Vec<(Real, Real)> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += &w,
                _ => merged.push((x, w)),
            }
        }
        let bits = merged[0].0.prec();
        let tol = PrecisionConfig::for_bits(bits).collision_tol();
        for pair in merged.windows(2) {
            let gap = &pair[1].0 - &pair[0].0;
            if gap <= tol {
                return Err(Error::RootCollision {
                    near: pair[0].0.to_f64(),
                    gap: gap.to_f64(),
                });
            }
        }
        let (nodes, weights) = merged.into_iter().unzip();
        Ok(DiscreteMeasure { nodes, weights })
    }

    pub fn dirac(x: Real) -> Self {
        let one = Real::from_i64(1).to_prec(x.prec());
        DiscreteMeasure {
            nodes: vec![x],
            weights: vec![one],
        }
    }

    /// Equal weights on the given nodes.
    pub fn uniform(nodes: Vec<Real>) -> Result<Self> {
        let count = nodes.len().max(1) as i64;
        let w = Real::ratio(1, count);
        let weights = vec![w; nodes.len()];
        Self::new(nodes, weights)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Real] {
        &self.nodes
    }

    pub fn weights(&self) -> &[Real] {
        &self.weights
    }

    pub fn total_mass(&self) -> Real {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(&Real) -> Real) -> Real {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| f(x) * w)
            .sum()
    }

    pub fn moment(&self, k: i32) -> Real {
        self.integrate(|x| x.powi(k))
    }

    /// Push-forward under `node ↦ t·node`; coincident images merge.
    pub fn dilate(&self, t: &Real) -> Result<Self> {
        Self::new_finite(
            self.nodes.iter().map(|x| x * t).collect(),
            self.weights.clone(),
        )
    }

    /// Density perturbation `f·m`, optionally renormalized to mass 1.
    pub fn reweighted(&self, density: &[Real], normalize: bool) -> Result<Self> {
        if density.len() != self.len() {
            return Err(Error::InvalidInput("density length mismatch".into()));
        }
        let mut weights: Vec<Real> = self.weights.iter().zip(density).map(|(w, f)| w * f).collect();
        if normalize {
            let mass: Real = weights.iter().sum();
            for w in &mut weights {
                *w /= &mass;
            }
        }
        Self::new_finite(self.nodes.clone(), weights)
    }

    /// CSV with header `node,weight`, ascending nodes, `digits` significant digits.
    pub fn write_csv<W: Write>(&self, out: W, digits: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidInput(format!("csv write: {e}"));
        w.write_record(["node", "weight"]).map_err(io)?;
        for (x, wt) in self.nodes.iter().zip(&self.weights) {
            w.write_record([x.to_decimal(digits), wt.to_decimal(digits)])
                .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidInput(format!("csv flush: {e}")))?;
        Ok(())
    }

    /// Reads the `node,weight` CSV form as a positive finite measure.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let headers = r
            .headers()
            .map_err(|e| Error::Parse(format!("csv header: {e}")))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["node", "weight"] {
            return Err(Error::Parse(format!("unexpected header {headers:?}")));
        }
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Parse(format!("csv record: {e}")))?;
            nodes.push(Real::parse(&rec[0])?);
            weights.push(Real::parse(&rec[1])?);
        }
        Self::new_finite(nodes, weights)
    }
}

/// Replaces each atom `(x, w)` by the d atoms `(y, w/d)` over `T(y) = x`.
pub fn pullback_measure(map: &ExpandingMap, m: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let _g = map.precision().install();
    map.limits().check_size(m.len() * map.degree())?;
    let d = map.degree() as f64;
    let mut nodes = Vec::with_capacity(m.len() * map.degree());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for (x, w) in m.nodes().iter().zip(m.weights()) {
        let share = w / d;
        for y in map.branch_roots(x)? {
            nodes.push(y);
            weights.push(share.clone());
        }
    }
    DiscreteMeasure::new_finite(nodes, weights)
}

/// Image measure `T_* m`; images closer than the collision tolerance are
/// merged at their weighted mean.
pub fn pushforward_measure(map: &ExpandingMap, m: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let _g = map.precision().install();
    let tol = map.precision().collision_tol();
    let mut atoms: Vec<(Real, Real)> = m
        .nodes()
        .iter()
        .zip(m.weights())
        .map(|(y, w)| (map.eval(y), w.clone()))
        .collect();
    atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    let mut nodes: Vec<Real> = Vec::new();
    let mut weights: Vec<Real> = Vec::new();
    let mut moment = Real::zero();
    let mut anchor = atoms[0].0.clone();
    for (x, w) in atoms {
        if !nodes.is_empty() && &x - &anchor <= tol {
            moment += &x * &w;
            *weights.last_mut().expect("nonempty") += &w;
        } else {
            if let (Some(node), Some(wt)) = (nodes.last_mut(), weights.last()) {
                *node = &moment / wt;
            }
            anchor = x.clone();
            moment = &x * &w;
            nodes.push(x);
            weights.push(w);
        }
    }
    if let (Some(node), Some(wt)) = (nodes.last_mut(), weights.last()) {
        *node = &moment / wt;
    }
    DiscreteMeasure::new_finite(nodes, weights)
}

/// Uniform measure on `T_n⁻¹(x0)`: the n-fold pullback of `δ_{x0}`.
pub fn balanced_measure_approx(map: &ExpandingMap, x0: &Real, n: usize) -> Result<DiscreteMeasure> {
    let _g = map.precision().install();
    if n == 0 {
        return Ok(DiscreteMeasure::dirac(x0.to_prec(map.precision().significand_bits)));
    }
    map.limits().check_size(checked_pow(map.degree(), n)?)?;
    let fiber = map.preimages(x0, n)?;
    DiscreteMeasure::uniform(fiber)
}

/// Which Ruelle operator: `L` (weight 1) or `L₂` (weight `1/T'²`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuelleWeight {
    Plain,
    InverseSquareDerivative,
}

impl RuelleWeight {
    pub fn from_exponent(exponent: u32) -> Result<Self> {
        match exponent {
            0 => Ok(RuelleWeight::Plain),
            2 => Ok(RuelleWeight::InverseSquareDerivative),
            other => Err(Error::InvalidInput(format!("weight exponent {other} not in {{0, 2}}"))),
        }
    }
}

/// One level of a fiber tree: leaves with the accumulated operator weight.
#[derive(Debug, Clone)]
pub struct FiberLevel {
    pub nodes: Vec<Real>,
    pub weights: Vec<Real>,
}

impl FiberLevel {
    pub fn root(x: &Real) -> Self {
        FiberLevel {
            nodes: vec![x.clone()],
            weights: vec![Real::from_i64(1)],
        }
    }

    /// Σ weight · g(node), summed left to right.
    pub fn apply(&self, g: &dyn Fn(&Real) -> Result<Real>) -> Result<Real> {
        let mut acc = Real::zero();
        for (y, w) in self.nodes.iter().zip(&self.weights) {
            acc += g(y)? * w;
        }
        Ok(acc)
    }

    pub fn total_weight(&self) -> Real {
        self.weights.iter().sum()
    }
}

/// Children of every leaf, in branch order, with weights updated for one
/// more application of the operator.
pub fn descend(map: &ExpandingMap, level: &FiberLevel, weight: RuelleWeight) -> Result<FiberLevel> {
    let d = map.degree();
    map.limits().check_tree(level.nodes.len() * d)?;
    let inv_d = Real::ratio(1, d as i64);
    let mut nodes = Vec::with_capacity(level.nodes.len() * d);
    let mut weights = Vec::with_capacity(nodes.capacity());
    for (x, w) in level.nodes.iter().zip(&level.weights) {
        let base = w * &inv_d;
        for y in map.branch_roots(x)? {
            let wy = match weight {
                RuelleWeight::Plain => base.clone(),
                RuelleWeight::InverseSquareDerivative => {
                    let slope = map.derivative_at(&y);
                    map.check_nonsingular(&y, &slope)?;
                    &base / &slope.square()
                }
            };
            nodes.push(y);
            weights.push(wy);
        }
    }
    Ok(FiberLevel { nodes, weights })
}

/// `(L or L₂)^m g(x)` by depth-m fiber-tree summation.
pub fn ruelle_apply(
    map: &ExpandingMap,
    weight: RuelleWeight,
    g: &dyn Fn(&Real) -> Result<Real>,
    x: &Real,
    m: usize,
) -> Result<Real> {
    let _g = map.precision().install();
    if m == 0 {
        return Err(Error::InvalidInput("ruelle_apply needs m >= 1".into()));
    }
    map.limits().check_tree(checked_pow(map.degree(), m)?)?;
    map.branch_roots(x)?;
    let mut level = FiberLevel::root(x);
    for _ in 0..m {
        level = descend(map, &level, weight)?;
    }
    level.apply(g)
}

/// `count` Chebyshev-spaced points `ξ cos(π(2j+1)/(2 count))` in ascending order.
pub fn chebyshev_grid(xi: &Real, count: usize) -> Vec<Real> {
    let mut pts: Vec<Real> = (0..count)
        .map(|j| {
            let angle = std::f64::consts::PI * (2 * j + 1) as f64 / (2 * count) as f64;
            xi * angle.cos()
        })
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts
}

/// Power-iteration estimate of the spectral radius ρ² of `L₂`.
#[derive(Debug, Clone)]
pub struct SpectralRadiusEstimate {
    /// Last ratio `‖L₂^{m+1} 1‖∞ / ‖L₂^m 1‖∞`.
    pub estimate: Real,
    /// All ratios for m = 0..m_max-1.
    pub ratios: Vec<Real>,
}

impl SpectralRadiusEstimate {
    /// |r_last − r_prev|, the convergence diagnostic.
    pub fn last_change(&self) -> Real {
        let n = self.ratios.len();
        (&self.ratios[n - 1] - &self.ratios[n - 2]).abs()
    }
}

/// Sup-norm power iteration of `L₂` on `g ≡ 1` over `grid`.
pub fn l2_spectral_radius(map: &ExpandingMap, grid: &[Real], m_max: usize) -> Result<SpectralRadiusEstimate> {
    let _g = map.precision().install();
    if m_max < 4 {
        return Err(Error::InvalidInput(format!("m_max = {m_max} < 4")));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    map.limits().check_tree(checked_pow(map.degree(), m_max)?)?;
    // norms[m] = max over grid of L₂^m 1 (all values are positive).
    let mut norms = vec![Real::zero(); m_max + 1];
    for x in grid {
        let mut level = FiberLevel::root(x);
        norms[0] = norms[0].clone().max_of(Real::from_i64(1));
        for norm in norms.iter_mut().skip(1) {
            level = descend(map, &level, RuelleWeight::InverseSquareDerivative)?;
            *norm = norm.clone().max_of(level.total_weight());
        }
    }
    let ratios: Vec<Real> = norms.windows(2).map(|w| &w[1] / &w[0]).collect();
    Ok(SpectralRadiusEstimate {
        estimate: ratios.last().cloned().expect("m_max >= 4"),
        ratios,
    })
}

/// Truncated series `Σ_{m≥1} L₂^m g(x)`.
#[derive(Debug, Clone)]
pub struct NeumannSum {
    pub total: Real,
    /// `terms[m-1] = L₂^m g(x)`.
    pub terms: Vec<Real>,
}

impl NeumannSum {
    /// Partial sums `Σ_{m ≤ k} L₂^m g(x)` for k = 1..=terms.len().
    pub fn partial_sums(&self) -> Vec<Real> {
        let mut acc = Real::zero();
        self.terms
            .iter()
            .map(|t| {
                acc += t;
                acc.clone()
            })
            .collect()
    }
}

/// `Σ_{m≥1} L₂^m g(x)`, stopping once a term falls below `tol` in magnitude.
pub fn neumann_l2_sum(
    map: &ExpandingMap,
    g: &dyn Fn(&Real) -> Result<Real>,
    x: &Real,
    tol: &Real,
) -> Result<NeumannSum> {
    let _g = map.precision().install();
    map.branch_roots(x)?;
    let mut level = FiberLevel::root(x);
    let mut terms: Vec<Real> = Vec::new();
    let mut non_decreasing = 0;
    loop {
        level = descend(map, &level, RuelleWeight::InverseSquareDerivative)?;
        let term = level.apply(g)?;
        let small = term.abs() < *tol;
        if let Some(prev) = terms.last() {
            if term.abs() >= prev.abs() {
                non_decreasing += 1;
                if non_decreasing >= 5 {
                    return Err(Error::NonConvergence(format!(
                        "terms grew over 5 consecutive steps (last {:e})",
                        term.to_f64()
                    )));
                }
            } else {
                non_decreasing = 0;
            }
        }
        terms.push(term);
        if small {
            break;
        }
    }
    let total = terms.iter().sum();
    Ok(NeumannSum { total, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::Limits;

    fn quad(c: f64) -> ExpandingMap {
        ExpandingMap::from_coeffs(&[-c, 0.0, 1.0], PrecisionConfig::default(), false).unwrap()
    }

    #[test]
    fn pullback_of_dirac_and_its_refinement() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let once = pullback_measure(&t, &DiscreteMeasure::dirac(Real::zero())).unwrap();
        let s3 = Real::from_i64(3).sqrt();
        assert_eq!(once.len(), 2);
        assert!((&once.nodes()[1] - &s3).abs() < Real::exp2(-240));
        assert_eq!(once.weights()[0], Real::ratio(1, 2));
        let twice = pullback_measure(&t, &once).unwrap();
        assert_eq!(twice.len(), 4);
        assert!(twice.weights().iter().all(|w| *w == Real::ratio(1, 4)));
        assert_eq!(twice.total_mass(), Real::from_i64(1));
        assert_eq!(twice, balanced_measure_approx(&t, &Real::zero(), 2).unwrap());
    }

    #[test]
    fn pushforward_undoes_pullback() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let fine = balanced_measure_approx(&t, &Real::zero(), 3).unwrap();
        let coarse = pushforward_measure(&t, &fine).unwrap();
        let expect = balanced_measure_approx(&t, &Real::zero(), 2).unwrap();
        assert_eq!(coarse.len(), 4);
        for (a, b) in coarse.nodes().iter().zip(expect.nodes()) {
            assert!((a - b).abs() < Real::exp2(-230));
        }
        assert!(coarse.weights().iter().all(|w| (w - &Real::ratio(1, 4)).abs() < Real::exp2(-250)));
    }

    #[test]
    fn zero_depth_is_dirac() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let m = balanced_measure_approx(&t, &Real::from_f64(0.25), 0).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.nodes()[0], Real::from_f64(0.25));
    }

    #[test]
    fn size_cap_enforced() {
        let t = quad(3.0).with_limits(Limits {
            size_cap: 16,
            tree_cap: 16,
        });
        let _g = t.precision().install();
        assert!(matches!(
            balanced_measure_approx(&t, &Real::zero(), 5),
            Err(Error::SizeLimit { .. })
        ));
    }

    #[test]
    fn ruelle_examples() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let id = |y: &Real| Ok(y.clone());
        let v = ruelle_apply(&t, RuelleWeight::Plain, &id, &Real::from_f64(1.1), 1).unwrap();
        assert!(v.abs() < Real::exp2(-240));
        let one = |_: &Real| Ok(Real::from_i64(1));
        let v = ruelle_apply(&t, RuelleWeight::Plain, &one, &Real::from_f64(-0.7), 1).unwrap();
        assert_eq!(v, Real::from_i64(1));
        let s = |y: &Real| t.schwarzian(y);
        let v = ruelle_apply(&t, RuelleWeight::InverseSquareDerivative, &s, &Real::zero(), 1).unwrap();
        assert!((v + Real::ratio(1, 24)).abs() < Real::exp2(-240));
    }

    #[test]
    fn neumann_of_zero_function() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let zero = |_: &Real| Ok(Real::zero());
        let s = neumann_l2_sum(&t, &zero, &Real::from_f64(0.3), &Real::from_f64(1e-12)).unwrap();
        assert!(s.total.is_zero());
    }

    #[test]
    fn csv_round_trip() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let m = balanced_measure_approx(&t, &Real::zero(), 3).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf, 77).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("node,weight\n"));
        let back = DiscreteMeasure::read_csv(&buf[..]).unwrap();
        let mut again = Vec::new();
        back.write_csv(&mut again, 77).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn dilation_to_zero_collapses() {
        let t = quad(3.0);
        let _g = t.precision().install();
        let m = balanced_measure_approx(&t, &Real::zero(), 2).unwrap();
        let collapsed = m.dilate(&Real::zero()).unwrap();
        assert_eq!(collapsed.len(), 1);
        assert_eq!(collapsed.weights()[0], Real::from_i64(1));
    }
}
