//! Quantum Itō calculus on formal sums `Σ x_{αβ} dB^{αβ}` with numeric
//! operator coefficients.
//!
//! Increments are indexed as `dB^{αβ}` with `α, β ∈ {0, 1..=n}`:
//! `dB^{00} = dt`, `dB^{j0} = dB_j†`, `dB^{0k} = dB_k`, `dB^{jk} = dΛ_jk`.
//! The Itō table then collapses to `dB^{αβ} dB^{γδ} = δ_{βγ} dB^{αδ}` for
//! `β = γ ≠ 0`, and zero otherwise.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{HilbertSpace, Operator, I};
use crate::slh::{lindbladian, superop_m, superop_n, superop_s, SlhTriple, VALIDATION_TOL};

/// Coefficients below this Frobenius norm are dropped.
pub const CANONICAL_EPS: f64 = 1e-14;

/// A basic increment; channel indices are zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Increment {
    Dt,
    /// Annihilation `dB_k`.
    DB(usize),
    /// Creation `dB_j†`.
    DBdag(usize),
    /// Gauge `dΛ_jk`.
    DLambda(usize, usize),
}

impl Increment {
    /// `(α, β)` with `0` standing for the time/vacuum index and `c + 1` for channel `c`.
    fn indices(self) -> (usize, usize) {
        match self {
            Increment::Dt => (0, 0),
            Increment::DB(k) => (0, k + 1),
            Increment::DBdag(j) => (j + 1, 0),
            Increment::DLambda(j, k) => (j + 1, k + 1),
        }
    }

    fn from_indices(alpha: usize, beta: usize) -> Increment {
        match (alpha, beta) {
            (0, 0) => Increment::Dt,
            (0, k) => Increment::DB(k - 1),
            (j, 0) => Increment::DBdag(j - 1),
            (j, k) => Increment::DLambda(j - 1, k - 1),
        }
    }

    /// Product of two increments per the Itō table.
    pub fn product(self, other: Increment) -> Option<Increment> {
        let (a, b) = self.indices();
        let (c, d) = other.indices();
        (b != 0 && b == c).then(|| Increment::from_indices(a, d))
    }

    pub fn adjoint(self) -> Increment {
        let (a, b) = self.indices();
        Increment::from_indices(b, a)
    }

    pub fn max_channel(self) -> Option<usize> {
        match self {
            Increment::Dt => None,
            Increment::DB(k) | Increment::DBdag(k) => Some(k),
            Increment::DLambda(j, k) => Some(j.max(k)),
        }
    }

    /// All `(n + 1)²` increments for multiplicity `n`.
    pub fn all(n: usize) -> Vec<Increment> {
        let mut out = Vec::with_capacity((n + 1) * (n + 1));
        for a in 0..=n {
            for b in 0..=n {
                out.push(Increment::from_indices(a, b));
            }
        }
        out
    }
}

impl fmt::Display for Increment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Increment::Dt => write!(f, "dt"),
            Increment::DB(k) => write!(f, "dB[{k}]"),
            Increment::DBdag(j) => write!(f, "dB†[{j}]"),
            Increment::DLambda(j, k) => write!(f, "dΛ[{j},{k}]"),
        }
    }
}

/// `Σ x_{αβ} dB^{αβ}` in canonical form.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoExpr {
    n: usize,
    space: HilbertSpace,
    terms: BTreeMap<Increment, Operator>,
}

impl ItoExpr {
    pub fn zero(n: usize, space: &HilbertSpace) -> Self {
        Self { n, space: space.clone(), terms: BTreeMap::new() }
    }

    pub fn single(n: usize, inc: Increment, coeff: Operator) -> Result<Self> {
        let mut e = Self::zero(n, coeff.space());
        e.add_term(inc, coeff)?;
        Ok(e)
    }

    pub fn multiplicity(&self) -> usize {
        self.n
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    /// Stored coefficient or the zero operator.
    pub fn coefficient(&self, inc: Increment) -> Operator {
        self.terms.get(&inc).cloned().unwrap_or_else(|| Operator::zeros(&self.space))
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Increment, &Operator)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Adds `coeff · inc`, merging with any existing coefficient.
    pub fn add_term(&mut self, inc: Increment, coeff: Operator) -> Result<()> {
        if let Some(ch) = inc.max_channel() {
            if ch >= self.n {
                return Err(Error::Channel { channel: ch, n: self.n });
            }
        }
        if coeff.space() != &self.space {
            return Err(Error::SpaceMismatch(format!(
                "coefficient on {} in expression on {}",
                coeff.space(),
                self.space
            )));
        }
        let merged = match self.terms.remove(&inc) {
            Some(existing) => existing + coeff,
            None => coeff,
        };
        if merged.frobenius_norm() >= CANONICAL_EPS {
            self.terms.insert(inc, merged);
        }
        Ok(())
    }

    fn check_compatible(&self, other: &ItoExpr) -> Result<()> {
        if self.n != other.n {
            return Err(Error::Multiplicity(self.n, other.n));
        }
        if self.space != other.space {
            return Err(Error::SpaceMismatch(format!("{} vs {}", self.space, other.space)));
        }
        Ok(())
    }

    pub fn add(&self, other: &ItoExpr) -> Result<ItoExpr> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (inc, c) in &other.terms {
            out.add_term(*inc, c.clone())?;
        }
        Ok(out)
    }

    /// `(Σ x dB)† = Σ x† dB†`: coefficients are adapted and commute with the increments.
    pub fn adjoint(&self) -> ItoExpr {
        let mut out = Self::zero(self.n, &self.space);
        for (inc, c) in &self.terms {
            out.add_term(inc.adjoint(), c.adjoint()).expect("same shape");
        }
        out
    }

    /// Multiply every coefficient on the left by `op`.
    pub fn left_mul(&self, op: &Operator) -> Result<ItoExpr> {
        op.check_space(&Operator::zeros(&self.space))?;
        let mut out = Self::zero(self.n, &self.space);
        for (inc, c) in &self.terms {
            out.add_term(*inc, op * c)?;
        }
        Ok(out)
    }

    pub fn right_mul(&self, op: &Operator) -> Result<ItoExpr> {
        op.check_space(&Operator::zeros(&self.space))?;
        let mut out = Self::zero(self.n, &self.space);
        for (inc, c) in &self.terms {
            out.add_term(*inc, c * op)?;
        }
        Ok(out)
    }

    /// Largest coefficient Frobenius norm (0 for the empty expression).
    pub fn max_norm(&self) -> f64 {
        self.terms.values().map(Operator::frobenius_norm).fold(0.0, f64::max)
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_norm() < tol
    }
}

/// Product `(dX)(dY)` per the Itō table, coefficients multiplied in order.
pub fn ito_product(x: &ItoExpr, y: &ItoExpr) -> Result<ItoExpr> {
    x.check_compatible(y)?;
    let mut out = ItoExpr::zero(x.n, &x.space);
    for (ix, cx) in &x.terms {
        for (iy, cy) in &y.terms {
            if let Some(inc) = ix.product(*iy) {
                out.add_term(inc, cx * cy)?;
            }
        }
    }
    Ok(out)
}

/// `dG = −(½L†L + iH)dt + Σ_j L_j dB_j† − Σ_jk L_j†S_jk dB_k + Σ_jk (S_jk − δ_jk) dΛ_jk`.
pub fn generator_from_slh(g: &SlhTriple) -> Result<ItoExpr> {
    g.check(VALIDATION_TOL)?;
    let n = g.multiplicity();
    let space = g.space();
    let mut out = ItoExpr::zero(n, space);
    let mut drift = g.h() * I;
    for l in g.l_vec() {
        drift += &((l.adjoint() * l) * 0.5);
    }
    out.add_term(Increment::Dt, -drift)?;
    for j in 0..n {
        out.add_term(Increment::DBdag(j), g.l(j).clone())?;
        for k in 0..n {
            out.add_term(Increment::DB(k), -(g.l(j).adjoint() * g.s(j, k)))?;
            let mut gauge = g.s(j, k).clone();
            if j == k {
                gauge -= &Operator::identity(space);
            }
            out.add_term(Increment::DLambda(j, k), gauge)?;
        }
    }
    Ok(out)
}

/// `dG + dG† + (dG†)(dG)`; zero for an isometric flow.
pub fn isometry_defect(dg: &ItoExpr) -> Result<ItoExpr> {
    let dgd = dg.adjoint();
    dg.add(&dgd)?.add(&ito_product(&dgd, dg)?)
}

/// `dG + dG† + (dG)(dG†)`; zero for a co-isometric flow.
pub fn coisometry_defect(dg: &ItoExpr) -> Result<ItoExpr> {
    let dgd = dg.adjoint();
    dg.add(&dgd)?.add(&ito_product(dg, &dgd)?)
}

/// `dj(X) = ℒX dt + Σ ℳ_iX dB_i† + Σ 𝒩_iX dB_i + Σ 𝒮_jkX dΛ_jk` at `t = 0`.
pub fn heisenberg_increment(x: &Operator, g: &SlhTriple) -> Result<ItoExpr> {
    x.check_space(g.h())?;
    let n = g.multiplicity();
    let mut out = ItoExpr::zero(n, g.space());
    out.add_term(Increment::Dt, lindbladian(g, x)?)?;
    for i in 0..n {
        out.add_term(Increment::DBdag(i), superop_m(g, i, x)?)?;
        out.add_term(Increment::DB(i), superop_n(g, i, x)?)?;
        for k in 0..n {
            out.add_term(Increment::DLambda(i, k), superop_s(g, i, k, x)?)?;
        }
    }
    Ok(out)
}

/// Outcome of [`table_self_test`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableSelfTest {
    pub multiplicity: usize,
    pub products_checked: usize,
    pub failures: Vec<String>,
}

impl TableSelfTest {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// The Hudson-Parthasarathy table written out case by case.
fn reference_product(x: Increment, y: Increment) -> Option<Increment> {
    use Increment::*;
    match (x, y) {
        (DB(j), DBdag(k)) => (j == k).then_some(Dt),
        (DB(j), DLambda(k, l)) => (j == k).then_some(DB(l)),
        (DLambda(i, j), DBdag(k)) => (j == k).then_some(DBdag(i)),
        (DLambda(i, j), DLambda(k, l)) => (j == k).then_some(DLambda(i, l)),
        _ => None,
    }
}

/// Checks every product against the case-by-case table, associativity of
/// all triple products and `(dX dY)† = dY† dX†`.
pub fn table_self_test(n: usize) -> TableSelfTest {
    let all = Increment::all(n);
    let mut failures = Vec::new();
    let mut checked = 0;
    let chain = |a: Option<Increment>, b: Increment| a.and_then(|a| a.product(b));
    for &x in &all {
        for &y in &all {
            checked += 1;
            let xy = x.product(y);
            if xy != reference_product(x, y) {
                failures.push(format!("{x}·{y}"));
            }
            if xy.map(Increment::adjoint) != y.adjoint().product(x.adjoint()) {
                failures.push(format!("({x}·{y})†"));
            }
            for &z in &all {
                let right = y.product(z).and_then(|yz| x.product(yz));
                if chain(xy, z) != right {
                    failures.push(format!("{x}·{y}·{z}"));
                }
            }
        }
    }
    TableSelfTest { multiplicity: n, products_checked: checked, failures }
}

/// Symbolic template of the generator, for reports.
pub const GENERATOR_TEMPLATE: &str =
    "(-0.5*L†L - i*H)·dt + Σ_j L[j]·dB†[j] - Σ_jk L[j]†S[j,k]·dB[k] + Σ_jk (S[j,k] - δ[j,k])·dΛ[j,k]";

fn describe_coefficient(c: &Operator) -> String {
    let z = c.entry(0, 0);
    let scalar = Operator::identity(c.space()) * z;
    if c.distance(&scalar).map(|d| d < 1e-12).unwrap_or(false) {
        if z.im == 0.0 {
            format!("{}*I", fmt_real(z.re))
        } else {
            format!("({}{:+}i)*I", fmt_real(z.re), z.im)
        }
    } else {
        format!("X<|{:.3e}|>", c.frobenius_norm())
    }
}

fn fmt_real(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e6 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

impl fmt::Display for ItoExpr {
    /// Scalar multiples of the identity print as numbers; other coefficients
    /// print as `X<|‖x‖_F|>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(inc, c)| format!("{}·{}", describe_coefficient(c), inc))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{annihilator, number, Operator};
    use crate::testing::{random_hermitian, random_operator, random_triple, TestRng};
    use num_complex::Complex64;

    fn id_expr(n: usize, inc: Increment) -> ItoExpr {
        let space = HilbertSpace::simple(2).unwrap();
        ItoExpr::single(n, inc, Operator::identity(&space)).unwrap()
    }

    #[test]
    fn table_entries() {
        let dt = ito_product(&id_expr(1, Increment::DB(0)), &id_expr(1, Increment::DBdag(0))).unwrap();
        assert_eq!(dt.len(), 1);
        assert_eq!(dt.coefficient(Increment::Dt), Operator::identity(dt.space()));

        let zero = ito_product(&id_expr(1, Increment::DBdag(0)), &id_expr(1, Increment::DB(0))).unwrap();
        assert!(zero.is_empty());

        let mut rng = TestRng::new(1);
        let a = random_operator(&mut rng, 2);
        let b = random_operator(&mut rng, 2);
        let x = ItoExpr::single(3, Increment::DLambda(0, 1), a.clone()).unwrap();
        let y = ItoExpr::single(3, Increment::DLambda(1, 2), b.clone()).unwrap();
        let p = ito_product(&x, &y).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p.coefficient(Increment::DLambda(0, 2)).distance(&(&a * &b)).unwrap() < 1e-15);
    }

    #[test]
    fn full_table_by_enumeration() {
        let n = 3;
        for x in Increment::all(n) {
            for y in Increment::all(n) {
                let expected = match (x, y) {
                    (Increment::DLambda(i, j), Increment::DLambda(k, l)) if j == k => {
                        Some(Increment::DLambda(i, l))
                    }
                    (Increment::DLambda(i, j), Increment::DBdag(k)) if j == k => Some(Increment::DBdag(i)),
                    (Increment::DB(i), Increment::DLambda(k, l)) if i == k => Some(Increment::DB(l)),
                    (Increment::DB(i), Increment::DBdag(k)) if i == k => Some(Increment::Dt),
                    _ => None,
                };
                assert_eq!(x.product(y), expected, "{x} * {y}");
            }
        }
    }

    #[test]
    fn increment_products_associate() {
        let n = 2;
        for x in Increment::all(n) {
            for y in Increment::all(n) {
                for z in Increment::all(n) {
                    let left = x.product(y).and_then(|xy| xy.product(z));
                    let right = y.product(z).and_then(|yz| x.product(yz));
                    assert_eq!(left, right);
                }
            }
        }
    }

    #[test]
    fn self_test_passes() {
        for n in 1..=3 {
            let r = table_self_test(n);
            assert!(r.passed(), "{:?}", r.failures);
            assert_eq!(r.products_checked, (n + 1).pow(4));
        }
    }

    #[test]
    fn mismatches_are_errors() {
        let a = id_expr(1, Increment::Dt);
        let b = id_expr(2, Increment::Dt);
        assert!(matches!(ito_product(&a, &b), Err(Error::Multiplicity(1, 2))));
        let c = ItoExpr::single(1, Increment::Dt, Operator::identity(&HilbertSpace::simple(3).unwrap()))
            .unwrap();
        assert!(matches!(ito_product(&a, &c), Err(Error::SpaceMismatch(_))));
        let mut e = ItoExpr::zero(1, &HilbertSpace::simple(2).unwrap());
        assert!(e.add_term(Increment::DB(1), Operator::identity(&HilbertSpace::simple(2).unwrap())).is_err());
    }

    #[test]
    fn trivial_generator_vanishes() {
        let space = HilbertSpace::simple(3).unwrap();
        let dg = generator_from_slh(&SlhTriple::trivial(&space, 2).unwrap()).unwrap();
        assert!(dg.is_empty());
        assert!(isometry_defect(&dg).unwrap().is_empty());
    }

    #[test]
    fn pure_coupling_generator() {
        let mut rng = TestRng::new(7);
        let l = random_operator(&mut rng, 3);
        let space = l.space().clone();
        let dg = generator_from_slh(&SlhTriple::single(l.clone(), Operator::zeros(&space)).unwrap()).unwrap();
        assert!(dg.coefficient(Increment::Dt).distance(&((l.adjoint() * &l) * -0.5)).unwrap() < 1e-15);
        assert_eq!(dg.coefficient(Increment::DBdag(0)), l);
        assert!(dg.coefficient(Increment::DB(0)).distance(&-l.adjoint()).unwrap() < 1e-15);
        assert!(dg.coefficient(Increment::DLambda(0, 0)).frobenius_norm() == 0.0);
    }

    #[test]
    fn cavity_generator_termwise() {
        let d = 4;
        let (theta, gamma, omega): (f64, f64, f64) = (0.6, 1.5, 0.9);
        let a = annihilator(d).unwrap();
        let n = number(d).unwrap();
        let l = &a * gamma.sqrt();
        let h = &n * omega;
        let phase = Complex64::from_polar(1.0, theta);
        let g = SlhTriple::with_phase(theta, l.clone(), h.clone()).unwrap();
        let dg = generator_from_slh(&g).unwrap();
        let id = Operator::identity(g.space());
        // Assembled by hand: −(γ/2 a†a + iω a†a) dt + √γ a dB† − √γ e^{iθ} a† dB + (e^{iθ} − 1) dΛ.
        let dt = &n * -Complex64::new(gamma / 2.0, omega);
        assert!(dg.coefficient(Increment::Dt).distance(&dt).unwrap() < 1e-14);
        assert!(dg.coefficient(Increment::DBdag(0)).distance(&l).unwrap() < 1e-14);
        let db = a.adjoint() * (-phase * gamma.sqrt());
        assert!(dg.coefficient(Increment::DB(0)).distance(&db).unwrap() < 1e-14);
        let gauge = &id * (phase - 1.0);
        assert!(dg.coefficient(Increment::DLambda(0, 0)).distance(&gauge).unwrap() < 1e-14);
        assert!(isometry_defect(&dg).unwrap().max_norm() < 1e-12);
    }

    #[test]
    fn non_unitary_scattering_leaves_gauge_defect() {
        let space = HilbertSpace::simple(2).unwrap();
        let id = Operator::identity(&space);
        // Bypass validation to build dG with S = ½I by hand.
        let mut dg = ItoExpr::zero(1, &space);
        dg.add_term(Increment::DLambda(0, 0), &id * -0.5).unwrap();
        let defect = isometry_defect(&dg).unwrap();
        // (S − 1) + (S − 1)† + (S − 1)†(S − 1) = S†S − 1 = −¾.
        assert!(defect.coefficient(Increment::DLambda(0, 0)).distance(&(&id * -0.75)).unwrap() < 1e-15);
        assert!(isometry_defect(&ItoExpr::zero(1, &space)).unwrap().is_empty());
    }

    #[test]
    fn generator_rejects_invalid_triple() {
        let space = HilbertSpace::simple(2).unwrap();
        let z = Operator::zeros(&space);
        let g = SlhTriple::new(vec![vec![Operator::identity(&space) * 0.5]], vec![z.clone()], z).unwrap();
        assert!(matches!(generator_from_slh(&g), Err(Error::InvalidTriple(_))));
    }

    #[test]
    fn random_triples_are_isometric_and_coisometric() {
        let mut rng = TestRng::new(99);
        for n in 1..=3 {
            for _ in 0..5 {
                let g = random_triple(&mut rng, 3, n);
                let dg = generator_from_slh(&g).unwrap();
                assert!(isometry_defect(&dg).unwrap().max_norm() < 1e-10);
                assert!(coisometry_defect(&dg).unwrap().max_norm() < 1e-10);
            }
        }
    }

    #[test]
    fn heisenberg_identity_and_damped_mode() {
        let mut rng = TestRng::new(3);
        let g = random_triple(&mut rng, 3, 2);
        let id = Operator::identity(g.space());
        assert!(heisenberg_increment(&id, &g).unwrap().is_zero(1e-13));

        let d = 5;
        let gamma: f64 = 0.7;
        let a = annihilator(d).unwrap();
        let g = SlhTriple::single(&a * gamma.sqrt(), Operator::zeros(a.space())).unwrap();
        let inc = heisenberg_increment(&a, &g).unwrap();
        let lin = inc.coefficient(Increment::Dt);
        let m = inc.coefficient(Increment::DBdag(0));
        let nn = inc.coefficient(Increment::DB(0));
        for i in 0..d - 1 {
            for j in 0..d - 1 {
                assert!((lin.entry(i, j) - a.entry(i, j) * (-gamma / 2.0)).norm() < 1e-14);
                assert!(m.entry(i, j).norm() < 1e-14);
                let expected = if i == j { -gamma.sqrt() } else { 0.0 };
                assert!((nn.entry(i, j).re - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn heisenberg_scattering_only() {
        let mut rng = TestRng::new(17);
        let g = random_triple(&mut rng, 3, 2);
        let zero = Operator::zeros(g.space());
        let g0 = SlhTriple::new(g.s_rows().to_vec(), vec![zero.clone(), zero], g.h().clone()).unwrap();
        let x = random_operator(&mut rng, 3);
        let inc = heisenberg_increment(&x, &g0).unwrap();
        let expected = x.commutator(g.h()).unwrap() * -I;
        assert!(inc.coefficient(Increment::Dt).distance(&expected).unwrap() < 1e-12);
        for i in 0..2 {
            for k in 0..2 {
                let mut e = Operator::zeros(g.space());
                for j in 0..2 {
                    e += &(g.s(j, i).adjoint() * &x * g.s(j, k));
                }
                if i == k {
                    e -= &x;
                }
                assert!(inc.coefficient(Increment::DLambda(i, k)).distance(&e).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn heisenberg_product_rule() {
        let mut rng = TestRng::new(23);
        for n in 1..=2 {
            let g = random_triple(&mut rng, 4, n);
            let x = random_hermitian(&mut rng, 4);
            let y = random_hermitian(&mut rng, 4);
            let dx = heisenberg_increment(&x, &g).unwrap();
            let dy = heisenberg_increment(&y, &g).unwrap();
            let lhs = heisenberg_increment(&(&x * &y), &g).unwrap();
            let rhs = dx
                .right_mul(&y)
                .unwrap()
                .add(&dy.left_mul(&x).unwrap())
                .unwrap()
                .add(&ito_product(&dx, &dy).unwrap())
                .unwrap();
            let diff = lhs.add(&rhs.left_mul(&(Operator::identity(g.space()) * -1.0)).unwrap()).unwrap();
            assert!(diff.max_norm() < 1e-10, "n={n}: {}", diff.max_norm());
        }
    }

    #[test]
    fn display_is_readable() {
        let space = HilbertSpace::simple(2).unwrap();
        let e = ItoExpr::single(1, Increment::DBdag(0), Operator::identity(&space) * 2.0).unwrap();
        assert_eq!(e.to_string(), "2.0*I·dB†[0]");
        assert_eq!(ItoExpr::zero(1, &space).to_string(), "0");
    }
}
