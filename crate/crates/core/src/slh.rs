//! SLH triples: validation, series product, concatenation, output templates and
//! the Heisenberg superoperators.

use crate::error::{Error, Result};
use crate::ito::{Increment, ItoExpr};
use crate::operator::{Operator, I};
use num_complex::Complex64;

pub const VALIDATION_TOL: f64 = 1e-10;

/// Hudson–Parthasarathy parameters `(S, L, H)` for `n` field channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SlhTriple {
    s: Vec<Vec<Operator>>,
    l: Vec<Operator>,
    h: Operator,
}

impl SlhTriple {
    /// Checks shapes and spaces only; see [`SlhTriple::validate`] for unitarity.
    pub fn new(s: Vec<Vec<Operator>>, l: Vec<Operator>, h: Operator) -> Result<Self> {
        let n = l.len();
        if n == 0 {
            return Err(Error::InvalidTriple("multiplicity must be at least 1".into()));
        }
        if s.len() != n || s.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidTriple(format!("S must be {n}x{n} to match L")));
        }
        for op in s.iter().flatten().chain(l.iter()) {
            h.check_space(op)?;
        }
        Ok(Self { s, l, h })
    }

    /// `(I, L, H)` with one channel.
    pub fn single(l: Operator, h: Operator) -> Result<Self> {
        let id = Operator::identity(l.space());
        Self::new(vec![vec![id]], vec![l], h)
    }

    /// `(e^{iθ} I, L, H)` with one channel.
    pub fn with_phase(theta: f64, l: Operator, h: Operator) -> Result<Self> {
        let s = Operator::identity(l.space()) * Complex64::from_polar(1.0, theta);
        Self::new(vec![vec![s]], vec![l], h)
    }

    /// `(I, 0, 0)` on `space` with `n` channels.
    pub fn trivial(space: &crate::operator::HilbertSpace, n: usize) -> Result<Self> {
        let zero = Operator::zeros(space);
        let id = Operator::identity(space);
        let s = (0..n)
            .map(|j| (0..n).map(|k| if j == k { id.clone() } else { zero.clone() }).collect())
            .collect();
        Self::new(s, vec![zero.clone(); n], zero)
    }

    pub fn multiplicity(&self) -> usize {
        self.l.len()
    }

    pub fn s(&self, j: usize, k: usize) -> &Operator {
        &self.s[j][k]
    }

    pub fn s_rows(&self) -> &[Vec<Operator>] {
        &self.s
    }

    pub fn l(&self, j: usize) -> &Operator {
        &self.l[j]
    }

    pub fn l_vec(&self) -> &[Operator] {
        &self.l
    }

    pub fn h(&self) -> &Operator {
        &self.h
    }

    pub fn space(&self) -> &crate::operator::HilbertSpace {
        self.h.space()
    }

    pub fn map_operators(&self, f: impl Fn(&Operator) -> Operator) -> Result<SlhTriple> {
        let s = self.s.iter().map(|row| row.iter().map(&f).collect()).collect();
        let l = self.l.iter().map(&f).collect();
        SlhTriple::new(s, l, f(&self.h))
    }

    /// Returns the first violated condition, if any.
    pub fn check(&self, tol: f64) -> Result<()> {
        let n = self.multiplicity();
        let id = Operator::identity(self.space());
        for j in 0..n {
            for l in 0..n {
                let mut left = Operator::zeros(self.space());
                let mut right = Operator::zeros(self.space());
                for k in 0..n {
                    left += &(self.s[k][j].adjoint() * &self.s[k][l]);
                    right += &(&self.s[j][k] * self.s[l][k].adjoint());
                }
                if j == l {
                    left -= &id;
                    right -= &id;
                }
                let defect = left.frobenius_norm().max(right.frobenius_norm());
                if !(defect < tol) {
                    return Err(Error::InvalidTriple(format!(
                        "S block not unitary at ({j},{l}): defect {defect:.3e}"
                    )));
                }
            }
        }
        let herm = self.h.distance(&self.h.adjoint()).expect("same space");
        if !(herm < tol) {
            return Err(Error::InvalidTriple(format!("H not Hermitian: defect {herm:.3e}")));
        }
        Ok(())
    }

    pub fn validate(&self, tol: f64) -> bool {
        self.check(tol).is_ok()
    }

    /// True when every `S_jk = δ_jk · I`.
    pub fn has_identity_scattering(&self, tol: f64) -> bool {
        self.scalar_scattering(tol).is_some_and(|phase| (phase - 1.0).norm() < tol)
    }

    /// For `n = 1` and `S = z·I`, returns `z`.
    pub fn scalar_scattering(&self, tol: f64) -> Option<Complex64> {
        if self.multiplicity() != 1 {
            return None;
        }
        let s = &self.s[0][0];
        let z = s.entry(0, 0);
        let scaled = Operator::identity(self.space()) * z;
        (s.distance(&scaled).ok()? < tol).then_some(z)
    }
}

/// Anti-Hermitian part divided by `2i`: `(X − X†)/(2i)`.
pub fn imaginary_part(x: &Operator) -> Operator {
    (x - x.adjoint()) * (-I * 0.5)
}

/// Cascade `G_A` into `G_B`:
/// `(S_B S_A, L_B + S_B L_A, H_A + H_B + Im L_B† S_B L_A)`.
pub fn series_product(gb: &SlhTriple, ga: &SlhTriple) -> Result<SlhTriple> {
    let n = gb.multiplicity();
    if ga.multiplicity() != n {
        return Err(Error::Multiplicity(n, ga.multiplicity()));
    }
    gb.h.check_space(&ga.h)?;
    let space = gb.space();
    let mut s = Vec::with_capacity(n);
    for j in 0..n {
        let mut row = Vec::with_capacity(n);
        for k in 0..n {
            let mut acc = Operator::zeros(space);
            for m in 0..n {
                acc += &(&gb.s[j][m] * &ga.s[m][k]);
            }
            row.push(acc);
        }
        s.push(row);
    }
    let mut l = Vec::with_capacity(n);
    for j in 0..n {
        let mut acc = gb.l[j].clone();
        for m in 0..n {
            acc += &(&gb.s[j][m] * &ga.l[m]);
        }
        l.push(acc);
    }
    let mut cross = Operator::zeros(space);
    for j in 0..n {
        for m in 0..n {
            cross += &(gb.l[j].adjoint() * &gb.s[j][m] * &ga.l[m]);
        }
    }
    let h = &ga.h + &gb.h + imaginary_part(&cross);
    let out = SlhTriple::new(s, l, h)?;
    out.check(VALIDATION_TOL)?;
    Ok(out)
}

/// Channel-wise stacking: `S = diag(S₁, S₂)`, `L = (L₁; L₂)`, `H = H₁ + H₂`.
pub fn concatenate(g1: &SlhTriple, g2: &SlhTriple) -> Result<SlhTriple> {
    g1.h.check_space(&g2.h)?;
    let (n1, n2) = (g1.multiplicity(), g2.multiplicity());
    let zero = Operator::zeros(g1.space());
    let mut s = vec![vec![zero.clone(); n1 + n2]; n1 + n2];
    for j in 0..n1 {
        for k in 0..n1 {
            s[j][k] = g1.s[j][k].clone();
        }
    }
    for j in 0..n2 {
        for k in 0..n2 {
            s[n1 + j][n1 + k] = g2.s[j][k].clone();
        }
    }
    let l = g1.l.iter().chain(g2.l.iter()).cloned().collect();
    SlhTriple::new(s, l, &g1.h + &g2.h)
}

fn check_channel(g: &SlhTriple, j: usize) -> Result<()> {
    if j >= g.multiplicity() {
        return Err(Error::Channel { channel: j, n: g.multiplicity() });
    }
    Ok(())
}

/// Coefficients of `dB_j^out = Σ_k S_jk dB_k + L_j dt`, before conjugation by the flow.
pub fn output_increment(g: &SlhTriple, j: usize) -> Result<ItoExpr> {
    check_channel(g, j)?;
    let mut out = ItoExpr::zero(g.multiplicity(), g.space());
    for k in 0..g.multiplicity() {
        out.add_term(Increment::DB(k), g.s[j][k].clone())?;
    }
    out.add_term(Increment::Dt, g.l[j].clone())?;
    Ok(out)
}

/// Coefficients of the quadrature `dY_j = Σ_k S_jk dB_k + Σ_k S_jk† dB_k† + (L_j + L_j†) dt`.
pub fn quadrature_output(g: &SlhTriple, j: usize) -> Result<ItoExpr> {
    check_channel(g, j)?;
    let mut out = ItoExpr::zero(g.multiplicity(), g.space());
    for k in 0..g.multiplicity() {
        out.add_term(Increment::DB(k), g.s[j][k].clone())?;
        out.add_term(Increment::DBdag(k), g.s[j][k].adjoint())?;
    }
    out.add_term(Increment::Dt, &g.l[j] + g.l[j].adjoint())?;
    Ok(out)
}

/// `ℒX = ½ Σ L_i†[X, L_i] + ½ Σ [L_i†, X] L_i − i[X, H]`.
pub fn lindbladian(g: &SlhTriple, x: &Operator) -> Result<Operator> {
    x.check_space(&g.h)?;
    let mut out = x.commutator(&g.h)? * (-I);
    for l in &g.l {
        let ld = l.adjoint();
        out += &((&ld * x.commutator(l)?) * 0.5);
        out += &((ld.commutator(x)? * l) * 0.5);
    }
    Ok(out)
}

/// `ℳ_i X = Σ_j S_ji† [X, L_j]`.
pub fn superop_m(g: &SlhTriple, i: usize, x: &Operator) -> Result<Operator> {
    check_channel(g, i)?;
    x.check_space(&g.h)?;
    let mut out = Operator::zeros(g.space());
    for j in 0..g.multiplicity() {
        out += &(g.s[j][i].adjoint() * x.commutator(&g.l[j])?);
    }
    Ok(out)
}

/// `𝒩_i X = Σ_k [L_k†, X] S_ki`.
pub fn superop_n(g: &SlhTriple, i: usize, x: &Operator) -> Result<Operator> {
    check_channel(g, i)?;
    x.check_space(&g.h)?;
    let mut out = Operator::zeros(g.space());
    for k in 0..g.multiplicity() {
        out += &(g.l[k].adjoint().commutator(x)? * &g.s[k][i]);
    }
    Ok(out)
}

/// `𝒮_ik X = Σ_j S_ji† X S_jk − δ_ik X`.
pub fn superop_s(g: &SlhTriple, i: usize, k: usize, x: &Operator) -> Result<Operator> {
    check_channel(g, i)?;
    check_channel(g, k)?;
    x.check_space(&g.h)?;
    let mut out = Operator::zeros(g.space());
    for j in 0..g.multiplicity() {
        out += &(g.s[j][i].adjoint() * x * &g.s[j][k]);
    }
    if i == k {
        out -= x;
    }
    Ok(out)
}
