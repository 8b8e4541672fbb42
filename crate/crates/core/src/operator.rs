//! Dense complex operators on finite composite Hilbert spaces.
//!
//! Every operator carries the tensor-factor layout of the space it acts on, so
//! embeddings and products can be checked. Arithmetic through the `std::ops`
//! traits panics on mismatched spaces (the same contract as matrix shape
//! mismatches); the named methods return [`Result`].

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const DEFAULT_DIMENSION_CAP: usize = 4096;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Ordered tensor-factor dimensions of a composite space.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HilbertSpace {
    factor_dims: Vec<usize>,
}

impl HilbertSpace {
    pub fn new(factor_dims: Vec<usize>) -> Result<Self> {
        Self::with_cap(factor_dims, DEFAULT_DIMENSION_CAP)
    }

    pub fn with_cap(factor_dims: Vec<usize>, cap: usize) -> Result<Self> {
        if factor_dims.is_empty() {
            return Err(Error::InvalidDimension("space needs at least one factor".into()));
        }
        if let Some(d) = factor_dims.iter().find(|&&d| d == 0) {
            return Err(Error::InvalidDimension(format!("factor dimension {d}")));
        }
        let mut dim: usize = 1;
        for &d in &factor_dims {
            dim = dim.checked_mul(d).filter(|&n| n <= cap).ok_or(Error::DimensionCap {
                dim: factor_dims.iter().fold(1usize, |a, &b| a.saturating_mul(b)),
                cap,
            })?;
        }
        Ok(Self { factor_dims })
    }

    /// Single-factor space.
    pub fn simple(dim: usize) -> Result<Self> {
        Self::new(vec![dim])
    }

    pub fn factor_dims(&self) -> &[usize] {
        &self.factor_dims
    }

    pub fn num_factors(&self) -> usize {
        self.factor_dims.len()
    }

    pub fn dim(&self) -> usize {
        self.factor_dims.iter().product()
    }

    /// Tensor product of two spaces (factor lists concatenated).
    pub fn tensor(&self, other: &HilbertSpace) -> Result<HilbertSpace> {
        let mut dims = self.factor_dims.clone();
        dims.extend_from_slice(&other.factor_dims);
        HilbertSpace::new(dims)
    }
}

impl fmt::Display for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.factor_dims.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("⊗"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: DMatrix<Complex64>,
}

impl Operator {
    pub fn from_matrix(space: HilbertSpace, matrix: DMatrix<Complex64>) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::SpaceMismatch(format!(
                "matrix is {}x{} but space {} has dimension {d}",
                matrix.nrows(),
                matrix.ncols(),
                space
            )));
        }
        Ok(Self { space, matrix })
    }

    /// Operator on a single-factor space of the matrix's dimension.
    pub fn from_square(matrix: DMatrix<Complex64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidDimension(format!(
                "matrix is {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let space = HilbertSpace::simple(matrix.nrows())?;
        Self::from_matrix(space, matrix)
    }

    /// Row-major entries.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidDimension("rows must form a square matrix".into()));
        }
        Self::from_square(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Self { space: space.clone(), matrix: DMatrix::identity(d, d) }
    }

    pub fn zeros(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Self { space: space.clone(), matrix: DMatrix::zeros(d, d) }
    }

    pub fn diagonal(space: &HilbertSpace, diag: &[Complex64]) -> Result<Self> {
        if diag.len() != space.dim() {
            return Err(Error::SpaceMismatch(format!(
                "{} diagonal entries for dimension {}",
                diag.len(),
                space.dim()
            )));
        }
        let v = DVector::from_column_slice(diag);
        Ok(Self { space: space.clone(), matrix: DMatrix::from_diagonal(&v) })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.matrix[(row, col)]
    }

    pub fn same_space(&self, other: &Operator) -> bool {
        self.space == other.space
    }

    pub fn check_space(&self, other: &Operator) -> Result<()> {
        if self.same_space(other) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch(format!("{} vs {}", self.space, other.space)))
        }
    }

    /// Reinterpret the same matrix on another space of equal total dimension.
    pub fn reshaped(&self, space: &HilbertSpace) -> Result<Operator> {
        Operator::from_matrix(space.clone(), self.matrix.clone())
    }

    pub fn adjoint(&self) -> Operator {
        Self { space: self.space.clone(), matrix: self.matrix.adjoint() }
    }

    pub fn scale(&self, z: Complex64) -> Operator {
        Self { space: self.space.clone(), matrix: &self.matrix * z }
    }

    pub fn scale_re(&self, x: f64) -> Operator {
        self.scale(re(x))
    }

    pub fn try_mul(&self, other: &Operator) -> Result<Operator> {
        self.check_space(other)?;
        Ok(Self { space: self.space.clone(), matrix: &self.matrix * &other.matrix })
    }

    pub fn try_add(&self, other: &Operator) -> Result<Operator> {
        self.check_space(other)?;
        Ok(Self { space: self.space.clone(), matrix: &self.matrix + &other.matrix })
    }

    /// `[A, B] = AB − BA`.
    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.check_space(other)?;
        let m = &self.matrix * &other.matrix - &other.matrix * &self.matrix;
        Ok(Self { space: self.space.clone(), matrix: m })
    }

    pub fn anticommutator(&self, other: &Operator) -> Result<Operator> {
        self.check_space(other)?;
        let m = &self.matrix * &other.matrix + &other.matrix * &self.matrix;
        Ok(Self { space: self.space.clone(), matrix: m })
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.matrix
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(0.0, |m: f64, &s| m.max(s))
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        self.matrix
            .column_iter()
            .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `‖A − B‖_F`.
    pub fn distance(&self, other: &Operator) -> Result<f64> {
        self.check_space(other)?;
        Ok((&self.matrix - &other.matrix).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
    }

    /// `‖A†A − I‖_F ≤ tol` and `‖AA† − I‖_F ≤ tol`.
    pub fn is_unitary(&self, tol: f64) -> bool {
        let id = DMatrix::<Complex64>::identity(self.dim(), self.dim());
        let left = self.matrix.adjoint() * &self.matrix - &id;
        let right = &self.matrix * self.matrix.adjoint() - &id;
        frob(&left) <= tol && frob(&right) <= tol
    }

    /// `‖A − A†‖_F ≤ tol`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        frob(&(&self.matrix - self.matrix.adjoint())) <= tol
    }

    /// Tensor product `self ⊗ other`, factor lists concatenated.
    pub fn kron(&self, other: &Operator) -> Result<Operator> {
        let space = self.space.tensor(&other.space)?;
        Ok(Self { space, matrix: self.matrix.kronecker(&other.matrix) })
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.matrix * v
    }

    /// `⟨v|A|v⟩`.
    pub fn expectation(&self, v: &DVector<Complex64>) -> Complex64 {
        v.dotc(&(&self.matrix * v))
    }

    /// Eigenvalues of a Hermitian operator, ascending.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<f64>> {
        if !self.is_hermitian(1e-9 * (1.0 + self.frobenius_norm())) {
            return Err(Error::NotHermitian("eigenvalue request"));
        }
        let eig = self.matrix.clone().symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        Ok(vals)
    }

    /// `g(A)` for Hermitian `A` through its spectral decomposition.
    pub fn hermitian_function(&self, g: impl Fn(f64) -> f64) -> Result<Operator> {
        if !self.is_hermitian(1e-9 * (1.0 + self.frobenius_norm())) {
            return Err(Error::NotHermitian("functional calculus"));
        }
        let eig = self.matrix.clone().symmetric_eigen();
        let mapped = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&x| re(g(x))),
        );
        let q = &eig.eigenvectors;
        let m = q * DMatrix::from_diagonal(&mapped) * q.adjoint();
        Ok(Self { space: self.space.clone(), matrix: m })
    }

    pub fn expm(&self) -> Result<Operator> {
        expm(self)
    }
}

fn frob(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Operator on {}", self.space)?;
        for row in self.matrix.row_iter() {
            let cells: Vec<String> =
                row.iter().map(|z| format!("{:+.4}{:+.4}i", z.re, z.im)).collect();
            writeln!(f, "  [{}]", cells.join(", "))?;
        }
        Ok(())
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&Operator> for &Operator {
            type Output = Operator;
            fn $method(self, rhs: &Operator) -> Operator {
                assert!(
                    self.space == rhs.space,
                    "operator space mismatch: {} vs {}",
                    self.space,
                    rhs.space
                );
                Operator { space: self.space.clone(), matrix: &self.matrix $op &rhs.matrix }
            }
        }
        impl $trait<Operator> for Operator {
            type Output = Operator;
            fn $method(self, rhs: Operator) -> Operator {
                &self $op &rhs
            }
        }
        impl $trait<&Operator> for Operator {
            type Output = Operator;
            fn $method(self, rhs: &Operator) -> Operator {
                &self $op rhs
            }
        }
        impl $trait<Operator> for &Operator {
            type Output = Operator;
            fn $method(self, rhs: Operator) -> Operator {
                self $op &rhs
            }
        }
    };
}

binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);

impl AddAssign<&Operator> for Operator {
    fn add_assign(&mut self, rhs: &Operator) {
        assert!(self.space == rhs.space, "operator space mismatch");
        self.matrix += &rhs.matrix;
    }
}

impl SubAssign<&Operator> for Operator {
    fn sub_assign(&mut self, rhs: &Operator) {
        assert!(self.space == rhs.space, "operator space mismatch");
        self.matrix -= &rhs.matrix;
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator { space: self.space.clone(), matrix: -&self.matrix }
    }
}

impl Neg for Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        -&self
    }
}

impl Mul<Complex64> for &Operator {
    type Output = Operator;
    fn mul(self, z: Complex64) -> Operator {
        self.scale(z)
    }
}

impl Mul<Complex64> for Operator {
    type Output = Operator;
    fn mul(self, z: Complex64) -> Operator {
        self.scale(z)
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, x: f64) -> Operator {
        self.scale_re(x)
    }
}

impl Mul<f64> for Operator {
    type Output = Operator;
    fn mul(self, x: f64) -> Operator {
        self.scale_re(x)
    }
}

/// Truncated bosonic annihilator: `a[i, i+1] = √(i+1)`.
pub fn annihilator(trunc_dim: usize) -> Result<Operator> {
    if trunc_dim < 2 {
        return Err(Error::InvalidDimension(format!(
            "mode truncation must be at least 2, got {trunc_dim}"
        )));
    }
    let mut m = DMatrix::zeros(trunc_dim, trunc_dim);
    for i in 0..trunc_dim - 1 {
        m[(i, i + 1)] = re(((i + 1) as f64).sqrt());
    }
    Operator::from_square(m)
}

pub fn creator(trunc_dim: usize) -> Result<Operator> {
    Ok(annihilator(trunc_dim)?.adjoint())
}

pub fn number(trunc_dim: usize) -> Result<Operator> {
    let a = annihilator(trunc_dim)?;
    Ok(a.adjoint() * a)
}

pub fn identity(dim: usize) -> Result<Operator> {
    Ok(Operator::identity(&HilbertSpace::simple(dim)?))
}

/// `|i⟩⟨j|` on a single factor of dimension `dim`.
pub fn basis_op(dim: usize, i: usize, j: usize) -> Result<Operator> {
    if i >= dim || j >= dim {
        return Err(Error::InvalidDimension(format!("basis index out of range for dim {dim}")));
    }
    let mut m = DMatrix::zeros(dim, dim);
    m[(i, j)] = re(1.0);
    Operator::from_square(m)
}

pub fn sigma_x() -> Operator {
    Operator::from_rows(&[vec![re(0.0), re(1.0)], vec![re(1.0), re(0.0)]]).expect("2x2")
}

pub fn sigma_y() -> Operator {
    Operator::from_rows(&[vec![re(0.0), -I], vec![I, re(0.0)]]).expect("2x2")
}

pub fn sigma_z() -> Operator {
    Operator::from_rows(&[vec![re(1.0), re(0.0)], vec![re(0.0), re(-1.0)]]).expect("2x2")
}

/// `σ₋ = |0⟩⟨1|` in the convention where `|0⟩` is the ground state.
pub fn sigma_minus() -> Operator {
    basis_op(2, 0, 1).expect("2x2")
}

/// Tensor `op` with identities on every other factor of `target`.
pub fn embed(op: &Operator, target: &HilbertSpace, factor_index: usize) -> Result<Operator> {
    let factors = target.factor_dims();
    if factor_index >= factors.len() {
        return Err(Error::FactorIndex { index: factor_index, factors: factors.len() });
    }
    if op.dim() != factors[factor_index] {
        return Err(Error::SpaceMismatch(format!(
            "operator of dimension {} placed on factor {factor_index} of {target}",
            op.dim()
        )));
    }
    let before: usize = factors[..factor_index].iter().product();
    let after: usize = factors[factor_index + 1..].iter().product();
    let left = DMatrix::<Complex64>::identity(before, before);
    let right = DMatrix::<Complex64>::identity(after, after);
    let m = left.kronecker(&op.matrix).kronecker(&right);
    Operator::from_matrix(target.clone(), m)
}

/// Generalised Gell-Mann basis of Hermitian traceless matrices on dimension `d`
/// (`d² − 1` elements), preceded by the identity.
pub fn gell_mann_basis(d: usize) -> Result<Vec<Operator>> {
    let mut out = vec![identity(d)?];
    for j in 0..d {
        for k in j + 1..d {
            let mut sym = DMatrix::zeros(d, d);
            sym[(j, k)] = re(1.0);
            sym[(k, j)] = re(1.0);
            out.push(Operator::from_square(sym)?);
            let mut anti = DMatrix::zeros(d, d);
            anti[(j, k)] = -I;
            anti[(k, j)] = I;
            out.push(Operator::from_square(anti)?);
        }
    }
    for l in 1..d {
        let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut diag = vec![re(0.0); d];
        for entry in diag.iter_mut().take(l) {
            *entry = re(norm);
        }
        diag[l] = re(-(l as f64) * norm);
        out.push(Operator::diagonal(&HilbertSpace::simple(d)?, &diag)?);
    }
    Ok(out)
}

// Padé coefficients and 1-norm thresholds for degrees 3, 5, 7, 9, 13.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] =
    [1.495585217958292e-2, 2.539398330063230e-1, 9.504178996162932e-1, 2.097847961257068e0, 5.371920351148152e0];

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant
/// (degree 3..13 chosen from the 1-norm).
pub fn expm(a: &Operator) -> Result<Operator> {
    if !a.is_finite() {
        return Err(Error::NonFinite("expm argument"));
    }
    let n = a.dim();
    let id = DMatrix::<Complex64>::identity(n, n);
    let norm = a.one_norm();
    let m = &a.matrix;

    let low: [&[f64]; 4] = [&PADE3, &PADE5, &PADE7, &PADE9];
    for (deg, coeffs) in low.iter().enumerate() {
        if norm <= THETA[deg] {
            let r = pade_low(m, coeffs, &id)?;
            return Operator::from_matrix(a.space.clone(), r);
        }
    }

    let s = if norm > THETA[4] { (norm / THETA[4]).log2().ceil().max(0.0) as i32 } else { 0 };
    let scaled = m * re(0.5f64.powi(s));
    let mut r = pade13(&scaled, &id)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if !r.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::Numeric("expm overflow".into()));
    }
    Operator::from_matrix(a.space.clone(), r)
}

fn pade_low(
    a: &DMatrix<Complex64>,
    b: &[f64],
    id: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let a2 = a * a;
    let mut power = id.clone();
    let mut u = DMatrix::zeros(a.nrows(), a.ncols());
    let mut v = DMatrix::zeros(a.nrows(), a.ncols());
    for k in 0..b.len() / 2 {
        v += &power * re(b[2 * k]);
        u += &power * re(b[2 * k + 1]);
        power = &power * &a2;
    }
    let u = a * u;
    solve_pade(&u, &v)
}

fn pade13(a: &DMatrix<Complex64>, id: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let b = PADE13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * re(b[13]) + &a4 * re(b[11]) + &a2 * re(b[9]);
    let u = a * (&a6 * inner_u + &a6 * re(b[7]) + &a4 * re(b[5]) + &a2 * re(b[3]) + id * re(b[1]));
    let inner_v = &a6 * re(b[12]) + &a4 * re(b[10]) + &a2 * re(b[8]);
    let v = &a6 * inner_v + &a6 * re(b[6]) + &a4 * re(b[4]) + &a2 * re(b[2]) + id * re(b[0]);
    solve_pade(&u, &v)
}

/// `(V − U)⁻¹ (V + U)`.
fn solve_pade(u: &DMatrix<Complex64>, v: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::Numeric("singular Padé denominator".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annihilator_two_level() {
        let a = annihilator(2).unwrap();
        assert_eq!(a.entry(0, 1), re(1.0));
        assert_eq!(a.entry(0, 0), re(0.0));
        assert_eq!(a.entry(1, 0), re(0.0));
        assert_eq!(a.entry(1, 1), re(0.0));
    }

    #[test]
    fn annihilator_lowers_one_photon() {
        let a = annihilator(4).unwrap();
        let one = DVector::from_fn(4, |i, _| if i == 1 { re(1.0) } else { re(0.0) });
        let out = a.apply(&one);
        assert_eq!(out[0], re(1.0));
        assert!(out.iter().skip(1).all(|z| *z == re(0.0)));
    }

    #[test]
    fn annihilator_rejects_small_truncation() {
        assert!(matches!(annihilator(1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn truncated_canonical_commutator() {
        for d in 2..7 {
            let a = annihilator(d).unwrap();
            let comm = a.commutator(&a.adjoint()).unwrap();
            for i in 0..d {
                for j in 0..d {
                    let expected = if i != j {
                        0.0
                    } else if i == d - 1 {
                        -((d - 1) as f64)
                    } else {
                        1.0
                    };
                    assert!((comm.entry(i, j) - re(expected)).norm() < 1e-14, "d={d} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn embed_places_factor() {
        let space = HilbertSpace::new(vec![2, 2]).unwrap();
        let e = embed(&sigma_x(), &space, 0).unwrap();
        let direct = sigma_x().kron(&identity(2).unwrap()).unwrap();
        assert_eq!(e.matrix(), direct.matrix());
        let id = embed(&identity(2).unwrap(), &space, 1).unwrap();
        assert_eq!(id.matrix(), &DMatrix::<Complex64>::identity(4, 4));
    }

    #[test]
    fn embed_product_is_kronecker() {
        let space = HilbertSpace::new(vec![3, 2]).unwrap();
        let a = annihilator(3).unwrap();
        let b = annihilator(2).unwrap();
        let lhs = embed(&a, &space, 0).unwrap() * embed(&b, &space, 1).unwrap();
        let rhs = a.kron(&b).unwrap();
        assert_eq!(lhs.matrix(), rhs.matrix());
    }

    #[test]
    fn embed_errors() {
        let space = HilbertSpace::new(vec![3, 2]).unwrap();
        assert!(matches!(
            embed(&sigma_x(), &space, 2),
            Err(Error::FactorIndex { index: 2, factors: 2 })
        ));
        assert!(matches!(embed(&sigma_x(), &space, 0), Err(Error::SpaceMismatch(_))));
    }

    #[test]
    fn dimension_cap_enforced() {
        assert!(matches!(
            HilbertSpace::new(vec![64, 65]),
            Err(Error::DimensionCap { cap: 4096, .. })
        ));
        assert!(HilbertSpace::with_cap(vec![8, 8], 32).is_err());
        assert!(HilbertSpace::new(vec![2, 0]).is_err());
    }

    #[test]
    fn expm_basics() {
        let z = Operator::zeros(&HilbertSpace::simple(3).unwrap());
        assert_eq!(expm(&z).unwrap().matrix(), &DMatrix::<Complex64>::identity(3, 3));

        let space = HilbertSpace::simple(2).unwrap();
        let d = Operator::diagonal(&space, &[I * std::f64::consts::PI; 2]).unwrap();
        let e = expm(&d).unwrap();
        assert!(e.distance(&(Operator::identity(&space) * -1.0)).unwrap() < 1e-14);
    }

    #[test]
    fn expm_beam_splitter_is_unitary() {
        let space = HilbertSpace::new(vec![3, 3]).unwrap();
        let a = embed(&annihilator(3).unwrap(), &space, 0).unwrap();
        let b = embed(&annihilator(3).unwrap(), &space, 1).unwrap();
        for theta in [0.1, 0.7, 2.3, 9.0] {
            let gen = (a.adjoint() * &b + &a * b.adjoint()) * (-I * theta);
            let u = expm(&gen).unwrap();
            assert!(u.is_unitary(1e-12), "theta={theta}");
        }
    }

    #[test]
    fn expm_rejects_nan() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = re(f64::NAN);
        let op = Operator::from_square(m).unwrap();
        assert!(matches!(expm(&op), Err(Error::NonFinite(_))));
    }

    #[test]
    fn predicates() {
        let space = HilbertSpace::simple(3).unwrap();
        let phase = Operator::identity(&space) * Complex64::from_polar(1.0, 0.37);
        assert!(phase.is_unitary(1e-12));
        assert!(!(Operator::identity(&space) * 0.5).is_unitary(1e-12));
        let a = annihilator(3).unwrap();
        assert!((&a + a.adjoint()).is_hermitian(1e-12));
        assert!(!a.is_hermitian(1e-12));
        assert!(a.commutator(&a).unwrap().frobenius_norm() == 0.0);
    }

    #[test]
    fn gell_mann_is_orthogonal_hermitian_basis() {
        for d in 2..5 {
            let basis = gell_mann_basis(d).unwrap();
            assert_eq!(basis.len(), d * d);
            for (i, x) in basis.iter().enumerate() {
                assert!(x.is_hermitian(1e-14));
                for y in basis.iter().skip(i + 1) {
                    assert!((x.clone() * y).trace().norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hermitian_function_matches_square() {
        let x = &annihilator(4).unwrap() + creator(4).unwrap();
        let sq = x.hermitian_function(|v| v * v).unwrap();
        assert!(sq.distance(&(&x * &x)).unwrap() < 1e-12);
    }
}
