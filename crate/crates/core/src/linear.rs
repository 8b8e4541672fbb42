//! Linear coupling-feedback cavity: `dx = A x dt + B du` with `x = (ã, ã†, Y)`.

use nalgebra::{DMatrix, Matrix3, Matrix3x2, Vector3};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{c, re, Operator, I};

#[derive(Clone, Debug)]
pub struct LinearModel {
    pub gamma: f64,
    pub lambda: f64,
    pub omega: f64,
    pub theta: f64,
    a: Matrix3<Complex64>,
    b: Matrix3x2<Complex64>,
}

pub fn build(gamma: f64, lambda: f64, omega: f64, theta: f64) -> Result<LinearModel> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter { name: "gamma", reason: format!("must be non-negative, got {gamma}") });
    }
    for (name, v) in [("lambda", lambda), ("omega", omega), ("theta", theta)] {
        if !v.is_finite() {
            return Err(Error::Parameter { name, reason: "must be finite".into() });
        }
    }
    let sg = gamma.sqrt();
    let z = re(0.0);
    let a = Matrix3::new(
        -(re(gamma / 2.0) + I * omega),
        z,
        re(-sg * lambda / 2.0),
        z,
        -(re(gamma / 2.0) - I * omega),
        re(-sg * lambda / 2.0),
        re(sg),
        re(sg),
        re(2.0 * lambda),
    );
    let b = Matrix3x2::new(re(-sg), z, z, re(-sg), (I * theta).exp(), (-I * theta).exp());
    Ok(LinearModel { gamma, lambda, omega, theta, a, b })
}

impl LinearModel {
    pub fn a(&self) -> &Matrix3<Complex64> {
        &self.a
    }

    pub fn b(&self) -> &Matrix3x2<Complex64> {
        &self.b
    }

    pub fn determinant(&self) -> Complex64 {
        self.a.determinant()
    }

    /// `e^{At}`.
    pub fn propagator(&self, t: f64) -> Result<Matrix3<Complex64>> {
        let m = DMatrix::from_fn(3, 3, |i, j| self.a[(i, j)] * t);
        let e = Operator::from_square(m)?.expm()?;
        Ok(Matrix3::from_fn(|i, j| e.entry(i, j)))
    }
}

/// Eigenvalues of `A`, sorted by decreasing real part, then decreasing imaginary part.
pub fn eigenvalues(model: &LinearModel) -> Result<[Complex64; 3]> {
    let ev = model
        .a
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Numeric("Schur decomposition did not converge".into()))?;
    let tol = zero_tolerance(model);
    let before = |x: &Complex64, y: &Complex64| {
        if (x.re - y.re).abs() > tol {
            x.re > y.re
        } else {
            x.im > y.im
        }
    };
    let mut out = [ev[0], ev[1], ev[2]];
    for i in 1..3 {
        let mut j = i;
        while j > 0 && before(&out[j], &out[j - 1]) {
            out.swap(j, j - 1);
            j -= 1;
        }
    }
    Ok(out)
}

fn zero_tolerance(model: &LinearModel) -> f64 {
    1e-9 * model.a.norm().max(1.0)
}

/// Marginal stability: at most one eigenvalue at zero, all others strictly in the left half-plane.
pub fn is_stable(model: &LinearModel) -> Result<bool> {
    let tol = zero_tolerance(model);
    let ev = eigenvalues(model)?;
    let zeros = ev.iter().filter(|z| z.norm() <= tol).count();
    Ok(zeros <= 1 && ev.iter().filter(|z| z.norm() > tol).all(|z| z.re < -tol))
}

/// `(⟨ã_t⟩, ⟨ã_t†⟩, ⟨Y_t⟩) = e^{At} x₀` on the grid.
pub fn mean_evolution(model: &LinearModel, x0: [Complex64; 3], t_grid: &[f64]) -> Result<Vec<[Complex64; 3]>> {
    let x0 = Vector3::from(x0);
    t_grid
        .iter()
        .map(|&t| {
            let x = model.propagator(t)? * x0;
            Ok([x[0], x[1], x[2]])
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelSample {
    pub t: f64,
    pub f: Complex64,
    pub g: Complex64,
    pub k: Complex64,
    pub p: Complex64,
    pub r: Complex64,
}

/// Printed closed forms and their maximal deviation from the matrix-exponential oracle.
#[derive(Clone, Debug, Serialize)]
pub struct PrintedComparison {
    pub samples: Vec<KernelSample>,
    pub max_deviation: KernelDeviation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct KernelDeviation {
    pub f: f64,
    pub g: f64,
    pub k: f64,
    pub p: f64,
    pub r: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Kernels {
    pub oracle: Vec<KernelSample>,
    /// Present only for `ω = 0`, where the closed forms are stated.
    pub printed: Option<PrintedComparison>,
}

fn oracle_sample(model: &LinearModel, t: f64) -> Result<KernelSample> {
    let phi = model.propagator(t)?;
    let sg = model.gamma.sqrt();
    let p = if sg > 0.0 { -phi[(2, 0)] / sg } else { re(0.0) };
    Ok(KernelSample { t, f: phi[(0, 0)], g: phi[(0, 1)], k: phi[(0, 2)], p, r: phi[(2, 2)] })
}

/// The closed forms as printed, valid for `ω = 0`.
pub fn printed_sample(model: &LinearModel, t: f64) -> KernelSample {
    let (gamma, lambda) = (model.gamma, model.lambda);
    let e = (-(gamma / 2.0 - 2.0 * lambda) * t).exp();
    let h = (-gamma * t / 2.0).exp();
    let d4 = gamma - 4.0 * lambda;
    let d2 = gamma - 2.0 * lambda;
    let f = -2.0 * lambda / d4 + gamma / d2 * e + 0.5 * h;
    let g = -2.0 * lambda / d4 + gamma / d2 * e - 0.5 * h;
    let k = gamma.sqrt() * lambda / d4 * (e - 1.0);
    let p = -2.0 / d4 * (1.0 - e);
    let r = -1.0 / d4 * (gamma - 4.0 * lambda * e);
    KernelSample { t, f: re(f), g: re(g), k: re(k), p: re(p), r: re(r) }
}

pub fn kernels(model: &LinearModel, t_grid: &[f64]) -> Result<Kernels> {
    let oracle = t_grid.iter().map(|&t| oracle_sample(model, t)).collect::<Result<Vec<_>>>()?;
    let printed = if model.omega == 0.0 {
        let scale = model.gamma.abs().max(model.lambda.abs()).max(f64::MIN_POSITIVE);
        if (model.gamma - 4.0 * model.lambda).abs() <= 1e-12 * scale {
            return Err(Error::Degenerate("gamma - 4 lambda = 0 in the printed kernels".into()));
        }
        if (model.gamma - 2.0 * model.lambda).abs() <= 1e-12 * scale {
            return Err(Error::Degenerate("gamma - 2 lambda = 0 in the printed kernels".into()));
        }
        let samples: Vec<KernelSample> = t_grid.iter().map(|&t| printed_sample(model, t)).collect();
        let mut dev = KernelDeviation::default();
        for (o, p) in oracle.iter().zip(&samples) {
            dev.f = dev.f.max((o.f - p.f).norm());
            dev.g = dev.g.max((o.g - p.g).norm());
            dev.k = dev.k.max((o.k - p.k).norm());
            dev.p = dev.p.max((o.p - p.p).norm());
            dev.r = dev.r.max((o.r - p.r).norm());
        }
        Some(PrintedComparison { samples, max_deviation: dev })
    } else {
        None
    };
    Ok(Kernels { oracle, printed })
}

/// Largest relative residual of `dΦ/dt = AΦ` by central differences over the grid.
pub fn propagator_ode_residual(model: &LinearModel, t_grid: &[f64], h: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        let lo = (t - h).max(0.0);
        let hi = t + h;
        let fd = (model.propagator(hi)? - model.propagator(lo)?) / c(hi - lo, 0.0);
        let exact = model.a * model.propagator((lo + hi) / 2.0)?;
        let scale = exact.norm().max(1e-300);
        worst = worst.max((fd - exact).norm() / scale);
    }
    Ok(worst)
}
