//! Collision-model dilation of a controlled flow.
//!
//! The field is cut into `N` bins of dimension `bin_dim`; step `k` couples the
//! system to bin `k` through
//! `U_k = exp(√dt (L_k b_k† − L_k† b_k) − i H_k dt)`,
//! with `L_k`, `H_k` built from the quadratures (or counts) of bins `j < k`.
//! All identities are then checked on explicit matrices.

use serde::Serialize;

use crate::control::{ControlledCoefficients, RecordKind, Realization};
use crate::error::{Error, Result};
use crate::operator::{annihilator, embed, gell_mann_basis, HilbertSpace, Operator};
use crate::slh::{SlhTriple, VALIDATION_TOL};

const UNITARITY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollisionConfig {
    pub n_bins: usize,
    pub bin_dim: usize,
    pub dt: f64,
    pub system_dim: usize,
    pub kind: RecordKind,
}

impl CollisionConfig {
    pub fn space(&self) -> Result<HilbertSpace> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter { name: "dt", reason: format!("must be positive, got {}", self.dt) });
        }
        if !(2..=3).contains(&self.bin_dim) {
            return Err(Error::Parameter { name: "bin_dim", reason: format!("must be 2 or 3, got {}", self.bin_dim) });
        }
        let mut dims = vec![self.system_dim];
        dims.extend(std::iter::repeat_n(self.bin_dim, self.n_bins));
        HilbertSpace::new(dims)
    }
}

/// Operator context for evaluating coefficients inside the dilation.
///
/// In the input picture system operators are `X ⊗ I`; in the output picture
/// they are conjugated by the unitary accumulated so far.
pub struct BinContext<'a> {
    space: &'a HilbertSpace,
    frame: Option<&'a Operator>,
}

impl<'a> BinContext<'a> {
    pub fn space(&self) -> &HilbertSpace {
        self.space
    }

    fn conjugate(&self, x: Operator) -> Operator {
        match self.frame {
            Some(v) => v.adjoint() * x * v,
            None => x,
        }
    }
}

impl Realization for BinContext<'_> {
    type Signal = Operator;

    fn lift(&self, op: &Operator) -> Result<Operator> {
        Ok(self.conjugate(embed(op, self.space, 0)?))
    }

    fn zero_signal(&self) -> Operator {
        Operator::zeros(self.space)
    }

    fn couple(&self, op: &Operator, signal: &Operator) -> Result<Operator> {
        self.lift(op)?.try_mul(signal)
    }
}

/// Coefficients as operator functions of past bin increments.
pub trait DilationCoefficients {
    /// Triple on the full space at step `increments.len()`.
    fn triple(&self, ctx: &BinContext<'_>, increments: &[Operator], dt: f64) -> Result<SlhTriple>;

    /// Record type the coefficients are driven by; `None` if they ignore the record.
    fn record_kind(&self) -> Option<RecordKind> {
        None
    }
}

impl DilationCoefficients for ControlledCoefficients {
    fn triple(&self, ctx: &BinContext<'_>, increments: &[Operator], dt: f64) -> Result<SlhTriple> {
        self.realize(ctx, increments, dt)
    }

    fn record_kind(&self) -> Option<RecordKind> {
        let controlled = !self.l_terms().is_empty() || !self.h_terms().is_empty() || self.h_kernel().is_some();
        controlled.then_some(self.kind())
    }
}

impl<F> DilationCoefficients for F
where
    F: Fn(&BinContext<'_>, &[Operator], f64) -> Result<SlhTriple>,
{
    fn triple(&self, ctx: &BinContext<'_>, increments: &[Operator], dt: f64) -> Result<SlhTriple> {
        self(ctx, increments, dt)
    }
}

/// Assembled dilation with every intermediate product retained.
#[derive(Clone, Debug)]
pub struct Dilation {
    cfg: CollisionConfig,
    space: HilbertSpace,
    bins: Vec<Operator>,
    increments: Vec<Operator>,
    triples: Vec<SlhTriple>,
    /// `cumulative[k] = U_k ⋯ U_0`.
    cumulative: Vec<Operator>,
}

fn step_generator(triple: &SlhTriple, b: &Operator, dt: f64) -> Result<Operator> {
    let l = triple.l(0);
    let coupling = l.try_mul(&b.adjoint())? - l.adjoint().try_mul(b)?;
    Ok(coupling.scale_re(dt.sqrt()) + triple.h().scale(crate::operator::I * -dt))
}

fn check_adapted(triple: &SlhTriple, bins: &[Operator], step: usize) -> Result<()> {
    let l = triple.l(0);
    let ops = [l, triple.h()];
    for (m, b) in bins.iter().enumerate().skip(step) {
        for op in ops {
            let scale = 1.0 + op.frobenius_norm();
            if op.commutator(b)?.frobenius_norm() > 1e-12 * scale
                || op.commutator(&b.adjoint())?.frobenius_norm() > 1e-12 * scale
            {
                return Err(Error::Adaptedness { step, bin: m });
            }
        }
    }
    Ok(())
}

impl Dilation {
    pub fn build(coeffs: &impl DilationCoefficients, cfg: CollisionConfig) -> Result<Self> {
        let space = cfg.space()?;
        if let Some(kind) = coeffs.record_kind() {
            if kind != cfg.kind {
                return Err(Error::RecordKind(format!(
                    "coefficients expect a {kind} record, dilation measures {}",
                    cfg.kind
                )));
            }
        }
        let b1 = annihilator(cfg.bin_dim)?;
        let bins: Vec<Operator> = (0..cfg.n_bins).map(|k| embed(&b1, &space, k + 1)).collect::<Result<_>>()?;
        let increments: Vec<Operator> = bins
            .iter()
            .map(|b| match cfg.kind {
                RecordKind::Quadrature => (b + b.adjoint()).scale_re(cfg.dt.sqrt()),
                RecordKind::Counting => b.adjoint() * b,
            })
            .collect();
        let ctx = BinContext { space: &space, frame: None };
        let mut triples = Vec::with_capacity(cfg.n_bins);
        let mut cumulative: Vec<Operator> = Vec::with_capacity(cfg.n_bins);
        for k in 0..cfg.n_bins {
            let g = coeffs.triple(&ctx, &increments[..k], cfg.dt)?;
            if g.multiplicity() != 1 {
                return Err(Error::Unsupported("dilation needs a single channel".into()));
            }
            if !g.has_identity_scattering(VALIDATION_TOL) {
                return Err(Error::Unsupported("dilation needs S = I".into()));
            }
            g.check(VALIDATION_TOL)?;
            check_adapted(&g, &bins, k)?;
            let uk = step_generator(&g, &bins[k], cfg.dt)?.expm()?;
            if !uk.is_unitary(UNITARITY_TOL) {
                return Err(Error::Numeric(format!("step unitary {k} fails unitarity")));
            }
            let next = match cumulative.last() {
                Some(prev) => &uk * prev,
                None => uk,
            };
            cumulative.push(next);
            triples.push(g);
        }
        Ok(Self { cfg, space, bins, increments, triples, cumulative })
    }

    pub fn config(&self) -> &CollisionConfig {
        &self.cfg
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    /// `U = U_{N−1} ⋯ U_0`.
    pub fn unitary(&self) -> Operator {
        self.cumulative.last().cloned().unwrap_or_else(|| Operator::identity(&self.space))
    }

    /// Unitary after the first `k` steps.
    pub fn unitary_after(&self, k: usize) -> Operator {
        if k == 0 {
            Operator::identity(&self.space)
        } else {
            self.cumulative[k - 1].clone()
        }
    }

    pub fn increments(&self) -> &[Operator] {
        &self.increments
    }

    pub fn triples(&self) -> &[SlhTriple] {
        &self.triples
    }

    /// `Z_s = Σ_{j<s} ΔZ_j` for `s = 0..=N`.
    pub fn record_operators(&self) -> Vec<Operator> {
        let mut out = Vec::with_capacity(self.cfg.n_bins + 1);
        let mut z = Operator::zeros(&self.space);
        out.push(z.clone());
        for dz in &self.increments {
            z += dz;
            out.push(z.clone());
        }
        out
    }

    /// `Y_s = U† Z_s U`.
    pub fn output_record(&self) -> Vec<Operator> {
        let u = self.unitary();
        self.record_operators().into_iter().map(|z| u.adjoint() * z * &u).collect()
    }
}

pub fn build_controlled_unitary(coeffs: &impl DilationCoefficients, cfg: CollisionConfig) -> Result<Operator> {
    let d = Dilation::build(coeffs, cfg)?;
    let u = d.unitary();
    if !u.is_unitary(UNITARITY_TOL) {
        return Err(Error::Numeric("assembled unitary fails unitarity".into()));
    }
    Ok(u)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct NonDemolitionReport {
    /// `max ‖[j_t(X), Y_s]‖_F` over `s ≤ t` and a Gell-Mann basis of `X`.
    pub max_commutator: f64,
    /// `max ‖[Y_s, Y_s']‖_F`.
    pub max_record_commutator: f64,
    /// Largest eigenvalue mismatch between `j_T(X)` and `X ⊗ I`.
    pub max_spectrum_defect: f64,
    pub unitarity_defect: f64,
}

pub fn check_nondemolition(d: &Dilation) -> Result<NonDemolitionReport> {
    let basis = gell_mann_basis(d.cfg.system_dim)?;
    let lifted: Vec<Operator> = basis.iter().map(|x| embed(x, &d.space, 0)).collect::<Result<_>>()?;
    let z = d.record_operators();
    let y = d.output_record();
    let mut report = NonDemolitionReport::default();
    let u = d.unitary();
    report.unitarity_defect = (u.adjoint() * &u).distance(&Operator::identity(&d.space))?;
    for t in 1..=d.cfg.n_bins {
        let ut = d.unitary_after(t);
        for x in &lifted {
            let jt = ut.adjoint() * x * &ut;
            for ys in &y[1..=t] {
                report.max_commutator = report.max_commutator.max(jt.commutator(ys)?.frobenius_norm());
            }
            if t == d.cfg.n_bins {
                let a = jt.hermitian_eigenvalues()?;
                let b = x.hermitian_eigenvalues()?;
                for (p, q) in a.iter().zip(&b) {
                    report.max_spectrum_defect = report.max_spectrum_defect.max((p - q).abs());
                }
            }
        }
    }
    debug_assert_eq!(z.len(), y.len());
    for s in 1..y.len() {
        for s2 in (s + 1)..y.len() {
            report.max_record_commutator = report.max_record_commutator.max(y[s].commutator(&y[s2])?.frobenius_norm());
        }
    }
    Ok(report)
}

/// `‖U − V‖_F` where `U` is assembled by left multiplication of input-picture
/// steps and `V` by right multiplication of output-picture steps whose
/// coefficients are evaluated on conjugated operators and the output record.
pub fn check_picture_equivalence(coeffs: &impl DilationCoefficients, cfg: CollisionConfig) -> Result<f64> {
    let d = Dilation::build(coeffs, cfg)?;
    let mut v = Operator::identity(&d.space);
    for k in 0..cfg.n_bins {
        let ctx = BinContext { space: &d.space, frame: Some(&v) };
        let y: Vec<Operator> = d.increments[..k].iter().map(|dz| v.adjoint() * dz * &v).collect();
        let g = coeffs.triple(&ctx, &y, cfg.dt)?;
        let step = step_generator(&g, &d.bins[k], cfg.dt)?.expm()?;
        v = &v * step;
    }
    d.unitary().distance(&v)
}

/// Reference for the drift of the measured quadrature.
#[derive(Clone, Debug)]
pub enum DriftReference {
    /// `L_k + L_k†` of the coefficients at each step.
    Coefficients,
    /// A fixed system operator, e.g. `L₀ + L₀†`.
    Static(Operator),
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadratureReport {
    pub dt: f64,
    /// `‖(ΔY_k − ΔB_k − D̃_k dt) P_k‖` per bin, `P_k` the vacuum projector of bin `k`.
    pub residuals: Vec<f64>,
    /// `max residual / dt^{3/2}`.
    pub max_ratio: f64,
}

/// Bin-by-bin comparison of `ΔY_k = U†ΔZ_kU` with `ΔB_k + ΔB_k† + (L̃_k + L̃_k†)dt` on the bin vacuum.
pub fn check_quadrature_consistency(
    coeffs: &impl DilationCoefficients,
    cfg: CollisionConfig,
    drift: &DriftReference,
) -> Result<QuadratureReport> {
    if cfg.kind != RecordKind::Quadrature {
        return Err(Error::Unsupported("quadrature consistency needs a quadrature dilation".into()));
    }
    let d = Dilation::build(coeffs, cfg)?;
    let vac = crate::operator::basis_op(cfg.bin_dim, 0, 0)?;
    let mut residuals = Vec::with_capacity(cfg.n_bins);
    for k in 0..cfg.n_bins {
        let before = d.unitary_after(k);
        let after = d.unitary_after(k + 1);
        let dy = after.adjoint() * &d.increments[k] * &after;
        let dk = match drift {
            DriftReference::Coefficients => {
                let l = d.triples[k].l(0);
                l + l.adjoint()
            }
            DriftReference::Static(op) => embed(op, &d.space, 0)?,
        };
        let dk = before.adjoint() * dk * &before;
        let r = dy - &d.increments[k] - dk.scale_re(cfg.dt);
        let p = embed(&vac, &d.space, k + 1)?;
        residuals.push((r * p).spectral_norm());
    }
    let max_ratio = residuals.iter().fold(0.0f64, |m, r| m.max(*r)) / cfg.dt.powf(1.5);
    Ok(QuadratureReport { dt: cfg.dt, residuals, max_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{coupling_feedback, hamiltonian_feedback, Modulator};
    use crate::operator::{number, sigma_x};

    fn cfg(n_bins: usize, system_dim: usize, dt: f64) -> CollisionConfig {
        CollisionConfig { n_bins, bin_dim: 2, dt, system_dim, kind: RecordKind::Quadrature }
    }

    #[test]
    fn zero_coefficients_give_identity() {
        let space = HilbertSpace::simple(2).unwrap();
        let c = ControlledCoefficients::constant(SlhTriple::trivial(&space, 1).unwrap()).unwrap();
        let u = build_controlled_unitary(&c, cfg(3, 2, 0.1)).unwrap();
        assert_eq!(u.distance(&Operator::identity(u.space())).unwrap(), 0.0);
        let d = Dilation::build(&c, cfg(3, 2, 0.1)).unwrap();
        let z = d.record_operators();
        for (y, z) in d.output_record().iter().zip(&z) {
            assert_eq!(y.distance(z).unwrap(), 0.0);
        }
        let r = check_nondemolition(&d).unwrap();
        assert_eq!(r.max_commutator, 0.0);
        let q = check_quadrature_consistency(&c, cfg(3, 2, 0.1), &DriftReference::Coefficients).unwrap();
        assert_eq!(q.max_ratio, 0.0);
    }

    #[test]
    fn dimension_cap() {
        let c = coupling_feedback(4, 1.0, 0.2, 0.0, 0.0).unwrap();
        assert!(matches!(Dilation::build(&c, cfg(11, 4, 0.1)), Err(Error::DimensionCap { .. })));
    }

    #[test]
    fn uncontrolled_and_controlled_unitaries() {
        let a = annihilator(3).unwrap();
        let c = ControlledCoefficients::constant(SlhTriple::single(a.clone(), Operator::zeros(a.space())).unwrap()).unwrap();
        let u = build_controlled_unitary(&c, cfg(3, 3, 0.1)).unwrap();
        assert!(u.is_unitary(1e-12));

        let f = (&a + a.adjoint()) * 0.4;
        let base = SlhTriple::single(a.clone(), number(3).unwrap() * 0.2).unwrap();
        let c = hamiltonian_feedback(base, f, Modulator::Proportional).unwrap();
        let u = build_controlled_unitary(&c, cfg(3, 3, 0.1)).unwrap();
        assert!(u.is_unitary(1e-12));
    }

    #[test]
    fn non_adapted_coefficients_rejected() {
        let peeking = |ctx: &BinContext<'_>, incs: &[Operator], _dt: f64| {
            let k = incs.len();
            let b = annihilator(2).unwrap();
            let future = embed(&b, ctx.space(), (k + 2).min(ctx.space().num_factors() - 1)).unwrap();
            let sys = ctx.lift(&sigma_x()).unwrap();
            let h = &sys * (&future + future.adjoint());
            SlhTriple::single(ctx.lift(&crate::operator::sigma_minus()).unwrap(), h)
        };
        assert!(matches!(Dilation::build(&peeking, cfg(3, 2, 0.1)), Err(Error::Adaptedness { .. })));
    }

    #[test]
    fn coupling_feedback_theorems() {
        let c = coupling_feedback(3, 1.0, 0.2, 0.0, 0.0).unwrap();
        let config = cfg(4, 3, 0.1);
        let d = Dilation::build(&c, config).unwrap();
        let r = check_nondemolition(&d).unwrap();
        assert!(r.max_commutator < 1e-9, "{r:?}");
        assert!(r.max_record_commutator < 1e-9);
        assert!(r.max_spectrum_defect < 1e-9);
        assert!(check_picture_equivalence(&c, config).unwrap() < 1e-9);
    }

    #[test]
    fn static_triple_pictures_agree() {
        let a = annihilator(3).unwrap();
        let c = ControlledCoefficients::constant(SlhTriple::single(&a * 0.9, number(3).unwrap()).unwrap()).unwrap();
        assert!(check_picture_equivalence(&c, cfg(3, 3, 0.1)).unwrap() < 1e-12);
    }

    #[test]
    fn quadrature_residual_is_three_halves_order() {
        let a = annihilator(3).unwrap();
        let c = ControlledCoefficients::constant(SlhTriple::single(a.clone(), Operator::zeros(a.space())).unwrap()).unwrap();
        let t = 0.2;
        let mut ratios = Vec::new();
        for n in [1, 2, 4] {
            let r = check_quadrature_consistency(&c, cfg(n, 3, t / n as f64), &DriftReference::Coefficients).unwrap();
            ratios.push(r.max_ratio);
        }
        assert!(ratios.iter().all(|&r| r < 10.0 && r > 0.0), "{ratios:?}");
    }

    #[test]
    fn wrong_drift_is_detected() {
        let a = annihilator(3).unwrap();
        let c = ControlledCoefficients::constant(SlhTriple::single(a.clone(), Operator::zeros(a.space())).unwrap()).unwrap();
        let zero = DriftReference::Static(Operator::zeros(a.space()));
        let ratios: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&n| check_quadrature_consistency(&c, cfg(n, 3, 0.2 / n as f64), &zero).unwrap().max_ratio)
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] > 1.3 * w[0]), "{ratios:?}");
    }

    #[test]
    fn pid_drift_has_no_derivative_term() {
        let a = annihilator(3).unwrap();
        let x = &a + a.adjoint();
        let fd = x.scale_re(0.7);
        let zero = Operator::zeros(a.space());
        let c = crate::control::pid_coefficients(a.clone(), zero.clone(), x.scale_re(0.3), zero, fd.clone()).unwrap();
        let bare = DriftReference::Static(&x * 1.0);
        let with_fd = DriftReference::Static(&x + &fd);
        let series = |drift: &DriftReference| -> Vec<f64> {
            [1, 2, 4]
                .iter()
                .map(|&n| check_quadrature_consistency(&c, cfg(n, 3, 0.2 / n as f64), drift).unwrap().max_ratio)
                .collect()
        };
        let right = series(&bare);
        let wrong = series(&with_fd);
        assert!(right.iter().all(|&r| r < 10.0), "{right:?}");
        assert!(right[2] / right[0] < 1.1, "{right:?}");
        // An O(dt) mismatch divided by dt^{3/2} grows like dt^{-1/2}.
        assert!(wrong[2] / wrong[0] > 1.4, "{wrong:?}");
    }
}
