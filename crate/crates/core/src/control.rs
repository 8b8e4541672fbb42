//! Control records, modulators and adapted SLH coefficients.
//!
//! Coefficients at step `k` see only the record increments with index `< k`.
//! The same builder is evaluated either on a classical record (`f64` signals)
//! or on commuting field operators inside a collision-model dilation, through
//! the [`Realization`] trait.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{annihilator, number, HilbertSpace, Operator, I};
use crate::slh::{SlhTriple, VALIDATION_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    /// Real increments `ΔZ_k` of a quadrature record.
    Quadrature,
    /// Photon counts `ΔN_k ∈ {0, 1}`.
    Counting,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordKind::Quadrature => write!(f, "quadrature"),
            RecordKind::Counting => write!(f, "counting"),
        }
    }
}

/// Time-ordered measurement increments on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    dt: f64,
    kind: RecordKind,
    increments: Vec<f64>,
}

impl ControlRecord {
    pub fn new(kind: RecordKind, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter { name: "dt", reason: format!("must be positive, got {dt}") });
        }
        Ok(Self { dt, kind, increments: Vec::new() })
    }

    pub fn from_increments(kind: RecordKind, dt: f64, increments: Vec<f64>) -> Result<Self> {
        let mut r = Self::new(kind, dt)?;
        r.increments.reserve(increments.len());
        for x in increments {
            r.push(x)?;
        }
        Ok(r)
    }

    pub fn push(&mut self, increment: f64) -> Result<()> {
        if !increment.is_finite() {
            return Err(Error::NonFinite("record increment"));
        }
        if self.kind == RecordKind::Counting && increment != 0.0 && increment != 1.0 {
            return Err(Error::RecordKind(format!(
                "counting increments must be 0 or 1, got {increment}"
            )));
        }
        self.increments.push(increment);
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn kind(&self) -> RecordKind {
        self.kind
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn elapsed(&self) -> f64 {
        self.increments.len() as f64 * self.dt
    }

    /// Cumulative values `Z_k = Σ_{j<k} ΔZ_j` for `k = 0..=len`.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut z = 0.0;
        out.push(z);
        for &dz in &self.increments {
            z += dz;
            out.push(z);
        }
        out
    }
}

/// Values a control signal can take: plain numbers, or commuting operators in a dilation.
pub trait SignalValue: Clone {
    fn add(&self, other: &Self) -> Self;
    fn scale(&self, x: f64) -> Self;
    fn map(&self, g: &dyn Fn(f64) -> f64) -> Result<Self>;
}

impl SignalValue for f64 {
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn scale(&self, x: f64) -> Self {
        self * x
    }
    fn map(&self, g: &dyn Fn(f64) -> f64) -> Result<Self> {
        Ok(g(*self))
    }
}

impl SignalValue for Operator {
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn scale(&self, x: f64) -> Self {
        self.scale_re(x)
    }
    fn map(&self, g: &dyn Fn(f64) -> f64) -> Result<Self> {
        self.hermitian_function(g)
    }
}

#[derive(Clone)]
pub struct NonlinearFn {
    label: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl NonlinearFn {
    pub fn new(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { label: label.into(), f: Arc::new(f) }
    }

    /// `g(z) = Σ c_i z^i`.
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        let label = format!("poly{coeffs:?}");
        Self::new(label, move |z| coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c))
    }

    pub fn eval(&self, z: f64) -> f64 {
        (self.f)(z)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for NonlinearFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NonlinearFn({})", self.label)
    }
}

/// Causal classical processor turning the record into control signals.
#[derive(Clone, Debug)]
pub enum Modulator {
    /// `W_k = Z_k`.
    Proportional,
    /// `W_k = g(Z_k)`.
    Nonlinear(NonlinearFn),
    /// `W_k = Σ_{j<k} h[k−j] ΔZ_j` with `h[m] = h(m·dt)`.
    Convolution { kernel: Vec<f64>, strict: bool },
    /// `Ẇ = k_P Y + k_I ∫Y + k_D Ẏ`.
    Pid { kp: f64, ki: f64, kd: f64 },
}

/// Left-point samples `W_k` and increments `ΔW_k`, both of record length.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulatedSignal {
    pub values: Vec<f64>,
    pub increments: Vec<f64>,
}

impl Modulator {
    pub fn name(&self) -> String {
        match self {
            Modulator::Proportional => "proportional".into(),
            Modulator::Nonlinear(g) => format!("nonlinear({})", g.label()),
            Modulator::Convolution { kernel, .. } => format!("convolution({} samples)", kernel.len()),
            Modulator::Pid { kp, ki, kd } => format!("pid(kp={kp}, ki={ki}, kd={kd})"),
        }
    }

    /// Number of signals handed to coefficient builders: `[Z]`, `[g(Z)]`,
    /// `[h⋆dZ]`, or `[Z, ∫Z ds]` for PID.
    pub fn signal_count(&self) -> usize {
        match self {
            Modulator::Pid { .. } => 2,
            _ => 1,
        }
    }

    fn kernel_at(&self, lag: usize) -> Result<f64> {
        match self {
            Modulator::Convolution { kernel, strict } => match kernel.get(lag) {
                Some(&h) => Ok(h),
                None if *strict => Err(Error::KernelTooShort { kernel: kernel.len(), needed: lag + 1 }),
                None => Ok(0.0),
            },
            _ => unreachable!("kernel lookup on a non-convolution modulator"),
        }
    }

    /// Signals at step `k = increments.len()`; only the given prefix is visible.
    pub fn signals<T: SignalValue>(&self, increments: &[T], dt: f64, zero: &T) -> Result<Vec<T>> {
        let k = increments.len();
        let cumulative = || increments.iter().fold(zero.clone(), |acc, dz| acc.add(dz));
        match self {
            Modulator::Proportional => Ok(vec![cumulative()]),
            Modulator::Nonlinear(g) => Ok(vec![cumulative().map(&|z| g.eval(z))?]),
            Modulator::Convolution { .. } => {
                let mut acc = zero.clone();
                for (j, dz) in increments.iter().enumerate() {
                    let h = self.kernel_at(k - j)?;
                    if h != 0.0 {
                        acc = acc.add(&dz.scale(h));
                    }
                }
                Ok(vec![acc])
            }
            Modulator::Pid { .. } => {
                let mut z = zero.clone();
                let mut integral = zero.clone();
                for dz in increments {
                    integral = integral.add(&z.scale(dt));
                    z = z.add(dz);
                }
                Ok(vec![z, integral])
            }
        }
    }

    /// The control signal `W` over a whole record, sampled left of each step.
    pub fn modulate(&self, record: &ControlRecord) -> Result<ModulatedSignal> {
        let incs = record.increments();
        let dt = record.dt();
        let n = incs.len();
        let z = record.values();
        let (values, increments) = match self {
            Modulator::Proportional => (z[..n].to_vec(), incs.to_vec()),
            Modulator::Nonlinear(g) => {
                let w: Vec<f64> = z.iter().map(|&v| g.eval(v)).collect();
                let dw = w.windows(2).map(|p| p[1] - p[0]).collect();
                (w[..n].to_vec(), dw)
            }
            Modulator::Convolution { .. } => {
                let mut w = Vec::with_capacity(n + 1);
                for k in 0..=n {
                    let mut acc = 0.0;
                    for (j, dz) in incs[..k].iter().enumerate() {
                        acc += self.kernel_at(k - j)? * dz;
                    }
                    w.push(acc);
                }
                let dw = w.windows(2).map(|p| p[1] - p[0]).collect();
                (w[..n].to_vec(), dw)
            }
            Modulator::Pid { kp, ki, kd } => {
                let mut w = Vec::with_capacity(n);
                let mut dw = Vec::with_capacity(n);
                let mut acc = 0.0;
                let mut integral = 0.0;
                for k in 0..n {
                    integral += z[k] * dt;
                    let step = kp * z[k] * dt + ki * integral * dt + kd * incs[k];
                    w.push(acc);
                    dw.push(step);
                    acc += step;
                }
                (w, dw)
            }
        };
        Ok(ModulatedSignal { values, increments })
    }
}

/// Incremental evaluation of [`Modulator::signals`] on a classical record.
#[derive(Clone, Debug)]
pub struct SignalState {
    modulator: Modulator,
    dt: f64,
    z: f64,
    integral: f64,
    history: Vec<f64>,
}

impl SignalState {
    pub fn new(modulator: &Modulator, dt: f64) -> Self {
        Self { modulator: modulator.clone(), dt, z: 0.0, integral: 0.0, history: Vec::new() }
    }

    /// Signals for the next step given everything pushed so far.
    pub fn current(&self, out: &mut [f64]) -> Result<()> {
        match &self.modulator {
            Modulator::Proportional => out[0] = self.z,
            Modulator::Nonlinear(g) => out[0] = g.eval(self.z),
            Modulator::Convolution { .. } => {
                let k = self.history.len();
                let mut acc = 0.0;
                for (j, dz) in self.history.iter().enumerate() {
                    acc += self.modulator.kernel_at(k - j)? * dz;
                }
                out[0] = acc;
            }
            Modulator::Pid { .. } => {
                out[0] = self.z;
                out[1] = self.integral;
            }
        }
        Ok(())
    }

    pub fn push(&mut self, increment: f64) {
        self.integral += self.z * self.dt;
        self.z += increment;
        if matches!(self.modulator, Modulator::Convolution { .. }) {
            self.history.push(increment);
        }
    }
}

/// `op ⊗ signal[index]`, added to `L[channel]` or to `H`.
#[derive(Clone, Debug)]
pub struct SignalTerm {
    pub channel: usize,
    pub op: Operator,
    pub signal: usize,
}

/// Where coefficient operators and signals live.
pub trait Realization {
    type Signal: SignalValue;
    /// Carry a system operator into the working space.
    fn lift(&self, op: &Operator) -> Result<Operator>;
    fn zero_signal(&self) -> Self::Signal;
    /// `lift(op) · signal`.
    fn couple(&self, op: &Operator, signal: &Self::Signal) -> Result<Operator>;
}

/// Classical record: the working space is the system space, signals are numbers.
pub struct Classical;

impl Realization for Classical {
    type Signal = f64;
    fn lift(&self, op: &Operator) -> Result<Operator> {
        Ok(op.clone())
    }
    fn zero_signal(&self) -> f64 {
        0.0
    }
    fn couple(&self, op: &Operator, signal: &f64) -> Result<Operator> {
        Ok(op.scale_re(*signal))
    }
}

/// Adapted SLH coefficients `(S_t[[Z]], L_t[[Z]], H_t[[Z]])`, affine in the
/// modulator's signals, plus an optional operator-valued convolution in `H`.
#[derive(Clone, Debug)]
pub struct ControlledCoefficients {
    base: SlhTriple,
    l_terms: Vec<SignalTerm>,
    h_terms: Vec<SignalTerm>,
    h_kernel: Option<Vec<Operator>>,
    modulator: Modulator,
    kind: RecordKind,
    description: String,
}

fn require_hermitian(op: &Operator, what: &'static str) -> Result<()> {
    if op.is_hermitian(VALIDATION_TOL) {
        Ok(())
    } else {
        Err(Error::NotHermitian(what))
    }
}

impl ControlledCoefficients {
    /// Uncontrolled triple viewed as a (trivially) adapted one.
    pub fn constant(base: SlhTriple) -> Result<Self> {
        base.check(VALIDATION_TOL)?;
        Ok(Self {
            base,
            l_terms: Vec::new(),
            h_terms: Vec::new(),
            h_kernel: None,
            modulator: Modulator::Proportional,
            kind: RecordKind::Quadrature,
            description: "static".into(),
        })
    }

    pub fn with_kind(mut self, kind: RecordKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn base(&self) -> &SlhTriple {
        &self.base
    }

    pub fn l_terms(&self) -> &[SignalTerm] {
        &self.l_terms
    }

    pub fn h_terms(&self) -> &[SignalTerm] {
        &self.h_terms
    }

    pub fn h_kernel(&self) -> Option<&[Operator]> {
        self.h_kernel.as_deref()
    }

    pub fn modulator(&self) -> &Modulator {
        &self.modulator
    }

    pub fn kind(&self) -> RecordKind {
        self.kind
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn system_space(&self) -> &HilbertSpace {
        self.base.space()
    }

    pub fn multiplicity(&self) -> usize {
        self.base.multiplicity()
    }

    /// Triple in an arbitrary realization at step `k = increments.len()`.
    pub fn realize<R: Realization>(&self, r: &R, increments: &[R::Signal], dt: f64) -> Result<SlhTriple> {
        let signals = self.modulator.signals(increments, dt, &r.zero_signal())?;
        let lifted = self.base.map_operators(|op| r.lift(op).expect("lift of a system operator"))?;
        let mut l: Vec<Operator> = lifted.l_vec().to_vec();
        for t in &self.l_terms {
            l[t.channel] += &r.couple(&t.op, &signals[t.signal])?;
        }
        let mut h = lifted.h().clone();
        for t in &self.h_terms {
            h += &r.couple(&t.op, &signals[t.signal])?;
        }
        if let Some(kernel) = &self.h_kernel {
            let k = increments.len();
            for (j, dz) in increments.iter().enumerate() {
                let lag = k - j;
                let f = kernel.get(lag).ok_or(Error::KernelTooShort { kernel: kernel.len(), needed: lag + 1 })?;
                h += &r.couple(f, dz)?;
            }
        }
        SlhTriple::new(lifted.s_rows().to_vec(), l, h)
    }

    /// Validated triple at step `k`, seeing `record.increments()[..k]` only.
    pub fn evaluate(&self, k: usize, record: &ControlRecord) -> Result<SlhTriple> {
        if record.kind() != self.kind {
            return Err(Error::RecordKind(format!(
                "coefficients expect a {} record, got {}",
                self.kind,
                record.kind()
            )));
        }
        if k > record.len() {
            return Err(Error::Parameter {
                name: "k",
                reason: format!("step {k} beyond record of length {}", record.len()),
            });
        }
        let g = self.realize(&Classical, &record.increments()[..k], record.dt())?;
        g.check(VALIDATION_TOL)?;
        Ok(g)
    }
}

/// `(S, L, H₀ + F·W)` with `W` produced by `modulator`.
///
/// A PID modulator with `k_D ≠ 0` is realised through [`pid_coefficients`]
/// with `F_P = k_P F`, `F_I = k_I F`, `F_D = k_D F`.
pub fn hamiltonian_feedback(base: SlhTriple, f: Operator, modulator: Modulator) -> Result<ControlledCoefficients> {
    require_hermitian(&f, "feedback operator F")?;
    base.check(VALIDATION_TOL)?;
    base.h().check_space(&f)?;
    let description = format!("hamiltonian feedback, {}", modulator.name());
    if let Modulator::Pid { kp, ki, kd } = modulator {
        if base.multiplicity() != 1 || !base.has_identity_scattering(VALIDATION_TOL) {
            return Err(Error::Unsupported("PID feedback needs a single channel with S = I".into()));
        }
        let mut c = pid_coefficients(
            base.l(0).clone(),
            base.h().clone(),
            &f * kp,
            &f * ki,
            &f * kd,
        )?;
        c.description = description;
        return Ok(c);
    }
    Ok(ControlledCoefficients {
        base,
        l_terms: Vec::new(),
        h_terms: vec![SignalTerm { channel: 0, op: f, signal: 0 }],
        h_kernel: None,
        modulator,
        kind: RecordKind::Quadrature,
        description,
    })
}

/// `H_t = H₀ + Σ_{j<k} F((k−j)dt) ΔZ_j` for an operator-valued kernel sampled on the grid.
pub fn hamiltonian_convolution(base: SlhTriple, kernel: Vec<Operator>) -> Result<ControlledCoefficients> {
    base.check(VALIDATION_TOL)?;
    for f in &kernel {
        require_hermitian(f, "convolution kernel sample")?;
        base.h().check_space(f)?;
    }
    Ok(ControlledCoefficients {
        base,
        l_terms: Vec::new(),
        h_terms: Vec::new(),
        h_kernel: Some(kernel),
        modulator: Modulator::Proportional,
        kind: RecordKind::Quadrature,
        description: "hamiltonian convolution (operator kernel)".into(),
    })
}

/// Cavity with `S = e^{iθ}`, `L = √γ a + λ Z_t`, `H = ω a†a` on a `dim`-level truncation.
pub fn coupling_feedback(dim: usize, gamma: f64, lambda: f64, omega: f64, theta: f64) -> Result<ControlledCoefficients> {
    if !(gamma >= 0.0) {
        return Err(Error::Parameter { name: "gamma", reason: format!("must be non-negative, got {gamma}") });
    }
    for (name, v) in [("lambda", lambda), ("omega", omega), ("theta", theta)] {
        if !v.is_finite() {
            return Err(Error::Parameter { name, reason: "must be finite".into() });
        }
    }
    let a = annihilator(dim)?;
    let base = SlhTriple::with_phase(theta, &a * gamma.sqrt(), number(dim)? * omega)?;
    let id = Operator::identity(a.space());
    Ok(ControlledCoefficients {
        base,
        l_terms: vec![SignalTerm { channel: 0, op: id * lambda, signal: 0 }],
        h_terms: Vec::new(),
        h_kernel: None,
        modulator: Modulator::Proportional,
        kind: RecordKind::Quadrature,
        description: format!("coupling feedback (gamma={gamma}, lambda={lambda}, omega={omega}, theta={theta})"),
    })
}

/// Quantum PID coefficients:
/// `S = I`, `L = L₀ − iF_D`, `H = H₀ + ½(F_D L₀ + L₀†F_D) + F_P Z_t + F_I ∫Z ds`.
pub fn pid_coefficients(
    l0: Operator,
    h0: Operator,
    fp: Operator,
    fi: Operator,
    fd: Operator,
) -> Result<ControlledCoefficients> {
    require_hermitian(&fp, "F_P")?;
    require_hermitian(&fi, "F_I")?;
    require_hermitian(&fd, "F_D")?;
    for op in [&h0, &fp, &fi, &fd] {
        l0.check_space(op)?;
    }
    let l = &l0 - &fd * I;
    let h = &h0 + (&fd * &l0 + l0.adjoint() * &fd) * 0.5;
    let base = SlhTriple::single(l, h)?;
    base.check(VALIDATION_TOL)?;
    let mut h_terms = Vec::new();
    if fp.frobenius_norm() > 0.0 {
        h_terms.push(SignalTerm { channel: 0, op: fp, signal: 0 });
    }
    if fi.frobenius_norm() > 0.0 {
        h_terms.push(SignalTerm { channel: 0, op: fi, signal: 1 });
    }
    Ok(ControlledCoefficients {
        base,
        l_terms: Vec::new(),
        h_terms,
        h_kernel: None,
        modulator: Modulator::Pid { kp: 1.0, ki: 1.0, kd: 0.0 },
        kind: RecordKind::Quadrature,
        description: "quantum PID".into(),
    })
}
