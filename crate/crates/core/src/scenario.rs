//! TOML scenarios.
//!
//! ```toml
//! name = "coupling-feedback"
//! seed = 20261015
//! outputs = ["a"]
//!
//! [system]
//! kind = "cavity"        # cavity | qubit | custom
//! dim = 10
//!
//! [slh]
//! type = "coupling_feedback"
//! gamma = 1.0
//! lambda = 0.1
//!
//! [sim]
//! dt = 0.001
//! T = 5.0
//! n_traj = 2000
//! unravelling = "homodyne"
//! initial = { kind = "coherent", alpha = [1.0, 0.0] }
//! ```
//!
//! Operators are either expressions such as `"0.5*a + ad*a - 2*i*sz"` (real
//! coefficients, `*` products of named operators, `i` the imaginary unit) or
//! matrices written as rows of `[re, im]` pairs. Names: cavity `a ad n x p id`,
//! qubit `sm sp sx sy sz id`, custom `id`, plus anything defined under `[observables]`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{
    coupling_feedback, hamiltonian_feedback, pid_coefficients, ControlledCoefficients, Modulator, NonlinearFn,
    RecordKind,
};
use crate::dilation::{CollisionConfig, DriftReference};
use crate::error::{Error, Result};
use crate::operator::{annihilator, creator, number, sigma_minus, sigma_x, sigma_y, sigma_z, HilbertSpace, Operator, I};
use crate::sim::{coherent_state, fock_state, NamedObservable, SimConfig, Unravelling};
use crate::slh::{concatenate, series_product, SlhTriple};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub system: SystemSpec,
    pub slh: SlhSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulator: Option<ModulatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dilation: Option<DilationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compose: Option<ComposeSpec>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub observables: BTreeMap<String, OperatorSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Cavity,
    Qubit,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: SystemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Expr(String),
    Matrix(Vec<Vec<[f64; 2]>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SlhSpec {
    Static {
        #[serde(default)]
        phase: f64,
        l: OperatorSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<OperatorSpec>,
    },
    CouplingFeedback {
        gamma: f64,
        lambda: f64,
        #[serde(default)]
        omega: f64,
        #[serde(default)]
        theta: f64,
    },
    HamiltonianFeedback {
        #[serde(default)]
        phase: f64,
        l: OperatorSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<OperatorSpec>,
        f: OperatorSpec,
    },
    Pid {
        l0: OperatorSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h0: Option<OperatorSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fp: Option<OperatorSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fi: Option<OperatorSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fd: Option<OperatorSpec>,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModulatorSpec {
    Proportional,
    /// `g(z) = Σ c_i z^i`.
    Polynomial { coeffs: Vec<f64> },
    /// `g(z) = gain · tanh(z / scale)`.
    Tanh { gain: f64, scale: f64 },
    Convolution {
        kernel: Vec<f64>,
        #[serde(default = "default_true")]
        strict: bool,
    },
    Pid { kp: f64, ki: f64, kd: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Fock { n: usize },
    Coherent { alpha: [f64; 2] },
    Vector { amplitudes: Vec<[f64; 2]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub n_traj: usize,
    pub unravelling: Unravelling,
    pub initial: InitialState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DilationSpec {
    pub n_bins: usize,
    pub bin_dim: usize,
    pub dt: f64,
    #[serde(default = "default_record")]
    pub record: RecordKind,
    /// Quadrature drift reference; defaults to `L + L†` of the coefficients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<OperatorSpec>,
}

fn default_record() -> RecordKind {
    RecordKind::Quadrature
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposeOperation {
    Series,
    Concatenate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    #[serde(default)]
    pub phase: f64,
    pub l: OperatorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<OperatorSpec>,
}

/// `[slh]` is stage 0; for `series` each stage feeds the next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeSpec {
    pub operation: ComposeOperation,
    pub stages: Vec<StageSpec>,
}

fn invalid(path: &str, reason: impl Into<String>) -> Error {
    Error::Scenario { path: path.to_string(), reason: reason.into() }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| invalid("scenario", e.to_string().trim_end()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(&path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    /// Resolves every referenced operator and builder.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        self.space()?;
        for (name, spec) in &self.observables {
            if !valid_identifier(name) {
                return Err(invalid(&format!("observables.{name}"), "names must match [A-Za-z_][A-Za-z0-9_]*"));
            }
            if builtin_names(self.system.kind).contains(&name.as_str()) || name == "i" {
                return Err(invalid(&format!("observables.{name}"), "shadows a built-in operator name"));
            }
            self.operator(spec, &format!("observables.{name}"))?;
        }
        self.coefficients()?;
        self.observables_for_outputs()?;
        if self.sim.is_some() {
            self.sim_config()?;
        }
        if self.dilation.is_some() {
            self.collision_config()?;
        }
        if self.compose.is_some() {
            self.composed()?;
        }
        Ok(())
    }

    pub fn system_dim(&self) -> Result<usize> {
        match (self.system.kind, self.system.dim) {
            (SystemKind::Qubit, None) | (SystemKind::Qubit, Some(2)) => Ok(2),
            (SystemKind::Qubit, Some(d)) => Err(invalid("system.dim", format!("a qubit has dimension 2, got {d}"))),
            (_, None) => Err(invalid("system.dim", "required for cavity and custom systems")),
            (_, Some(0)) => Err(invalid("system.dim", "must be positive")),
            (_, Some(d)) => Ok(d),
        }
    }

    pub fn space(&self) -> Result<HilbertSpace> {
        HilbertSpace::simple(self.system_dim()?).map_err(|e| e.at("system.dim"))
    }

    fn builtin(&self, name: &str) -> Result<Option<Operator>> {
        let d = self.system_dim()?;
        let op = match (self.system.kind, name) {
            (_, "id") => Operator::identity(&self.space()?),
            (SystemKind::Cavity, "a") => annihilator(d)?,
            (SystemKind::Cavity, "ad") => creator(d)?,
            (SystemKind::Cavity, "n") => number(d)?,
            (SystemKind::Cavity, "x") => annihilator(d)? + creator(d)?,
            (SystemKind::Cavity, "p") => (creator(d)? - annihilator(d)?) * I,
            (SystemKind::Qubit, "sm") => sigma_minus(),
            (SystemKind::Qubit, "sp") => sigma_minus().adjoint(),
            (SystemKind::Qubit, "sx") => sigma_x(),
            (SystemKind::Qubit, "sy") => sigma_y(),
            (SystemKind::Qubit, "sz") => sigma_z(),
            _ => return Ok(None),
        };
        Ok(Some(op))
    }

    fn named(&self, name: &str, path: &str, depth: usize) -> Result<Operator> {
        if let Some(op) = self.builtin(name)? {
            return Ok(op);
        }
        match self.observables.get(name) {
            Some(_) if depth > 8 => Err(invalid(path, format!("definition of {name} is too deeply nested"))),
            Some(spec) => self.resolve(spec, path, depth + 1),
            None => Err(invalid(path, format!("unknown operator name {name:?} for a {:?} system", self.system.kind))),
        }
    }

    fn resolve(&self, spec: &OperatorSpec, path: &str, depth: usize) -> Result<Operator> {
        let space = self.space()?;
        match spec {
            OperatorSpec::Matrix(rows) => {
                let d = space.dim();
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(invalid(path, format!("matrix must be {d}x{d}")));
                }
                if rows.iter().flatten().any(|z| !z[0].is_finite() || !z[1].is_finite()) {
                    return Err(invalid(path, "matrix entries must be finite"));
                }
                let m = DMatrix::from_fn(d, d, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1]));
                Operator::from_matrix(space, m).map_err(|e| e.at(path))
            }
            OperatorSpec::Expr(text) => {
                let mut acc = Operator::zeros(&space);
                for (coeff, names) in parse_expression(text).map_err(|r| invalid(path, r))? {
                    let mut term = Operator::identity(&space);
                    for n in &names {
                        term = term * self.named(n, path, depth)?;
                    }
                    acc += &(term * coeff);
                }
                Ok(acc)
            }
        }
    }

    pub fn operator(&self, spec: &OperatorSpec, path: &str) -> Result<Operator> {
        self.resolve(spec, path, 0)
    }

    fn optional(&self, spec: &Option<OperatorSpec>, path: &str) -> Result<Operator> {
        match spec {
            Some(s) => self.operator(s, path),
            None => Ok(Operator::zeros(&self.space()?)),
        }
    }

    pub fn modulator(&self) -> Result<Modulator> {
        let m = match &self.modulator {
            None | Some(ModulatorSpec::Proportional) => Modulator::Proportional,
            Some(ModulatorSpec::Polynomial { coeffs }) => {
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(invalid("modulator.coeffs", "need at least one finite coefficient"));
                }
                Modulator::Nonlinear(NonlinearFn::polynomial(coeffs.clone()))
            }
            Some(ModulatorSpec::Tanh { gain, scale }) => {
                if !(scale.is_finite() && *scale != 0.0) {
                    return Err(invalid("modulator.scale", "must be finite and non-zero"));
                }
                let (g, s) = (*gain, *scale);
                Modulator::Nonlinear(NonlinearFn::new(format!("{g}*tanh(z/{s})"), move |z| g * (z / s).tanh()))
            }
            Some(ModulatorSpec::Convolution { kernel, strict }) => {
                if kernel.iter().any(|h| !h.is_finite()) {
                    return Err(invalid("modulator.kernel", "entries must be finite"));
                }
                Modulator::Convolution { kernel: kernel.clone(), strict: *strict }
            }
            Some(ModulatorSpec::Pid { kp, ki, kd }) => {
                for (name, v) in [("kp", kp), ("ki", ki), ("kd", kd)] {
                    if !v.is_finite() {
                        return Err(invalid(&format!("modulator.{name}"), "must be finite"));
                    }
                }
                Modulator::Pid { kp: *kp, ki: *ki, kd: *kd }
            }
        };
        Ok(m)
    }

    fn record_kind(&self) -> RecordKind {
        match (&self.sim, &self.dilation) {
            (Some(s), _) => s.unravelling.record_kind(),
            (None, Some(d)) => d.record,
            _ => RecordKind::Quadrature,
        }
    }

    pub fn coefficients(&self) -> Result<ControlledCoefficients> {
        let d = self.system_dim()?;
        let needs_no_modulator = |what: &str| -> Result<()> {
            if self.modulator.is_some() {
                Err(invalid("modulator", format!("not used by {what} coefficients")))
            } else {
                Ok(())
            }
        };
        let c = match &self.slh {
            SlhSpec::Static { phase, l, h } => {
                needs_no_modulator("static")?;
                let g = SlhTriple::with_phase(*phase, self.operator(l, "slh.l")?, self.optional(h, "slh.h")?)
                    .map_err(|e| e.at("slh"))?;
                ControlledCoefficients::constant(g).map_err(|e| e.at("slh"))?
            }
            SlhSpec::CouplingFeedback { gamma, lambda, omega, theta } => {
                needs_no_modulator("coupling_feedback")?;
                if self.system.kind != SystemKind::Cavity {
                    return Err(invalid("slh.type", "coupling_feedback needs a cavity system"));
                }
                if *gamma < 0.0 || !gamma.is_finite() {
                    return Err(invalid("slh.gamma", format!("must be non-negative, got {gamma}")));
                }
                coupling_feedback(d, *gamma, *lambda, *omega, *theta).map_err(|e| e.at("slh"))?
            }
            SlhSpec::HamiltonianFeedback { phase, l, h, f } => {
                let base = SlhTriple::with_phase(*phase, self.operator(l, "slh.l")?, self.optional(h, "slh.h")?)
                    .map_err(|e| e.at("slh"))?;
                hamiltonian_feedback(base, self.operator(f, "slh.f")?, self.modulator()?).map_err(|e| e.at("slh.f"))?
            }
            SlhSpec::Pid { l0, h0, fp, fi, fd } => {
                needs_no_modulator("pid")?;
                pid_coefficients(
                    self.operator(l0, "slh.l0")?,
                    self.optional(h0, "slh.h0")?,
                    self.optional(fp, "slh.fp")?,
                    self.optional(fi, "slh.fi")?,
                    self.optional(fd, "slh.fd")?,
                )
                .map_err(|e| e.at("slh"))?
            }
        };
        Ok(c.with_kind(self.record_kind()))
    }

    fn observables_for_outputs(&self) -> Result<Vec<NamedObservable>> {
        self.outputs
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let path = format!("outputs[{i}]");
                if !valid_identifier(name) {
                    return Err(invalid(&path, format!("{name:?} is not an operator name")));
                }
                Ok(NamedObservable::new(name.clone(), self.named(name, &path, 0)?))
            })
            .collect()
    }

    pub fn initial_state(&self) -> Result<DVector<Complex64>> {
        let sim = self.sim.as_ref().ok_or_else(|| invalid("sim", "missing [sim] section"))?;
        let d = self.system_dim()?;
        let psi = match &sim.initial {
            InitialState::Fock { n } => fock_state(d, *n).map_err(|e| e.at("sim.initial.n"))?,
            InitialState::Coherent { alpha } => {
                if self.system.kind != SystemKind::Cavity {
                    return Err(invalid("sim.initial", "coherent states need a cavity system"));
                }
                coherent_state(d, Complex64::new(alpha[0], alpha[1])).map_err(|e| e.at("sim.initial.alpha"))?
            }
            InitialState::Vector { amplitudes } => {
                if amplitudes.len() != d {
                    return Err(invalid("sim.initial.amplitudes", format!("need {d} amplitudes")));
                }
                let v = DVector::from_iterator(d, amplitudes.iter().map(|z| Complex64::new(z[0], z[1])));
                if (v.norm() - 1.0).abs() > 1e-10 {
                    return Err(invalid("sim.initial.amplitudes", format!("state has norm {}", v.norm())));
                }
                v
            }
        };
        Ok(psi)
    }

    pub fn sim_config(&self) -> Result<(SimConfig, DVector<Complex64>)> {
        let sim = self.sim.as_ref().ok_or_else(|| invalid("sim", "missing [sim] section"))?;
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return Err(invalid("sim.dt", format!("must be positive, got {}", sim.dt)));
        }
        if sim.n_traj < 1 {
            return Err(invalid("sim.n_traj", "must be at least 1"));
        }
        let cfg = SimConfig {
            dt: sim.dt,
            t_final: sim.t_final,
            n_traj: sim.n_traj,
            seed: self.seed,
            unravelling: sim.unravelling,
            system_dim: self.system_dim()?,
            observables: self.observables_for_outputs()?,
        };
        cfg.validate().map_err(|e| e.at("sim.T"))?;
        Ok((cfg, self.initial_state()?))
    }

    pub fn collision_config(&self) -> Result<(CollisionConfig, DriftReference)> {
        let d = self.dilation.as_ref().ok_or_else(|| invalid("dilation", "missing [dilation] section"))?;
        let cfg = CollisionConfig {
            n_bins: d.n_bins,
            bin_dim: d.bin_dim,
            dt: d.dt,
            system_dim: self.system_dim()?,
            kind: d.record,
        };
        cfg.space().map_err(|e| e.at("dilation"))?;
        let drift = match &d.drift {
            Some(spec) => DriftReference::Static(self.operator(spec, "dilation.drift")?),
            None => DriftReference::Coefficients,
        };
        Ok((cfg, drift))
    }

    /// Composition of `[slh]` (its record-free part) with the `[compose]` stages.
    pub fn composed(&self) -> Result<SlhTriple> {
        let spec = self.compose.as_ref().ok_or_else(|| invalid("compose", "missing [compose] section"))?;
        let mut acc = self.coefficients()?.base().clone();
        for (i, stage) in spec.stages.iter().enumerate() {
            let path = format!("compose.stages[{i}]");
            let g = SlhTriple::with_phase(
                stage.phase,
                self.operator(&stage.l, &format!("{path}.l"))?,
                self.optional(&stage.h, &format!("{path}.h"))?,
            )
            .map_err(|e| e.at(&path))?;
            acc = match spec.operation {
                ComposeOperation::Series => series_product(&g, &acc),
                ComposeOperation::Concatenate => concatenate(&acc, &g),
            }
            .map_err(|e| e.at(&path))?;
        }
        Ok(acc)
    }
}

fn valid_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn builtin_names(kind: SystemKind) -> &'static [&'static str] {
    match kind {
        SystemKind::Cavity => &["id", "a", "ad", "n", "x", "p"],
        SystemKind::Qubit => &["id", "sm", "sp", "sx", "sy", "sz"],
        SystemKind::Custom => &["id"],
    }
}

/// True when the buffer ends in the mantissa of a number such as `1.5e`.
fn in_exponent(current: &str) -> bool {
    let last = current.rsplit('*').next().unwrap_or("").trim_start();
    match last.strip_suffix(['e', 'E']) {
        Some(mantissa) => !mantissa.is_empty() && mantissa.parse::<f64>().is_ok(),
        None => false,
    }
}

/// Splits `"0.5*a + ad*a - 2*i*sz"` into `[(0.5, [a]), (1, [ad, a]), (−2i, [sz])]`.
fn parse_expression(text: &str) -> std::result::Result<Vec<(Complex64, Vec<String>)>, String> {
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut current = String::new();
    let flush = |sign: f64, s: &str, terms: &mut Vec<(Complex64, Vec<String>)>| -> std::result::Result<(), String> {
        let s = s.trim();
        if s.is_empty() {
            return Err("empty term".into());
        }
        let mut coeff = Complex64::new(sign, 0.0);
        let mut names = Vec::new();
        for factor in s.split('*') {
            let f = factor.trim();
            if f.is_empty() {
                return Err(format!("empty factor in {s:?}"));
            }
            if f == "i" {
                coeff *= I;
            } else if let Ok(x) = f.parse::<f64>() {
                if !x.is_finite() {
                    return Err(format!("non-finite coefficient {f:?}"));
                }
                coeff *= x;
            } else if valid_identifier(f) {
                names.push(f.to_string());
            } else {
                return Err(format!("cannot parse factor {f:?}"));
            }
        }
        terms.push((coeff, names));
        Ok(())
    };
    let mut seen_term = false;
    for ch in text.chars() {
        if (ch == '+' || ch == '-') && !in_exponent(&current) {
            if current.trim().is_empty() {
                if seen_term {
                    return Err(format!("dangling operator before {ch:?}"));
                }
                if ch == '-' {
                    sign = -sign;
                }
                continue;
            }
            flush(sign, &current, &mut terms)?;
            seen_term = true;
            current.clear();
            sign = if ch == '-' { -1.0 } else { 1.0 };
            continue;
        }
        current.push(ch);
    }
    if current.trim().is_empty() {
        return Err(if text.trim().is_empty() { "empty expression".into() } else { "expression ends with an operator".into() });
    }
    flush(sign, &current, &mut terms)?;
    Ok(terms)
}
