//! Monte-Carlo trajectories of measurement-feedback dynamics in the output picture.
//!
//! Homodyne: normalised diffusive stochastic Schrödinger equation driven by
//! the innovation `ΔY − ⟨L+L†⟩dt`. Counting: first-order jump unravelling.
//! Coefficients are re-evaluated every step from the record prefix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlRecord, ControlledCoefficients, RecordKind, SignalState};
use crate::error::{Error, Result};
use crate::operator::{Operator, I};
use crate::slh::VALIDATION_TOL;

/// Trajectories per parallel work unit. Fixed so results do not depend on the thread count.
const CHUNK: usize = 64;
const MAX_JUMP_PROBABILITY: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unravelling {
    Homodyne,
    Counting,
}

impl Unravelling {
    pub fn record_kind(self) -> RecordKind {
        match self {
            Unravelling::Homodyne => RecordKind::Quadrature,
            Unravelling::Counting => RecordKind::Counting,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NamedObservable {
    pub name: String,
    pub op: Operator,
}

impl NamedObservable {
    pub fn new(name: impl Into<String>, op: Operator) -> Self {
        Self { name: name.into(), op }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub unravelling: Unravelling,
    pub system_dim: usize,
    pub observables: Vec<NamedObservable>,
}

impl SimConfig {
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter { name: "dt", reason: format!("must be positive, got {}", self.dt) });
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::Parameter { name: "T", reason: format!("must be non-negative, got {}", self.t_final) });
        }
        let n = (self.t_final / self.dt).round();
        if (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final.max(self.dt) {
            return Err(Error::Parameter {
                name: "T",
                reason: format!("T = {} is not an integer multiple of dt = {}", self.t_final, self.dt),
            });
        }
        Ok(n as usize)
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        Ok((0..=self.steps()?).map(|k| k as f64 * self.dt).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        if self.n_traj < 1 {
            return Err(Error::Parameter { name: "n_traj", reason: "must be at least 1".into() });
        }
        for o in &self.observables {
            if o.op.dim() != self.system_dim {
                return Err(Error::InvalidDimension(format!(
                    "observable {} has dimension {}, system_dim is {}",
                    o.name,
                    o.op.dim(),
                    self.system_dim
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryOutput {
    pub times: Vec<f64>,
    /// Measured increments `ΔY_k` or `ΔN_k`.
    pub record: ControlRecord,
    /// `⟨O⟩` at every grid time, one sequence per observable.
    pub expectations: Vec<Vec<Complex64>>,
    /// Per step: `⟨L+L†⟩` (homodyne) or `⟨L†L⟩` (counting) at the left point.
    pub intensity: Vec<f64>,
    /// Largest `|‖ψ‖ − 1|` before renormalisation.
    pub norm_drift: f64,
}

pub fn fock_state(dim: usize, n: usize) -> Result<DVector<Complex64>> {
    if n >= dim {
        return Err(Error::InvalidDimension(format!("Fock level {n} outside truncation {dim}")));
    }
    let mut v = DVector::zeros(dim);
    v[n] = Complex64::new(1.0, 0.0);
    Ok(v)
}

/// Truncated coherent state, renormalised on the truncation.
pub fn coherent_state(dim: usize, alpha: Complex64) -> Result<DVector<Complex64>> {
    if dim == 0 {
        return Err(Error::InvalidDimension("empty truncation".into()));
    }
    let mut v = DVector::zeros(dim);
    let mut amp = Complex64::new(1.0, 0.0);
    for n in 0..dim {
        v[n] = amp;
        amp *= alpha / ((n + 1) as f64).sqrt();
    }
    let norm = v.norm();
    Ok(v / Complex64::new(norm, 0.0))
}

/// Operator stored in the cheapest form for repeated matrix-vector products.
#[derive(Clone, Debug)]
enum Compact {
    Zero,
    Scalar(Complex64),
    Sparse(Vec<(usize, usize, Complex64)>),
    Dense(DMatrix<Complex64>),
}

impl Compact {
    fn new(op: &Operator) -> Self {
        let m = op.matrix();
        let d = m.nrows();
        let mut nz = Vec::new();
        for j in 0..d {
            for i in 0..d {
                if m[(i, j)] != Complex64::new(0.0, 0.0) {
                    nz.push((i, j, m[(i, j)]));
                }
            }
        }
        if nz.is_empty() {
            return Compact::Zero;
        }
        let diag = m[(0, 0)];
        if nz.len() == d && nz.iter().all(|&(i, j, z)| i == j && z == diag) {
            return Compact::Scalar(diag);
        }
        if nz.len() * 4 <= d * d {
            Compact::Sparse(nz)
        } else {
            Compact::Dense(m.clone())
        }
    }

    /// `out += w · op · x`.
    fn apply(&self, w: Complex64, x: &DVector<Complex64>, out: &mut DVector<Complex64>) {
        match self {
            Compact::Zero => {}
            Compact::Scalar(s) => out.axpy(w * s, x, Complex64::new(1.0, 0.0)),
            Compact::Sparse(nz) => {
                for &(i, j, z) in nz {
                    out[i] += w * z * x[j];
                }
            }
            Compact::Dense(m) => out.gemv(w, m, x, Complex64::new(1.0, 0.0)),
        }
    }

    /// `out += w · op† · x`.
    fn apply_adjoint(&self, w: Complex64, x: &DVector<Complex64>, out: &mut DVector<Complex64>) {
        match self {
            Compact::Zero => {}
            Compact::Scalar(s) => out.axpy(w * s.conj(), x, Complex64::new(1.0, 0.0)),
            Compact::Sparse(nz) => {
                for &(i, j, z) in nz {
                    out[j] += w * z.conj() * x[i];
                }
            }
            Compact::Dense(m) => out.gemv_ad(w, m, x, Complex64::new(1.0, 0.0)),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Compact::Zero)
    }
}

struct Engine<'a> {
    coeffs: &'a ControlledCoefficients,
    dt: f64,
    steps: usize,
    l_base: Compact,
    l_terms: Vec<(Compact, usize)>,
    h_base: Compact,
    h_terms: Vec<(Compact, usize)>,
    kernel: Option<Vec<DMatrix<Complex64>>>,
    observables: Vec<Compact>,
}

impl<'a> Engine<'a> {
    fn new(coeffs: &'a ControlledCoefficients, psi0: &DVector<Complex64>, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let steps = cfg.steps()?;
        if coeffs.multiplicity() != 1 {
            return Err(Error::Unsupported(format!(
                "trajectory simulation needs a single channel, got {}",
                coeffs.multiplicity()
            )));
        }
        if coeffs.base().scalar_scattering(VALIDATION_TOL).is_none() {
            return Err(Error::Unsupported("trajectory simulation needs S = (phase)·I".into()));
        }
        let kind = cfg.unravelling.record_kind();
        if coeffs.kind() != kind && !is_static(coeffs) {
            return Err(Error::RecordKind(format!(
                "{} unravelling cannot drive coefficients built for a {} record",
                match cfg.unravelling {
                    Unravelling::Homodyne => "homodyne",
                    Unravelling::Counting => "counting",
                },
                coeffs.kind()
            )));
        }
        let dim = coeffs.system_space().dim();
        if dim != cfg.system_dim || psi0.len() != dim {
            return Err(Error::InvalidDimension(format!(
                "system_dim {}, coefficient dimension {dim}, state length {}",
                cfg.system_dim,
                psi0.len()
            )));
        }
        let norm = psi0.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized(norm));
        }
        let only_ch0 = |ts: &[crate::control::SignalTerm]| ts.iter().map(|t| (Compact::new(&t.op), t.signal)).collect();
        Ok(Self {
            coeffs,
            dt: cfg.dt,
            steps,
            l_base: Compact::new(coeffs.base().l(0)),
            l_terms: only_ch0(coeffs.l_terms()),
            h_base: Compact::new(coeffs.base().h()),
            h_terms: only_ch0(coeffs.h_terms()),
            kernel: coeffs.h_kernel().map(|k| k.iter().map(|op| op.matrix().clone()).collect()),
            observables: cfg.observables.iter().map(|o| Compact::new(&o.op)).collect(),
        })
    }

    fn record_expectations(&self, psi: &DVector<Complex64>, tmp: &mut DVector<Complex64>, out: &mut [Vec<Complex64>]) {
        for (o, seq) in self.observables.iter().zip(out.iter_mut()) {
            tmp.fill(Complex64::new(0.0, 0.0));
            o.apply(Complex64::new(1.0, 0.0), psi, tmp);
            seq.push(psi.dotc(tmp));
        }
    }

    /// `v = Lψ`, `w = L†Lψ`, `h = Hψ` for the current signals and record prefix.
    #[allow(clippy::too_many_arguments)]
    fn apply_coefficients(
        &self,
        psi: &DVector<Complex64>,
        signals: &[f64],
        increments: &[f64],
        v: &mut DVector<Complex64>,
        w: &mut DVector<Complex64>,
        h: &mut DVector<Complex64>,
        need_h: bool,
    ) -> Result<()> {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        v.fill(zero);
        self.l_base.apply(one, psi, v);
        for (op, s) in &self.l_terms {
            op.apply(Complex64::new(signals[*s], 0.0), psi, v);
        }
        w.fill(zero);
        self.l_base.apply_adjoint(one, v, w);
        for (op, s) in &self.l_terms {
            op.apply_adjoint(Complex64::new(signals[*s], 0.0), v, w);
        }
        if need_h {
            h.fill(zero);
            self.h_base.apply(one, psi, h);
            for (op, s) in &self.h_terms {
                op.apply(Complex64::new(signals[*s], 0.0), psi, h);
            }
            if let Some(kernel) = &self.kernel {
                let k = increments.len();
                for (j, dz) in increments.iter().enumerate() {
                    let f = kernel
                        .get(k - j)
                        .ok_or(Error::KernelTooShort { kernel: kernel.len(), needed: k - j + 1 })?;
                    h.gemv(Complex64::new(*dz, 0.0), f, psi, one);
                }
            }
        }
        Ok(())
    }

    fn has_hamiltonian(&self) -> bool {
        !self.h_base.is_zero() || self.h_terms.iter().any(|(op, _)| !op.is_zero()) || self.kernel.is_some()
    }

    fn run(&self, psi0: &DVector<Complex64>, unravelling: Unravelling, rng: &mut ChaCha8Rng, times: Vec<f64>) -> Result<TrajectoryOutput> {
        let dim = psi0.len();
        let dt = self.dt;
        let sqrt_dt = dt.sqrt();
        let mut psi = psi0.clone();
        let mut v = DVector::zeros(dim);
        let mut w = DVector::zeros(dim);
        let mut h = DVector::zeros(dim);
        let mut tmp = DVector::zeros(dim);
        let mut state = SignalState::new(self.coeffs.modulator(), dt);
        let mut signals = vec![0.0; self.coeffs.modulator().signal_count()];
        let mut record = ControlRecord::new(unravelling.record_kind(), dt)?;
        let mut expectations: Vec<Vec<Complex64>> =
            self.observables.iter().map(|_| Vec::with_capacity(self.steps + 1)).collect();
        let mut intensity = Vec::with_capacity(self.steps);
        let mut norm_drift: f64 = 0.0;
        let need_h = self.has_hamiltonian();
        let minus_i = -I;

        self.record_expectations(&psi, &mut tmp, &mut expectations);
        for step in 0..self.steps {
            state.current(&mut signals)?;
            self.apply_coefficients(&psi, &signals, record.increments(), &mut v, &mut w, &mut h, need_h)?;
            let increment = match unravelling {
                Unravelling::Homodyne => {
                    let x = 2.0 * psi.dotc(&v).re;
                    let xi = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                    // ψ += [−iH − ½L†L + ½xL − ⅛x²]ψ dt + (L − ½x)ψ ξ
                    let a = Complex64::new(0.5 * x * dt + xi, 0.0);
                    let b = Complex64::new(1.0 - 0.125 * x * x * dt - 0.5 * x * xi, 0.0);
                    tmp.copy_from(&psi);
                    tmp.axpy(a, &v, b);
                    tmp.axpy(Complex64::new(-0.5 * dt, 0.0), &w, Complex64::new(1.0, 0.0));
                    if need_h {
                        tmp.axpy(minus_i * dt, &h, Complex64::new(1.0, 0.0));
                    }
                    let n = tmp.norm();
                    norm_drift = norm_drift.max((n - 1.0).abs());
                    psi.copy_from(&tmp);
                    psi.unscale_mut(n);
                    intensity.push(x);
                    x * dt + xi
                }
                Unravelling::Counting => {
                    let rate = v.norm_squared();
                    let p = rate * dt;
                    if p > MAX_JUMP_PROBABILITY {
                        return Err(Error::JumpProbability { step, probability: p });
                    }
                    let u: f64 = rng.random();
                    intensity.push(rate);
                    if u < p {
                        let n = v.norm();
                        psi.copy_from(&v);
                        psi.unscale_mut(n);
                        1.0
                    } else {
                        psi.axpy(Complex64::new(-0.5 * dt, 0.0), &w, Complex64::new(1.0, 0.0));
                        if need_h {
                            psi.axpy(minus_i * dt, &h, Complex64::new(1.0, 0.0));
                        }
                        let n = psi.norm();
                        norm_drift = norm_drift.max((n - 1.0).abs());
                        psi.unscale_mut(n);
                        0.0
                    }
                }
            };
            if !increment.is_finite() || !psi.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonFinite("trajectory state"));
            }
            record.push(increment)?;
            state.push(increment);
            self.record_expectations(&psi, &mut tmp, &mut expectations);
        }
        Ok(TrajectoryOutput { times, record, expectations, intensity, norm_drift })
    }
}

fn is_static(c: &ControlledCoefficients) -> bool {
    c.l_terms().is_empty() && c.h_terms().is_empty() && c.h_kernel().is_none()
}

/// Random stream for trajectory `index`: ChaCha8 keyed by the seed, stream selected by the index.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn simulate(
    coeffs: &ControlledCoefficients,
    psi0: &DVector<Complex64>,
    cfg: &SimConfig,
    unravelling: Unravelling,
    index: u64,
) -> Result<TrajectoryOutput> {
    let mut cfg = cfg.clone();
    cfg.unravelling = unravelling;
    let engine = Engine::new(coeffs, psi0, &cfg)?;
    engine.run(psi0, unravelling, &mut trajectory_rng(cfg.seed, index), cfg.times()?)
}

/// One homodyne trajectory using stream `index` of `cfg.seed`.
pub fn simulate_homodyne(
    coeffs: &ControlledCoefficients,
    psi0: &DVector<Complex64>,
    cfg: &SimConfig,
    index: u64,
) -> Result<TrajectoryOutput> {
    simulate(coeffs, psi0, cfg, Unravelling::Homodyne, index)
}

/// One photon-counting trajectory using stream `index` of `cfg.seed`.
pub fn simulate_counting(
    coeffs: &ControlledCoefficients,
    psi0: &DVector<Complex64>,
    cfg: &SimConfig,
    index: u64,
) -> Result<TrajectoryOutput> {
    simulate(coeffs, psi0, cfg, Unravelling::Counting, index)
}

/// Runs `cfg.n_traj` trajectories of `cfg.unravelling` and hands them to `visit`
/// in trajectory-index order. Parallel over fixed-size chunks.
pub fn for_each_trajectory(
    coeffs: &ControlledCoefficients,
    psi0: &DVector<Complex64>,
    cfg: &SimConfig,
    threads: Option<usize>,
    mut visit: impl FnMut(usize, TrajectoryOutput) -> Result<()>,
) -> Result<()> {
    let engine = Engine::new(coeffs, psi0, cfg)?;
    let times = cfg.times()?;
    let pool = match threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?,
        ),
        None => None,
    };
    let run_chunk = |start: usize| -> Result<Vec<TrajectoryOutput>> {
        let end = (start + CHUNK).min(cfg.n_traj);
        (start..end)
            .into_par_iter()
            .map(|i| {
                let mut rng = trajectory_rng(cfg.seed, i as u64);
                engine.run(psi0, cfg.unravelling, &mut rng, times.clone())
            })
            .collect()
    };
    let mut start = 0;
    while start < cfg.n_traj {
        let outs = match &pool {
            Some(p) => p.install(|| run_chunk(start)),
            None => run_chunk(start),
        }?;
        for (offset, out) in outs.into_iter().enumerate() {
            visit(start + offset, out)?;
        }
        start += CHUNK;
    }
    Ok(())
}

/// Running mean and variance per time index (Welford, fixed update order).
#[derive(Clone, Debug, Default, Serialize)]
pub struct Series {
    pub mean: Vec<f64>,
    /// Unbiased sample variance.
    pub variance: Vec<f64>,
    #[serde(skip)]
    m2: Vec<f64>,
    #[serde(skip)]
    count: usize,
}

impl Series {
    fn with_len(n: usize) -> Self {
        Self { mean: vec![0.0; n], variance: vec![0.0; n], m2: vec![0.0; n], count: 0 }
    }

    fn push(&mut self, xs: impl IntoIterator<Item = f64>) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(xs) {
            let delta = x - *m;
            *m += delta / n;
            *m2 += delta * (x - *m);
        }
    }

    fn finish(&mut self) {
        let denom = (self.count.max(2) - 1) as f64;
        for (v, m2) in self.variance.iter_mut().zip(&self.m2) {
            *v = if self.count > 1 { m2 / denom } else { 0.0 };
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `σ_MC = √(var / n_traj)`.
    pub fn sigma(&self, n_traj: usize) -> Vec<f64> {
        self.variance.iter().map(|v| (v / n_traj as f64).sqrt()).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ObservableStats {
    pub name: String,
    pub re: Series,
    pub im: Series,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleTable {
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub observables: Vec<ObservableStats>,
    /// Cumulative record `Y_k` (or `N_k`) at each grid time.
    pub record: Series,
    /// Record increments per step.
    pub increments: Series,
    /// `⟨L+L†⟩` or `⟨L†L⟩` per step.
    pub intensity: Series,
    pub max_norm_drift: f64,
}

/// Accumulates trajectories into an [`EnsembleTable`] in the order they are pushed.
#[derive(Clone, Debug)]
pub struct EnsembleAccumulator {
    table: EnsembleTable,
}

impl EnsembleAccumulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        let steps = cfg.steps()?;
        let n = steps + 1;
        Ok(Self {
            table: EnsembleTable {
                n_traj: 0,
                times: cfg.times()?,
                observables: cfg
                    .observables
                    .iter()
                    .map(|o| ObservableStats { name: o.name.clone(), re: Series::with_len(n), im: Series::with_len(n) })
                    .collect(),
                record: Series::with_len(n),
                increments: Series::with_len(steps),
                intensity: Series::with_len(steps),
                max_norm_drift: 0.0,
            },
        })
    }

    pub fn push(&mut self, out: &TrajectoryOutput) {
        let t = &mut self.table;
        t.n_traj += 1;
        for (stats, seq) in t.observables.iter_mut().zip(&out.expectations) {
            stats.re.push(seq.iter().map(|z| z.re));
            stats.im.push(seq.iter().map(|z| z.im));
        }
        t.record.push(out.record.values());
        t.increments.push(out.record.increments().iter().copied());
        t.intensity.push(out.intensity.iter().copied());
        t.max_norm_drift = t.max_norm_drift.max(out.norm_drift);
    }

    pub fn finish(mut self) -> EnsembleTable {
        let t = &mut self.table;
        for o in &mut t.observables {
            o.re.finish();
            o.im.finish();
        }
        t.record.finish();
        t.increments.finish();
        t.intensity.finish();
        self.table
    }
}

/// Per-time ensemble means, variances and Monte-Carlo errors.
pub fn ensemble(
    coeffs: &ControlledCoefficients,
    psi0: &DVector<Complex64>,
    cfg: &SimConfig,
    threads: Option<usize>,
) -> Result<EnsembleTable> {
    if cfg.n_traj < 2 {
        return Err(Error::Parameter { name: "n_traj", reason: "an ensemble needs at least 2 trajectories".into() });
    }
    let mut acc = EnsembleAccumulator::new(cfg)?;
    for_each_trajectory(coeffs, psi0, cfg, threads, |_, out| {
        acc.push(&out);
        Ok(())
    })?;
    Ok(acc.finish())
}
