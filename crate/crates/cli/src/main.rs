//! `slhlab` command-line entry point.
//!
//! Exit codes: 0 success, 1 rejected input (scenario or flags), 2 numeric
//! failure or a verification check over tolerance.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use slhlab::artifacts::{
    complex_json, ensemble_csv, kernels_csv, means_csv, report, triple_json, write_json, CsvTable,
};
use slhlab::control::RecordKind;
use slhlab::dilation::{check_nondemolition, check_picture_equivalence, check_quadrature_consistency, Dilation};
use slhlab::ito::{coisometry_defect, generator_from_slh, isometry_defect, table_self_test, Increment, GENERATOR_TEMPLATE};
use slhlab::linear;
use slhlab::operator::c;
use slhlab::scenario::{Scenario, SlhSpec};
use slhlab::slh::{concatenate, series_product, VALIDATION_TOL};
use slhlab::{sim, Error};

const ITO_TOL: f64 = 1e-10;
const DILATION_TOL: f64 = 1e-9;

#[derive(Parser, Debug)]
#[command(name = "slhlab", version, about = "Controlled quantum stochastic flows in the SLH framework")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Output {
    /// Artifact directory.
    #[arg(long, env = "SLHLAB_OUT", default_value = "slhlab-out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ensemble of measurement-feedback trajectories.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides `sim.dt`.
        #[arg(long)]
        dt: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Linear coupling-feedback model: eigenvalues, kernels and means.
    AnalyzeLinear {
        /// Takes parameters from a `coupling_feedback` scenario; flags override.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        omega: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        /// Grid spacing.
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// Grid end.
        #[arg(long, default_value_t = 10.0)]
        t_max: f64,
        /// Initial cavity amplitude (real part, imaginary part) for the means.
        #[arg(long, num_args = 2, value_names = ["RE", "IM"], default_values_t = [1.0, 0.0])]
        alpha: Vec<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Isometry and co-isometry defects of the scenario triple, plus an Itō table self-test.
    VerifyIto {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Collision-model checks of the `[dilation]` section.
    VerifyDilation {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides `dilation.dt`.
        #[arg(long)]
        dt: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Series product or concatenation of scenario triples.
    Compose {
        #[arg(long)]
        scenario: PathBuf,
        /// Second scenario; its triple is composed with the first instead of `[compose]` stages.
        #[arg(long)]
        with: Option<PathBuf>,
        /// Operation used with `--with`.
        #[arg(long, value_enum, default_value_t = Operation::Series)]
        operation: Operation,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum Operation {
    /// `--with` fed by `--scenario`.
    Series,
    Concatenate,
}

enum Failure {
    Library(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Library(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Simulate { scenario, seed, threads, dt, output } => simulate(&scenario, seed, threads, dt, &output.out),
        Command::AnalyzeLinear { scenario, gamma, lambda, omega, theta, dt, t_max, alpha, output } => {
            let p = LinearParams::resolve(scenario.as_deref(), gamma, lambda, omega, theta)?;
            analyze_linear(p, dt, t_max, [alpha[0], alpha[1]], &output.out)
        }
        Command::VerifyIto { scenario, output } => verify_ito(&scenario, &output.out),
        Command::VerifyDilation { scenario, dt, output } => verify_dilation(&scenario, dt, &output.out),
        Command::Compose { scenario, with, operation, output } => compose(&scenario, with.as_deref(), operation, &output.out),
    }
}

fn prepare(out: &Path) -> Result<(), Error> {
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))
}

fn load(path: &Path) -> Result<Scenario, Error> {
    Scenario::load(path)
}

fn config_echo(path: &Path, scenario: &Scenario) -> Value {
    json!({ "scenario_path": path.display().to_string(), "scenario": scenario })
}

fn simulate(path: &Path, seed: Option<u64>, threads: Option<usize>, dt: Option<f64>, out: &Path) -> Outcome {
    let mut s = load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(dt) = dt {
        match s.sim.as_mut() {
            Some(sim) => sim.dt = dt,
            None => return Err(Error::Scenario { path: "sim".into(), reason: "missing [sim] section".into() }.into()),
        }
    }
    s.validate()?;
    if threads == Some(0) {
        return Err(Error::Parameter { name: "threads", reason: "must be at least 1".into() }.into());
    }
    let (cfg, psi0) = s.sim_config()?;
    let coeffs = s.coefficients()?;
    let table = sim::ensemble(&coeffs, &psi0, &cfg, threads)?;
    prepare(out)?;
    ensemble_csv(&table)?.write(&out.join("ensemble.csv"))?;
    let last = table.times.len() - 1;
    let finals: serde_json::Map<String, Value> = table
        .observables
        .iter()
        .map(|o| (o.name.clone(), json!([o.re.mean[last], o.im.mean[last]])))
        .collect();
    let results = json!({
        "steps": cfg.steps()?,
        "n_traj": table.n_traj,
        "final_means": finals,
        "final_record_mean": table.record.mean[last],
        "max_norm_drift": table.max_norm_drift,
        "artifacts": ["ensemble.csv"],
    });
    write_json(&out.join("report.json"), &report("simulate", Some(s.seed), config_echo(path, &s), results)?)?;
    println!("simulated {} trajectories x {} steps -> {}", table.n_traj, cfg.steps()?, out.display());
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct LinearParams {
    gamma: f64,
    lambda: f64,
    omega: f64,
    theta: f64,
}

impl LinearParams {
    fn resolve(
        scenario: Option<&Path>,
        gamma: Option<f64>,
        lambda: Option<f64>,
        omega: Option<f64>,
        theta: Option<f64>,
    ) -> Result<Self, Error> {
        let base = match scenario {
            Some(path) => match load(path)?.slh {
                SlhSpec::CouplingFeedback { gamma, lambda, omega, theta } => Some([gamma, lambda, omega, theta]),
                _ => {
                    return Err(Error::Scenario {
                        path: "slh.type".into(),
                        reason: "analyze-linear needs a coupling_feedback scenario".into(),
                    })
                }
            },
            None => None,
        };
        let pick = |flag: Option<f64>, i: usize, default: Option<f64>, name: &'static str| -> Result<f64, Error> {
            flag.or(base.map(|b| b[i])).or(default).ok_or(Error::Parameter {
                name,
                reason: format!("pass --{name} or a coupling_feedback scenario"),
            })
        };
        Ok(Self {
            gamma: pick(gamma, 0, None, "gamma")?,
            lambda: pick(lambda, 1, None, "lambda")?,
            omega: pick(omega, 2, Some(0.0), "omega")?,
            theta: pick(theta, 3, Some(0.0), "theta")?,
        })
    }
}

fn analyze_linear(p: LinearParams, dt: f64, t_max: f64, alpha: [f64; 2], out: &Path) -> Outcome {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter { name: "dt", reason: format!("must be positive, got {dt}") }.into());
    }
    if !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(Error::Parameter { name: "t-max", reason: format!("must be non-negative, got {t_max}") }.into());
    }
    let model = linear::build(p.gamma, p.lambda, p.omega, p.theta)?;
    let steps = (t_max / dt).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let ev = linear::eigenvalues(&model)?;
    let stable = linear::is_stable(&model)?;
    let ks = linear::kernels(&model, &grid)?;
    let a0 = c(alpha[0], alpha[1]);
    let means = linear::mean_evolution(&model, [a0, a0.conj(), c(0.0, 0.0)], &grid)?;
    let residual = linear::propagator_ode_residual(&model, &grid, 1e-4 * dt.min(1.0))?;
    prepare(out)?;
    kernels_csv(&ks)?.write(&out.join("kernels.csv"))?;
    means_csv(&grid, &means)?.write(&out.join("means.csv"))?;
    let printed = ks.printed.as_ref().map(|pc| {
        let at0 = &pc.samples[0];
        json!({
            "max_deviation": pc.max_deviation,
            "at_zero": { "f": at0.f.re, "g": at0.g.re, "k": at0.k.re, "p": at0.p.re, "r": at0.r.re },
        })
    });
    let results = json!({
        "eigenvalues": ev.iter().map(|&z| complex_json(z)).collect::<Vec<_>>(),
        "stable": stable,
        "determinant": complex_json(model.determinant()),
        "oracle_at_zero": { "f": complex_json(ks.oracle[0].f), "g": complex_json(ks.oracle[0].g), "k": complex_json(ks.oracle[0].k) },
        "ode_residual_max": residual,
        "printed_comparison": printed,
        "artifacts": ["kernels.csv", "means.csv"],
    });
    let config = json!({ "parameters": p, "dt": dt, "t_max": t_max, "alpha": alpha });
    write_json(&out.join("report.json"), &report("analyze-linear", None, config, results)?)?;
    let shown: Vec<String> = ev.iter().map(|z| format!("{:.6}{:+.6}i", z.re, z.im)).collect();
    println!("eigenvalues: [{}]  stable: {stable}", shown.join(", "));
    Ok(())
}

fn verify_ito(path: &Path, out: &Path) -> Outcome {
    let s = load(path)?;
    let coeffs = s.coefficients()?;
    let g = coeffs.base();
    let dg = generator_from_slh(g)?;
    let iso = isometry_defect(&dg)?;
    let coiso = coisometry_defect(&dg)?;
    let n = g.multiplicity();
    let table = table_self_test(n);
    let mut csv = CsvTable::new(vec!["alpha".into(), "beta".into(), "isometry_norm".into(), "coisometry_norm".into()]);
    for inc in Increment::all(n) {
        let (a, b) = match inc {
            Increment::Dt => (0, 0),
            Increment::DB(k) => (0, k + 1),
            Increment::DBdag(j) => (j + 1, 0),
            Increment::DLambda(j, k) => (j + 1, k + 1),
        };
        csv.push(vec![
            a as f64,
            b as f64,
            iso.coefficient(inc).frobenius_norm(),
            coiso.coefficient(inc).frobenius_norm(),
        ])?;
    }
    prepare(out)?;
    csv.write(&out.join("ito_defects.csv"))?;
    let (iso_max, coiso_max) = (iso.max_norm(), coiso.max_norm());
    let passed = iso_max < ITO_TOL && coiso_max < ITO_TOL && table.passed();
    let results = json!({
        "isometry_defect_max": iso_max,
        "coisometry_defect_max": coiso_max,
        "tolerance": ITO_TOL,
        "generator_template": GENERATOR_TEMPLATE,
        "generator": dg.to_string(),
        "table_self_test": { "passed": table.passed(), "detail": table },
        "passed": passed,
        "artifacts": ["ito_defects.csv"],
    });
    write_json(&out.join("report.json"), &report("verify-ito", Some(s.seed), config_echo(path, &s), results)?)?;
    let rel = if iso_max < ITO_TOL { "<" } else { ">=" };
    println!("isometry_defect_max = {iso_max:.3e} {rel} 1e-10");
    println!("coisometry_defect_max = {coiso_max:.3e}");
    println!("ito table self-test: {}", if table.passed() { "pass" } else { "FAIL" });
    if passed {
        Ok(())
    } else {
        Err(Failure::Check("Itō defects over tolerance or table self-test failed".into()))
    }
}

fn verify_dilation(path: &Path, dt: Option<f64>, out: &Path) -> Outcome {
    let mut s = load(path)?;
    if let Some(dt) = dt {
        match s.dilation.as_mut() {
            Some(d) => d.dt = dt,
            None => {
                return Err(Error::Scenario { path: "dilation".into(), reason: "missing [dilation] section".into() }.into())
            }
        }
        s.validate()?;
    }
    let (cfg, drift) = s.collision_config()?;
    let coeffs = s.coefficients()?;
    let d = Dilation::build(&coeffs, cfg)?;
    let nd = check_nondemolition(&d)?;
    let picture = check_picture_equivalence(&coeffs, cfg)?;
    let quadrature = match cfg.kind {
        RecordKind::Quadrature => Some(check_quadrature_consistency(&coeffs, cfg, &drift)?),
        RecordKind::Counting => None,
    };
    let mut csv = CsvTable::new(vec!["bin".into(), "residual".into(), "ratio".into()]);
    if let Some(q) = &quadrature {
        for (k, r) in q.residuals.iter().enumerate() {
            csv.push(vec![k as f64, *r, r / q.dt.powf(1.5)])?;
        }
    }
    prepare(out)?;
    csv.write(&out.join("quadrature.csv"))?;
    let exact = [
        ("max_commutator", nd.max_commutator),
        ("max_record_commutator", nd.max_record_commutator),
        ("max_spectrum_defect", nd.max_spectrum_defect),
        ("unitarity_defect", nd.unitarity_defect),
        ("picture_equivalence_defect", picture),
    ];
    let failed: Vec<&str> = exact.iter().filter(|(_, v)| !(*v < DILATION_TOL)).map(|(k, _)| *k).collect();
    let results = json!({
        "nondemolition": nd,
        "picture_equivalence_defect": picture,
        "quadrature": quadrature,
        "tolerance": DILATION_TOL,
        "passed": failed.is_empty(),
        "artifacts": ["quadrature.csv"],
    });
    write_json(&out.join("report.json"), &report("verify-dilation", Some(s.seed), config_echo(path, &s), results)?)?;
    for (k, v) in exact {
        println!("{k} = {v:.3e}");
    }
    if let Some(q) = &quadrature {
        println!("quadrature max_ratio = {:.3e}", q.max_ratio);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("over {DILATION_TOL:e}: {}", failed.join(", "))))
    }
}

fn compose(path: &Path, with: Option<&Path>, operation: Operation, out: &Path) -> Outcome {
    let s = load(path)?;
    let (g, config) = match with {
        Some(other) => {
            let t = load(other)?;
            let a = s.coefficients()?.base().clone();
            let b = t.coefficients()?.base().clone();
            let g = match operation {
                Operation::Series => series_product(&b, &a),
                Operation::Concatenate => concatenate(&a, &b),
            }
            .map_err(|e| e.at("compose"))?;
            let mut config = config_echo(path, &s);
            config["with"] = config_echo(other, &t);
            config["operation"] = json!(operation);
            (g, config)
        }
        None => (s.composed()?, config_echo(path, &s)),
    };
    let check = g.check(VALIDATION_TOL);
    prepare(out)?;
    let results = json!({
        "triple": triple_json(&g),
        "valid": check.is_ok(),
        "validation_error": check.as_ref().err().map(|e| e.to_string()),
    });
    write_json(&out.join("report.json"), &report("compose", Some(s.seed), config, results)?)?;
    println!("composed triple: multiplicity {}, dim {}", g.multiplicity(), g.space().dim());
    check.map_err(Failure::from)
}
