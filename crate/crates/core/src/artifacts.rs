//! Deterministic output artifacts: CSV tables and JSON reports.
//!
//! Numbers are written with `{:.16e}` (17 significant digits, round-trip
//! exact). Reports carry the library version, the seed and the full
//! configuration; nothing time- or host-dependent is recorded.

use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linear::{KernelSample, Kernels};
use crate::operator::Operator;
use crate::sim::EnsembleTable;
use crate::slh::SlhTriple;
use crate::VERSION;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header plus rows; every row must have the header's width.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::InvalidDimension(format!(
                "CSV row has {} fields, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|&x| num(x)).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// One row per grid time: `t`, mean and σ_MC of every observable (re, im),
/// cumulative record and the increment of the step starting at `t` (NaN on the last row).
pub fn ensemble_csv(table: &EnsembleTable) -> Result<CsvTable> {
    let mut header = vec!["t".to_string()];
    for o in &table.observables {
        for part in ["re", "im"] {
            header.push(format!("{}_{part}_mean", o.name));
            header.push(format!("{}_{part}_sigma", o.name));
        }
    }
    header.extend(["record_mean", "record_sigma", "increment_mean", "increment_sigma"].map(String::from));
    let n = table.n_traj;
    let sig: Vec<[Vec<f64>; 2]> = table.observables.iter().map(|o| [o.re.sigma(n), o.im.sigma(n)]).collect();
    let rec_sigma = table.record.sigma(n);
    let inc_sigma = table.increments.sigma(n);
    let mut csv = CsvTable::new(header);
    for (k, &t) in table.times.iter().enumerate() {
        let mut row = vec![t];
        for (o, s) in table.observables.iter().zip(&sig) {
            row.extend([o.re.mean[k], s[0][k], o.im.mean[k], s[1][k]]);
        }
        row.extend([table.record.mean[k], rec_sigma[k]]);
        match table.increments.mean.get(k) {
            Some(&m) => row.extend([m, inc_sigma[k]]),
            None => row.extend([f64::NAN, f64::NAN]),
        }
        csv.push(row)?;
    }
    Ok(csv)
}

pub fn kernels_csv(kernels: &Kernels) -> Result<CsvTable> {
    let names = ["f", "g", "k", "p", "r"];
    let mut header = vec!["t".to_string()];
    for n in names {
        header.push(format!("{n}_re"));
        header.push(format!("{n}_im"));
    }
    if kernels.printed.is_some() {
        for n in names {
            header.push(format!("{n}_printed"));
        }
    }
    let parts = |s: &KernelSample| [s.f, s.g, s.k, s.p, s.r];
    let mut csv = CsvTable::new(header);
    for (i, s) in kernels.oracle.iter().enumerate() {
        let mut row = vec![s.t];
        for z in parts(s) {
            row.extend([z.re, z.im]);
        }
        if let Some(p) = &kernels.printed {
            row.extend(parts(&p.samples[i]).iter().map(|z| z.re));
        }
        csv.push(row)?;
    }
    Ok(csv)
}

pub fn means_csv(times: &[f64], means: &[[Complex64; 3]]) -> Result<CsvTable> {
    let header = ["t", "a_re", "a_im", "adag_re", "adag_im", "y_re", "y_im"].map(String::from).to_vec();
    let mut csv = CsvTable::new(header);
    for (t, x) in times.iter().zip(means) {
        csv.push(vec![*t, x[0].re, x[0].im, x[1].re, x[1].im, x[2].re, x[2].im])?;
    }
    Ok(csv)
}

/// Matrix as rows of `[re, im]` pairs, the scenario matrix format.
pub fn operator_json(op: &Operator) -> Value {
    let m = op.matrix();
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!([m[(i, j)].re, m[(i, j)].im])).collect()))
            .collect(),
    )
}

pub fn triple_json(g: &SlhTriple) -> Value {
    let n = g.multiplicity();
    json!({
        "multiplicity": n,
        "dim": g.space().dim(),
        "S": (0..n).map(|j| (0..n).map(|k| operator_json(g.s(j, k))).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "L": (0..n).map(|j| operator_json(g.l(j))).collect::<Vec<_>>(),
        "H": operator_json(g.h()),
    })
}

pub fn complex_json(z: Complex64) -> Value {
    json!([z.re, z.im])
}

/// Report envelope shared by every subcommand.
pub fn report(command: &str, seed: Option<u64>, config: impl Serialize, results: impl Serialize) -> Result<Value> {
    let config = serde_json::to_value(config).map_err(|e| Error::Numeric(e.to_string()))?;
    let results = serde_json::to_value(results).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(json!({
        "tool": "slhlab",
        "version": VERSION,
        "command": command,
        "seed": seed,
        "config": config,
        "results": results,
    }))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numeric(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
