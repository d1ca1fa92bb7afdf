use std::fs;
use std::path::{Path, PathBuf};

use countreg::data::CountDataset;
use countreg::engine::FitResult;
use countreg::models::ModelKind;
use countreg::tuning::fit_ebic;
use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

/// Files written by one command, in write order.
#[derive(Debug, Default)]
pub struct Artifacts {
    dir: PathBuf,
    pub files: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn csv_rows<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<(), CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| CliError::csv(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }

    pub fn csv_table(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
        w.write_record(header).map_err(|e| CliError::csv(&path, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::csv(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn row_names(data: &CountDataset) -> Vec<String> {
    std::iter::once("intercept".to_string())
        .chain(data.x.covariate_names().iter().cloned())
        .collect()
}

pub fn coefficients_json(kind: ModelKind, fit: &FitResult, data: &CountDataset) -> Value {
    let b = &fit.b_hat.b;
    let rows: Vec<Vec<f64>> = b.rows().into_iter().map(|r| r.to_vec()).collect();
    let signs: Vec<Vec<i8>> = b
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 }).collect())
        .collect();
    let names = row_names(data);
    let groups: Vec<Value> = fit
        .active_groups
        .iter()
        .map(|&g| json!({ "group": g, "covariate": names.get(g + 1) }))
        .collect();
    json!({
        "model": kind.tag(),
        "lambda": fit.lambda,
        "alpha": fit.alpha,
        "rows": names,
        "columns": fit.b_hat.column_roles(),
        "taxa": data.y.taxa_names(),
        "coefficients": rows,
        "signs": signs,
        "active_groups": groups,
        "active_cells": fit.active_cells,
        "standardization": data.standardization,
    })
}

pub fn summary_json(kind: ModelKind, fit: &FitResult, data: &CountDataset) -> Value {
    json!({
        "model": kind.tag(),
        "n": data.n(),
        "p": data.p(),
        "taxa": data.taxa(),
        "lambda": fit.lambda,
        "alpha": fit.alpha,
        "loglik": fit.loglik_final,
        "ebic": fit_ebic(fit, kind, data),
        "kappa": fit.kappa,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "objective": fit.objective_trace.last(),
        "drop_events": fit.drop_events,
        "reentry_events": fit.reentry_events,
        "clamp_events": fit.clamp_events,
        "warm_start_fallback": fit.warm_start_fallback,
    })
}

/// Writes `coefficients.json`, `trace.csv` and `summary.json`, plus
/// `coefficients.csv` when CSV mirrors are requested.
pub fn write_fit(out: &mut Artifacts, kind: ModelKind, fit: &FitResult, data: &CountDataset, csv_mirror: bool) -> Result<Value, CliError> {
    out.json("coefficients.json", &coefficients_json(kind, fit, data))?;
    let trace: Vec<Vec<String>> = fit
        .objective_trace
        .iter()
        .enumerate()
        .map(|(t, v)| vec![t.to_string(), v.to_string()])
        .collect();
    out.csv_table("trace.csv", &["iteration".into(), "objective".into()], &trace)?;
    let summary = summary_json(kind, fit, data);
    out.json("summary.json", &summary)?;
    if csv_mirror {
        let names = row_names(data);
        let header: Vec<String> = std::iter::once("row".to_string()).chain(fit.b_hat.column_roles()).collect();
        let rows: Vec<Vec<String>> = fit
            .b_hat
            .b
            .rows()
            .into_iter()
            .zip(names)
            .map(|(r, name)| std::iter::once(name).chain(r.iter().map(|v| v.to_string())).collect())
            .collect();
        out.csv_table("coefficients.csv", &header, &rows)?;
    }
    Ok(summary)
}
