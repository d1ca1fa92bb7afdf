//! Batch front end: `fit`, `tune`, `simulate` and `bench`.
//!
//! Every command writes its artifacts under `--out-dir` and returns an
//! [`Outcome`] holding the exit code and the JSON status line for stdout.

mod args;
mod output;

use std::fmt;
use std::path::Path;

use countreg::data::{load_dataset, write_dataset, CountDataset};
use countreg::engine::{fit_count_sgl, FitControls};
use countreg::error::CountRegError;
use countreg::models::ModelKind;
use countreg::par::{with_threads, Execution};
use countreg::penalty::EpsilonPolicy;
use countreg::sim::{gen_dataset, run_scenario, ScenarioConfig, ScenarioReport};
use countreg::tuning::{penalty_for, tune, SearchMode, SearchSpec};
use serde_json::{json, Value};

pub use args::*;
use output::{opt, write_fit, Artifacts};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub status: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub exit_code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_INPUT,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            exit_code: EXIT_INPUT,
            kind: "io",
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn csv(path: &Path, err: csv::Error) -> Self {
        Self {
            exit_code: EXIT_INPUT,
            kind: "io",
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn internal(message: String) -> Self {
        Self {
            exit_code: EXIT_INPUT,
            kind: "internal",
            message,
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        json!({ "error": self.kind, "message": self.message, "exit_code": self.exit_code }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CountRegError> for CliError {
    fn from(e: CountRegError) -> Self {
        let (exit_code, kind) = match &e {
            CountRegError::Io { .. } => (EXIT_INPUT, "io"),
            CountRegError::Parse { .. } => (EXIT_INPUT, "parse"),
            CountRegError::RowCountMismatch { .. } => (EXIT_INPUT, "row_count_mismatch"),
            CountRegError::InvalidCount { .. } | CountRegError::ZeroTotalRow { .. } => (EXIT_INPUT, "invalid_counts"),
            CountRegError::ConstantCovariate { .. } | CountRegError::InvalidDesign(_) => (EXIT_INPUT, "invalid_covariates"),
            CountRegError::DimensionMismatch(_) => (EXIT_INPUT, "dimension_mismatch"),
            CountRegError::InvalidConfig(_) => (EXIT_INPUT, "invalid_config"),
            CountRegError::UnsupportedKind(_) => (EXIT_INPUT, "unsupported_model"),
            CountRegError::NoConvergedFits { .. } => (EXIT_NOT_CONVERGED, "no_converged_fits"),
            CountRegError::LambdaCapExceeded { .. } => (EXIT_NOT_CONVERGED, "lambda_cap_exceeded"),
            _ => (EXIT_INPUT, "numerical"),
        };
        Self {
            exit_code,
            kind,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Mn => ModelKind::Multinomial,
            ModelArg::Dm => ModelKind::DirichletMultinomial,
            ModelArg::Nm => ModelKind::NegativeMultinomial,
            ModelArg::Gdm => ModelKind::GeneralizedDirichletMultinomial,
        }
    }
}

impl CommonArgs {
    pub fn controls(&self) -> CliResult<FitControls> {
        let controls = FitControls {
            tol: self.tol,
            max_iter: self.max_iter,
            execution: match self.execution {
                ExecutionArg::Parallel => Execution::Parallel,
                ExecutionArg::Sequential => Execution::Sequential,
            },
            ..FitControls::default()
        };
        controls.validate()?;
        Ok(controls)
    }

    pub fn policy(&self) -> EpsilonPolicy {
        match self.epsilon_policy {
            EpsilonArg::Drop => EpsilonPolicy::default(),
            EpsilonArg::Perturb => EpsilonPolicy::perturb_default(),
        }
    }

    fn threads(&self) -> CliResult<usize> {
        match self.threads {
            Some(0) => Err(CliError::usage("--threads must be at least 1")),
            Some(t) => Ok(t),
            None => Ok(0),
        }
    }
}

impl ScenarioArgs {
    pub fn config(&self, replicates: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            n: self.n,
            p: self.p,
            taxa: self.taxa,
            f: self.f,
            delta_p: self.delta_p,
            delta_d: self.delta_d,
            rho: self.rho,
            total_mean: self.total_mean,
            replicates,
            seed,
        }
    }
}

impl SearchArgs {
    /// Builds the search; `fixed_alpha` pins the mixing value.
    pub fn spec(&self, fixed_alpha: Option<f64>, seed: u64, policy: EpsilonPolicy) -> SearchSpec {
        let mode = match self.search {
            SearchArg::Grid => SearchMode::Grid,
            SearchArg::Random => SearchMode::Random { n_draws: self.n_draws },
        };
        let (alpha_values, alpha_range) = match fixed_alpha {
            Some(a) => (vec![a], (a, a)),
            None => (self.alphas.clone(), (self.alpha_min, self.alpha_max)),
        };
        SearchSpec {
            mode,
            n_lambda: self.n_lambda,
            alpha_values,
            alpha_range,
            lambda_ratio: self.lambda_ratio,
            seed,
            warm_path: self.warm_path,
            epsilon_policy: policy,
        }
    }
}

fn resolve_alpha(penalty: PenaltyArg, alpha: Option<f64>) -> CliResult<Option<f64>> {
    let fixed = match penalty {
        PenaltyArg::Lasso => 1.0,
        PenaltyArg::Group => 0.0,
        PenaltyArg::Sgl => return Ok(alpha),
    };
    match alpha {
        Some(a) if a != fixed => Err(CliError::usage(format!(
            "--alpha {a} conflicts with --penalty {}",
            if fixed == 1.0 { "lasso" } else { "group" }
        ))),
        _ => Ok(Some(fixed)),
    }
}

fn load(data: &DataArgs) -> CliResult<CountDataset> {
    Ok(load_dataset(&data.covariates, &data.counts, data.standardize)?)
}

fn status(command: &str, ok: bool, out: &Artifacts, extra: Value) -> Value {
    let mut v = json!({
        "command": command,
        "status": if ok { "ok" } else { "not_converged" },
        "files": out.files,
    });
    if let (Some(map), Value::Object(more)) = (v.as_object_mut(), extra) {
        map.extend(more);
    }
    v
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<Outcome> {
    let kind = ModelKind::from(args.model);
    let lambda = args
        .lambda
        .ok_or_else(|| CliError::usage("fit requires --lambda"))?;
    let alpha = resolve_alpha(args.penalty, args.alpha)?.ok_or_else(|| CliError::usage("--penalty sgl requires --alpha"))?;
    let controls = args.common.controls()?;
    let threads = args.common.threads()?;
    let data = load(&args.data)?;
    let config = penalty_for(kind, &data, lambda, alpha, args.common.policy())?;
    let fit = with_threads(threads, || fit_count_sgl(kind, &data, &config, &controls))?;
    let mut out = Artifacts::new(&args.common.out_dir)?;
    let summary = write_fit(&mut out, kind, &fit, &data, args.common.format == FormatArg::Csv)?;
    let code = if fit.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok(Outcome {
        exit_code: code,
        status: status(
            "fit",
            fit.converged,
            &out,
            json!({ "kappa": summary["kappa"], "ebic": summary["ebic"], "iterations": fit.iterations }),
        ),
    })
}

pub fn cmd_tune(args: &TuneArgs) -> CliResult<Outcome> {
    if args.lambda.is_some() {
        return Err(CliError::usage("tune chooses lambda; --lambda is not accepted"));
    }
    let kind = ModelKind::from(args.model);
    let alpha = resolve_alpha(args.penalty, args.alpha)?;
    let controls = args.common.controls()?;
    let threads = args.common.threads()?;
    let policy = args.common.policy();
    let spec = args.search.spec(alpha, args.common.seed, policy);
    spec.validate()?;
    let data = load(&args.data)?;
    let result = with_threads(threads, || tune(kind, &data, &spec, &controls))?;
    let mut out = Artifacts::new(&args.common.out_dir)?;
    write_fit(&mut out, kind, &result.best_fit, &data, args.common.format == FormatArg::Csv)?;
    out.csv_rows("ebic_path.csv", &result.ebic_table)?;
    let lmax: Vec<Value> = result
        .lambda_max
        .iter()
        .map(|&(a, l)| json!({ "alpha": a, "lambda_max": l }))
        .collect();
    out.json("lambda_max.json", &json!({ "model": kind.tag(), "lambda_max": lmax }))?;
    Ok(Outcome {
        exit_code: EXIT_OK,
        status: status(
            "tune",
            true,
            &out,
            json!({
                "best_lambda": result.best_lambda,
                "best_alpha": result.best_alpha,
                "kappa": result.best_fit.kappa,
                "points": result.ebic_table.len(),
            }),
        ),
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<Outcome> {
    let config = args.scenario.config(args.replicate + 1, args.common.seed);
    config.validate()?;
    let (data, truth) = gen_dataset(&config, args.replicate)?;
    let mut out = Artifacts::new(&args.common.out_dir)?;
    let cov = out.path("covariates.csv");
    let counts = out.path("counts.csv");
    write_dataset(&data, &cov, &counts)?;
    let to_rows = |m: &ndarray::Array2<f64>| -> Vec<Vec<f64>> { m.rows().into_iter().map(|r| r.to_vec()).collect() };
    let truth_json = json!({
        "scenario": config,
        "replicate": args.replicate,
        "relevant_covariates": config.relevant_covariates(),
        "relevant_taxa": config.relevant_taxa(),
        "covariates": data.x.covariate_names(),
        "taxa": data.y.taxa_names(),
        "nonzero": truth.nonzero.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        "signs": truth.signs.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        "beta_true": to_rows(&truth.beta_true),
    });
    out.json("truth.json", &truth_json)?;
    Ok(Outcome {
        exit_code: EXIT_OK,
        status: status("simulate", true, &out, json!({ "n": data.n(), "p": data.p(), "taxa": data.taxa() })),
    })
}

fn summary_table(report: &ScenarioReport) -> (Vec<String>, Vec<String>) {
    let s = &report.summary;
    let mut header: Vec<String> = ["n", "p", "delta_p", "taxa", "delta_d", "f", "replicates", "succeeded", "failed"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut row = vec![
        s.n.to_string(),
        s.p.to_string(),
        s.delta_p.to_string(),
        s.taxa.to_string(),
        s.delta_d.to_string(),
        s.f.to_string(),
        s.replicates.to_string(),
        s.succeeded.to_string(),
        s.failed.to_string(),
    ];
    for (name, m) in [
        ("group_precision", s.group_precision),
        ("group_recall", s.group_recall),
        ("within_precision", s.within_precision),
        ("within_recall", s.within_recall),
        ("direction_accuracy", s.direction_accuracy),
    ] {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_sd"));
        row.push(opt(m.mean));
        row.push(opt(m.sd));
    }
    (header, row)
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<Outcome> {
    let config = args.scenario.config(args.replicates, args.common.seed);
    config.validate()?;
    let controls = args.common.controls()?;
    let threads = args.common.threads()?;
    let spec = args.search.spec(None, args.common.seed, args.common.policy());
    spec.validate()?;
    let report = with_threads(threads, || run_scenario(&config, &spec, &controls))?;
    let mut out = Artifacts::new(&args.common.out_dir)?;
    out.csv_rows("replicates.csv", &report.rows)?;
    out.json(
        "summary.json",
        &serde_json::to_value(&report).map_err(|e| CliError::internal(e.to_string()))?,
    )?;
    let (header, row) = summary_table(&report);
    out.csv_table("summary.csv", &header, &[row])?;
    let ok = report.summary.succeeded > 0;
    Ok(Outcome {
        exit_code: if ok { EXIT_OK } else { EXIT_NOT_CONVERGED },
        status: status(
            "bench",
            ok,
            &out,
            json!({
                "succeeded": report.summary.succeeded,
                "failed": report.summary.failed,
                "group_recall": report.summary.group_recall.mean,
                "within_recall": report.summary.within_recall.mean,
            }),
        ),
    })
}

/// Runs a parsed command line, folding errors into an outcome.
pub fn run(cli: &Cli) -> (Outcome, Option<CliError>) {
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(o) => (o, None),
        Err(e) => (
            Outcome {
                exit_code: e.exit_code,
                status: json!({ "status": "error", "error": e.kind, "exit_code": e.exit_code }),
            },
            Some(e),
        ),
    }
}
