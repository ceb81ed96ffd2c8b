use std::io::Write;
use std::path::{Path, PathBuf};

use isopsm::estimators::index_step;
use isopsm::index::{default_starts, logistic_mle, logistic_regression, sse_fit};
use isopsm::inference::{bootstrap, BootstrapReport};
use isopsm::pipeline::{evaluate, point_estimate, EstimatorKind, PipelineOptions};
use isopsm::simulation::{run_study, DgpConfig, StudyOptions};
use isopsm::{EffectEstimate, IndexFit, LogisticFit, ObservationSet, Target};
use serde::Serialize;

use crate::output::{cell, sink, write_json};
use crate::{
    core_exit_code, CliError, DataArgs, EstimateArgs, Features, FitArgs, Format, IndexChoice, SimulateArgs,
    TargetChoice,
};

#[derive(Serialize)]
struct DataSummary {
    input: String,
    features: &'static str,
    n: usize,
    n_treated: usize,
    dim: usize,
}

#[derive(Serialize)]
struct ErrorReport {
    kind: &'static str,
    exit_code: u8,
    message: String,
}

impl ErrorReport {
    fn new(e: &isopsm::Error) -> Self {
        let exit_code = core_exit_code(e);
        let kind = match exit_code {
            4 => "numerical",
            2 => "usage",
            _ => "data",
        };
        Self {
            kind,
            exit_code,
            message: e.to_string(),
        }
    }
}

fn load(args: &DataArgs) -> Result<(ObservationSet, DataSummary), CliError> {
    let mut data = crate::input::read_path(&args.input)?;
    let features = match args.features {
        Features::Linear => "linear",
        Features::Quadratic => {
            data = data
                .quadratic_expansion()
                .map_err(|e| CliError::Core(e, "quadratic expansion".into()))?;
            "quadratic"
        }
    };
    let summary = DataSummary {
        input: args.input.display().to_string(),
        features,
        n: data.n(),
        n_treated: data.n_treated(),
        dim: data.dim(),
    };
    Ok((data, summary))
}

fn fit_index(data: &ObservationSet, choice: IndexChoice) -> Result<IndexFit, CliError> {
    let result = match choice {
        IndexChoice::Mle => logistic_mle(data),
        IndexChoice::Sse => {
            let options = PipelineOptions::default().sse;
            let warm = logistic_mle(data).ok();
            default_starts(data, warm.as_ref(), &options).and_then(|starts| sse_fit(data, &starts, &options))
        }
    };
    result.map_err(|e| CliError::Core(e, "index estimation".into()))
}

#[derive(Serialize)]
struct StepSummary {
    blocks: usize,
    block_ends: Vec<usize>,
    block_values: Vec<f64>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum Fallible<T> {
    Ok(T),
    Err { error: ErrorReport },
}

impl<T> From<isopsm::Result<T>> for Fallible<T> {
    fn from(r: isopsm::Result<T>) -> Self {
        match r {
            Ok(v) => Fallible::Ok(v),
            Err(e) => Fallible::Err {
                error: ErrorReport::new(&e),
            },
        }
    }
}

#[derive(Serialize)]
struct FitReport {
    command: &'static str,
    data: DataSummary,
    index: IndexFit,
    steps: StepSummary,
    logistic: Fallible<LogisticFit>,
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let (data, summary) = load(&args.data)?;
    let index = fit_index(&data, args.index_method)?;
    let step = index_step(&data, &index).map_err(|e| CliError::Core(e, "step propensity".into()))?;
    let report = FitReport {
        command: "fit",
        data: summary,
        steps: StepSummary {
            blocks: step.blocks(),
            block_ends: step.block_ends.clone(),
            block_values: step.block_values.clone(),
        },
        index,
        logistic: logistic_regression(&data).into(),
    };
    let mut out = sink(args.output.out.as_deref())?;
    match args.output.format {
        Format::Json => write_json(&mut out, &report)?,
        Format::Csv => {
            writeln!(out, "term,value")?;
            for (j, b) in report.index.beta.iter().enumerate() {
                writeln!(out, "beta{},{}", j + 1, cell(Some(*b)))?;
            }
            writeln!(out, "blocks,{}", report.steps.blocks)?;
            if let Fallible::Ok(l) = &report.logistic {
                writeln!(out, "logistic_intercept,{}", cell(Some(l.intercept)))?;
                for (j, b) in l.slopes.iter().enumerate() {
                    writeln!(out, "logistic_x{},{}", j + 1, cell(Some(*b)))?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MethodResult {
    estimator: EstimatorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<EffectEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<Fallible<BootstrapReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<ErrorReport>,
}

#[derive(Serialize)]
struct EstimateReport {
    command: &'static str,
    data: DataSummary,
    target: Target,
    #[serde(rename = "B")]
    b: usize,
    seed: u64,
    results: Vec<MethodResult>,
}

pub fn estimate(command: &'static str, args: &EstimateArgs, b: usize) -> Result<(), CliError> {
    if b == 1 || (command == "bootstrap" && b == 0) {
        return Err(CliError::Usage(format!("--bootstrap must be at least 2, got {b}")));
    }
    let (data, summary) = load(&args.data)?;
    let target = match args.target {
        TargetChoice::Att => Target::Att,
        TargetChoice::Mu1 => Target::Mu1,
    };
    let options = PipelineOptions::default();
    let kinds = &args.estimators.0;
    let estimates = evaluate(&data, kinds, target, &options);

    let mut first_error = None;
    let mut results = Vec::with_capacity(kinds.len());
    for (&kind, estimate) in kinds.iter().zip(estimates) {
        match estimate {
            Ok(est) => {
                let boot = (b > 0)
                    .then(|| bootstrap(&data, |s| point_estimate(s, kind, target, &options), b, args.seed).into());
                results.push(MethodResult {
                    estimator: kind,
                    estimate: Some(est),
                    bootstrap: boot,
                    error: None,
                });
            }
            Err(e) => {
                results.push(MethodResult {
                    estimator: kind,
                    estimate: None,
                    bootstrap: None,
                    error: Some(ErrorReport::new(&e)),
                });
                first_error.get_or_insert((kind, e));
            }
        }
    }
    let all_failed = results.iter().all(|r| r.estimate.is_none());
    let report = EstimateReport {
        command,
        data: summary,
        target,
        b,
        seed: args.seed,
        results,
    };

    let mut out = sink(args.output.out.as_deref())?;
    match args.output.format {
        Format::Json => write_json(&mut out, &report)?,
        Format::Csv => write_estimates_csv(&mut out, &report)?,
    }
    out.flush()?;
    match first_error {
        Some((kind, e)) if all_failed => Err(CliError::Core(e, format!("every estimator failed; {kind}"))),
        _ => Ok(()),
    }
}

fn write_estimates_csv<W: Write>(out: &mut W, report: &EstimateReport) -> std::io::Result<()> {
    writeln!(
        out,
        "estimator,target,value,blocks,min_propensity,max_propensity,B,failed,boot_mean,boot_sd,q025,q975,error"
    )?;
    let target = match report.target {
        Target::Att => "ATT",
        Target::Mu1 => "MU1",
    };
    for r in &report.results {
        let est = r.estimate.as_ref();
        let boot = match &r.bootstrap {
            Some(Fallible::Ok(b)) => Some(b),
            _ => None,
        };
        let error = r
            .error
            .as_ref()
            .or(match &r.bootstrap {
                Some(Fallible::Err { error }) => Some(error),
                _ => None,
            })
            .map(|e| e.message.replace([',', '\n'], ";"))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{target},{},{},{},{},{},{},{},{},{},{},{error}",
            r.estimator,
            cell(est.map(|e| e.value)),
            est.map(|e| e.diagnostics.blocks.to_string()).unwrap_or_default(),
            cell(est.map(|e| e.diagnostics.min_propensity)),
            cell(est.map(|e| e.diagnostics.max_propensity)),
            boot.map(|b| b.b.to_string()).unwrap_or_default(),
            boot.map(|b| b.failed.to_string()).unwrap_or_default(),
            cell(boot.map(|b| b.mean)),
            cell(boot.map(|b| b.sd)),
            cell(boot.map(|b| b.q025)),
            cell(boot.map(|b| b.q975)),
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Point {
    index: f64,
    fitted: f64,
}

#[derive(Serialize)]
struct StepExport {
    index: IndexFit,
    pava: Vec<Point>,
    logistic: Vec<Point>,
}

pub fn export_steps(args: &FitArgs) -> Result<(), CliError> {
    let (data, _) = load(&args.data)?;
    let index = fit_index(&data, args.index_method)?;
    let step = index_step(&data, &index).map_err(|e| CliError::Core(e, "step propensity".into()))?;
    let sorted_index = step.perm.apply(&data.index_values(&index.beta));
    let pava = sorted_index
        .iter()
        .zip(&step.fitted)
        .map(|(&index, &fitted)| Point { index, fitted })
        .collect();
    let logistic = match logistic_regression(&data) {
        Ok(fit) => step
            .perm
            .apply(&fit.probabilities(&data))
            .into_iter()
            .zip(&sorted_index)
            .map(|(fitted, &index)| Point { index, fitted })
            .collect(),
        Err(e) => {
            eprintln!("warning: logistic series omitted: {e}");
            Vec::new()
        }
    };
    let export = StepExport { index, pava, logistic };
    let mut out = sink(args.output.out.as_deref())?;
    match args.output.format {
        Format::Json => write_json(&mut out, &export)?,
        Format::Csv => {
            writeln!(out, "series,index,fitted")?;
            for (name, series) in [("pava", &export.pava), ("logistic", &export.logistic)] {
                for p in series {
                    writeln!(out, "{name},{},{}", cell(Some(p.index)), cell(Some(p.fitted)))?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    if args.reps < 2 {
        return Err(CliError::Usage(format!("--reps must be at least 2, got {}", args.reps)));
    }
    let configs: Vec<DgpConfig> = DgpConfig::grid(args.link.into(), args.n, args.seed)
        .into_iter()
        .filter(|c| args.model.is_none_or(|m| c.model == m))
        .filter(|c| args.a.is_none_or(|a| c.a == a))
        .filter(|c| args.b.is_none_or(|b| c.b == b))
        .collect();
    let options = StudyOptions {
        reps: args.reps,
        master_seed: args.seed,
        oracle_n: args.oracle_n,
        pipeline: PipelineOptions::default(),
    };
    let report =
        run_study(&configs, &args.estimators.0, &options).map_err(|e| CliError::Core(e, "simulation study".into()))?;

    let write = |format: Format, path: Option<&Path>| -> Result<(), CliError> {
        let mut out = sink(path)?;
        match format {
            Format::Json => write_json(&mut out, &report)?,
            Format::Csv => report.write_table_csv(&mut out)?,
        }
        out.flush()?;
        Ok(())
    };
    write(args.output.format, args.output.out.as_deref())?;
    if let Some(path) = &args.output.out {
        let (other, ext) = match args.output.format {
            Format::Json => (Format::Csv, "csv"),
            Format::Csv => (Format::Json, "json"),
        };
        write(other, Some(&sidecar(path, ext)))?;
    }
    Ok(())
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let candidate = path.with_extension(ext);
    if candidate == path {
        let mut s = path.as_os_str().to_owned();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    } else {
        candidate
    }
}
