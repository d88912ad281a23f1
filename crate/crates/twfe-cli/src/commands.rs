//! The five subcommands. Each writes its outputs plus a `manifest.json`
//! echoing the resolved configuration, and prints one summary line. Outputs
//! contain no clocks or machine identifiers, so rerunning a command with the
//! same inputs reproduces every file byte for byte.

use crate::config::{parse_constraints, ObjectiveChoice, RunConfig};
use crate::csvio::fmt_f64;
use crate::error::{CliError, CliResult};
use crate::ingest::ingest;
use crate::report::{curves_to_csv, estimators_to_csv, report_to_csv};
use serde_json::json;
use std::path::{Path, PathBuf};
use twfe::diag::{schur_invariance_check, SchurOpts, SchurSide};
use twfe::infer::{maximize, test_battery, Constraint, EstimateResult, MaximizeOpts, Objective, TestKind};
use twfe::profile::sanitize_panel;
use twfe::sim::{monte_carlo, DgpDesign, MCConfig};
use twfe::PanelData;

fn write_file(dir: &Path, name: &str, content: &str) -> CliResult<()> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| CliError::io(&path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// `manifest.json`: the subcommand, the resolved configuration echo, and the
/// sorted list of files the run produced.
fn write_manifest(
    dir: &Path,
    command: &str,
    config_echo: serde_json::Value,
    mut outputs: Vec<String>,
) -> CliResult<()> {
    outputs.push("manifest.json".to_string());
    outputs.sort();
    let manifest = json!({
        "command": command,
        "config": config_echo,
        "outputs": outputs,
    });
    write_file(dir, "manifest.json", &format!("{:#}\n", manifest))
}

fn summary_line(command: &str, n_files: usize, dir: &Path) {
    println!("{command}: wrote {n_files} files to {}", dir.display());
}

/// Shared data-loading front half of estimate / test / tau-sweep.
struct LoadedRun {
    config: RunConfig,
    panel: PanelData,
    labels: Vec<String>,
    out_dir: PathBuf,
}

fn load_run(
    config_path: &Path,
    data_flag: Option<&Path>,
    out_flag: Option<&Path>,
) -> CliResult<LoadedRun> {
    let mut config = RunConfig::from_file(config_path)?;
    if let Some(d) = data_flag {
        config.data = Some(d.display().to_string());
    }
    let data_path = config
        .data
        .clone()
        .ok_or_else(|| CliError::Config("no data file; pass --data or set data in the config".into()))?;
    let out_dir = out_flag
        .map(Path::to_path_buf)
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .ok_or_else(|| {
            CliError::Config("no output directory; pass --out or set out in the config".into())
        })?;
    config.out = Some(out_dir.display().to_string());
    let panel = ingest(Path::new(&data_path), &config.columns, config.lag_order)?;
    let labels = config.theta_labels()?;
    Ok(LoadedRun { config, panel, labels, out_dir })
}

/// One estimate as self-describing JSON.
fn estimate_json(
    fit: &EstimateResult,
    labels: &[String],
    panel: &PanelData,
    sanitize: &twfe::profile::SanitizeReport,
    original: &PanelData,
) -> serde_json::Value {
    let parameters: Vec<serde_json::Value> = labels
        .iter()
        .enumerate()
        .map(|(j, name)| {
            json!({
                "name": name,
                "estimate": fit.theta_hat[j],
                "se": fit.se[j],
            })
        })
        .collect();
    json!({
        "objective": fit.objective_kind.name(),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "score_norm": fit.score_norm,
        "loglik": fit.loglik,
        "parameters": parameters,
        "se_indefinite": fit.se_indefinite,
        "n_units": fit.n_units,
        "n_periods": fit.n_periods,
        "sanitize": {
            "dropped_units": sanitize
                .dropped_units
                .iter()
                .map(|&i| original.unit_labels[i].clone())
                .collect::<Vec<_>>(),
            "dropped_periods": sanitize
                .dropped_periods
                .iter()
                .map(|&s| original.time_labels[s].clone())
                .collect::<Vec<_>>(),
            "reasons": sanitize.reasons,
        },
        "fixed_effects": {
            "unit_labels": panel.unit_labels,
            "alpha_hat": fit.profile.alpha_hat.to_vec(),
            "time_labels": panel.time_labels,
            "gamma_hat": fit.profile.gamma_hat.to_vec(),
        },
    })
}

pub struct EstimateArgs {
    pub config: PathBuf,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub objective: Option<String>,
    pub tau: Option<usize>,
}

pub fn run_estimate(args: &EstimateArgs) -> CliResult<()> {
    let run = load_run(&args.config, args.data.as_deref(), args.out.as_deref())?;
    let choice = resolve_objective(&run.config, args.objective.as_deref())?;
    let tau = resolve_tau(&run.config, args.tau);
    let spec = run.config.model_spec(tau)?;
    let (clean, srep) = sanitize_panel(&run.panel, &spec)?;
    ensure_dir(&run.out_dir)?;

    let opts = MaximizeOpts::default();
    let mut outputs = Vec::new();
    let mut se_rows = vec!["objective,parameter,estimate,se".to_string()];
    for objective in choice.list() {
        let fit = maximize(&clean, &spec, objective, None, &opts)?;
        for (j, name) in run.labels.iter().enumerate() {
            se_rows.push(format!(
                "{},{},{},{}",
                objective.name(),
                name,
                fmt_f64(fit.theta_hat[j]),
                fmt_f64(fit.se[j])
            ));
        }
        let name = format!("estimate_{}.json", objective.name());
        let body = estimate_json(&fit, &run.labels, &clean, &srep, &run.panel);
        write_file(&run.out_dir, &name, &format!("{body:#}\n"))?;
        outputs.push(name);
    }
    let mut se_table = se_rows.join("\n");
    se_table.push('\n');
    write_file(&run.out_dir, "se_table.csv", &se_table)?;
    outputs.push("se_table.csv".to_string());

    let echo = config_echo(&run.config, choice, tau)?;
    let n = outputs.len() + 1;
    write_manifest(&run.out_dir, "estimate", echo, outputs)?;
    summary_line("estimate", n, &run.out_dir);
    Ok(())
}

fn resolve_objective(config: &RunConfig, flag: Option<&str>) -> CliResult<ObjectiveChoice> {
    match flag.or(config.objective.as_deref()) {
        Some(s) => ObjectiveChoice::parse(s),
        None => Ok(ObjectiveChoice::Both),
    }
}

fn resolve_tau(config: &RunConfig, flag: Option<usize>) -> usize {
    flag.or_else(|| config.tau.first().copied()).unwrap_or(0)
}

fn config_echo(config: &RunConfig, choice: ObjectiveChoice, tau: usize) -> CliResult<serde_json::Value> {
    let mut echoed = config.clone();
    echoed.objective = Some(choice.name().to_string());
    echoed.tau = vec![tau];
    serde_json::to_value(&echoed)
        .map_err(|e| CliError::Config(format!("cannot serialize config echo: {e}")))
}

pub struct TestArgs {
    pub config: PathBuf,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub objective: Option<String>,
    pub tau: Option<usize>,
    pub constraints: Vec<String>,
    pub kinds: Option<String>,
}

pub fn run_test(args: &TestArgs) -> CliResult<()> {
    let mut run = load_run(&args.config, args.data.as_deref(), args.out.as_deref())?;
    if !args.constraints.is_empty() {
        run.config.constraints = args.constraints.clone();
    }
    let constraint = parse_constraints(&run.config.constraints, &run.labels)?;
    let choice = resolve_objective(&run.config, args.objective.as_deref())?;
    let tau = resolve_tau(&run.config, args.tau);
    let kinds = match &args.kinds {
        Some(s) => crate::config::parse_kinds(s)?,
        None => vec![TestKind::Lr, TestKind::Lm, TestKind::Wald],
    };
    let spec = run.config.model_spec(tau)?;
    let (clean, _srep) = sanitize_panel(&run.panel, &spec)?;
    ensure_dir(&run.out_dir)?;

    let opts = MaximizeOpts::default();
    let constraint_text = run.config.constraints.join(", ");
    let mut rows = vec!["objective,kind,statistic,df,p_value,constraint".to_string()];
    let mut results = Vec::new();
    for objective in choice.list() {
        for r in test_battery(&clean, &spec, &constraint, objective, &kinds, &opts)? {
            rows.push(format!(
                "{},{},{},{},{},{}",
                objective.name(),
                r.kind.name(),
                fmt_f64(r.statistic),
                r.df,
                fmt_f64(r.p_value),
                crate::csvio::escape_field(&constraint_text, ',')
            ));
            results.push(json!({
                "objective": objective.name(),
                "kind": r.kind.name(),
                "statistic": r.statistic,
                "df": r.df,
                "p_value": r.p_value,
                "constraint": constraint_text,
            }));
        }
    }
    let mut table = rows.join("\n");
    table.push('\n');
    write_file(&run.out_dir, "tests.csv", &table)?;
    write_file(
        &run.out_dir,
        "tests.json",
        &format!("{:#}\n", serde_json::Value::Array(results)),
    )?;

    let echo = config_echo(&run.config, choice, tau)?;
    write_manifest(&run.out_dir, "test", echo, vec!["tests.csv".into(), "tests.json".into()])?;
    summary_line("test", 3, &run.out_dir);
    Ok(())
}

pub struct SimulateArgs {
    pub design: String,
    pub n: Option<usize>,
    pub t: Option<usize>,
    pub reps: usize,
    pub tau: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub delta_grid: Option<String>,
    pub kinds: Option<String>,
    pub nominal: f64,
    pub threads: Option<usize>,
}

pub fn run_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut design = DgpDesign::named(&args.design)?;
    if let Some(n) = args.n {
        design.n = n;
    }
    if let Some(t) = args.t {
        design.t = t;
    }
    let mut mc = MCConfig::new(design);
    mc.replications = args.reps;
    mc.tau = args.tau;
    mc.master_seed = args.seed;
    mc.nominal_level = args.nominal;
    if let Some(grid) = &args.delta_grid {
        mc.delta_grid = crate::config::parse_f64_list(grid, "delta")?;
    }
    if let Some(kinds) = &args.kinds {
        mc.kinds = crate::config::parse_kinds(kinds)?;
    }

    let report = run_in_pool(args.threads, || monte_carlo(&mc))??;

    ensure_dir(&args.out)?;
    let report_json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Config(format!("cannot serialize report: {e}")))?;
    write_file(&args.out, "report.json", &format!("{report_json}\n"))?;
    write_file(&args.out, "mc_report.csv", &report_to_csv(&report))?;
    write_file(&args.out, "curves.csv", &curves_to_csv(&report))?;
    write_file(&args.out, "estimators.csv", &estimators_to_csv(&report))?;

    let echo = serde_json::to_value(&mc)
        .map_err(|e| CliError::Config(format!("cannot serialize config echo: {e}")))?;
    write_manifest(
        &args.out,
        "simulate",
        echo,
        vec![
            "report.json".into(),
            "mc_report.csv".into(),
            "curves.csv".into(),
            "estimators.csv".into(),
        ],
    )?;
    summary_line("simulate", 5, &args.out);
    Ok(())
}

/// Run `body` inside a bounded rayon pool when `threads` is given; results
/// must not depend on the worker count, only wall time may.
fn run_in_pool<T: Send>(
    threads: Option<usize>,
    body: impl FnOnce() -> T + Send,
) -> CliResult<T> {
    match threads {
        None => Ok(body()),
        Some(k) => {
            if k == 0 {
                return Err(CliError::Config("--threads must be at least 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(body))
        }
    }
}

pub struct DiagnoseArgs {
    pub design: String,
    pub delta: f64,
    pub side: String,
    pub fixed_dim: usize,
    pub grid: Option<String>,
    pub seed: u64,
    pub dense_cap: usize,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

pub fn run_diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    let design = DgpDesign::named(&args.design)?;
    let sides: Vec<SchurSide> = match args.side.as_str() {
        "time" => vec![SchurSide::TimeEffects],
        "unit" => vec![SchurSide::UnitEffects],
        "both" => vec![SchurSide::TimeEffects, SchurSide::UnitEffects],
        other => {
            return Err(CliError::Config(format!(
                "unknown side {other:?}; expected time, unit, or both"
            )))
        }
    };
    let mut opts = SchurOpts {
        fixed_dim: args.fixed_dim,
        seed: args.seed,
        dense_cap: args.dense_cap,
        ..Default::default()
    };
    if let Some(grid) = &args.grid {
        opts.grid = crate::config::parse_usize_list(grid, "grid")?;
    }

    let series: Vec<_> = run_in_pool(args.threads, || {
        sides
            .iter()
            .map(|&side| schur_invariance_check(&design, args.delta, side, &opts))
            .collect::<twfe::Result<Vec<_>>>()
    })??;

    ensure_dir(&args.out)?;
    let mut outputs = Vec::new();
    let mut series_rows = vec!["side,design,delta,fixed_dim,dim,scaled_norm".to_string()];
    let mut test_rows = vec!["side,design,delta,fixed_dim,mean_estimate,t_statistic,p_value".to_string()];
    for s in &series {
        let body = serde_json::to_string_pretty(s)
            .map_err(|e| CliError::Config(format!("cannot serialize series: {e}")))?;
        let name = format!("schur_{}.json", s.side.name());
        write_file(&args.out, &name, &format!("{body}\n"))?;
        outputs.push(name);
        for (&dim, &norm) in s.grid.iter().zip(&s.scaled_norms) {
            series_rows.push(format!(
                "{},{},{},{},{},{}",
                s.side.name(),
                s.design_tag,
                fmt_f64(s.delta),
                s.fixed_dim,
                dim,
                fmt_f64(norm)
            ));
        }
        test_rows.push(format!(
            "{},{},{},{},{},{},{}",
            s.side.name(),
            s.design_tag,
            fmt_f64(s.delta),
            s.fixed_dim,
            fmt_f64(s.mean_estimate),
            fmt_f64(s.t_statistic),
            fmt_f64(s.p_value)
        ));
    }
    let mut series_csv = series_rows.join("\n");
    series_csv.push('\n');
    write_file(&args.out, "schur_series.csv", &series_csv)?;
    outputs.push("schur_series.csv".to_string());
    let mut tests_csv = test_rows.join("\n");
    tests_csv.push('\n');
    write_file(&args.out, "schur_tests.csv", &tests_csv)?;
    outputs.push("schur_tests.csv".to_string());

    let echo = json!({
        "design": args.design,
        "delta": args.delta,
        "side": args.side,
        "fixed_dim": args.fixed_dim,
        "grid": opts.grid,
        "seed": args.seed,
        "dense_cap": args.dense_cap,
    });
    let n = outputs.len() + 1;
    write_manifest(&args.out, "diagnose", echo, outputs)?;
    summary_line("diagnose", n, &args.out);
    Ok(())
}

pub struct TauSweepArgs {
    pub config: PathBuf,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub tau: Option<String>,
    pub constraints: Vec<String>,
    pub kinds: Option<String>,
}

/// Fit the corrected objective at every τ in the list; when constraints are
/// given, also run the requested tests per τ so sensitivity to the window is
/// visible in one table.
pub fn run_tau_sweep(args: &TauSweepArgs) -> CliResult<()> {
    let mut run = load_run(&args.config, args.data.as_deref(), args.out.as_deref())?;
    let taus: Vec<usize> = match &args.tau {
        Some(list) => crate::config::parse_usize_list(list, "tau")?,
        None => run.config.tau.clone(),
    };
    if taus.is_empty() {
        return Err(CliError::Config("no τ list; pass --tau 0,1,2 or set tau in the config".into()));
    }
    if !args.constraints.is_empty() {
        run.config.constraints = args.constraints.clone();
    }
    let constraint: Option<Constraint> = if run.config.constraints.is_empty() {
        None
    } else {
        Some(parse_constraints(&run.config.constraints, &run.labels)?)
    };
    let kinds = match &args.kinds {
        Some(s) => crate::config::parse_kinds(s)?,
        None => vec![TestKind::Lr, TestKind::Lm, TestKind::Wald],
    };
    ensure_dir(&run.out_dir)?;

    let opts = MaximizeOpts::default();
    let mut header = "tau,loglik,converged,iterations,score_norm".to_string();
    for name in &run.labels {
        header.push_str(&format!(",estimate_{name},se_{name}"));
    }
    let mut sweep_rows = vec![header];
    let mut test_rows = vec!["tau,objective,kind,statistic,df,p_value,constraint".to_string()];
    let constraint_text = run.config.constraints.join(", ");
    for &tau in &taus {
        let spec = run.config.model_spec(tau)?;
        let (clean, _) = sanitize_panel(&run.panel, &spec)?;
        let fit = maximize(&clean, &spec, Objective::Corrected, None, &opts)?;
        let mut row = format!(
            "{tau},{},{},{},{}",
            fmt_f64(fit.loglik),
            fit.converged,
            fit.iterations,
            fmt_f64(fit.score_norm)
        );
        for j in 0..run.labels.len() {
            row.push_str(&format!(",{},{}", fmt_f64(fit.theta_hat[j]), fmt_f64(fit.se[j])));
        }
        sweep_rows.push(row);
        if let Some(c) = &constraint {
            for r in test_battery(&clean, &spec, c, Objective::Corrected, &kinds, &opts)? {
                test_rows.push(format!(
                    "{tau},corrected,{},{},{},{},{}",
                    r.kind.name(),
                    fmt_f64(r.statistic),
                    r.df,
                    fmt_f64(r.p_value),
                    crate::csvio::escape_field(&constraint_text, ',')
                ));
            }
        }
    }
    let mut sweep_csv = sweep_rows.join("\n");
    sweep_csv.push('\n');
    write_file(&run.out_dir, "tau_sweep.csv", &sweep_csv)?;
    let mut outputs = vec!["tau_sweep.csv".to_string()];
    if constraint.is_some() {
        let mut tests_csv = test_rows.join("\n");
        tests_csv.push('\n');
        write_file(&run.out_dir, "tau_tests.csv", &tests_csv)?;
        outputs.push("tau_tests.csv".to_string());
    }

    let mut echoed = run.config.clone();
    echoed.tau = taus;
    let echo = serde_json::to_value(&echoed)
        .map_err(|e| CliError::Config(format!("cannot serialize config echo: {e}")))?;
    let n = outputs.len() + 1;
    write_manifest(&run.out_dir, "tau-sweep", echo, outputs)?;
    summary_line("tau-sweep", n, &run.out_dir);
    Ok(())
}
