//! Structured output tables. The Monte Carlo report gets a single
//! self-describing CSV whose re-parse reproduces the in-memory report
//! exactly; smaller tables (curves, estimators, tests) are plain CSVs.

use crate::csvio::{fmt_f64, join_line, parse_bool, parse_f64, parse_u64, parse_usize, split_line};
use crate::error::{CliError, CliResult};
use twfe::infer::TestKind;
use twfe::sim::{EstimatorSummary, MCObjective, MCReport, RejectionPoint, RepRecord};

fn objective_name(o: MCObjective) -> &'static str {
    o.name()
}

fn parse_objective(s: &str) -> CliResult<MCObjective> {
    match s {
        "infeasible" => Ok(MCObjective::Infeasible),
        "raw" => Ok(MCObjective::Raw),
        "corrected" => Ok(MCObjective::Corrected),
        other => Err(CliError::Config(format!("unknown objective tag {other:?} in report CSV"))),
    }
}

fn parse_kind(s: &str) -> CliResult<TestKind> {
    match s {
        "LR" => Ok(TestKind::Lr),
        "LM" => Ok(TestKind::Lm),
        "Wald" => Ok(TestKind::Wald),
        other => Err(CliError::Config(format!("unknown test kind tag {other:?} in report CSV"))),
    }
}

const REPORT_COLUMNS: [&str; 26] = [
    "row_type",
    "design_tag",
    "n",
    "t",
    "tau",
    "master_seed",
    "nominal_level",
    "replications_requested",
    "replications_included",
    "excluded",
    "objective",
    "kind",
    "delta",
    "rejection_rate",
    "mc_se",
    "n_effective",
    "parameter",
    "true_value",
    "mean",
    "percent_bias",
    "rmse",
    "rep",
    "included",
    "dropped_units",
    "dropped_periods",
    "note",
];

/// One CSV holding the whole report: a `meta` row for the scalar header,
/// then one row per rejection-curve point, estimator summary, and
/// replication record. Unused cells stay empty.
pub fn report_to_csv(report: &MCReport) -> String {
    let blank = String::new();
    let mut lines = Vec::with_capacity(
        2 + report.curves.len() + report.estimators.len() + report.replication_log.len(),
    );
    lines.push(REPORT_COLUMNS.join(","));

    let mut meta = vec![blank.clone(); REPORT_COLUMNS.len()];
    meta[0] = "meta".into();
    meta[1] = report.design_tag.clone();
    meta[2] = report.n.to_string();
    meta[3] = report.t.to_string();
    meta[4] = report.tau.to_string();
    meta[5] = report.master_seed.to_string();
    meta[6] = fmt_f64(report.nominal_level);
    meta[7] = report.replications_requested.to_string();
    meta[8] = report.replications_included.to_string();
    meta[9] = report.excluded.to_string();
    lines.push(join_line(&meta, ','));

    for c in &report.curves {
        let mut row = vec![blank.clone(); REPORT_COLUMNS.len()];
        row[0] = "curve".into();
        row[10] = objective_name(c.objective).into();
        row[11] = c.kind.name().into();
        row[12] = fmt_f64(c.delta);
        row[13] = fmt_f64(c.rejection_rate);
        row[14] = fmt_f64(c.mc_se);
        row[15] = c.n_effective.to_string();
        lines.push(join_line(&row, ','));
    }
    for e in &report.estimators {
        let mut row = vec![blank.clone(); REPORT_COLUMNS.len()];
        row[0] = "estimator".into();
        row[10] = objective_name(e.objective).into();
        row[16] = e.parameter.clone();
        row[17] = fmt_f64(e.true_value);
        row[18] = fmt_f64(e.mean);
        row[19] = fmt_f64(e.percent_bias);
        row[20] = fmt_f64(e.rmse);
        lines.push(join_line(&row, ','));
    }
    for r in &report.replication_log {
        let mut row = vec![blank.clone(); REPORT_COLUMNS.len()];
        row[0] = "replication".into();
        row[21] = r.rep.to_string();
        row[22] = r.included.to_string();
        row[23] = r.dropped_units.to_string();
        row[24] = r.dropped_periods.to_string();
        row[25] = r.note.clone();
        lines.push(join_line(&row, ','));
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// Inverse of [`report_to_csv`].
pub fn report_from_csv(text: &str) -> CliResult<MCReport> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config("report CSV is empty".into()))?;
    if split_line(header, ',') != REPORT_COLUMNS {
        return Err(CliError::Config("report CSV header does not match the expected layout".into()));
    }

    let mut meta: Option<Vec<String>> = None;
    let mut curves = Vec::new();
    let mut estimators = Vec::new();
    let mut replication_log = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_line(line, ',');
        if fields.len() != REPORT_COLUMNS.len() {
            return Err(CliError::Config(format!(
                "report CSV line {} has {} fields, expected {}",
                idx + 2,
                fields.len(),
                REPORT_COLUMNS.len()
            )));
        }
        match fields[0].as_str() {
            "meta" => {
                if meta.is_some() {
                    return Err(CliError::Config("report CSV has two meta rows".into()));
                }
                meta = Some(fields);
            }
            "curve" => curves.push(RejectionPoint {
                objective: parse_objective(&fields[10])?,
                kind: parse_kind(&fields[11])?,
                delta: parse_f64(&fields[12], "delta")?,
                rejection_rate: parse_f64(&fields[13], "rejection_rate")?,
                mc_se: parse_f64(&fields[14], "mc_se")?,
                n_effective: parse_usize(&fields[15], "n_effective")?,
            }),
            "estimator" => estimators.push(EstimatorSummary {
                objective: parse_objective(&fields[10])?,
                parameter: fields[16].clone(),
                true_value: parse_f64(&fields[17], "true_value")?,
                mean: parse_f64(&fields[18], "mean")?,
                percent_bias: parse_f64(&fields[19], "percent_bias")?,
                rmse: parse_f64(&fields[20], "rmse")?,
            }),
            "replication" => replication_log.push(RepRecord {
                rep: parse_usize(&fields[21], "rep")?,
                included: parse_bool(&fields[22], "included")?,
                dropped_units: parse_usize(&fields[23], "dropped_units")?,
                dropped_periods: parse_usize(&fields[24], "dropped_periods")?,
                note: fields[25].clone(),
            }),
            other => {
                return Err(CliError::Config(format!(
                    "report CSV line {} has unknown row type {other:?}",
                    idx + 2
                )))
            }
        }
    }
    let meta = meta.ok_or_else(|| CliError::Config("report CSV has no meta row".into()))?;
    Ok(MCReport {
        design_tag: meta[1].clone(),
        n: parse_usize(&meta[2], "n")?,
        t: parse_usize(&meta[3], "t")?,
        tau: parse_usize(&meta[4], "tau")?,
        master_seed: parse_u64(&meta[5], "master_seed")?,
        nominal_level: parse_f64(&meta[6], "nominal_level")?,
        replications_requested: parse_usize(&meta[7], "replications_requested")?,
        replications_included: parse_usize(&meta[8], "replications_included")?,
        excluded: parse_usize(&meta[9], "excluded")?,
        curves,
        estimators,
        replication_log,
    })
}

/// The rejection-curve table alone: one row per (objective, kind, δ).
pub fn curves_to_csv(report: &MCReport) -> String {
    let mut lines = vec!["objective,kind,delta,rejection_rate,mc_se,n_effective".to_string()];
    for c in &report.curves {
        lines.push(format!(
            "{},{},{},{},{},{}",
            objective_name(c.objective),
            c.kind.name(),
            fmt_f64(c.delta),
            fmt_f64(c.rejection_rate),
            fmt_f64(c.mc_se),
            c.n_effective
        ));
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// The estimator-summary table alone: one row per (objective, parameter).
pub fn estimators_to_csv(report: &MCReport) -> String {
    let mut lines = vec!["objective,parameter,true_value,mean,percent_bias,rmse".to_string()];
    for e in &report.estimators {
        lines.push(format!(
            "{},{},{},{},{},{}",
            objective_name(e.objective),
            e.parameter,
            fmt_f64(e.true_value),
            fmt_f64(e.mean),
            fmt_f64(e.percent_bias),
            fmt_f64(e.rmse)
        ));
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> MCReport {
        MCReport {
            design_tag: "probit-additive-dynamic".into(),
            n: 10,
            t: 8,
            tau: 1,
            master_seed: 5,
            nominal_level: 0.05,
            replications_requested: 3,
            replications_included: 2,
            excluded: 1,
            curves: vec![RejectionPoint {
                objective: MCObjective::Corrected,
                kind: TestKind::Lr,
                delta: -0.2,
                rejection_rate: 0.5,
                mc_se: 0.3535533905932738,
                n_effective: 2,
            }],
            estimators: vec![EstimatorSummary {
                objective: MCObjective::Raw,
                parameter: "rho".into(),
                true_value: 0.5,
                mean: 0.612345678901234567,
                percent_bias: 22.46913578024691,
                rmse: 0.2,
            }],
            replication_log: vec![
                RepRecord {
                    rep: 0,
                    included: true,
                    dropped_units: 0,
                    dropped_periods: 0,
                    note: String::new(),
                },
                RepRecord {
                    rep: 1,
                    included: false,
                    dropped_units: 3,
                    dropped_periods: 1,
                    note: "excluded: sanitize removed 31.2% of cells, above the 20% cap".into(),
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip_reproduces_the_report_exactly() {
        let report = sample_report();
        let csv = report_to_csv(&report);
        let back = report_from_csv(&csv).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn notes_with_commas_survive_quoting() {
        let report = sample_report();
        let csv = report_to_csv(&report);
        assert!(csv.contains("\"excluded: sanitize removed 31.2% of cells, above the 20% cap\""));
        let back = report_from_csv(&csv).unwrap();
        assert_eq!(back.replication_log[1].note, report.replication_log[1].note);
    }

    #[test]
    fn corrupt_headers_and_row_types_are_rejected() {
        assert!(matches!(report_from_csv(""), Err(CliError::Config(_))));
        assert!(matches!(report_from_csv("a,b,c\n"), Err(CliError::Config(_))));
        let mut csv = report_to_csv(&sample_report());
        csv.push_str("mystery,,,,,,,,,,,,,,,,,,,,,,,,,\n");
        assert!(matches!(report_from_csv(&csv), Err(CliError::Config(_))));
    }
}
