//! Run configuration: a JSON file describing data columns and the model,
//! overridable by command-line flags, plus the constraint mini-grammar.

use crate::error::{CliError, CliResult};
use crate::ingest::ColumnRoles;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use twfe::infer::{Constraint, Objective, TestKind};
use twfe::{Family, Identification, IndexForm, ModelSpec};

/// Everything a data-driven run needs. `tau` is a list so one config can
/// drive a sensitivity sweep; single-τ commands use its first entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: Option<String>,
    pub columns: ColumnRoles,
    pub family: String,
    pub index_form: String,
    #[serde(default)]
    pub lag_order: usize,
    #[serde(default)]
    pub identification: Option<String>,
    #[serde(default)]
    pub tau: Vec<usize>,
    #[serde(default)]
    pub constraints: Vec<String>,
    #[serde(default)]
    pub objective: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<String>,
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn family(&self) -> CliResult<Family> {
        parse_family(&self.family)
    }

    pub fn index_form(&self) -> CliResult<IndexForm> {
        parse_index_form(&self.index_form)
    }

    /// Build the model spec this config describes, with `tau` installed.
    pub fn model_spec(&self, tau: usize) -> CliResult<ModelSpec> {
        let mut spec =
            ModelSpec::new(self.family()?, self.index_form()?, self.lag_order, self.columns.x.len())?
                .with_tau(tau);
        if let Some(id) = &self.identification {
            spec = spec.with_identification(parse_identification(id)?)?;
        }
        Ok(spec)
    }

    /// Parameter names in θ order: the lag coefficient is `rho`, slopes keep
    /// their column names, and the shared slope is `lambda`.
    pub fn theta_labels(&self) -> CliResult<Vec<String>> {
        let mut labels = Vec::new();
        if self.lag_order > 0 {
            labels.push("rho".to_string());
        }
        labels.extend(self.columns.x.iter().cloned());
        if self.index_form()? == IndexForm::SharedSlopeFe {
            labels.push("lambda".to_string());
        }
        Ok(labels)
    }
}

pub fn parse_family(s: &str) -> CliResult<Family> {
    match s {
        "probit" => Ok(Family::Probit),
        "logit" => Ok(Family::Logit),
        "gaussian" => Ok(Family::Gaussian),
        other => Err(CliError::Config(format!(
            "unknown family {other:?}; expected probit, logit, or gaussian"
        ))),
    }
}

pub fn parse_index_form(s: &str) -> CliResult<IndexForm> {
    match s {
        "additive" => Ok(IndexForm::AdditiveFe),
        "slope-shift" => Ok(IndexForm::SlopeShiftFe),
        "slope-scale" => Ok(IndexForm::SlopeScaleFe),
        "ds" => Ok(IndexForm::CovariateLoadedFe),
        "shared" => Ok(IndexForm::SharedSlopeFe),
        other => Err(CliError::Config(format!(
            "unknown index form {other:?}; expected additive, slope-shift, slope-scale, ds, or shared"
        ))),
    }
}

pub fn parse_identification(s: &str) -> CliResult<Identification> {
    match s {
        "sum_zero_both" => Ok(Identification::SumZeroBoth),
        "sum_equal" => Ok(Identification::SumEqual),
        "mean_half" => Ok(Identification::MeanHalf),
        "none" => Ok(Identification::NoneNeeded),
        other => Err(CliError::Config(format!(
            "unknown identification {other:?}; expected sum_zero_both, sum_equal, mean_half, or none"
        ))),
    }
}

/// Which objectives a command should run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveChoice {
    Raw,
    Corrected,
    Both,
}

impl ObjectiveChoice {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "raw" => Ok(ObjectiveChoice::Raw),
            "corrected" => Ok(ObjectiveChoice::Corrected),
            "both" => Ok(ObjectiveChoice::Both),
            other => Err(CliError::Config(format!(
                "unknown objective {other:?}; expected raw, corrected, or both"
            ))),
        }
    }

    pub fn list(self) -> Vec<Objective> {
        match self {
            ObjectiveChoice::Raw => vec![Objective::Raw],
            ObjectiveChoice::Corrected => vec![Objective::Corrected],
            ObjectiveChoice::Both => vec![Objective::Raw, Objective::Corrected],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveChoice::Raw => "raw",
            ObjectiveChoice::Corrected => "corrected",
            ObjectiveChoice::Both => "both",
        }
    }
}

pub fn parse_kinds(s: &str) -> CliResult<Vec<TestKind>> {
    s.split(',')
        .map(|k| match k.trim() {
            "lr" => Ok(TestKind::Lr),
            "lm" => Ok(TestKind::Lm),
            "wald" => Ok(TestKind::Wald),
            other => {
                Err(CliError::Config(format!("unknown test kind {other:?}; expected lr, lm, or wald")))
            }
        })
        .collect()
}

/// Parse a comma-separated list of numbers.
pub fn parse_f64_list(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|tok| crate::csvio::parse_f64(tok, what))
        .collect()
}

pub fn parse_usize_list(s: &str, what: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|tok| crate::csvio::parse_usize(tok, what))
        .collect()
}

/// Parse constraint strings against named θ coordinates. Grammar per atom:
/// `name=value` pins one coordinate; `name1=name2[=name3…]` equates
/// coordinates (k names give k−1 restrictions). Commas separate atoms, and
/// all rows stack into one linear constraint.
pub fn parse_constraints(strings: &[String], labels: &[String]) -> CliResult<Constraint> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let p = labels.len();
    let index_of = |name: &str| -> CliResult<usize> {
        labels.iter().position(|l| l == name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown parameter {name:?} in constraint; parameters are {}",
                labels.join(", ")
            ))
        })
    };
    for s in strings {
        for atom in s.split(',') {
            let atom = atom.trim();
            if atom.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = atom.split('=').map(str::trim).collect();
            if tokens.len() < 2 {
                return Err(CliError::Config(format!(
                    "constraint {atom:?} needs an '='; write name=value or name1=name2"
                )));
            }
            let all_names = tokens.iter().all(|t| labels.iter().any(|l| l == t));
            if all_names {
                // Chained equality: t1 − t2 = 0, t2 − t3 = 0, …
                for w in tokens.windows(2) {
                    let a = index_of(w[0])?;
                    let b = index_of(w[1])?;
                    if a == b {
                        return Err(CliError::Config(format!(
                            "constraint {atom:?} equates {:?} with itself",
                            w[0]
                        )));
                    }
                    let mut row = vec![0.0; p];
                    row[a] = 1.0;
                    row[b] = -1.0;
                    rows.push(row);
                    rhs.push(0.0);
                }
            } else if tokens.len() == 2 {
                let j = index_of(tokens[0])?;
                let value = tokens[1].parse::<f64>().map_err(|_| {
                    CliError::Config(format!(
                        "constraint {atom:?}: {:?} is neither a parameter name nor a number",
                        tokens[1]
                    ))
                })?;
                let mut row = vec![0.0; p];
                row[j] = 1.0;
                rows.push(row);
                rhs.push(value);
            } else {
                return Err(CliError::Config(format!(
                    "constraint {atom:?} mixes names and values; write name=value or name1=name2[=name3…]"
                )));
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Config("no constraints given".into()));
    }
    let r = rows.len();
    let mut mat = Array2::zeros((r, p));
    for (k, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            mat[(k, j)] = v;
        }
    }
    Ok(Constraint::Linear { mat, rhs: Array1::from(rhs) })
}
