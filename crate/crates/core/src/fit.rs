//! Fitted selection-model coefficients shared by the RSF and SSF routes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::io::{atomic_write, fmt_f64};
use crate::numcore::StdErr;

/// Covariate values keyed by name.
pub type Covariates = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Rsf,
    Ssf,
    HmmSubmodel,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Rsf => "rsf",
            ModelKind::Ssf => "ssf",
            ModelKind::HmmSubmodel => "hmm-submodel",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rsf" => Ok(ModelKind::Rsf),
            "ssf" => Ok(ModelKind::Ssf),
            "hmm-submodel" => Ok(ModelKind::HmmSubmodel),
            _ => Err(Error::InvalidParameter(format!("unknown model kind `{s}`"))),
        }
    }
}

/// Linear-predictor term of a selection model.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TermKind {
    Intercept,
    Covariate(String),
    /// Step length `l`.
    StepLength,
    /// `ln l`.
    LogStepLength,
    /// `cos theta` of the turn angle.
    CosTurn,
    /// Covariate at the step end times `ln l`.
    CovariateXLogStep(String),
}

impl TermKind {
    pub fn name(&self) -> String {
        match self {
            TermKind::Intercept => "(Intercept)".into(),
            TermKind::Covariate(c) => c.clone(),
            TermKind::StepLength => "l".into(),
            TermKind::LogStepLength => "ln_l".into(),
            TermKind::CosTurn => "cos_theta".into(),
            TermKind::CovariateXLogStep(c) => format!("{c}:ln_l"),
        }
    }

    /// Inverse of [`TermKind::name`].
    pub fn from_name(name: &str) -> TermKind {
        match name {
            "(Intercept)" => TermKind::Intercept,
            "l" => TermKind::StepLength,
            "ln_l" => TermKind::LogStepLength,
            "cos_theta" => TermKind::CosTurn,
            _ => match name.strip_suffix(":ln_l") {
                Some(c) => TermKind::CovariateXLogStep(c.to_string()),
                None => TermKind::Covariate(name.to_string()),
            },
        }
    }

    /// Involves the movement kernel (l, ln l or cos theta).
    pub fn is_movement(&self) -> bool {
        !matches!(self, TermKind::Intercept | TermKind::Covariate(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub kind: TermKind,
    pub estimate: f64,
    pub se: StdErr,
}

impl Term {
    pub fn name(&self) -> String {
        self.kind.name()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub terms: Vec<Term>,
    /// Coefficient covariance (inverse observed information), aligned with
    /// `terms`.
    pub covariance: Option<DMatrix<f64>>,
    pub loglik: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub model_kind: ModelKind,
    pub seed: Option<u64>,
}

impl FitResult {
    pub fn term(&self, kind: &TermKind) -> Option<&Term> {
        self.terms.iter().find(|t| &t.kind == kind)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name() == name).map(|t| t.estimate)
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.estimate).collect()
    }

    /// `term,estimate,se,se_valid`
    pub fn coefficients_csv(&self) -> String {
        let mut s = String::from("term,estimate,se,se_valid\n");
        for t in &self.terms {
            s.push_str(&format!(
                "{},{},{},{}\n",
                t.name(),
                fmt_f64(t.estimate),
                fmt_f64(t.se.value),
                t.se.valid
            ));
        }
        s
    }

    /// `key=value` sidecar lines.
    pub fn metadata(&self) -> String {
        format!(
            "model={}\nloglik={}\nn={}\nconverged={}\nseed={}\n",
            self.model_kind,
            fmt_f64(self.loglik),
            self.n_obs,
            self.converged,
            self.seed.map_or("NA".to_string(), |s| s.to_string())
        )
    }

    /// Writes `coefficients.csv` and `coefficients.meta` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        atomic_write(&dir.join("coefficients.csv"), self.coefficients_csv().as_bytes())?;
        atomic_write(&dir.join("coefficients.meta"), self.metadata().as_bytes())
    }
}

/// Row of a parsed coefficients CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub se_valid: bool,
}

pub fn parse_coefficients_csv(text: &str) -> Result<Vec<CoefficientRow>> {
    let origin = Path::new("coefficients.csv");
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "term,estimate,se,se_valid")) => {}
        _ => {
            return Err(Error::parse(
                origin,
                1,
                "expected header `term,estimate,se,se_valid`",
            ))
        }
    }
    let num = |s: &str, line: usize| -> Result<f64> {
        if s == "NA" {
            return Ok(f64::NAN);
        }
        s.parse()
            .map_err(|_| Error::parse(origin, line, format!("bad number `{s}`")))
    };
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            // term names never contain commas
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::parse(origin, line, "expected 4 fields"));
            }
            Ok(CoefficientRow {
                term: f[0].to_string(),
                estimate: num(f[1], line)?,
                se: num(f[2], line)?,
                se_valid: f[3]
                    .parse()
                    .map_err(|_| Error::parse(origin, line, "bad se_valid"))?,
            })
        })
        .collect()
}

/// Parse `key=value` lines.
pub fn parse_metadata(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
