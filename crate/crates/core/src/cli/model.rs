//! Fitted models as written by the fit commands and read back by the
//! prediction commands: `coefficients.csv`, `coefficients.meta` and, when
//! standard errors exist, `covariance.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fit::{parse_coefficients_csv, parse_metadata, FitResult, ModelKind, Term, TermKind};
use crate::hmm::{HmmFit, InitialPolicy, OrderingCertificate, WorkingLayout};
use crate::io::fmt_f64;
use crate::numcore::{GammaParams, StdErr, VonMisesParams};
use crate::ssf::MovementKernel;

/// `key=value` sidecar of a saved model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta(pub BTreeMap<String, String>);

impl Meta {
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.insert(key.into(), value.to_string());
    }

    pub fn set_f64(&mut self, key: impl Into<String>, value: f64) {
        self.0.insert(key.into(), fmt_f64(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::InvalidParameter(format!("model metadata lacks `{key}`")))?;
        if v == "NA" {
            return Ok(f64::NAN);
        }
        v.parse()
            .map_err(|_| Error::InvalidParameter(format!("model metadata `{key}` is not a number")))
    }

    fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .filter(|v| !v.is_empty())
            .map(|v| v.split(';').map(str::to_string).collect())
            .unwrap_or_default()
    }

    /// Record mean, min and max of a covariate column.
    pub fn summarize(&mut self, name: &str, values: impl IntoIterator<Item = f64>) {
        let (mut s, mut n, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            s += v;
            n += 1;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if n > 0 {
            self.set_f64(format!("mean.{name}"), s / n as f64);
            self.set_f64(format!("min.{name}"), lo);
            self.set_f64(format!("max.{name}"), hi);
        }
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

pub fn covariance_csv(names: &[String], cov: &DMatrix<f64>) -> String {
    let mut s = String::from("term");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (i, n) in names.iter().enumerate() {
        s.push_str(n);
        for j in 0..names.len() {
            s.push(',');
            s.push_str(&fmt_f64(cov[(i, j)]));
        }
        s.push('\n');
    }
    s
}

pub fn parse_covariance_csv(text: &str, origin: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
    let header = match lines.next() {
        Some((_, h)) if h.starts_with("term") => h,
        _ => return Err(Error::parse(origin, 1, "expected header starting with `term`")),
    };
    let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let k = names.len();
    let mut m = DMatrix::zeros(k, k);
    let mut rows = 0;
    for (i, l) in lines {
        let f: Vec<&str> = l.split(',').collect();
        if rows >= k || f.len() != k + 1 || f[0] != names[rows] {
            return Err(Error::parse(
                origin,
                i + 1,
                "covariance row does not match the header",
            ));
        }
        for j in 0..k {
            m[(rows, j)] = match f[j + 1] {
                "NA" => f64::NAN,
                v => v
                    .parse()
                    .map_err(|_| Error::parse(origin, i + 1, format!("bad number `{v}`")))?,
            };
        }
        rows += 1;
    }
    if rows != k {
        return Err(Error::parse(origin, rows + 1, "covariance matrix is not square"));
    }
    Ok((names, m))
}

pub fn kernel_meta(meta: &mut Meta, k: &MovementKernel) {
    meta.set_f64("kernel.mean", k.step.mean());
    meta.set_f64("kernel.sd", k.step.sd());
    meta.set_f64("kernel.mu", k.angle.mu());
    meta.set_f64("kernel.kappa", k.angle.kappa());
}

pub fn hmm_layout_meta(meta: &mut Meta, l: &WorkingLayout) {
    meta.set("n_states", l.n_states);
    meta.set("transition_covariates", l.transition_covariates.join(";"));
    meta.set("obs_covariates", l.obs_covariates.join(";"));
    meta.set("estimate_mu", l.estimate_mu);
    meta.set(
        "initial",
        match l.initial {
            InitialPolicy::Free => "free",
            InitialPolicy::Stationary => "stationary",
        },
    );
}

pub enum SavedModel {
    Selection {
        fit: FitResult,
        meta: Meta,
        /// Tentative movement kernel of an SSF.
        kernel: Option<MovementKernel>,
    },
    Hmm {
        fit: Box<HmmFit>,
        meta: Meta,
    },
}

impl SavedModel {
    pub fn meta(&self) -> &Meta {
        match self {
            SavedModel::Selection { meta, .. } | SavedModel::Hmm { meta, .. } => meta,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_model(dir: &Path) -> Result<SavedModel> {
    let meta = Meta(parse_metadata(&read(&dir.join("coefficients.meta"))?));
    let rows = parse_coefficients_csv(&read(&dir.join("coefficients.csv"))?)?;
    let cov_path = dir.join("covariance.csv");
    let covariance = if cov_path.exists() {
        let (names, m) = parse_covariance_csv(&read(&cov_path)?, &cov_path)?;
        if names.len() != rows.len() || names.iter().zip(&rows).any(|(n, r)| *n != r.term) {
            return Err(Error::parse(&cov_path, 1, "terms differ from coefficients.csv"));
        }
        Some(m)
    } else {
        None
    };
    let kind = meta
        .get("model")
        .ok_or_else(|| Error::InvalidParameter("model metadata lacks `model`".into()))?;
    let loglik = meta.f64("loglik")?;
    let n_obs = meta.f64("n")? as usize;
    let converged = meta.get("converged") == Some("true");
    let seed = meta.get("seed").and_then(|s| s.parse().ok());
    if kind == "hmm" {
        let layout = WorkingLayout {
            n_states: meta.f64("n_states")? as usize,
            transition_covariates: meta.list("transition_covariates"),
            obs_covariates: meta.list("obs_covariates"),
            estimate_mu: meta.get("estimate_mu") == Some("true"),
            initial: match meta.get("initial") {
                Some("stationary") => InitialPolicy::Stationary,
                _ => InitialPolicy::Free,
            },
        };
        if layout.names().iter().ne(rows.iter().map(|r| &r.term)) {
            return Err(Error::InvalidParameter(
                "coefficients.csv does not match the HMM layout in coefficients.meta".into(),
            ));
        }
        let working: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
        let model = layout.unpack(&working)?;
        let n = model.n_states();
        let fit = HmmFit {
            ordering: OrderingCertificate {
                permutation: (0..n).collect(),
                base_means: model.states().iter().map(|s| s.step.mean()).collect(),
            },
            model,
            loglik,
            layout,
            working,
            se: rows
                .iter()
                .map(|r| StdErr {
                    value: r.se,
                    valid: r.se_valid,
                })
                .collect(),
            covariance,
            restarts: Vec::new(),
            best_restart: meta.f64("best_restart").map_or(0, |v| v as usize),
            converged,
            n_obs,
            warnings: Vec::new(),
        };
        return Ok(SavedModel::Hmm {
            fit: Box::new(fit),
            meta,
        });
    }
    let model_kind: ModelKind = kind.parse()?;
    let kernel = if meta.get("kernel.mean").is_some() {
        Some(MovementKernel {
            step: GammaParams::new(meta.f64("kernel.mean")?, meta.f64("kernel.sd")?)?,
            angle: VonMisesParams::new(meta.f64("kernel.mu")?, meta.f64("kernel.kappa")?)?,
        })
    } else {
        None
    };
    let fit = FitResult {
        terms: rows
            .iter()
            .map(|r| Term {
                kind: TermKind::from_name(&r.term),
                estimate: r.estimate,
                se: StdErr {
                    value: r.se,
                    valid: r.se_valid,
                },
            })
            .collect(),
        covariance,
        loglik,
        n_obs,
        converged,
        model_kind,
        seed,
    };
    Ok(SavedModel::Selection { fit, meta, kernel })
}
