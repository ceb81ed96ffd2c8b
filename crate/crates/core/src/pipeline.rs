//! Named end-to-end estimation pipelines (index fit, propensity, estimator),
//! shared by the simulation runner, the bootstrap and the CLI.

use serde::{Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

use crate::data::{EffectEstimate, ObservationSet, Target};
use crate::error::{Error, Result};
use crate::estimators::{multivariate_pava_estimators, para_estimators, psm_m_att};
use crate::index::{default_starts, logistic_mle, logistic_regression, sse_fit, IndexFit, LogisticFit, SseOptions};
use crate::link::Link;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    PavaMle,
    PavaSse,
    Para,
    Psm(usize),
}

impl EstimatorKind {
    /// The seven estimators of the simulation tables, in column order.
    pub const TABLE: [EstimatorKind; 7] = [
        EstimatorKind::PavaMle,
        EstimatorKind::PavaSse,
        EstimatorKind::Para,
        EstimatorKind::Psm(3),
        EstimatorKind::Psm(5),
        EstimatorKind::Psm(10),
        EstimatorKind::Psm(15),
    ];

    /// Parses a comma-separated list such as `pava-mle,psm:3`.
    pub fn parse_list(list: &str) -> std::result::Result<Vec<Self>, String> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::PavaMle => f.write_str("PAVA-MLE"),
            EstimatorKind::PavaSse => f.write_str("PAVA-SSE"),
            EstimatorKind::Para => f.write_str("PARA"),
            EstimatorKind::Psm(m) => write!(f, "PSM-{m}"),
        }
    }
}

impl Serialize for EstimatorKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "pava-mle" => Ok(EstimatorKind::PavaMle),
            "pava-sse" => Ok(EstimatorKind::PavaSse),
            "para" => Ok(EstimatorKind::Para),
            _ => {
                let m = lower
                    .strip_prefix("psm:")
                    .or_else(|| lower.strip_prefix("psm-"))
                    .and_then(|m| m.parse::<usize>().ok())
                    .filter(|&m| m >= 1);
                m.map(EstimatorKind::Psm).ok_or_else(|| {
                    format!("unknown estimator `{s}` (valid: pava-mle, pava-sse, para, psm:M with M >= 1)")
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub sse: SseOptions,
    /// Link pushed through the logistic linear predictor by PARA.
    pub para_link: Link,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            sse: SseOptions::default(),
            para_link: Link::Logistic,
        }
    }
}

/// First-stage fits shared by every estimator on one data set.
#[derive(Debug, Clone)]
pub struct FirstStage {
    pub logistic: Result<LogisticFit>,
    pub mle_index: Result<IndexFit>,
    pub sse_index: Option<Result<IndexFit>>,
}

impl FirstStage {
    pub fn fit(data: &ObservationSet, needs_sse: bool, options: &PipelineOptions) -> Self {
        let logistic = logistic_regression(data);
        let mle_index = logistic_mle(data);
        let sse_index = needs_sse.then(|| {
            let starts = default_starts(data, mle_index.as_ref().ok(), &options.sse)?;
            sse_fit(data, &starts, &options.sse)
        });
        Self {
            logistic,
            mle_index,
            sse_index,
        }
    }
}

/// Runs each requested estimator; the logistic fit and index estimates are
/// computed once and shared. Failures are per estimator.
pub fn evaluate(
    data: &ObservationSet,
    kinds: &[EstimatorKind],
    target: Target,
    options: &PipelineOptions,
) -> Vec<Result<EffectEstimate>> {
    let stage = FirstStage::fit(data, kinds.contains(&EstimatorKind::PavaSse), options);
    kinds
        .iter()
        .map(|&kind| evaluate_with(data, kind, target, &stage, options))
        .collect()
}

pub fn evaluate_with(
    data: &ObservationSet,
    kind: EstimatorKind,
    target: Target,
    stage: &FirstStage,
    options: &PipelineOptions,
) -> Result<EffectEstimate> {
    match kind {
        EstimatorKind::PavaMle => {
            multivariate_pava_estimators(data, stage.mle_index.as_ref().map_err(Clone::clone)?, target)
        }
        EstimatorKind::PavaSse => {
            let index = match &stage.sse_index {
                Some(fit) => fit.clone()?,
                None => {
                    let starts = default_starts(data, stage.mle_index.as_ref().ok(), &options.sse)?;
                    sse_fit(data, &starts, &options.sse)?
                }
            };
            multivariate_pava_estimators(data, &index, target)
        }
        EstimatorKind::Para => {
            let fit = stage.logistic.as_ref().map_err(Clone::clone)?;
            let link = options.para_link;
            para_estimators(data, |t| link.prob(t), fit, target)
        }
        EstimatorKind::Psm(m) => {
            if target != Target::Att {
                return Err(Error::NotApplicable("PSM-M estimates the ATT only".into()));
            }
            let fit = stage.logistic.as_ref().map_err(Clone::clone)?;
            psm_m_att(data, &fit.probabilities(data), m)
        }
    }
}

/// Point estimate of one estimator, for use inside the bootstrap.
pub fn point_estimate(
    data: &ObservationSet,
    kind: EstimatorKind,
    target: Target,
    options: &PipelineOptions,
) -> Result<f64> {
    evaluate(data, &[kind], target, options)
        .pop()
        .expect("one estimator")
        .map(|e| e.value)
}
