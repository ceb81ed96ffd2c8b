//! Data-generating processes and the Monte Carlo study runner.
//!
//! Covariates `X1, X2` and outcome noise are i.i.d. standard normal,
//! treatment follows `pr(D=1|x) = π(2 + x1 + x2)` for a logistic or probit
//! `π`, and the potential outcomes are
//!
//! ```text
//! Y(1) = -(X1 + X2)^a + ε1
//! Y(0) = 3 h(X1, X2) - (X1 + b X2)^a + ε0
//! ```
//!
//! with `h = cos(X1 + b X2)` (model 1) or `h = X1` (model 2).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::io::{self, Write};

use crate::data::{ObservationSet, Target};
use crate::error::{Error, Result};
use crate::index::angle_between;
use crate::inference::mean_sd;
use crate::link::Link;
use crate::pipeline::{evaluate, EstimatorKind, PipelineOptions};
use crate::rng::{keyed_stream, label_hash};

/// Bumped whenever the truth oracle changes.
pub const ORACLE_VERSION: &str = "truth-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct DgpConfig {
    /// 1: `h = cos(x1 + b x2)`, 2: `h = x1`.
    pub model: u8,
    pub a: u8,
    pub b: i8,
    pub link: Link,
    pub n: usize,
    pub seed: u64,
}

impl DgpConfig {
    pub fn new(model: u8, a: u8, b: i8, link: Link, n: usize, seed: u64) -> Result<Self> {
        let config = Self {
            model,
            a,
            b,
            link,
            n,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if !matches!(self.model, 1 | 2) {
            return bad(format!("model must be 1 or 2, got {}", self.model));
        }
        if !matches!(self.a, 1 | 2) {
            return bad(format!("a must be 1 or 2, got {}", self.a));
        }
        if !matches!(self.b, -1..=1) {
            return bad(format!("b must be 1, 0 or -1, got {}", self.b));
        }
        if self.n < 10 {
            return bad(format!("n must be at least 10, got {}", self.n));
        }
        Ok(())
    }

    /// The twelve (model, a, b) cells of one table, in table order.
    pub fn grid(link: Link, n: usize, seed: u64) -> Vec<Self> {
        let mut out = Vec::with_capacity(12);
        for model in [1, 2] {
            for a in [1, 2] {
                for b in [1, 0, -1] {
                    out.push(Self {
                        model,
                        a,
                        b,
                        link,
                        n,
                        seed,
                    });
                }
            }
        }
        out
    }

    /// Seed-free identity of the design cell.
    pub fn label(&self) -> String {
        format!(
            "model={},a={},b={},link={},n={}",
            self.model, self.a, self.b, self.link, self.n
        )
    }

    fn key(&self) -> u64 {
        label_hash(&self.label())
    }

    fn power(&self, t: f64) -> f64 {
        if self.a == 1 {
            t
        } else {
            t * t
        }
    }

    fn h(&self, x1: f64, x2: f64) -> f64 {
        if self.model == 1 {
            (x1 + f64::from(self.b) * x2).cos()
        } else {
            x1
        }
    }

    pub fn propensity(&self, x1: f64, x2: f64) -> f64 {
        self.link.prob(2.0 + x1 + x2)
    }

    /// `E{Y(1) | x}`.
    pub fn mu1(&self, x1: f64, x2: f64) -> f64 {
        -self.power(x1 + x2)
    }

    /// `E{Y(0) | x}`.
    pub fn mu0(&self, x1: f64, x2: f64) -> f64 {
        3.0 * self.h(x1, x2) - self.power(x1 + f64::from(self.b) * x2)
    }

    /// `E{Y(1) - Y(0) | x}`.
    pub fn conditional_effect(&self, x1: f64, x2: f64) -> f64 {
        self.mu1(x1, x2) - self.mu0(x1, x2)
    }

    /// Angle in degrees between the control regression direction
    /// `(1, b)/sqrt(1 + b²)` and the propensity direction `(1, 1)/sqrt 2`.
    pub fn regression_angle_degrees(&self) -> f64 {
        angle_between(&[1.0, f64::from(self.b)], &[1.0, 1.0]).to_degrees()
    }
}

/// A simulated sample together with its unobserved quantities.
#[derive(Debug, Clone)]
pub struct SimulatedSample {
    pub data: ObservationSet,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub propensity: Vec<f64>,
}

/// Draws one sample from the stream keyed by `(config.seed, cell)`.
pub fn generate(config: &DgpConfig) -> Result<SimulatedSample> {
    config.validate()?;
    generate_from(config, &mut keyed_stream(config.seed, &[config.key()]))
}

/// Draws one sample from `rng`: per unit `x1, x2`, a uniform for `D`, then
/// independent noise for `Y(1)` and `Y(0)`.
pub fn generate_from(config: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<SimulatedSample> {
    let n = config.n;
    let mut x = Vec::with_capacity(2 * n);
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut propensity = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let e1: f64 = rng.sample(StandardNormal);
        let e0: f64 = rng.sample(StandardNormal);
        let p = config.propensity(x1, x2);
        let treated = u < p;
        let pot1 = config.mu1(x1, x2) + e1;
        let pot0 = config.mu0(x1, x2) + e0;
        x.extend([x1, x2]);
        d.push(treated);
        y.push(if treated { pot1 } else { pot0 });
        y1.push(pot1);
        y0.push(pot0);
        propensity.push(p);
    }
    Ok(SimulatedSample {
        data: ObservationSet::from_parts(y, d, x, 2)?,
        y1,
        y0,
        propensity,
    })
}

/// A Monte Carlo integral with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleValue {
    pub value: f64,
    pub se: f64,
    pub draws: usize,
}

fn draw_covariates(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// True ATT `E{Y(1) - Y(0) | D = 1}`.
///
/// Integrates the noise-free conditional effect over `X` with weights
/// `π(X)`, i.e. `E{π(X) τ(X)} / E{π(X)}`, which has the same expectation as
/// averaging over simulated treated units and lower variance. The standard
/// error is the delta-method SE of the ratio.
pub fn true_att(config: &DgpConfig, oracle_n: usize, seed: u64) -> Result<OracleValue> {
    if oracle_n < 1_000_000 {
        return Err(Error::InvalidArgument("truth oracle needs at least 1e6 draws".into()));
    }
    let mut rng = keyed_stream(seed, &[config.key(), 0x7A0E]);
    let mut draws = Vec::with_capacity(oracle_n);
    for _ in 0..oracle_n {
        let (x1, x2) = draw_covariates(&mut rng);
        draws.push((config.propensity(x1, x2), config.conditional_effect(x1, x2)));
    }
    let weight: f64 = draws.iter().map(|(p, _)| p).sum();
    let tau = draws.iter().map(|(p, t)| p * t).sum::<f64>() / weight;
    let eta = weight / oracle_n as f64;
    let (_, sd) = mean_sd(&draws.iter().map(|(p, t)| p * (t - tau)).collect::<Vec<_>>());
    Ok(OracleValue {
        value: tau,
        se: sd / eta / (oracle_n as f64).sqrt(),
        draws: oracle_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VarianceTarget {
    SigmaMu,
    SigmaTau,
}

/// Efficiency-bound variances of `√n(μ̂₁ - μ₁)` and `√n(τ̂ - τ)` under the
/// design, by Monte Carlo integration over `X`:
///
/// ```text
/// σ²_μ = E{σ₁²(X)/π(X)} + Var{μ₁(X)}
/// σ²_τ = η⁻² E[π(X){τ(X) - τ}² + π(X)σ₁²(X) + π²(X)σ₀²(X)/{1 - π(X)}]
/// ```
///
/// with `σ₁² = σ₀² = 1`. Only cells with `b = 1` and the logistic link are
/// accepted: for `b ≠ 1` the estimator is not efficient, and under the
/// probit link `E{1/π}` and `E{π²/(1-π)}` diverge.
pub fn asymptotic_variance_oracle(
    config: &DgpConfig,
    which: VarianceTarget,
    oracle_n: usize,
    seed: u64,
) -> Result<OracleValue> {
    if config.b != 1 || config.link != Link::Logistic {
        return Err(Error::NotApplicable(format!(
            "efficiency bound oracle needs b = 1 and the logistic link ({})",
            config.label()
        )));
    }
    if oracle_n < 2 {
        return Err(Error::InvalidArgument("oracle needs at least 2 draws".into()));
    }
    let mut rng = keyed_stream(seed, &[config.key(), 0x5167]);
    let xs: Vec<(f64, f64)> = (0..oracle_n).map(|_| draw_covariates(&mut rng)).collect();
    let root_n = (oracle_n as f64).sqrt();
    match which {
        VarianceTarget::SigmaMu => {
            let inv: Vec<f64> = xs.iter().map(|&(a, b)| 1.0 / config.propensity(a, b)).collect();
            let mu: Vec<f64> = xs.iter().map(|&(a, b)| config.mu1(a, b)).collect();
            let (m_inv, sd_inv) = mean_sd(&inv);
            let (m_mu, _) = mean_sd(&mu);
            let centered: Vec<f64> = mu.iter().map(|v| (v - m_mu).powi(2)).collect();
            let (var_mu, sd_var) = mean_sd(&centered);
            Ok(OracleValue {
                value: m_inv + var_mu,
                se: (sd_inv.powi(2) + sd_var.powi(2)).sqrt() / root_n,
                draws: oracle_n,
            })
        }
        VarianceTarget::SigmaTau => {
            let p: Vec<f64> = xs.iter().map(|&(a, b)| config.propensity(a, b)).collect();
            let t: Vec<f64> = xs.iter().map(|&(a, b)| config.conditional_effect(a, b)).collect();
            let eta = p.iter().sum::<f64>() / oracle_n as f64;
            let tau = p.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / (eta * oracle_n as f64);
            let terms: Vec<f64> = p
                .iter()
                .zip(&t)
                .map(|(&pi, &ti)| pi * (ti - tau).powi(2) + pi + pi * pi / (1.0 - pi))
                .collect();
            let (mean, sd) = mean_sd(&terms);
            Ok(OracleValue {
                value: mean / (eta * eta),
                se: sd / (eta * eta) / root_n,
                draws: oracle_n,
            })
        }
    }
}

/// Settings of a Monte Carlo study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub reps: usize,
    pub master_seed: u64,
    pub oracle_n: usize,
    pub pipeline: PipelineOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            reps: 1000,
            master_seed: 20_240_101,
            oracle_n: 4_000_000,
            pipeline: PipelineOptions::default(),
        }
    }
}

/// Bias and RMSE of one estimator in one design cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCell {
    pub estimator: EstimatorKind,
    pub bias: f64,
    pub rmse: f64,
    pub bias_se: f64,
    pub rmse_se: f64,
    pub sd: f64,
    pub replicates: usize,
    pub failures: usize,
    /// Successful estimates in replicate order.
    #[serde(skip)]
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McConfigReport {
    pub config: DgpConfig,
    pub true_att: OracleValue,
    pub treated_fraction: f64,
    pub regression_angle_degrees: f64,
    pub cells: Vec<McCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub oracle_version: &'static str,
    pub master_seed: u64,
    pub reps: usize,
    pub estimators: Vec<EstimatorKind>,
    pub configs: Vec<McConfigReport>,
}

impl McReport {
    pub fn cell(&self, model: u8, a: u8, b: i8, estimator: EstimatorKind) -> Option<&McCell> {
        self.configs
            .iter()
            .find(|c| c.config.model == model && c.config.a == a && c.config.b == b)
            .and_then(|c| c.cells.iter().find(|cell| cell.estimator == estimator))
    }

    /// Table-shaped CSV: one Bias and one RMSE row per design cell, one
    /// column per estimator.
    pub fn write_table_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "model,a,b,link,stat")?;
        for kind in &self.estimators {
            write!(out, ",{kind}")?;
        }
        writeln!(out)?;
        for cfg in &self.configs {
            for (stat, pick) in [("Bias", 0), ("RMSE", 1)] {
                let c = &cfg.config;
                write!(out, "{},{},{},{},{stat}", c.model, c.a, c.b, c.link)?;
                for cell in &cfg.cells {
                    let v = if pick == 0 { cell.bias } else { cell.rmse };
                    write!(out, ",{v:.16e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Runs every estimator on `reps` samples of every configuration.
///
/// Replicate `r` of a cell draws from the stream keyed by
/// `(master_seed, cell label, r)`, so results do not depend on scheduling.
/// Aggregates are accumulated in replicate order.
pub fn run_study(configs: &[DgpConfig], estimators: &[EstimatorKind], options: &StudyOptions) -> Result<McReport> {
    if options.reps < 2 {
        return Err(Error::InvalidArgument("a study needs at least 2 replicates".into()));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators selected".into()));
    }
    for c in configs {
        c.validate()?;
    }

    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| (0..options.reps as u64).map(move |r| (c, r)))
        .collect();
    let results: Vec<(f64, Vec<Option<f64>>)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let config = &configs[c];
            let mut rng = keyed_stream(options.master_seed, &[config.key(), r]);
            match generate_from(config, &mut rng) {
                Ok(sample) => {
                    let share = sample.data.n_treated() as f64 / sample.data.n() as f64;
                    let values = evaluate(&sample.data, estimators, Target::Att, &options.pipeline)
                        .into_iter()
                        .map(|e| e.ok().map(|e| e.value).filter(|v| v.is_finite()))
                        .collect();
                    (share, values)
                }
                Err(_) => (f64::NAN, vec![None; estimators.len()]),
            }
        })
        .collect();

    let truths: Vec<OracleValue> = configs
        .par_iter()
        .map(|c| true_att(c, options.oracle_n, options.master_seed))
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(configs.len());
    for (c, config) in configs.iter().enumerate() {
        let rows = &results[c * options.reps..(c + 1) * options.reps];
        let shares: Vec<f64> = rows.iter().map(|r| r.0).filter(|v| v.is_finite()).collect();
        let truth = truths[c];
        let cells = estimators
            .iter()
            .enumerate()
            .map(|(k, &estimator)| {
                let estimates: Vec<f64> = rows.iter().filter_map(|r| r.1[k]).collect();
                summarize(estimator, estimates, truth.value, options.reps)
            })
            .collect();
        reports.push(McConfigReport {
            config: *config,
            true_att: truth,
            treated_fraction: mean_sd(&shares).0,
            regression_angle_degrees: config.regression_angle_degrees(),
            cells,
        });
    }
    Ok(McReport {
        oracle_version: ORACLE_VERSION,
        master_seed: options.master_seed,
        reps: options.reps,
        estimators: estimators.to_vec(),
        configs: reports,
    })
}

fn summarize(estimator: EstimatorKind, estimates: Vec<f64>, truth: f64, reps: usize) -> McCell {
    let errors: Vec<f64> = estimates.iter().map(|v| v - truth).collect();
    let squares: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let count = estimates.len();
    let (bias, err_sd) = if count > 0 {
        mean_sd(&errors)
    } else {
        (f64::NAN, f64::NAN)
    };
    let (mse, sq_sd) = if count > 0 {
        mean_sd(&squares)
    } else {
        (f64::NAN, f64::NAN)
    };
    let rmse = mse.sqrt();
    let root = (count as f64).sqrt();
    McCell {
        estimator,
        bias,
        rmse,
        bias_se: err_sd / root,
        rmse_se: sq_sd / root / (2.0 * rmse),
        sd: err_sd,
        replicates: count,
        failures: reps - count,
        estimates,
    }
}

/// Share of treated units in one sample of size `n` (any design cell; only
/// the link matters) and its binomial standard error.
pub fn treated_fraction(link: Link, n: usize, seed: u64) -> Result<OracleValue> {
    let config = DgpConfig::new(1, 1, 1, link, n, seed)?;
    let sample = generate(&config)?;
    let share = sample.data.n_treated() as f64 / n as f64;
    Ok(OracleValue {
        value: share,
        se: (share * (1.0 - share) / n as f64).sqrt(),
        draws: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propensity_at_the_origin() {
        let config = DgpConfig::new(1, 1, 1, Link::Logistic, 10, 0).unwrap();
        let e2 = 2f64.exp();
        assert!((config.propensity(0.0, 0.0) - e2 / (1.0 + e2)).abs() < 1e-15);
        assert!((config.propensity(0.0, 0.0) - 0.881).abs() < 5e-4);
    }

    #[test]
    fn conditional_effect_simplifies() {
        // model 2, a = 1, b = 1: -(x1 + x2) - 3 x1 + (x1 + x2) = -3 x1
        let config = DgpConfig::new(2, 1, 1, Link::Logistic, 10, 0).unwrap();
        for &(x1, x2) in &[(0.3, -1.2), (-2.0, 0.5), (1.1, 1.1)] {
            assert!((config.conditional_effect(x1, x2) + 3.0 * x1).abs() < 1e-12);
        }
        // model 1, a = 1, b = 1: -3 cos(x1 + x2)
        let config = DgpConfig::new(1, 1, 1, Link::Logistic, 10, 0).unwrap();
        assert!((config.conditional_effect(0.4, 0.2) + 3.0 * 0.6f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_enumerations() {
        assert!(DgpConfig::new(3, 1, 1, Link::Logistic, 100, 0).is_err());
        assert!(DgpConfig::new(1, 3, 1, Link::Logistic, 100, 0).is_err());
        assert!(DgpConfig::new(1, 1, 2, Link::Logistic, 100, 0).is_err());
        assert!(DgpConfig::new(1, 1, 1, Link::Logistic, 9, 0).is_err());
        assert_eq!(DgpConfig::grid(Link::Probit, 500, 1).len(), 12);
    }

    #[test]
    fn observed_outcome_follows_treatment() {
        let config = DgpConfig::new(1, 2, -1, Link::Probit, 200, 4).unwrap();
        let s = generate(&config).unwrap();
        for i in 0..s.data.n() {
            let expect = if s.data.d()[i] { s.y1[i] } else { s.y0[i] };
            assert_eq!(s.data.y()[i], expect);
        }
        let again = generate(&config).unwrap();
        assert_eq!(s.data, again.data);
    }

    #[test]
    fn regression_angles() {
        let angle = |b| {
            DgpConfig::new(1, 1, b, Link::Logistic, 10, 0)
                .unwrap()
                .regression_angle_degrees()
        };
        assert!(angle(1).abs() < 1e-6);
        assert!((angle(0) - 45.0).abs() < 1e-9);
        assert!((angle(-1) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_rejects_inapplicable_cells() {
        let probit = DgpConfig::new(2, 1, 1, Link::Probit, 500, 0).unwrap();
        let b0 = DgpConfig::new(2, 1, 0, Link::Logistic, 500, 0).unwrap();
        for c in [probit, b0] {
            assert!(matches!(
                asymptotic_variance_oracle(&c, VarianceTarget::SigmaTau, 1000, 1),
                Err(Error::NotApplicable(_))
            ));
        }
    }

    #[test]
    fn homoskedastic_sigma_mu_reduces_to_inverse_propensity() {
        // E{1/π} for logistic π(2 + Z√2) is 1 + e^{-2 + 1}; Var{-(x1+x2)} = 2.
        let c = DgpConfig::new(1, 1, 1, Link::Logistic, 500, 0).unwrap();
        let v = asymptotic_variance_oracle(&c, VarianceTarget::SigmaMu, 400_000, 3).unwrap();
        let exact = 1.0 + (-1f64).exp() + 2.0;
        assert!((v.value - exact).abs() < 4.0 * v.se + 1e-3, "{v:?} vs {exact}");
    }

    #[test]
    fn study_with_two_replicates_has_the_table_schema() {
        let configs = vec![DgpConfig::new(2, 1, 1, Link::Logistic, 200, 0).unwrap()];
        let options = StudyOptions {
            reps: 3,
            oracle_n: 1_000_000,
            ..StudyOptions::default()
        };
        let report = run_study(&configs, &EstimatorKind::TABLE, &options).unwrap();
        let mut csv = Vec::new();
        report.write_table_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "model,a,b,link,stat,PAVA-MLE,PAVA-SSE,PARA,PSM-3,PSM-5,PSM-10,PSM-15"
        );
        assert!(lines[1].starts_with("2,1,1,logistic,Bias,"));
        assert!(lines[2].starts_with("2,1,1,logistic,RMSE,"));
        for cell in &report.configs[0].cells {
            assert!(cell.rmse * cell.rmse - cell.bias * cell.bias >= -1e-9);
        }
    }
}
