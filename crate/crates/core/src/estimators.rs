//! Estimators of `μ₁ = E{Y(1)}` and of the effect on the treated.
//!
//! The isotonic estimators work off a [`StepPropensity`]: its blocks are the
//! matched groups, and the matching form of the ATT is algebraically equal to
//! an inverse probability weighting form. PARA plugs a known link into the
//! same formulas and PSM-M is the nearest-neighbour comparator.

use crate::data::{Diagnostics, EffectEstimate, Method, ObservationSet, Target};
use crate::error::{Error, Result};
use crate::index::{IndexFit, IndexMethod, LogisticFit};
use crate::isotonic::StepPropensity;

/// Treated and control units (original indices) of each propensity block.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingGroups {
    pub treated: Vec<Vec<usize>>,
    pub controls: Vec<Vec<usize>>,
    pub values: Vec<f64>,
}

impl MatchingGroups {
    pub fn from_step(data: &ObservationSet, step: &StepPropensity) -> Self {
        let d = data.d();
        let mut treated = Vec::with_capacity(step.blocks());
        let mut controls = Vec::with_capacity(step.blocks());
        for range in step.block_ranges() {
            let (t, c): (Vec<usize>, Vec<usize>) = step.perm.order[range].iter().partition(|&&i| d[i]);
            treated.push(t);
            controls.push(c);
        }
        Self {
            treated,
            controls,
            values: step.block_values.clone(),
        }
    }
}

fn check_step(data: &ObservationSet, step: &StepPropensity) -> Result<()> {
    if step.n() != data.n() {
        return Err(Error::InvalidArgument(format!(
            "step fitted on {} units, data has {}",
            step.n(),
            data.n()
        )));
    }
    Ok(())
}

fn step_diagnostics(step: &StepPropensity, zero_over_zero: usize) -> Diagnostics {
    Diagnostics {
        blocks: step.blocks(),
        min_propensity: step.min_value(),
        max_propensity: step.max_value(),
        zero_over_zero,
    }
}

/// `μ̂₁ = n⁻¹ Σ D_i Y_i / π̂_i`, with `0/0 := 0` where `π̂_i = 0`.
pub fn mu1_hat_pava(data: &ObservationSet, step: &StepPropensity, method: Method) -> Result<EffectEstimate> {
    check_step(data, step)?;
    let (d, y) = (data.d(), data.y());
    let mut total = 0.0;
    let mut conventions = 0;
    for (rank, &unit) in step.perm.order.iter().enumerate() {
        let p = step.fitted[rank];
        if p == 0.0 {
            // block mean zero means no treated unit here
            conventions += 1;
        } else if d[unit] {
            total += y[unit] / p;
        }
    }
    Ok(EffectEstimate {
        value: total / data.n() as f64,
        method,
        target: Target::Mu1,
        diagnostics: step_diagnostics(step, conventions),
    })
}

/// `Σ_j ρ_j μ̂₁ⱼ`: block share times the block's treated mean.
pub fn mu1_grouped(data: &ObservationSet, step: &StepPropensity) -> Result<f64> {
    check_step(data, step)?;
    let groups = MatchingGroups::from_step(data, step);
    let n = data.n() as f64;
    let y = data.y();
    Ok(groups
        .treated
        .iter()
        .zip(&groups.controls)
        .filter(|(t, _)| !t.is_empty())
        .map(|(t, c)| {
            let rho = (t.len() + c.len()) as f64 / n;
            rho * t.iter().map(|&i| y[i]).sum::<f64>() / t.len() as f64
        })
        .sum())
}

fn ipw_att_sum(data: &ObservationSet, step: &StepPropensity) -> f64 {
    let (d, y) = (data.d(), data.y());
    step.perm
        .order
        .iter()
        .zip(&step.fitted)
        .map(|(&unit, &p)| {
            if d[unit] {
                y[unit]
            } else {
                // p < 1 for every control: a block of value 1 is all treated
                -y[unit] * p / (1.0 - p)
            }
        })
        .sum()
}

/// ATT in inverse probability weighting form,
/// `n₁⁻¹ Σ {D_j Y_j - (1 - D_j) Y_j π̂_j / (1 - π̂_j)}`.
pub fn att_hat_pava(data: &ObservationSet, step: &StepPropensity, method: Method) -> Result<EffectEstimate> {
    check_step(data, step)?;
    Ok(EffectEstimate {
        value: ipw_att_sum(data, step) / data.n_treated() as f64,
        method,
        target: Target::Att,
        diagnostics: step_diagnostics(step, 0),
    })
}

/// ATT as a matching estimator: each treated outcome minus the mean control
/// outcome of its block. Treated units in blocks without controls are
/// matched to 0, which is what the weighting form implies.
pub fn matching_form_att(data: &ObservationSet, step: &StepPropensity, method: Method) -> Result<EffectEstimate> {
    check_step(data, step)?;
    let groups = MatchingGroups::from_step(data, step);
    let y = data.y();
    let mut total = 0.0;
    let mut conventions = 0;
    for (t, c) in groups.treated.iter().zip(&groups.controls) {
        let control_mean = if c.is_empty() {
            conventions += t.len();
            0.0
        } else {
            c.iter().map(|&i| y[i]).sum::<f64>() / c.len() as f64
        };
        total += t.iter().map(|&i| y[i] - control_mean).sum::<f64>();
    }
    Ok(EffectEstimate {
        value: total / data.n_treated() as f64,
        method,
        target: Target::Att,
        diagnostics: step_diagnostics(step, conventions),
    })
}

/// Hirano-Imbens-Ridder form, normalized by `Σ π̂_j` instead of `n₁`.
pub fn hirano_att(data: &ObservationSet, step: &StepPropensity, method: Method) -> Result<EffectEstimate> {
    check_step(data, step)?;
    let normalizer: f64 = step.fitted.iter().sum();
    Ok(EffectEstimate {
        value: ipw_att_sum(data, step) / normalizer,
        method,
        target: Target::Att,
        diagnostics: step_diagnostics(step, 0),
    })
}

fn method_for(index: &IndexFit, dim: usize) -> Method {
    match index.method {
        _ if dim == 1 => Method::UnivariatePava,
        IndexMethod::LogisticMle => Method::PavaMle,
        IndexMethod::Sse => Method::PavaSse,
        IndexMethod::Supplied => Method::PavaSupplied,
    }
}

/// Isotonic propensity along `x'β̂`, the common first stage of the PAVA
/// estimators.
pub fn index_step(data: &ObservationSet, index: &IndexFit) -> Result<StepPropensity> {
    if index.beta.len() != data.dim() {
        return Err(Error::InvalidArgument(format!(
            "index of dimension {} for {} covariates",
            index.beta.len(),
            data.dim()
        )));
    }
    StepPropensity::fit_on_key(data, &data.index_values(&index.beta))
}

/// PAVA-MLE / PAVA-SSE estimators on the index `x'β̂`.
pub fn multivariate_pava_estimators(data: &ObservationSet, index: &IndexFit, target: Target) -> Result<EffectEstimate> {
    let step = index_step(data, index)?;
    let method = method_for(index, data.dim());
    match target {
        Target::Mu1 => mu1_hat_pava(data, &step, method),
        Target::Att => att_hat_pava(data, &step, method),
    }
}

/// Univariate pipeline: sort by the single covariate and fit.
pub fn univariate_pava(data: &ObservationSet, target: Target) -> Result<EffectEstimate> {
    if data.dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "univariate estimator on {} covariates",
            data.dim()
        )));
    }
    let step = StepPropensity::fit_on_key(data, &data.column(0))?;
    match target {
        Target::Mu1 => mu1_hat_pava(data, &step, Method::UnivariatePava),
        Target::Att => att_hat_pava(data, &step, Method::UnivariatePava),
    }
}

/// Known-link estimators `μ̆₁` and `τ̆`: the fitted linear predictor
/// (intercept included) is pushed through `link` and used in place of the
/// isotonic propensity. No clipping is applied.
pub fn para_estimators<L>(data: &ObservationSet, link: L, fit: &LogisticFit, target: Target) -> Result<EffectEstimate>
where
    L: Fn(f64) -> f64,
{
    let probs: Vec<f64> = fit.linear_predictor(data).into_iter().map(link).collect();
    para_from_propensity(data, &probs, target)
}

/// Inverse probability weighting with supplied propensities.
pub fn para_from_propensity(data: &ObservationSet, probs: &[f64], target: Target) -> Result<EffectEstimate> {
    if probs.len() != data.n() {
        return Err(Error::InvalidArgument("one propensity per unit required".into()));
    }
    for (index, &p) in probs.iter().enumerate() {
        if !p.is_finite() || !(1e-12..=1.0 - 1e-12).contains(&p) {
            return Err(Error::NumericalOverflow { index, propensity: p });
        }
    }
    let (d, y) = (data.d(), data.y());
    let value = match target {
        Target::Mu1 => {
            d.iter()
                .zip(y)
                .zip(probs)
                .filter(|((&t, _), _)| t)
                .map(|((_, &yi), &p)| yi / p)
                .sum::<f64>()
                / data.n() as f64
        }
        Target::Att => {
            d.iter()
                .zip(y)
                .zip(probs)
                .map(|((&t, &yi), &p)| if t { yi } else { -yi * p / (1.0 - p) })
                .sum::<f64>()
                / data.n_treated() as f64
        }
    };
    let (min, max) = probs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
        (lo.min(p), hi.max(p))
    });
    Ok(EffectEstimate {
        value,
        method: Method::Para,
        target,
        diagnostics: Diagnostics {
            blocks: data.n(),
            min_propensity: min,
            max_propensity: max,
            zero_over_zero: 0,
        },
    })
}

/// Nearest-neighbour matching on the propensity scale, with replacement.
///
/// Each treated unit is matched to its `m` closest controls by
/// `|p_i - p_j|`; controls tied with the `m`-th distance are all included
/// and averaged with equal weight.
pub fn psm_m_att(data: &ObservationSet, propensity: &[f64], m: usize) -> Result<EffectEstimate> {
    if propensity.len() != data.n() {
        return Err(Error::InvalidArgument("one propensity per unit required".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("match count must be positive".into()));
    }
    if let Some(i) = propensity.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            field: "propensity",
            index: i,
        });
    }
    let (d, y) = (data.d(), data.y());
    let mut controls: Vec<(f64, f64)> = (0..data.n())
        .filter(|&i| !d[i])
        .map(|i| (propensity[i], y[i]))
        .collect();
    if controls.len() < m {
        return Err(Error::InsufficientControls {
            needed: m,
            available: controls.len(),
        });
    }
    controls.sort_by(|a, b| a.0.total_cmp(&b.0));
    let scores: Vec<f64> = controls.iter().map(|c| c.0).collect();

    let mut total = 0.0;
    for i in (0..data.n()).filter(|&i| d[i]) {
        let p = propensity[i];
        let split = scores.partition_point(|&s| s < p);
        // grow [lo, hi) outward, always taking the nearer side
        let (mut lo, mut hi) = (split, split);
        while hi - lo < m {
            let left = (lo > 0).then(|| p - scores[lo - 1]);
            let right = (hi < scores.len()).then(|| scores[hi] - p);
            match (left, right) {
                (Some(l), Some(r)) if l <= r => lo -= 1,
                (Some(_), None) => lo -= 1,
                _ => hi += 1,
            }
        }
        let radius = (p - scores[lo]).max(scores[hi - 1] - p);
        while lo > 0 && p - scores[lo - 1] == radius {
            lo -= 1;
        }
        while hi < scores.len() && scores[hi] - p == radius {
            hi += 1;
        }
        let matched = controls[lo..hi].iter().map(|c| c.1).sum::<f64>() / (hi - lo) as f64;
        total += y[i] - matched;
    }
    let (min, max) = propensity
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        });
    Ok(EffectEstimate {
        value: total / data.n_treated() as f64,
        method: Method::Psm { m },
        target: Target::Att,
        diagnostics: Diagnostics {
            blocks: data.n_treated(),
            min_propensity: min,
            max_propensity: max,
            zero_over_zero: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_set(y: &[f64], d: &[u8]) -> ObservationSet {
        let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
        ObservationSet::from_parts(y.to_vec(), d.iter().map(|&v| v == 1).collect(), x, 1).unwrap()
    }

    fn step_of(set: &ObservationSet) -> StepPropensity {
        StepPropensity::fit_on_key(set, &set.column(0)).unwrap()
    }

    const U: Method = Method::UnivariatePava;

    #[test]
    fn mu1_hand_example() {
        let set = sorted_set(&[2.0, 5.0, 4.0], &[1, 0, 1]);
        let step = step_of(&set);
        let est = mu1_hat_pava(&set, &step, U).unwrap();
        assert!((est.value - 8.0 / 3.0).abs() < 1e-15);
        assert!((mu1_grouped(&set, &step).unwrap() - 8.0 / 3.0).abs() < 1e-15);
        assert_eq!(est.diagnostics.blocks, 2);
    }

    #[test]
    fn mu1_monotone_treatment() {
        let set = sorted_set(&[1.0, 7.0, 3.0, 5.0], &[0, 0, 1, 1]);
        let est = mu1_hat_pava(&set, &step_of(&set), U).unwrap();
        assert!((est.value - (3.0 + 5.0) / 4.0).abs() < 1e-15);
        assert_eq!(est.diagnostics.zero_over_zero, 2);
    }

    #[test]
    fn att_hand_example_all_forms() {
        let set = sorted_set(&[2.0, 5.0, 4.0], &[1, 0, 1]);
        let step = step_of(&set);
        for est in [
            att_hat_pava(&set, &step, U).unwrap(),
            matching_form_att(&set, &step, U).unwrap(),
            hirano_att(&set, &step, U).unwrap(),
        ] {
            assert!((est.value - 0.5).abs() < 1e-15, "{est:?}");
        }
    }

    #[test]
    fn att_separated_fit() {
        let set = sorted_set(&[1.0, 2.0, 3.0, 5.0], &[0, 0, 1, 1]);
        let step = step_of(&set);
        let ipw = att_hat_pava(&set, &step, U).unwrap();
        assert!((ipw.value - 4.0).abs() < 1e-15);
        let matching = matching_form_att(&set, &step, U).unwrap();
        assert!((matching.value - 4.0).abs() < 1e-15);
        assert_eq!(matching.diagnostics.zero_over_zero, 2);
    }

    #[test]
    fn att_single_block() {
        let set = sorted_set(&[3.0, 1.0], &[1, 0]);
        let step = step_of(&set);
        assert_eq!(step.blocks(), 1);
        assert!((matching_form_att(&set, &step, U).unwrap().value - 2.0).abs() < 1e-15);
        assert!((att_hat_pava(&set, &step, U).unwrap().value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn para_constant_link() {
        let set = sorted_set(&[2.0, 5.0, 4.0, 1.0], &[1, 0, 1, 0]);
        let fit = LogisticFit {
            intercept: 0.0,
            slopes: vec![1.0],
            iterations: 0,
            log_likelihood: 0.0,
            trace: vec![],
        };
        let est = para_estimators(&set, |_| 0.5, &fit, Target::Mu1).unwrap();
        assert!((est.value - 2.0 * (2.0 + 4.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn para_hand_example() {
        // n = 2, propensities (0.8, 0.25)
        let set = sorted_set(&[3.0, 2.0], &[1, 0]);
        let mu1 = para_from_propensity(&set, &[0.8, 0.25], Target::Mu1).unwrap();
        assert!((mu1.value - 3.0 / 0.8 / 2.0).abs() < 1e-15);
        let att = para_from_propensity(&set, &[0.8, 0.25], Target::Att).unwrap();
        assert!((att.value - (3.0 - 2.0 / 3.0)).abs() < 1e-15);
        assert!(matches!(
            para_from_propensity(&set, &[1.0, 0.25], Target::Att),
            Err(Error::NumericalOverflow { index: 0, .. })
        ));
    }

    #[test]
    fn psm_nearest_neighbour() {
        let set = sorted_set(&[10.0, 1.0, 100.0], &[1, 0, 0]);
        let est = psm_m_att(&set, &[0.6, 0.5, 0.9], 1).unwrap();
        assert!((est.value - 9.0).abs() < 1e-15);
        assert_eq!(est.method.to_string(), "PSM-1");
    }

    #[test]
    fn psm_includes_ties_at_the_boundary() {
        let set = sorted_set(&[10.0, 1.0, 3.0, 100.0], &[1, 0, 0, 0]);
        // controls at distance 0.25, 0.25 and 0.5
        let est = psm_m_att(&set, &[0.5, 0.25, 0.75, 1.0], 1).unwrap();
        assert!((est.value - (10.0 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn psm_with_all_controls_is_difference_in_means() {
        let set = sorted_set(&[4.0, 1.0, 6.0, 2.0, 9.0], &[1, 0, 1, 0, 0]);
        let est = psm_m_att(&set, &[0.3, 0.1, 0.9, 0.5, 0.2], 3).unwrap();
        assert!((est.value - (5.0 - 4.0)).abs() < 1e-12);
        assert_eq!(
            psm_m_att(&set, &[0.3, 0.1, 0.9, 0.5, 0.2], 4),
            Err(Error::InsufficientControls {
                needed: 4,
                available: 3
            })
        );
    }

    #[test]
    fn supplied_index_in_one_dimension_is_univariate() {
        let set = sorted_set(&[2.0, 5.0, 4.0], &[1, 0, 1]);
        let index = IndexFit::supplied(&[3.0]).unwrap();
        let est = multivariate_pava_estimators(&set, &index, Target::Att).unwrap();
        assert_eq!(est, univariate_pava(&set, Target::Att).unwrap());
    }
}
