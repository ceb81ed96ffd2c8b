//! Independent oracles shared by the integration tests and the acceptance
//! target: brute-force isotonic regression, random data sets, and the
//! exact identities every isotonic fit must satisfy.
#![allow(dead_code)]

use isopsm::estimators::{att_hat_pava, hirano_att, matching_form_att};
use isopsm::isotonic::{check_balance, pava_fit};
use isopsm::{Method, ObservationSet, StepPropensity};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Least-squares monotone fit found by trying every partition of `0..n`
/// into consecutive blocks, each fitted by its mean. Returns the fit and
/// its sum of squared errors.
pub fn brute_force_isotonic(d: &[bool]) -> (Vec<f64>, f64) {
    let n = d.len();
    assert!((1..=20).contains(&n));
    let y: Vec<f64> = d.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    // bit i of `cuts` set: a block ends after position i
    for cuts in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut monotone = true;
        for i in 0..n {
            if i == n - 1 || cuts & (1 << i) != 0 {
                let mean = y[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64;
                if mean < prev {
                    monotone = false;
                    break;
                }
                prev = mean;
                fit.extend(std::iter::repeat_n(mean, i + 1 - start));
                start = i + 1;
            }
        }
        if !monotone {
            continue;
        }
        let sse: f64 = fit.iter().zip(&y).map(|(f, v)| (f - v).powi(2)).sum();
        if best.as_ref().is_none_or(|b| sse < b.1 - 1e-15) {
            best = Some((fit, sse));
        }
    }
    best.expect("the single block is always monotone")
}

/// Compares `pava_fit` with the brute-force search on one sequence.
pub fn check_against_brute_force(d: &[bool]) -> Result<(), String> {
    let (fit, sse) = brute_force_isotonic(d);
    let step = pava_fit(d);
    let got_sse: f64 = step
        .fitted
        .iter()
        .zip(d)
        .map(|(f, &b)| (f - if b { 1.0 } else { 0.0 }).powi(2))
        .sum();
    if (got_sse - sse).abs() > 1e-12 {
        return Err(format!("{d:?}: SSE {got_sse} vs oracle {sse}"));
    }
    if let Some(i) = (0..d.len()).find(|&i| (step.fitted[i] - fit[i]).abs() > 1e-12) {
        return Err(format!("{d:?}: fitted[{i}] = {} vs oracle {}", step.fitted[i], fit[i]));
    }
    Ok(())
}

/// Every 0/1 sequence of length `1..=max_n` against the brute force.
pub fn exhaustive_check(max_n: usize) -> Result<usize, String> {
    let mut checked = 0;
    for n in 1..=max_n {
        for bits in 0u32..(1 << n) {
            let d: Vec<bool> = (0..n).map(|i| bits & (1 << i) != 0).collect();
            check_against_brute_force(&d)?;
            checked += 1;
        }
    }
    Ok(checked)
}

/// A random data set with both arms present: `n` in `[n_min, n_max]`,
/// dimension 1 to 3, covariates sometimes rounded to create ties.
pub fn random_dataset(rng: &mut ChaCha8Rng, n_min: usize, n_max: usize) -> ObservationSet {
    let n = rng.random_range(n_min..=n_max);
    let dim = rng.random_range(1..=3usize);
    let rounded = rng.random_bool(0.3);
    let strength: f64 = rng.random_range(0.0..3.0);
    loop {
        let mut x = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..dim)
                .map(|_| {
                    let v: f64 = rng.sample(StandardNormal);
                    if rounded {
                        (v * 2.0).round() / 2.0
                    } else {
                        v
                    }
                })
                .collect();
            let index: f64 = row.iter().sum();
            let p = 1.0 / (1.0 + (-strength * index).exp());
            let treated = rng.random_bool(p);
            let noise: f64 = rng.sample(StandardNormal);
            y.push(row[0] - index * index / 2.0 + if treated { 1.5 } else { 0.0 } + noise);
            d.push(treated);
            x.extend(row);
        }
        if d.iter().any(|&t| t) && d.iter().any(|&t| !t) {
            return ObservationSet::from_parts(y, d, x, dim).expect("valid synthetic data");
        }
    }
}

/// A random sort key for `data`: a random direction for `dim > 1`,
/// the covariate itself for `dim = 1`.
pub fn random_key(data: &ObservationSet, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if data.dim() == 1 {
        return data.column(0);
    }
    let beta: Vec<f64> = (0..data.dim()).map(|_| rng.sample(StandardNormal)).collect();
    data.index_values(&beta)
}

/// A random smooth weight function of the propensity.
pub fn random_h(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let (a, b, c): (f64, f64, f64) = (
        rng.random_range(-5.0..5.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-2.0..2.0),
    );
    let k = rng.random_range(0..4i32);
    move |p| a * (b * p).sin() + c * p.powi(k) + (p * b).exp()
}

/// Identities (a)–(f): monotone fit, exact block means, the sum
/// constraint, the two alternative ATT forms, and covariate balance.
pub fn check_identities(data: &ObservationSet, key: &[f64], rng: &mut ChaCha8Rng) -> Result<(), String> {
    let step = StepPropensity::fit_on_key(data, key).map_err(|e| e.to_string())?;
    let n = data.n();
    let d_sorted = step.perm.apply(data.d());

    if step.fitted.windows(2).any(|w| w[0] > w[1]) {
        return Err("fitted values decrease".into());
    }
    for (j, range) in step.block_ranges().enumerate() {
        let ones = d_sorted[range.clone()].iter().filter(|&&t| t).count();
        let exact = ones as f64 / range.len() as f64;
        if step.block_values[j] != exact {
            return Err(format!("block {j}: value {} vs mean {exact}", step.block_values[j]));
        }
        if step.fitted[range].iter().any(|&f| f != exact) {
            return Err(format!("block {j}: fitted values differ from the block value"));
        }
    }
    let residual: f64 = step
        .fitted
        .iter()
        .zip(&d_sorted)
        .map(|(f, &t)| f - f64::from(u8::from(t)))
        .sum();
    if residual.abs() > 1e-12 * n as f64 {
        return Err(format!("sum of residuals {residual}"));
    }

    let ipw = att_hat_pava(data, &step, Method::PavaSupplied)
        .map_err(|e| e.to_string())?
        .value;
    let matching = matching_form_att(data, &step, Method::PavaSupplied)
        .map_err(|e| e.to_string())?
        .value;
    if (ipw - matching).abs() > 1e-10 {
        return Err(format!("matching form {matching} vs weighting form {ipw}"));
    }
    let hirano = hirano_att(data, &step, Method::PavaSupplied)
        .map_err(|e| e.to_string())?
        .value;
    if (ipw - hirano).abs() > 1e-12 {
        return Err(format!("Hirano form {hirano} vs weighting form {ipw}"));
    }
    for _ in 0..5 {
        let h = random_h(rng);
        let balance = check_balance(&step, &d_sorted, &h);
        if balance.abs() > 1e-10 {
            return Err(format!("balance {balance}"));
        }
    }
    Ok(())
}
