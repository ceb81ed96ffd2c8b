//! Monotone maximum likelihood for a binary treatment indicator.
//!
//! Under a nondecreasing propensity in the sort key, the binomial MLE
//! coincides with least-squares isotonic regression of `D` on rank, which
//! the pool-adjacent-violators algorithm solves in one pass. The fit is a
//! step function: each block is a run of consecutive units whose fitted
//! value is the block's treated fraction.

use serde::Serialize;
use std::io::{self, Write};

use crate::data::{ObservationSet, SortPermutation};
use crate::error::{Error, Result};

/// Step-function propensity estimate.
///
/// All per-unit vectors are in sorted order; `perm` maps ranks back to
/// original units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepPropensity {
    /// Block boundaries `0 = e_0 < e_1 < ... < e_k = n`; block `j` covers
    /// ranks `e_j..e_{j+1}`.
    pub block_ends: Vec<usize>,
    /// Strictly increasing block values.
    pub block_values: Vec<f64>,
    /// Treated count of each block.
    pub block_treated: Vec<usize>,
    /// Fitted value of every unit, by rank.
    pub fitted: Vec<f64>,
    #[serde(skip)]
    pub perm: SortPermutation,
}

/// Fits the isotonic propensity to `d`, already in sorted order.
///
/// Blocks are merged while the previous block's treated fraction is at least
/// the new one, so the resulting block values are strictly increasing. The
/// comparisons are done on integer counts and are exact.
pub fn pava_fit(d: &[bool]) -> StepPropensity {
    fit_with_perm(d, SortPermutation::identity(d.len()))
}

fn fit_with_perm(d: &[bool], perm: SortPermutation) -> StepPropensity {
    // (length, treated) per pooled block
    let mut stack: Vec<(usize, usize)> = Vec::with_capacity(d.len());
    for &treated in d {
        let mut block = (1usize, usize::from(treated));
        while let Some(&(len, ones)) = stack.last() {
            // ones/len >= block.1/block.0
            if ones * block.0 >= block.1 * len {
                stack.pop();
                block = (block.0 + len, block.1 + ones);
            } else {
                break;
            }
        }
        stack.push(block);
    }

    let mut block_ends = Vec::with_capacity(stack.len() + 1);
    let mut block_values = Vec::with_capacity(stack.len());
    let mut block_treated = Vec::with_capacity(stack.len());
    let mut fitted = Vec::with_capacity(d.len());
    block_ends.push(0);
    let mut end = 0;
    for &(len, ones) in &stack {
        let value = ones as f64 / len as f64;
        end += len;
        block_ends.push(end);
        block_values.push(value);
        block_treated.push(ones);
        fitted.extend(std::iter::repeat_n(value, len));
    }

    StepPropensity {
        block_ends,
        block_values,
        block_treated,
        fitted,
        perm,
    }
}

impl StepPropensity {
    /// Sorts the units of `data` by `key` and fits the step propensity.
    pub fn fit_on_key(data: &ObservationSet, key: &[f64]) -> Result<Self> {
        if key.len() != data.n() {
            return Err(Error::InvalidArgument(format!(
                "sort key has {} entries for {} units",
                key.len(),
                data.n()
            )));
        }
        let perm = SortPermutation::sort_by_key(key)?;
        let d_sorted = perm.apply(data.d());
        Ok(fit_with_perm(&d_sorted, perm))
    }

    pub fn n(&self) -> usize {
        self.fitted.len()
    }

    /// Number of blocks `k`.
    pub fn blocks(&self) -> usize {
        self.block_values.len()
    }

    /// Fitted value at sorted position `rank`.
    pub fn evaluate(&self, rank: usize) -> Result<f64> {
        self.fitted.get(rank).copied().ok_or(Error::IndexOutOfRange {
            index: rank,
            len: self.n(),
        })
    }

    /// Fitted values indexed by original unit.
    pub fn fitted_by_unit(&self) -> Vec<f64> {
        self.perm.unapply(&self.fitted)
    }

    /// Rank ranges of the blocks.
    pub fn block_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.block_ends.windows(2).map(|w| w[0]..w[1])
    }

    pub fn min_value(&self) -> f64 {
        self.block_values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max_value(&self) -> f64 {
        self.block_values.last().copied().unwrap_or(f64::NAN)
    }

    /// Writes `(sorted key, fitted value)` pairs as two-column CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "index,fitted")?;
        for (k, p) in self.perm.key.iter().zip(&self.fitted) {
            writeln!(out, "{k:.16e},{p:.16e}")?;
        }
        Ok(())
    }
}

/// Empirical mean of `(D_i - π̂_i) h(π̂_i)`, with `d` in sorted order.
///
/// Residuals sum to zero within every block and `h(π̂)` is constant on a
/// block, so the result vanishes up to rounding for any `h`.
pub fn check_balance<H>(step: &StepPropensity, d: &[bool], h: H) -> f64
where
    H: Fn(f64) -> f64,
{
    assert_eq!(d.len(), step.n(), "treatment length");
    let total: f64 = step
        .block_ranges()
        .zip(&step.block_values)
        .map(|(range, &value)| {
            let weight = h(value);
            d[range]
                .iter()
                .map(|&t| (f64::from(u8::from(t)) - value) * weight)
                .sum::<f64>()
        })
        .sum();
    total / step.n() as f64
}
