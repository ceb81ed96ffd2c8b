//! Observation container, sort permutations and the shared report types.

use serde::{Serialize, Serializer};
use std::fmt;

use crate::error::{Error, Result};

/// One unvalidated input row: outcome, treatment flag and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub y: f64,
    pub d: f64,
    pub x: Vec<f64>,
}

impl RawRecord {
    pub fn new(y: f64, d: f64, x: Vec<f64>) -> Self {
        Self { y, d, x }
    }
}

/// A validated sample of `n` units `(y, d, x)`.
///
/// Covariates are stored row-major. Both arms are non-empty and every entry
/// is finite, so downstream estimators never need to re-check.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    y: Vec<f64>,
    d: Vec<bool>,
    x: Vec<f64>,
    dim: usize,
    n_treated: usize,
}

impl ObservationSet {
    /// Validates raw records. Rows are never dropped or coerced.
    pub fn validate(records: &[RawRecord]) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyInput)?;
        let dim = first.x.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                row: 0,
                expected: 1,
                found: 0,
            });
        }
        let n = records.len();
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n * dim);
        for (row, rec) in records.iter().enumerate() {
            if rec.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    row,
                    expected: dim,
                    found: rec.x.len(),
                });
            }
            if !rec.y.is_finite() {
                return Err(Error::NonFinite { field: "y", index: row });
            }
            if rec.d.is_nan() {
                return Err(Error::NonFinite { field: "d", index: row });
            }
            let treated = if rec.d == 1.0 {
                true
            } else if rec.d == 0.0 {
                false
            } else {
                return Err(Error::NonBinaryTreatment { row, value: rec.d });
            };
            if rec.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { field: "x", index: row });
            }
            y.push(rec.y);
            d.push(treated);
            x.extend_from_slice(&rec.x);
        }
        Self::from_parts(y, d, x, dim)
    }

    /// Builds a set from columnar parts, applying the same checks as
    /// [`ObservationSet::validate`].
    pub fn from_parts(y: Vec<f64>, d: Vec<bool>, x: Vec<f64>, dim: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if dim == 0 || d.len() != n || x.len() != n * dim {
            return Err(Error::DimensionMismatch {
                row: 0,
                expected: n * dim.max(1),
                found: x.len(),
            });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { field: "y", index: i });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "x",
                index: i / dim,
            });
        }
        let n_treated = d.iter().filter(|&&t| t).count();
        if n_treated == 0 || n_treated == n {
            return Err(Error::DegenerateArm {
                treated: n_treated,
                controls: n - n_treated,
            });
        }
        Ok(Self {
            y,
            d,
            x,
            dim,
            n_treated,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn n_controls(&self) -> usize {
        self.n() - self.n_treated
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[bool] {
        &self.d
    }

    /// Covariates of unit `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.dim)
    }

    /// Covariate `j` across all units.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Linear index `x_i'β` for every unit.
    pub fn index_values(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.dim, "index dimension");
        self.rows()
            .map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Units selected (with repetition) by `indices`, revalidated.
    pub fn resample(&self, indices: &[usize]) -> Result<Self> {
        let mut y = Vec::with_capacity(indices.len());
        let mut d = Vec::with_capacity(indices.len());
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.n() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.n(),
                });
            }
            y.push(self.y[i]);
            d.push(self.d[i]);
            x.extend_from_slice(self.row(i));
        }
        Self::from_parts(y, d, x, self.dim)
    }

    /// Same units with every outcome shifted by `c`.
    pub fn with_shifted_outcomes(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v += c);
        out
    }

    /// Same units with covariates replaced by `f(row)`.
    pub fn map_covariates<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let mapped: Vec<Vec<f64>> = self.rows().map(f).collect();
        let dim = mapped.first().map_or(0, Vec::len);
        if let Some(row) = mapped.iter().position(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                row,
                expected: dim,
                found: mapped[row].len(),
            });
        }
        Self::from_parts(self.y.clone(), self.d.clone(), mapped.concat(), dim)
    }

    /// Expands covariates with all squares and pairwise products, in the
    /// order `x1..xd, x1x2, x1x3, ..., x1², ..., xd²`.
    pub fn quadratic_expansion(&self) -> Result<Self> {
        let dim = self.dim;
        self.map_covariates(|r| {
            let mut out = r.to_vec();
            for i in 0..dim {
                for j in i + 1..dim {
                    out.push(r[i] * r[j]);
                }
            }
            out.extend(r.iter().map(|v| v * v));
            out
        })
    }
}

/// Stable ascending order of a scalar key.
#[derive(Debug, Clone, PartialEq)]
pub struct SortPermutation {
    /// `order[k]` is the original index of the unit ranked `k`.
    pub order: Vec<usize>,
    /// Keys in sorted order.
    pub key: Vec<f64>,
}

impl SortPermutation {
    /// Sorts `key` stably; ties (including `-0.0` vs `0.0`) keep their
    /// input order.
    pub fn sort_by_key(key: &[f64]) -> Result<Self> {
        if let Some(i) = key.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { field: "key", index: i });
        }
        let mut order: Vec<usize> = (0..key.len()).collect();
        order.sort_by(|&a, &b| key[a].partial_cmp(&key[b]).expect("finite keys"));
        let key = order.iter().map(|&i| key[i]).collect();
        Ok(Self { order, key })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            key: (0..n).map(|i| i as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `inverse()[i]` is the sorted rank of original unit `i`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (rank, &i) in self.order.iter().enumerate() {
            inv[i] = rank;
        }
        inv
    }

    /// Gathers `values` (indexed by original unit) into sorted order.
    pub fn apply<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| values[i]).collect()
    }

    /// Scatters `sorted` back to original unit order.
    pub fn unapply<T: Copy + Default>(&self, sorted: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); sorted.len()];
        for (rank, &i) in self.order.iter().enumerate() {
            out[i] = sorted[rank];
        }
        out
    }
}

/// Estimation method behind an [`EffectEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    PavaMle,
    PavaSse,
    /// PAVA on a caller-supplied multivariate index.
    PavaSupplied,
    Para,
    Psm {
        m: usize,
    },
    UnivariatePava,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::PavaMle => f.write_str("PAVA-MLE"),
            Method::PavaSse => f.write_str("PAVA-SSE"),
            Method::PavaSupplied => f.write_str("PAVA-SUPPLIED"),
            Method::Para => f.write_str("PARA"),
            Method::Psm { m } => write!(f, "PSM-{m}"),
            Method::UnivariatePava => f.write_str("UNIVARIATE-PAVA"),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Target {
    Mu1,
    Att,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Number of propensity blocks (matched groups).
    pub blocks: usize,
    pub min_propensity: f64,
    pub max_propensity: f64,
    /// Terms for which the `0/0 := 0` convention was applied.
    pub zero_over_zero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub value: f64,
    pub method: Method,
    pub target: Target,
    pub diagnostics: Diagnostics,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(y: f64, d: f64, x: &[f64]) -> RawRecord {
        RawRecord::new(y, d, x.to_vec())
    }

    #[test]
    fn minimal_valid_set() {
        let set = ObservationSet::validate(&[rec(1.0, 1.0, &[0.5]), rec(2.0, 0.0, &[1.5])]).unwrap();
        assert_eq!((set.n(), set.dim(), set.n_treated()), (2, 1, 1));
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let err = ObservationSet::validate(&[rec(1.0, 2.0, &[0.5])]).unwrap_err();
        assert!(matches!(err, Error::NonBinaryTreatment { row: 0, .. }));
    }

    #[test]
    fn rejects_missing_control_arm() {
        let err = ObservationSet::validate(&[rec(1.0, 1.0, &[0.5]), rec(2.0, 1.0, &[1.5])]).unwrap_err();
        assert_eq!(
            err,
            Error::DegenerateArm {
                treated: 2,
                controls: 0
            }
        );
    }

    #[test]
    fn rejects_ragged_and_non_finite_rows() {
        let ragged = [rec(1.0, 1.0, &[0.5, 1.0]), rec(2.0, 0.0, &[1.5])];
        assert!(matches!(
            ObservationSet::validate(&ragged),
            Err(Error::DimensionMismatch {
                row: 1,
                expected: 2,
                found: 1
            })
        ));
        let nan = [rec(1.0, 1.0, &[0.5]), rec(2.0, 0.0, &[f64::NAN])];
        assert!(matches!(
            ObservationSet::validate(&nan),
            Err(Error::NonFinite { field: "x", index: 1 })
        ));
        let inf = [rec(f64::INFINITY, 1.0, &[0.5]), rec(2.0, 0.0, &[1.0])];
        assert!(matches!(
            ObservationSet::validate(&inf),
            Err(Error::NonFinite { field: "y", .. })
        ));
        assert_eq!(ObservationSet::validate(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn sort_examples() {
        assert_eq!(
            SortPermutation::sort_by_key(&[3.0, 1.0, 2.0]).unwrap().order,
            vec![1, 2, 0]
        );
        assert_eq!(
            SortPermutation::sort_by_key(&[1.0, 1.0, 1.0]).unwrap().order,
            vec![0, 1, 2]
        );
        assert_eq!(
            SortPermutation::sort_by_key(&[2.5, -1.0, 2.5, 0.0]).unwrap().order,
            vec![1, 3, 0, 2]
        );
        assert!(matches!(
            SortPermutation::sort_by_key(&[1.0, f64::NAN]),
            Err(Error::NonFinite { field: "key", index: 1 })
        ));
    }

    #[test]
    fn quadratic_expansion_order() {
        let set = ObservationSet::validate(&[rec(0.0, 1.0, &[2.0, 3.0]), rec(0.0, 0.0, &[1.0, -1.0])]).unwrap();
        let q = set.quadratic_expansion().unwrap();
        assert_eq!(q.dim(), 5);
        assert_eq!(q.row(0), &[2.0, 3.0, 6.0, 4.0, 9.0]);
        assert_eq!(q.row(1), &[1.0, -1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn resample_revalidates() {
        let set = ObservationSet::validate(&[rec(1.0, 1.0, &[0.5]), rec(2.0, 0.0, &[1.5])]).unwrap();
        assert!(matches!(set.resample(&[0, 0]), Err(Error::DegenerateArm { .. })));
        let r = set.resample(&[1, 0, 1]).unwrap();
        assert_eq!(r.y(), &[2.0, 1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn sort_inverse_roundtrip(key in prop::collection::vec(-5i32..5, 1..60)) {
            let key: Vec<f64> = key.into_iter().map(f64::from).collect();
            let perm = SortPermutation::sort_by_key(&key).unwrap();
            prop_assert!(perm.key.windows(2).all(|w| w[0] <= w[1]));
            for w in perm.order.windows(2) {
                if key[w[0]] == key[w[1]] {
                    prop_assert!(w[0] < w[1]);
                }
            }
            prop_assert_eq!(perm.unapply(&perm.key), key.clone());
            let inv = perm.inverse();
            let mut seen = vec![false; key.len()];
            for (i, &r) in inv.iter().enumerate() {
                prop_assert_eq!(perm.order[r], i);
                seen[r] = true;
            }
            prop_assert!(seen.into_iter().all(|s| s));
            let again = SortPermutation::sort_by_key(&perm.key).unwrap();
            prop_assert_eq!(again.order, (0..key.len()).collect::<Vec<_>>());
        }
    }
}
