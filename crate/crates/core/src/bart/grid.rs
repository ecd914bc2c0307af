use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Candidate cutpoints per predictor, sorted ascending. A rule `x ≤ c` is
/// admissible at a node when both children keep at least one row, i.e.
/// `min ≤ c < max` over the node's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CutGrid {
    cuts: Vec<Vec<f64>>,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl CutGrid {
    /// Unique observed values when a predictor has at most `size` of them,
    /// otherwise `size` evenly spaced quantiles.
    pub fn new(x: &DMatrix<f64>, size: usize) -> Result<Self> {
        let cuts: Vec<Vec<f64>> = (0..x.ncols())
            .map(|j| {
                let mut v: Vec<f64> = x.column(j).iter().cloned().collect();
                v.sort_by(f64::total_cmp);
                let max = *v.last().unwrap_or(&0.0);
                let mut uniq = v.clone();
                uniq.dedup();
                let mut c: Vec<f64> = if uniq.len() <= size {
                    uniq
                } else {
                    (1..=size).map(|k| quantile_sorted(&v, k as f64 / (size + 1) as f64)).collect()
                };
                c.dedup();
                c.retain(|&q| q < max);
                c
            })
            .collect();
        if x.nrows() > 1 && cuts.iter().all(|c| c.is_empty()) {
            return Err(Error::invalid("every predictor is constant; no tree can split"));
        }
        Ok(CutGrid { cuts })
    }

    pub fn n_vars(&self) -> usize {
        self.cuts.len()
    }

    pub fn cuts(&self, var: usize) -> &[f64] {
        &self.cuts[var]
    }

    /// Indices of cutpoints `c` with `lo ≤ c < hi`.
    pub fn admissible(&self, var: usize, lo: f64, hi: f64) -> Range<usize> {
        let c = &self.cuts[var];
        let a = c.partition_point(|&v| v < lo);
        let b = c.partition_point(|&v| v < hi);
        a..b.max(a)
    }

    /// Per predictor, the admissible cutpoint range for `rows`; predictors
    /// with no admissible cut are omitted.
    pub fn split_options(&self, x: &DMatrix<f64>, rows: &[usize]) -> Vec<(usize, Range<usize>)> {
        if rows.len() < 2 {
            return Vec::new();
        }
        (0..self.n_vars())
            .filter_map(|v| {
                let col = x.column(v);
                let (lo, hi) = rows
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(col[i]), hi.max(col[i])));
                let r = self.admissible(v, lo, hi);
                (!r.is_empty()).then_some((v, r))
            })
            .collect()
    }

    pub fn can_split(&self, x: &DMatrix<f64>, rows: &[usize]) -> bool {
        !self.split_options(x, rows).is_empty()
    }
}
