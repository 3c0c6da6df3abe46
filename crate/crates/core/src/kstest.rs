//! Higher-order two-sample Kolmogorov-Smirnov statistics.
//!
//! With `Z` the sorted join of `X` (size `m`) and `Y` (size `n`) and
//! `v = 1_X / m - 1_Y / n`, the order-`k` statistics are
//! `||G_2^T v||_inf` (truncated power basis, dense) and `||H_2^T v||_inf`
//! (falling factorial basis, one transpose transform), where the subscript 2
//! drops the first `k + 1` columns. At `k = 0` both are the classic statistic.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis_ref::{dense_truncated_power, DenseMatrix};
use crate::error::{Error, Result};
use crate::grid::{InputGrid, TiePolicy};
use crate::rng::stream_rng;
use crate::transforms::apply_h_transpose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum StatMethod {
    /// Falling factorial basis, linear time.
    #[default]
    #[serde(alias = "h")]
    H,
    /// Truncated power basis, dense reference.
    #[serde(alias = "g")]
    G,
}

impl fmt::Display for StatMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::H => "H",
            Self::G => "G",
        })
    }
}

impl FromStr for StatMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" | "h" => Ok(Self::H),
            "G" | "g" => Ok(Self::G),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}, expected H or G"))),
        }
    }
}

/// Sorted join of two samples with membership flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSample {
    grid: InputGrid,
    x_indicator: Vec<bool>,
    m: usize,
    n: usize,
}

impl TwoSample {
    pub fn z(&self) -> &[f64] {
        self.grid.points()
    }

    pub fn grid(&self) -> &InputGrid {
        &self.grid
    }

    pub fn x_indicator(&self) -> &[bool] {
        &self.x_indicator
    }

    pub fn y_indicator(&self) -> Vec<bool> {
        self.x_indicator.iter().map(|b| !b).collect()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.m + self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same joined values with a different labelling holding `m` X-flags.
    fn relabelled(&self, x_indicator: Vec<bool>) -> Self {
        Self { grid: self.grid.clone(), x_indicator, m: self.m, n: self.n }
    }

    /// `1_X / m - 1_Y / n`.
    pub fn signed_indicator(&self) -> Vec<f64> {
        signed(&self.x_indicator, self.m, self.n)
    }

    /// The join mapped affinely onto `[0, 1]`, labels unchanged.
    pub fn rescaled(&self) -> Result<Self> {
        Ok(Self { grid: self.grid.rescale_unit()?, ..self.clone() })
    }
}

fn signed(x_indicator: &[bool], m: usize, n: usize) -> Vec<f64> {
    let (a, b) = (1.0 / m as f64, -1.0 / n as f64);
    x_indicator.iter().map(|&is_x| if is_x { a } else { b }).collect()
}

const JITTER_ATTEMPTS: u64 = 16;

/// Sorts `X ∪ Y` and records which entries came from `X`.
///
/// Under [`TiePolicy::Jitter`], every value occurring more than once in the
/// join is moved by a seeded uniform offset in `[-eps, eps]`.
pub fn join_samples(x: &[f64], y: &[f64], policy: TiePolicy) -> Result<TwoSample> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty);
    }
    let original: Vec<f64> = x.iter().chain(y).copied().collect();
    if let Some(i) = original.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut values = original.clone();
    let mut attempt = 0;
    let order = loop {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let tie = order.windows(2).find(|w| values[w[0]] == values[w[1]]).map(|w| values[w[0]]);
        let Some(tied) = tie else { break order };
        match policy {
            TiePolicy::Reject => return Err(Error::TiesPresent { value: tied }),
            TiePolicy::Jitter { eps, seed } => {
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(Error::InvalidConfig(format!("jitter eps must be positive, got {eps}")));
                }
                if attempt == JITTER_ATTEMPTS {
                    return Err(Error::TiesPresent { value: tied });
                }
                let mut sorted = original.clone();
                sorted.sort_by(f64::total_cmp);
                let is_tied = |v: f64| {
                    let lo = sorted.partition_point(|&s| s < v);
                    sorted.get(lo + 1) == Some(&v)
                };
                let mut rng = stream_rng(seed, attempt);
                values.copy_from_slice(&original);
                for v in values.iter_mut() {
                    if is_tied(*v) {
                        *v += eps * (2.0 * rng.random::<f64>() - 1.0);
                    }
                }
                attempt += 1;
            }
        }
    };
    let z: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let x_indicator = order.iter().map(|&i| i < x.len()).collect();
    Ok(TwoSample { grid: InputGrid::from_sorted(z)?, x_indicator, m: x.len(), n: y.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub order: usize,
    pub method: StatMethod,
    pub pvalue: Option<f64>,
    pub permutations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsOptions {
    /// Map the join onto `[0, 1]` before computing statistics of order `k >= 1`.
    pub rescale: bool,
}

impl Default for KsOptions {
    fn default() -> Self {
        Self { rescale: true }
    }
}

fn check(s: &TwoSample, k: usize) -> Result<()> {
    if s.len() < k + 2 {
        return Err(Error::TooFewPoints { needed: k + 2, got: s.len() });
    }
    Ok(())
}

fn working_grid(s: &TwoSample, k: usize, opts: KsOptions) -> Result<InputGrid> {
    if opts.rescale && k >= 1 {
        s.grid.rescale_unit()
    } else {
        Ok(s.grid.clone())
    }
}

fn h_statistic(v: &mut [f64], grid: &InputGrid, k: usize) -> Result<f64> {
    apply_h_transpose(v, grid, k)?;
    Ok(v[k + 1..].iter().fold(0.0f64, |acc, a| acc.max(a.abs())))
}

fn g_statistic(v: &[f64], g: &DenseMatrix<f64>, k: usize) -> f64 {
    let n = v.len();
    let mut out = vec![0.0; n];
    for (i, vi) in v.iter().enumerate() {
        if *vi != 0.0 {
            let row = g.row(i);
            for j in k + 1..n {
                out[j] += row[j] * vi;
            }
        }
    }
    out[k + 1..].iter().fold(0.0f64, |acc, a| acc.max(a.abs()))
}

/// `||H_2^T v||_inf` in `O(k (m + n))`.
pub fn ks_statistic_h(s: &TwoSample, k: usize) -> Result<KsResult> {
    ks_statistic_h_with(s, k, KsOptions::default())
}

pub fn ks_statistic_h_with(s: &TwoSample, k: usize, opts: KsOptions) -> Result<KsResult> {
    check(s, k)?;
    let grid = working_grid(s, k, opts)?;
    let statistic = h_statistic(&mut s.signed_indicator(), &grid, k)?;
    Ok(KsResult { statistic, order: k, method: StatMethod::H, pvalue: None, permutations: None })
}

/// `||G_2^T v||_inf` through the dense truncated power matrix; `m + n` is capped
/// at [`crate::basis_ref::DENSE_CAP`].
pub fn ks_statistic_g(s: &TwoSample, k: usize) -> Result<KsResult> {
    ks_statistic_g_with(s, k, KsOptions::default())
}

pub fn ks_statistic_g_with(s: &TwoSample, k: usize, opts: KsOptions) -> Result<KsResult> {
    check(s, k)?;
    let grid = working_grid(s, k, opts)?;
    let g = dense_truncated_power::<f64>(&grid, k)?.entries;
    let statistic = g_statistic(&s.signed_indicator(), &g, k);
    Ok(KsResult { statistic, order: k, method: StatMethod::G, pvalue: None, permutations: None })
}

pub fn ks_statistic(s: &TwoSample, k: usize, method: StatMethod, opts: KsOptions) -> Result<KsResult> {
    match method {
        StatMethod::H => ks_statistic_h_with(s, k, opts),
        StatMethod::G => ks_statistic_g_with(s, k, opts),
    }
}

/// Permutation p-value `(1 + #{b : T_b >= T_obs}) / (B + 1)`.
///
/// Replicate `b` shuffles the labels with the stream `(seed, b)`, so the result
/// depends only on the inputs and `seed`. Replicates run on the rayon pool
/// current at the call (see [`crate::parallel::install`]).
pub fn permutation_pvalue(
    s: &TwoSample,
    k: usize,
    method: StatMethod,
    permutations: usize,
    seed: u64,
    opts: KsOptions,
) -> Result<KsResult> {
    if permutations == 0 {
        return Err(Error::InvalidConfig("at least one permutation is required".into()));
    }
    check(s, k)?;
    let grid = working_grid(s, k, opts)?;
    let dense = match method {
        StatMethod::G => Some(dense_truncated_power::<f64>(&grid, k)?.entries),
        StatMethod::H => None,
    };
    let stat = |labels: &[bool]| -> Result<f64> {
        let mut v = signed(labels, s.m, s.n);
        match &dense {
            Some(g) => Ok(g_statistic(&v, g, k)),
            None => h_statistic(&mut v, &grid, k),
        }
    };
    let observed = stat(&s.x_indicator)?;
    let exceed: Vec<bool> = (0..permutations as u64)
        .into_par_iter()
        .map(|b| {
            let mut labels = s.x_indicator.clone();
            labels.shuffle(&mut stream_rng(seed, b));
            Ok(stat(&labels)? >= observed)
        })
        .collect::<Result<_>>()?;
    let count = exceed.iter().filter(|&&e| e).count();
    Ok(KsResult {
        statistic: observed,
        order: k,
        method,
        pvalue: Some((1 + count) as f64 / (permutations + 1) as f64),
        permutations: Some(permutations),
    })
}

/// A random relabelling of `s` preserving group sizes, drawn from the stream `(seed, stream)`.
pub fn permuted(s: &TwoSample, seed: u64, stream: u64) -> TwoSample {
    let mut labels = s.x_indicator.clone();
    labels.shuffle(&mut stream_rng(seed, stream));
    s.relabelled(labels)
}
