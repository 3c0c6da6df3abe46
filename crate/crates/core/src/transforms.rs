//! In-place multiplication by `H^(k)`, its inverse, its transpose and the inverse
//! transpose, without forming any matrix.
//!
//! `H^(k) = L_n * M_1 * ... * M_k` with `M_i = diag(I_i, Delta^(i) L_{n-i})`, so each
//! transform is `k + 1` passes of cumulative sums (or pairwise differences) over a
//! shrinking tail of the vector, interleaved with scaling by the `i`-hop gaps
//! `x_j - x_{j-i}`. Every pass is `O(n)`, giving `O(nk)` total and `O(1)`
//! auxiliary storage.

use std::str::FromStr;

use crate::basis_ref::OracleScalar;
use crate::error::{Error, Result};
use crate::grid::InputGrid;

/// Largest supported order. Products of more gap factors leave the useful
/// range of double precision on irregular grids.
pub const MAX_ORDER: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Summation {
    /// Left-to-right accumulation.
    #[default]
    Plain,
    /// Kahan-compensated accumulation.
    Compensated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// `y <- H y`
    Forward,
    /// `y <- H^{-1} y`
    Inverse,
    /// `y <- H^T y`
    Transpose,
    /// `y <- (H^T)^{-1} y`
    TransposeInverse,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Forward => "h",
            Self::Inverse => "hinv",
            Self::Transpose => "ht",
            Self::TransposeInverse => "htinv",
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            Self::Forward => Self::Inverse,
            Self::Inverse => Self::Forward,
            Self::Transpose => Self::TransposeInverse,
            Self::TransposeInverse => Self::Transpose,
        }
    }
}

impl FromStr for TransformKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(Self::Forward),
            "hinv" => Ok(Self::Inverse),
            "ht" => Ok(Self::Transpose),
            "htinv" => Ok(Self::TransposeInverse),
            other => Err(Error::InvalidConfig(format!("unknown transform `{other}`"))),
        }
    }
}

/// Receives arithmetic operation counts from the transforms.
pub trait OpCounter {
    fn record(&mut self, ops: usize);
}

/// Discards counts.
impl OpCounter for () {
    #[inline(always)]
    fn record(&mut self, _ops: usize) {}
}

/// Total additions, subtractions, multiplications and divisions performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount(pub usize);

impl OpCounter for OpCount {
    fn record(&mut self, ops: usize) {
        self.0 += ops;
    }
}

fn check(y: &[f64], grid: &InputGrid, k: usize) -> Result<()> {
    if k > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: k, max: MAX_ORDER });
    }
    let n = grid.len();
    if y.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: y.len() });
    }
    if n < k + 2 {
        return Err(Error::TooFewPoints { needed: k + 2, got: n });
    }
    Ok(())
}

/// `y <- H^(k) y`.
pub fn apply_h(y: &mut [f64], grid: &InputGrid, k: usize) -> Result<()> {
    apply_with(TransformKind::Forward, y, grid, k, Summation::Plain, &mut ())
}

/// `y <- (H^(k))^{-1} y`.
pub fn apply_h_inverse(y: &mut [f64], grid: &InputGrid, k: usize) -> Result<()> {
    apply_with(TransformKind::Inverse, y, grid, k, Summation::Plain, &mut ())
}

/// `y <- (H^(k))^T y`.
pub fn apply_h_transpose(y: &mut [f64], grid: &InputGrid, k: usize) -> Result<()> {
    apply_with(TransformKind::Transpose, y, grid, k, Summation::Plain, &mut ())
}

/// `y <- ((H^(k))^T)^{-1} y`.
pub fn apply_h_transpose_inverse(y: &mut [f64], grid: &InputGrid, k: usize) -> Result<()> {
    apply_with(TransformKind::TransposeInverse, y, grid, k, Summation::Plain, &mut ())
}

pub fn apply(kind: TransformKind, y: &mut [f64], grid: &InputGrid, k: usize) -> Result<()> {
    apply_with(kind, y, grid, k, Summation::Plain, &mut ())
}

/// Runs one transform with an explicit summation mode, reporting operation counts to `counter`.
pub fn apply_with<C: OpCounter>(
    kind: TransformKind,
    y: &mut [f64],
    grid: &InputGrid,
    k: usize,
    summation: Summation,
    counter: &mut C,
) -> Result<()> {
    check(y, grid, k)?;
    let x = grid.points();
    match kind {
        TransformKind::Forward => forward(y, x, k, summation, counter),
        TransformKind::Inverse => inverse(y, x, k, counter),
        TransformKind::Transpose => transpose(y, x, k, summation, counter),
        TransformKind::TransposeInverse => transpose_inverse(y, x, k, counter),
    }
    Ok(())
}

/// The same transforms in another scalar type, for extended-precision checks.
/// Gaps are formed in `T` from the `f64` grid points.
pub fn apply_in<T: OracleScalar>(kind: TransformKind, y: &mut [T], grid: &InputGrid, k: usize) -> Result<()> {
    if k > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: k, max: MAX_ORDER });
    }
    let n = grid.len();
    if y.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: y.len() });
    }
    if n < k + 2 {
        return Err(Error::TooFewPoints { needed: k + 2, got: n });
    }
    let x: Vec<T> = grid.points().iter().map(|&v| T::from_f64(v)).collect();
    let gap = |j: usize, hop: usize| x[j] - x[j - hop];
    let cumsum = |v: &mut [T]| (1..v.len()).for_each(|j| v[j] = v[j] + v[j - 1]);
    let rcumsum = |v: &mut [T]| (0..v.len().saturating_sub(1)).rev().for_each(|j| v[j] = v[j] + v[j + 1]);
    let diff = |v: &mut [T]| (1..v.len()).rev().for_each(|j| v[j] = v[j] - v[j - 1]);
    let rdiff = |v: &mut [T]| (0..v.len().saturating_sub(1)).for_each(|j| v[j] = v[j] - v[j + 1]);
    match kind {
        TransformKind::Forward => {
            for i in (0..=k).rev() {
                cumsum(&mut y[i..]);
                (i.max(1)..n).filter(|_| i != 0).for_each(|j| y[j] = y[j] * gap(j, i));
            }
        }
        TransformKind::Inverse => {
            for i in 0..=k {
                (i.max(1)..n).filter(|_| i != 0).for_each(|j| y[j] = y[j] / gap(j, i));
                diff(&mut y[i..]);
            }
        }
        TransformKind::Transpose => {
            for i in 0..=k {
                (i.max(1)..n).filter(|_| i != 0).for_each(|j| y[j] = y[j] * gap(j, i));
                rcumsum(&mut y[i..]);
            }
        }
        TransformKind::TransposeInverse => {
            for i in (0..=k).rev() {
                rdiff(&mut y[i..]);
                (i.max(1)..n).filter(|_| i != 0).for_each(|j| y[j] = y[j] / gap(j, i));
            }
        }
    }
    Ok(())
}

fn forward<C: OpCounter>(y: &mut [f64], x: &[f64], k: usize, summation: Summation, counter: &mut C) {
    for i in (0..=k).rev() {
        cumsum(&mut y[i..], summation, counter);
        if i != 0 {
            scale_by_gaps(y, x, i, counter);
        }
    }
}

fn inverse<C: OpCounter>(y: &mut [f64], x: &[f64], k: usize, counter: &mut C) {
    for i in 0..=k {
        if i != 0 {
            divide_by_gaps(y, x, i, counter);
        }
        diff(&mut y[i..], counter);
    }
}

fn transpose<C: OpCounter>(y: &mut [f64], x: &[f64], k: usize, summation: Summation, counter: &mut C) {
    for i in 0..=k {
        // M_i^T = diag(I, L^T Delta^(i)): scale first, then reverse cumulative sum.
        if i != 0 {
            scale_by_gaps(y, x, i, counter);
        }
        reverse_cumsum(&mut y[i..], summation, counter);
    }
}

fn transpose_inverse<C: OpCounter>(y: &mut [f64], x: &[f64], k: usize, counter: &mut C) {
    for i in (0..=k).rev() {
        reverse_diff(&mut y[i..], counter);
        if i != 0 {
            divide_by_gaps(y, x, i, counter);
        }
    }
}

#[inline]
fn scale_by_gaps<C: OpCounter>(y: &mut [f64], x: &[f64], hop: usize, counter: &mut C) {
    for j in hop..y.len() {
        y[j] *= x[j] - x[j - hop];
    }
    counter.record(2 * (y.len() - hop));
}

#[inline]
fn divide_by_gaps<C: OpCounter>(y: &mut [f64], x: &[f64], hop: usize, counter: &mut C) {
    for j in hop..y.len() {
        y[j] /= x[j] - x[j - hop];
    }
    counter.record(2 * (y.len() - hop));
}

fn cumsum<C: OpCounter>(v: &mut [f64], summation: Summation, counter: &mut C) {
    match summation {
        Summation::Plain => {
            for j in 1..v.len() {
                v[j] += v[j - 1];
            }
            counter.record(v.len().saturating_sub(1));
        }
        Summation::Compensated => {
            let mut sum = 0.0;
            let mut comp = 0.0;
            for value in v.iter_mut() {
                kahan_add(&mut sum, &mut comp, *value);
                *value = sum;
            }
            counter.record(4 * v.len());
        }
    }
}

fn reverse_cumsum<C: OpCounter>(v: &mut [f64], summation: Summation, counter: &mut C) {
    match summation {
        Summation::Plain => {
            for j in (0..v.len().saturating_sub(1)).rev() {
                v[j] += v[j + 1];
            }
            counter.record(v.len().saturating_sub(1));
        }
        Summation::Compensated => {
            let mut sum = 0.0;
            let mut comp = 0.0;
            for value in v.iter_mut().rev() {
                kahan_add(&mut sum, &mut comp, *value);
                *value = sum;
            }
            counter.record(4 * v.len());
        }
    }
}

#[inline]
fn kahan_add(sum: &mut f64, comp: &mut f64, value: f64) {
    let t = value - *comp;
    let s = *sum + t;
    *comp = (s - *sum) - t;
    *sum = s;
}

/// `v[1..] <- diff(v)`, leaving `v[0]` unchanged.
fn diff<C: OpCounter>(v: &mut [f64], counter: &mut C) {
    for j in (1..v.len()).rev() {
        v[j] -= v[j - 1];
    }
    counter.record(v.len().saturating_sub(1));
}

/// `v[..n-1] <- flip(diff(flip(v)))`, leaving the last entry unchanged.
fn reverse_diff<C: OpCounter>(v: &mut [f64], counter: &mut C) {
    for j in 0..v.len().saturating_sub(1) {
        v[j] -= v[j + 1];
    }
    counter.record(v.len().saturating_sub(1));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis_ref::{dense_falling_factorial, DenseMatrix};
    use crate::grid::TiePolicy;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid(v: &[f64]) -> InputGrid {
        InputGrid::from_values(v, TiePolicy::Reject).unwrap()
    }

    fn run(kind: TransformKind, y: &[f64], g: &InputGrid, k: usize) -> Vec<f64> {
        let mut v = y.to_vec();
        apply(kind, &mut v, g, k).unwrap();
        v
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
        num / den.max(f64::MIN_POSITIVE)
    }

    #[test]
    fn order_zero_is_cumulative_sum() {
        let g = grid(&[0.5, 2.0, 7.0]);
        assert_eq!(run(TransformKind::Forward, &[1.0, 2.0, 3.0], &g, 0), vec![1.0, 3.0, 6.0]);
        assert_eq!(run(TransformKind::Inverse, &[1.0, 3.0, 6.0], &g, 0), vec![1.0, 2.0, 3.0]);
        assert_eq!(run(TransformKind::Transpose, &[1.0, 2.0, 3.0], &g, 0), vec![6.0, 5.0, 3.0]);
        assert_eq!(run(TransformKind::TransposeInverse, &[6.0, 5.0, 3.0], &g, 0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn order_one_small_grid() {
        let g = grid(&[1.0, 2.0, 3.0]);
        assert_eq!(run(TransformKind::Forward, &[1.0, 1.0, 1.0], &g, 1), vec![1.0, 2.0, 4.0]);
        assert_eq!(run(TransformKind::Inverse, &[1.0, 2.0, 4.0], &g, 1), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn unit_vector_maps_to_ones() {
        let g = grid(&[0.0, 0.1, 0.25, 0.3, 0.7, 0.71, 0.9, 1.0]);
        for k in 0..=6 {
            let mut e1 = vec![0.0; 8];
            e1[0] = 1.0;
            assert_eq!(run(TransformKind::Forward, &e1, &g, k), vec![1.0; 8]);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let g = grid(&[0.0, 0.2, 0.5, 0.6, 1.0]);
        for kind in [TransformKind::Forward, TransformKind::Inverse, TransformKind::Transpose, TransformKind::TransposeInverse] {
            assert_eq!(run(kind, &[0.0; 5], &g, 2), vec![0.0; 5]);
        }
    }

    #[test]
    fn errors() {
        let g = grid(&[0.0, 1.0, 2.0]);
        let mut y = vec![0.0; 4];
        assert_eq!(apply_h(&mut y, &g, 0), Err(Error::LengthMismatch { expected: 3, got: 4 }));
        let mut y = vec![0.0; 3];
        assert_eq!(apply_h(&mut y, &g, 2), Err(Error::TooFewPoints { needed: 4, got: 3 }));
        let g = grid(&(0..20).map(f64::from).collect::<Vec<_>>());
        let mut y = vec![0.0; 20];
        assert!(matches!(apply_h(&mut y, &g, 13), Err(Error::OrderTooLarge { .. })));
    }

    #[test]
    fn matches_dense_product_f64() {
        let mut rng = crate::rng::stream_rng(21, 0);
        for k in 0..=4 {
            let pts: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
            let g = grid(&pts);
            let h = dense_falling_factorial::<f64>(&g, k).unwrap().entries;
            let ht: DenseMatrix = h.transpose();
            let y: Vec<f64> = (0..30).map(|_| rng.random::<f64>() - 0.5).collect();
            assert!(rel_err(&run(TransformKind::Forward, &y, &g, k), &h.matvec(&y)) < 1e-12);
            assert!(rel_err(&run(TransformKind::Transpose, &y, &g, k), &ht.matvec(&y)) < 1e-12);
        }
    }

    #[test]
    fn transpose_scales_by_gaps_not_reciprocals() {
        // Dense oracle for n = 4, k = 1 on an uneven grid.
        let g = grid(&[0.0, 1.0, 3.0, 7.0]);
        let h = dense_falling_factorial::<f64>(&g, 1).unwrap().entries;
        let y = [1.0, 1.0, 1.0, 1.0];
        let expected = h.transpose().matvec(&y);
        assert_eq!(run(TransformKind::Transpose, &y, &g, 1), expected);
        assert_eq!(expected, vec![4.0, 11.0, 8.0, 4.0]);
    }

    #[test]
    fn op_counts_are_linear() {
        for &n in &[100usize, 1000, 10000] {
            let g = grid(&(0..n).map(|i| i as f64 / n as f64).collect::<Vec<_>>());
            for k in [0usize, 3, 5] {
                for kind in [TransformKind::Forward, TransformKind::Inverse, TransformKind::Transpose, TransformKind::TransposeInverse] {
                    let mut y = vec![1.0; n];
                    let mut count = OpCount::default();
                    apply_with(kind, &mut y, &g, k, Summation::Plain, &mut count).unwrap();
                    assert!(count.0 <= 3 * n * (k + 1), "{kind:?} n={n} k={k} ops={}", count.0);
                    assert!(count.0 >= n * (k + 1) / 2);
                }
            }
        }
    }

    #[test]
    fn compensated_summation_agrees() {
        let mut rng = crate::rng::stream_rng(4, 0);
        let pts: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let g = grid(&pts);
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        for kind in [TransformKind::Forward, TransformKind::Transpose] {
            let plain = run(kind, &y, &g, 3);
            let mut comp = y.clone();
            apply_with(kind, &mut comp, &g, 3, Summation::Compensated, &mut ()).unwrap();
            assert!(rel_err(&comp, &plain) < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn roundtrips(
            raw in prop::collection::vec(0.0f64..1.0, 8..32),
            k in 0usize..=4,
            seed in any::<u64>(),
        ) {
            // Roundtrip error grows like eps * kappa(H) ~ eps * n^(k+1) from the f64
            // intermediate alone, so keep n small and gap ratios bounded.
            let n = raw.len();
            let g = grid(&(0..n).map(|i| (i as f64 + 0.5 * raw[i]) / n as f64).collect::<Vec<_>>());
            let mut rng = crate::rng::stream_rng(seed, 0);
            let y: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>() - 0.5).collect();
            for kind in [TransformKind::Forward, TransformKind::Inverse, TransformKind::Transpose, TransformKind::TransposeInverse] {
                let back = run(kind.inverse(), &run(kind, &y, &g, k), &g, k);
                prop_assert!(rel_err(&back, &y) < 1e-9, "{:?} k={}", kind, k);
            }
        }
    }

    #[test]
    fn extended_precision_path_matches_f64() {
        let mut rng = crate::rng::stream_rng(91, 0);
        let x: Vec<f64> = (0..40).map(|i| (i as f64 + rng.random::<f64>()) / 40.0).collect();
        let grid = InputGrid::from_sorted(x).unwrap();
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>() - 0.5).collect();
        for kind in [TransformKind::Forward, TransformKind::Inverse, TransformKind::Transpose, TransformKind::TransposeInverse] {
            for k in 0..=3 {
                let mut a = y.clone();
                apply(kind, &mut a, &grid, k).unwrap();
                let mut b: Vec<twofloat::TwoFloat> = y.iter().map(|&v| v.into()).collect();
                apply_in(kind, &mut b, &grid, k).unwrap();
                let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - f64::from(*v)).abs() <= 1e-10 * scale, "{kind:?} k={k}");
                }
            }
        }
    }
}
