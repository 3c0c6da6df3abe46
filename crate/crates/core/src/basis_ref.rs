//! Dense reference constructions of the truncated power and falling factorial
//! basis matrices and of the falling factorial inverse.
//!
//! These exist to check the fast transforms and the banded difference
//! operators. They cost `O(n^2)` memory and are capped at [`DENSE_CAP`] points.
//!
//! Everything here is generic over [`OracleScalar`], so the same construction can
//! be evaluated in `f64` or in double-double arithmetic ([`twofloat::TwoFloat`]).
//! The high-order falling factorial matrices are ill-conditioned enough
//! (condition numbers past `1e15` at `n = 512`, `k = 5`) that an `f64` oracle
//! cannot resolve errors at the `1e-8` level. The double-double oracle can.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::grid::InputGrid;

/// Largest grid accepted by the dense constructions.
pub const DENSE_CAP: usize = 4096;

/// Field operations needed by the dense oracles.
pub trait OracleScalar:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs_val(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl OracleScalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs_val(self) -> Self {
        self.abs()
    }
}

impl OracleScalar for TwoFloat {
    fn from_f64(v: f64) -> Self {
        TwoFloat::from(v)
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn abs_val(self) -> Self {
        self.abs()
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: OracleScalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == T::zero() {
                    continue;
                }
                let src = other.row(l);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "vector length differs from column count");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    /// Stacks `self` above `below`.
    pub fn vstack(&self, below: &Self) -> Self {
        assert_eq!(self.cols, below.cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&below.data);
        Self { rows: self.rows + below.rows, cols: self.cols, data }
    }

    /// `max_ij |A_ij - I_ij|`.
    pub fn max_identity_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((self[(i, j)] - target).abs_val().to_f64());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs_val().to_f64()))
    }

    pub fn to_f64(&self) -> DenseMatrix<f64> {
        DenseMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v.to_f64()).collect() }
    }

    /// Solves `self * z = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        DenseLu::factor(self)?.solve(b)
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factors with row pivoting, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct DenseLu<T = f64> {
    lu: DenseMatrix<T>,
    perm: Vec<usize>,
}

impl<T: OracleScalar> DenseLu<T> {
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::DimensionMismatch(format!("LU needs a square matrix, got {}x{}", a.rows, a.cols)));
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&r, &s| lu[(r, c)].abs_val().partial_cmp(&lu[(s, c)].abs_val()).unwrap())
                .unwrap();
            if lu[(p, c)] == T::zero() {
                return Err(Error::DimensionMismatch("singular matrix".into()));
            }
            if p != c {
                for j in 0..n {
                    lu.data.swap(p * n + j, c * n + j);
                }
                perm.swap(p, c);
            }
            let pivot = lu[(c, c)];
            let (upper, lower) = lu.data.split_at_mut((c + 1) * n);
            let pivot_row = &upper[c * n..];
            for r in lower.chunks_exact_mut(n) {
                let f = r[c] / pivot;
                r[c] = f;
                if f != T::zero() {
                    for (x, &u) in r[c + 1..].iter_mut().zip(&pivot_row[c + 1..]) {
                        *x = *x - f * u;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let mut z: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        self.solve_permuted_in_place(&mut z)?;
        Ok(z)
    }

    /// Solves in place; `z` must hold `P b` on entry.
    fn solve_permuted_in_place(&self, z: &mut [T]) -> Result<()> {
        let n = self.lu.rows;
        if z.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: z.len() });
        }
        for i in 0..n {
            let row = self.lu.row(i);
            let s = row[..i].iter().zip(&z[..i]).fold(T::zero(), |acc, (&l, &v)| acc + l * v);
            z[i] = z[i] - s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s = row[i + 1..].iter().zip(&z[i + 1..]).fold(T::zero(), |acc, (&u, &v)| acc + u * v);
            z[i] = (z[i] - s) / row[i];
        }
        Ok(())
    }

    /// Solves `A z = b` overwriting `b`, using `scratch` for the permutation.
    pub fn solve_in_place(&self, b: &mut [T], scratch: &mut Vec<T>) -> Result<()> {
        scratch.clear();
        scratch.extend(self.perm.iter().map(|&p| b[p]));
        self.solve_permuted_in_place(scratch)?;
        b.copy_from_slice(scratch);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    TruncatedPower,
    FallingFactorial,
}

/// `n x n` evaluation matrix of one of the two bases at the grid points.
#[derive(Debug, Clone)]
pub struct DenseBasis<T = f64> {
    pub kind: BasisKind,
    pub order: usize,
    pub entries: DenseMatrix<T>,
}

/// Interior knots used by the truncated power basis.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet {
    pub knots: Vec<f64>,
}

/// The two blocks of the falling factorial inverse: `C` on top of `D^(k+1) / k!`.
#[derive(Debug, Clone)]
pub struct InverseBlocks<T = f64> {
    pub c_block: DenseMatrix<T>,
    pub diff_block: DenseMatrix<T>,
}

impl<T: OracleScalar> InverseBlocks<T> {
    pub fn stacked(&self) -> DenseMatrix<T> {
        self.c_block.vstack(&self.diff_block)
    }
}

fn check_size(grid: &InputGrid, k: usize) -> Result<usize> {
    let n = grid.len();
    if n < k + 2 {
        return Err(Error::TooFewPoints { needed: k + 2, got: n });
    }
    if n > DENSE_CAP {
        return Err(Error::SizeCap { cap: DENSE_CAP, got: n });
    }
    Ok(n)
}

/// Knots `x_{k/2+2}..x_{n-k/2}` (even `k`) or `x_{(k+1)/2+1}..x_{n-(k+1)/2}` (odd `k`),
/// in one-based indexing. Always `n - k - 1` of them.
pub fn knots(grid: &InputGrid, k: usize) -> Result<KnotSet> {
    let n = grid.len();
    if n < k + 2 {
        return Err(Error::TooFewPoints { needed: k + 2, got: n });
    }
    let start = if k % 2 == 0 { k / 2 + 1 } else { (k + 1) / 2 };
    let knots = grid.points()[start..start + n - k - 1].to_vec();
    Ok(KnotSet { knots })
}

/// `H_ij = h_j(x_i)`, with `h_j(x) = prod_{l<j} (x - x_l)` for the first `k + 1`
/// columns and `h_{k+1+j}(x) = prod_{l=1..k} (x - x_{j+l}) * 1{x > x_{j+k}}` after.
///
/// The indicator is strict. For `k >= 1` that is the same function as with `>=`
/// (the product vanishes at `x_{j+k}`), and for `k = 0` it yields `H = L_n`.
pub fn dense_falling_factorial<T: OracleScalar>(grid: &InputGrid, k: usize) -> Result<DenseBasis<T>> {
    let n = check_size(grid, k)?;
    let x = grid.points();
    let entries = DenseMatrix::from_fn(n, n, |i, j| {
        let xi = T::from_f64(x[i]);
        if j <= k {
            (0..j).fold(T::one(), |acc, l| acc * (xi - T::from_f64(x[l])))
        } else if i >= j {
            // one-based column k+1+jj, jj = j - k; factors x_{jj+1..jj+k} (one-based)
            let jj = j - k;
            (jj..jj + k).fold(T::one(), |acc, l| acc * (xi - T::from_f64(x[l])))
        } else {
            T::zero()
        }
    });
    Ok(DenseBasis { kind: BasisKind::FallingFactorial, order: k, entries })
}

/// `G_ij = g_j(x_i)`: monomials `1, x, .., x^k`, then `(x - t_j)^k * 1{x >= t_j}`.
pub fn dense_truncated_power<T: OracleScalar>(grid: &InputGrid, k: usize) -> Result<DenseBasis<T>> {
    let n = check_size(grid, k)?;
    let x = grid.points();
    let t = knots(grid, k)?.knots;
    let pow = |v: T, e: usize| (0..e).fold(T::one(), |acc, _| acc * v);
    let entries = DenseMatrix::from_fn(n, n, |i, j| {
        let xi = T::from_f64(x[i]);
        if j <= k {
            pow(xi, j)
        } else {
            let tj = t[j - k - 1];
            if x[i] >= tj {
                pow(xi - T::from_f64(tj), k)
            } else {
                T::zero()
            }
        }
    });
    Ok(DenseBasis { kind: BasisKind::TruncatedPower, order: k, entries })
}

/// `H^(k)` built as the explicit product `L_n * M_1 * ... * M_k` with
/// `M_i = diag(I_i, Delta^(i) L_{n-i})`.
pub fn dense_falling_factorial_recursive<T: OracleScalar>(grid: &InputGrid, k: usize) -> Result<DenseBasis<T>> {
    let n = check_size(grid, k)?;
    let x = grid.points();
    let mut h = DenseMatrix::from_fn(n, n, |i, j| if i >= j { T::one() } else { T::zero() });
    for i in 1..=k {
        let m = DenseMatrix::from_fn(n, n, |r, c| {
            if r < i || c < i {
                if r == c {
                    T::one()
                } else {
                    T::zero()
                }
            } else if r >= c {
                T::from_f64(x[r]) - T::from_f64(x[r - i])
            } else {
                T::zero()
            }
        });
        h = h.matmul(&m);
    }
    Ok(DenseBasis { kind: BasisKind::FallingFactorial, order: k, entries: h })
}

/// Dense `D^(m)`, `(n - m) x n`, from `D^(1)` and
/// `D^(j+1) = D^(1) * j * (Delta^(j))^{-1} * D^(j)` applied as whole-row operations.
pub fn dense_diff_op<T: OracleScalar>(grid: &InputGrid, m: usize) -> Result<DenseMatrix<T>> {
    let n = grid.len();
    if m == 0 || n < m + 1 {
        return Err(Error::TooFewPoints { needed: m + 1, got: n });
    }
    if n > DENSE_CAP {
        return Err(Error::SizeCap { cap: DENSE_CAP, got: n });
    }
    let x = grid.points();
    let mut d = DenseMatrix::from_fn(n - 1, n, |i, j| {
        if j == i {
            -T::one()
        } else if j == i + 1 {
            T::one()
        } else {
            T::zero()
        }
    });
    for j in 1..m {
        let scaled = DenseMatrix::from_fn(n - j, n, |r, c| {
            let gap = T::from_f64(x[r + j]) - T::from_f64(x[r]);
            T::from_f64(j as f64) * d[(r, c)] / gap
        });
        d = DenseMatrix::from_fn(n - j - 1, n, |r, c| scaled[(r + 1, c)] - scaled[(r, c)]);
    }
    Ok(d)
}

/// `C` (first row `e_1`, row `i+1` the first row of `(Delta^(i))^{-1} D^(i) / (i-1)!`)
/// and `D^(k+1) / k!`.
pub fn dense_h_inverse_blocks<T: OracleScalar>(grid: &InputGrid, k: usize) -> Result<InverseBlocks<T>> {
    let n = check_size(grid, k)?;
    let x = grid.points();
    let mut c_block = DenseMatrix::zeros(k + 1, n);
    c_block[(0, 0)] = T::one();
    let mut factorial = T::one();
    for i in 1..=k {
        if i > 1 {
            factorial = factorial * T::from_f64((i - 1) as f64);
        }
        let d = dense_diff_op::<T>(grid, i)?;
        let gap = T::from_f64(x[i]) - T::from_f64(x[0]);
        for c in 0..n {
            c_block[(i, c)] = d[(0, c)] / gap / factorial;
        }
    }
    let k_factorial = (1..=k).fold(T::one(), |acc, v| acc * T::from_f64(v as f64));
    let d = dense_diff_op::<T>(grid, k + 1)?;
    let diff_block = DenseMatrix::from_fn(d.rows(), n, |r, c| d[(r, c)] / k_factorial);
    Ok(InverseBlocks { c_block, diff_block })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TiePolicy;
    use rand::Rng;

    fn grid(v: &[f64]) -> InputGrid {
        InputGrid::from_values(v, TiePolicy::Reject).unwrap()
    }

    fn random_unit_grid(rng: &mut impl Rng, n: usize) -> InputGrid {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        InputGrid::from_values(&v, TiePolicy::Reject).unwrap()
    }

    #[test]
    fn knot_examples() {
        let g = grid(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(knots(&g, 0).unwrap().knots, vec![2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(knots(&g, 1).unwrap().knots, vec![2.0, 3.0, 4.0, 5.0]);
        assert_eq!(knots(&g, 2).unwrap().knots, vec![3.0, 4.0, 5.0]);
        assert_eq!(knots(&g, 3).unwrap().knots, vec![3.0, 4.0]);
        let g = grid(&[1.0, 2.0, 3.0]);
        assert_eq!(knots(&g, 2), Err(Error::TooFewPoints { needed: 4, got: 3 }));
    }

    #[test]
    fn falling_factorial_examples() {
        let h = dense_falling_factorial::<f64>(&grid(&[1.0, 2.0, 3.0]), 1).unwrap().entries;
        let expected = DenseMatrix::from_fn(3, 3, |i, j| [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 2.0, 1.0]][i][j]);
        assert_eq!(h, expected);

        // h_3 for k = 1 is (x - x_2) 1{x > x_2}
        let h = dense_falling_factorial::<f64>(&grid(&[1.0, 2.0, 3.0, 4.0]), 1).unwrap().entries;
        assert_eq!(h[(3, 2)], 2.0);

        let g = grid(&[0.1, 0.35, 0.4, 0.9, 1.7]);
        let h0 = dense_falling_factorial::<f64>(&g, 0).unwrap().entries;
        let lower = DenseMatrix::from_fn(5, 5, |i, j| if i >= j { 1.0 } else { 0.0 });
        assert_eq!(h0, lower);
        assert_eq!(dense_truncated_power::<f64>(&g, 0).unwrap().entries, lower);
    }

    #[test]
    fn truncated_power_example() {
        let gm = dense_truncated_power::<f64>(&grid(&[1.0, 2.0, 3.0]), 1).unwrap().entries;
        let expected = DenseMatrix::from_fn(3, 3, |i, j| [[1.0, 1.0, 0.0], [1.0, 2.0, 0.0], [1.0, 3.0, 1.0]][i][j]);
        assert_eq!(gm, expected);
    }

    #[test]
    fn first_columns_are_ones() {
        let mut rng = crate::rng::stream_rng(3, 0);
        for k in 0..5 {
            let g = random_unit_grid(&mut rng, 20);
            for basis in [dense_falling_factorial::<f64>(&g, k).unwrap(), dense_truncated_power::<f64>(&g, k).unwrap()] {
                assert!((0..20).all(|i| basis.entries[(i, 0)] == 1.0));
            }
        }
    }

    #[test]
    fn product_recursion_matches_elementwise_definition() {
        let mut rng = crate::rng::stream_rng(11, 0);
        for &n in &[7usize, 40, 256] {
            for k in 0..=5 {
                let g = random_unit_grid(&mut rng, n);
                let direct = dense_falling_factorial::<f64>(&g, k).unwrap().entries;
                let rec = dense_falling_factorial_recursive::<f64>(&g, k).unwrap().entries;
                for i in 0..n {
                    for j in 0..n {
                        let (a, b) = (direct[(i, j)], rec[(i, j)]);
                        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-300), "n={n} k={k} ({i},{j}) {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_blocks_small_examples() {
        let g = grid(&[0.3, 1.0, 1.2, 2.5, 2.6]);
        let blocks = dense_h_inverse_blocks::<f64>(&g, 0).unwrap();
        let stacked = blocks.stacked();
        let mut linv = DenseMatrix::<f64>::identity(5);
        for i in 1..5 {
            linv[(i, i - 1)] = -1.0;
        }
        assert_eq!(stacked, linv);

        let g = grid(&[1.0, 2.0, 3.0]);
        let blocks = dense_h_inverse_blocks::<f64>(&g, 1).unwrap();
        let h = dense_falling_factorial::<f64>(&g, 1).unwrap().entries;
        assert!(blocks.stacked().matmul(&h).max_identity_deviation() <= 1e-12);
    }

    #[test]
    fn inverse_blocks_invert_in_double_double() {
        let mut rng = crate::rng::stream_rng(5, 0);
        for &n in &[10usize, 64] {
            for k in 0..=5 {
                let g = random_unit_grid(&mut rng, n);
                let h = dense_falling_factorial::<TwoFloat>(&g, k).unwrap().entries;
                let s = dense_h_inverse_blocks::<TwoFloat>(&g, k).unwrap().stacked();
                let dev = s.matmul(&h).max_identity_deviation();
                assert!(dev <= 1e-8 * n as f64, "n={n} k={k} dev={dev}");
            }
        }
    }

    #[test]
    fn leading_columns_span_the_same_space() {
        use nalgebra::DMatrix;
        let mut rng = crate::rng::stream_rng(9, 0);
        for k in 0..=5 {
            let g = random_unit_grid(&mut rng, 50);
            let gm = dense_truncated_power::<f64>(&g, k).unwrap().entries;
            let hm = dense_falling_factorial::<f64>(&g, k).unwrap().entries;
            let lead = |m: &DenseMatrix| DMatrix::from_fn(50, k + 1, |i, j| m[(i, j)]);
            let (a, b) = (lead(&gm), lead(&hm));
            for (from, onto) in [(&a, &b), (&b, &a)] {
                let q = onto.clone().qr().q();
                let resid = from - &q * (q.transpose() * from);
                assert!(resid.amax() <= 1e-8, "k={k} resid={}", resid.amax());
            }
        }
    }

    #[test]
    fn lu_solves_small_system() {
        let a = DenseMatrix::from_fn(3, 3, |i, j| [[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]][i][j]);
        let z = a.solve(&[3.0, 2.0, 4.0]).unwrap();
        for (v, e) in z.iter().zip([1.0, 1.0, 1.0]) {
            assert!((v - e).abs() < 1e-14);
        }
    }

    #[test]
    fn size_cap_enforced() {
        let v: Vec<f64> = (0..DENSE_CAP + 1).map(|i| i as f64).collect();
        let g = grid(&v);
        assert!(matches!(dense_falling_factorial::<f64>(&g, 1), Err(Error::SizeCap { .. })));
    }
}
