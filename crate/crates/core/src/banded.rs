//! Symmetric banded matrices and their Cholesky factorization.

use crate::error::{Error, Result};

/// Symmetric matrix stored by its lower band: `band[i * (bw + 1) + d] = A[i][i - d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricBanded {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl SymmetricBanded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, band: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Half bandwidth: `A[i][j] = 0` whenever `|i - j| > bw`.
    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.band[i * (self.bw + 1) + (i - j)]
        }
    }

    /// Adds `v` to `A[i][j]` (and, implicitly, `A[j][i]`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside band {}", self.bw);
        self.band[i * (self.bw + 1) + (i - j)] += v;
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.band[i * (self.bw + 1)] += v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.band.iter_mut().for_each(|a| *a *= s);
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            for d in 0..=self.bw.min(i) {
                let a = self.band[i * (self.bw + 1) + d];
                out[i] += a * v[i - d];
                if d != 0 {
                    out[i - d] += a * v[i];
                }
            }
        }
        out
    }
}

/// `A = L L^T` with `L` lower banded, computed in `O(n bw^2)`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// `l[i * (bw + 1) + d] = L[i][i - d]`
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &SymmetricBanded) -> Result<Self> {
        let (n, bw) = (a.n, a.bw);
        let w = bw + 1;
        let mut l = a.band.clone();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                // L[i][j] = (A[i][j] - sum_{p < j} L[i][p] L[j][p]) / L[j][j]
                let mut s = l[i * w + (i - j)];
                let p_lo = lo.max(j.saturating_sub(bw));
                for p in p_lo..j {
                    s -= l[i * w + (i - p)] * l[j * w + (j - p)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::DimensionMismatch(format!("matrix not positive definite at row {i}")));
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A z = b`, overwriting `b` with `z`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut s = b[i];
            for p in i.saturating_sub(self.bw)..i {
                s -= self.l[i * w + (i - p)] * b[p];
            }
            b[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for q in i + 1..(i + w).min(self.n) {
                s -= self.l[q * w + (q - i)] * b[q];
            }
            b[i] = s / self.l[i * w];
        }
    }
}
