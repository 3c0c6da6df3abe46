//! Banded discrete difference operators over arbitrary grids.
//!
//! `D^(1)` has rows `(-1, 1)`. Higher orders follow
//! `D^(m+1) = D^(1) * m * (Delta^(m))^{-1} * D^(m)`, where `Delta^(m)` holds the
//! `m`-hop gaps. Row `i` of `D^(m)` is nonzero only on columns `i..=i+m`.

use crate::banded::SymmetricBanded;
use crate::error::{Error, Result};
use crate::grid::InputGrid;

/// Diagonal of `Delta^(hop)`: `x_{i+hop} - x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapScale {
    pub hop: usize,
    pub gaps: Vec<f64>,
}

impl GapScale {
    pub fn new(grid: &InputGrid, hop: usize) -> Result<Self> {
        let x = grid.points();
        if hop == 0 || x.len() <= hop {
            return Err(Error::TooFewPoints { needed: hop + 1, got: x.len() });
        }
        let gaps: Vec<f64> = (0..x.len() - hop).map(|i| x[i + hop] - x[i]).collect();
        if let Some(i) = gaps.iter().position(|&g| g <= 0.0) {
            return Err(Error::ZeroGap(i, i + hop));
        }
        Ok(Self { hop, gaps })
    }
}

/// `D^(order)` over a grid: `(n - order) x n`, stored as one window of
/// `order + 1` coefficients per row, row `i` starting at column `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedDiffOp {
    order: usize,
    cols: usize,
    coeffs: Vec<f64>,
}

impl BandedDiffOp {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> usize {
        self.cols - self.order
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn window(&self) -> usize {
        self.order + 1
    }

    /// Start column and coefficients of row `i`.
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        let w = self.window();
        (i, &self.coeffs[i * w..(i + 1) * w])
    }

    /// Multiplies every coefficient by `s`.
    pub fn scaled(mut self, s: f64) -> Self {
        self.coeffs.iter_mut().for_each(|c| *c *= s);
        self
    }

    /// Multiplies row `i` by `s[i]`.
    pub fn scale_rows(mut self, s: &[f64]) -> Result<Self> {
        if s.len() != self.rows() {
            return Err(Error::LengthMismatch { expected: self.rows(), got: s.len() });
        }
        let w = self.window();
        for (c, si) in self.coeffs.chunks_exact_mut(w).zip(s) {
            c.iter_mut().for_each(|a| *a *= si);
        }
        Ok(self)
    }

    /// Euclidean norm of each row.
    pub fn row_norms(&self) -> Vec<f64> {
        self.coeffs.chunks_exact(self.window()).map(|c| c.iter().map(|a| a * a).sum::<f64>().sqrt()).collect()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows()];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::LengthMismatch { expected: self.cols, got: v.len() });
        }
        if out.len() != self.rows() {
            return Err(Error::LengthMismatch { expected: self.rows(), got: out.len() });
        }
        let w = self.window();
        for (i, (o, c)) in out.iter_mut().zip(self.coeffs.chunks_exact(w)).enumerate() {
            *o = c.iter().zip(&v[i..i + w]).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    pub fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols];
        self.apply_transpose_into(u, &mut out)?;
        Ok(out)
    }

    pub fn apply_transpose_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        if u.len() != self.rows() {
            return Err(Error::LengthMismatch { expected: self.rows(), got: u.len() });
        }
        if out.len() != self.cols {
            return Err(Error::LengthMismatch { expected: self.cols, got: out.len() });
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let w = self.window();
        for (i, (&ui, c)) in u.iter().zip(self.coeffs.chunks_exact(w)).enumerate() {
            for (o, a) in out[i..i + w].iter_mut().zip(c) {
                *o += a * ui;
            }
        }
        Ok(())
    }

    /// `D^T D`, half bandwidth `order`.
    pub fn gram(&self) -> SymmetricBanded {
        let w = self.window();
        let mut g = SymmetricBanded::zeros(self.cols, self.order);
        for (i, c) in self.coeffs.chunks_exact(w).enumerate() {
            for a in 0..w {
                for b in 0..=a {
                    g.add(i + a, i + b, c[a] * c[b]);
                }
            }
        }
        g
    }

    /// `D D^T`, `(n - order)` square with half bandwidth `order`.
    pub fn outer_gram(&self) -> SymmetricBanded {
        let w = self.window();
        let rows = self.rows();
        let mut g = SymmetricBanded::zeros(rows, self.order);
        for i in 0..rows {
            let ci = &self.coeffs[i * w..(i + 1) * w];
            for j in i.saturating_sub(self.order)..=i {
                let cj = &self.coeffs[j * w..(j + 1) * w];
                // overlap of columns i..i+order and j..j+order
                let s: f64 = (i..=j + self.order).map(|col| ci[col - i] * cj[col - j]).sum();
                g.add(i, j, s);
            }
        }
        g
    }
}

/// `D^(order)` over `grid`, built band-wise.
pub fn build_diff_op(grid: &InputGrid, order: usize) -> Result<BandedDiffOp> {
    let x = grid.points();
    let n = x.len();
    if order == 0 {
        return Err(Error::InvalidConfig("difference order must be at least 1".into()));
    }
    if n < order + 1 {
        return Err(Error::TooFewPoints { needed: order + 1, got: n });
    }
    let mut coeffs: Vec<f64> = std::iter::repeat_n([-1.0, 1.0], n - 1).flatten().collect();
    for m in 1..order {
        let scale = GapScale::new(grid, m)?;
        let (w_old, w_new) = (m + 1, m + 2);
        let rows = n - m - 1;
        let mut next = vec![0.0; rows * w_new];
        for r in 0..rows {
            let lower = m as f64 / scale.gaps[r];
            let upper = m as f64 / scale.gaps[r + 1];
            let out = &mut next[r * w_new..(r + 1) * w_new];
            // row r+1 of the scaled operator is shifted one column right
            for (a, &c) in coeffs[(r + 1) * w_old..(r + 2) * w_old].iter().enumerate() {
                out[a + 1] += upper * c;
            }
            for (a, &c) in coeffs[r * w_old..(r + 1) * w_old].iter().enumerate() {
                out[a] -= lower * c;
            }
        }
        coeffs = next;
    }
    Ok(BandedDiffOp { order, cols: n, coeffs })
}

pub fn apply_diff(op: &BandedDiffOp, v: &[f64]) -> Result<Vec<f64>> {
    op.apply(v)
}

pub fn apply_diff_transpose(op: &BandedDiffOp, u: &[f64]) -> Result<Vec<f64>> {
    op.apply_transpose(u)
}
