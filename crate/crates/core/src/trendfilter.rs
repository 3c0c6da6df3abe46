//! Trend filtering over arbitrary inputs.
//!
//! Solves
//!
//! ```text
//! minimize  1/2 ||y - beta||^2 + (lambda / k!) ||D^(k+1) beta||_1
//! ```
//!
//! by ADMM on the split `u = D^(k+1) beta / k!`. The `beta` update is a banded
//! SPD solve with `I + rho D^T D` (half bandwidth `k + 1`), factored once per
//! value of `rho`. After the iterations stop, the support of `u` seeds an
//! active-set polish that solves the problem restricted to those knots exactly,
//! and the result is kept only if it improves the optimality certificate.
//!
//! The certificate uses the identity `H^T (y - beta) = lambda (0, s)`, where `s`
//! is a subgradient of the l1 norm at `D beta / k!`. See [`kkt_residual`].

use nalgebra::{DMatrix, DVector};
use twofloat::TwoFloat;

use crate::banded::BandedCholesky;
use crate::diffops::{build_diff_op, BandedDiffOp};
use crate::error::{Error, Result};
use crate::grid::InputGrid;
use crate::transforms::{apply_h_transpose, apply_in, TransformKind, MAX_ORDER};

/// Response, grid, order and penalty level.
#[derive(Debug, Clone)]
pub struct TrendFilterProblem {
    pub grid: InputGrid,
    pub y: Vec<f64>,
    pub k: usize,
    pub lambda: f64,
}

impl TrendFilterProblem {
    pub fn new(grid: InputGrid, y: Vec<f64>, k: usize, lambda: f64) -> Result<Self> {
        validate(&grid, &y, k)?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        Ok(Self { grid, y, k, lambda })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.y.clone(), self.k, lambda)
    }
}

fn validate(grid: &InputGrid, y: &[f64], k: usize) -> Result<()> {
    if k > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: k, max: MAX_ORDER });
    }
    if y.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!("{} responses for {} inputs", y.len(), grid.len())));
    }
    if grid.len() < k + 2 {
        return Err(Error::TooFewPoints { needed: k + 2, got: grid.len() });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Initial augmented-Lagrangian weight; `None` scales `lambda` by the median
    /// penalty row norm over the spread of `y`.
    pub rho: Option<f64>,
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_iter: usize,
    /// Residual balancing of `rho`.
    pub adapt_rho: bool,
    pub polish: bool,
    /// Largest knot count the dense polish step will attempt.
    pub polish_max_support: usize,
    /// Certificate threshold, relative to `||y||_inf`.
    pub cert_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: None,
            tol_rel: 1e-6,
            tol_abs: 1e-8,
            max_iter: 5000,
            adapt_rho: true,
            polish: true,
            polish_max_support: 400,
            cert_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return bad("rho must be positive");
            }
        }
        if !(self.tol_rel > 0.0 && self.tol_abs > 0.0 && self.cert_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendFilterFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `kkt <= cert_tol * ||y||_inf`, directly or after the polish.
    pub converged: bool,
    /// Whether `beta` comes from the active-set polish.
    pub polished: bool,
    pub kkt: f64,
    /// Internal ADMM state, reused for warm starts along a path.
    warm: Option<WarmStart>,
}

impl TrendFilterFit {
    /// Turns a non-converged fit into [`Error::NotConverged`].
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { iterations: self.iterations })
        }
    }

    /// Basis coefficients `alpha = H^{-1} beta`.
    pub fn coefficients(&self, problem: &TrendFilterProblem) -> Result<Vec<f64>> {
        let mut alpha = self.beta.clone();
        crate::transforms::apply_h_inverse(&mut alpha, &problem.grid, problem.k)?;
        Ok(alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct WarmStart {
    u: Vec<f64>,
    w: Vec<f64>,
    rho: f64,
}

/// `D^(k+1) / k!`, the operator whose l1 norm is penalized.
pub fn penalty_operator(grid: &InputGrid, k: usize) -> Result<BandedDiffOp> {
    let kf: f64 = (1..=k).map(|v| v as f64).product();
    Ok(build_diff_op(grid, k + 1)?.scaled(1.0 / kf))
}

/// `1/2 ||y - beta||^2 + lambda ||op beta||_1` with `op = D^(k+1)/k!`.
pub fn objective(y: &[f64], beta: &[f64], op: &BandedDiffOp, lambda: f64) -> Result<f64> {
    let loss: f64 = y.iter().zip(beta).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * 0.5;
    if lambda == 0.0 {
        return Ok(loss);
    }
    let penalty: f64 = op.apply(beta)?.iter().map(|v| v.abs()).sum();
    Ok(loss + lambda * penalty)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, a| m.max(a.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Least-squares projection of `y` onto polynomials of degree at most `k` in `x`.
pub fn polynomial_fit(grid: &InputGrid, y: &[f64], k: usize) -> Result<Vec<f64>> {
    validate(grid, y, k)?;
    let x = grid.points();
    let n = x.len();
    let (lo, hi) = (x[0], x[n - 1]);
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    // Chebyshev columns on [-1, 1] keep the QR well conditioned
    let basis = DMatrix::from_fn(n, k + 1, |i, j| {
        let t = (x[i] - mid) / half;
        let (mut prev, mut cur) = (1.0, t);
        match j {
            0 => 1.0,
            1 => t,
            _ => {
                for _ in 1..j {
                    let next = 2.0 * t * cur - prev;
                    prev = cur;
                    cur = next;
                }
                cur
            }
        }
    });
    let q = basis.qr().q();
    let yv = DVector::from_column_slice(y);
    let proj = &q * (q.transpose() * &yv);
    Ok(proj.iter().copied().collect())
}

/// Smallest `lambda` at which the degree-`k` polynomial fit solves the problem:
/// `|| (H_2^T (y - P y) ||_inf`, where `H_2` drops the first `k + 1` columns of
/// `H^(k)`. Equals `k! ||(D D^T)^{-1} D (y - P y)||_inf`.
pub fn lambda_max(grid: &InputGrid, y: &[f64], k: usize) -> Result<f64> {
    let p = polynomial_fit(grid, y, k)?;
    let mut w: Vec<f64> = y.iter().zip(&p).map(|(a, b)| a - b).collect();
    apply_h_transpose(&mut w, grid, k)?;
    Ok(inf_norm(&w[k + 1..]))
}

/// `n` values log-spaced from `lambda_max` down to `ratio * lambda_max`.
pub fn default_lambda_path(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lambda_max];
    }
    let (a, b) = (lambda_max.ln(), (ratio * lambda_max).ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub const DEFAULT_PATH_LEN: usize = 50;
pub const DEFAULT_PATH_RATIO: f64 = 1e-4;

/// Threshold below which a difference counts as zero: `1e-6 ||y||_inf`.
pub fn zero_threshold(y: &[f64]) -> f64 {
    1e-6 * inf_norm(y)
}

/// Signs of the entries of `D^(k+1) beta` that count as nonzero.
///
/// An entry is nonzero when it exceeds both [`zero_threshold`] and its own
/// rounding floor `64 eps sum_j |D_ij| |beta_j|`. Rows of `D^(k+1)` have norms
/// up to `gap^-(k+1)`, so on irregular grids the floor can dominate: an optimal
/// `beta` stored in double precision carries that much noise in its differences.
pub fn active_signs(grid: &InputGrid, y: &[f64], beta: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    let d = build_diff_op(grid, k + 1)?;
    let values = d.apply(beta)?;
    let thr = zero_threshold(y);
    Ok(values
        .iter()
        .enumerate()
        .filter(|&(i, v)| {
            let (start, row) = d.row(i);
            let floor: f64 = row.iter().zip(&beta[start..]).map(|(a, b)| (a * b).abs()).sum::<f64>() * 64.0 * f64::EPSILON;
            v.abs() > thr.max(floor)
        })
        .map(|(i, v)| (i, v.signum()))
        .collect())
}

/// Indices of the nonzero entries of `D^(k+1) beta`, as in [`active_signs`].
pub fn active_differences(grid: &InputGrid, y: &[f64], beta: &[f64], k: usize) -> Result<Vec<usize>> {
    Ok(active_signs(grid, y, beta, k)?.into_iter().map(|(i, _)| i).collect())
}

/// Maximum violation of the optimality conditions, in units of `y`.
///
/// With `r = y - beta` and `op = D^(k+1)/k!`, optimality requires
/// `r = lambda op^T s` with `s_i = sign((op beta)_i)` on the entries reported by
/// [`active_signs`] and `|s_i| <= 1` elsewhere. The returned value is
/// `||r - lambda op^T s||_inf` for an explicit admissible `s`: signs on active
/// entries, and on the rest the least-squares choice clipped to `[-1, 1]`.
///
/// Since `op H = [0 | I]`, the least-squares residual is the projection of
/// `H^T r - lambda (0, s)` restricted to the polynomial and active coordinates
/// onto the span of the matching columns of `H`. `H^T r` is formed in
/// double-double arithmetic.
pub fn kkt_residual(fit: &TrendFilterFit, problem: &TrendFilterProblem) -> Result<f64> {
    if fit.beta.len() != problem.y.len() {
        return Err(Error::DimensionMismatch(format!(
            "fit has {} values, problem has {}",
            fit.beta.len(),
            problem.y.len()
        )));
    }
    certificate(&problem.grid, &problem.y, &fit.beta, problem.k, problem.lambda)
}

/// Largest `k + 1 + |active|` for which the certificate picks the inactive
/// subgradient entries by least squares; beyond it they are read off `H^T r`.
const CERT_PROJECTION_CAP: usize = 1500;

fn certificate(grid: &InputGrid, y: &[f64], beta: &[f64], k: usize, lambda: f64) -> Result<f64> {
    let n = y.len();
    if lambda == 0.0 {
        return Ok(y.iter().zip(beta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
    }
    let zero = TwoFloat::from(0.0);
    let lam = TwoFloat::from(lambda);
    let active = active_signs(grid, y, beta, k)?;

    // w = H^T r in double-double; r itself is exact there
    let r: Vec<TwoFloat> = y.iter().zip(beta).map(|(&a, &b)| TwoFloat::from(a) - TwoFloat::from(b)).collect();
    let mut w = r.clone();
    apply_in(TransformKind::Transpose, &mut w, grid, k)?;

    // Violation on S = polynomial coordinates plus active knots, where s is pinned:
    // e_S = (H^T r)_S - lambda (0, s_A).
    let support: Vec<usize> = (0..=k).chain(active.iter().map(|(i, _)| k + 1 + i)).collect();
    let mut e_s: Vec<TwoFloat> = support.iter().map(|&j| w[j]).collect();
    for (e, (_, sign)) in e_s[k + 1..].iter_mut().zip(&active) {
        *e -= lam * *sign;
    }

    // The inactive entries of s are free. Choosing them by least squares leaves
    // the projection of the violation onto span(H_S); otherwise take s_I = w_I / lambda.
    let mut v: Vec<TwoFloat> = match projected_violation(grid, k, &support, &e_s)? {
        Some(v) => v.into_iter().map(TwoFloat::from).collect(),
        None => {
            let mut z = vec![zero; n];
            support.iter().zip(&e_s).for_each(|(&j, e)| z[j] = *e);
            apply_in(TransformKind::TransposeInverse, &mut z, grid, k)?;
            z
        }
    };
    // s_I = (H^T (r - v))_I / lambda; entries outside [-1, 1] are clipped and the
    // excess is added back in y units.
    let mut hv = v.clone();
    apply_in(TransformKind::Transpose, &mut hv, grid, k)?;
    let mut excess = vec![zero; n];
    let mut any = false;
    let mut pinned = vec![false; n];
    support.iter().for_each(|&j| pinned[j] = true);
    for j in k + 1..n {
        if pinned[j] {
            continue;
        }
        let t = w[j] - hv[j];
        let tf = f64::from(t);
        if tf.abs() > lambda {
            excess[j] = t - lam * tf.signum();
            any = true;
        }
    }
    if any {
        apply_in(TransformKind::TransposeInverse, &mut excess, grid, k)?;
        v.iter_mut().zip(&excess).for_each(|(a, b)| *a += *b);
    }
    Ok(v.iter().fold(0.0f64, |m, x| m.max(f64::from(*x).abs())))
}

/// `H_S (H_S^T H_S)^{-1} e_S`, or `None` when `S` is too large or numerically rank deficient.
fn projected_violation(grid: &InputGrid, k: usize, support: &[usize], e_s: &[TwoFloat]) -> Result<Option<Vec<f64>>> {
    let p = support.len();
    let n = grid.len();
    if p > CERT_PROJECTION_CAP || p > n {
        return Ok(None);
    }
    let mut cache = ColumnCache::new(grid, k);
    let mut basis = DMatrix::zeros(n, p);
    let mut scales = vec![0.0; p];
    for (c, &j) in support.iter().enumerate() {
        let col = cache.get(j)?;
        let s = norm2(col);
        scales[c] = s;
        for (r, v) in col.iter().enumerate() {
            basis[(r, c)] = v / s;
        }
    }
    let qr = basis.qr();
    let r = qr.r();
    if (0..p).any(|i| r[(i, i)].abs() < 1e-12 * r[(0, 0)].abs()) {
        return Ok(None);
    }
    // with H_S = B diag(scales) and B = QR: v = Q t where R^T t = e_S / scales
    let rhs = DVector::from_iterator(p, e_s.iter().zip(&scales).map(|(e, s)| f64::from(*e) / s));
    let Some(t) = r.transpose().solve_lower_triangular(&rhs) else { return Ok(None) };
    Ok(Some((qr.q() * t).iter().copied().collect()))
}

/// Solves one problem from a cold start.
pub fn fit(problem: &TrendFilterProblem, config: &SolverConfig) -> Result<TrendFilterFit> {
    config.validate()?;
    Solver::new(problem, config)?.solve(problem.lambda, None)
}

/// Solves along a strictly descending sequence of positive `lambdas`, warm-starting
/// each fit from the previous one.
pub fn fit_path(
    grid: &InputGrid,
    y: &[f64],
    k: usize,
    lambdas: &[f64],
    config: &SolverConfig,
) -> Result<Vec<TrendFilterFit>> {
    config.validate()?;
    if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidConfig("path lambdas must be positive".into()));
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig("path lambdas must be strictly descending".into()));
    }
    let problem = TrendFilterProblem::new(grid.clone(), y.to_vec(), k, lambdas.first().copied().unwrap_or(0.0))?;
    let solver = Solver::new(&problem, config)?;
    let mut out: Vec<TrendFilterFit> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let warm = out.last().map(|f| (f.beta.as_slice(), f.warm.as_ref()));
        let fit = solver.solve(lambda, warm)?;
        out.push(fit);
    }
    Ok(out)
}

/// Linear interpolation of fitted values at `at`, clamped to the end values
/// outside the grid.
pub fn interpolate(grid: &InputGrid, beta: &[f64], at: f64) -> f64 {
    let x = grid.points();
    let n = x.len();
    if at <= x[0] {
        return beta[0];
    }
    if at >= x[n - 1] {
        return beta[n - 1];
    }
    let j = x.partition_point(|&v| v <= at);
    let t = (at - x[j - 1]) / (x[j] - x[j - 1]);
    beta[j - 1] + t * (beta[j] - beta[j - 1])
}

struct Solver<'a> {
    grid: &'a InputGrid,
    y: &'a [f64],
    k: usize,
    op: BandedDiffOp,
    /// `op` with unit-norm rows; the split variable is `u = split beta`.
    split: BandedDiffOp,
    /// Row norms of `op`, so that `lambda ||op beta||_1 = lambda sum_i weights_i |u_i|`.
    weights: Vec<f64>,
    config: &'a SolverConfig,
}

const RHO_RANGE: (f64, f64) = (1e-6, 1e8);

impl<'a> Solver<'a> {
    fn new(problem: &'a TrendFilterProblem, config: &'a SolverConfig) -> Result<Self> {
        let op = penalty_operator(&problem.grid, problem.k)?;
        let weights = op.row_norms();
        let inv: Vec<f64> = weights.iter().map(|w| 1.0 / w).collect();
        let split = op.clone().scale_rows(&inv)?;
        Ok(Self { grid: &problem.grid, y: &problem.y, k: problem.k, op, split, weights, config })
    }

    /// Default `rho`: `lambda` times the median penalty weight, relative to the
    /// spread of `y`.
    fn initial_rho(&self, lambda: f64) -> f64 {
        let mut w = self.weights.clone();
        w.sort_by(f64::total_cmp);
        let median = w[w.len() / 2];
        let n = self.y.len() as f64;
        let mean = self.y.iter().sum::<f64>() / n;
        let spread = (self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let rho = lambda * median / spread.max(f64::MIN_POSITIVE);
        if rho.is_finite() {
            rho.clamp(1e-4, 1e4)
        } else {
            1.0
        }
    }

    fn factor(&self, rho: f64) -> Result<BandedCholesky> {
        let mut a = self.split.gram();
        a.scale(rho);
        a.add_diagonal(1.0);
        BandedCholesky::factor(&a)
    }

    fn finish(&self, beta: Vec<f64>, lambda: f64, iterations: usize, residuals: (f64, f64), warm: Option<WarmStart>) -> Result<TrendFilterFit> {
        let cert_limit = self.config.cert_tol * inf_norm(self.y).max(f64::MIN_POSITIVE);
        let mut fit = TrendFilterFit {
            objective: objective(self.y, &beta, &self.op, lambda)?,
            kkt: certificate(self.grid, self.y, &beta, self.k, lambda)?,
            beta,
            lambda,
            iterations,
            primal_residual: residuals.0,
            dual_residual: residuals.1,
            converged: false,
            polished: false,
            warm,
        };
        fit.converged = fit.kkt <= cert_limit;
        if self.config.polish && lambda > 0.0 && !fit.converged {
            let seed = fit.warm.as_ref().map(|w| w.u.clone()).unwrap_or_default();
            if let Some(polished) = self.polish(lambda, &seed)? {
                let kkt = certificate(self.grid, self.y, &polished, self.k, lambda)?;
                if kkt < fit.kkt {
                    fit.objective = objective(self.y, &polished, &self.op, lambda)?;
                    fit.beta = polished;
                    fit.kkt = kkt;
                    fit.polished = true;
                    fit.converged = kkt <= cert_limit;
                }
            }
        }
        Ok(fit)
    }

    fn solve(&self, lambda: f64, warm: Option<(&[f64], Option<&WarmStart>)>) -> Result<TrendFilterFit> {
        let n = self.y.len();
        let m = self.split.rows();
        if lambda == 0.0 {
            return self.finish(self.y.to_vec(), 0.0, 0, (0.0, 0.0), None);
        }
        let cfg = self.config;
        let mut rho = cfg.rho.unwrap_or_else(|| self.initial_rho(lambda));
        let mut beta = self.y.to_vec();
        let mut u = vec![0.0; m];
        let mut w = vec![0.0; m];
        if let Some((prev_beta, state)) = warm {
            beta.copy_from_slice(prev_beta);
            if let Some(s) = state {
                u.copy_from_slice(&s.u);
                // scaled dual variable w = dual / rho
                let scale = s.rho / rho;
                w.iter_mut().zip(&s.w).for_each(|(a, b)| *a = b * scale);
            }
        }
        let mut chol = self.factor(rho)?;
        let mut z = vec![0.0; m];
        let mut u_old = vec![0.0; m];
        let mut rhs_m = vec![0.0; m];
        let mut tmp_n = vec![0.0; n];
        let (mut r_pri, mut r_dual) = (f64::INFINITY, f64::INFINITY);
        let mut iterations = 0;
        let mut adaptations = 0;
        const MAX_ADAPTATIONS: usize = 50;

        for it in 1..=cfg.max_iter {
            iterations = it;
            // beta = (I + rho S^T S)^{-1} (y + rho S^T (u - w)), S = split
            rhs_m.iter_mut().zip(u.iter().zip(&w)).for_each(|(r, (a, b))| *r = a - b);
            self.split.apply_transpose_into(&rhs_m, &mut tmp_n)?;
            beta.iter_mut().zip(self.y.iter().zip(&tmp_n)).for_each(|(b, (yi, t))| *b = yi + rho * t);
            chol.solve_in_place(&mut beta);

            self.split.apply_into(&beta, &mut z)?;
            u_old.copy_from_slice(&u);
            let thresh = lambda / rho;
            for (((ui, zi), wi), sw) in u.iter_mut().zip(&z).zip(&w).zip(&self.weights) {
                let v = zi + wi;
                *ui = v.signum() * (v.abs() - thresh * sw).max(0.0);
            }
            for ((wi, zi), ui) in w.iter_mut().zip(&z).zip(&u) {
                *wi += zi - ui;
            }

            r_pri = z.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            rhs_m.iter_mut().zip(u.iter().zip(&u_old)).for_each(|(r, (a, b))| *r = a - b);
            self.split.apply_transpose_into(&rhs_m, &mut tmp_n)?;
            r_dual = rho * norm2(&tmp_n);

            self.split.apply_transpose_into(&w, &mut tmp_n)?;
            let eps_pri = cfg.tol_abs * (m as f64).sqrt() + cfg.tol_rel * norm2(&z).max(norm2(&u));
            let eps_dual = cfg.tol_abs * (n as f64).sqrt() + cfg.tol_rel * rho * norm2(&tmp_n);
            if r_pri <= eps_pri && r_dual <= eps_dual {
                break;
            }

            if cfg.adapt_rho && adaptations < MAX_ADAPTATIONS {
                let factor = if r_pri > 10.0 * r_dual {
                    2.0
                } else if r_dual > 10.0 * r_pri {
                    0.5
                } else {
                    1.0
                };
                if factor != 1.0 && (RHO_RANGE.0..=RHO_RANGE.1).contains(&(rho * factor)) {
                    rho *= factor;
                    w.iter_mut().for_each(|v| *v /= factor);
                    chol = self.factor(rho)?;
                    adaptations += 1;
                }
            }
        }
        let warm = WarmStart { u, w, rho };
        self.finish(beta, lambda, iterations, (r_pri, r_dual), Some(warm))
    }

    /// Exact solve seeded by the support of `u`, retried from an empty support if that fails.
    fn polish(&self, lambda: f64, seed: &[f64]) -> Result<Option<Vec<f64>>> {
        if seed.iter().any(|v| *v != 0.0) {
            if let Some(beta) = self.feature_sign(lambda, seed)? {
                return Ok(Some(beta));
            }
        }
        self.feature_sign(lambda, &[])
    }

    /// Feature-sign search on the coefficient form
    /// `1/2 ||y - H a||^2 + lambda sum_{j > k} |a_j|`, started from the knots where
    /// `seed` is nonzero. Each step solves the problem restricted to the current
    /// knots with fixed signs, then moves toward that solution only as far as the
    /// true objective keeps improving, dropping knots whose coefficient reaches zero.
    /// Knots violating the dual bound are added one at a time.
    fn feature_sign(&self, lambda: f64, seed: &[f64]) -> Result<Option<Vec<f64>>> {
        let k = self.k;
        let mut columns = ColumnCache::new(self.grid, k);
        // (knot index, coefficient, sign)
        let mut knots: Vec<(usize, f64, f64)> = Vec::new();
        let mut poly = vec![0.0; k + 1];
        let mut pending: Vec<(usize, f64)> =
            seed.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, v.signum())).collect();
        let mut current = self.coef_objective(lambda, &poly, &knots, &mut columns)?;
        // knots dropped since the last descent; re-adding one means no further
        // progress is measurable in working precision
        let mut stalled: Vec<usize> = Vec::new();
        const MAX_STEPS: usize = 2000;

        for _ in 0..MAX_STEPS {
            if !pending.is_empty() {
                for &(i, s) in &pending {
                    if !knots.iter().any(|(j, _, _)| *j == i) {
                        knots.push((i, 0.0, s));
                    }
                }
                knots.sort_by_key(|t| t.0);
                pending.clear();
            }
            if knots.len() > self.config.polish_max_support {
                return Ok(None);
            }
            let signs: Vec<(usize, f64)> = knots.iter().map(|(i, _, s)| (*i, *s)).collect();
            let Some((target_poly, target)) = self.restricted_solve(lambda, &signs, &mut columns)? else {
                return Ok(None);
            };

            // candidate step sizes: the full step and every zero crossing on the way
            let mut steps = vec![1.0];
            for ((_, a, _), b) in knots.iter().zip(&target) {
                if *a != 0.0 && a * b < 0.0 {
                    steps.push(a / (a - b));
                }
            }
            let mut best: Option<(f64, f64, Vec<f64>, Vec<(usize, f64, f64)>)> = None;
            for &t in &steps {
                let p: Vec<f64> = poly.iter().zip(&target_poly).map(|(a, b)| a + t * (b - a)).collect();
                let cand: Vec<(usize, f64, f64)> = knots
                    .iter()
                    .zip(&target)
                    .map(|(&(i, a, s), b)| {
                        let v = a + t * (b - a);
                        let v = if a != 0.0 && a * b < 0.0 && (a / (a - b) - t).abs() <= 1e-14 { 0.0 } else { v };
                        (i, v, s)
                    })
                    .collect();
                let obj = self.coef_objective(lambda, &p, &cand, &mut columns)?;
                if best.as_ref().is_none_or(|b| obj < b.0) {
                    best = Some((obj, t, p, cand));
                }
            }
            let (obj, t, p, cand) = best.expect("at least one step");
            if obj < current {
                let flipped = cand.iter().any(|(_, v, s)| *v != 0.0 && v.signum() != *s);
                current = obj;
                stalled.clear();
                poly = p;
                knots = cand.into_iter().filter(|(_, v, _)| *v != 0.0).map(|(i, v, _)| (i, v, v.signum())).collect();
                if t < 1.0 || flipped {
                    continue;
                }
            } else {
                // no descent: drop knots still at zero whose restricted coefficient has the wrong sign
                let before = knots.len();
                let (keep, drop): (Vec<_>, Vec<_>) =
                    knots.into_iter().zip(&target).partition(|((_, a, s), b)| *a != 0.0 || **b * *s > 0.0);
                stalled.extend(drop.iter().map(|((i, _, _), _)| *i));
                knots = keep.into_iter().map(|(kn, _)| kn).collect();
                if knots.len() < before {
                    continue;
                }
            }

            // dual check on the knots currently at zero
            let beta = self.fitted(&poly, &knots, &mut columns)?;
            let mut w: Vec<f64> = self.y.iter().zip(&beta).map(|(a, b)| a - b).collect();
            apply_h_transpose(&mut w, self.grid, k)?;
            let worst = w[k + 1..]
                .iter()
                .enumerate()
                .filter(|(i, wi)| wi.abs() > lambda * (1.0 + 1e-10) && !knots.iter().any(|(j, _, _)| j == i))
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
            match worst {
                Some((i, _)) if stalled.contains(&i) => return Ok(Some(beta)),
                None => return Ok(Some(beta)),
                Some((i, wi)) => pending.push((i, wi.signum())),
            }
        }
        Ok(None)
    }

    /// `H_S a`, accumulated in double-double and rounded once, so that the
    /// result is a piecewise polynomial with knots `S` up to a single rounding.
    fn fitted(&self, poly: &[f64], knots: &[(usize, f64, f64)], columns: &mut ColumnCache) -> Result<Vec<f64>> {
        let mut beta = vec![TwoFloat::from(0.0); self.y.len()];
        let terms = poly.iter().enumerate().map(|(j, a)| (j, *a)).chain(knots.iter().map(|(i, a, _)| (self.k + 1 + i, *a)));
        for (j, a) in terms {
            if a != 0.0 {
                let col = columns.get_extended(j)?;
                beta.iter_mut().zip(col).for_each(|(b, c)| *b += *c * a);
            }
        }
        Ok(beta.iter().map(|v| f64::from(*v)).collect())
    }

    fn coef_objective(&self, lambda: f64, poly: &[f64], knots: &[(usize, f64, f64)], columns: &mut ColumnCache) -> Result<f64> {
        let beta = self.fitted(poly, knots, columns)?;
        let loss: f64 = self.y.iter().zip(&beta).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * 0.5;
        Ok(loss + lambda * knots.iter().map(|(_, a, _)| a.abs()).sum::<f64>())
    }

    /// Minimizes `1/2 ||y - H_S a||^2 + lambda sum_j s_j a_j` over the polynomial
    /// columns plus the listed knot columns. Returns polynomial and knot coefficients.
    fn restricted_solve(
        &self,
        lambda: f64,
        signs: &[(usize, f64)],
        columns: &mut ColumnCache,
    ) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let k = self.k;
        let n = self.y.len();
        let p = k + 1 + signs.len();
        let indices: Vec<usize> = (0..=k).chain(signs.iter().map(|(i, _)| k + 1 + i)).collect();
        let mut basis = DMatrix::zeros(n, p);
        let mut scales = vec![0.0; p];
        for (c, &j) in indices.iter().enumerate() {
            let col = columns.get(j)?;
            let s = norm2(col);
            if s == 0.0 {
                return Ok(None);
            }
            scales[c] = s;
            for (r, v) in col.iter().enumerate() {
                basis[(r, c)] = v / s;
            }
        }
        let qr = basis.qr();
        let (q, r) = (qr.q(), qr.r());
        if (0..p).any(|i| r[(i, i)].abs() < 1e-13 * r[(0, 0)].abs()) {
            return Ok(None);
        }
        let mut lin = DVector::zeros(p);
        for (c, (_, s)) in signs.iter().enumerate() {
            lin[k + 1 + c] = s / scales[k + 1 + c];
        }
        // R b = Q^T y - lambda R^{-T} lin
        let Some(t) = r.transpose().solve_lower_triangular(&lin) else { return Ok(None) };
        let rhs = q.transpose() * DVector::from_column_slice(self.y) - t * lambda;
        let Some(b) = r.solve_upper_triangular(&rhs) else { return Ok(None) };
        let poly = (0..=k).map(|c| b[c] / scales[c]).collect();
        let coef = (0..signs.len()).map(|c| b[k + 1 + c] / scales[k + 1 + c]).collect();
        Ok(Some((poly, coef)))
    }
}

/// Columns of `H^(k)`, computed on demand in double-double by transforming unit vectors.
struct ColumnCache<'a> {
    grid: &'a InputGrid,
    k: usize,
    cols: std::collections::HashMap<usize, (Vec<f64>, Vec<TwoFloat>)>,
}

impl<'a> ColumnCache<'a> {
    fn new(grid: &'a InputGrid, k: usize) -> Self {
        Self { grid, k, cols: std::collections::HashMap::new() }
    }

    fn entry(&mut self, j: usize) -> Result<&(Vec<f64>, Vec<TwoFloat>)> {
        if !self.cols.contains_key(&j) {
            let mut e = vec![TwoFloat::from(0.0); self.grid.len()];
            e[j] = TwoFloat::from(1.0);
            apply_in(TransformKind::Forward, &mut e, self.grid, self.k)?;
            let rounded = e.iter().map(|v| f64::from(*v)).collect();
            self.cols.insert(j, (rounded, e));
        }
        Ok(&self.cols[&j])
    }

    fn get(&mut self, j: usize) -> Result<&[f64]> {
        Ok(&self.entry(j)?.0)
    }

    fn get_extended(&mut self, j: usize) -> Result<&[TwoFloat]> {
        Ok(&self.entry(j)?.1)
    }
}
