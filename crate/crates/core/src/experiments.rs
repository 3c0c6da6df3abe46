//! Monte Carlo harness: max-gap bound, trend filtering error rates, ROC curves
//! of the higher-order KS tests, and transform timings.
//!
//! Every replicate draws from its own stream `stream_rng(seed, stream_id(cell, rep))`
//! and results are gathered in replicate order, so outputs are identical for any
//! thread count. Numbers are written with 17 significant digits.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::basis_ref::{dense_truncated_power, DenseLu, DENSE_CAP};
use crate::error::{Error, Result};
use crate::grid::{InputGrid, TiePolicy};
use crate::kstest::{join_samples, ks_statistic, KsOptions, StatMethod};
use crate::rng::{stream_id, stream_rng, GENERATOR};
use crate::transforms::{apply_h, apply_h_inverse};
use crate::trendfilter::{fit, SolverConfig, TrendFilterProblem};

/// Formats `x` with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// A float serialized to JSON with 17 significant digits (`null` if not finite).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            let raw = serde_json::value::RawValue::from_string(fmt17(self.0)).map_err(serde::ser::Error::custom)?;
            raw.serialize(s)
        } else {
            s.serialize_none()
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn csv_writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(Error::InvalidConfig(format!("experiment name {name:?} must be a non-empty [A-Za-z0-9_-] identifier")));
    }
    Ok(())
}

/// Parametric laws available to the simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Law {
    Normal { mu: f64, sigma: f64 },
    StudentT { df: f64 },
    Laplace { mu: f64, b: f64 },
    Uniform { a: f64, b: f64 },
}

impl Law {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Law::Normal { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
            Law::StudentT { df } => df > 0.0 && df.is_finite(),
            Law::Laplace { mu, b } => mu.is_finite() && b > 0.0 && b.is_finite(),
            Law::Uniform { a, b } => a.is_finite() && b.is_finite() && a < b,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid law parameters {self:?}")))
        }
    }

    /// `len` independent draws.
    pub fn draw(&self, rng: &mut ChaCha8Rng, len: usize) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match *self {
            Law::Normal { mu, sigma } => (0..len).map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                mu + sigma * e
            }).collect(),
            Law::StudentT { df } => {
                let t = StudentT::new(df).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                (0..len).map(|_| t.sample(rng)).collect()
            }
            Law::Laplace { mu, b } => (0..len)
                .map(|_| {
                    // inverse cdf on u in (-1/2, 1/2)
                    let u = loop {
                        let u = rng.random::<f64>() - 0.5;
                        if u > -0.5 {
                            break u;
                        }
                    };
                    mu - b * u.signum() * (-2.0 * u.abs()).ln_1p()
                })
                .collect(),
            Law::Uniform { a, b } => (0..len).map(|_| a + (b - a) * rng.random::<f64>()).collect(),
        })
    }
}

fn default_reps() -> usize {
    DEFAULT_ROC_REPS
}

fn default_rescale() -> bool {
    false
}

fn default_methods() -> Vec<StatMethod> {
    vec![StatMethod::H, StatMethod::G]
}

/// Repetitions used when a ROC spec does not set `reps`.
pub const DEFAULT_ROC_REPS: usize = 200;
/// Repetitions for a full-scale ROC run.
pub const FULL_ROC_REPS: usize = 1000;

/// Two-sample testing experiment: `reps / 2` draws with `X, Y ~ P` and
/// `reps / 2` with `X ~ P`, `Y ~ Q`, each sample of size `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub p: Law,
    pub q: Law,
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    pub k_list: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<StatMethod>,
    pub seed: u64,
    /// Map each joined sample onto `[0, 1]` before computing `k >= 1` statistics.
    /// Off by default: the heavy-tail comparison depends on the raw scale.
    #[serde(default = "default_rescale")]
    pub rescale: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        check_name(&self.name)?;
        self.p.validate()?;
        self.q.validate()?;
        if self.reps < 2 || self.reps % 2 != 0 {
            return Err(Error::InvalidConfig(format!("reps must be even and positive, got {}", self.reps)));
        }
        if self.k_list.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidConfig("k_list and methods must be non-empty".into()));
        }
        let kmax = self.k_list.iter().copied().max().unwrap_or(0);
        if self.n < kmax + 2 {
            return Err(Error::InvalidConfig(format!("n = {} is below max(k) + 2 = {}", self.n, kmax + 2)));
        }
        if self.methods.contains(&StatMethod::G) && 2 * self.n > DENSE_CAP {
            return Err(Error::SizeCap { cap: DENSE_CAP, got: 2 * self.n });
        }
        Ok(())
    }
}

/// ROC curve of one `(k, method)` arm.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub k: usize,
    pub method: StatMethod,
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// Builds the curve by lowering the rejection threshold through the pooled statistics.
    pub fn from_statistics(k: usize, method: StatMethod, null: &[f64], alt: &[f64]) -> Self {
        let mut pooled: Vec<(f64, bool)> = null.iter().map(|&s| (s, false)).chain(alt.iter().map(|&s| (s, true))).collect();
        pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (n0, n1) = (null.len() as f64, alt.len() as f64);
        let (mut fp, mut tp) = (0usize, 0usize);
        let mut points = vec![(0.0, 0.0)];
        let mut i = 0;
        while i < pooled.len() {
            let t = pooled[i].0;
            while i < pooled.len() && pooled[i].0 == t {
                if pooled[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            points.push((fp as f64 / n0, tp as f64 / n1));
        }
        let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        Self { k, method, points, auc }
    }

    /// Largest true positive rate at a false positive rate of at most `alpha`.
    pub fn tpr_at(&self, alpha: f64) -> f64 {
        self.points.iter().filter(|p| p.0 <= alpha).map(|p| p.1).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocTable {
    pub spec: ExperimentSpec,
    /// `(k, method)` arms in `k_list` × `methods` order.
    pub arms: Vec<(usize, StatMethod)>,
    /// `null[r][a]`: statistic of arm `a` in null repetition `r`.
    pub null: Vec<Vec<f64>>,
    pub alternative: Vec<Vec<f64>>,
    pub curves: Vec<RocCurve>,
}

impl RocTable {
    pub fn curve(&self, k: usize, method: StatMethod) -> Option<&RocCurve> {
        self.curves.iter().find(|c| c.k == k && c.method == method)
    }

    /// One row per ROC point: `k,method,fpr,tpr`.
    pub fn write_curves_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w, &["k", "method", "fpr", "tpr"])?;
        for c in &self.curves {
            for &(f, t) in &c.points {
                out.write_record([c.k.to_string(), c.method.to_string(), fmt17(f), fmt17(t)])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// One row per statistic: `repetition,hypothesis,k,method,statistic`.
    pub fn write_statistics_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w, &["repetition", "hypothesis", "k", "method", "statistic"])?;
        let half = self.null.len();
        for (label, rows, offset) in [("null", &self.null, 0), ("alternative", &self.alternative, half)] {
            for (r, row) in rows.iter().enumerate() {
                for (&(k, m), s) in self.arms.iter().zip(row) {
                    out.write_record([(offset + r).to_string(), label.into(), k.to_string(), m.to_string(), fmt17(*s)])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Arm {
            k: usize,
            method: StatMethod,
            auc: F17,
            tpr_at_fpr_0_05: F17,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            experiment: &'static str,
            name: &'a str,
            generator: &'static str,
            seed: u64,
            p: Law,
            q: Law,
            n: usize,
            reps: usize,
            arms: Vec<Arm>,
        }
        let s = &self.spec;
        to_json(&Summary {
            experiment: "roc",
            name: &s.name,
            generator: GENERATOR,
            seed: s.seed,
            p: s.p,
            q: s.q,
            n: s.n,
            reps: s.reps,
            arms: self
                .curves
                .iter()
                .map(|c| Arm { k: c.k, method: c.method, auc: F17(c.auc), tpr_at_fpr_0_05: F17(c.tpr_at(0.05)) })
                .collect(),
        })
    }
}

/// Null and alternative statistics for every `(k, method)` arm, then ROC curves.
///
/// Repetition `r < reps / 2` draws `X, Y ~ P`, the rest `X ~ P, Y ~ Q`; all arms
/// share the draws of a repetition.
pub fn simulate_roc(spec: &ExperimentSpec) -> Result<RocTable> {
    spec.validate()?;
    let arms: Vec<(usize, StatMethod)> =
        spec.k_list.iter().flat_map(|&k| spec.methods.iter().map(move |&m| (k, m))).collect();
    let half = spec.reps / 2;
    let stats: Vec<Vec<f64>> = (0..spec.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(spec.seed, r as u64);
            let x = spec.p.draw(&mut rng, spec.n)?;
            let y = if r < half { spec.p.draw(&mut rng, spec.n)? } else { spec.q.draw(&mut rng, spec.n)? };
            let joined = join_samples(&x, &y, TiePolicy::Jitter { eps: 1e-12, seed: stream_id(spec.seed, r as u64) })?;
            arms.iter().map(|&(k, m)| Ok(ks_statistic(&joined, k, m, KsOptions { rescale: spec.rescale })?.statistic)).collect()
        })
        .collect::<Result<_>>()?;
    let (null, alternative) = (stats[..half].to_vec(), stats[half..].to_vec());
    let curves = arms
        .iter()
        .enumerate()
        .map(|(a, &(k, m))| {
            let n0: Vec<f64> = null.iter().map(|row| row[a]).collect();
            let n1: Vec<f64> = alternative.iter().map(|row| row[a]).collect();
            RocCurve::from_statistics(k, m, &n0, &n1)
        })
        .collect();
    Ok(RocTable { spec: spec.clone(), arms, null, alternative, curves })
}

/// True positive rate at false positive rate `alpha` as the sample size varies.
///
/// Returns `(n, k, method, tpr)` rows; each `n` reuses `spec` with that sample size.
pub fn sample_complexity(spec: &ExperimentSpec, n_list: &[usize], alpha: f64) -> Result<Vec<(usize, usize, StatMethod, f64)>> {
    let mut rows = Vec::new();
    for &n in n_list {
        let table = simulate_roc(&ExperimentSpec { n, ..spec.clone() })?;
        rows.extend(table.curves.iter().map(|c| (n, c.k, c.method, c.tpr_at(alpha))));
    }
    Ok(rows)
}

/// Constant of the high-probability max-gap bound `C log n / (p0 n)`.
pub const GAP_CONSTANT: f64 = 22.0;

fn default_gap_sizes() -> Vec<usize> {
    vec![100, 1000, 10000]
}

fn default_trials() -> usize {
    200
}

fn default_p0() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxGapSpec {
    pub name: String,
    #[serde(default = "default_gap_sizes")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_p0")]
    pub p0: f64,
    pub seed: u64,
}

impl MaxGapSpec {
    pub fn validate(&self) -> Result<()> {
        check_name(&self.name)?;
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig("n_list must be non-empty with every n >= 2".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be positive".into()));
        }
        if !(self.p0 > 0.0 && self.p0 <= 1.0) {
            return Err(Error::InvalidConfig(format!("density floor p0 must lie in (0, 1], got {}", self.p0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxGapResult {
    pub n: usize,
    pub p0: f64,
    pub bound: f64,
    /// Largest gap (origin 0) of each trial.
    pub gaps: Vec<f64>,
}

impl MaxGapResult {
    pub fn violations(&self) -> usize {
        self.gaps.iter().filter(|&&g| g > self.bound).count()
    }

    pub fn violation_rate(&self) -> f64 {
        self.violations() as f64 / self.gaps.len() as f64
    }
}

/// Fraction of uniform samples of size `n` whose largest gap exceeds `22 log n / (p0 n)`.
pub fn simulate_max_gap(n: usize, p0: f64, trials: usize, seed: u64) -> Result<MaxGapResult> {
    if n < 2 || trials == 0 {
        return Err(Error::InvalidConfig(format!("need n >= 2 and trials >= 1, got n = {n}, trials = {trials}")));
    }
    if !(p0 > 0.0 && p0 <= 1.0) {
        return Err(Error::InvalidConfig(format!("density floor p0 must lie in (0, 1], got {p0}")));
    }
    let gaps = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, stream_id(n as u64, t));
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let grid = InputGrid::from_values(&x, TiePolicy::Jitter { eps: 1e-15, seed: t })?;
            Ok(grid.max_gap(0.0)?.max_gap)
        })
        .collect::<Result<_>>()?;
    let bound = GAP_CONSTANT * (n as f64).ln() / (p0 * n as f64);
    Ok(MaxGapResult { n, p0, bound, gaps })
}

pub fn run_max_gap(spec: &MaxGapSpec) -> Result<Vec<MaxGapResult>> {
    spec.validate()?;
    spec.n_list.iter().map(|&n| simulate_max_gap(n, spec.p0, spec.trials, spec.seed)).collect()
}

pub fn write_max_gap_csv<W: Write>(results: &[MaxGapResult], w: W) -> Result<()> {
    let mut out = csv_writer(w, &["n", "trial", "max_gap", "bound", "violated"])?;
    for r in results {
        for (t, &g) in r.gaps.iter().enumerate() {
            out.write_record([r.n.to_string(), t.to_string(), fmt17(g), fmt17(r.bound), (g > r.bound).to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn max_gap_summary_json(spec: &MaxGapSpec, results: &[MaxGapResult]) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        n: usize,
        bound: F17,
        mean_max_gap: F17,
        largest_max_gap: F17,
        violations: usize,
        violation_rate: F17,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        experiment: &'static str,
        name: &'a str,
        generator: &'static str,
        seed: u64,
        p0: F17,
        trials: usize,
        results: Vec<Row>,
    }
    to_json(&Summary {
        experiment: "maxgap",
        name: &spec.name,
        generator: GENERATOR,
        seed: spec.seed,
        p0: F17(spec.p0),
        trials: spec.trials,
        results: results
            .iter()
            .map(|r| Row {
                n: r.n,
                bound: F17(r.bound),
                mean_max_gap: F17(r.gaps.iter().sum::<f64>() / r.gaps.len() as f64),
                largest_max_gap: F17(r.gaps.iter().copied().fold(0.0, f64::max)),
                violations: r.violations(),
                violation_rate: F17(r.violation_rate()),
            })
            .collect(),
    })
}

/// Knots of the rate-experiment truth.
pub const TRUTH_KNOTS: [f64; 3] = [0.25, 0.5, 0.75];
const TRUTH_WEIGHTS: [f64; 3] = [1.0, -2.0, 1.5];

/// Regression truth of order `k`: `s * sum_j w_j (x - t_j)_+^k` with knots
/// [`TRUTH_KNOTS`], weights `(1, -2, 1.5)` and `s` making `max |f| = 1` on `[0, 1]`.
/// At `k = 0`, `(x - t)_+^0` is the indicator of `x > t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTruth {
    pub k: usize,
    scale: f64,
}

impl RateTruth {
    pub fn new(k: usize) -> Self {
        let unscaled = Self { k, scale: 1.0 };
        let peak = (0..=4096).map(|i| unscaled.eval(i as f64 / 4096.0).abs()).fold(0.0, f64::max);
        Self { k, scale: 1.0 / peak }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let s: f64 = TRUTH_KNOTS
            .iter()
            .zip(TRUTH_WEIGHTS)
            .map(|(&t, w)| if x > t { w * (x - t).powi(self.k as i32) } else { 0.0 })
            .sum();
        self.scale * s
    }
}

fn default_rate_reps() -> usize {
    20
}

fn default_sigma() -> f64 {
    0.5
}

fn default_rate_sizes() -> Vec<usize> {
    vec![128, 256, 512, 1024, 2048, 4096]
}

fn default_calibration_reps() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfRateSpec {
    pub name: String,
    pub k: usize,
    #[serde(default = "default_rate_sizes")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_rate_reps")]
    pub reps: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub seed: u64,
    /// `lambda = c n^{1/(2k+3)}`; calibrated at the smallest `n` when absent.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default = "default_calibration_reps")]
    pub calibration_reps: usize,
}

impl TfRateSpec {
    pub fn validate(&self) -> Result<()> {
        check_name(&self.name)?;
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("n_list must be non-empty and strictly ascending".into()));
        }
        if self.n_list[0] < self.k + 2 {
            return Err(Error::InvalidConfig(format!("every n must be at least k + 2 = {}", self.k + 2)));
        }
        if self.reps == 0 || self.calibration_reps == 0 {
            return Err(Error::InvalidConfig("reps and calibration_reps must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be finite and non-negative, got {}", self.sigma)));
        }
        if let Some(c) = self.c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::InvalidConfig(format!("c must be finite and non-negative, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCell {
    pub n: usize,
    pub lambda: f64,
    pub mse: Vec<f64>,
    pub iterations: Vec<usize>,
}

impl RateCell {
    pub fn mean_mse(&self) -> f64 {
        self.mse.iter().sum::<f64>() / self.mse.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateResult {
    pub spec: TfRateSpec,
    pub c: f64,
    pub cells: Vec<RateCell>,
    /// Least-squares slope of `log mean MSE` against `log n` (absent if some MSE is zero).
    pub slope: Option<f64>,
}

impl RateResult {
    pub fn expected_slope(&self) -> f64 {
        let k = self.spec.k as f64;
        -(2.0 * k + 2.0) / (2.0 * k + 3.0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w, &["n", "repetition", "lambda", "mse", "iterations"])?;
        for c in &self.cells {
            for (r, (m, it)) in c.mse.iter().zip(&c.iterations).enumerate() {
                out.write_record([c.n.to_string(), r.to_string(), fmt17(c.lambda), fmt17(*m), it.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            n: usize,
            lambda: F17,
            mean_mse: F17,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            experiment: &'static str,
            name: &'a str,
            generator: &'static str,
            seed: u64,
            k: usize,
            sigma: F17,
            reps: usize,
            c: F17,
            truth: String,
            slope: Option<F17>,
            expected_slope: F17,
            cells: Vec<Row>,
        }
        to_json(&Summary {
            experiment: "tfrate",
            name: &self.spec.name,
            generator: GENERATOR,
            seed: self.spec.seed,
            k: self.spec.k,
            sigma: F17(self.spec.sigma),
            reps: self.spec.reps,
            c: F17(self.c),
            truth: format!(
                "scaled sum of w_j (x - t_j)_+^{} with t = {:?}, w = {:?}, max |f| = 1",
                self.spec.k, TRUTH_KNOTS, TRUTH_WEIGHTS
            ),
            slope: self.slope.map(F17),
            expected_slope: F17(self.expected_slope()),
            cells: self.cells.iter().map(|c| Row { n: c.n, lambda: F17(c.lambda), mean_mse: F17(c.mean_mse()) }).collect(),
        })
    }
}

/// Stream cell reserved for calibration draws.
const CALIBRATION_CELL: u64 = u32::MAX as u64;

/// Candidate constants `10^{-3}, 10^{-2.75}, ..., 10^{2}`.
pub fn calibration_grid() -> Vec<f64> {
    (0..=20).map(|i| 10f64.powf(-3.0 + 0.25 * i as f64)).collect()
}

fn rate_lambda(c: f64, n: usize, k: usize) -> f64 {
    c * (n as f64).powf(1.0 / (2 * k + 3) as f64)
}

/// One noisy draw of size `n` and its trend filtering error for each `lambda`.
fn rate_replicate(spec: &TfRateSpec, truth: &RateTruth, n: usize, stream: u64, lambdas: &[f64]) -> Result<Vec<(f64, usize)>> {
    let mut rng = stream_rng(spec.seed, stream);
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let grid = InputGrid::from_values(&x, TiePolicy::Jitter { eps: 1e-15, seed: stream })?;
    let f0: Vec<f64> = grid.points().iter().map(|&t| truth.eval(t)).collect();
    let y: Vec<f64> = f0
        .iter()
        .map(|f| {
            let e: f64 = StandardNormal.sample(&mut rng);
            f + spec.sigma * e
        })
        .collect();
    let config = SolverConfig::default();
    let base = TrendFilterProblem::new(grid, y, spec.k, 0.0)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let fit = fit(&base.with_lambda(lambda)?, &config)?.ensure_converged()?;
            let mse = fit.beta.iter().zip(&f0).map(|(b, f)| (b - f) * (b - f)).sum::<f64>() / n as f64;
            Ok((mse, fit.iterations))
        })
        .collect()
}

/// Mean squared error of trend filtering against a fixed truth as `n` grows,
/// with `lambda = c n^{1/(2k+3)}`.
pub fn simulate_tf_rate(spec: &TfRateSpec) -> Result<RateResult> {
    spec.validate()?;
    let truth = RateTruth::new(spec.k);
    let c = match spec.c {
        Some(c) => c,
        None => {
            let n = spec.n_list[0];
            let grid = calibration_grid();
            let lambdas: Vec<f64> = grid.iter().map(|&c| rate_lambda(c, n, spec.k)).collect();
            let runs: Vec<Vec<(f64, usize)>> = (0..spec.calibration_reps as u64)
                .into_par_iter()
                .map(|r| {
                    rate_replicate(spec, &truth, n, stream_id(CALIBRATION_CELL, r), &lambdas)
                        .map_err(|e| Error::Repetition { n, repetition: r as usize, source: Box::new(e) })
                })
                .collect::<Result<_>>()?;
            let risk = |j: usize| runs.iter().map(|run| run[j].0).sum::<f64>();
            let best = (0..grid.len()).min_by(|&a, &b| risk(a).total_cmp(&risk(b))).unwrap_or(0);
            grid[best]
        }
    };
    let mut cells = Vec::with_capacity(spec.n_list.len());
    for &n in &spec.n_list {
        let lambda = rate_lambda(c, n, spec.k);
        let runs: Vec<(f64, usize)> = (0..spec.reps as u64)
            .into_par_iter()
            .map(|r| {
                rate_replicate(spec, &truth, n, stream_id(n as u64, r), &[lambda])
                    .map(|v| v[0])
                    .map_err(|e| Error::Repetition { n, repetition: r as usize, source: Box::new(e) })
            })
            .collect::<Result<_>>()?;
        cells.push(RateCell { n, lambda, mse: runs.iter().map(|r| r.0).collect(), iterations: runs.iter().map(|r| r.1).collect() });
    }
    let slope = if cells.iter().all(|c| c.mean_mse() > 0.0) {
        let pts: Vec<(f64, f64)> = cells.iter().map(|c| ((c.n as f64).ln(), c.mean_mse().ln())).collect();
        Some(least_squares_slope(&pts))
    } else {
        None
    };
    Ok(RateResult { spec: spec.clone(), c, cells, slope })
}

pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let len = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / len;
    let my = points.iter().map(|p| p.1).sum::<f64>() / len;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Median per-cycle wall time of the fast and dense transforms at one size.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    /// `apply_h` followed by `apply_h_inverse`.
    pub h_seconds: f64,
    /// Dense `G` multiply followed by a solve with a precomputed LU factorization
    /// (only for `n <= DENSE_CAP`).
    pub g_seconds: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Times `f` over `inner` back-to-back calls, `reps` times, after one untimed call;
/// returns the median seconds per call.
fn time_cycles(reps: usize, inner: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for _ in 0..inner {
            f()?;
        }
        samples.push(start.elapsed().as_secs_f64() / inner as f64);
    }
    Ok(median(samples))
}

pub fn bench_transforms(n_list: &[usize], k: usize, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if reps == 0 || n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("need reps >= 1 and a strictly ascending n_list".into()));
    }
    n_list
        .iter()
        .map(|&n| {
            if n < k + 2 {
                return Err(Error::TooFewPoints { needed: k + 2, got: n });
            }
            let mut rng = stream_rng(seed, n as u64);
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let grid = InputGrid::from_values(&x, TiePolicy::Jitter { eps: 1e-15, seed })?.rescale_unit()?;
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut work = v.clone();
            let inner = ((1usize << 20) / n).max(1);
            let h_seconds = time_cycles(reps, inner, || {
                work.copy_from_slice(&v);
                apply_h(&mut work, &grid, k)?;
                apply_h_inverse(&mut work, &grid, k)?;
                std::hint::black_box(&work);
                Ok(())
            })?;
            let g_seconds = if n <= DENSE_CAP {
                let g = dense_truncated_power::<f64>(&grid, k)?.entries;
                let lu = DenseLu::factor(&g)?;
                let mut scratch = Vec::new();
                let inner = ((1usize << 22) / (n * n)).max(1);
                Some(time_cycles(reps, inner, || {
                    let mut w = g.matvec(&v);
                    lu.solve_in_place(&mut w, &mut scratch)?;
                    std::hint::black_box(&w);
                    Ok(())
                })?)
            } else {
                None
            };
            Ok(BenchRow { n, h_seconds, g_seconds })
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], k: usize, w: W) -> Result<()> {
    let mut out = csv_writer(w, &["n", "k", "h_seconds", "g_seconds"])?;
    for r in rows {
        out.write_record([r.n.to_string(), k.to_string(), fmt17(r.h_seconds), r.g_seconds.map(fmt17).unwrap_or_default()])?;
    }
    out.flush()?;
    Ok(())
}
