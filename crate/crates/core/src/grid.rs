//! Validated, strictly increasing input locations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// How duplicated input values are handled when building a grid.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TiePolicy {
    /// Duplicates are an error.
    #[default]
    Reject,
    /// Duplicates are separated by seeded perturbations of magnitude at most `eps`.
    Jitter { eps: f64, seed: u64 },
}

const JITTER_ATTEMPTS: u64 = 16;

/// Strictly increasing sample locations `x_1 < ... < x_n`, `n >= 1`.
///
/// Immutable once built; every other module takes its inputs through this type.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrid {
    points: Vec<f64>,
}

/// Largest gap between consecutive points, counting the gap from an origin to the first point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub max_gap: f64,
    /// Position in [`InputGrid::points`] of the right endpoint of the largest gap.
    pub argmax_index: usize,
}

impl InputGrid {
    /// Sorts `raw` and applies `tie_policy` to duplicated values.
    pub fn from_values(raw: &[f64], tie_policy: TiePolicy) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut points = raw.to_vec();
        points.sort_by(f64::total_cmp);
        match tie_policy {
            TiePolicy::Reject => {
                if let Some(v) = first_tie(&points) {
                    return Err(Error::TiesPresent { value: v });
                }
            }
            TiePolicy::Jitter { eps, seed } => {
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(Error::InvalidConfig(format!("jitter eps must be positive, got {eps}")));
                }
                let original = points.clone();
                let mut attempt = 0;
                while let Some(v) = first_tie(&points) {
                    if attempt == JITTER_ATTEMPTS {
                        return Err(Error::TiesPresent { value: v });
                    }
                    points.copy_from_slice(&original);
                    jitter_ties(&mut points, eps, seed, attempt);
                    points.sort_by(f64::total_cmp);
                    attempt += 1;
                }
            }
        }
        Ok(Self { points })
    }

    /// Wraps points that are already known to be strictly increasing and finite.
    pub fn from_sorted(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        for (i, w) in points.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(if w[1] == w[0] {
                    Error::TiesPresent { value: w[0] }
                } else {
                    Error::DimensionMismatch(format!("points not increasing at position {}", i + 1))
                });
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<f64> {
        self.points
    }

    /// `max(x_1 - origin, max_i x_i - x_{i-1})`.
    pub fn max_gap(&self, origin: f64) -> Result<GapReport> {
        let first = self.points[0];
        if origin > first {
            return Err(Error::OriginAboveFirstPoint { origin, first });
        }
        let mut report = GapReport { max_gap: first - origin, argmax_index: 0 };
        for (i, w) in self.points.windows(2).enumerate() {
            let gap = w[1] - w[0];
            if gap > report.max_gap {
                report = GapReport { max_gap: gap, argmax_index: i + 1 };
            }
        }
        Ok(report)
    }

    /// Affine map sending the smallest point to 0 and the largest to 1.
    pub fn rescale_unit(&self) -> Result<Self> {
        let n = self.points.len();
        if n < 2 {
            return Err(Error::DegenerateRange);
        }
        let lo = self.points[0];
        let span = self.points[n - 1] - lo;
        let mut points: Vec<f64> = self.points.iter().map(|&x| (x - lo) / span).collect();
        points[0] = 0.0;
        points[n - 1] = 1.0;
        // Extreme dynamic range can collapse neighbours after the division.
        if let Some(v) = first_tie(&points) {
            return Err(Error::TiesPresent { value: v });
        }
        Ok(Self { points })
    }
}

impl AsRef<[f64]> for InputGrid {
    fn as_ref(&self) -> &[f64] {
        &self.points
    }
}

fn first_tie(sorted: &[f64]) -> Option<f64> {
    sorted.windows(2).find(|w| w[0] == w[1]).map(|w| w[0])
}

fn jitter_ties(sorted: &mut [f64], eps: f64, seed: u64, attempt: u64) {
    let mut rng = stream_rng(seed, attempt);
    let n = sorted.len();
    let mut tied = vec![false; n];
    for i in 1..n {
        if sorted[i] == sorted[i - 1] {
            tied[i] = true;
            tied[i - 1] = true;
        }
    }
    for (v, _) in sorted.iter_mut().zip(&tied).filter(|(_, &t)| t) {
        *v += eps * rng.random_range(-1.0..=1.0);
    }
}
