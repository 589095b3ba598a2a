//! Weighted LOWESS: local linear regression with a tricube kernel over the
//! `frac`-nearest neighbours and bisquare robustness reweighting.

use thiserror::Error;

pub const DEFAULT_FRAC: f64 = 2.0 / 3.0;
pub const DEFAULT_ITERS: usize = 3;
/// Number of evenly spaced evaluation points in a trend curve.
pub const GRID_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LowessError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("frac must lie in (0, 1], got {0}")]
    InvalidFrac(f64),
    #[error("point {0} has a non-finite coordinate or a negative weight")]
    InvalidPoint(usize),
    #[error("all weights are zero")]
    ZeroWeights,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPoint {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

impl From<(f64, f64, f64)> for WeightedPoint {
    fn from((x, y, w): (f64, f64, f64)) -> Self {
        WeightedPoint { x, y, w }
    }
}

fn tricube(u: f64) -> f64 {
    if u < 1.0 {
        let t = 1.0 - u * u * u;
        t * t * t
    } else {
        0.0
    }
}

fn bisquare(u: f64) -> f64 {
    if u.abs() < 1.0 {
        let t = 1.0 - u * u;
        t * t
    } else {
        0.0
    }
}

/// Neighbourhood size: `floor(frac * n)` clamped to `[2, n]`.
pub fn neighbourhood_size(frac: f64, n: usize) -> usize {
    (((frac * n as f64) + 1e-7) as usize).clamp(2, n)
}

struct Smoother {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    k: usize,
    range: f64,
}

impl Smoother {
    /// Start of the k-point window nearest to `x0`.
    fn window(&self, x0: f64) -> usize {
        let n = self.x.len();
        // Move right while the next point on the right is strictly closer
        // than the leftmost one; the predicate is monotone in `l`.
        let (mut lo, mut hi) = (0usize, n - self.k);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if x0 - self.x[mid] > self.x[mid + self.k] - x0 {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn fit_at(&self, x0: f64, robust: &[f64]) -> f64 {
        let l = self.window(x0);
        let r = l + self.k - 1;
        let h = (x0 - self.x[l]).max(self.x[r] - x0);
        let kernel = |xj: f64| {
            let d = (xj - x0).abs();
            if h > 0.0 {
                tricube(d / h)
            } else if d == 0.0 {
                1.0
            } else {
                0.0
            }
        };
        let mut weights: Vec<f64> = (l..=r).map(|j| kernel(self.x[j]) * self.w[j] * robust[j]).collect();
        if weights.iter().sum::<f64>() <= 0.0 {
            weights = (l..=r).map(|j| self.w[j] * robust[j]).collect();
        }
        let sw: f64 = weights.iter().sum();
        if sw <= 0.0 {
            return (l..=r).map(|j| self.y[j]).sum::<f64>() / self.k as f64;
        }
        let xbar = (l..=r).zip(&weights).map(|(j, w)| w * self.x[j]).sum::<f64>() / sw;
        let ybar = (l..=r).zip(&weights).map(|(j, w)| w * self.y[j]).sum::<f64>() / sw;
        let sxx = (l..=r)
            .zip(&weights)
            .map(|(j, w)| w * (self.x[j] - xbar).powi(2))
            .sum::<f64>();
        let sxy = (l..=r)
            .zip(&weights)
            .map(|(j, w)| w * (self.x[j] - xbar) * (self.y[j] - ybar))
            .sum::<f64>();
        if (sxx / sw).sqrt() > 1e-3 * self.range {
            ybar + sxy / sxx * (x0 - xbar)
        } else {
            ybar
        }
    }

    fn robustness_weights(&self, fitted: &[f64]) -> Option<Vec<f64>> {
        let resid: Vec<f64> = self.y.iter().zip(fitted).map(|(y, f)| y - f).collect();
        let mut abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let n = abs.len();
        let median = if n % 2 == 1 {
            abs[n / 2]
        } else {
            0.5 * (abs[n / 2 - 1] + abs[n / 2])
        };
        if median <= 0.0 {
            return None;
        }
        Some(resid.iter().map(|r| bisquare(r / (6.0 * median))).collect())
    }
}

/// Smooths `points` and evaluates the curve at `GRID_POINTS` evenly
/// spaced x positions from the smallest to the largest x.
///
/// Each of the `iters` robustness passes refits at every data point and
/// downweights large residuals with a bisquare on `residual / (6 · median
/// |residual|)`. Point weights multiply the kernel weights.
pub fn lowess_trend(points: &[WeightedPoint], frac: f64, iters: usize) -> Result<Vec<(f64, f64)>, LowessError> {
    let grid = |lo: f64, hi: f64| -> Vec<f64> {
        (0..GRID_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
            .collect()
    };
    let smoother = prepare(points, frac)?;
    let lo = smoother.x[0];
    let hi = smoother.x[smoother.x.len() - 1];
    let robust = robustness(&smoother, iters);
    Ok(grid(lo, hi)
        .into_iter()
        .map(|x0| (x0, smoother.fit_at(x0, &robust)))
        .collect())
}

/// Smoothed values at the data points themselves, in input order.
pub fn lowess_fit(points: &[WeightedPoint], frac: f64, iters: usize) -> Result<Vec<f64>, LowessError> {
    let smoother = prepare(points, frac)?;
    let robust = robustness(&smoother, iters);
    Ok(points.iter().map(|p| smoother.fit_at(p.x, &robust)).collect())
}

fn prepare(points: &[WeightedPoint], frac: f64) -> Result<Smoother, LowessError> {
    if points.len() < 3 {
        return Err(LowessError::TooFewPoints(points.len()));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(LowessError::InvalidFrac(frac));
    }
    for (i, p) in points.iter().enumerate() {
        if !p.x.is_finite() || !p.y.is_finite() || !p.w.is_finite() || p.w < 0.0 {
            return Err(LowessError::InvalidPoint(i));
        }
    }
    if points.iter().all(|p| p.w == 0.0) {
        return Err(LowessError::ZeroWeights);
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let n = sorted.len();
    let range = sorted[n - 1].x - sorted[0].x;
    Ok(Smoother {
        x: sorted.iter().map(|p| p.x).collect(),
        y: sorted.iter().map(|p| p.y).collect(),
        w: sorted.iter().map(|p| p.w).collect(),
        k: neighbourhood_size(frac, n),
        range,
    })
}

fn robustness(s: &Smoother, iters: usize) -> Vec<f64> {
    let mut robust = vec![1.0; s.x.len()];
    for _ in 0..iters {
        let fitted: Vec<f64> = s.x.iter().map(|&x0| s.fit_at(x0, &robust)).collect();
        match s.robustness_weights(&fitted) {
            Some(r) => robust = r,
            None => break,
        }
    }
    robust
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xy: impl Iterator<Item = (f64, f64)>) -> Vec<WeightedPoint> {
        xy.map(|(x, y)| WeightedPoint { x, y, w: 1.0 }).collect()
    }

    #[test]
    fn constant_curve() {
        let p = pts((0..20).map(|i| (i as f64 * 0.05, 0.3)));
        let curve = lowess_trend(&p, DEFAULT_FRAC, DEFAULT_ITERS).unwrap();
        assert_eq!(curve.len(), GRID_POINTS);
        assert!(curve.iter().all(|(_, y)| (y - 0.3).abs() < 1e-12));
        assert_eq!(curve[0].0, 0.0);
        assert!((curve[99].0 - 0.95).abs() < 1e-12);
    }

    #[test]
    fn exact_line_is_reproduced() {
        let p = pts((0..50).map(|i| {
            let x = i as f64 / 49.0;
            (x, 2.0 * x)
        }));
        let curve = lowess_trend(&p, 1.0, DEFAULT_ITERS).unwrap();
        for (x, y) in curve {
            assert!((y - 2.0 * x).abs() < 1e-9, "{x} {y}");
        }
    }

    #[test]
    fn errors() {
        let p = pts((0..2).map(|i| (i as f64, 0.0)));
        assert_eq!(lowess_trend(&p, 0.5, 3), Err(LowessError::TooFewPoints(2)));
        let p = pts((0..5).map(|i| (i as f64, 0.0)));
        assert_eq!(lowess_trend(&p, 0.0, 3), Err(LowessError::InvalidFrac(0.0)));
        assert_eq!(lowess_trend(&p, 1.5, 3), Err(LowessError::InvalidFrac(1.5)));
        let mut q = p.clone();
        q[2].w = -1.0;
        assert_eq!(lowess_trend(&q, 0.5, 3), Err(LowessError::InvalidPoint(2)));
        let z: Vec<_> = p.iter().map(|p| WeightedPoint { w: 0.0, ..*p }).collect();
        assert_eq!(lowess_trend(&z, 0.5, 3), Err(LowessError::ZeroWeights));
    }

    #[test]
    fn outlier_is_downweighted() {
        let mut p = pts((0..30).map(|i| {
            let x = i as f64;
            (x, 0.5 * x + 0.1 * (1.7 * x).sin())
        }));
        p[15].y += 100.0;
        let fit = lowess_fit(&p, 0.5, 3).unwrap();
        assert!((fit[15] - 7.5).abs() < 0.5, "{}", fit[15]);
        let naive = lowess_fit(&p, 0.5, 0).unwrap();
        assert!((naive[15] - 7.5).abs() > 1.0);
    }

    #[test]
    fn neighbourhood_clamps() {
        assert_eq!(neighbourhood_size(2.0 / 3.0, 3), 2);
        assert_eq!(neighbourhood_size(2.0 / 3.0, 30), 20);
        assert_eq!(neighbourhood_size(1.0, 7), 7);
        assert_eq!(neighbourhood_size(0.01, 7), 2);
    }
}
