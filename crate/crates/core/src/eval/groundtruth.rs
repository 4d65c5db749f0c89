use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

pub const DEGREE: usize = 5;
/// Upper bound on the arclength between consecutive cached samples.
pub const CACHE_RESOLUTION: f64 = 0.01;

/// Least-squares polynomial in the monomial basis, lowest order first.
///
/// Columns are scaled by powers of max|x| before solving; the solve is rejected when
/// the scaled design matrix is numerically rank deficient.
pub fn fit_polynomial(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::Config("abscissae and ordinates differ in length".into()));
    }
    if n < degree + 1 {
        return Err(Error::RankDeficient(format!(
            "{n} points for a degree-{degree} fit"
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("polynomial fit input".into()));
    }
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let a = DMatrix::from_fn(n, degree + 1, |i, k| (xs[i] / scale).powi(k as i32));
    let b = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return Err(Error::RankDeficient(format!(
            "singular values span {smin:e}..{smax:e}; abscissae do not determine a degree-{degree} polynomial"
        )));
    }
    let c = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    Ok((0..=degree).map(|k| c[k] / scale.powi(k as i32)).collect())
}

pub fn eval_polynomial(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn eval_derivative(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
}

/// Quintic median line y = p(x) in a chord-aligned frame with a dense sample cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLine {
    pub origin: Point2,
    /// Unit vector along the chord (abscissa axis).
    pub axis: Point2,
    pub coeffs: Vec<f64>,
    pub x_range: [f64; 2],
    pub residual_rms: f64,
    cache: Vec<Point2>,
}

impl GroundTruthLine {
    /// Fit through `median` (ordered along the row); the cached curve extends
    /// `extend` metres past both ends along the abscissa.
    pub fn fit(median: &[Point2], extend: f64) -> Result<Self> {
        if median.len() < DEGREE + 1 {
            return Err(Error::RankDeficient(format!(
                "{} median points, need at least {}",
                median.len(),
                DEGREE + 1
            )));
        }
        let origin = median[0];
        let chord = median[median.len() - 1] - origin;
        if !(chord.norm() > 1e-9) {
            return Err(Error::RankDeficient("median has zero chord length".into()));
        }
        let axis = chord * (1.0 / chord.norm());
        let local: Vec<(f64, f64)> = median
            .iter()
            .map(|&p| {
                let d = p - origin;
                (d.dot(axis), axis.cross(d))
            })
            .collect();
        if local.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Geometry(
                "median is not a function of its chord abscissa".into(),
            ));
        }
        let xs: Vec<f64> = local.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = local.iter().map(|p| p.1).collect();
        let coeffs = fit_polynomial(&xs, &ys, DEGREE)?;
        let residual_rms = (xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| (eval_polynomial(&coeffs, x) - y).powi(2))
            .sum::<f64>()
            / xs.len() as f64)
            .sqrt();
        let x_range = [xs[0] - extend, xs[xs.len() - 1] + extend];
        let mut line = Self {
            origin,
            axis,
            coeffs,
            x_range,
            residual_rms,
            cache: Vec::new(),
        };
        line.build_cache();
        Ok(line)
    }

    fn build_cache(&mut self) {
        let [x0, x1] = self.x_range;
        let probe = 1000;
        let max_slope = (0..=probe)
            .map(|i| eval_derivative(&self.coeffs, x0 + (x1 - x0) * i as f64 / probe as f64).abs())
            .fold(0.0f64, f64::max);
        // Slack for slope peaks between probes.
        let dx = 0.9 * CACHE_RESOLUTION / (1.0 + (1.5 * max_slope).powi(2)).sqrt();
        let n = ((x1 - x0) / dx).ceil() as usize + 1;
        self.cache = (0..n)
            .map(|i| self.world_point(x0 + (x1 - x0) * i as f64 / (n - 1) as f64))
            .collect();
    }

    pub fn world_point(&self, x: f64) -> Point2 {
        let y = eval_polynomial(&self.coeffs, x);
        self.origin + self.axis * x + self.axis.perp() * y
    }

    pub fn cache(&self) -> &[Point2] {
        &self.cache
    }

    /// Distance to the cached polyline: nearest sample, refined over its two segments.
    pub fn distance(&self, p: Point2) -> f64 {
        let d2 = |q: &Point2| (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
        let (i, best) = self
            .cache
            .iter()
            .enumerate()
            .map(|(i, q)| (i, d2(q)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let seg = |a: Point2, b: Point2| {
            let ab = b - a;
            let t = ((p - a).dot(ab) / ab.dot(ab).max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
            d2(&(a + ab * t))
        };
        let mut m = best;
        if i > 0 {
            m = m.min(seg(self.cache[i - 1], self.cache[i]));
        }
        if i + 1 < self.cache.len() {
            m = m.min(seg(self.cache[i], self.cache[i + 1]));
        }
        m.sqrt()
    }
}

/// Sums behind MAE/RMSE so that aggregates can be pooled exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSums {
    pub n: usize,
    pub abs: f64,
    pub sq: f64,
}

impl ErrorSums {
    pub fn add(&mut self, e: f64) {
        self.n += 1;
        self.abs += e.abs();
        self.sq += e * e;
    }

    pub fn merge(&mut self, o: &ErrorSums) {
        self.n += o.n;
        self.abs += o.abs;
        self.sq += o.sq;
    }

    pub fn mae(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.abs / self.n as f64
        }
    }

    pub fn rmse(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.sq / self.n as f64).sqrt()
        }
    }
}

pub fn error_sums(trajectory: &[Point2], gt: &GroundTruthLine) -> ErrorSums {
    let mut s = ErrorSums::default();
    for &p in trajectory {
        s.add(gt.distance(p));
    }
    s
}

/// (MAE, RMSE) of the ground-truth distances along `trajectory`.
pub fn cross_track_errors(trajectory: &[Point2], gt: &GroundTruthLine) -> Result<(f64, f64)> {
    if trajectory.is_empty() {
        return Err(Error::Config("empty trajectory".into()));
    }
    let s = error_sums(trajectory, gt);
    Ok((s.mae(), s.rmse()))
}
