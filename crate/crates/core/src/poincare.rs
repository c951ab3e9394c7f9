//! Geometry of the open unit (Poincare) ball.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Distance kept between iterates and the boundary.
pub const DEFAULT_EPS_BALL: f64 = 1e-5;

/// A point strictly inside the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    /// Wrap coordinates, rejecting anything at or beyond `1 - eps_ball / 2`.
    pub fn new(coords: Vec<f64>, eps_ball: f64) -> Result<Self> {
        check_domain(&coords, eps_ball)?;
        Ok(BallPoint(coords))
    }

    pub fn origin(dim: usize) -> Self {
        BallPoint(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.0).sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for BallPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dist_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_domain(x: &[f64], eps_ball: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite coordinate".into()));
    }
    let limit = 1.0 - eps_ball / 2.0;
    let n = norm_sq(x).sqrt();
    if n >= limit {
        return Err(Error::Domain { norm: n, limit });
    }
    Ok(())
}

/// Hyperbolic distance `arccosh(1 + 2|x-y|^2 / ((1-|x|^2)(1-|y|^2)))`.
///
/// Points at or beyond `1 - DEFAULT_EPS_BALL / 2` are rejected; retract them
/// with [`project_to_ball`] first.
pub fn poincare_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    poincare_distance_eps(x, y, DEFAULT_EPS_BALL)
}

pub fn poincare_distance_eps(x: &[f64], y: &[f64], eps_ball: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("dim {} vs {}", x.len(), y.len())));
    }
    check_domain(x, eps_ball)?;
    check_domain(y, eps_ball)?;
    Ok(distance_unchecked(x, y))
}

/// Distance without domain validation, for hot loops over points that are
/// already known to be inside the ball.
#[inline]
pub fn distance_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let alpha = 1.0 - norm_sq(x);
    let beta = 1.0 - norm_sq(y);
    let z = 2.0 * dist_sq(x, y) / (alpha * beta);
    // arccosh(1 + z) = ln(1 + z + sqrt(z (z + 2))), accurate for small z
    (z + (z * (z + 2.0)).sqrt()).ln_1p()
}

/// Euclidean gradient of the distance with respect to both arguments.
pub fn distance_grad(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nx = norm_sq(x);
    let ny = norm_sq(y);
    let alpha = 1.0 - nx;
    let beta = 1.0 - ny;
    let sq = dist_sq(x, y);
    let z = 2.0 * sq / (alpha * beta);
    let root = (z * (z + 2.0)).sqrt();
    if root <= 0.0 || !root.is_finite() {
        return (vec![0.0; x.len()], vec![0.0; y.len()]);
    }
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let cx = 4.0 / (beta * root);
    let cy = 4.0 / (alpha * root);
    let ax = (ny - 2.0 * xy + 1.0) / (alpha * alpha);
    let ay = (nx - 2.0 * xy + 1.0) / (beta * beta);
    let gx = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| cx * (ax * xi - yi / alpha))
        .collect();
    let gy = y
        .iter()
        .zip(x)
        .map(|(&yi, &xi)| cy * (ay * yi - xi / beta))
        .collect();
    (gx, gy)
}

/// Scale a Euclidean gradient by the inverse Poincare metric at `at`.
pub fn riemannian_rescale(euclidean_grad: &[f64], at: &[f64]) -> Vec<f64> {
    let a = 1.0 - norm_sq(at);
    let factor = a * a / 4.0;
    euclidean_grad.iter().map(|g| g * factor).collect()
}

/// Retract `x` so its norm is at most `1 - eps_ball`.
pub fn project_to_ball(x: &[f64], eps_ball: f64) -> Result<BallPoint> {
    let mut v = x.to_vec();
    project_in_place(&mut v, eps_ball)?;
    Ok(BallPoint(v))
}

pub(crate) fn project_in_place(x: &mut [f64], eps_ball: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite component in projection".into()));
    }
    let target = 1.0 - eps_ball;
    let n = norm_sq(x).sqrt();
    if n >= target {
        let s = target / n;
        x.iter_mut().for_each(|v| *v *= s);
        // rounding can leave the norm a hair above target
        while norm_sq(x).sqrt() > target {
            x.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
        }
    }
    Ok(())
}
