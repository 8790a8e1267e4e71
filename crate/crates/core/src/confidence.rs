//! Per-episode confidence sets, their running intersection, and rejection
//! sampling from the feasible region.
//!
//! One episode's data constrains the closed-loop image `theta * ext` of a
//! candidate parameter in a V-weighted norm around the least-squares center;
//! the overall region is an operator-norm ball (the trusted stabilizing set)
//! intersected with every ellipsoid collected so far. Intersections are
//! conjunctive, so appending a set can only shrink the region.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{op_norm_2, sym_sqrt_psd, symmetrize};
use crate::lqmodel::DynamicsParameter;

/// One weighted confidence set for the closed-loop matrix.
#[derive(Debug, Clone)]
pub struct ConfidenceEllipsoid {
    /// Least-squares center (the episode's estimate of the closed loop).
    pub center: DMatrix<f64>,
    /// Episode empirical covariance V (PSD weight of the metric).
    pub weight: DMatrix<f64>,
    /// Extended feedback `[I; L]` the episode was driven by.
    pub feedback_ext: DMatrix<f64>,
    pub radius: f64,
    pub episode: usize,
    weight_sqrt: DMatrix<f64>,
}

impl ConfidenceEllipsoid {
    pub fn new(
        center: DMatrix<f64>,
        mut weight: DMatrix<f64>,
        feedback_ext: DMatrix<f64>,
        radius: f64,
        episode: usize,
    ) -> Result<Self> {
        let p = center.nrows();
        if center.ncols() != p || weight.nrows() != p || weight.ncols() != p {
            return Err(Error::Dimension("ellipsoid center and weight must be p x p".into()));
        }
        if feedback_ext.ncols() != p || feedback_ext.nrows() < p {
            return Err(Error::Dimension("extended feedback must be q x p with q >= p".into()));
        }
        let top = feedback_ext.view((0, 0), (p, p));
        if (top - DMatrix::identity(p, p)).norm() > 1e-12 {
            return Err(Error::InvalidArgument(
                "extended feedback must carry the identity as its top block".into(),
            ));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        symmetrize(&mut weight);
        let weight_sqrt = sym_sqrt_psd(&weight)?;
        Ok(Self { center, weight, feedback_ext, radius, episode, weight_sqrt })
    }

    /// Squared weighted deviation `|V^{1/2} (theta ext - center)'|_2^2`.
    pub fn deviation(&self, theta: &DynamicsParameter) -> Result<f64> {
        let closed = theta.apply_extended(&self.feedback_ext)?;
        let diff = (closed - &self.center).transpose();
        Ok(op_norm_2(&(&self.weight_sqrt * diff)).powi(2))
    }

    /// Boundary-inclusive membership.
    pub fn contains(&self, theta: &DynamicsParameter) -> Result<bool> {
        Ok(self.deviation(theta)? <= self.radius)
    }
}

/// Stabilizing ball intersected with the accumulated ellipsoids.
#[derive(Debug, Clone)]
pub struct ParameterRegion {
    pub ball_center: DynamicsParameter,
    pub ball_radius: f64,
    pub ellipsoids: Vec<ConfidenceEllipsoid>,
}

impl ParameterRegion {
    pub fn ball(center: DynamicsParameter, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("ball radius must be nonnegative, got {radius}")));
        }
        Ok(Self { ball_center: center, ball_radius: radius, ellipsoids: Vec::new() })
    }

    /// Appends a confidence set; the region can only shrink.
    pub fn intersect(&mut self, ellipsoid: ConfidenceEllipsoid) {
        self.ellipsoids.push(ellipsoid);
    }

    pub fn contains(&self, theta: &DynamicsParameter) -> Result<bool> {
        if theta.distance(&self.ball_center)? > self.ball_radius {
            return Ok(false);
        }
        for e in &self.ellipsoids {
            if !e.contains(theta)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Region membership test (ball and every ellipsoid, boundaries inclusive).
pub fn contains(region: &ParameterRegion, theta: &DynamicsParameter) -> Result<bool> {
    region.contains(theta)
}

/// Result of rejection sampling from a region.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub accepted: Vec<DynamicsParameter>,
    pub proposals: u64,
    pub acceptance_rate: f64,
}

/// Draws up to `count` parameters from the region.
///
/// Proposals are uniform on the entry-space (Frobenius) ball of the region's
/// radius around its center: a uniform direction in the p*q-dimensional
/// entry space with radius `R u^{1/(pq)}`. Every such proposal already lies
/// in the operator-norm ball, so plain ball regions accept at rate one;
/// ellipsoids thin the acceptance set. Stops after `max_rejections`
/// consecutive rejected proposals and reports an empty-region diagnostic if
/// nothing was accepted at all.
pub fn sample_feasible(
    region: &ParameterRegion,
    count: usize,
    rng: &mut impl Rng,
    max_rejections: u64,
) -> Result<SampleOutcome> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least one".into()));
    }
    let p = region.ball_center.state_dim();
    let r = region.ball_center.input_dim();
    let dims = p * (p + r);
    let center = region.ball_center.stacked();

    let mut accepted = Vec::with_capacity(count);
    let mut proposals: u64 = 0;
    let mut rejected_streak: u64 = 0;
    while accepted.len() < count && rejected_streak < max_rejections {
        proposals += 1;
        let theta = if region.ball_radius == 0.0 {
            region.ball_center.clone()
        } else {
            let mut dir = DVector::from_fn(dims, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = dir.norm();
            if norm == 0.0 {
                continue;
            }
            dir /= norm;
            let u: f64 = rng.random::<f64>();
            let radius = region.ball_radius * u.powf(1.0 / dims as f64);
            let mut stacked = center.clone();
            for (idx, value) in dir.iter().enumerate() {
                stacked[(idx / (p + r), idx % (p + r))] += radius * value;
            }
            DynamicsParameter::from_stacked(&stacked, r)?
        };
        if region.contains(&theta)? {
            accepted.push(theta);
            rejected_streak = 0;
        } else {
            rejected_streak += 1;
        }
    }
    if accepted.is_empty() {
        return Err(Error::EmptyRegion { rejections: proposals });
    }
    let rate = accepted.len() as f64 / proposals as f64;
    Ok(SampleOutcome { accepted, proposals, acceptance_rate: rate })
}
