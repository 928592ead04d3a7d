//! Point-to-point ICP, used as the classical baseline.

use std::time::Instant;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::{centroid, nearest_rotation, RigidTransform, Vec3};
use crate::kdtree::KdTree;
use crate::registration::RegistrationReport;

#[derive(Debug, Clone, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Pairs farther apart than this are rejected.
    pub max_correspondence_dist: f64,
    /// Stop once the incremental motion (rotation angle plus translation
    /// norm) falls below this.
    pub convergence_tol: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            max_correspondence_dist: 1.0,
            convergence_tol: 1e-9,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1
            || !(self.max_correspondence_dist > 0.0)
            || !(self.convergence_tol > 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid ICP config {self:?}")));
        }
        Ok(())
    }
}

/// Least-squares rigid motion taking `src[i]` onto `dst[i]` (no scale).
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::InvalidArgument("kabsch needs paired point lists".into()));
    }
    let (cs, cd) = match (centroid(src), centroid(dst)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::EmptyCloud),
    };
    let cov = src
        .iter()
        .zip(dst)
        .fold(Matrix3::zeros(), |acc, (s, d)| acc + (d - cd) * (s - cs).transpose());
    let rotation = nearest_rotation(&cov);
    let translation = cd - rotation * cs;
    RigidTransform::new(rotation, translation)
}

pub fn icp_register(source: &[Vec3], target: &[Vec3], config: &IcpConfig) -> Result<RegistrationReport> {
    let start = Instant::now();
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::new(target.to_vec());
    let max_sq = config.max_correspondence_dist * config.max_correspondence_dist;

    let mut g = RigidTransform::identity();
    let mut residual_history = Vec::new();
    let mut active_history = Vec::new();
    let mut field_queries = Vec::new();
    let mut converged = false;

    for _ in 0..config.max_iterations {
        let moved = g.apply(source);
        let mut src = Vec::with_capacity(moved.len());
        let mut dst = Vec::with_capacity(moved.len());
        let mut total = 0.0;
        for p in &moved {
            let nb = tree.nearest(p);
            if nb.sq_dist <= max_sq {
                src.push(*p);
                dst.push(target[nb.index]);
                total += nb.sq_dist.sqrt();
            }
        }
        field_queries.push(moved.len() as u64);
        if src.is_empty() {
            return Err(Error::NoCorrespondences {
                max_dist: config.max_correspondence_dist,
            });
        }
        residual_history.push(total / src.len() as f64);
        active_history.push(src.len());

        let step = kabsch(&src, &dst)?;
        g = step.compose(&g);
        if step.rotation_angle() + step.translation().norm() < config.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(RegistrationReport {
        transform: g.orthonormalized(),
        iterations_run: residual_history.len(),
        active_dims: active_history.last().copied().unwrap_or(0),
        residual_history,
        active_history,
        converged,
        wall_time: start.elapsed(),
        field_queries,
    })
}
