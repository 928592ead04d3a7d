//! Unsigned squared-distance fields over a fixed scan.
//!
//! `D(x) = min_p ‖p − x‖²`, or, with `k_smooth = k > 1`, the mean squared
//! distance to the `k` nearest scan points. The gradient is the matching
//! mean of `2(x − p_j)`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::kdtree::{KdTree, Neighbor};
use crate::pseudo::PseudoSet;

/// Value, gradient and contributing neighbours of the field at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: Vec3,
    pub neighbors: Vec<Neighbor>,
}

/// Per-dimension field values for the active pseudo points, in pseudo order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug)]
pub struct DistanceField {
    tree: KdTree,
    k_smooth: usize,
    queries: AtomicU64,
}

impl DistanceField {
    pub fn build(cloud: &[Vec3], k_smooth: usize) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if k_smooth == 0 {
            return Err(Error::InvalidArgument("k_smooth must be at least 1".into()));
        }
        if k_smooth > cloud.len() {
            return Err(Error::KTooLarge {
                k: k_smooth,
                n: cloud.len(),
            });
        }
        if !cloud.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("field points"));
        }
        Ok(Self {
            tree: KdTree::new(cloud.to_vec()),
            k_smooth,
            queries: AtomicU64::new(0),
        })
    }

    pub fn points(&self) -> &[Vec3] {
        self.tree.points()
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn k_smooth(&self) -> usize {
        self.k_smooth
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    /// Number of field queries answered since the field was built.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    /// Value and gradient at `x` from a single neighbour search.
    pub fn sample(&self, x: &Vec3) -> FieldSample {
        self.queries.fetch_add(1, Ordering::Relaxed);
        let neighbors = if self.k_smooth == 1 {
            vec![self.tree.nearest(x)]
        } else {
            self.tree.knn(x, self.k_smooth)
        };
        let k = neighbors.len() as f64;
        let (sum, grad) = neighbors.iter().fold((0.0, Vec3::zeros()), |(s, g), n| {
            (s + n.sq_dist, g + (x - self.tree.points()[n.index]) * 2.0)
        });
        FieldSample {
            value: sum / k,
            gradient: grad / k,
            neighbors,
        }
    }

    pub fn query_distance(&self, x: &Vec3) -> f64 {
        self.sample(x).value
    }

    /// Gradient at `x` together with the scan points that produced it.
    pub fn query_gradient(&self, x: &Vec3) -> (Vec3, Vec<Vec3>) {
        let s = self.sample(x);
        let nearest = s
            .neighbors
            .iter()
            .map(|n| self.tree.points()[n.index])
            .collect();
        (s.gradient, nearest)
    }

    /// Raw nearest scan point, independent of `k_smooth`. Not counted as a
    /// field query.
    pub fn nearest(&self, x: &Vec3) -> Neighbor {
        self.tree.nearest(x)
    }

    pub fn evaluate_feature(&self, pseudo: &PseudoSet) -> Result<FeatureVector> {
        if pseudo.active_count() == 0 {
            return Err(Error::NoActivePseudoPoints);
        }
        Ok(self.evaluate_points(pseudo.active_points()))
    }

    /// Field values at an explicit list of points.
    pub fn evaluate_points<'a>(&self, pts: impl IntoIterator<Item = &'a Vec3>) -> FeatureVector {
        FeatureVector {
            values: pts.into_iter().map(|x| self.query_distance(x)).collect(),
        }
    }
}

pub fn build_field(cloud: &[Vec3], k_smooth: usize) -> Result<DistanceField> {
    DistanceField::build(cloud, k_smooth)
}

pub fn evaluate_feature(field: &DistanceField, pseudo: &PseudoSet) -> Result<FeatureVector> {
    field.evaluate_feature(pseudo)
}
