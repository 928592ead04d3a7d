use crate::geometry::{bounding_box, RigidTransform, Vec3};

/// An ordered list of 3D points with optional per-point normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        bounding_box(&self.points)
    }

    /// Applies `g` to the points and rotates the normals along.
    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self {
            points: g.apply(&self.points),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| g.rotation() * n).collect()),
        }
    }
}

impl From<Vec<Vec3>> for PointCloud {
    fn from(points: Vec<Vec3>) -> Self {
        Self::new(points)
    }
}

impl AsRef<[Vec3]> for PointCloud {
    fn as_ref(&self) -> &[Vec3] {
        &self.points
    }
}
