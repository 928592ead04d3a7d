//! Pseudo-point sets: generation, surface normals and truncation.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::DistanceField;
use crate::geometry::{bounding_box, centroid, Vec3};
use crate::kdtree::KdTree;

/// Six active dimensions are needed to constrain a rigid motion.
pub const MIN_ACTIVE: usize = 6;

/// Offsets shorter than this are exempt from the normal-angle test.
const ZERO_OFFSET: f64 = 1e-9;

/// A small auxiliary point set moved through the distance fields. Inactive
/// points are truncated dimensions and take no part in the solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSet {
    pub points: Vec<Vec3>,
    pub active: Vec<bool>,
    pub seed: u64,
}

impl PseudoSet {
    /// All points active.
    pub fn from_points(points: Vec<Vec3>, seed: u64) -> Self {
        let active = vec![true; points.len()];
        Self {
            points,
            active,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn active_points(&self) -> impl Iterator<Item = &Vec3> + '_ {
        self.points
            .iter()
            .zip(&self.active)
            .filter_map(|(p, &a)| a.then_some(p))
    }

    pub fn ensure_solvable(&self) -> Result<()> {
        let active = self.active_count();
        if active < MIN_ACTIVE {
            return Err(Error::TooFewActive {
                active,
                required: MIN_ACTIVE,
            });
        }
        Ok(())
    }
}

fn check_count(count: usize) -> Result<()> {
    if count < MIN_ACTIVE {
        return Err(Error::TooFewPoints {
            required: MIN_ACTIVE,
            got: count,
        });
    }
    Ok(())
}

/// `count` points drawn i.i.d. uniformly from the box `[min, max]`.
pub fn generate_uniform(bbox_min: Vec3, bbox_max: Vec3, count: usize, seed: u64) -> Result<PseudoSet> {
    check_count(count)?;
    if !(bbox_max - bbox_min).iter().all(|&e| e > 0.0 && e.is_finite()) {
        return Err(Error::DegenerateBox);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..count)
        .map(|_| {
            Vec3::from_fn(|i, _| rng.random_range(bbox_min[i]..=bbox_max[i]))
        })
        .collect();
    Ok(PseudoSet::from_points(points, seed))
}

/// Bounding box of `cloud` grown by `fraction` of its extent (half on each
/// side). Axes with no extent, such as the normal of a planar scan, are padded
/// by `fraction` of the largest extent instead.
pub fn inflated_bounding_box(cloud: &[Vec3], fraction: f64) -> Result<(Vec3, Vec3)> {
    let (lo, hi) = bounding_box(cloud).ok_or(Error::EmptyCloud)?;
    let extent = hi - lo;
    let largest = extent.max();
    if largest <= 0.0 {
        return Err(Error::DegenerateBox);
    }
    let pad = extent.map(|e| 0.5 * fraction * e.max(largest * fraction));
    Ok((lo - pad, hi + pad))
}

/// Each point is a uniformly chosen anchor plus an isotropic Gaussian offset.
pub fn generate_surface_gaussian(
    anchor_cloud: &[Vec3],
    count: usize,
    sigma: f64,
    seed: u64,
) -> Result<PseudoSet> {
    if anchor_cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    check_count(count)?;
    let normal = Normal::new(0.0, sigma)
        .ok()
        .filter(|_| sigma > 0.0)
        .ok_or_else(|| Error::InvalidArgument(format!("sigma must be positive, got {sigma}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..count)
        .map(|_| {
            let anchor = anchor_cloud[rng.random_range(0..anchor_cloud.len())];
            anchor + Vec3::from_fn(|_, _| normal.sample(&mut rng))
        })
        .collect();
    Ok(PseudoSet::from_points(points, seed))
}

/// Median distance from each point to its nearest other point.
pub fn median_spacing(cloud: &[Vec3]) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            got: cloud.len(),
        });
    }
    let tree = KdTree::new(cloud.to_vec());
    let mut spacing: Vec<f64> = cloud
        .par_iter()
        .map(|p| tree.knn(p, 2)[1].sq_dist.sqrt())
        .collect();
    let mid = (spacing.len() - 1) / 2;
    let (_, m, _) = spacing.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(*m)
}

/// Default Gaussian spread in units of the median point spacing.
pub const SIGMA_SPACINGS: f64 = 10.0;

/// Gaussian spread used when none is configured: [`SIGMA_SPACINGS`] times the
/// median point spacing, clamped to `[0.01, 0.5]` scene units.
pub fn default_sigma(cloud: &[Vec3]) -> Result<f64> {
    Ok((SIGMA_SPACINGS * median_spacing(cloud)?).clamp(0.01, 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalEstimate {
    pub normal: Vec3,
    /// `(λ_mid − λ_min) / λ_max` of the neighbourhood covariance: near 1 on a
    /// clean plane, 0 for collinear or isotropic neighbourhoods.
    pub planarity: f64,
}

/// PCA normals from the `k` nearest neighbours (the point itself included),
/// oriented away from the cloud centroid.
pub fn estimate_normals(cloud: &[Vec3], k: usize) -> Result<Vec<NormalEstimate>> {
    if k < 3 || cloud.len() < k {
        return Err(Error::TooFewPoints {
            required: k.max(3),
            got: cloud.len(),
        });
    }
    let tree = KdTree::new(cloud.to_vec());
    let center = centroid(cloud).ok_or(Error::EmptyCloud)?;
    Ok(cloud
        .par_iter()
        .map(|p| {
            let nbrs = tree.knn(p, k);
            let mean = nbrs.iter().fold(Vec3::zeros(), |acc, n| acc + cloud[n.index])
                / nbrs.len() as f64;
            let cov = nbrs.iter().fold(Matrix3::zeros(), |acc, n| {
                let d = cloud[n.index] - mean;
                acc + d * d.transpose()
            }) / nbrs.len() as f64;
            let eig = SymmetricEigen::new(cov);
            let mut idx = [0usize, 1, 2];
            idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let (l_min, l_mid, l_max) = (
                eig.eigenvalues[idx[0]].max(0.0),
                eig.eigenvalues[idx[1]].max(0.0),
                eig.eigenvalues[idx[2]].max(0.0),
            );
            let mut normal: Vec3 = eig.eigenvectors.column(idx[0]).normalize();
            if normal.dot(&(p - center)) < 0.0 {
                normal = -normal;
            }
            let planarity = if l_max > 0.0 {
                ((l_mid - l_min) / l_max).clamp(0.0, 1.0)
            } else {
                0.0
            };
            NormalEstimate { normal, planarity }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationParams {
    pub max_per_surface_point: usize,
    pub max_angle_deg: f64,
}

impl Default for TruncationParams {
    fn default() -> Self {
        Self {
            max_per_surface_point: 3,
            max_angle_deg: 30.0,
        }
    }
}

/// Applies both truncation filters and returns the new set without checking
/// how many points survive.
///
/// A point is dropped when more than `max_per_surface_point` active points
/// share its nearest scan point and it is not among the closest of them, or
/// when its offset from that scan point leaves the normal axis by more than
/// `max_angle_deg`.
pub fn truncate_mask(
    pseudo: &PseudoSet,
    field: &DistanceField,
    normals: &[NormalEstimate],
    params: &TruncationParams,
) -> Result<PseudoSet> {
    if normals.len() != field.len() {
        return Err(Error::InvalidArgument(format!(
            "{} normals for a field of {} points",
            normals.len(),
            field.len()
        )));
    }
    let cos_limit = params.max_angle_deg.to_radians().cos();
    let mut out = pseudo.clone();
    let mut groups: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();

    for i in pseudo.active_indices() {
        let x = pseudo.points[i];
        let nearest = field.nearest(&x);
        groups
            .entry(nearest.index)
            .or_default()
            .push((nearest.sq_dist, i));

        let offset = x - field.points()[nearest.index];
        let len = offset.norm();
        if len >= ZERO_OFFSET {
            let cos = offset.dot(&normals[nearest.index].normal).abs() / len;
            if cos < cos_limit {
                out.active[i] = false;
            }
        }
    }

    for members in groups.values_mut() {
        if members.len() > params.max_per_surface_point {
            members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, i) in &members[params.max_per_surface_point..] {
                out.active[i] = false;
            }
        }
    }
    Ok(out)
}

/// [`truncate_mask`] followed by the six-point solvability check.
pub fn truncate(
    pseudo: &PseudoSet,
    field: &DistanceField,
    normals: &[NormalEstimate],
    params: &TruncationParams,
) -> Result<PseudoSet> {
    let out = truncate_mask(pseudo, field, normals, params)?;
    out.ensure_solvable()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, spacing: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        pts
    }

    fn moments(points: &[Vec3]) -> (Vec3, Vec3) {
        let n = points.len() as f64;
        let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
        let var = points
            .iter()
            .fold(Vec3::zeros(), |a, p| a + (p - mean).component_mul(&(p - mean)))
            / n;
        (mean, var)
    }

    #[test]
    fn uniform_cube_bounds_and_determinism() {
        let lo = Vec3::repeat(-1.0);
        let hi = Vec3::repeat(1.0);
        let a = generate_uniform(lo, hi, 1000, 7).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a.active_count(), 1000);
        assert!(a.points.iter().all(|p| p.iter().all(|c| (-1.0..=1.0).contains(c))));
        assert_eq!(a, generate_uniform(lo, hi, 1000, 7).unwrap());
        assert_ne!(a, generate_uniform(lo, hi, 1000, 8).unwrap());
    }

    #[test]
    fn uniform_rejects_degenerate_box() {
        let r = generate_uniform(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0), 10, 0);
        assert!(matches!(r, Err(Error::DegenerateBox)));
    }

    #[test]
    fn uniform_moments() {
        let s = generate_uniform(Vec3::repeat(-1.0), Vec3::repeat(1.0), 1_000_000, 3).unwrap();
        let (mean, var) = moments(&s.points);
        for i in 0..3 {
            assert!(mean[i].abs() < 0.01);
            assert!((var[i] - 1.0 / 3.0).abs() < 0.02 / 3.0);
        }
    }

    #[test]
    fn gaussian_degenerate_sigma_hits_anchors() {
        let anchors = grid(5, 0.3);
        let s = generate_surface_gaussian(&anchors, 200, 1e-12, 4).unwrap();
        for p in &s.points {
            let d = anchors
                .iter()
                .map(|a| (a - p).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-9);
        }
        assert_eq!(s, generate_surface_gaussian(&anchors, 200, 1e-12, 4).unwrap());
    }

    #[test]
    fn gaussian_moments() {
        let s = generate_surface_gaussian(&[Vec3::zeros()], 100_000, 0.1, 12).unwrap();
        let (mean, var) = moments(&s.points);
        for i in 0..3 {
            assert!(mean[i].abs() < 0.002);
            assert!((var[i].sqrt() - 0.1).abs() < 0.003);
        }
    }

    #[test]
    fn gaussian_errors() {
        assert!(matches!(
            generate_surface_gaussian(&[], 10, 0.1, 0),
            Err(Error::EmptyCloud)
        ));
        assert!(generate_surface_gaussian(&[Vec3::zeros()], 10, 0.0, 0).is_err());
    }

    #[test]
    fn planar_normals() {
        let pts = grid(10, 0.1);
        for n in estimate_normals(&pts, 8).unwrap() {
            assert!((n.normal.z.abs() - 1.0).abs() < 1e-6);
            assert!((n.normal.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_normals() {
        // Fibonacci lattice: evenly spread, so every neighbourhood is balanced
        let n = 2000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Vec3> = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                Vec3::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect();
        for (p, n) in pts.iter().zip(estimate_normals(&pts, 10).unwrap()) {
            let cos = n.normal.dot(&p.normalize()).abs().min(1.0);
            assert!(cos.acos().to_degrees() < 5.0);
        }
    }

    #[test]
    fn collinear_normals_are_orthogonal_and_flagged() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0), Vec3::new(2.0, 2.0, 0.0)];
        let line = Vec3::new(1.0, 1.0, 0.0).normalize();
        for n in estimate_normals(&pts, 3).unwrap() {
            assert!(n.normal.dot(&line).abs() < 1e-9);
            assert!((n.normal.norm() - 1.0).abs() < 1e-9);
            assert!(n.planarity < 1e-9);
        }
        assert!(estimate_normals(&pts, 4).is_err());
        assert!(estimate_normals(&pts, 2).is_err());
    }

    #[test]
    fn on_surface_points_survive_truncation() {
        let surface = grid(6, 0.2);
        let field = DistanceField::build(&surface, 1).unwrap();
        let normals = estimate_normals(&surface, 8).unwrap();
        let pseudo = PseudoSet::from_points(surface.clone(), 0);
        let out = truncate(&pseudo, &field, &normals, &TruncationParams::default()).unwrap();
        assert_eq!(out.active_count(), surface.len());
    }

    #[test]
    fn redundant_neighbours_are_capped() {
        let surface = grid(6, 1.0);
        let field = DistanceField::build(&surface, 1).unwrap();
        let normals = estimate_normals(&surface, 8).unwrap();
        // ten points stacked above (2, 2, 0), along its normal
        let pts: Vec<Vec3> = (1..=10)
            .map(|i| Vec3::new(2.0, 2.0, 0.01 * i as f64))
            .collect();
        let pseudo = PseudoSet::from_points(pts, 0);
        let params = TruncationParams {
            max_per_surface_point: 2,
            max_angle_deg: 30.0,
        };
        let out = truncate_mask(&pseudo, &field, &normals, &params).unwrap();
        assert_eq!(out.active_indices(), vec![0, 1]);
        assert!(matches!(
            truncate(&pseudo, &field, &normals, &params),
            Err(Error::TooFewActive { active: 2, .. })
        ));
    }

    #[test]
    fn off_normal_points_are_dropped() {
        // plane z = 0 over [-2, 2]²; a point beyond the edge at (5, 0, 1e-3)
        // sits at ~89.98° from the normal of its nearest point (2, 0, 0)
        let mut surface = Vec::new();
        for i in -8..=8 {
            for j in -8..=8 {
                surface.push(Vec3::new(i as f64 * 0.25, j as f64 * 0.25, 0.0));
            }
        }
        let field = DistanceField::build(&surface, 1).unwrap();
        let normals = estimate_normals(&surface, 8).unwrap();
        let pts = vec![Vec3::new(0.0, 0.0, 0.5), Vec3::new(5.0, 0.0, 1e-3)];
        let angle = (3.0f64).atan2(1e-3).to_degrees();
        assert!(angle > 89.9);
        let pseudo = PseudoSet::from_points(pts, 0);
        let out = truncate_mask(&pseudo, &field, &normals, &TruncationParams::default()).unwrap();
        assert_eq!(out.active, vec![true, false]);
    }

    #[test]
    fn inflated_box_pads_flat_axes() {
        let (lo, hi) = inflated_bounding_box(&grid(3, 1.0), 0.1).unwrap();
        assert!((lo - Vec3::new(-0.1, -0.1, -0.01)).norm() < 1e-12);
        assert!((hi - Vec3::new(2.1, 2.1, 0.01)).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn truncation_is_sound_and_deterministic(
            seed in 0u64..1000,
            max_per in 1usize..5,
            angle in 5.0f64..80.0,
        ) {
            let surface = crate::io::generate_shape(crate::io::ShapeKind::Composite, 400, seed)
                .unwrap()
                .points;
            let field = DistanceField::build(&surface, 1).unwrap();
            let normals = estimate_normals(&surface, 10).unwrap();
            let mut pseudo = generate_surface_gaussian(&surface, 300, 0.05, seed).unwrap();
            for i in (0..pseudo.len()).step_by(7) {
                pseudo.active[i] = false;
            }
            let params = TruncationParams { max_per_surface_point: max_per, max_angle_deg: angle };
            let a = truncate_mask(&pseudo, &field, &normals, &params).unwrap();
            let b = truncate_mask(&pseudo, &field, &normals, &params).unwrap();
            prop_assert_eq!(&a, &b);
            for i in 0..pseudo.len() {
                prop_assert!(!a.active[i] || pseudo.active[i]);
            }
        }

        #[test]
        fn planar_offsets_within_angle_survive(
            x in -1.5f64..1.5, y in -1.5f64..1.5, h in 0.01f64..0.5,
        ) {
            let mut surface = Vec::new();
            for i in -40..=40 {
                for j in -40..=40 {
                    surface.push(Vec3::new(i as f64 * 0.05, j as f64 * 0.05, 0.0));
                }
            }
            let field = DistanceField::build(&surface, 1).unwrap();
            let normals = estimate_normals(&surface, 8).unwrap();
            let p = Vec3::new(x, y, h);
            let nearest = field.points()[field.nearest(&p).index];
            let offset = p - nearest;
            let offset_angle = (offset.z.abs() / offset.norm()).acos().to_degrees();
            let limit = 45.0;
            prop_assume!(offset_angle <= limit - 1e-6);
            let pseudo = PseudoSet::from_points(vec![p], 0);
            let params = TruncationParams { max_per_surface_point: 3, max_angle_deg: limit };
            let out = truncate_mask(&pseudo, &field, &normals, &params).unwrap();
            prop_assert!(out.active[0]);
        }
    }
}
