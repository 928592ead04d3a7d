//! Pseudo-point implicit-field registration.
//!
//! Both scans stay fixed. A pseudo point set `A` is scored in the target
//! field once, then repeatedly pulled back through the current estimate
//! `G⁻¹` and scored in the source field. The feature residual
//! `D_target(A) − D_source(G⁻¹A)` is driven to zero by Gauss-Newton steps on
//! the twist, with the update `G ← G · exp(Δξ)`.
//!
//! Under that update a pulled-back point moves as `x ↦ exp(−Δξ)·x`, so the
//! warp Jacobian at `x` is the 3×6 block `[−I | [x]×]` and the row of `J` for
//! pseudo point `x` with field gradient `g` is `(−g, g × x)`.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{DistanceField, FeatureVector};
use crate::geometry::{RigidTransform, Twist, Vec3};
use crate::pseudo::{
    default_sigma, estimate_normals, generate_surface_gaussian, generate_uniform,
    inflated_bounding_box, truncate, truncate_mask, NormalEstimate, PseudoSet, TruncationParams,
    MIN_ACTIVE,
};
use crate::solver::{irls_solve, solve_twist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PseudoStrategy {
    /// Uniform in the target's bounding box, inflated by 10%.
    Uniform,
    /// Gaussian blobs around target points.
    SurfaceGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfrConfig {
    pub max_iterations: usize,
    pub pseudo_count: usize,
    pub use_irls: bool,
    pub irls_delta: f64,
    pub irls_inner_iters: usize,
    pub convergence_tol_twist: f64,
    pub convergence_tol_residual: f64,
    pub pseudo_strategy: PseudoStrategy,
    /// Gaussian spread for [`PseudoStrategy::SurfaceGaussian`]; derived from
    /// the target's point spacing when `None`.
    pub pseudo_sigma: Option<f64>,
    pub truncation: Option<TruncationParams>,
    /// Re-apply truncation to the pulled-back set at every iteration.
    pub retruncate_each_iteration: bool,
    pub k_smooth: usize,
    pub normal_k: usize,
    pub seed: u64,
}

impl Default for IfrConfig {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl IfrConfig {
    /// Clean object-scale data: uniform pseudo cube, plain least squares,
    /// no truncation, 10 iterations.
    pub fn synthetic() -> Self {
        Self {
            max_iterations: 10,
            pseudo_count: 1000,
            use_irls: false,
            irls_delta: 1e-6,
            irls_inner_iters: 3,
            convergence_tol_twist: 1e-7,
            convergence_tol_residual: 1e-9,
            pseudo_strategy: PseudoStrategy::Uniform,
            pseudo_sigma: None,
            truncation: None,
            retruncate_each_iteration: false,
            k_smooth: 1,
            normal_k: 10,
            seed: 0,
        }
    }

    /// Real scans: surface pseudo points, IRLS, truncation repeated at every
    /// iteration, 20 iterations.
    pub fn real() -> Self {
        Self {
            max_iterations: 20,
            use_irls: true,
            pseudo_strategy: PseudoStrategy::SurfaceGaussian,
            truncation: Some(TruncationParams::default()),
            retruncate_each_iteration: true,
            ..Self::synthetic()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if self.pseudo_count < 6 {
            return bad("pseudo_count must be at least 6");
        }
        if !(self.convergence_tol_twist > 0.0 && self.convergence_tol_residual > 0.0) {
            return bad("convergence tolerances must be positive");
        }
        if self.use_irls && !(self.irls_delta > 0.0) {
            return bad("irls_delta must be positive");
        }
        if self.k_smooth < 1 {
            return bad("k_smooth must be at least 1");
        }
        if self.pseudo_sigma.is_some_and(|s| !(s > 0.0)) {
            return bad("pseudo_sigma must be positive");
        }
        if let Some(t) = &self.truncation {
            if t.max_per_surface_point < 1 || !(t.max_angle_deg > 0.0) {
                return bad("truncation parameters must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationReport {
    /// Maps the source scan onto the target scan.
    pub transform: RigidTransform,
    pub iterations_run: usize,
    /// L2 norm of the feature residual at the start of each iteration.
    pub residual_history: Vec<f64>,
    /// Active residual dimensions per iteration.
    pub active_history: Vec<usize>,
    pub active_dims: usize,
    pub converged: bool,
    pub wall_time: Duration,
    /// Field queries issued on the moving side in each iteration.
    pub field_queries: Vec<u64>,
}

impl RegistrationReport {
    pub fn final_residual(&self) -> Option<f64> {
        self.residual_history.last().copied()
    }
}

/// Linearization of the pulled-back feature around the current estimate.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// `L_active × 6`, twist ordered `(v, w)`.
    pub jacobian: DMatrix<f64>,
    pub values: FeatureVector,
    /// Field neighbour indices used for each row.
    pub assignments: Vec<Vec<usize>>,
}

/// Evaluates the source field at the pulled-back pseudo points and builds
/// the analytical Jacobian, one field query per point.
pub fn assemble_jacobian(field_source: &DistanceField, pseudo_current: &[Vec3]) -> Linearization {
    let n = pseudo_current.len();
    let mut jacobian = DMatrix::zeros(n, 6);
    let mut values = Vec::with_capacity(n);
    let mut assignments = Vec::with_capacity(n);
    for (i, x) in pseudo_current.iter().enumerate() {
        let s = field_source.sample(x);
        let g = s.gradient;
        let gx = g.cross(x);
        for k in 0..3 {
            jacobian[(i, k)] = -g[k];
            jacobian[(i, 3 + k)] = gx[k];
        }
        values.push(s.value);
        assignments.push(s.neighbors.iter().map(|nb| nb.index).collect());
    }
    Linearization {
        jacobian,
        values: FeatureVector { values },
        assignments,
    }
}

/// Generates the pseudo set for a target scan according to `config`.
pub fn generate_pseudo(target: &[Vec3], config: &IfrConfig) -> Result<PseudoSet> {
    match config.pseudo_strategy {
        PseudoStrategy::Uniform => {
            let (lo, hi) = inflated_bounding_box(target, 0.1)?;
            generate_uniform(lo, hi, config.pseudo_count, config.seed)
        }
        PseudoStrategy::SurfaceGaussian => {
            let sigma = match config.pseudo_sigma {
                Some(s) => s,
                None if target.len() >= 2 => default_sigma(target)?,
                None => 0.01,
            };
            generate_surface_gaussian(target, config.pseudo_count, sigma, config.seed)
        }
    }
}

/// Everything fixed for the lifetime of one registration.
pub struct Problem {
    pub source_field: DistanceField,
    pub target_field: DistanceField,
    pub pseudo: PseudoSet,
    pub target_feature: FeatureVector,
    source_normals: Option<Vec<NormalEstimate>>,
}

impl Problem {
    pub fn new(source: &[Vec3], target: &[Vec3], config: &IfrConfig) -> Result<Self> {
        config.validate()?;
        if source.is_empty() || target.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let source_field = DistanceField::build(source, config.k_smooth)?;
        let target_field = DistanceField::build(target, config.k_smooth)?;
        let mut pseudo = generate_pseudo(target, config)?;
        let mut source_normals = None;
        if let Some(params) = &config.truncation {
            let normals = estimate_normals(target, config.normal_k.min(target.len()))?;
            pseudo = truncate(&pseudo, &target_field, &normals, params)?;
            if config.retruncate_each_iteration {
                source_normals = Some(estimate_normals(source, config.normal_k.min(source.len()))?);
            }
        }
        pseudo.ensure_solvable()?;
        let target_feature = target_field.evaluate_feature(&pseudo)?;
        Ok(Self {
            source_field,
            target_field,
            pseudo,
            target_feature,
            source_normals,
        })
    }

    /// Runs the Gauss-Newton loop from `initial`.
    pub fn solve(&self, config: &IfrConfig, initial: &RigidTransform) -> Result<RegistrationReport> {
        let start = Instant::now();
        let mut anchors: Vec<Vec3> = self.pseudo.active_points().copied().collect();
        let mut target_values = self.target_feature.values.clone();

        let mut g = *initial;
        let mut residual_history = Vec::with_capacity(config.max_iterations);
        let mut active_history = Vec::with_capacity(config.max_iterations);
        let mut field_queries = Vec::with_capacity(config.max_iterations);
        let mut converged = false;

        for _ in 0..config.max_iterations {
            let g_inv = g.inverse();
            let mut moved: Vec<Vec3> = anchors.iter().map(|a| g_inv.apply_point(a)).collect();

            if let (Some(params), Some(normals)) = (&config.truncation, &self.source_normals) {
                let current = PseudoSet::from_points(moved.clone(), self.pseudo.seed);
                let mask = truncate_mask(&current, &self.source_field, normals, params)?.active;
                let survivors = mask.iter().filter(|&&a| a).count();
                if survivors >= MIN_ACTIVE && survivors < mask.len() {
                    let keep = |v: &mut Vec<_>| {
                        let mut it = mask.iter();
                        v.retain(|_| *it.next().unwrap());
                    };
                    keep(&mut anchors);
                    keep(&mut moved);
                    let mut it = mask.iter();
                    target_values.retain(|_| *it.next().unwrap());
                }
            }

            let before = self.source_field.query_count();
            let lin = assemble_jacobian(&self.source_field, &moved);
            field_queries.push(self.source_field.query_count() - before);

            let residual: Vec<f64> = target_values
                .iter()
                .zip(&lin.values.values)
                .map(|(t, c)| t - c)
                .collect();
            if !residual.iter().all(|r| r.is_finite()) {
                return Err(Error::NonFinite("feature residual"));
            }
            let norm = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
            let previous = residual_history.last().copied();
            residual_history.push(norm);
            active_history.push(residual.len());

            if norm == 0.0 {
                converged = true;
                break;
            }
            if let Some(prev) = previous {
                if prev > 0.0 && ((prev - norm) / prev).abs() < config.convergence_tol_residual {
                    converged = true;
                    break;
                }
            }

            let step: Twist = if config.use_irls {
                irls_solve(&lin.jacobian, &residual, config.irls_delta, config.irls_inner_iters)?
            } else {
                solve_twist(&lin.jacobian, &residual, None)?
            };
            if !step.is_finite() {
                return Err(Error::NonFinite("twist update"));
            }
            g = g.compose(&step.exp());
            if step.norm() < config.convergence_tol_twist {
                converged = true;
                break;
            }
        }

        Ok(RegistrationReport {
            transform: g.orthonormalized(),
            iterations_run: residual_history.len(),
            active_dims: active_history.last().copied().unwrap_or(anchors.len()),
            residual_history,
            active_history,
            converged,
            wall_time: start.elapsed(),
            field_queries,
        })
    }
}

/// Aligns `source` to `target`; the returned transform maps source points
/// into the target frame.
pub fn register(source: &[Vec3], target: &[Vec3], config: &IfrConfig) -> Result<RegistrationReport> {
    let start = Instant::now();
    let problem = Problem::new(source, target, config)?;
    let mut report = problem.solve(config, &RigidTransform::identity())?;
    report.wall_time = start.elapsed();
    Ok(report)
}
