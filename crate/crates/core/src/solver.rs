//! Linear least-squares solves for the twist update, plain and reweighted.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector6};

use crate::error::{Error, Result};
use crate::geometry::Twist;

/// Diagonal damping added to the normal equations.
pub const DAMPING: f64 = 1e-9;

/// Eigenvalues of `JᵀWJ` below this fraction of the largest are treated as null.
const RANK_TOL: f64 = 1e-12;

/// A twist solve needs at least this many constrained directions; the rest
/// receive no step.
pub const MIN_TWIST_RANK: usize = 4;

/// Solves `min Σ wᵢ (rᵢ − Jᵢ·x)²` through the damped normal equations,
/// restricted to the numerically non-null eigen-directions of `JᵀWJ`.
/// Fails when fewer than `min_rank` directions are constrained.
pub fn solve_least_squares(
    j: &DMatrix<f64>,
    r: &DVector<f64>,
    weights: Option<&[f64]>,
    min_rank: usize,
) -> Result<DVector<f64>> {
    let (rows, cols) = j.shape();
    if r.len() != rows || weights.is_some_and(|w| w.len() != rows) {
        return Err(Error::InvalidArgument(format!(
            "jacobian has {rows} rows but residual/weights do not match"
        )));
    }
    if r.iter().all(|&v| v == 0.0) {
        return Ok(DVector::zeros(cols));
    }
    let (h, b) = match weights {
        None => (j.tr_mul(j), j.tr_mul(r)),
        Some(w) => {
            let mut scaled = j.clone();
            let mut rw = r.clone();
            for (i, &wi) in w.iter().enumerate() {
                let s = wi.sqrt();
                scaled.row_mut(i).scale_mut(s);
                rw[i] *= s;
            }
            (scaled.tr_mul(&scaled), scaled.tr_mul(&rw))
        }
    };
    if !h.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("normal equations"));
    }
    let eig = SymmetricEigen::new(h);
    let largest = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut x = DVector::zeros(cols);
    let mut rank = 0;
    if largest > 0.0 {
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > RANK_TOL * largest {
                rank += 1;
                let v = eig.eigenvectors.column(k);
                x += v * (v.dot(&b) / (lambda + DAMPING));
            }
        }
    }
    if rank < min_rank {
        return Err(Error::SolverSingular { rank });
    }
    Ok(x)
}

/// L1 regression by iteratively reweighted least squares. Starting from
/// `x = 0`, each of the `inner_iters` rounds sets
/// `wᵢ = 1 / max(|rᵢ − Jᵢ·x|, delta)` and re-solves.
pub fn irls_least_squares(
    j: &DMatrix<f64>,
    r: &DVector<f64>,
    delta: f64,
    inner_iters: usize,
    min_rank: usize,
) -> Result<DVector<f64>> {
    if delta <= 0.0 {
        return Err(Error::InvalidArgument("IRLS delta must be positive".into()));
    }
    let mut x = DVector::zeros(j.ncols());
    if inner_iters == 0 {
        return solve_least_squares(j, r, None, min_rank);
    }
    for _ in 0..inner_iters {
        let resid = r - j * &x;
        let w: Vec<f64> = resid.iter().map(|e| 1.0 / e.abs().max(delta)).collect();
        x = solve_least_squares(j, r, Some(&w), min_rank)?;
    }
    Ok(x)
}

fn to_twist(x: &DVector<f64>) -> Twist {
    Twist::from_vector(&Vector6::from_iterator(x.iter().cloned()))
}

fn check_twist_shape(j: &DMatrix<f64>) -> Result<()> {
    if j.ncols() != 6 {
        return Err(Error::InvalidArgument(format!(
            "twist jacobian must have 6 columns, got {}",
            j.ncols()
        )));
    }
    if j.nrows() < 6 {
        return Err(Error::TooFewActive {
            active: j.nrows(),
            required: 6,
        });
    }
    Ok(())
}

/// Least-squares twist increment for `J Δξ = r`, optionally row-weighted.
pub fn solve_twist(j: &DMatrix<f64>, r: &[f64], weights: Option<&[f64]>) -> Result<Twist> {
    check_twist_shape(j)?;
    let r = DVector::from_column_slice(r);
    solve_least_squares(j, &r, weights, MIN_TWIST_RANK).map(|x| to_twist(&x))
}

/// L1 twist increment via IRLS.
pub fn irls_solve(j: &DMatrix<f64>, r: &[f64], delta: f64, inner_iters: usize) -> Result<Twist> {
    check_twist_shape(j)?;
    let r = DVector::from_column_slice(r);
    irls_least_squares(j, &r, delta, inner_iters, MIN_TWIST_RANK).map(|x| to_twist(&x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_identity_system() {
        let j = DMatrix::identity(6, 6);
        let mut r = [0.0; 6];
        r[0] = 1.0;
        let xi = solve_twist(&j, &r, None).unwrap().to_vector();
        assert!((xi - Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn zero_residual_gives_zero_step() {
        let j = DMatrix::from_fn(10, 6, |i, k| (i * 7 + k) as f64 % 3.0 - 1.0);
        assert_eq!(solve_twist(&j, &[0.0; 10], None).unwrap(), Twist::zero());
        assert_eq!(irls_solve(&j, &[0.0; 10], 1e-6, 3).unwrap(), Twist::zero());
    }

    #[test]
    fn matches_svd_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let j = DMatrix::from_fn(50, 6, |_, _| rng.random_range(-1.0..1.0));
            let r = DVector::from_fn(50, |_, _| rng.random_range(-1.0..1.0));
            let oracle = j.clone().svd(true, true).pseudo_inverse(1e-14).unwrap() * &r;
            let xi = solve_twist(&j, r.as_slice(), None).unwrap().to_vector();
            let rel = (DVector::from_column_slice(xi.as_slice()) - &oracle).norm() / oracle.norm();
            assert!(rel < 1e-9, "relative error {rel}");
        }
    }

    #[test]
    fn weighted_solve_scales_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = DMatrix::from_fn(30, 6, |_, _| rng.random_range(-1.0..1.0));
        let r = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
        let w: Vec<f64> = (0..30).map(|i| 0.5 + i as f64 / 10.0).collect();
        let mut js = j.clone();
        let mut rs = r.clone();
        for i in 0..30 {
            js.row_mut(i).scale_mut(w[i].sqrt());
            rs[i] *= w[i].sqrt();
        }
        let oracle = js.svd(true, true).pseudo_inverse(1e-14).unwrap() * rs;
        let x = solve_least_squares(&j, &r, Some(&w), 6).unwrap();
        assert!((x - &oracle).norm() / oracle.norm() < 1e-9);
    }

    #[test]
    fn rank_deficient_directions_get_no_step() {
        // column 5 never varies: rank 5 ≥ 4, solved without a rotation-z step
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let j = DMatrix::from_fn(20, 6, |_, k| if k == 5 { 0.0 } else { rng.random_range(-1.0..1.0) });
        let r: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let xi = solve_twist(&j, &r, None).unwrap();
        assert_eq!(xi.w.z, 0.0);
        // rank 2 is rejected
        let j2 = DMatrix::from_fn(20, 6, |i, k| if k < 2 { (i + k) as f64 } else { 0.0 });
        assert!(matches!(
            solve_twist(&j2, &r, None),
            Err(Error::SolverSingular { rank: 2 })
        ));
    }

    #[test]
    fn irls_equals_least_squares_for_equal_residuals() {
        let mut j = DMatrix::zeros(12, 6);
        let mut r = vec![0.0; 12];
        for k in 0..6 {
            j[(k, k)] = 1.0;
            j[(k + 6, k)] = -1.0;
            r[k] = 1.0;
            r[k + 6] = -1.0;
        }
        let ls = solve_twist(&j, &r, None).unwrap().to_vector();
        let l1 = irls_solve(&j, &r, 1e-6, 3).unwrap().to_vector();
        assert!((ls - l1).norm() <= 1e-6 * ls.norm());
    }

    #[test]
    fn irls_finds_the_median() {
        // location problem: L2 → mean 3.25, L1 → median 1
        let j = DMatrix::from_element(4, 1, 1.0);
        let r = DVector::from_vec(vec![1.0, 1.0, 1.0, 10.0]);
        let l2 = solve_least_squares(&j, &r, None, 1).unwrap()[0];
        assert!((l2 - 3.25).abs() < 1e-8);
        let l1 = irls_least_squares(&j, &r, 1e-6, 20, 1).unwrap()[0];
        assert!((l1 - 1.0).abs() < 1e-3, "{l1}");
    }

    #[test]
    fn shape_errors() {
        let j = DMatrix::identity(5, 6);
        assert!(matches!(
            solve_twist(&j, &[1.0; 5], None),
            Err(Error::TooFewActive { .. })
        ));
        let j = DMatrix::identity(6, 5);
        assert!(solve_twist(&j, &[1.0; 6], None).is_err());
    }
}
