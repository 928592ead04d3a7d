//! Benchmark protocol: sampled ground-truth motions, pair synthesis, error
//! metrics, aggregate statistics, the ablation grid and chained odometry.

use std::fmt::Write as _;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{bounding_box, RigidTransform, Vec3};
use crate::icp::{icp_register, IcpConfig};
use crate::pseudo::TruncationParams;
use crate::registration::{register, IfrConfig, PseudoStrategy, RegistrationReport};

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    /// Rotation angles are drawn uniformly from `[rotation_min_deg, rotation_max_deg]`.
    pub rotation_min_deg: f64,
    pub rotation_max_deg: f64,
    pub translation_max: f64,
    /// Gaussian noise added to every point of both clouds.
    pub noise_sigma: f64,
    /// Fraction of source points kept.
    pub keep_fraction: f64,
    /// Approximate fraction of shared surface after cropping both clouds.
    pub overlap_fraction: f64,
    /// Fraction of source points replaced by uniform outliers.
    pub outlier_fraction: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            rotation_min_deg: 0.0,
            rotation_max_deg: 45.0,
            translation_max: 0.8,
            noise_sigma: 0.0,
            keep_fraction: 1.0,
            overlap_fraction: 1.0,
            outlier_fraction: 0.0,
            trials: 10,
            seed: 0,
        }
    }
}

impl TrialSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.rotation_min_deg
            && self.rotation_min_deg <= self.rotation_max_deg
            && self.rotation_max_deg <= 180.0
            && self.translation_max >= 0.0
            && self.noise_sigma >= 0.0
            && self.keep_fraction > 0.0
            && self.keep_fraction <= 1.0
            && self.overlap_fraction > 0.0
            && self.overlap_fraction <= 1.0
            && (0.0..1.0).contains(&self.outlier_fraction)
            && self.trials >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid trial spec {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub cloud_id: usize,
    pub trial: usize,
    pub method: String,
    pub rre_deg: f64,
    pub rte: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: Duration,
    pub config_hash: u64,
    /// Set when the method failed; errors are then measured against identity.
    pub error: Option<String>,
}

/// Random rigid motion with axis and translation direction uniform on the
/// sphere, angle uniform in `[rot_min_deg, rot_max_deg]` and translation
/// length uniform in `[0, translation_max]`.
pub fn sample_transform_with(
    rng: &mut impl Rng,
    rot_min_deg: f64,
    rot_max_deg: f64,
    translation_max: f64,
) -> RigidTransform {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = if rot_max_deg > rot_min_deg {
        rng.random_range(rot_min_deg..=rot_max_deg)
    } else {
        rot_min_deg
    };
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let len = if translation_max > 0.0 {
        rng.random_range(0.0..=translation_max)
    } else {
        0.0
    };
    let r = RigidTransform::from_axis_angle(&Vec3::from(axis), angle.to_radians());
    RigidTransform::new(*r.rotation(), Vec3::from(dir) * len).expect("rotation from axis-angle")
}

pub fn sample_transform(rotation_max_deg: f64, translation_max: f64, seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_transform_with(&mut rng, 0.0, rotation_max_deg, translation_max)
}

/// Geodesic angle between the two rotations, in degrees. Evaluated with
/// `atan2` rather than `acos` so that tiny errors are not quantised.
pub fn rre(pred: &RigidTransform, truth: &RigidTransform) -> f64 {
    crate::geometry::rotation_angle(&(truth.rotation().transpose() * pred.rotation())).to_degrees()
}

/// Length of the translation of `truth⁻¹ · pred`.
pub fn rte(pred: &RigidTransform, truth: &RigidTransform) -> f64 {
    truth.inverse().compose(pred).translation().norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub rmse_rot: f64,
    pub median_rot: f64,
    pub rmse_trans: f64,
    pub median_trans: f64,
    /// `(threshold_deg, fraction with rre ≤ threshold)` on a log grid.
    pub success_curve: Vec<(f64, f64)>,
}

/// Thresholds `10^-6 … 10^2` degrees, four per decade.
pub fn success_thresholds() -> Vec<f64> {
    (0..=32).map(|i| 10f64.powf(-6.0 + i as f64 / 4.0)).collect()
}

pub fn rmse(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Lower median: element `(n − 1) / 2` of the sorted values.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

pub fn success_rate(results: &[TrialResult], threshold_deg: f64) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.rre_deg <= threshold_deg).count() as f64 / results.len() as f64
}

pub fn aggregate(results: &[TrialResult]) -> Result<Summary> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let rot: Vec<f64> = results.iter().map(|r| r.rre_deg).collect();
    let trans: Vec<f64> = results.iter().map(|r| r.rte).collect();
    Ok(Summary {
        count: results.len(),
        rmse_rot: rmse(&rot),
        median_rot: lower_median(&rot),
        rmse_trans: rmse(&trans),
        median_trans: lower_median(&trans),
        success_curve: success_thresholds()
            .into_iter()
            .map(|t| (t, success_rate(results, t)))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Ifr(IfrConfig),
    Icp(IcpConfig),
}

impl Method {
    pub fn run(&self, source: &[Vec3], target: &[Vec3]) -> Result<RegistrationReport> {
        match self {
            Method::Ifr(c) => register(source, target, c),
            Method::Icp(c) => icp_register(source, target, c),
        }
    }

    /// Stable 64-bit FNV-1a hash of the configuration.
    pub fn config_hash(&self) -> u64 {
        format!("{self:?}").bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    fn with_seed(&self, seed: u64) -> Self {
        match self {
            Method::Ifr(c) => Method::Ifr(IfrConfig { seed, ..c.clone() }),
            other => other.clone(),
        }
    }
}

/// A method under a row label.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMethod {
    pub label: String,
    pub method: Method,
}

impl NamedMethod {
    pub fn new(label: impl Into<String>, method: Method) -> Self {
        Self {
            label: label.into(),
            method,
        }
    }
}

/// The eight `{IRLS} × {truncation} × {pseudo strategy}` variants of `base`,
/// numbered `#1 … #8` with the IRLS switch slowest and the strategy fastest.
pub fn ablation_methods(base: &IfrConfig) -> Vec<NamedMethod> {
    let mut rows = Vec::with_capacity(8);
    for irls in [false, true] {
        for trunc in [false, true] {
            for strategy in [PseudoStrategy::Uniform, PseudoStrategy::SurfaceGaussian] {
                let n = rows.len() + 1;
                let label = format!(
                    "#{n} {}irls {}trunc {}",
                    if irls { "" } else { "no-" },
                    if trunc { "" } else { "no-" },
                    match strategy {
                        PseudoStrategy::Uniform => "uniform",
                        PseudoStrategy::SurfaceGaussian => "surface",
                    }
                );
                let config = IfrConfig {
                    use_irls: irls,
                    truncation: trunc.then(|| base.truncation.unwrap_or_default()),
                    pseudo_strategy: strategy,
                    ..base.clone()
                };
                rows.push(NamedMethod::new(label, Method::Ifr(config)));
            }
        }
    }
    rows
}

/// SplitMix64 finaliser.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn trial_seed(seed: u64, cloud_id: usize, trial: usize) -> u64 {
    mix_seed(mix_seed(mix_seed(seed) ^ cloud_id as u64) ^ trial as u64)
}

/// Keeps the `keep` fraction of points with the smallest projection on a
/// random direction.
fn crop_half_space(points: &[Vec3], keep: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    if keep >= 1.0 {
        return points.to_vec();
    }
    let dir = Vec3::from(<UnitSphere as Distribution<[f64; 3]>>::sample(&UnitSphere, rng));
    let mut order: Vec<(f64, usize)> = points.iter().map(|p| p.dot(&dir)).zip(0..).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = ((points.len() as f64 * keep).round() as usize).clamp(1, points.len());
    let mut kept: Vec<usize> = order[..n].iter().map(|(_, i)| *i).collect();
    kept.sort_unstable();
    kept.into_iter().map(|i| points[i]).collect()
}

/// A synthetic registration pair: `truth` maps `source` onto `target`.
#[derive(Debug, Clone)]
pub struct TrialPair {
    pub source: Vec<Vec3>,
    pub target: Vec<Vec3>,
    pub truth: RigidTransform,
}

/// Builds the pair for one trial. The source is the (subsampled) cloud, the
/// target is the cloud moved by the sampled motion; each side is cropped by a
/// random half-space, the source gets outliers, then both get noise.
pub fn make_pair(cloud: &[Vec3], spec: &TrialSpec, seed: u64) -> Result<TrialPair> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = sample_transform_with(
        &mut rng,
        spec.rotation_min_deg,
        spec.rotation_max_deg,
        spec.translation_max,
    );

    let mut source: Vec<Vec3> = if spec.keep_fraction < 1.0 {
        let n = ((cloud.len() as f64 * spec.keep_fraction).round() as usize).max(1);
        let mut idx = rand::seq::index::sample(&mut rng, cloud.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| cloud[i]).collect()
    } else {
        cloud.to_vec()
    };
    let mut target = cloud.to_vec();

    let crop = 1.0 - (1.0 - spec.overlap_fraction) / 2.0;
    source = crop_half_space(&source, crop, &mut rng);
    target = crop_half_space(&target, crop, &mut rng);
    let mut target = truth.apply(&target);

    if spec.outlier_fraction > 0.0 {
        let (lo, hi) = bounding_box(&source).expect("non-empty");
        let n = (source.len() as f64 * spec.outlier_fraction).round() as usize;
        let idx = rand::seq::index::sample(&mut rng, source.len(), n).into_vec();
        for i in idx {
            source[i] = Vec3::from_fn(|k, _| {
                if hi[k] > lo[k] {
                    rng.random_range(lo[k]..=hi[k])
                } else {
                    lo[k]
                }
            });
        }
    }

    // noise draws do not depend on sigma, so sweeps share random numbers
    for p in source.iter_mut().chain(target.iter_mut()) {
        let n = Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng));
        *p += n * spec.noise_sigma;
    }
    Ok(TrialPair {
        source,
        target,
        truth,
    })
}

/// Runs every method on every `(cloud, trial)` pair. Results are ordered by
/// cloud, trial, then method, whatever the thread count.
pub fn run_benchmark(
    clouds: &[PointCloud],
    spec: &TrialSpec,
    methods: &[NamedMethod],
) -> Result<Vec<TrialResult>> {
    spec.validate()?;
    if clouds.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods to benchmark".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..clouds.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let per_job: Vec<Result<Vec<TrialResult>>> = jobs
        .par_iter()
        .map(|&(cloud_id, trial)| {
            let seed = trial_seed(spec.seed, cloud_id, trial);
            let pair = make_pair(&clouds[cloud_id].points, spec, seed)?;
            Ok(methods
                .iter()
                .map(|m| run_trial(&pair, m, cloud_id, trial, seed))
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(jobs.len() * methods.len());
    for r in per_job {
        out.extend(r?);
    }
    Ok(out)
}

fn run_trial(pair: &TrialPair, m: &NamedMethod, cloud_id: usize, trial: usize, seed: u64) -> TrialResult {
    let config_hash = m.method.config_hash();
    let method = m.method.with_seed(mix_seed(seed));
    let (pred, iterations, converged, wall_time, error) = match method.run(&pair.source, &pair.target) {
        Ok(rep) => (rep.transform, rep.iterations_run, rep.converged, rep.wall_time, None),
        Err(e) => (RigidTransform::identity(), 0, false, Duration::ZERO, Some(e.to_string())),
    };
    TrialResult {
        cloud_id,
        trial,
        method: m.label.clone(),
        rre_deg: rre(&pred, &pair.truth),
        rte: rte(&pred, &pair.truth),
        iterations,
        converged,
        wall_time,
        config_hash,
        error,
    }
}

pub const RESULTS_HEADER: &str = "cloud_id,trial,method,rre_deg,rte,iters,converged,wall_ms,config_hash";

/// Per-trial CSV. With `timing == false` the `wall_ms` column is left empty
/// so that reruns compare byte for byte.
pub fn results_csv(results: &[TrialResult], timing: bool) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in results {
        let wall = if timing {
            format!("{:.3}", r.wall_time.as_secs_f64() * 1e3)
        } else {
            String::new()
        };
        writeln!(
            s,
            "{},{},{},{:.12e},{:.12e},{},{},{},{:016x}",
            r.cloud_id, r.trial, r.method, r.rre_deg, r.rte, r.iterations, r.converged, wall, r.config_hash
        )
        .unwrap();
    }
    s
}

/// Summaries per method label, in first-appearance order.
pub fn summarize_by_method(results: &[TrialResult]) -> Result<Vec<(String, Summary)>> {
    let mut labels: Vec<&str> = Vec::new();
    for r in results {
        if !labels.contains(&r.method.as_str()) {
            labels.push(&r.method);
        }
    }
    labels
        .into_iter()
        .map(|l| {
            let rows: Vec<TrialResult> = results.iter().filter(|r| r.method == l).cloned().collect();
            Ok((l.to_string(), aggregate(&rows)?))
        })
        .collect()
}

pub fn summary_csv(rows: &[(String, Summary)], threshold_deg: f64) -> String {
    let mut s = String::from("# median: lower interpolation, element (n-1)/2 of the sorted errors\n");
    writeln!(s, "method,trials,rmse_rot_deg,median_rot_deg,rmse_trans,median_trans,success_at_{threshold_deg}deg").unwrap();
    for (label, m) in rows {
        let success = m
            .success_curve
            .iter()
            .rev()
            .find(|(t, _)| *t <= threshold_deg)
            .map_or(0.0, |(_, f)| *f);
        writeln!(
            s,
            "{label},{},{:.12e},{:.12e},{:.12e},{:.12e},{success:.4}",
            m.count, m.rmse_rot, m.median_rot, m.rmse_trans, m.median_trans
        )
        .unwrap();
    }
    s
}

pub fn success_curve_csv(rows: &[(String, Summary)]) -> String {
    let mut s = String::from("method,threshold_deg,success_rate\n");
    for (label, m) in rows {
        for (t, f) in &m.success_curve {
            writeln!(s, "{label},{t:.6e},{f:.6}").unwrap();
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryStep {
    /// Registration of frame `index + 1` onto frame `index`.
    pub index: usize,
    pub increment: RigidTransform,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub wall_time: Duration,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Odometry {
    /// `poses[t]` maps frame `t` coordinates into frame 0.
    pub poses: Vec<RigidTransform>,
    pub steps: Vec<OdometryStep>,
}

/// Chains pairwise registrations without loop closure:
/// `pose[t+1] = pose[t] · register(frame[t+1] → frame[t])`. A failed pair
/// contributes an identity increment and is reported in its step.
pub fn run_odometry(frames: &[PointCloud], config: &IfrConfig) -> Result<Odometry> {
    if frames.len() < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            got: frames.len(),
        });
    }
    let steps: Vec<OdometryStep> = frames
        .par_windows(2)
        .enumerate()
        .map(|(index, w)| match register(&w[1].points, &w[0].points, config) {
            Ok(rep) => OdometryStep {
                index,
                increment: rep.transform,
                iterations: rep.iterations_run,
                converged: rep.converged,
                residual: rep.final_residual().unwrap_or(0.0),
                wall_time: rep.wall_time,
                error: None,
            },
            Err(e) => OdometryStep {
                index,
                increment: RigidTransform::identity(),
                iterations: 0,
                converged: false,
                residual: f64::NAN,
                wall_time: Duration::ZERO,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut poses = vec![RigidTransform::identity()];
    for s in &steps {
        let next = poses.last().unwrap().compose(&s.increment);
        poses.push(next);
    }
    Ok(Odometry { poses, steps })
}

/// One pose per line as the 12 row-major entries of `[R | t]`.
pub fn trajectory_string(poses: &[RigidTransform]) -> String {
    let mut s = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major_3x4().iter().map(|v| format!("{v:.12e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_trajectory(text: &str) -> Result<Vec<RigidTransform>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidArgument(format!("trajectory line {}: bad number", i + 1)))?;
            let arr: [f64; 12] = vals.try_into().map_err(|_| {
                Error::InvalidArgument(format!("trajectory line {}: expected 12 values", i + 1))
            })?;
            RigidTransform::from_row_major_3x4(&arr)
        })
        .collect()
}

pub const ODOMETRY_HEADER: &str = "pair,iters,converged,residual,wall_ms,error";

pub fn odometry_csv(steps: &[OdometryStep]) -> String {
    let mut s = String::from(ODOMETRY_HEADER);
    s.push('\n');
    for st in steps {
        writeln!(
            s,
            "{},{},{},{:.12e},{:.3},{}",
            st.index,
            st.iterations,
            st.converged,
            st.residual,
            st.wall_time.as_secs_f64() * 1e3,
            st.error.as_deref().unwrap_or("").replace(',', ";")
        )
        .unwrap();
    }
    s
}

/// Configuration used by the real-scan profile with the given truncation.
pub fn real_profile(truncation: TruncationParams) -> IfrConfig {
    IfrConfig {
        truncation: Some(truncation),
        ..IfrConfig::real()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{generate_shape, ShapeKind};
    use proptest::prelude::*;

    fn result(rre_deg: f64, rte: f64) -> TrialResult {
        TrialResult {
            cloud_id: 0,
            trial: 0,
            method: "m".into(),
            rre_deg,
            rte,
            iterations: 1,
            converged: true,
            wall_time: Duration::ZERO,
            config_hash: 0,
            error: None,
        }
    }

    #[test]
    fn zero_bounds_give_identity() {
        let g = sample_transform(0.0, 0.0, 9);
        assert_eq!(g, RigidTransform::identity());
        assert_eq!(sample_transform(45.0, 0.8, 3), sample_transform(45.0, 0.8, 3));
    }

    #[test]
    fn sampled_angles_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bins = 20;
        let mut hist = vec![0usize; bins];
        let n = 100_000;
        for _ in 0..n {
            let g = sample_transform_with(&mut rng, 0.0, 45.0, 0.8);
            let a = g.rotation_angle().to_degrees();
            assert!(a <= 45.0 + 1e-9);
            assert!(g.translation().norm() <= 0.8 + 1e-12);
            hist[((a / 45.0 * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = hist.iter().map(|&h| (h as f64 - expected).powi(2) / expected).sum();
        // chi-square, 19 degrees of freedom, upper 1% point
        assert!(chi2 < 36.19, "chi2 = {chi2}");
    }

    #[test]
    fn rotation_error_examples() {
        let id = RigidTransform::identity();
        assert_eq!(rre(&id, &id), 0.0);
        let z30 = RigidTransform::from_axis_angle(&Vec3::z(), 30f64.to_radians());
        assert!((rre(&z30, &id) - 30.0).abs() < 1e-10);
        let x180 = RigidTransform::from_axis_angle(&Vec3::x(), std::f64::consts::PI);
        assert!((rre(&x180, &id) - 180.0).abs() < 1e-6);
    }

    #[test]
    fn translation_error_examples() {
        let id = RigidTransform::identity();
        assert_eq!(rte(&id, &id), 0.0);
        let t = RigidTransform::from_translation(Vec3::new(0.3, 0.4, 0.0));
        assert!((rte(&t, &id) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate(&[result(5.0, 0.1)]).unwrap();
        assert_eq!((s.rmse_rot, s.median_rot), (5.0, 5.0));

        let rs: Vec<_> = [1.0, 2.0, 3.0, 4.0].iter().map(|&a| result(a, 0.0)).collect();
        let s = aggregate(&rs).unwrap();
        assert!((s.rmse_rot - 7.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.median_rot, 2.0);

        let s = aggregate(&[result(0.0, 0.0), result(0.0, 0.0)]).unwrap();
        assert_eq!((s.rmse_rot, s.median_rot, s.rmse_trans, s.median_trans), (0.0, 0.0, 0.0, 0.0));
        assert!(s.success_curve.iter().all(|(_, f)| *f == 1.0));

        assert!(matches!(aggregate(&[]), Err(Error::EmptyResults)));
    }

    #[test]
    fn benchmark_with_zero_motion_is_exact() {
        let cloud = generate_shape(ShapeKind::Composite, 1024, 1).unwrap();
        let spec = TrialSpec {
            rotation_max_deg: 0.0,
            translation_max: 0.0,
            trials: 1,
            ..TrialSpec::default()
        };
        let methods = [NamedMethod::new("ifr", Method::Ifr(IfrConfig::synthetic()))];
        let rows = run_benchmark(&[cloud], &spec, &methods).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].rre_deg < 1e-6 && rows[0].rte < 1e-6, "{:?}", rows[0]);
    }

    #[test]
    fn ablation_grid_has_eight_rows() {
        let rows = ablation_methods(&IfrConfig::real());
        assert_eq!(rows.len(), 8);
        let Method::Ifr(c8) = &rows[7].method else { panic!() };
        assert!(c8.use_irls && c8.truncation.is_some());
        assert_eq!(c8.pseudo_strategy, PseudoStrategy::SurfaceGaussian);
        let Method::Ifr(c1) = &rows[0].method else { panic!() };
        assert!(!c1.use_irls && c1.truncation.is_none());
        assert_eq!(c1.pseudo_strategy, PseudoStrategy::Uniform);
        let hashes: std::collections::HashSet<u64> =
            rows.iter().map(|r| r.method.config_hash()).collect();
        assert_eq!(hashes.len(), 8);
    }

    #[test]
    fn pair_geometry() {
        let cloud = generate_shape(ShapeKind::Composite, 2000, 3).unwrap().points;
        let spec = TrialSpec {
            keep_fraction: 0.5,
            overlap_fraction: 0.7,
            outlier_fraction: 0.1,
            ..TrialSpec::default()
        };
        let p = make_pair(&cloud, &spec, 4).unwrap();
        assert_eq!(p.source.len(), 850);
        assert_eq!(p.target.len(), 1700);

        let clean = make_pair(&cloud, &TrialSpec::default(), 4).unwrap();
        let moved = clean.truth.apply(&clean.source);
        for (a, b) in moved.iter().zip(&clean.target) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn odometry_of_identical_frames_is_identity() {
        let c = generate_shape(ShapeKind::Composite, 1024, 2).unwrap();
        let odo = run_odometry(&[c.clone(), c.clone(), c], &IfrConfig::synthetic()).unwrap();
        assert_eq!(odo.poses.len(), 3);
        for p in &odo.poses {
            assert!(p.rotation_angle() < 1e-9 && p.translation().norm() < 1e-9);
        }
        assert!(run_odometry(&[PointCloud::default()], &IfrConfig::synthetic()).is_err());
    }

    #[test]
    fn odometry_composes_known_increments() {
        let scene = generate_shape(ShapeKind::Composite, 2048, 6).unwrap();
        let g1 = sample_transform(10.0, 0.2, 1);
        let g2 = sample_transform(10.0, 0.2, 2);
        // frame t sees the scene from pose_t: frame_t = pose_t⁻¹ · scene
        let poses = [RigidTransform::identity(), g1, g1.compose(&g2)];
        let frames: Vec<PointCloud> = poses.iter().map(|p| scene.transformed(&p.inverse())).collect();
        let odo = run_odometry(&frames, &IfrConfig::synthetic()).unwrap();
        assert!(rre(&odo.poses[2], &poses[2]) < 1e-3);
        assert!(rte(&odo.poses[2], &poses[2]) < 1e-4);
    }

    #[test]
    fn trajectory_round_trip() {
        let poses: Vec<_> = (0..4).map(|s| sample_transform(45.0, 1.0, s)).collect();
        let text = trajectory_string(&poses);
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.split_whitespace().count() == 12));
        let back = parse_trajectory(&text).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!((a.to_matrix4() - b.to_matrix4()).norm() < 1e-10);
        }
    }

    #[test]
    fn csv_is_deterministic_without_timing() {
        let cloud = generate_shape(ShapeKind::Composite, 512, 1).unwrap();
        let spec = TrialSpec {
            trials: 3,
            seed: 5,
            ..TrialSpec::default()
        };
        let methods = [
            NamedMethod::new("ifr", Method::Ifr(IfrConfig::synthetic())),
            NamedMethod::new("icp", Method::Icp(IcpConfig::default())),
        ];
        let a = results_csv(&run_benchmark(std::slice::from_ref(&cloud), &spec, &methods).unwrap(), false);
        let b = results_csv(&run_benchmark(&[cloud], &spec, &methods).unwrap(), false);
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 1 + 6);
        assert_eq!(a.lines().next().unwrap(), RESULTS_HEADER);
    }

    fn transform_strategy() -> impl Strategy<Value = RigidTransform> {
        (any::<u64>(), 0.0..180.0f64, 0.0..2.0f64).prop_map(|(s, a, t)| sample_transform(a, t, s))
    }

    proptest! {
        #[test]
        fn rre_is_symmetric(a in transform_strategy(), b in transform_strategy()) {
            prop_assert!((rre(&a, &b) - rre(&b, &a)).abs() < 1e-10);
            prop_assert!((0.0..=180.0).contains(&rre(&a, &b)));
        }

        #[test]
        fn rte_is_rotation_conjugation_invariant(
            a in transform_strategy(), b in transform_strategy(), s in any::<u64>()
        ) {
            let g = sample_transform(180.0, 0.0, s);
            let gi = g.inverse();
            let lhs = rte(&g.compose(&a).compose(&gi), &g.compose(&b).compose(&gi));
            prop_assert!((lhs - rte(&a, &b)).abs() < 1e-10);
        }

        #[test]
        fn summary_bounds(errs in prop::collection::vec(0.0..180.0f64, 1..50)) {
            let rs: Vec<_> = errs.iter().map(|&e| result(e, e / 100.0)).collect();
            let s = aggregate(&rs).unwrap();
            let max = errs.iter().cloned().fold(0.0, f64::max);
            prop_assert!(s.median_rot <= max && s.rmse_rot <= max + 1e-12);
            for w in s.success_curve.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
        }
    }
}
