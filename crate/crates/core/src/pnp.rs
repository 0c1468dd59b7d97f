//! Pose from weighted 2D-3D correspondences.
//!
//! [`solve_pnp_linear`] gives a Direct Linear Transform estimate projected onto
//! SO(3); [`refine_pose`] runs confidence-weighted Levenberg-Marquardt on the
//! tangent space; [`solve_pnp_ransac`] wraps both in hypothesize-and-verify
//! outlier rejection.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector6};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    reprojection_error, residual_norm_sq, CameraIntrinsics,
    Correspondence, KeypointSet3D, Pose, Vec3, Z_MIN,
};

/// Fewest correspondences the linear solver accepts.
pub const MIN_LINEAR_POINTS: usize = 6;

// Second-smallest singular value over largest below this marks a null space
// of dimension > 1.
const RANK_TOLERANCE: f64 = 1e-9;
// Relative eigenvalue of the point scatter below which the points count as
// lying on a plane (or, for the middle one, a line).
const PLANARITY_TOLERANCE: f64 = 1e-12;
// Relative cost change below which LM trusts the model over the cost.
const ROUNDING_BAND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier threshold on the pixel residual.
    pub threshold: f64,
    /// Requested minimal sample size. The linear solver needs six points, so
    /// smaller values are raised to six.
    pub min_sample_size: usize,
    pub confidence: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iterations: 500,
            threshold: 4.0,
            min_sample_size: 4,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "inlier threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.min_sample_size < 4 {
            return Err(Error::InvalidConfig(format!(
                "minimal sample size must be at least 4, got {}",
                self.min_sample_size
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn sample_size(&self) -> usize {
        self.min_sample_size.max(MIN_LINEAR_POINTS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub max_iterations: usize,
    /// Stop once the tangent-space step norm drops below this.
    pub tolerance: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            max_iterations: 100,
            tolerance: 1e-10,
        }
    }
}

/// Outcome of [`refine_pose`]. `cost` is the weighted sum of squared pixel
/// residuals and never exceeds `initial_cost`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub pose: Pose,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnPResult {
    pub pose: Pose,
    /// Indices into the input correspondences, ascending.
    pub inliers: Vec<usize>,
    /// Weighted RMS pixel error over the inliers.
    pub reprojection_error: f64,
    pub ransac_iterations: usize,
    pub refine_iterations: usize,
    pub diverged: bool,
}

impl PnPResult {
    pub fn inlier_semantic_ids(&self, correspondences: &[Correspondence]) -> BTreeSet<u32> {
        self.inliers
            .iter()
            .map(|&i| correspondences[i].semantic_id)
            .collect()
    }
}

/// Direct Linear Transform on normalized image coordinates, followed by
/// projection of the rotation block onto SO(3).
pub fn solve_pnp_linear(correspondences: &[Correspondence], camera: &CameraIntrinsics) -> Result<Pose> {
    let n = correspondences.len();
    if n < MIN_LINEAR_POINTS {
        return Err(Error::InsufficientCorrespondences {
            needed: MIN_LINEAR_POINTS,
            got: n,
        });
    }
    let centroid = correspondences.iter().map(|c| c.point3d).sum::<Vec3>() / n as f64;
    let spread = (correspondences
        .iter()
        .map(|c| (c.point3d - centroid).norm_squared())
        .sum::<f64>()
        / (3.0 * n as f64))
        .sqrt();
    if !(spread > 0.0) {
        return Err(Error::DegenerateConfiguration);
    }
    let scatter = correspondences
        .iter()
        .map(|c| {
            let d = (c.point3d - centroid) / spread;
            d * d.transpose()
        })
        .sum::<Matrix3<f64>>();
    let eig = scatter.symmetric_eigen();
    let mut axes: Vec<usize> = vec![0, 1, 2];
    axes.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let ev = |k: usize| eig.eigenvalues[axes[k]].max(0.0);
    if ev(1) <= PLANARITY_TOLERANCE * ev(0) {
        return Err(Error::DegenerateConfiguration);
    }
    if ev(2) <= PLANARITY_TOLERANCE * ev(0) {
        let e1: Vec3 = eig.eigenvectors.column(axes[0]).into();
        let e2: Vec3 = eig.eigenvectors.column(axes[1]).into();
        return solve_planar(correspondences, camera, centroid, spread, [e1, e2]);
    }

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (k, c) in correspondences.iter().enumerate() {
        let x = (c.point3d - centroid) / spread;
        let h = [x.x, x.y, x.z, 1.0];
        let uv = camera.normalize(&c.point2d);
        for j in 0..4 {
            a[(2 * k, j)] = h[j];
            a[(2 * k, 8 + j)] = -uv.x * h[j];
            a[(2 * k + 1, 4 + j)] = h[j];
            a[(2 * k + 1, 8 + j)] = -uv.y * h[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    let last = order.len() - 1;
    if order.len() < 12 || !(sv(last - 1) > RANK_TOLERANCE * sv(0)) {
        return Err(Error::DegenerateConfiguration);
    }
    let p = v_t.row(order[last]);

    let m = Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]);
    let offset = Vec3::new(p[3], p[7], p[11]);
    let mut r_raw = m / spread;
    let mut t_raw = offset - m * centroid / spread;
    // The centroid maps to `offset`; its depth fixes the overall sign.
    if offset.z < 0.0 {
        r_raw = -r_raw;
        t_raw = -t_raw;
    }
    let svd3 = r_raw.svd(true, true);
    let (u, v_t3) = (svd3.u.expect("u"), svd3.v_t.expect("v_t"));
    let scale = svd3.singular_values.sum() / 3.0;
    if !(scale > 0.0) {
        return Err(Error::DegenerateConfiguration);
    }
    let mut fix = Matrix3::identity();
    fix[(2, 2)] = (u * v_t3).determinant().signum();
    let rotation = u * fix * v_t3;
    Ok(Pose::from_matrix(&rotation, t_raw / scale))
}

// Homography between the point plane and the normalized image plane,
// decomposed into rotation and translation.
fn solve_planar(
    correspondences: &[Correspondence],
    camera: &CameraIntrinsics,
    centroid: Vec3,
    spread: f64,
    [e1, e2]: [Vec3; 2],
) -> Result<Pose> {
    let n = correspondences.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 9);
    for (k, c) in correspondences.iter().enumerate() {
        let d = (c.point3d - centroid) / spread;
        let h = [e1.dot(&d), e2.dot(&d), 1.0];
        let uv = camera.normalize(&c.point2d);
        for j in 0..3 {
            a[(2 * k, j)] = h[j];
            a[(2 * k, 6 + j)] = -uv.x * h[j];
            a[(2 * k + 1, 3 + j)] = h[j];
            a[(2 * k + 1, 6 + j)] = -uv.y * h[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if order.len() < 9 || !(sv(7) > RANK_TOLERANCE * sv(0)) {
        return Err(Error::DegenerateConfiguration);
    }
    let p = v_t.row(order[8]);
    let mut h1 = Vec3::new(p[0], p[3], p[6]);
    let mut h2 = Vec3::new(p[1], p[4], p[7]);
    let mut h3 = Vec3::new(p[2], p[5], p[8]);
    if h3.z < 0.0 {
        (h1, h2, h3) = (-h1, -h2, -h3);
    }
    let scale = 0.5 * (h1.norm() + h2.norm());
    if !(scale > 0.0) {
        return Err(Error::DegenerateConfiguration);
    }
    let (r1, r2) = (h1 / scale, h2 / scale);
    let approx = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let svd3 = approx.svd(true, true);
    let (u, v_t3) = (svd3.u.expect("u"), svd3.v_t.expect("v_t"));
    let mut fix = Matrix3::identity();
    fix[(2, 2)] = (u * v_t3).determinant().signum();
    // Maps the plane frame (e1, e2, e1 x e2) into the camera frame.
    let in_plane = u * fix * v_t3;
    let frame = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);
    let rotation = in_plane * frame.transpose();
    let translation = h3 * spread / scale - rotation * centroid;
    Ok(Pose::from_matrix(&rotation, translation))
}

fn weighted_cost(camera: &CameraIntrinsics, pose: &Pose, correspondences: &[Correspondence]) -> f64 {
    correspondences
        .iter()
        .map(|c| c.weight * residual_norm_sq(camera, pose, c))
        .sum()
}

// Gauss-Newton system J^T W J, J^T W r for the left-perturbation
// (rotation increment, translation increment).
fn normal_equations(
    camera: &CameraIntrinsics,
    pose: &Pose,
    correspondences: &[Correspondence],
) -> (Matrix6<f64>, Vector6<f64>) {
    let rot = pose.rotation_matrix();
    let t = pose.translation();
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for c in correspondences {
        let rp = rot * c.point3d;
        let x = rp + t;
        if x.z <= Z_MIN {
            // constant penalty: no gradient
            continue;
        }
        let (fx, fy) = (camera.fx(), camera.fy());
        let iz = 1.0 / x.z;
        let r = [
            fx * x.x * iz + camera.cx() - c.point2d.x,
            fy * x.y * iz + camera.cy() - c.point2d.y,
        ];
        // d(proj)/d(camera point)
        let dp = [
            [fx * iz, 0.0, -fx * x.x * iz * iz],
            [0.0, fy * iz, -fy * x.y * iz * iz],
        ];
        // d(camera point)/d(rotation increment) = -[rp]x
        let skew = Matrix3::new(0.0, rp.z, -rp.y, -rp.z, 0.0, rp.x, rp.y, -rp.x, 0.0);
        for row in 0..2 {
            let mut j = [0.0; 6];
            for k in 0..3 {
                j[k] = (0..3).map(|m| dp[row][m] * skew[(m, k)]).sum();
                j[3 + k] = dp[row][k];
            }
            for a in 0..6 {
                g[a] += c.weight * j[a] * r[row];
                for b in 0..6 {
                    h[(a, b)] += c.weight * j[a] * j[b];
                }
            }
        }
    }
    (h, g)
}

/// Levenberg-Marquardt minimization of `sum w_i |proj(p_i) - u_i|^2`.
///
/// Damping starts at 1e-3 relative to the diagonal of the normal matrix and is
/// multiplied by ten on a rejected step, divided by ten on an accepted one.
/// Ten consecutive rejections stop the solve and set `diverged`; the best pose
/// seen so far is returned in every case.
pub fn refine_pose(
    camera: &CameraIntrinsics,
    initial: &Pose,
    correspondences: &[Correspondence],
    config: &RefineConfig,
) -> Result<Refinement> {
    if correspondences.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    let initial_cost = weighted_cost(camera, initial, correspondences);
    let mut pose = *initial;
    let mut cost = initial_cost;
    let mut lambda = 1e-3;
    let mut rejections = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut diverged = false;

    let (mut h, mut g) = normal_equations(camera, &pose, correspondences);
    while iterations < config.max_iterations {
        iterations += 1;
        if g.iter().all(|&v| v == 0.0) {
            converged = true;
            break;
        }
        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += lambda * h[(i, i)].max(f64::MIN_POSITIVE);
        }
        let step = damped.cholesky().map(|ch| ch.solve(&(-g)));
        let Some(step) = step else {
            lambda *= 10.0;
            rejections += 1;
            if rejections >= 10 {
                diverged = true;
                break;
            }
            continue;
        };
        if step.norm() < config.tolerance {
            converged = true;
            break;
        }
        let candidate = pose.retract(
            &Vec3::new(step[0], step[1], step[2]),
            &Vec3::new(step[3], step[4], step[5]),
        );
        let candidate_cost = weighted_cost(camera, &candidate, correspondences);
        // Once the model predicts a decrease below the rounding level of the
        // cost, comparing costs is meaningless; trust the Gauss-Newton step.
        let predicted = -g.dot(&step) - 0.5 * step.dot(&(h * step));
        let in_noise = predicted <= ROUNDING_BAND * cost
            && candidate_cost <= cost * (1.0 + ROUNDING_BAND);
        if candidate_cost < cost || in_noise {
            pose = candidate;
            cost = candidate_cost;
            lambda /= 10.0;
            rejections = 0;
            (h, g) = normal_equations(camera, &pose, correspondences);
        } else {
            lambda *= 10.0;
            rejections += 1;
            if rejections >= 10 {
                diverged = true;
                break;
            }
        }
    }
    if cost > initial_cost {
        pose = *initial;
        cost = initial_cost;
    }
    Ok(Refinement {
        pose,
        initial_cost,
        cost,
        iterations,
        converged,
        diverged,
    })
}

fn inlier_indices(
    camera: &CameraIntrinsics,
    pose: &Pose,
    correspondences: &[Correspondence],
    threshold: f64,
) -> Vec<usize> {
    let t2 = threshold * threshold;
    correspondences
        .iter()
        .enumerate()
        .filter(|(_, c)| residual_norm_sq(camera, pose, c) < t2)
        .map(|(i, _)| i)
        .collect()
}

fn iteration_bound(inlier_ratio: f64, sample_size: usize, confidence: f64, cap: usize) -> usize {
    let good_sample = inlier_ratio.powi(sample_size as i32);
    if good_sample <= 0.0 {
        return cap;
    }
    if good_sample >= 1.0 {
        return 1;
    }
    let n = ((1.0 - confidence).ln() / (1.0 - good_sample).ln()).ceil();
    if n.is_finite() {
        (n.max(1.0) as usize).min(cap)
    } else {
        cap
    }
}

// Rounds of refine-then-reselect after the best hypothesis.
const MAX_CONSENSUS_ROUNDS: usize = 5;

// Local optimization of each new best hypothesis: refine on the inliers of a
// widened threshold while that gathers more support.
const LO_ROUNDS: usize = 3;
const LO_WIDENING: f64 = 2.0;
const LO_GATE: f64 = 0.5;
const LO_REFINE: RefineConfig = RefineConfig {
    max_iterations: 10,
    tolerance: 1e-8,
};

fn count_inliers(camera: &CameraIntrinsics, pose: &Pose, correspondences: &[Correspondence], t2: f64) -> usize {
    correspondences
        .iter()
        .filter(|c| residual_norm_sq(camera, pose, c) < t2)
        .count()
}

fn local_optimize(
    camera: &CameraIntrinsics,
    correspondences: &[Correspondence],
    mut pose: Pose,
    mut count: usize,
    threshold: f64,
) -> (Pose, usize) {
    for _ in 0..LO_ROUNDS {
        let wide = inlier_indices(camera, &pose, correspondences, LO_WIDENING * threshold);
        if wide.len() < MIN_LINEAR_POINTS {
            break;
        }
        let subset: Vec<Correspondence> = wide.iter().map(|&i| correspondences[i]).collect();
        let Ok(refined) = refine_pose(camera, &pose, &subset, &LO_REFINE) else { break };
        let c = count_inliers(camera, &refined.pose, correspondences, threshold * threshold);
        if c <= count {
            break;
        }
        pose = refined.pose;
        count = c;
    }
    (pose, count)
}

/// Hypothesize-and-verify pose estimation.
///
/// Each round draws a minimal sample, solves it linearly and counts the
/// correspondences whose pixel residual is below the threshold. Consensus is
/// an unweighted count; confidences only enter the refinement. Hypotheses
/// reaching half the best count are locally optimized on their widened
/// inlier set before being compared. The best consensus is refined with
/// [`refine_pose`] and re-thresholded until the inlier set stops changing,
/// and the returned inliers are exactly the threshold test evaluated at the
/// returned pose.
pub fn solve_pnp_ransac(
    correspondences: &[Correspondence],
    camera: &CameraIntrinsics,
    config: &RansacConfig,
) -> Result<PnPResult> {
    config.validate()?;
    let n = correspondences.len();
    if n < MIN_LINEAR_POINTS {
        return Err(Error::InsufficientCorrespondences {
            needed: MIN_LINEAR_POINTS,
            got: n,
        });
    }
    let sample_size = config.sample_size().min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Pose, usize)> = None;
    let mut bound = config.max_iterations;
    let mut iterations = 0;
    let mut subset = Vec::with_capacity(sample_size);
    let t2 = config.threshold * config.threshold;

    while iterations < bound {
        iterations += 1;
        subset.clear();
        subset.extend(index::sample(&mut rng, n, sample_size).iter().map(|i| correspondences[i]));
        let Ok(pose) = solve_pnp_linear(&subset, camera) else {
            continue;
        };
        let count = count_inliers(camera, &pose, correspondences, t2);
        let floor = best.map_or(0.0, |(_, b)| LO_GATE * b as f64);
        if count < MIN_LINEAR_POINTS || (count as f64) < floor {
            continue;
        }
        let (pose, count) = local_optimize(camera, correspondences, pose, count, config.threshold);
        if best.is_none_or(|(_, b)| count > b) {
            best = Some((pose, count));
            bound = iteration_bound(
                count as f64 / n as f64,
                sample_size,
                config.confidence,
                config.max_iterations,
            );
        }
    }
    let (mut pose, count) = best.ok_or(Error::NoConsensus)?;
    if count < MIN_LINEAR_POINTS {
        return Err(Error::NoConsensus);
    }

    let refine_config = RefineConfig::default();
    let mut inliers = inlier_indices(camera, &pose, correspondences, config.threshold);
    let mut refine_iterations = 0;
    let mut diverged = false;
    for _ in 0..MAX_CONSENSUS_ROUNDS {
        let subset: Vec<Correspondence> = inliers.iter().map(|&i| correspondences[i]).collect();
        let refined = refine_pose(camera, &pose, &subset, &refine_config)?;
        refine_iterations += refined.iterations;
        diverged |= refined.diverged;
        pose = refined.pose;
        let next = inlier_indices(camera, &pose, correspondences, config.threshold);
        let stable = next == inliers;
        inliers = next;
        if stable || inliers.len() < MIN_LINEAR_POINTS {
            break;
        }
    }
    if inliers.len() < MIN_LINEAR_POINTS {
        return Err(Error::NoConsensus);
    }
    let subset: Vec<Correspondence> = inliers.iter().map(|&i| correspondences[i]).collect();
    let error = reprojection_error(camera, &pose, &subset)?;
    Ok(PnPResult {
        pose,
        inliers,
        reprojection_error: error,
        ransac_iterations: iterations,
        refine_iterations,
        diverged,
    })
}

/// Drops correspondences on the excluded edges and solves with the rest.
/// Returned inlier indices refer to the unfiltered input.
pub fn solve_with_edge_subset(
    correspondences: &[Correspondence],
    keypoints: &KeypointSet3D,
    excluded_edges: &[u32],
    camera: &CameraIntrinsics,
    config: &RansacConfig,
) -> Result<PnPResult> {
    let kept: Vec<usize> = (0..correspondences.len())
        .filter(|&i| {
            keypoints
                .edge_of(correspondences[i].semantic_id)
                .is_none_or(|e| !excluded_edges.contains(&e))
        })
        .collect();
    if kept.len() < MIN_LINEAR_POINTS {
        return Err(Error::InsufficientAfterEdgeExclusion {
            needed: MIN_LINEAR_POINTS,
            got: kept.len(),
        });
    }
    let subset: Vec<Correspondence> = kept.iter().map(|&i| correspondences[i]).collect();
    let mut result = solve_pnp_ransac(&subset, camera, config)?;
    for i in result.inliers.iter_mut() {
        *i = kept[*i];
    }
    Ok(result)
}
