//! Cross-view consistency scoring over depth planes: warp a target-view 2D
//! pose to every reference view at each hypothesized depth, match it to the
//! nearest detected pose there, and score per-joint alignment into a
//! depth-by-joint score matrix fused across views by detection confidence.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraParams, DepthPlaneSet, Point2D};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("pose is invalid: {0}")]
    InvalidPose(String),
    #[error("no reference poses")]
    NoReferencePoses,
    #[error("joint count mismatch: expected {expected}, got {got}")]
    JointCountMismatch { expected: usize, got: usize },
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error("score matrix dump: {0}")]
    BadDump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A detected or warped 2D pose: per-joint image coordinates, confidences in
/// [0, 1], and validity flags. For detections the flag marks joints the
/// detector produced no estimate for; for warped poses it marks joints that
/// did not project into the reference view.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose2D {
    joints: Vec<Point2D>,
    confidences: Vec<f64>,
    valid: Vec<bool>,
}

impl Pose2D {
    pub fn new(
        joints: Vec<Point2D>,
        confidences: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, SweepError> {
        if joints.is_empty() {
            return Err(SweepError::InvalidPose("pose has no joints".into()));
        }
        if joints.len() != confidences.len() || joints.len() != valid.len() {
            return Err(SweepError::InvalidPose(format!(
                "mismatched lengths: {} joints, {} confidences, {} flags",
                joints.len(),
                confidences.len(),
                valid.len()
            )));
        }
        for p in &joints {
            if !p.u.is_finite() || !p.v.is_finite() {
                return Err(SweepError::InvalidPose("non-finite joint coordinate".into()));
            }
        }
        for &c in &confidences {
            if !(0.0..=1.0).contains(&c) {
                return Err(SweepError::InvalidPose(format!(
                    "confidence {c} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            joints,
            confidences,
            valid,
        })
    }

    /// Builds a pose without range validation; lengths must still agree.
    pub fn from_parts(joints: Vec<Point2D>, confidences: Vec<f64>, valid: Vec<bool>) -> Self {
        assert_eq!(joints.len(), confidences.len());
        assert_eq!(joints.len(), valid.len());
        Self {
            joints,
            confidences,
            valid,
        }
    }

    /// All joints valid with confidence 1.
    pub fn uniform(joints: Vec<Point2D>) -> Self {
        let n = joints.len();
        Self {
            joints,
            confidences: vec![1.0; n],
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joint(&self, j: usize) -> Point2D {
        self.joints[j]
    }

    pub fn joints(&self) -> &[Point2D] {
        &self.joints
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn conf(&self, j: usize) -> f64 {
        self.confidences[j]
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, j: usize) -> bool {
        self.valid[j]
    }

    /// Mean confidence over all joints; used as the pose's own confidence.
    pub fn mean_confidence(&self) -> f64 {
        self.confidences.iter().sum::<f64>() / self.len() as f64
    }
}

/// Scoring hyperparameters: kernel width, plane counts, and depth ranges for
/// the person-level sweep and the joint-level offset sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Width (pixels) of the alignment kernel exp(-tau^2 / (2 sigma^2)).
    pub sigma: f64,
    /// Person-level depth range, target-camera frame (mm).
    pub d_min: f64,
    pub d_max: f64,
    /// Person-level plane count D.
    pub planes: usize,
    /// Joint-level plane count.
    pub rel_planes: usize,
    /// Joint-level offset range around the person anchor (mm).
    pub rel_min: f64,
    pub rel_max: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            d_min: 500.0,
            d_max: 13_000.0,
            planes: 64,
            rel_planes: 64,
            rel_min: -1000.0,
            rel_max: 1000.0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(SweepError::InvalidConfig(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.d_min.is_nan() || self.d_max.is_nan() || self.d_min <= 0.0 || self.d_min >= self.d_max {
            return Err(SweepError::InvalidConfig(format!(
                "need 0 < d_min < d_max, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if self.planes < 2 || self.rel_planes < 2 {
            return Err(SweepError::InvalidConfig(
                "plane counts must be at least 2".into(),
            ));
        }
        if !(self.rel_min < 0.0 && 0.0 < self.rel_max) {
            return Err(SweepError::InvalidConfig(format!(
                "offset range must straddle 0, got [{}, {}]",
                self.rel_min, self.rel_max
            )));
        }
        Ok(())
    }

    pub fn person_planes(&self) -> DepthPlaneSet {
        DepthPlaneSet::new(self.d_min, self.d_max, self.planes).expect("validated range")
    }

    pub fn rel_offsets(&self) -> DepthPlaneSet {
        DepthPlaneSet::new(self.rel_min, self.rel_max, self.rel_planes).expect("validated range")
    }
}

/// Work counters for the sweep stage; every field scales linearly in the
/// plane count for a fixed scene.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SweepCounters {
    /// Score cells visited: one per (plane, reference view, joint).
    pub score_cells: u64,
    /// Joint warps evaluated: one per (plane, reference view, joint).
    pub warps: u64,
    /// Kernel evaluations (calls to exp).
    pub exp_evals: u64,
    /// Candidate poses compared during nearest-pose search.
    pub pose_matchings: u64,
}

impl SweepCounters {
    pub fn merge(&mut self, other: &SweepCounters) {
        self.score_cells += other.score_cells;
        self.warps += other.warps;
        self.exp_evals += other.exp_evals;
        self.pose_matchings += other.pose_matchings;
    }
}

/// Depth-by-joint consistency scores for one target pose, together with the
/// plane set they were computed over. Entries lie in [0, 1]; an entry is 0
/// exactly where no reference view contributed evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    values: Vec<f64>,
    planes: usize,
    joints: usize,
    plane_set: DepthPlaneSet,
}

impl ScoreMatrix {
    pub fn zeros(plane_set: DepthPlaneSet, joints: usize) -> Self {
        let planes = plane_set.count();
        Self {
            values: vec![0.0; planes * joints],
            planes,
            joints,
            plane_set,
        }
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn plane_set(&self) -> &DepthPlaneSet {
        &self.plane_set
    }

    pub fn get(&self, plane: usize, joint: usize) -> f64 {
        self.values[plane * self.joints + joint]
    }

    pub fn set(&mut self, plane: usize, joint: usize, value: f64) {
        self.values[plane * self.joints + joint] = value;
    }

    /// Row-major values, plane index major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean score across joints at each plane.
    pub fn column_mean(&self) -> Vec<f64> {
        (0..self.planes)
            .map(|d| {
                let row = &self.values[d * self.joints..(d + 1) * self.joints];
                row.iter().sum::<f64>() / self.joints as f64
            })
            .collect()
    }

    /// Writes the dump format: plane and joint counts as little-endian u32,
    /// then row-major values as little-endian f64.
    pub fn write_binary(&self, mut w: impl Write) -> Result<(), SweepError> {
        w.write_all(&(self.planes as u32).to_le_bytes())?;
        w.write_all(&(self.joints as u32).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_binary_file(&self, path: impl AsRef<Path>) -> Result<(), SweepError> {
        let mut buf = Vec::with_capacity(8 + self.values.len() * 8);
        self.write_binary(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Reads the dump format; the plane positions are not stored, so the
    /// caller supplies the plane set (validated against the header count).
    pub fn read_binary(mut r: impl Read, plane_set: DepthPlaneSet) -> Result<Self, SweepError> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)
            .map_err(|e| SweepError::BadDump(format!("short header: {e}")))?;
        let planes = u32::from_le_bytes(head[0..4].try_into().unwrap()) as usize;
        let joints = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        if planes != plane_set.count() {
            return Err(SweepError::BadDump(format!(
                "header says {} planes, plane set has {}",
                planes,
                plane_set.count()
            )));
        }
        let mut values = vec![0.0f64; planes * joints];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|e| SweepError::BadDump(format!("short payload: {e}")))?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(Self {
            values,
            planes,
            joints,
            plane_set,
        })
    }
}

/// Euclidean distance between two image points, pixels.
pub fn joint_distance(a: Point2D, b: Point2D) -> f64 {
    let du = a.u - b.u;
    let dv = a.v - b.v;
    (du * du + dv * dv).sqrt()
}

/// Alignment score of a joint pair at distance `tau`.
pub fn consistency_score(tau: f64, sigma: f64) -> f64 {
    (-(tau * tau) / (2.0 * sigma * sigma)).exp()
}

/// Mean joint distance between a warped pose and a candidate, averaged over
/// the warped pose's geometrically valid joints. Returns infinity when no
/// joint is valid.
fn mean_match_distance(warped: &Pose2D, candidate: &Pose2D) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 0..warped.len() {
        if warped.is_valid(j) {
            sum += joint_distance(warped.joint(j), candidate.joint(j));
            n += 1;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Finds the candidate pose minimizing the mean joint distance to `warped`
/// over its valid joints; ties break to the lowest index.
pub fn nearest_reference_pose<'a>(
    warped: &Pose2D,
    candidates: &'a [Pose2D],
) -> Result<(usize, &'a Pose2D), SweepError> {
    if candidates.is_empty() {
        return Err(SweepError::NoReferencePoses);
    }
    for c in candidates {
        if c.len() != warped.len() {
            return Err(SweepError::JointCountMismatch {
                expected: warped.len(),
                got: c.len(),
            });
        }
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let d = mean_match_distance(warped, c);
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    Ok((best, &candidates[best]))
}

/// Linear-in-depth warp of one target joint into one reference view: with
/// p(d) = coef * d + offset for each of the three projective coordinates,
/// the warped pixel is (pu/pz, pv/pz) and the joint is valid iff pz > 0.
/// Exact because back-projection is linear along the pixel ray.
#[derive(Clone, Copy)]
struct JointWarp {
    au: f64,
    bu: f64,
    av: f64,
    bv: f64,
    az: f64,
    bz: f64,
}

impl JointWarp {
    fn at(&self, d: f64) -> Option<Point2D> {
        let pz = self.az * d + self.bz;
        if pz <= 0.0 {
            return None;
        }
        Some(Point2D::new(
            (self.au * d + self.bu) / pz,
            (self.av * d + self.bv) / pz,
        ))
    }
}

fn warp_coefficients(
    target: &CameraParams,
    reference: &CameraParams,
    joints: &[Point2D],
) -> Vec<JointWarp> {
    let k = reference.k();
    let r = reference.r();
    let base = r * target.center().to_vec() + reference.t();
    joints
        .iter()
        .map(|p| {
            let (_, dir) = target.pixel_ray(*p);
            let a = r * dir;
            let row_u = (k[(0, 0)], k[(0, 1)], k[(0, 2)]);
            let row_v = (k[(1, 1)], k[(1, 2)]);
            JointWarp {
                au: row_u.0 * a.x + row_u.1 * a.y + row_u.2 * a.z,
                bu: row_u.0 * base.x + row_u.1 * base.y + row_u.2 * base.z,
                av: row_v.0 * a.y + row_v.1 * a.z,
                bv: row_v.0 * base.y + row_v.1 * base.z,
                az: a.z,
                bz: base.z,
            }
        })
        .collect()
}

struct ViewSweep<'a> {
    warps: Vec<JointWarp>,
    candidates: &'a [Pose2D],
}

/// Core sweep shared by the person-level and joint-level score matrices:
/// `depths` holds the absolute depth hypothesis per output row (None for
/// rows whose hypothesis is behind the target camera, which stay zero).
fn sweep_scores(
    target_pose: &Pose2D,
    target_cam: &CameraParams,
    ref_views: &[(&CameraParams, &[Pose2D])],
    depths: &[Option<f64>],
    plane_set: DepthPlaneSet,
    sigma: f64,
    mut counters: Option<&mut SweepCounters>,
) -> Result<ScoreMatrix, SweepError> {
    let j_count = target_pose.len();
    let mut matrix = ScoreMatrix::zeros(plane_set, j_count);

    let mut views = Vec::with_capacity(ref_views.len());
    for (cam, candidates) in ref_views {
        if candidates.is_empty() {
            continue;
        }
        for c in *candidates {
            if c.len() != j_count {
                return Err(SweepError::JointCountMismatch {
                    expected: j_count,
                    got: c.len(),
                });
            }
        }
        views.push(ViewSweep {
            warps: warp_coefficients(target_cam, cam, target_pose.joints()),
            candidates,
        });
    }
    if views.is_empty() {
        return Ok(matrix);
    }

    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let mut warped: Vec<Option<Point2D>> = vec![None; j_count];
    let mut num = vec![0.0f64; j_count];
    let mut den = vec![0.0f64; j_count];

    for (row, depth) in depths.iter().enumerate() {
        let Some(d) = *depth else { continue };
        num.fill(0.0);
        den.fill(0.0);
        for view in &views {
            for (w, slot) in view.warps.iter().zip(warped.iter_mut()) {
                *slot = w.at(d);
            }
            if let Some(c) = counters.as_deref_mut() {
                c.warps += j_count as u64;
                c.score_cells += j_count as u64;
                c.pose_matchings += view.candidates.len() as u64;
            }

            // Nearest candidate by mean distance over valid warped joints.
            let mut best: Option<(f64, &Pose2D)> = None;
            for cand in view.candidates {
                let mut sum = 0.0;
                let mut n = 0usize;
                for (slot, cj) in warped.iter().zip(cand.joints()) {
                    if let Some(wj) = slot {
                        sum += joint_distance(*wj, *cj);
                        n += 1;
                    }
                }
                if n == 0 {
                    continue;
                }
                let dist = sum / n as f64;
                if best.is_none_or(|(b, _)| dist < b) {
                    best = Some((dist, cand));
                }
            }
            let Some((_, matched)) = best else { continue };

            for j in 0..j_count {
                let Some(wj) = warped[j] else { continue };
                let weight = matched.conf(j);
                if weight <= 0.0 {
                    continue;
                }
                let du = wj.u - matched.joint(j).u;
                let dv = wj.v - matched.joint(j).v;
                let score = (-(du * du + dv * dv) * inv_two_sigma_sq).exp();
                if let Some(c) = counters.as_deref_mut() {
                    c.exp_evals += 1;
                }
                num[j] += weight * score;
                den[j] += weight;
            }
        }
        for j in 0..j_count {
            if den[j] > 0.0 {
                matrix.set(row, j, num[j] / den[j]);
            }
        }
    }
    Ok(matrix)
}

/// Builds the person-level score matrix: one row per depth plane, one column
/// per joint, fused over reference views by per-joint detection confidence
/// normalized across the views that contributed.
pub fn score_matrix(
    target_pose: &Pose2D,
    target_cam: &CameraParams,
    ref_views: &[(&CameraParams, &[Pose2D])],
    planes: &DepthPlaneSet,
    sigma: f64,
    counters: Option<&mut SweepCounters>,
) -> Result<ScoreMatrix, SweepError> {
    let depths: Vec<Option<f64>> = planes.depths().iter().map(|&d| Some(d)).collect();
    sweep_scores(
        target_pose,
        target_cam,
        ref_views,
        &depths,
        planes.clone(),
        sigma,
        counters,
    )
}

/// Builds the joint-level score matrix over offset planes around an anchor
/// depth. Offsets whose absolute depth is not in front of the target camera
/// produce all-zero rows.
pub fn relative_score_matrix(
    target_pose: &Pose2D,
    anchor_depth: f64,
    target_cam: &CameraParams,
    ref_views: &[(&CameraParams, &[Pose2D])],
    rel_planes: &DepthPlaneSet,
    sigma: f64,
    counters: Option<&mut SweepCounters>,
) -> Result<ScoreMatrix, SweepError> {
    let depths: Vec<Option<f64>> = rel_planes
        .depths()
        .iter()
        .map(|&off| {
            let d = anchor_depth + off;
            (d > 0.0).then_some(d)
        })
        .collect();
    sweep_scores(
        target_pose,
        target_cam,
        ref_views,
        &depths,
        rel_planes.clone(),
        sigma,
        counters,
    )
}
