//! Pinhole camera geometry: world/image transforms, back-projection of image
//! points onto virtual depth planes, and cross-view warping of 2D poses.
//!
//! All world coordinates and depths are millimetres; image coordinates are
//! pixels. Depth of a point is its z coordinate in the camera frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::sweep::Pose2D;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Maximum allowed deviation of RᵀR from identity and of det(R) from 1.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("camera '{name}': {reason}")]
    InvalidCamera { name: String, reason: String },
    #[error("point is behind camera (camera-frame depth {z:.3} mm)")]
    BehindCamera { z: f64 },
    #[error("invalid depth {depth:.3} mm (must be > 0)")]
    InvalidDepth { depth: f64 },
    #[error("invalid depth plane set: {0}")]
    InvalidPlanes(String),
    #[error("rig file {path}: {reason}")]
    RigFormat { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Image-plane point in pixels. Values are finite but not necessarily inside
/// the image bounds: projections of valid world points may land outside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub u: f64,
    pub v: f64,
}

impl Point2D {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// World-frame point in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vec(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn from_vec(v: Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn distance(self, other: Point3D) -> f64 {
        (self.to_vec() - other.to_vec()).norm()
    }
}

/// A world-frame pose: one 3D point per joint. Joint 0 is the skeleton root
/// (center hip) throughout the crate; a person's depth in a camera is the
/// depth of that joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub joints: Vec<Point3D>,
}

impl Pose3D {
    pub fn new(joints: Vec<Point3D>) -> Self {
        Self { joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn root(&self) -> Point3D {
        self.joints[0]
    }

    /// Mean Euclidean distance between corresponding joints.
    pub fn mean_joint_distance(&self, other: &Pose3D) -> f64 {
        assert_eq!(self.len(), other.len());
        let sum: f64 = self
            .joints
            .iter()
            .zip(&other.joints)
            .map(|(a, b)| a.distance(*b))
            .sum();
        sum / self.len() as f64
    }
}

/// One calibrated pinhole camera. Immutable after construction; the
/// constructor validates the calibration and caches derived quantities.
#[derive(Clone, Debug)]
pub struct CameraParams {
    name: String,
    k: Mat3,
    r: Mat3,
    t: Vec3,
    width: u32,
    height: u32,
    k_inv: Mat3,
    r_t: Mat3,
    center: Vec3,
}

impl CameraParams {
    /// Builds a camera, validating that K is upper-triangular with positive
    /// focal entries and K[2][2] = 1, and that R is a proper rotation.
    pub fn new(
        name: impl Into<String>,
        k: Mat3,
        r: Mat3,
        t: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let name = name.into();
        let fail = |reason: String| GeometryError::InvalidCamera {
            name: name.clone(),
            reason,
        };

        for m in k.iter().chain(r.iter()).chain(t.iter()) {
            if !m.is_finite() {
                return Err(fail("non-finite calibration entry".into()));
            }
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(fail("K is not upper-triangular".into()));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(fail("K focal entries must be strictly positive".into()));
        }
        if k[(2, 2)] != 1.0 {
            return Err(fail(format!("K[2][2] must be 1, got {}", k[(2, 2)])));
        }
        let gram = r.transpose() * r;
        let dev = (gram - Mat3::identity()).abs().max();
        if dev >= ROTATION_TOL {
            return Err(fail(format!(
                "R is not orthonormal (max |RᵀR - I| = {dev:.3e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() >= ROTATION_TOL {
            return Err(fail(format!("det(R) must be 1, got {det:.12}")));
        }
        if width == 0 || height == 0 {
            return Err(fail("image dimensions must be positive".into()));
        }

        // K is upper-triangular with unit lower-right entry, so the inverse
        // is exact in closed form and its last row is exactly (0, 0, 1).
        let (fx, s, cx) = (k[(0, 0)], k[(0, 1)], k[(0, 2)]);
        let (fy, cy) = (k[(1, 1)], k[(1, 2)]);
        let k_inv = Mat3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        );
        let r_t = r.transpose();
        let center = -(r_t * t);
        Ok(Self {
            name,
            k,
            r,
            t,
            width,
            height,
            k_inv,
            r_t,
            center,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn k(&self) -> &Mat3 {
        &self.k
    }

    pub fn r(&self) -> &Mat3 {
        &self.r
    }

    pub fn t(&self) -> &Vec3 {
        &self.t
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Point3D {
        Point3D::from_vec(self.center)
    }

    /// Camera-frame depth (z) of a world point.
    pub fn depth_of(&self, point: Point3D) -> f64 {
        (self.r * point.to_vec() + self.t).z
    }

    /// World-frame ray of an image point: origin (camera centre) plus
    /// direction scaled so that origin + depth * direction has camera-frame
    /// depth exactly `depth`.
    pub fn pixel_ray(&self, point: Point2D) -> (Vec3, Vec3) {
        let dir_cam = self.k_inv * Vec3::new(point.u, point.v, 1.0);
        (self.center, self.r_t * dir_cam)
    }
}

/// Equally spaced depth hypotheses over an inclusive range. Also used for
/// joint-level offsets, where the "depths" are signed offsets from an anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthPlaneSet {
    d_min: f64,
    d_max: f64,
    depths: Vec<f64>,
}

impl DepthPlaneSet {
    pub fn new(d_min: f64, d_max: f64, count: usize) -> Result<Self, GeometryError> {
        if !d_min.is_finite() || !d_max.is_finite() {
            return Err(GeometryError::InvalidPlanes("non-finite range".into()));
        }
        if d_min >= d_max {
            return Err(GeometryError::InvalidPlanes(format!(
                "d_min {d_min} must be < d_max {d_max}"
            )));
        }
        if count < 2 {
            return Err(GeometryError::InvalidPlanes(format!(
                "need at least 2 planes, got {count}"
            )));
        }
        let step = (d_max - d_min) / (count - 1) as f64;
        let mut depths: Vec<f64> = (0..count).map(|i| d_min + step * i as f64).collect();
        depths[count - 1] = d_max;
        Ok(Self {
            d_min,
            d_max,
            depths,
        })
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn count(&self) -> usize {
        self.depths.len()
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn depth(&self, i: usize) -> f64 {
        self.depths[i]
    }

    pub fn spacing(&self) -> f64 {
        (self.d_max - self.d_min) / (self.count() - 1) as f64
    }
}

/// Projects a world point into the image. The point must be strictly in
/// front of the camera.
pub fn project(camera: &CameraParams, point: Point3D) -> Result<Point2D, GeometryError> {
    let cam = camera.r * point.to_vec() + camera.t;
    if cam.z <= 0.0 {
        return Err(GeometryError::BehindCamera { z: cam.z });
    }
    let x = cam.x / cam.z;
    let y = cam.y / cam.z;
    let k = &camera.k;
    Ok(Point2D::new(
        k[(0, 0)] * x + k[(0, 1)] * y + k[(0, 2)],
        k[(1, 1)] * y + k[(1, 2)],
    ))
}

/// Lifts an image point to the world point at the given camera-frame depth
/// along its pixel ray.
pub fn back_project(
    camera: &CameraParams,
    point: Point2D,
    depth: f64,
) -> Result<Point3D, GeometryError> {
    if depth.is_nan() || depth <= 0.0 {
        return Err(GeometryError::InvalidDepth { depth });
    }
    let (origin, dir) = camera.pixel_ray(point);
    Ok(Point3D::from_vec(origin + dir * depth))
}

/// Warps a 2D pose from the target view into a reference view by
/// back-projecting every joint onto the depth plane at `depth` (target-camera
/// frame) and projecting into the reference view.
///
/// Confidences pass through unchanged. Validity flags on the output are
/// geometric: a joint that lands behind the reference camera is flagged
/// invalid (with a placeholder position) while the remaining joints warp
/// normally. Input validity flags are not consulted; detector-level validity
/// is tracked by confidence weights downstream.
pub fn warp_pose(
    target_cam: &CameraParams,
    ref_cam: &CameraParams,
    pose: &Pose2D,
    depth: f64,
) -> Result<Pose2D, GeometryError> {
    if depth.is_nan() || depth <= 0.0 {
        return Err(GeometryError::InvalidDepth { depth });
    }
    let mut joints = Vec::with_capacity(pose.len());
    let mut valid = Vec::with_capacity(pose.len());
    for j in 0..pose.len() {
        let world = back_project(target_cam, pose.joint(j), depth)?;
        match project(ref_cam, world) {
            Ok(p) => {
                joints.push(p);
                valid.push(true);
            }
            Err(GeometryError::BehindCamera { .. }) => {
                joints.push(Point2D::new(0.0, 0.0));
                valid.push(false);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Pose2D::from_parts(
        joints,
        pose.confidences().to_vec(),
        valid,
    ))
}

#[derive(Serialize, Deserialize)]
struct RigCameraRecord {
    name: String,
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    width: u32,
    height: u32,
}

/// Loads a camera rig from a JSON array of camera records. Rejects any
/// camera whose rotation is not orthonormal or whose intrinsics are invalid.
pub fn load_rig(path: impl AsRef<Path>) -> Result<Vec<CameraParams>, GeometryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_rig(&text).map_err(|reason| GeometryError::RigFormat {
        path: path.display().to_string(),
        reason,
    })
}

/// Parses rig JSON (see [`load_rig`]).
pub fn parse_rig(text: &str) -> Result<Vec<CameraParams>, String> {
    let records: Vec<RigCameraRecord> =
        serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    if records.is_empty() {
        return Err("rig has no cameras".into());
    }
    records
        .into_iter()
        .map(|rec| {
            CameraParams::new(
                rec.name,
                Mat3::from_row_slice(&rec.k),
                Mat3::from_row_slice(&rec.r),
                Vec3::from_row_slice(&rec.t),
                rec.width,
                rec.height,
            )
            .map_err(|e| e.to_string())
        })
        .collect()
}

/// Serializes a rig to the JSON schema accepted by [`load_rig`].
pub fn rig_to_json(cameras: &[CameraParams]) -> String {
    let records: Vec<RigCameraRecord> = cameras
        .iter()
        .map(|c| {
            let mut k = [0.0; 9];
            let mut r = [0.0; 9];
            for row in 0..3 {
                for col in 0..3 {
                    k[row * 3 + col] = c.k[(row, col)];
                    r[row * 3 + col] = c.r[(row, col)];
                }
            }
            RigCameraRecord {
                name: c.name.clone(),
                k,
                r,
                t: [c.t.x, c.t.y, c.t.z],
                width: c.width,
                height: c.height,
            }
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&records).expect("rig serialization");
    out.push('\n');
    out
}

pub fn save_rig(path: impl AsRef<Path>, cameras: &[CameraParams]) -> Result<(), GeometryError> {
    std::fs::write(path, rig_to_json(cameras))?;
    Ok(())
}

/// Builds a camera at `position` aimed at `target`, with the world +z
/// axis as up and computer-vision image axes (x right, y down; the target
/// projects to the principal point at the image centre). `focal` is in
/// pixels; the principal point is (width/2, height/2).
pub fn look_at_camera(
    name: impl Into<String>,
    position: Point3D,
    target: Point3D,
    focal: f64,
    width: u32,
    height: u32,
) -> Result<CameraParams, GeometryError> {
    let name = name.into();
    let forward = target.to_vec() - position.to_vec();
    let fail = |reason: &str| GeometryError::InvalidCamera {
        name: name.clone(),
        reason: reason.into(),
    };
    if forward.norm() < 1e-9 {
        return Err(fail("position and target coincide"));
    }
    let z_cam = forward.normalize();
    let up = Vec3::z();
    let x_raw = z_cam.cross(&up);
    if x_raw.norm() < 1e-9 {
        return Err(fail("viewing direction is parallel to the up axis"));
    }
    let x_cam = x_raw.normalize();
    let y_cam = z_cam.cross(&x_cam);
    let r = Mat3::from_rows(&[x_cam.transpose(), y_cam.transpose(), z_cam.transpose()]);
    let t = -(r * position.to_vec());
    let k = Mat3::new(
        focal,
        0.0,
        width as f64 / 2.0,
        0.0,
        focal,
        height as f64 / 2.0,
        0.0,
        0.0,
        1.0,
    );
    CameraParams::new(name, k, r, t, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_camera(f: f64) -> CameraParams {
        let k = Mat3::new(f, 0.0, 0.0, 0.0, f, 0.0, 0.0, 0.0, 1.0);
        CameraParams::new("id", k, Mat3::identity(), Vec3::zeros(), 1920, 1080).unwrap()
    }

    /// Rotation about a unit axis, built from quaternion algebra so it is
    /// orthonormal to machine precision.
    fn rotation(axis: Vec3, angle: f64) -> Mat3 {
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner()
    }

    fn random_camera(rng: &mut ChaCha8Rng) -> CameraParams {
        let f = rng.gen_range(800.0..1400.0);
        let cx = rng.gen_range(900.0..1000.0);
        let cy = rng.gen_range(500.0..580.0);
        let k = Mat3::new(f, 0.0, cx, 0.0, f * rng.gen_range(0.95..1.05), cy, 0.0, 0.0, 1.0);
        let axis = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let r = rotation(axis, rng.gen_range(-1.0..1.0));
        let t = Vec3::new(
            rng.gen_range(-2000.0..2000.0),
            rng.gen_range(-2000.0..2000.0),
            rng.gen_range(2000.0..8000.0),
        );
        CameraParams::new("rand", k, r, t, 1920, 1080).unwrap()
    }

    #[test]
    fn project_optical_axis_hits_principal_point() {
        let cam = identity_camera(1.0);
        let p = project(&cam, Point3D::new(0.0, 0.0, 1000.0)).unwrap();
        assert_eq!((p.u, p.v), (0.0, 0.0));
    }

    #[test]
    fn project_matches_pinhole_formula() {
        let cam = identity_camera(1000.0);
        let p = project(&cam, Point3D::new(500.0, 0.0, 1000.0)).unwrap();
        assert_relative_eq!(p.u, 500.0, max_relative = 1e-12);
        assert_relative_eq!(p.v, 0.0);
    }

    #[test]
    fn project_behind_camera_errors() {
        let cam = identity_camera(1000.0);
        let err = project(&cam, Point3D::new(0.0, 0.0, -10.0)).unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera { .. }));
        let err = project(&cam, Point3D::new(0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera { .. }));
    }

    #[test]
    fn back_project_principal_ray() {
        let cam = identity_camera(1.0);
        let p = back_project(&cam, Point2D::new(0.0, 0.0), 1000.0).unwrap();
        assert_relative_eq!(p.x, 0.0);
        assert_relative_eq!(p.y, 0.0);
        assert_relative_eq!(p.z, 1000.0);
    }

    #[test]
    fn back_project_rejects_nonpositive_depth() {
        let cam = identity_camera(1.0);
        for d in [0.0, -5.0] {
            let err = back_project(&cam, Point2D::new(1.0, 2.0), d).unwrap_err();
            assert!(matches!(err, GeometryError::InvalidDepth { .. }));
        }
    }

    #[test]
    fn back_project_matches_ray_march_oracle() {
        // Independent check: march along the normalized pixel ray and find
        // the parameter whose camera depth is 2500 by bisection.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cam = random_camera(&mut rng);
        let pixel = Point2D::new(123.4, 56.7);
        let want_depth = 2500.0;

        let (origin, dir) = cam.pixel_ray(pixel);
        let dir = dir.normalize();
        let depth_at = |s: f64| cam.depth_of(Point3D::from_vec(origin + dir * s)) - want_depth;
        let (mut lo, mut hi) = (0.0, 1.0e6);
        assert!(depth_at(lo) < 0.0 && depth_at(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if depth_at(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = Point3D::from_vec(origin + dir * (0.5 * (lo + hi)));

        let got = back_project(&cam, pixel, want_depth).unwrap();
        assert!(got.distance(oracle) < 1e-3, "off by {}", got.distance(oracle));
    }

    #[test]
    fn warp_identity_view_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = random_camera(&mut rng);
        let joints: Vec<Point2D> = (0..5)
            .map(|_| Point2D::new(rng.gen_range(100.0..1800.0), rng.gen_range(100.0..1000.0)))
            .collect();
        let pose = Pose2D::uniform(joints.clone());
        for depth in [700.0, 3000.0, 9000.0] {
            let warped = warp_pose(&cam, &cam, &pose, depth).unwrap();
            for (a, b) in joints.iter().zip(warped.joints()) {
                assert!((a.u - b.u).abs() < 1e-6 && (a.v - b.v).abs() < 1e-6);
            }
            assert!(warped.validity().iter().all(|&v| v));
        }
    }

    #[test]
    fn warp_rectified_stereo_has_closed_form_disparity() {
        // Two identical cameras separated by a pure horizontal baseline b:
        // the warp at depth d shifts u by exactly f*b/d.
        let f = 1100.0;
        let b = 400.0;
        let k = Mat3::new(f, 0.0, 960.0, 0.0, f, 540.0, 0.0, 0.0, 1.0);
        let left =
            CameraParams::new("L", k, Mat3::identity(), Vec3::zeros(), 1920, 1080).unwrap();
        let right =
            CameraParams::new("R", k, Mat3::identity(), Vec3::new(-b, 0.0, 0.0), 1920, 1080)
                .unwrap();
        let pose = Pose2D::uniform(vec![
            Point2D::new(300.0, 200.0),
            Point2D::new(960.0, 540.0),
            Point2D::new(1500.0, 900.0),
        ]);
        for depth in [800.0, 2500.0, 7000.0] {
            let warped = warp_pose(&left, &right, &pose, depth).unwrap();
            for (orig, w) in pose.joints().iter().zip(warped.joints()) {
                assert_relative_eq!(w.u - orig.u, -f * b / depth, max_relative = 1e-9);
                assert_relative_eq!(w.v, orig.v, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn warp_flags_joints_behind_reference_camera() {
        // Reference camera faces the opposite way, so world points in front
        // of the target are behind it; one joint is placed to stay valid.
        let f = 1000.0;
        let k = Mat3::new(f, 0.0, 960.0, 0.0, f, 540.0, 0.0, 0.0, 1.0);
        let target =
            CameraParams::new("T", k, Mat3::identity(), Vec3::zeros(), 1920, 1080).unwrap();
        // Rotate pi about the y axis: looks along -z, centred at z = +9000.
        let r = rotation(Vec3::new(0.0, 1.0, 0.0), std::f64::consts::PI);
        let t = -(r * Vec3::new(0.0, 0.0, 9000.0));
        let reverse = CameraParams::new("B", k, r, t, 1920, 1080).unwrap();

        let pose = Pose2D::uniform(vec![Point2D::new(960.0, 540.0), Point2D::new(400.0, 300.0)]);
        // Depth 2000: points at z=2000 are in front of the reverse camera
        // (which sits at 9000 looking back), all valid.
        let warped = warp_pose(&target, &reverse, &pose, 2000.0).unwrap();
        assert!(warped.validity().iter().all(|&v| v));
        // Depth 12000: beyond the reverse camera, all joints invalid.
        let warped = warp_pose(&target, &reverse, &pose, 12000.0).unwrap();
        assert!(warped.validity().iter().all(|&v| !v));
        assert_eq!(warped.confidences(), pose.confidences());
    }

    fn random_ring_camera(rng: &mut ChaCha8Rng, azimuth: f64) -> CameraParams {
        let radius = rng.gen_range(4000.0..7000.0);
        let pos = Vec3::new(
            radius * azimuth.cos(),
            radius * azimuth.sin(),
            rng.gen_range(1800.0..3000.0),
        );
        let target = Vec3::new(0.0, 0.0, rng.gen_range(800.0..1500.0));
        let zc = (target - pos).normalize();
        let up = Vec3::new(0.0, 0.0, 1.0);
        let xc = zc.cross(&up).normalize();
        let yc = zc.cross(&xc);
        let r = Mat3::from_rows(&[xc.transpose(), yc.transpose(), zc.transpose()]);
        let t = -(r * pos);
        let f = rng.gen_range(900.0..1300.0);
        let k = Mat3::new(f, 0.0, 960.0, 0.0, f, 540.0, 0.0, 0.0, 1.0);
        CameraParams::new("ring", k, r, t, 1920, 1080).unwrap()
    }

    #[test]
    fn warp_converges_to_vanishing_point() {
        // The warp deviates from its vanishing-point limit by O(f * b / d)
        // for cameras observing a shared workspace, so successive decade
        // depths shrink the drift 10x and it dies out entirely.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut tested = 0;
        for _ in 0..20 {
            let az = rng.gen_range(0.0..std::f64::consts::TAU);
            let sep = rng.gen_range(0.6..2.6);
            let a = random_ring_camera(&mut rng, az);
            let b = random_ring_camera(&mut rng, az + sep);
            assert!(a.center().distance(b.center()) < 10_000.0 * 1.8);
            let pose = Pose2D::uniform(vec![Point2D::new(
                rng.gen_range(400.0..1500.0),
                rng.gen_range(200.0..900.0),
            )]);
            let drift = |d1: f64, d2: f64| -> Option<f64> {
                let w1 = warp_pose(&a, &b, &pose, d1).unwrap();
                let w2 = warp_pose(&a, &b, &pose, d2).unwrap();
                (w1.is_valid(0) && w2.is_valid(0)).then(|| {
                    let du = w1.joint(0).u - w2.joint(0).u;
                    let dv = w1.joint(0).v - w2.joint(0).v;
                    du.hypot(dv)
                })
            };
            // Drift between successive decade depths shrinks 10x per decade
            // once d dwarfs the camera-offset term, so measure deep.
            let (Some(coarse), Some(fine)) = (drift(1.0e8, 1.0e9), drift(1.0e9, 1.0e10)) else {
                continue;
            };
            if coarse > 1e-3 {
                assert_relative_eq!(coarse / fine, 10.0, max_relative = 0.05);
            }
            // Each decade shrinks the drift 10x; within a few decades it
            // falls below a tenth of a pixel and stays there.
            let mut d = 1.0e8;
            let mut settled = false;
            while d <= 1.0e12 {
                if drift(d, 10.0 * d).unwrap() < 0.1 {
                    settled = true;
                    break;
                }
                d *= 10.0;
            }
            assert!(settled, "warp never settled near its vanishing point");
            tested += 1;
        }
        assert!(tested >= 5);
    }

    #[test]
    fn plane_set_is_uniform_and_inclusive() {
        let planes = DepthPlaneSet::new(500.0, 13_000.0, 64).unwrap();
        assert_eq!(planes.count(), 64);
        assert_eq!(planes.depth(0), 500.0);
        assert_eq!(planes.depth(63), 13_000.0);
        let step = planes.spacing();
        for i in 1..64 {
            let gap = planes.depth(i) - planes.depth(i - 1);
            assert!((gap - step).abs() / step < 1e-9);
        }
    }

    #[test]
    fn plane_set_rejects_bad_ranges() {
        assert!(DepthPlaneSet::new(100.0, 100.0, 4).is_err());
        assert!(DepthPlaneSet::new(200.0, 100.0, 4).is_err());
        assert!(DepthPlaneSet::new(100.0, 200.0, 1).is_err());
        assert!(DepthPlaneSet::new(f64::NAN, 200.0, 4).is_err());
    }

    #[test]
    fn camera_validation_rejects_bad_calibrations() {
        let k = Mat3::new(1000.0, 0.0, 960.0, 0.0, 1000.0, 540.0, 0.0, 0.0, 1.0);
        // Lower-triangular leak.
        let mut bad_k = k;
        bad_k[(1, 0)] = 2.0;
        assert!(CameraParams::new("c", bad_k, Mat3::identity(), Vec3::zeros(), 10, 10).is_err());
        // Negative focal.
        let mut bad_k = k;
        bad_k[(0, 0)] = -10.0;
        assert!(CameraParams::new("c", bad_k, Mat3::identity(), Vec3::zeros(), 10, 10).is_err());
        // K[2][2] != 1.
        let mut bad_k = k;
        bad_k[(2, 2)] = 2.0;
        assert!(CameraParams::new("c", bad_k, Mat3::identity(), Vec3::zeros(), 10, 10).is_err());
        // Non-orthonormal R.
        let mut bad_r = Mat3::identity();
        bad_r[(0, 0)] = 1.0 + 1e-6;
        assert!(CameraParams::new("c", k, bad_r, Vec3::zeros(), 10, 10).is_err());
        // Reflection (det = -1).
        let mut refl = Mat3::identity();
        refl[(0, 0)] = -1.0;
        assert!(CameraParams::new("c", k, refl, Vec3::zeros(), 10, 10).is_err());
    }

    #[test]
    fn rig_json_round_trips_and_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rig: Vec<CameraParams> = (0..3).map(|_| random_camera(&mut rng)).collect();
        let text = rig_to_json(&rig);
        let loaded = parse_rig(&text).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in rig.iter().zip(&loaded) {
            assert_eq!(a.k(), b.k());
            assert_eq!(a.r(), b.r());
            assert_eq!(a.t(), b.t());
        }

        // Corrupt one rotation entry beyond tolerance: loader must reject.
        let mut records: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
        records[0]["R"][0] = serde_json::json!(1.5);
        let bad = serde_json::to_string(&records).unwrap();
        assert!(parse_rig(&bad).is_err());

        assert!(parse_rig("[]").is_err());
        assert!(parse_rig("not json").is_err());
    }

    proptest! {
        #[test]
        fn back_project_then_project_is_identity(
            seed in 0u64..5000,
            u in 0.0..1920.0f64,
            v in 0.0..1080.0f64,
            depth in 100.0..50_000.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = random_camera(&mut rng);
            let world = back_project(&cam, Point2D::new(u, v), depth).unwrap();
            prop_assert!((cam.depth_of(world) - depth).abs() / depth < 1e-12);
            let px = project(&cam, world).unwrap();
            prop_assert!((px.u - u).abs() < 1e-6 && (px.v - v).abs() < 1e-6);
        }

        #[test]
        fn back_projection_is_linear_in_depth(
            seed in 0u64..5000,
            u in 0.0..1920.0f64,
            v in 0.0..1080.0f64,
            depth in 100.0..10_000.0f64,
            alpha in 0.1..20.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = random_camera(&mut rng);
            let c = cam.center().to_vec();
            let p1 = back_project(&cam, Point2D::new(u, v), depth).unwrap().to_vec() - c;
            let p2 = back_project(&cam, Point2D::new(u, v), alpha * depth).unwrap().to_vec() - c;
            let err = (p2 - p1 * alpha).norm() / p2.norm().max(1.0);
            prop_assert!(err < 1e-9, "relative deviation {err}");
        }
    }

    #[test]
    fn look_at_camera_centres_target_with_y_down() {
        let target = Point3D::new(0.0, 0.0, 1000.0);
        let cam = look_at_camera(
            "cam0",
            Point3D::new(5000.0, 0.0, 2000.0),
            target,
            1000.0,
            1920,
            1080,
        )
        .unwrap();
        let px = project(&cam, target).unwrap();
        assert_relative_eq!(px.u, 960.0, epsilon = 1e-9);
        assert_relative_eq!(px.v, 540.0, epsilon = 1e-9);
        assert_relative_eq!(
            cam.depth_of(target),
            (5000.0f64.powi(2) + 1000.0f64.powi(2)).sqrt(),
            max_relative = 1e-12
        );
        // A point above the target must land above the principal point
        // (smaller v) under image-y-down conventions.
        let above = project(&cam, Point3D::new(0.0, 0.0, 1500.0)).unwrap();
        assert!(above.v < 540.0);
        assert_relative_eq!(above.u, 960.0, epsilon = 1e-9);
        // Facing along -x with +z up puts world +y on the camera's right,
        // so it lands at larger u.
        let right = project(&cam, Point3D::new(0.0, 500.0, 1000.0)).unwrap();
        assert!(right.u > 960.0);

        assert!(look_at_camera("bad", target, target, 1000.0, 64, 64).is_err());
        let overhead = look_at_camera(
            "overhead",
            Point3D::new(0.0, 0.0, 5000.0),
            target,
            1000.0,
            64,
            64,
        );
        assert!(overhead.is_err());
    }
}
