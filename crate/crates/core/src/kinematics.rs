//! Rigid-pose arithmetic for part instances.
//!
//! Two jobs live here: fusing several pose estimates of one part into a
//! single pose (Euclidean mean of positions, L2 chordal mean of
//! orientations), and laying out every connected component of an
//! [`Assembly`] in a common frame so that relative part translations can be
//! predicted for a hypothesis.
//!
//! Joints are rigid attachments whose two contact frames coincide: if part
//! `a` sits at `X_a` and its contact `c_a` has local pose `C_a`, then part
//! `b` joined through contact `c_b` sits at `X_a * C_a * C_b^-1`.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{Assembly, InstanceId};

/// Position tolerance (meters) for two paths around a cycle to agree.
pub const CYCLE_TOLERANCE: f64 = 1e-6;
/// Angular tolerance (radians) for two paths around a cycle to agree.
pub const CYCLE_ANGLE_TOLERANCE: f64 = 1e-6;
/// Smallest singular value of the averaged rotation matrix below which the
/// chordal mean is considered undefined.
pub const DEGENERATE_SINGULAR_VALUE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("cannot average an empty set of poses")]
    EmptyInput,
    #[error("mean rotation matrix is rank deficient (smallest singular value {0:e})")]
    DegenerateMean(f64),
    #[error(
        "joint {joint} closes an inconsistent cycle (translation gap {gap_m:e} m, angle gap {gap_rad:e} rad)"
    )]
    InconsistentCycle {
        joint: String,
        gap_m: f64,
        gap_rad: f64,
    },
    #[error("quaternion [{0}, {1}, {2}, {3}] cannot be normalized")]
    BadQuaternion(f64, f64, f64, f64),
}

/// A rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

/// Wire form: translation in meters and a `wxyz` quaternion.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub rotation: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl TryFrom<PoseRecord> for Pose {
    type Error = KinematicsError;

    fn try_from(r: PoseRecord) -> Result<Self, Self::Error> {
        Ok(Pose {
            translation: Vector3::from(r.translation),
            rotation: quaternion_from_wxyz(r.rotation)?,
        })
    }
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        let q = p.rotation.quaternion();
        PoseRecord {
            translation: [p.translation.x, p.translation.y, p.translation.z],
            rotation: [q.w, q.i, q.j, q.k],
        }
    }
}

/// Build a unit quaternion from `[w, x, y, z]`, normalizing it. Inputs that
/// are already unit length to within `1e-12` are kept bit-for-bit so that
/// serialized poses round-trip exactly.
pub fn quaternion_from_wxyz(q: [f64; 4]) -> Result<UnitQuaternion<f64>, KinematicsError> {
    let raw = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = raw.norm();
    if !norm.is_finite() || norm < 1e-12 {
        return Err(KinematicsError::BadQuaternion(q[0], q[1], q[2], q[3]));
    }
    if (norm - 1.0).abs() <= 1e-12 {
        return Ok(UnitQuaternion::new_unchecked(raw));
    }
    Ok(UnitQuaternion::from_quaternion(raw))
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.translation + self.rotation * other.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }
}

/// Euclidean mean of translations and L2 chordal mean of rotations.
///
/// The chordal mean is the projection of the element-wise mean rotation
/// matrix onto SO(3): with `M = U S V^T`, the result is `U D V^T` where `D`
/// flips the axis of the smallest singular value when `det(U V^T) < 0`.
pub fn mean_pose(poses: &[Pose]) -> Result<Pose, KinematicsError> {
    if poses.is_empty() {
        return Err(KinematicsError::EmptyInput);
    }
    let n = poses.len() as f64;
    let translation = poses
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.translation)
        / n;
    let mean = poses
        .iter()
        .fold(Matrix3::zeros(), |acc, p| acc + p.rotation_matrix())
        / n;
    let rotation = project_to_rotation(&mean)?;
    Ok(Pose::new(translation, rotation))
}

/// Nearest rotation (Frobenius norm) to an arbitrary 3x3 matrix.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Result<UnitQuaternion<f64>, KinematicsError> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(KinematicsError::DegenerateMean(0.0)),
    };
    // nalgebra does not sort singular values.
    let (smallest_idx, smallest) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("3 singular values");
    if !(smallest >= DEGENERATE_SINGULAR_VALUE) {
        return Err(KinematicsError::DegenerateMean(smallest));
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(smallest_idx, smallest_idx)] = -1.0;
    }
    let r = u * d * v_t;
    Ok(UnitQuaternion::from_rotation_matrix(
        &Rotation3::from_matrix_unchecked(r),
    ))
}

/// Part poses of every instance, each expressed in the frame of its
/// component's reference part (the lowest instance id of the component).
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub poses: BTreeMap<InstanceId, Pose>,
    /// Component index for every instance, matching
    /// [`Assembly::connected_components`] order.
    pub component: BTreeMap<InstanceId, usize>,
}

impl Layout {
    pub fn same_component(&self, i: InstanceId, j: InstanceId) -> bool {
        match (self.component.get(&i), self.component.get(&j)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    /// `x_i - x_j` in the component frame.
    pub fn delta(&self, i: InstanceId, j: InstanceId) -> Option<Vector3<f64>> {
        if !self.same_component(i, j) {
            return None;
        }
        Some(self.poses[&i].translation - self.poses[&j].translation)
    }

    /// `x_i - x_j` expressed in the body frame of part `j`.
    pub fn local_delta(&self, i: InstanceId, j: InstanceId) -> Option<Vector3<f64>> {
        let d = self.delta(i, j)?;
        Some(self.poses[&j].rotation.inverse() * d)
    }
}

/// Relative translation `x_i - x_j` between two parts of one component.
/// Only `i < j` is stored; `delta(j, i)` is `-delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeTranslation {
    pub pair: (InstanceId, InstanceId),
    pub delta: Vector3<f64>,
}

impl RelativeTranslation {
    pub fn reversed(&self) -> Vector3<f64> {
        -self.delta
    }
}

/// Lay out every component by breadth-first propagation of joint
/// transforms, verifying that every non-tree joint agrees with the tree.
pub fn component_layout(s: &Assembly) -> Result<Layout, KinematicsError> {
    let scene = s.scene();
    let catalog = scene.catalog();
    let mut adjacency: BTreeMap<InstanceId, Vec<(InstanceId, Pose)>> = BTreeMap::new();
    for joint in s.joints() {
        let ca = catalog
            .contact_pose(scene.part_type_of(joint.part_a).expect("validated"), joint.contact_a)
            .expect("validated");
        let cb = catalog
            .contact_pose(scene.part_type_of(joint.part_b).expect("validated"), joint.contact_b)
            .expect("validated");
        // X_b = X_a * C_a * C_b^-1 and X_a = X_b * C_b * C_a^-1.
        let a_to_b = ca.compose(&cb.inverse());
        adjacency
            .entry(joint.part_a)
            .or_default()
            .push((joint.part_b, a_to_b));
        adjacency
            .entry(joint.part_b)
            .or_default()
            .push((joint.part_a, a_to_b.inverse()));
    }

    let mut poses = BTreeMap::new();
    let mut component = BTreeMap::new();
    let mut next_component = 0;
    for root in scene.instance_ids() {
        if poses.contains_key(&root) {
            continue;
        }
        poses.insert(root, Pose::identity());
        component.insert(root, next_component);
        let mut queue = VecDeque::from([root]);
        while let Some(cur) = queue.pop_front() {
            let here = poses[&cur];
            for (nb, step) in adjacency.get(&cur).map(Vec::as_slice).unwrap_or(&[]) {
                let implied = here.compose(step);
                match poses.get(nb) {
                    None => {
                        poses.insert(*nb, implied);
                        component.insert(*nb, next_component);
                        queue.push_back(*nb);
                    }
                    Some(existing) => {
                        let gap_m = (existing.translation - implied.translation).norm();
                        let gap_rad = existing.rotation.angle_to(&implied.rotation);
                        if gap_m > CYCLE_TOLERANCE || gap_rad > CYCLE_ANGLE_TOLERANCE {
                            return Err(KinematicsError::InconsistentCycle {
                                joint: format!("{cur}-{nb}"),
                                gap_m,
                                gap_rad,
                            });
                        }
                    }
                }
            }
        }
        next_component += 1;
    }
    Ok(Layout { poses, component })
}

/// Relative translations for every pair of parts sharing a component.
pub fn predicted_relative_translations(
    s: &Assembly,
) -> Result<Vec<RelativeTranslation>, KinematicsError> {
    let layout = component_layout(s)?;
    let ids: Vec<InstanceId> = layout.poses.keys().copied().collect();
    let mut out = Vec::new();
    for (n, &i) in ids.iter().enumerate() {
        for &j in &ids[n + 1..] {
            if let Some(delta) = layout.delta(i, j) {
                out.push(RelativeTranslation {
                    pair: (i, j),
                    delta,
                });
            }
        }
    }
    Ok(out)
}
