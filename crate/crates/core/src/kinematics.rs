//! Serial revolute manipulator: forward kinematics, geometric Jacobian,
//! damped least-squares IK, and capsule collision checks.
//!
//! Frame convention: joint `i` sits at `T_{i-1} * origin_i` and rotates
//! about its local `axis_i`; link `i` (and its capsule) is rigidly
//! attached to the frame after that rotation. The shield frame is
//! `T_n * flange * tool`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Matrix6, Translation3, Unit, UnitQuaternion, Vector6};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::collision::{capsule_capsule, Capsule, Obstacle};
use crate::geometry::PoseTolerance;
use crate::{JointVec, Pose, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("inverse kinematics did not converge")]
    IkFailure,
    #[error("invalid manipulator model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevoluteJoint {
    /// Unit rotation axis in the joint frame.
    pub axis: Vec3,
    /// Fixed transform from the previous link frame to this joint frame.
    pub origin: Pose,
}

/// Capsule in link-frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkCapsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorModel {
    pub joints: Vec<RevoluteJoint>,
    pub joint_limits: Vec<(f64, f64)>,
    /// Per-joint maximum |qdot| (rad/s).
    pub velocity_limits: Vec<f64>,
    /// One capsule per link.
    pub link_capsules: Vec<LinkCapsule>,
    pub home_config: JointVec,
    /// Last link frame to flange.
    pub flange: Pose,
    /// Flange to shield mount.
    pub tool: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: JointVec,
    pub qdot: JointVec,
}

impl JointState {
    pub fn at_rest(q: JointVec) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: vec![0.0; n],
        }
    }
}

fn translation(x: f64, y: f64, z: f64) -> Pose {
    Pose::from_parts(Translation3::new(x, y, z), UnitQuaternion::identity())
}

impl ManipulatorModel {
    /// Six-axis industrial-class arm (about 1.5 m from base to shield),
    /// axes Z, Y, Y, Z, Y, Z.
    pub fn default_arm() -> Self {
        let offsets = [0.0, 0.3, 0.55, 0.2, 0.3, 0.1];
        let axes = [
            Vec3::z(),
            Vec3::y(),
            Vec3::y(),
            Vec3::z(),
            Vec3::y(),
            Vec3::z(),
        ];
        let joints = offsets
            .iter()
            .zip(axes.iter())
            .map(|(&dz, &axis)| RevoluteJoint {
                axis,
                origin: translation(0.0, 0.0, dz),
            })
            .collect();
        let lengths = [0.3, 0.55, 0.2, 0.3, 0.1, 0.05];
        let radii = [0.08, 0.06, 0.05, 0.05, 0.04, 0.02];
        let link_capsules = lengths
            .iter()
            .zip(radii.iter())
            .map(|(&l, &r)| LinkCapsule {
                a: Vec3::zeros(),
                b: Vec3::new(0.0, 0.0, l),
                radius: r,
            })
            .collect();
        let pi = core::f64::consts::PI;
        Self {
            joints,
            joint_limits: vec![
                (-pi, pi),
                (-1.6, 1.6),
                (-2.1, 2.1),
                (-pi, pi),
                (-2.1, 2.1),
                (-pi, pi),
            ],
            velocity_limits: vec![2.62, 2.79, 2.97, 5.59, 6.98, 8.03],
            link_capsules,
            // shield near (0.6, 0, 0.9) facing +X
            home_config: vec![0.0, -0.0855, 1.5526, 0.0, 0.1037, 0.0],
            flange: translation(0.0, 0.0, 0.05),
            tool: Pose::identity(),
        }
    }

    /// Planar arm in the XY plane with Z axes and links along local X.
    pub fn planar(lengths: &[f64], vmax: f64) -> Self {
        let pi = core::f64::consts::PI;
        let n = lengths.len();
        let joints = (0..n)
            .map(|i| RevoluteJoint {
                axis: Vec3::z(),
                origin: if i == 0 {
                    Pose::identity()
                } else {
                    translation(lengths[i - 1], 0.0, 0.0)
                },
            })
            .collect();
        let link_capsules = lengths
            .iter()
            .map(|&l| LinkCapsule {
                a: Vec3::zeros(),
                b: Vec3::new(l, 0.0, 0.0),
                radius: 0.02,
            })
            .collect();
        Self {
            joints,
            joint_limits: vec![(-pi, pi); n],
            velocity_limits: vec![vmax; n],
            link_capsules,
            home_config: vec![0.0; n],
            flange: translation(lengths[n - 1], 0.0, 0.0),
            tool: Pose::identity(),
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let n = self.dof();
        let bad = |m: &str| Err(KinematicsError::InvalidModel(m.into()));
        if n == 0 {
            return bad("no joints");
        }
        if self.joint_limits.len() != n
            || self.velocity_limits.len() != n
            || self.link_capsules.len() != n
            || self.home_config.len() != n
        {
            return bad("per-joint arrays must match the joint count");
        }
        if self
            .joints
            .iter()
            .any(|j| (j.axis.norm() - 1.0).abs() > 1e-9)
        {
            return bad("joint axes must be unit vectors");
        }
        if self.joint_limits.iter().any(|&(lo, hi)| !(lo < hi)) {
            return bad("joint limits must satisfy min < max");
        }
        if self.velocity_limits.iter().any(|&v| !(v > 0.0)) {
            return bad("velocity limits must be positive");
        }
        if self.link_capsules.iter().any(|c| !(c.radius >= 0.0)) {
            return bad("capsule radii must be non-negative");
        }
        if !self.within_limits(&self.home_config) {
            return bad("home configuration outside joint limits");
        }
        Ok(())
    }

    pub fn check_dim(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::Dimension {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof()
            && q.iter()
                .zip(&self.joint_limits)
                .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    pub fn clamp_to_limits(&self, q: &mut [f64]) {
        for (v, &(lo, hi)) in q.iter_mut().zip(&self.joint_limits) {
            *v = v.clamp(lo, hi);
        }
    }

    /// Upper bound on the shield-frame origin speed (m/s).
    pub fn max_tool_speed(&self) -> f64 {
        let n = self.dof();
        let mut lengths: Vec<f64> = (1..n)
            .map(|i| self.joints[i].origin.translation.vector.norm())
            .collect();
        lengths.push((self.flange * self.tool).translation.vector.norm());
        (0..n)
            .map(|j| self.velocity_limits[j] * lengths[j..].iter().sum::<f64>())
            .sum()
    }

    /// Distance from the first joint to the shield frame when stretched.
    pub fn reach(&self) -> f64 {
        let n = self.dof();
        (1..n)
            .map(|i| self.joints[i].origin.translation.vector.norm())
            .sum::<f64>()
            + (self.flange * self.tool).translation.vector.norm()
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<FkResult, KinematicsError> {
        self.check_dim(q)?;
        Ok(self.fk_unchecked(q))
    }

    pub(crate) fn fk_unchecked(&self, q: &[f64]) -> FkResult {
        let n = self.dof();
        let mut frames = Vec::with_capacity(n);
        let mut joint_origins = Vec::with_capacity(n);
        let mut joint_axes = Vec::with_capacity(n);
        let mut t = Pose::identity();
        for (joint, &qi) in self.joints.iter().zip(q) {
            let jf = t * joint.origin;
            joint_origins.push(jf.translation.vector);
            joint_axes.push(jf.rotation * joint.axis);
            let rot = UnitQuaternion::from_axis_angle(&Unit::new_unchecked(joint.axis), qi);
            t = jf * Pose::from_parts(Translation3::identity(), rot);
            frames.push(t);
        }
        let ee = t * self.flange * self.tool;
        let capsules = frames
            .iter()
            .zip(&self.link_capsules)
            .map(|(f, c)| Capsule {
                a: f.transform_point(&c.a.into()).coords,
                b: f.transform_point(&c.b.into()).coords,
                radius: c.radius,
            })
            .collect();
        FkResult {
            ee,
            frames,
            joint_origins,
            joint_axes,
            capsules,
        }
    }

    /// 6 x n geometric Jacobian of the shield frame (linear rows first),
    /// stored column-major as `[v; w]` per joint.
    pub fn jacobian(&self, fk: &FkResult) -> Vec<Vector6<f64>> {
        let p = fk.ee.translation.vector;
        fk.joint_axes
            .iter()
            .zip(&fk.joint_origins)
            .map(|(w, o)| {
                let v = w.cross(&(p - o));
                Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
            })
            .collect()
    }

    /// Velocity of world point `p` on link `link` due to a unit rate of
    /// joint `j`.
    pub fn point_jacobian_column(fk: &FkResult, link: usize, j: usize, p: &Vec3) -> Vec3 {
        if j > link {
            return Vec3::zeros();
        }
        fk.joint_axes[j].cross(&(p - fk.joint_origins[j]))
    }

    /// Non-adjacent link pairs checked for self-collision.
    pub fn self_collision_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.dof();
        (0..n).flat_map(move |i| ((i + 2)..n).map(move |k| (i, k)))
    }

    pub fn in_collision(&self, q: &[f64], obstacles: &[Obstacle]) -> bool {
        if self.check_dim(q).is_err() {
            return true;
        }
        let fk = self.fk_unchecked(q);
        self.fk_in_collision(&fk, obstacles)
    }

    pub fn fk_in_collision(&self, fk: &FkResult, obstacles: &[Obstacle]) -> bool {
        for cap in &fk.capsules {
            for obs in obstacles {
                if obs.distance_lower_bound(cap) > 0.0 {
                    continue;
                }
                if obs.capsule_distance(cap).distance < 0.0 {
                    return true;
                }
            }
        }
        self.self_collision_pairs()
            .any(|(i, k)| capsule_capsule(&fk.capsules[i], &fk.capsules[k]).0 < 0.0)
    }

    /// Smallest signed surface distance over all obstacle and
    /// self-collision pairs (`+inf` when there is nothing to check).
    pub fn min_clearance(&self, fk: &FkResult, obstacles: &[Obstacle]) -> f64 {
        let mut best = f64::INFINITY;
        for cap in &fk.capsules {
            for obs in obstacles {
                best = best.min(obs.capsule_distance(cap).distance);
            }
        }
        for (i, k) in self.self_collision_pairs() {
            best = best.min(capsule_capsule(&fk.capsules[i], &fk.capsules[k]).0);
        }
        best
    }

    /// Every obstacle or self-collision pair closer than `cutoff`, with the
    /// gradient of its distance with respect to `q` when requested.
    pub fn proximity_terms(
        &self,
        fk: &FkResult,
        obstacles: &[Obstacle],
        cutoff: f64,
        with_grad: bool,
        out: &mut Vec<ProximityTerm>,
    ) {
        let n = self.dof();
        for (link, cap) in fk.capsules.iter().enumerate() {
            for obs in obstacles {
                if obs.distance_lower_bound(cap) >= cutoff {
                    continue;
                }
                let contact = obs.capsule_distance(cap);
                if contact.distance >= cutoff {
                    continue;
                }
                let grad = if with_grad {
                    (0..n)
                        .map(|j| {
                            contact.normal.dot(&Self::point_jacobian_column(
                                fk,
                                link,
                                j,
                                &contact.point,
                            ))
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                out.push(ProximityTerm {
                    distance: contact.distance,
                    grad,
                });
            }
        }
        for (i, k) in self.self_collision_pairs() {
            let (d, xi, xk, nrm) = capsule_capsule(&fk.capsules[i], &fk.capsules[k]);
            if d >= cutoff {
                continue;
            }
            let grad = if with_grad {
                (0..n)
                    .map(|j| {
                        nrm.dot(
                            &(Self::point_jacobian_column(fk, i, j, &xi)
                                - Self::point_jacobian_column(fk, k, j, &xk)),
                        )
                    })
                    .collect()
            } else {
                Vec::new()
            };
            out.push(ProximityTerm { distance: d, grad });
        }
    }

    /// Damped least-squares IK from `seed`, then from random restarts.
    pub fn inverse_kinematics(
        &self,
        target: &Pose,
        seed: &[f64],
        tol: &PoseTolerance,
        params: &IkParams,
    ) -> Result<IkSolution, KinematicsError> {
        self.inverse_kinematics_filtered(target, seed, tol, params, |_| true)
    }

    /// Like [`Self::inverse_kinematics`], but a converged solution is only
    /// accepted when `accept` returns true; otherwise the next restart runs.
    pub fn inverse_kinematics_filtered(
        &self,
        target: &Pose,
        seed: &[f64],
        tol: &PoseTolerance,
        params: &IkParams,
        accept: impl Fn(&[f64]) -> bool,
    ) -> Result<IkSolution, KinematicsError> {
        self.check_dim(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut start: JointVec = seed.to_vec();
        self.clamp_to_limits(&mut start);
        for attempt in 0..=params.restarts {
            if attempt > 0 {
                start = self
                    .joint_limits
                    .iter()
                    .map(|&(lo, hi)| rng.gen_range(lo..=hi))
                    .collect();
            }
            if let Some((q, iterations)) = self.dls(target, &start, tol, params) {
                if accept(&q) {
                    return Ok(IkSolution {
                        q,
                        iterations,
                        restarts: attempt,
                    });
                }
            }
        }
        Err(KinematicsError::IkFailure)
    }

    fn dls(
        &self,
        target: &Pose,
        start: &[f64],
        tol: &PoseTolerance,
        params: &IkParams,
    ) -> Option<(JointVec, usize)> {
        let mut q = start.to_vec();
        let lambda2 = params.damping * params.damping;
        for iter in 0..=params.max_iters {
            let fk = self.fk_unchecked(&q);
            let err = pose_error(&fk.ee, target);
            let pos_err = err.fixed_rows::<3>(0).norm();
            let ang_err = err.fixed_rows::<3>(3).norm();
            if pos_err <= tol.position && ang_err <= tol.angle {
                return Some((q, iter));
            }
            if iter == params.max_iters {
                break;
            }
            let jac = self.jacobian(&fk);
            let mut jjt = Matrix6::<f64>::identity() * lambda2;
            for col in &jac {
                jjt += col * col.transpose();
            }
            let y = jjt.cholesky()?.solve(&err);
            let mut dq: Vec<f64> = jac.iter().map(|col| col.dot(&y)).collect();
            let largest = dq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if largest > params.max_step {
                let s = params.max_step / largest;
                dq.iter_mut().for_each(|v| *v *= s);
            }
            for (qi, d) in q.iter_mut().zip(&dq) {
                *qi += d;
            }
            self.clamp_to_limits(&mut q);
        }
        None
    }
}

/// World-frame pose error `[p_t - p; log(R_t R^T)]`.
pub fn pose_error(current: &Pose, target: &Pose) -> Vector6<f64> {
    let dp = target.translation.vector - current.translation.vector;
    let dr = (target.rotation * current.rotation.inverse()).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Position and angle distance between two poses.
pub fn pose_distance(a: &Pose, b: &Pose) -> (f64, f64) {
    let e = pose_error(a, b);
    (e.fixed_rows::<3>(0).norm(), e.fixed_rows::<3>(3).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkResult {
    /// Shield frame.
    pub ee: Pose,
    /// Link frames after each joint rotation.
    pub frames: Vec<Pose>,
    pub joint_origins: Vec<Vec3>,
    /// World-frame joint axes.
    pub joint_axes: Vec<Vec3>,
    pub capsules: Vec<Capsule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityTerm {
    pub distance: f64,
    pub grad: JointVec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkParams {
    pub damping: f64,
    pub max_iters: usize,
    pub restarts: usize,
    /// Largest per-joint change in one step (rad).
    pub max_step: f64,
    pub seed: u64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 1e-2,
            max_iters: 200,
            restarts: 8,
            max_step: 0.5,
            seed: 0,
        }
    }
}

/// Default IK acceptance: 1 mm and 0.5 degrees.
pub const IK_TOLERANCE: PoseTolerance = PoseTolerance {
    position: 1e-3,
    angle: 0.008_726_646_259_971_648,
};

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: JointVec,
    pub iterations: usize,
    pub restarts: usize,
}
