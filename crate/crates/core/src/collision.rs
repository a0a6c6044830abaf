//! Distance primitives for capsule collision checking.
//!
//! Signed distances are negative inside a solid. Each query also returns
//! the outward unit normal at the closest point, which the optimizer uses
//! as the distance gradient.

#[allow(unused_imports)]
use num_traits::Float;

use crate::Vec3;

/// Segment `a -> b` swept by a sphere of `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        (
            (self.a + self.b) / 2.0,
            (self.b - self.a).norm() / 2.0 + self.radius,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstacle {
    /// Solid cylinder from `base` along unit `axis` for `height`.
    Cylinder {
        base: Vec3,
        axis: Vec3,
        radius: f64,
        height: f64,
    },
    Cuboid {
        center: Vec3,
        half_extents: Vec3,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid obstacle: {0}")]
pub struct ObstacleError(pub &'static str);

impl Obstacle {
    /// Vertical pole standing on `base`.
    pub fn pole(base: Vec3, radius: f64, height: f64) -> Self {
        Obstacle::Cylinder {
            base,
            axis: Vec3::z(),
            radius,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), ObstacleError> {
        match *self {
            Obstacle::Cylinder {
                axis,
                radius,
                height,
                ..
            } => {
                if !(radius > 0.0 && height > 0.0) {
                    return Err(ObstacleError("cylinder dimensions must be positive"));
                }
                if ((axis.norm() - 1.0).abs()) > 1e-9 {
                    return Err(ObstacleError("cylinder axis must be a unit vector"));
                }
            }
            Obstacle::Cuboid { half_extents, .. } => {
                if half_extents.iter().any(|&e| !(e > 0.0)) {
                    return Err(ObstacleError("cuboid half-extents must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        match *self {
            Obstacle::Cylinder {
                base,
                axis,
                radius,
                height,
            } => (
                base + axis * (height / 2.0),
                (radius * radius + height * height / 4.0).sqrt(),
            ),
            Obstacle::Cuboid {
                center,
                half_extents,
            } => (center, half_extents.norm()),
        }
    }

    /// Cheap lower bound on [`Self::capsule_distance`].
    pub fn distance_lower_bound(&self, capsule: &Capsule) -> f64 {
        match *self {
            Obstacle::Cylinder {
                base,
                axis,
                radius,
                height,
            } => {
                let top = base + axis * height;
                let (_, _, x1, x2) = segment_segment(&capsule.a, &capsule.b, &base, &top);
                (x1 - x2).norm() - radius - capsule.radius
            }
            Obstacle::Cuboid { .. } => {
                let (cc, cr) = capsule.bounding_sphere();
                let (oc, or) = self.bounding_sphere();
                (cc - oc).norm() - cr - or
            }
        }
    }

    /// Signed distance from `p` and the outward normal there.
    pub fn signed_distance(&self, p: &Vec3) -> (f64, Vec3) {
        match *self {
            Obstacle::Cylinder {
                base,
                axis,
                radius,
                height,
            } => cylinder_sd(p, &base, &axis, radius, height),
            Obstacle::Cuboid {
                center,
                half_extents,
            } => box_sd(p, &center, &half_extents),
        }
    }

    /// Distance from the capsule surface to the obstacle (negative on
    /// penetration), the segment point achieving it, and the outward
    /// obstacle normal at that point.
    pub fn capsule_distance(&self, capsule: &Capsule) -> ContactPoint {
        let d = capsule.b - capsule.a;
        let f = |s: f64| self.signed_distance(&(capsule.a + d * s)).0;
        let s = minimize_convex_unit(f);
        let point = capsule.a + d * s;
        let (sd, normal) = self.signed_distance(&point);
        ContactPoint {
            distance: sd - capsule.radius,
            s,
            point,
            normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    pub distance: f64,
    /// Segment parameter of `point` in `[0, 1]`.
    pub s: f64,
    pub point: Vec3,
    pub normal: Vec3,
}

fn any_perpendicular(v: &Vec3) -> Vec3 {
    let helper = if v.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    v.cross(&helper).normalize()
}

fn cylinder_sd(p: &Vec3, base: &Vec3, axis: &Vec3, radius: f64, height: f64) -> (f64, Vec3) {
    let rel = p - base;
    let h = rel.dot(axis);
    let radial = rel - axis * h;
    let rho = radial.norm();
    let u_r = if rho > 1e-12 {
        radial / rho
    } else {
        any_perpendicular(axis)
    };
    let dr = rho - radius;
    let (dh, n_h) = if -h > h - height {
        (-h, -axis)
    } else {
        (h - height, *axis)
    };
    match (dr > 0.0, dh > 0.0) {
        (true, true) => {
            let dist = (dr * dr + dh * dh).sqrt();
            (dist, (u_r * dr + n_h * dh) / dist)
        }
        (true, false) => (dr, u_r),
        (false, true) => (dh, n_h),
        (false, false) => {
            if dr > dh {
                (dr, u_r)
            } else {
                (dh, n_h)
            }
        }
    }
}

fn box_sd(p: &Vec3, center: &Vec3, half: &Vec3) -> (f64, Vec3) {
    let rel = p - center;
    let q = Vec3::new(
        rel.x.abs() - half.x,
        rel.y.abs() - half.y,
        rel.z.abs() - half.z,
    );
    let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
    if q.iter().any(|&v| v > 0.0) {
        let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
        let dist = outside.norm();
        let n = Vec3::new(
            sign(rel.x) * outside.x,
            sign(rel.y) * outside.y,
            sign(rel.z) * outside.z,
        ) / dist;
        (dist, n)
    } else {
        let axis = q.imax();
        let mut n = Vec3::zeros();
        n[axis] = sign(rel[axis]);
        (q[axis], n)
    }
}

/// Golden-section minimization of a convex function on `[0, 1]`.
fn minimize_convex_unit(f: impl Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > 1e-9 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = (lo + hi) / 2.0;
    let mut best = (mid, f(mid));
    for s in [0.0, 1.0] {
        let v = f(s);
        if v < best.1 {
            best = (s, v);
        }
    }
    best.0
}

/// Closest points between segments `p1 -> q1` and `p2 -> q2`; returns the
/// parameters `(s, t)` and the points.
pub fn segment_segment(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> (f64, f64, Vec3, Vec3) {
    const EPS: f64 = 1e-14;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= EPS && e <= EPS {
        s = 0.0;
        t = 0.0;
    } else if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (s, t, p1 + d1 * s, p2 + d2 * t)
}

/// Surface distance between two capsules, closest axis points, and the
/// unit direction from the second toward the first.
pub fn capsule_capsule(c1: &Capsule, c2: &Capsule) -> (f64, Vec3, Vec3, Vec3) {
    let (_, _, x1, x2) = segment_segment(&c1.a, &c1.b, &c2.a, &c2.b);
    let diff = x1 - x2;
    let len = diff.norm();
    let n = if len > 1e-12 {
        diff / len
    } else {
        any_perpendicular(&(c1.b - c1.a + Vec3::new(1e-9, 0.0, 0.0)))
    };
    (len - c1.radius - c2.radius, x1, x2, n)
}
