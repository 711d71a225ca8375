//! Rigid-body pose algebra.
//!
//! Orientation is stored as a unit quaternion `(w, x, y, z)` kept in a
//! canonical sign (`w >= 0`, and when `w == 0` the first nonzero vector
//! component is positive) so that two equal rotations compare equal.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Unit quaternion, scalar first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a quaternion from raw components, normalizing and canonicalizing.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Quat {
        Quat { w, x, y, z }.normalized()
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        let n = norm(axis);
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        let k = s / n;
        Quat::new(c, axis[0] * k, axis[1] * k, axis[2] * k)
    }

    pub fn from_yaw(yaw: f64) -> Quat {
        Quat::from_axis_angle([0.0, 0.0, 1.0], yaw)
    }

    #[inline]
    pub fn vector(&self) -> Vec3 {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn conjugate(&self) -> Quat {
        Quat { w: self.w, x: -self.x, y: -self.y, z: -self.z }.canonical()
    }

    /// Hamilton product without renormalization.
    #[inline]
    fn mul_raw(&self, o: &Quat) -> Quat {
        Quat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    pub fn mul(&self, o: &Quat) -> Quat {
        self.mul_raw(o).normalized()
    }

    /// Rotates a vector: `q v q*`.
    #[inline]
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let u = self.vector();
        let t = scale(cross(u, v), 2.0);
        add(add(v, scale(t, self.w)), cross(u, t))
    }

    /// Rotation matrix, row-major.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Quat { w, x, y, z } = *self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Yaw of the rotated x axis projected on the horizontal plane.
    pub fn yaw(&self) -> f64 {
        let m = self.to_matrix();
        m[1][0].atan2(m[0][0])
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        2.0 * norm(self.vector()).atan2(self.w.abs())
    }

    fn normalized(self) -> Quat {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Quat::IDENTITY;
        }
        Quat { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }.canonical()
    }

    fn canonical(self) -> Quat {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            Quat { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            self
        }
    }
}

/// Position (meters) plus orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [px, py, pz] = self.position;
        let q = self.orientation;
        write!(f, "[{px:.4}, {py:.4}, {pz:.4} | {:.4}, {:.4}, {:.4}, {:.4}]", q.w, q.x, q.y, q.z)
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { position: [0.0; 3], orientation: Quat::IDENTITY };

    pub fn new(position: Vec3, orientation: Quat) -> Pose {
        Pose { position, orientation: orientation.normalized() }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Pose {
        Pose { position: [x, y, z], orientation: Quat::IDENTITY }
    }

    pub fn rot_z(angle: f64) -> Pose {
        Pose { position: [0.0; 3], orientation: Quat::from_yaw(angle) }
    }

    /// Position plus a pure yaw rotation.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
        Pose { position: [x, y, z], orientation: Quat::from_yaw(yaw) }
    }

    /// Same position, orientation reduced to its rotation about the vertical.
    pub fn upright(&self) -> Pose {
        Pose { position: self.position, orientation: Quat::from_yaw(self.orientation.yaw()) }
    }

    /// `self * other` as homogeneous transforms.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: add(self.position, self.orientation.rotate(other.position)),
            orientation: self.orientation.mul(&other.orientation),
        }
    }

    pub fn invert(&self) -> Pose {
        let qi = self.orientation.conjugate();
        Pose { position: scale(qi.rotate(self.position), -1.0), orientation: qi }
    }

    /// `self^-1 * other`: `other` expressed in the frame of `self`.
    pub fn relative(&self, other: &Pose) -> Pose {
        self.invert().compose(other)
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        add(self.position, self.orientation.rotate(p))
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.orientation;
        let [px, py, pz] = self.position;
        [px, py, pz, q.w, q.x, q.y, q.z]
    }

    pub fn from_array(a: [f64; 7]) -> Pose {
        Pose::new([a[0], a[1], a[2]], Quat { w: a[3], x: a[4], y: a[5], z: a[6] })
    }

    pub fn to_axis_angle(&self) -> AxisAngle6 {
        to_axis_angle(self)
    }
}

/// Position (meters) followed by a rotation vector (radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle6(pub [f64; 6]);

impl AxisAngle6 {
    pub const ZERO: AxisAngle6 = AxisAngle6([0.0; 6]);

    pub fn position(&self) -> Vec3 {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn rotation(&self) -> Vec3 {
        [self.0[3], self.0[4], self.0[5]]
    }

    pub fn from_parts(p: Vec3, r: Vec3) -> AxisAngle6 {
        AxisAngle6([p[0], p[1], p[2], r[0], r[1], r[2]])
    }

    pub fn to_pose(&self) -> Pose {
        from_axis_angle(self)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.invert()
}

/// `min(acos(d), acos(-d)) / pi` with `d = q1 . q2`, evaluated through the
/// relative rotation so small angles keep full precision.
fn rot_distance(q1: &Quat, q2: &Quat) -> f64 {
    let r = q1.conjugate().mul_raw(q2);
    norm(r.vector()).atan2(r.w.abs()) / PI
}

/// Euclidean position distance plus the normalized quaternion angle term,
/// which lies in `[0, 1]`.
pub fn pose_distance(p1: &Pose, p2: &Pose) -> f64 {
    norm(sub(p1.position, p2.position)) + rot_distance(&p1.orientation, &p2.orientation)
}

/// Variant taking the larger of the position and rotation terms instead of their sum.
pub fn pose_distance_max(p1: &Pose, p2: &Pose) -> f64 {
    norm(sub(p1.position, p2.position)).max(rot_distance(&p1.orientation, &p2.orientation))
}

/// Which pose difference measure to use where one is configurable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    #[default]
    Sum,
    Max,
}

impl DistanceMetric {
    pub fn eval(self, a: &Pose, b: &Pose) -> f64 {
        match self {
            DistanceMetric::Sum => pose_distance(a, b),
            DistanceMetric::Max => pose_distance_max(a, b),
        }
    }
}

pub fn to_axis_angle(p: &Pose) -> AxisAngle6 {
    let q = p.orientation;
    let v = q.vector();
    let s = norm(v);
    let r = if s < 1e-300 {
        [0.0; 3]
    } else {
        // q is canonical, so w >= 0 and the angle lies in [0, pi].
        let angle = 2.0 * s.atan2(q.w);
        if s < 1e-8 {
            // Near identity angle/s -> 2/w.
            scale(v, 2.0 / q.w)
        } else {
            scale(v, angle / s)
        }
    };
    AxisAngle6::from_parts(p.position, r)
}

pub fn from_axis_angle(v: &AxisAngle6) -> Pose {
    let r = v.rotation();
    let angle = norm(r);
    let orientation = if angle < 1e-12 {
        Quat::new(1.0, r[0] * 0.5, r[1] * 0.5, r[2] * 0.5)
    } else {
        Quat::from_axis_angle(r, angle)
    };
    Pose { position: v.position(), orientation }
}

/// Adds i.i.d. Gaussian noise of scale `sigma` to every component of the
/// position/rotation-vector form of `p`.
pub fn add_pose_noise<R: Rng + ?Sized>(p: &Pose, sigma: f64, rng: &mut R) -> Pose {
    if sigma == 0.0 {
        return *p;
    }
    let mut v = to_axis_angle(p);
    for c in v.0.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *c += sigma * n;
    }
    from_axis_angle(&v)
}

/// Adds a fixed offset to the position/rotation-vector form of `p`.
pub fn offset_pose(p: &Pose, d: &[f64; 6]) -> Pose {
    let mut v = to_axis_angle(p);
    for (c, e) in v.0.iter_mut().zip(d) {
        *c += e;
    }
    from_axis_angle(&v)
}

/// Spherical linear interpolation along the shortest arc.
pub fn slerp(a: &Quat, b: &Quat, t: f64) -> Quat {
    let mut d = a.dot(b);
    let mut b = *b;
    if d < 0.0 {
        d = -d;
        b = Quat { w: -b.w, x: -b.x, y: -b.y, z: -b.z };
    }
    if d > 1.0 - 1e-12 {
        return Quat::new(
            a.w + t * (b.w - a.w),
            a.x + t * (b.x - a.x),
            a.y + t * (b.y - a.y),
            a.z + t * (b.z - a.z),
        );
    }
    let theta = d.clamp(-1.0, 1.0).acos();
    let s = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / s;
    let wb = (t * theta).sin() / s;
    Quat::new(
        wa * a.w + wb * b.w,
        wa * a.x + wb * b.x,
        wa * a.y + wb * b.y,
        wa * a.z + wb * b.z,
    )
}

/// Linear in position, shortest-arc spherical in orientation.
pub fn interpolate_pose(a: &Pose, b: &Pose, t: f64) -> Pose {
    if t <= 0.0 {
        return *a;
    }
    if t >= 1.0 {
        return *b;
    }
    let position = add(a.position, scale(sub(b.position, a.position), t));
    Pose { position, orientation: slerp(&a.orientation, &b.orientation, t) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let q = Quat::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        Pose::new(p, q)
    }

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        pose_distance(a, b) < tol
    }

    #[test]
    fn compose_identity_and_translations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        assert!(close(&Pose::IDENTITY.compose(&p), &p, 1e-12));
        assert!(close(&p.compose(&p.invert()), &Pose::IDENTITY, 1e-9));
        let t = Pose::translation(1.0, 0.0, 0.0).compose(&Pose::translation(0.0, 2.0, 0.0));
        assert_eq!(t, Pose::translation(1.0, 2.0, 0.0));
    }

    #[test]
    fn invert_examples() {
        assert_eq!(Pose::IDENTITY.invert(), Pose::IDENTITY);
        assert_eq!(Pose::translation(1.0, 2.0, 3.0).invert(), Pose::translation(-1.0, -2.0, -3.0));
        // conjugate oracle: rotZ(90)^-1 has quaternion (cos45, 0, 0, -sin45)
        let inv = Pose::rot_z(PI / 2.0).invert();
        let h = (PI / 4.0).cos();
        let expect = Quat { w: h, x: 0.0, y: 0.0, z: -h };
        assert!((inv.orientation.dot(&expect) - 1.0).abs() < 1e-12);
        assert!(close(&inv, &Pose::rot_z(-PI / 2.0), 1e-9));
    }

    #[test]
    fn distance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_pose(&mut rng);
        assert_eq!(pose_distance(&p, &p), 0.0);
        assert!((pose_distance(&Pose::IDENTITY, &Pose::translation(1.0, 0.0, 0.0)) - 1.0).abs() < 1e-15);
        // q1.q2 = cos(pi/4); acos -> pi/4; /pi -> 0.25
        let d = pose_distance(&Pose::IDENTITY, &Pose::rot_z(PI / 2.0));
        assert!((d - 0.25).abs() < 1e-12, "{d}");
        // sign-flipped quaternion is the same rotation
        let q = p.orientation;
        let flipped = Pose { position: p.position, orientation: Quat { w: -q.w, x: -q.x, y: -q.y, z: -q.z } };
        assert!(pose_distance(&p, &flipped) < 1e-7);
    }

    #[test]
    fn max_variant_takes_larger_term() {
        let a = Pose::IDENTITY;
        let b = Pose { position: [0.1, 0.0, 0.0], orientation: Quat::from_yaw(PI / 2.0) };
        assert!((pose_distance_max(&a, &b) - 0.25).abs() < 1e-12);
        assert!((pose_distance(&a, &b) - 0.35).abs() < 1e-12);
    }

    #[test]
    fn axis_angle_examples() {
        assert_eq!(to_axis_angle(&Pose::IDENTITY), AxisAngle6::ZERO);
        let v = to_axis_angle(&Pose::rot_z(PI / 2.0));
        let expect = [0.0, 0.0, 0.0, 0.0, 0.0, PI / 2.0];
        for (a, b) in v.0.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // angle exactly pi keeps the canonical axis sign
        let half_turn = Pose::new([0.0; 3], Quat { w: 0.0, x: 0.0, y: -1.0, z: 0.0 });
        let r = to_axis_angle(&half_turn).rotation();
        assert!((r[1] - PI).abs() < 1e-12);
        assert!(close(&from_axis_angle(&to_axis_angle(&half_turn)), &half_turn, 1e-9));
    }

    #[test]
    fn axis_angle_round_trip_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            if p.orientation.angle() > PI - 1e-6 {
                continue;
            }
            let back = from_axis_angle(&to_axis_angle(&p));
            assert!(pose_distance(&p, &back) < 1e-9);
        }
    }

    #[test]
    fn canonical_sign() {
        let q = Quat::new(-0.5, 0.5, -0.5, 0.5);
        assert!(q.w > 0.0);
        let q = Quat::new(0.0, -1.0, 0.0, 0.0);
        assert_eq!(q, Quat { w: 0.0, x: 1.0, y: 0.0, z: 0.0 });
    }

    #[test]
    fn noise_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_pose(&mut rng);
        assert_eq!(add_pose_noise(&p, 0.0, &mut rng), p);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let n1 = add_pose_noise(&p, 0.02, &mut r1);
        assert_eq!(n1, add_pose_noise(&p, 0.02, &mut r2));
        assert!(pose_distance(&p, &n1) > 0.0);
    }

    #[test]
    fn noise_sample_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Pose::planar(0.1, -0.2, 0.3, 0.4);
        let n = 10_000;
        let mut sums = [0.0f64; 6];
        let mut sq = [0.0f64; 6];
        let base = to_axis_angle(&p);
        for _ in 0..n {
            let v = to_axis_angle(&add_pose_noise(&p, 0.01, &mut rng));
            for k in 0..6 {
                let d = v.0[k] - base.0[k];
                sums[k] += d;
                sq[k] += d * d;
            }
        }
        for k in 0..6 {
            let mean = sums[k] / n as f64;
            let std = (sq[k] / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 4.0 * 0.01 / (n as f64).sqrt(), "mean {k} {mean}");
            if k < 3 {
                assert!((0.009..=0.011).contains(&std), "std {k} {std}");
            }
        }
    }

    #[test]
    fn interpolation_examples() {
        let a = Pose::translation(0.0, 0.0, 0.0);
        let b = Pose::translation(1.0, 2.0, -2.0);
        assert_eq!(interpolate_pose(&a, &b, 0.0), a);
        assert_eq!(interpolate_pose(&a, &b, 1.0), b);
        assert_eq!(interpolate_pose(&a, &b, 0.5), Pose::translation(0.5, 1.0, -1.0));
        // closed-form slerp: halfway between identity and rotZ(90) is rotZ(45)
        let mid = interpolate_pose(&Pose::IDENTITY, &Pose::rot_z(PI / 2.0), 0.5);
        let h = (PI / 8.0).cos();
        let s = (PI / 8.0).sin();
        let q = mid.orientation;
        assert!((q.w - h).abs() < 1e-12 && (q.z - s).abs() < 1e-12);
    }

    #[test]
    fn yaw_extraction() {
        for yaw in [-3.0, -1.0, 0.0, 0.5, 2.9] {
            assert!((Quat::from_yaw(yaw).yaw() - yaw).abs() < 1e-12);
        }
    }
}
