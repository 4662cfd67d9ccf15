//! Small fixed-size linear algebra, generic over a scalar that is either a
//! plain `f64` or a tape variable. Writing the geometry once over [`Real`]
//! keeps the inference path and the differentiated path identical.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by `f64` and [`crate::diff::tape::Var`].
///
/// `val()` exposes the current numeric value so code can branch on it;
/// branches are recorded as taken, which is the usual operator-overloading
/// autodiff contract.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn recip(self) -> Self;
    /// max(0, x); the negative branch carries zero gradient.
    fn max0(self) -> Self;
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    fn tanh(self) -> Self;
    /// Same value, but treated as a constant by differentiation.
    fn detach(self) -> Self;

    fn powi2(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }
    #[inline]
    fn max0(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    #[inline]
    fn sigmoid(self) -> Self {
        1.0 / (1.0 + (-self).exp())
    }
    #[inline]
    fn softplus(self) -> Self {
        // Stable for large |x|.
        if self > 30.0 {
            self
        } else if self < -30.0 {
            self.exp()
        } else {
            (1.0 + self.exp()).ln()
        }
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn detach(self) -> Self {
        self
    }
}

/// Numerically stable inverse of the logistic sigmoid.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

pub type Vec3f = Vec3<f64>;

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn normalized(self) -> Self {
        let inv = self.norm().recip();
        self * inv
    }

    pub fn scale(self, s: f64) -> Self {
        Vec3 {
            x: self.x * s,
            y: self.y * s,
            z: self.z * s,
        }
    }

    pub fn to_f64(self) -> Vec3f {
        Vec3 {
            x: self.x.val(),
            y: self.y.val(),
            z: self.z.val(),
        }
    }
}

impl Vec3f {
    pub const ZERO: Vec3f = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3 {
            x: a[0],
            y: a[1],
            z: a[2],
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3 {
            x: self.x + o.x,
            y: self.y + o.y,
            z: self.z + o.z,
        }
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3 {
            x: self.x - o.x,
            y: self.y - o.y,
            z: self.z - o.z,
        }
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Vec3 {
            x: self.x * s,
            y: self.y * s,
            z: self.z * s,
        }
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3 {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// Column-major 2x2 matrix: columns are `(a, c)` and `(b, d)` of
/// `[[a, b], [c, d]]` in row notation.
#[derive(Debug, Clone, Copy)]
pub struct Mat2<T> {
    pub m: [[T; 2]; 2], // m[row][col]
}

pub type Mat2f = Mat2<f64>;

impl<T: Real> Mat2<T> {
    pub fn new(m00: T, m01: T, m10: T, m11: T) -> Self {
        Mat2 {
            m: [[m00, m01], [m10, m11]],
        }
    }

    pub fn from_cols(c0: [T; 2], c1: [T; 2]) -> Self {
        Mat2 {
            m: [[c0[0], c1[0]], [c0[1], c1[1]]],
        }
    }

    pub fn det(self) -> T {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(self) -> Self {
        let inv_det = self.det().recip();
        Mat2 {
            m: [
                [self.m[1][1] * inv_det, -self.m[0][1] * inv_det],
                [-self.m[1][0] * inv_det, self.m[0][0] * inv_det],
            ],
        }
    }

    pub fn transpose(self) -> Self {
        Mat2 {
            m: [
                [self.m[0][0], self.m[1][0]],
                [self.m[0][1], self.m[1][1]],
            ],
        }
    }

    pub fn mul_mat(self, o: Self) -> Self {
        let mut out = self;
        for r in 0..2 {
            for c in 0..2 {
                out.m[r][c] = self.m[r][0] * o.m[0][c] + self.m[r][1] * o.m[1][c];
            }
        }
        out
    }

    pub fn mul_vec(self, v: [T; 2]) -> [T; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    /// 2D rotation matrix for angle `phi`.
    pub fn rotation(phi: T) -> Self {
        let (s, c) = (phi.sin(), phi.cos());
        Mat2 { m: [[c, -s], [s, c]] }
    }

    pub fn to_f64(self) -> Mat2f {
        Mat2 {
            m: [
                [self.m[0][0].val(), self.m[0][1].val()],
                [self.m[1][0].val(), self.m[1][1].val()],
            ],
        }
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

pub type Mat3f = Mat3<f64>;

impl<T: Real> Mat3<T> {
    pub fn mul_vec(self, v: Vec3<T>) -> Vec3<T> {
        Vec3 {
            x: self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            y: self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            z: self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        }
    }

    pub fn mul_mat(self, o: Self) -> Self {
        let mut out = self;
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] =
                    self.m[r][0] * o.m[0][c] + self.m[r][1] * o.m[1][c] + self.m[r][2] * o.m[2][c];
            }
        }
        out
    }

    pub fn transpose(self) -> Self {
        let mut out = self;
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] = self.m[c][r];
            }
        }
        out
    }

    pub fn to_f64(self) -> Mat3f {
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = self.m[r][c].val();
            }
        }
        Mat3 { m: out }
    }
}

impl Mat3f {
    pub const IDENTITY: Mat3f = Mat3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };
}

/// Rigid motion: rotation followed by translation.
#[derive(Debug, Clone, Copy)]
pub struct Rigid<T> {
    pub r: Mat3<T>,
    pub t: Vec3<T>,
}

pub type Rigidf = Rigid<f64>;

impl<T: Real> Rigid<T> {
    pub fn apply(self, p: Vec3<T>) -> Vec3<T> {
        self.r.mul_vec(p) + self.t
    }

    pub fn compose(self, o: Self) -> Self {
        // self ∘ o: apply o first, then self.
        Rigid {
            r: self.r.mul_mat(o.r),
            t: self.r.mul_vec(o.t) + self.t,
        }
    }

    pub fn to_f64(self) -> Rigidf {
        Rigid {
            r: self.r.to_f64(),
            t: self.t.to_f64(),
        }
    }
}

impl Rigidf {
    pub const IDENTITY: Rigidf = Rigid {
        r: Mat3f::IDENTITY,
        t: Vec3f::ZERO,
    };

    pub fn inverse(self) -> Rigidf {
        let rt = self.r.transpose();
        Rigid {
            r: rt,
            t: -rt.mul_vec(self.t),
        }
    }
}

/// Rodrigues rotation from an axis-angle vector, stable near zero angle.
///
/// Uses R = I + A·[k]x + B·[k]x² with A = sin(t)/t and B = (1-cos(t))/t²,
/// switching to the series expansion when t² is tiny so gradients stay
/// finite across the switch.
pub fn axis_angle_to_matrix<T: Real>(aa: Vec3<T>) -> Mat3<T> {
    let t2 = aa.norm_sq();
    let (a, b) = if t2.val() < 1e-12 {
        (-(t2 / 6.0) + 1.0, -(t2 / 24.0) + 0.5)
    } else {
        let t = t2.sqrt();
        (t.sin() / t, (-t.cos() + 1.0) / t2)
    };
    let (kx, ky, kz) = (aa.x, aa.y, aa.z);
    // [k]x and [k]x^2 expanded.
    let one = t2 * 0.0 + 1.0;
    let m00 = one - (ky * ky + kz * kz) * b;
    let m01 = kx * ky * b - kz * a;
    let m02 = kx * kz * b + ky * a;
    let m10 = kx * ky * b + kz * a;
    let m11 = one - (kx * kx + kz * kz) * b;
    let m12 = ky * kz * b - kx * a;
    let m20 = kx * kz * b - ky * a;
    let m21 = ky * kz * b + kx * a;
    let m22 = one - (kx * kx + ky * ky) * b;
    Mat3 {
        m: [[m00, m01, m02], [m10, m11, m12], [m20, m21, m22]],
    }
}

/// Eigen-decomposition of a symmetric 2x2 matrix `[[a, b], [b, c]]`.
///
/// Returns `(lambda_max, lambda_min, angle_of_min_eigenvector)` where the
/// angle is canonicalized to `[0, pi)`. When the eigenvalue gap shrinks
/// below `1e-12 * lambda_max` the matrix is treated as isotropic and the
/// angle is pinned to 0; below `1e-9 * lambda_max` the angle value is kept
/// but its gradient is zeroed (the true gradient is unbounded there while
/// the rendered ellipse is rotation-invariant).
pub fn sym_eigen_2x2<T: Real>(a: T, b: T, c: T) -> (T, T, T) {
    let mean = (a + c) * 0.5;
    let diff = (a - c) * 0.5;
    let radius_sq = diff * diff + b * b;
    let zero = a * 0.0;
    let radius_val = radius_sq.val().max(0.0).sqrt();
    let l_max_val = mean.val() + radius_val;
    if 2.0 * radius_val < 1e-12 * l_max_val.abs() {
        return (mean, mean, zero);
    }
    let radius = radius_sq.sqrt();
    let l_max = mean + radius;
    let l_min = mean - radius;
    // Eigenvector for l_min is (b, l_min - a); that vector only degenerates
    // when b ~ 0 with a the smaller diagonal entry, where the x-axis is the
    // answer.
    let (vx, vy) = if b.val().abs() > 1e-12 * radius_val || a.val() >= c.val() {
        (b, l_min - a)
    } else {
        (zero + 1.0, zero)
    };
    let mut angle = vy.atan2(vx);
    if 2.0 * radius_val < 1e-9 * l_max_val.abs() {
        angle = angle.detach();
    }
    // Canonicalize to [0, pi).
    if angle.val() < 0.0 {
        angle = angle + std::f64::consts::PI;
    }
    if angle.val() >= std::f64::consts::PI {
        angle = angle - std::f64::consts::PI;
    }
    (l_max, l_min, angle)
}
