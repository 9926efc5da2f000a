//! Rotation algebra, pinhole camera model and angular metrics.
//!
//! Rotations are plain 3×3 orthonormal matrices with determinant +1. The
//! exponential map follows Rodrigues' formula; the logarithm switches to the
//! symmetric-part formula near θ = π where the skew part vanishes.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix that is already known to be a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Nearest rotation (in Frobenius norm) to an arbitrary 3×3 matrix.
    pub fn project(m: &Matrix3<f64>) -> Self {
        project_to_so3(m)
    }

    /// Builds a rotation from nine row-major entries, re-orthonormalizing
    /// to absorb text round-off.
    pub fn from_row_major(v: &[f64; 9]) -> Self {
        let m = Matrix3::from_row_slice(v);
        project_to_so3(&m)
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Max elementwise deviation of RᵀR from I, and |det R − 1|.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let e = (self.0.transpose() * self.0 - Matrix3::identity()).abs().max();
        (e, (self.0.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let (e, d) = self.orthonormality_error();
        e <= tol && d <= tol
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Angle-axis form with θ ∈ [0, π] and a unit axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle {
    pub angle: f64,
    pub axis: Vector3<f64>,
}

impl AxisAngle {
    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.axis * self.angle
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula. `axis` must be unit length.
pub fn exp_rotation(angle: f64, axis: &Vector3<f64>) -> Rotation {
    let k = skew(axis);
    let (s, c) = angle.sin_cos();
    Rotation(Matrix3::identity() + k * s + k * k * (1.0 - c))
}

/// Exponential map of a rotation vector ω = θ·a.
pub fn exp_vec(omega: &Vector3<f64>) -> Rotation {
    let angle = omega.norm();
    if angle == 0.0 {
        return Rotation::identity();
    }
    exp_rotation(angle, &(omega / angle))
}

/// Logarithm of a rotation. At θ = 0 the axis is (1, 0, 0).
pub fn log_rotation(r: &Rotation) -> AxisAngle {
    let m = r.matrix();
    // sinθ·a from the skew part, cosθ from the trace
    let w = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5;
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin_t = w.norm();
    let angle = sin_t.atan2(cos_t);

    if angle == 0.0 || sin_t == 0.0 && cos_t > 0.0 {
        return AxisAngle {
            angle: 0.0,
            axis: Vector3::x(),
        };
    }
    if cos_t > -0.5 {
        return AxisAngle {
            angle,
            axis: w / sin_t,
        };
    }

    // Near π: (R + Rᵀ)/2 − cosθ·I = (1 − cosθ)·a·aᵀ
    let s = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos_t;
    let j = (0..3)
        .max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = s.column(j).into_owned();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    AxisAngle { angle, axis }
}

pub fn log_vec(r: &Rotation) -> Vector3<f64> {
    log_rotation(r).rotation_vector()
}

/// Geodesic angle between two rotations, via the chordal identity
/// ‖R1 − R2‖_F = 2√2·sin(θ/2).
pub fn angular_distance(r1: &Rotation, r2: &Rotation) -> f64 {
    let f = (r1.matrix() - r2.matrix()).norm();
    let arg = (f / (2.0 * std::f64::consts::SQRT_2)).clamp(0.0, 1.0);
    2.0 * arg.asin()
}

/// Nearest rotation to `m` in Frobenius norm: U·diag(1, 1, det(UVᵀ))·Vᵀ.
pub fn project_to_so3(m: &Matrix3<f64>) -> Rotation {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Rotation::identity(),
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        let i = svd.singular_values.imin();
        d[(i, i)] = -1.0;
    }
    Rotation(u * d * v_t)
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid(format!(
                "focal lengths must be positive and finite (fx={fx}, fy={fy})"
            )));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Unit ray K⁻¹[x, 1]ᵀ / ‖K⁻¹[x, 1]ᵀ‖.
    pub fn backproject(&self, px: &Vector2<f64>) -> Vector3<f64> {
        let r = Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0);
        r / r.norm()
    }

    /// Pixel of a ray; fails unless the ray has positive depth.
    pub fn project(&self, ray: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(ray.z > 0.0) {
            return Err(Error::BehindCamera);
        }
        Ok(Vector2::new(
            self.fx * ray.x / ray.z + self.cx,
            self.fy * ray.y / ray.z + self.cy,
        ))
    }

    /// Parses `fx=`, `fy=`, `cx=`, `cy=` lines. Blank lines and `#` comments
    /// are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let (mut fx, mut fy, mut cx, mut cy) = (None, None, None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, "expected key=value"))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad number {value:?}")))?;
            match key.trim() {
                "fx" => fx = Some(value),
                "fy" => fy = Some(value),
                "cx" => cx = Some(value),
                "cy" => cy = Some(value),
                other => return Err(Error::parse(i + 1, format!("unknown key {other:?}"))),
            }
        }
        match (fx, fy, cx, cy) {
            (Some(fx), Some(fy), Some(cx), Some(cy)) => CameraIntrinsics::new(fx, fy, cx, cy),
            _ => Err(Error::parse(0, "intrinsics need fx, fy, cx and cy")),
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "fx={}\nfy={}\ncx={}\ncy={}\n",
            self.fx, self.fy, self.cx, self.cy
        )
    }
}

/// Formats the nine row-major entries of a rotation as CSV fields.
pub struct RowMajor<'a>(pub &'a Rotation);

impl fmt::Display for RowMajor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.to_row_major().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v:.15e}")?;
        }
        Ok(())
    }
}

/// Parses nine comma-separated fields into a rotation.
pub fn parse_row_major(fields: &[&str], line: usize) -> Result<Rotation> {
    if fields.len() != 9 {
        return Err(Error::parse(
            line,
            format!("expected 9 rotation entries, found {}", fields.len()),
        ));
    }
    let mut v = [0.0; 9];
    for (slot, f) in v.iter_mut().zip(fields) {
        *slot = f
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("bad rotation entry {f:?}")))?;
    }
    let r = Rotation::from_row_major(&v);
    let raw = Matrix3::from_row_slice(&v);
    if (raw - r.matrix()).abs().max() > 1e-6 {
        return Err(Error::parse(line, "rotation entries are not orthonormal"));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn unit(v: [f64; 3]) -> Vector3<f64> {
        Vector3::from(v).normalize()
    }

    #[test]
    fn exp_zero_is_identity() {
        assert_eq!(exp_rotation(0.0, &Vector3::z()), Rotation::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = exp_rotation(FRAC_PI_2, &Vector3::z());
        let v = r.rotate(&Vector3::x());
        assert!((v - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn log_at_identity_uses_fixed_axis() {
        let aa = log_rotation(&Rotation::identity());
        assert_eq!(aa.angle, 0.0);
        assert_eq!(aa.axis, Vector3::x());
    }

    #[test]
    fn log_near_pi_is_stable() {
        for &angle in &[PI, PI - 1e-9, PI - 1e-5, 3.0] {
            let axis = unit([0.3, -0.5, 0.8]);
            let aa = log_rotation(&exp_rotation(angle, &axis));
            assert!((aa.angle - angle).abs() < 1e-9, "{angle} -> {}", aa.angle);
            let d = (aa.axis - axis).norm().min((aa.axis + axis).norm());
            assert!(d < 1e-7, "axis off by {d} at {angle}");
        }
    }

    #[test]
    fn backproject_principal_point() {
        let k = CameraIntrinsics::new(250.0, 240.0, 120.0, 90.0).unwrap();
        let r = k.backproject(&Vector2::new(120.0, 90.0));
        assert_eq!(r, Vector3::z());
    }

    #[test]
    fn backproject_hand_computed() {
        let k = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0).unwrap();
        let r = k.backproject(&Vector2::new(100.0, 0.0));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r - Vector3::new(h, 0.0, h)).norm() < 1e-15);
    }

    #[test]
    fn project_optical_axis_and_behind() {
        let k = CameraIntrinsics::new(250.0, 250.0, 120.0, 90.0).unwrap();
        assert_eq!(k.project(&Vector3::z()).unwrap(), Vector2::new(120.0, 90.0));
        assert!(matches!(
            k.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera)
        ));
    }

    #[test]
    fn angular_distance_ten_degrees() {
        let axis = unit([1.0, 2.0, -0.5]);
        let r2 = exp_rotation(10f64.to_radians(), &axis);
        let oracle = log_rotation(&(Rotation::identity().transpose() * r2)).angle;
        let d = angular_distance(&Rotation::identity(), &r2);
        assert!((d - oracle).abs() < 1e-9);
        assert!((d - 10f64.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn intrinsics_round_trip_text() {
        let k = CameraIntrinsics::new(250.5, 251.0, 119.5, 89.5).unwrap();
        assert_eq!(CameraIntrinsics::parse(&k.to_text()).unwrap(), k);
        assert!(CameraIntrinsics::parse("fx=1\nfy=1\ncx=0\n").is_err());
        assert!(CameraIntrinsics::parse("fx=-1\nfy=1\ncx=0\ncy=0").is_err());
    }

    #[test]
    fn exp_derivative_matches_cross_product() {
        let a = unit([0.2, -0.7, 0.4]);
        let v = Vector3::new(0.5, 1.5, -2.0);
        let theta = 0.8;
        let h = 1e-5;
        let fd = (exp_rotation(theta + h, &a).rotate(&v) - exp_rotation(theta - h, &a).rotate(&v))
            / (2.0 * h);
        let analytic = exp_rotation(theta, &a).rotate(&a.cross(&v));
        assert!((fd - analytic).norm() < 1e-6);
    }

    fn axis_strategy() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| unit([x, y, z]))
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(theta in 1e-6..(PI - 1e-6), a in axis_strategy()) {
            let r = exp_rotation(theta, &a);
            prop_assert!(r.is_valid(1e-9));
            let aa = log_rotation(&r);
            prop_assert!((aa.angle - theta).abs() < 1e-9);
            let d = (aa.axis - a).norm();
            prop_assert!(d < 1e-9 || theta > PI - 1e-4, "axis error {}", d);
        }

        #[test]
        fn distance_properties(t1 in 0.0..PI, a1 in axis_strategy(), t2 in 0.0..PI,
                               a2 in axis_strategy(), tq in 0.0..PI, aq in axis_strategy()) {
            let r1 = exp_rotation(t1, &a1);
            let r2 = exp_rotation(t2, &a2);
            let q = exp_rotation(tq, &aq);
            let d = angular_distance(&r1, &r2);
            prop_assert!(angular_distance(&r1, &r1).abs() < 1e-9);
            prop_assert!((d - angular_distance(&r2, &r1)).abs() < 1e-12);
            prop_assert!((d - angular_distance(&(q * r1), &(q * r2))).abs() < 1e-9);
            let geodesic = log_rotation(&(r1 * r2.transpose())).angle;
            prop_assert!((d - geodesic).abs() < 1e-9);
        }

        #[test]
        fn project_backproject_round_trip(x in 0.0..240.0f64, y in 0.0..180.0f64) {
            let k = CameraIntrinsics::new(250.0, 248.0, 120.0, 90.0).unwrap();
            let px = Vector2::new(x, y);
            let ray = k.backproject(&px);
            prop_assert!((ray.norm() - 1.0).abs() < 1e-12);
            let back = k.project(&ray).unwrap();
            prop_assert!((back - px).norm() < 1e-9);
        }
    }
}
