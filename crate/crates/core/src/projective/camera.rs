use nalgebra::{Matrix3, Vector3};

use super::GeometryError;

const ROTATION_TOL: f64 = 1e-9;
const NORMAL_TOL: f64 = 1e-12;

/// A pinhole camera: intrinsics `k` plus world-to-camera extrinsics, so that a
/// world point `x` lands at `rotation * x + translation` in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    k: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraModel {
    pub fn new(k: Matrix3<f64>, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        validate_intrinsics(&k)?;
        validate_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidCamera("translation must be finite".into()));
        }
        Ok(Self {
            k,
            rotation,
            translation,
        })
    }

    /// Camera at the world origin looking down +z.
    pub fn from_intrinsics(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::new(intrinsic_matrix(fx, fy, cx, cy), Matrix3::identity(), Vector3::zeros())
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Principal point `(cx, cy)`.
    pub fn principal_point(&self) -> (f64, f64) {
        (self.k[(0, 2)], self.k[(1, 2)])
    }

    /// Rotation and translation taking points expressed in `self`'s frame into
    /// `other`'s frame.
    pub fn relative_to(&self, other: &CameraModel) -> (Matrix3<f64>, Vector3<f64>) {
        let rotation = other.rotation * self.rotation.transpose();
        let translation = other.translation - rotation * self.translation;
        (rotation, translation)
    }

    /// Projects a point given in this camera's frame. Returns `None` behind the camera.
    pub fn project_camera_point(&self, x: &Vector3<f64>) -> Option<(f64, f64)> {
        if x.z <= 0.0 {
            return None;
        }
        let p = self.k * x;
        Some((p.x / p.z, p.y / p.z))
    }
}

pub(crate) fn intrinsic_matrix(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
    Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
}

pub(crate) fn validate_intrinsics(k: &Matrix3<f64>) -> Result<(), GeometryError> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidCamera("intrinsics must be finite".into()));
    }
    if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
        return Err(GeometryError::InvalidCamera(
            "intrinsic matrix must be upper-triangular".into(),
        ));
    }
    if (0..3).any(|i| k[(i, i)] <= 0.0) {
        return Err(GeometryError::InvalidCamera(
            "intrinsic matrix needs a strictly positive diagonal".into(),
        ));
    }
    Ok(())
}

pub(crate) fn validate_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !(orth <= ROTATION_TOL) || (det - 1.0).abs() > ROTATION_TOL {
        return Err(GeometryError::InvalidCamera(format!(
            "rotation is not in SO(3) (orthogonality error {orth:e}, det {det})"
        )));
    }
    Ok(())
}

/// The plane `{x | normal . x = distance}`, expressed in the source camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    normal: Vector3<f64>,
    distance: f64,
}

impl Plane {
    pub fn new(normal: Vector3<f64>, distance: f64) -> Result<Self, GeometryError> {
        let norm = normal.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > NORMAL_TOL {
            return Err(GeometryError::InvalidPlane(format!(
                "normal must have unit length, got {norm}"
            )));
        }
        if !(distance > 0.0) || !distance.is_finite() {
            return Err(GeometryError::InvalidPlane(format!(
                "distance must be positive, got {distance}"
            )));
        }
        Ok(Self { normal, distance })
    }

    /// Like [`Plane::new`] but rescales `normal` to unit length first.
    pub fn from_direction(direction: Vector3<f64>, distance: f64) -> Result<Self, GeometryError> {
        let norm = direction.norm();
        if !(norm > 0.0) {
            return Err(GeometryError::InvalidPlane("zero normal".into()));
        }
        Self::new(direction / norm, distance)
    }

    /// Fronto-parallel plane `z = distance`.
    pub fn fronto_parallel(distance: f64) -> Result<Self, GeometryError> {
        Self::new(Vector3::z(), distance)
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn with_distance(&self, distance: f64) -> Result<Self, GeometryError> {
        Self::new(self.normal, distance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn rejects_non_upper_triangular_k() {
        let mut k = intrinsic_matrix(500.0, 500.0, 320.0, 240.0);
        k[(1, 0)] = 0.1;
        assert!(CameraModel::new(k, Matrix3::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn rejects_reflection() {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let k = intrinsic_matrix(500.0, 500.0, 320.0, 240.0);
        assert!(CameraModel::new(k, r, Vector3::zeros()).is_err());
    }

    #[test]
    fn plane_validation() {
        assert!(Plane::new(Vector3::new(0.0, 0.0, 1.0), 1.0).is_ok());
        assert!(Plane::new(Vector3::new(0.0, 0.0, 1.001), 1.0).is_err());
        assert!(Plane::new(Vector3::z(), 0.0).is_err());
        assert!(Plane::new(Vector3::z(), -2.0).is_err());
        let p = Plane::from_direction(Vector3::new(0.0, 3.0, 4.0), 2.0).unwrap();
        assert!((p.normal().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn relative_pose_composes() {
        let k = intrinsic_matrix(400.0, 410.0, 300.0, 200.0);
        let r1 = *Rotation3::from_euler_angles(0.1, -0.2, 0.3).matrix();
        let r2 = *Rotation3::from_euler_angles(-0.3, 0.05, 0.2).matrix();
        let c1 = CameraModel::new(k, r1, Vector3::new(0.1, 0.2, 0.3)).unwrap();
        let c2 = CameraModel::new(k, r2, Vector3::new(-0.5, 0.0, 1.0)).unwrap();
        let (r, t) = c1.relative_to(&c2);
        let x = Vector3::new(0.3, -1.0, 4.0);
        let in1 = r1 * x + c1.translation();
        let in2 = r2 * x + c2.translation();
        assert!((r * in1 + t - in2).norm() < 1e-12);
    }
}
