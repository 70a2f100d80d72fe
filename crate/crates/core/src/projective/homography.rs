use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::camera::{validate_intrinsics, validate_rotation};
use super::{CameraModel, GeometryError, Plane};

/// Scale-free determinant threshold, `|det(H)| / ||H||_F^3`.
const SINGULAR_TOL: f64 = 1e-12;
const INFINITY_TOL: f64 = 1e-12;
/// `H[2][2]` must exceed this fraction of `||H||_F` to be used as the scale.
const BOTTOM_RIGHT_TOL: f64 = 1e-9;

/// Image coordinate: `u` is the column (right), `v` the row (down).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }
}

/// Invertible 3x3 projective map stored in canonical scale: `H[2][2] = 1`
/// when that entry is usable, otherwise unit Frobenius norm with a positive
/// leading entry. Two homographies equal up to scale normalize identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Normalizes `m` and rejects singular or non-finite input.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::SingularHomography { det: f64::NAN });
        }
        let det = scale_free_det(&m);
        if !(det.abs() >= SINGULAR_TOL) {
            return Err(GeometryError::SingularHomography { det });
        }
        Ok(Self(normalize(&m)))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn apply(&self, p: Pixel) -> Result<Pixel, GeometryError> {
        let q = self.0 * p.homogeneous();
        if !(q.z.abs() > INFINITY_TOL) {
            return Err(GeometryError::PointAtInfinity { w: q.z });
        }
        Ok(Pixel::new(q.x / q.z, q.y / q.z))
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self.0.try_inverse().ok_or(GeometryError::SingularHomography {
            det: self.0.determinant(),
        })?;
        Self::from_matrix(inv)
    }

    /// The map `p -> next(self(p))`.
    pub fn then(&self, next: &Homography) -> Result<Self, GeometryError> {
        Self::from_matrix(next.0 * self.0)
    }

    /// `||H - I||_F` in canonical scale.
    pub fn deviation_from_identity(&self) -> f64 {
        (self.0 - Matrix3::identity()).norm()
    }
}

impl fmt::Display for Homography {
    /// Nine whitespace-separated numbers, one row per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.to_rows() {
            writeln!(f, "{:?} {:?} {:?}", row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

impl FromStr for Homography {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let values = s
            .split_whitespace()
            .enumerate()
            .map(|(i, tok)| {
                tok.parse::<f64>()
                    .map_err(|e| GeometryError::Parse(format!("value {}: {tok:?}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != 9 {
            return Err(GeometryError::Parse(format!(
                "expected 9 values, found {}",
                values.len()
            )));
        }
        Self::from_matrix(Matrix3::from_row_slice(&values))
    }
}

fn scale_free_det(m: &Matrix3<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let scaled = m / norm;
    scaled.determinant()
}

fn normalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = m.norm();
    let corner = m[(2, 2)];
    if corner.abs() > BOTTOM_RIGHT_TOL * norm {
        return m / corner;
    }
    let mut out = m / norm;
    // row-major scan for the sign convention
    let lead = (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .map(|idx| out[idx])
        .find(|v| *v != 0.0)
        .unwrap_or(1.0);
    if lead < 0.0 {
        out = -out;
    }
    out
}

/// Homography induced by `plane` (given in camera-1 coordinates) between two
/// pinhole cameras related by `x2 = rel_rotation * x1 + rel_translation`:
///
/// `H = h K2 R K1^-1 + K2 t n^T K1^-1`
pub fn plane_homography(
    cam1_k: &Matrix3<f64>,
    cam2_k: &Matrix3<f64>,
    rel_rotation: &Matrix3<f64>,
    rel_translation: &Vector3<f64>,
    plane: &Plane,
) -> Result<Homography, GeometryError> {
    validate_intrinsics(cam1_k)?;
    validate_intrinsics(cam2_k)?;
    validate_rotation(rel_rotation)?;
    let k1_inv = cam1_k
        .try_inverse()
        .ok_or_else(|| GeometryError::InvalidCamera("K1 is not invertible".into()))?;
    let h = plane.distance();
    let m = h * cam2_k * rel_rotation * k1_inv + cam2_k * rel_translation * plane.normal().transpose() * k1_inv;
    Homography::from_matrix(m)
}

/// Homographies for planes with the given normal at `n` linearly spaced
/// distances in `[h_min, h_max]`, ascending.
pub fn sample_homographies(
    cam1: &CameraModel,
    cam2: &CameraModel,
    normal: &Vector3<f64>,
    h_min: f64,
    h_max: f64,
    n: usize,
) -> Result<Vec<(f64, Homography)>, GeometryError> {
    if !(h_min > 0.0) || !(h_min <= h_max) || !h_max.is_finite() {
        return Err(GeometryError::InvalidRange { h_min, h_max });
    }
    if n == 0 {
        return Err(GeometryError::InvalidRange { h_min, h_max });
    }
    let (rotation, translation) = cam1.relative_to(cam2);
    let step = if n > 1 { (h_max - h_min) / (n - 1) as f64 } else { 0.0 };
    (0..n)
        .map(|i| {
            let h = if n > 1 && i == n - 1 {
                h_max
            } else {
                h_min + step * i as f64
            };
            let plane = Plane::new(*normal, h)?;
            let hom = plane_homography(cam1.k(), cam2.k(), &rotation, &translation, &plane)?;
            Ok((h, hom))
        })
        .collect()
}

/// Homography seen by a camera that pitches downwards by `theta_deg` while
/// orbiting the point on its optical axis at `target_distance`, so that the
/// point stays centred. The fronto-parallel plane through the target induces
/// the map; the principal point is a fixed point.
pub fn pitch_corruption_homography(
    k: &Matrix3<f64>,
    theta_deg: f64,
    target_distance: f64,
) -> Result<Homography, GeometryError> {
    if !(0.0..90.0).contains(&theta_deg) {
        return Err(GeometryError::InvalidAngle(theta_deg));
    }
    let plane = Plane::fronto_parallel(target_distance)?;
    let rotation = *Rotation3::from_axis_angle(&Vector3::x_axis(), theta_deg.to_radians()).matrix();
    let target = Vector3::new(0.0, 0.0, target_distance);
    let translation = (Matrix3::identity() - rotation) * target;
    plane_homography(k, k, &rotation, &translation, &plane)
}
