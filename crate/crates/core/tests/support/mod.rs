//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls into the code under test except for plain data
//! types.
#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use robofall_core::falldet::Mlp;
use robofall_core::projective::RasterImage;
use robofall_core::sysid::{MotorModel, SysIdSample, Wheel};

/// Random camera pair and plane, expressed in camera-1 coordinates.
#[derive(Debug, Clone)]
pub struct Scene {
    pub k1: Matrix3<f64>,
    pub k2: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub distance: f64,
}

fn random_k(rng: &mut impl Rng) -> Matrix3<f64> {
    let f = rng.random_range(300.0..900.0);
    Matrix3::new(
        f,
        rng.random_range(-2.0..2.0),
        rng.random_range(250.0..390.0),
        0.0,
        f * rng.random_range(0.9..1.1),
        rng.random_range(190.0..290.0),
        0.0,
        0.0,
        1.0,
    )
}

fn random_unit_near(rng: &mut impl Rng, axis: Vector3<f64>, max_angle: f64) -> Vector3<f64> {
    let tilt = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let rot = Rotation3::from_scaled_axis(tilt.normalize() * rng.random_range(0.0..max_angle));
    rot * axis
}

impl Scene {
    pub fn random(rng: &mut impl Rng) -> Self {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        Self {
            k1: random_k(rng),
            k2: random_k(rng),
            rotation: *Rotation3::from_axis_angle(&axis, rng.random_range(-0.4..0.4)).matrix(),
            translation: Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ),
            normal: random_unit_near(rng, Vector3::z(), 0.5),
            distance: rng.random_range(1.0..5.0),
        }
    }

    /// Points on the plane in front of both cameras, with their projections.
    pub fn correspondences(&self, rng: &mut impl Rng, count: usize) -> Vec<PointPair> {
        // in-plane basis
        let e1 = self.normal.cross(&Vector3::x()).normalize();
        let e2 = self.normal.cross(&e1);
        let base = self.normal * self.distance;
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x = base + e1 * rng.random_range(-1.0..1.0) + e2 * rng.random_range(-1.0..1.0);
            let x2 = self.rotation * x + self.translation;
            if x.z < 0.2 || x2.z < 0.2 {
                continue;
            }
            out.push((project(&self.k1, &x), project(&self.k2, &x2)));
        }
        out
    }
}

/// Pixel in camera 1 and its image in camera 2.
pub type PointPair = ((f64, f64), (f64, f64));

pub fn project(k: &Matrix3<f64>, x: &Vector3<f64>) -> (f64, f64) {
    let p = k * x;
    (p.x / p.z, p.y / p.z)
}

/// Similarity that moves the centroid to 0 and the mean distance to sqrt(2).
fn conditioning(pts: &[(f64, f64)]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let mean_d = pts.iter().map(|p| (p.0 - mx).hypot(p.1 - my)).sum::<f64>() / n;
    let s = std::f64::consts::SQRT_2 / mean_d;
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform from point pairs `(u1, u2)`.
pub fn dlt_homography(pairs: &[PointPair]) -> Matrix3<f64> {
    assert!(
        pairs.len() >= 5,
        "pad to at least 5 pairs so A has a full null space row"
    );
    let t1 = conditioning(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let t2 = conditioning(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let mut a = DMatrix::<f64>::zeros(2 * pairs.len(), 9);
    for (i, &((x, y), (u, v))) in pairs.iter().enumerate() {
        let p = t1 * Vector3::new(x, y, 1.0);
        let q = t2 * Vector3::new(u, v, 1.0);
        let (x, y, w) = (p.x, p.y, p.z);
        let (u, v, s) = (q.x, q.y, q.z);
        let r0 = [0.0, 0.0, 0.0, -s * x, -s * y, -s * w, v * x, v * y, v * w];
        let r1 = [s * x, s * y, s * w, 0.0, 0.0, 0.0, -u * x, -u * y, -u * w];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let h = v_t.row(idx);
    let hn = Matrix3::from_fn(|r, c| h[3 * r + c]);
    t2.try_inverse().unwrap() * hn * t1
}

/// `||a/|a| - b/|b|||` after aligning signs, i.e. distance up to scale.
pub fn relative_frobenius(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let an = a / a.norm();
    let bn = b / b.norm();
    let sign = if an.dot(&bn) < 0.0 { -1.0 } else { 1.0 };
    (an * sign - bn).norm()
}

/// Peak signal-to-noise ratio in dB over the pixels where `mask` is true.
pub fn psnr(a: &RasterImage, b: &RasterImage, mask: impl Fn(u32, u32) -> bool) -> f64 {
    let mut se = 0.0;
    let mut n = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if !mask(x, y) {
                continue;
            }
            for c in 0..a.channels() {
                let d = a.get(x, y, c) as f64 - b.get(x, y, c) as f64;
                se += d * d;
                n += 1;
            }
        }
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

/// A smooth, non-separable test pattern.
pub fn smooth_image(width: u32, height: u32) -> RasterImage {
    RasterImage::from_fn(width, height, 1, |x, y, _| {
        let (fx, fy) = (x as f64 / width as f64, y as f64 / height as f64);
        (127.5 + 60.0 * (3.0 * fx).sin() + 60.0 * (2.0 * fy + fx).cos()).round() as u8
    })
    .unwrap()
}

/// Central finite differences of the batch loss for every parameter.
pub fn numeric_gradient(net: &Mlp, inputs: &[Vec<f64>], targets: &[usize], eps: f64) -> Vec<f64> {
    let base = net.flat_parameters();
    let mut probe = net.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            probe.set_flat_parameters(&p).unwrap();
            let up = probe.loss(inputs, targets).unwrap();
            p[i] = base[i] - eps;
            probe.set_flat_parameters(&p).unwrap();
            let down = probe.loss(inputs, targets).unwrap();
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a - f| / max(|a| + |f|, 1e-6)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / (a.abs() + f.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Samples of `u = b / w + c` at integer PWM values spread over 10..=255,
/// negated when `b < 0` (the reverse-direction groups). With `pwm_sigma > 0`
/// the recorded PWM gets Gaussian noise, then rounding.
pub fn motor_samples(
    rng: &mut impl Rng,
    wheel: Wheel,
    truth: MotorModel,
    n: usize,
    pwm_sigma: f64,
) -> Vec<SysIdSample> {
    let noise = Normal::new(0.0, pwm_sigma.max(f64::MIN_POSITIVE)).unwrap();
    (0..n)
        .map(|i| {
            let u = truth.b.signum() * (10.0 + 245.0 * i as f64 / (n - 1) as f64).round();
            let omega = truth.b / (u - truth.c);
            let recorded = if pwm_sigma > 0.0 {
                (u + noise.sample(rng)).round()
            } else {
                u
            };
            SysIdSample::new(wheel, recorded as i32, omega)
        })
        .collect()
}
