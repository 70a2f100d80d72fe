use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BoundingBox, PoseDetection, KEYPOINT_COUNT};

/// Upright body template in units of body height: origin between the feet,
/// negative y upwards (image convention), canonical keypoint order.
const UPRIGHT: [(f64, f64); KEYPOINT_COUNT] = [
    (0.0, -0.93),
    (0.02, -0.95),
    (-0.02, -0.95),
    (0.05, -0.93),
    (-0.05, -0.93),
    (0.12, -0.80),
    (-0.12, -0.80),
    (0.15, -0.62),
    (-0.15, -0.62),
    (0.16, -0.47),
    (-0.16, -0.47),
    (0.08, -0.50),
    (-0.08, -0.50),
    (0.08, -0.26),
    (-0.08, -0.26),
    (0.08, -0.03),
    (-0.08, -0.03),
];

/// Synthetic standing / lying keypoint sets with jitter, alternating classes.
/// The label is `true` for lying (fallen) poses. Coordinates fit a 640x480
/// frame.
pub fn synthetic_dataset(n: usize, seed: u64) -> Vec<(PoseDetection, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let fallen = i % 2 == 1;
            (synthetic_pose(&mut rng, fallen), fallen)
        })
        .collect()
}

fn synthetic_pose(rng: &mut impl Rng, fallen: bool) -> PoseDetection {
    let length = rng.random_range(90.0..200.0);
    let tilt: f64 = if fallen {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        side * rng.random_range(75.0f64..105.0).to_radians()
    } else {
        rng.random_range(-10.0f64..10.0).to_radians()
    };
    let (s, c) = tilt.sin_cos();
    let jitter = 0.03 * length;
    let mut pts: Vec<(f64, f64)> = UPRIGHT
        .iter()
        .map(|&(x, y)| {
            let (x, y) = (x * length, y * length);
            (
                c * x - s * y + rng.random_range(-jitter..jitter),
                s * x + c * y + rng.random_range(-jitter..jitter),
            )
        })
        .collect();

    let margin = 0.05 * length;
    let min_x = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - margin;
    let max_x = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + margin;
    let min_y = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - margin;
    let max_y = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + margin;
    let (w, h) = (max_x - min_x, max_y - min_y);
    let ox = rng.random_range(0.0..(640.0 - w).max(1.0)) - min_x;
    let oy = rng.random_range(0.0..(480.0 - h).max(1.0)) - min_y;
    for p in &mut pts {
        p.0 += ox;
        p.1 += oy;
    }
    let triples: Vec<[f64; 3]> = pts.iter().map(|&(x, y)| [x, y, rng.random_range(0.5..1.0)]).collect();
    let bbox = BoundingBox {
        x: min_x + ox,
        y: min_y + oy,
        width: w,
        height: h,
    };
    PoseDetection::from_triples(bbox, rng.random_range(0.5..1.0), &triples).expect("synthetic pose is well formed")
}
