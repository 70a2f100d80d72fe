use serde::Serialize;

use super::{KeypointName, PoseDetection};

/// Keypoints scoring below this are treated as missing.
pub const DEFAULT_KEYPOINT_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RulesVerdict {
    pub fall: bool,
    /// Shoulders, hips or ankles were missing, so only the box aspect was used.
    pub degraded: bool,
}

/// Geometric fall rule on image coordinates (y grows downwards). With `l` the
/// shoulder-to-hip distance, a person is down when
///
/// ```text
/// (y_shoulder > y_foot - l) && (y_hip > y_foot - l/2) && (y_shoulder > y_hip - l/2)
///     || (box height < box width)
/// ```
///
/// Each body point is the midpoint of its left/right keypoints, or the single
/// visible side. Ankles stand in for feet.
pub fn rules_fall(d: &PoseDetection, keypoint_threshold: f64) -> RulesVerdict {
    let wide = d.bbox().height < d.bbox().width;
    let pick = |l, r| body_point(d, l, r, keypoint_threshold);
    let (Some(shoulder), Some(hip), Some(foot)) = (
        pick(KeypointName::LeftShoulder, KeypointName::RightShoulder),
        pick(KeypointName::LeftHip, KeypointName::RightHip),
        pick(KeypointName::LeftAnkle, KeypointName::RightAnkle),
    ) else {
        return RulesVerdict {
            fall: wide,
            degraded: true,
        };
    };
    let l = (shoulder.0 - hip.0).hypot(shoulder.1 - hip.1);
    let collapsed = shoulder.1 > foot.1 - l && hip.1 > foot.1 - l / 2.0 && shoulder.1 > hip.1 - l / 2.0;
    RulesVerdict {
        fall: collapsed || wide,
        degraded: false,
    }
}

fn body_point(d: &PoseDetection, left: KeypointName, right: KeypointName, threshold: f64) -> Option<(f64, f64)> {
    let l = d.keypoint(left);
    let r = d.keypoint(right);
    match (l.score >= threshold, r.score >= threshold) {
        (true, true) => Some(((l.x + r.x) / 2.0, (l.y + r.y) / 2.0)),
        (true, false) => Some((l.x, l.y)),
        (false, true) => Some((r.x, r.y)),
        (false, false) => None,
    }
}
