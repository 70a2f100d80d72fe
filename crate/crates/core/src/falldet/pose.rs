use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::FallDetError;

/// COCO keypoint names in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeypointName {
    Nose,
    LeftEye,
    RightEye,
    LeftEar,
    RightEar,
    LeftShoulder,
    RightShoulder,
    LeftElbow,
    RightElbow,
    LeftWrist,
    RightWrist,
    LeftHip,
    RightHip,
    LeftKnee,
    RightKnee,
    LeftAnkle,
    RightAnkle,
}

pub const KEYPOINT_COUNT: usize = 17;

impl KeypointName {
    pub const ALL: [KeypointName; KEYPOINT_COUNT] = [
        KeypointName::Nose,
        KeypointName::LeftEye,
        KeypointName::RightEye,
        KeypointName::LeftEar,
        KeypointName::RightEar,
        KeypointName::LeftShoulder,
        KeypointName::RightShoulder,
        KeypointName::LeftElbow,
        KeypointName::RightElbow,
        KeypointName::LeftWrist,
        KeypointName::RightWrist,
        KeypointName::LeftHip,
        KeypointName::RightHip,
        KeypointName::LeftKnee,
        KeypointName::RightKnee,
        KeypointName::LeftAnkle,
        KeypointName::RightAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KeypointName::Nose => "nose",
            KeypointName::LeftEye => "left_eye",
            KeypointName::RightEye => "right_eye",
            KeypointName::LeftEar => "left_ear",
            KeypointName::RightEar => "right_ear",
            KeypointName::LeftShoulder => "left_shoulder",
            KeypointName::RightShoulder => "right_shoulder",
            KeypointName::LeftElbow => "left_elbow",
            KeypointName::RightElbow => "right_elbow",
            KeypointName::LeftWrist => "left_wrist",
            KeypointName::RightWrist => "right_wrist",
            KeypointName::LeftHip => "left_hip",
            KeypointName::RightHip => "right_hip",
            KeypointName::LeftKnee => "left_knee",
            KeypointName::RightKnee => "right_knee",
            KeypointName::LeftAnkle => "left_ankle",
            KeypointName::RightAnkle => "right_ankle",
        }
    }
}

impl fmt::Display for KeypointName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub name: KeypointName,
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Axis-aligned person box: top-left corner plus width and height, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from(a: [f64; 4]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            width: a[2],
            height: a[3],
        }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.width, b.height]
    }
}

/// One detected person with its 17 keypoints in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseDetection {
    bbox: BoundingBox,
    confidence: f64,
    keypoints: [Keypoint; KEYPOINT_COUNT],
}

impl PoseDetection {
    pub fn new(bbox: BoundingBox, confidence: f64, keypoints: Vec<Keypoint>) -> Result<Self, FallDetError> {
        if keypoints.len() != KEYPOINT_COUNT {
            return Err(FallDetError::MalformedDetection(format!(
                "expected {KEYPOINT_COUNT} keypoints, got {}",
                keypoints.len()
            )));
        }
        for (kp, expected) in keypoints.iter().zip(KeypointName::ALL) {
            if kp.name != expected {
                return Err(FallDetError::MalformedDetection(format!(
                    "keypoint {} found where {} belongs",
                    kp.name, expected
                )));
            }
            if !kp.x.is_finite() || !kp.y.is_finite() {
                return Err(FallDetError::MalformedDetection(format!(
                    "{} has non-finite coordinates",
                    kp.name
                )));
            }
            if !(0.0..=1.0).contains(&kp.score) {
                return Err(FallDetError::MalformedDetection(format!(
                    "{} score {} outside [0, 1]",
                    kp.name, kp.score
                )));
            }
        }
        let finite = [bbox.x, bbox.y, bbox.width, bbox.height].iter().all(|v| v.is_finite());
        if !finite || !(bbox.width > 0.0) || !(bbox.height > 0.0) {
            return Err(FallDetError::MalformedDetection(format!(
                "bounding box {:?} needs positive width and height",
                <[f64; 4]>::from(bbox)
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(FallDetError::MalformedDetection(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        let keypoints: [Keypoint; KEYPOINT_COUNT] = keypoints.try_into().expect("length checked above");
        Ok(Self {
            bbox,
            confidence,
            keypoints,
        })
    }

    /// Builds a detection from `(x, y, score)` triples in canonical order.
    pub fn from_triples(bbox: BoundingBox, confidence: f64, triples: &[[f64; 3]]) -> Result<Self, FallDetError> {
        if triples.len() != KEYPOINT_COUNT {
            return Err(FallDetError::MalformedDetection(format!(
                "expected {KEYPOINT_COUNT} keypoints, got {}",
                triples.len()
            )));
        }
        let kps = triples
            .iter()
            .zip(KeypointName::ALL)
            .map(|(t, name)| Keypoint {
                name,
                x: t[0],
                y: t[1],
                score: t[2],
            })
            .collect();
        Self::new(bbox, confidence, kps)
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn keypoints(&self) -> &[Keypoint; KEYPOINT_COUNT] {
        &self.keypoints
    }

    pub fn keypoint(&self, name: KeypointName) -> &Keypoint {
        &self.keypoints[name.index()]
    }

    /// Applies `f` to every keypoint position and box corner (used to move a
    /// detection between image frames).
    pub fn map_coordinates(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut out = self.clone();
        for kp in out.keypoints.iter_mut() {
            (kp.x, kp.y) = f(kp.x, kp.y);
        }
        let (x0, y0) = f(self.bbox.x, self.bbox.y);
        let (x1, y1) = f(self.bbox.x + self.bbox.width, self.bbox.y + self.bbox.height);
        out.bbox = BoundingBox {
            x: x0.min(x1),
            y: y0.min(y1),
            width: (x1 - x0).abs(),
            height: (y1 - y0).abs(),
        };
        out
    }

    fn triples(&self) -> Vec<[f64; 3]> {
        self.keypoints.iter().map(|k| [k.x, k.y, k.score]).collect()
    }
}

/// One line of a keypoint dataset file. `label` is 1 for a fallen person and
/// 0 otherwise; it may be absent in inference inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    bbox: BoundingBox,
    confidence: f64,
    keypoints: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

/// A detection together with its optional ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDetection {
    pub detection: PoseDetection,
    /// `Some(true)` when labelled as fallen.
    pub fallen: Option<bool>,
}

/// Parses a JSON Lines keypoint file. Blank lines are skipped; errors carry
/// the 1-based line number.
pub fn read_detections<R: BufRead>(reader: R) -> Result<Vec<LabeledDetection>, FallDetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line).map_err(|e| FallDetError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let fallen = match rec.label {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(other) => {
                return Err(FallDetError::Parse {
                    line: lineno,
                    message: format!("label must be 0 or 1, got {other}"),
                })
            }
        };
        let detection =
            PoseDetection::from_triples(rec.bbox, rec.confidence, &rec.keypoints).map_err(|e| FallDetError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        out.push(LabeledDetection { detection, fallen });
    }
    Ok(out)
}

pub fn read_detections_file(path: impl AsRef<std::path::Path>) -> Result<Vec<LabeledDetection>, FallDetError> {
    let file = std::fs::File::open(path)?;
    read_detections(std::io::BufReader::new(file))
}

pub fn write_detections<W: Write>(mut writer: W, detections: &[LabeledDetection]) -> Result<(), FallDetError> {
    for d in detections {
        let rec = DetectionRecord {
            bbox: d.detection.bbox,
            confidence: d.detection.confidence,
            keypoints: d.detection.triples(),
            label: d.fallen.map(u8::from),
        };
        serde_json::to_writer(&mut writer, &rec).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
