//! End-to-end fall check: per-candidate detections in, one JSON report out.
//!
//! Each candidate is a person-plane distance `h` with its homography from the
//! robot camera to the virtual standing-height camera. Detections come either
//! from keypoint files (one per candidate) or from an external pose extractor
//! run on the warped images. The candidate holding the most confident
//! detection wins; ties go to the nearest plane.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, SecondsFormat, Utc};
use nalgebra::Vector3;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ClassifierChoice, Config, ConfigError};
use crate::falldet::{mlp_forward, read_detections_file, rules_fall, BoundingBox, FallDetError, Mlp, PoseDetection};
use crate::projective::{sample_homographies, warp_image, GeometryError, Homography, RasterImage};

/// Exit status when no fall was seen.
pub const EXIT_NO_FALL: i32 = 0;
/// Exit status when at least one person is classified as fallen.
pub const EXIT_FALL: i32 = 10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no candidates to choose from")]
    EmptyCandidates,
    #[error("image input needs a pose extractor: {0}")]
    AdapterUnavailable(String),
    #[error("pose extractor failed ({status}): {stderr}")]
    AdapterFailed { status: String, stderr: String },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: FallDetError },
    #[error(transparent)]
    FallDet(#[from] FallDetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl PipelineError {
    /// Stable process exit status, always above [`EXIT_FALL`].
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::EmptyCandidates => 11,
            Self::Parse { .. } | Self::FallDet(_) => 12,
            Self::Config(_) | Self::Geometry(_) => 13,
            Self::AdapterUnavailable(_) | Self::AdapterFailed { .. } => 14,
            Self::Io { .. } => 15,
        }
    }
}

fn io_err(context: impl fmt::Display) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.to_string();
    move |source| PipelineError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub h: f64,
    pub homography: Homography,
    pub detections: Vec<PoseDetection>,
    /// Highest detection confidence, 0 without detections.
    pub best_confidence: f64,
    /// Where the detections came from.
    pub source: String,
}

impl CandidateResult {
    pub fn new(h: f64, homography: Homography, detections: Vec<PoseDetection>, source: impl Into<String>) -> Self {
        let best_confidence = detections.iter().map(|d| d.confidence()).fold(0.0, f64::max);
        Self {
            h,
            homography,
            detections,
            best_confidence,
            source: source.into(),
        }
    }
}

/// Highest `best_confidence`; ties broken by the smallest `h`.
pub fn select_best_candidate(results: &[CandidateResult]) -> Result<&CandidateResult, PipelineError> {
    results
        .iter()
        .min_by(|a, b| {
            b.best_confidence
                .total_cmp(&a.best_confidence)
                .then(a.h.total_cmp(&b.h))
        })
        .ok_or(PipelineError::EmptyCandidates)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonVerdict {
    pub bbox: BoundingBox,
    pub rules_fall: bool,
    pub mlp_p_fall: Option<f64>,
    pub method: ClassifierChoice,
}

impl PersonVerdict {
    /// What the configured classifier says.
    pub fn is_fall(&self, mlp_threshold: f64) -> bool {
        let mlp = self.mlp_p_fall.is_some_and(|p| p >= mlp_threshold);
        match self.method {
            ClassifierChoice::Rules => self.rules_fall,
            ClassifierChoice::Mlp => mlp,
            ClassifierChoice::Both => self.rules_fall || mlp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FallReport {
    pub timestamp: String,
    pub source: String,
    pub candidate_h: f64,
    pub persons: Vec<PersonVerdict>,
    pub alarm: bool,
    /// No candidate contained a detection.
    pub no_person: bool,
}

impl FallReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn exit_code(&self) -> i32 {
        if self.alarm {
            EXIT_FALL
        } else {
            EXIT_NO_FALL
        }
    }
}

/// RFC 3339 in UTC with whole seconds, e.g. `2024-05-01T12:00:00Z`.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Classifies every detection of the chosen candidate.
pub fn build_report(
    best: &CandidateResult,
    config: &Config,
    mlp: Option<&Mlp>,
    timestamp: &DateTime<Utc>,
) -> Result<FallReport, PipelineError> {
    let p = &config.pipeline;
    let method = p.classifier;
    let mlp = if method.needs_mlp() {
        Some(mlp.ok_or_else(|| ConfigError::Invalid(format!("classifier {:?} needs mlp weights", method.as_str())))?)
    } else {
        None
    };
    let features = p.features();
    let persons = best
        .detections
        .iter()
        .map(|d| {
            let mlp_p_fall = match mlp {
                Some(net) => Some(mlp_forward(net, d, &features)?.fall),
                None => None,
            };
            Ok(PersonVerdict {
                bbox: *d.bbox(),
                rules_fall: rules_fall(d, p.keypoint_threshold).fall,
                mlp_p_fall,
                method,
            })
        })
        .collect::<Result<Vec<_>, FallDetError>>()?;
    Ok(FallReport {
        timestamp: format_timestamp(timestamp),
        source: best.source.clone(),
        candidate_h: best.h,
        alarm: persons.iter().any(|v| v.is_fall(p.mlp_threshold)),
        no_person: best.detections.is_empty(),
        persons,
    })
}

/// `n` candidate homographies from the configured camera pair.
pub fn candidate_homographies(config: &Config, n: usize) -> Result<Vec<(f64, Homography)>, PipelineError> {
    let p = &config.pipeline;
    let src = config.source.camera()?;
    let dst = config.target.camera()?;
    Ok(sample_homographies(
        &src,
        &dst,
        &Vector3::from(p.plane_normal),
        p.h_min,
        p.h_max,
        n,
    )?)
}

/// One keypoint file, optionally pinned to a plane distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointCandidate {
    pub h: Option<f64>,
    pub path: PathBuf,
}

impl std::str::FromStr for KeypointCandidate {
    type Err = String;

    /// `PATH` or `H:PATH`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((h, path)) = s.split_once(':') {
            if let Ok(h) = h.parse::<f64>() {
                return Ok(Self {
                    h: Some(h),
                    path: path.into(),
                });
            }
        }
        Ok(Self {
            h: None,
            path: s.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineInput {
    /// One file per candidate. Files without an explicit `h` take the
    /// matching entry of the configured distance grid.
    Keypoints(Vec<KeypointCandidate>),
    /// A robot-view image to warp once per configured candidate.
    Image(PathBuf),
}

/// Collects candidates, selects one and classifies its detections.
pub fn run_pipeline(
    input: &PipelineInput,
    config: &Config,
    timestamp: &DateTime<Utc>,
) -> Result<FallReport, PipelineError> {
    let mlp = match (&config.pipeline.mlp_weights, config.pipeline.classifier.needs_mlp()) {
        (Some(path), true) => Some(Mlp::load(path).map_err(|source| PipelineError::Parse {
            path: path.clone(),
            source,
        })?),
        _ => None,
    };
    let candidates = match input {
        PipelineInput::Keypoints(files) => keypoint_candidates(files, config)?,
        PipelineInput::Image(path) => image_candidates(path, config)?,
    };
    let best = select_best_candidate(&candidates)?;
    build_report(best, config, mlp.as_ref(), timestamp)
}

fn keypoint_candidates(files: &[KeypointCandidate], config: &Config) -> Result<Vec<CandidateResult>, PipelineError> {
    if files.is_empty() {
        return Err(PipelineError::EmptyCandidates);
    }
    let grid = candidate_homographies(config, files.len())?;
    let src = config.source.camera()?;
    let dst = config.target.camera()?;
    let normal = Vector3::from(config.pipeline.plane_normal);
    files
        .iter()
        .zip(grid)
        .map(|(f, (grid_h, grid_hom))| {
            let (h, hom) = match f.h {
                Some(h) => (h, sample_homographies(&src, &dst, &normal, h, h, 1)?[0].1),
                None => (grid_h, grid_hom),
            };
            let detections = load_detections(&f.path)?;
            Ok(CandidateResult::new(h, hom, detections, f.path.display().to_string()))
        })
        .collect()
}

fn load_detections(path: &Path) -> Result<Vec<PoseDetection>, PipelineError> {
    let records = read_detections_file(path).map_err(|source| match source {
        FallDetError::Io(e) => PipelineError::Io {
            context: path.display().to_string(),
            source: e,
        },
        source => PipelineError::Parse {
            path: path.to_path_buf(),
            source,
        },
    })?;
    Ok(records.into_iter().map(|r| r.detection).collect())
}

fn image_candidates(path: &Path, config: &Config) -> Result<Vec<CandidateResult>, PipelineError> {
    let p = &config.pipeline;
    if p.adapter.is_empty() {
        return Err(PipelineError::AdapterUnavailable(
            "no adapter configured (set pipeline.adapter)".into(),
        ));
    }
    let image = RasterImage::load(path)?;
    let work = tempfile::tempdir().map_err(io_err("temporary directory"))?;
    candidate_homographies(config, p.candidates)?
        .into_iter()
        .enumerate()
        .map(|(i, (h, hom))| {
            let warped = work.path().join(format!("candidate_{i}.png"));
            let out = work.path().join(format!("candidate_{i}.jsonl"));
            warp_image(&image, &hom)?.save(&warped)?;
            invoke_adapter(&p.adapter, &warped, &out, &p.model_size, p.confidence)?;
            let detections = load_detections(&out)?;
            Ok(CandidateResult::new(h, hom, detections, path.display().to_string()))
        })
        .collect()
}

/// Runs `<adapter...> extract --input IMG --output OUT --model-size S --conf C`.
pub fn invoke_adapter(
    adapter: &[String],
    input: &Path,
    output: &Path,
    model_size: &str,
    confidence: f64,
) -> Result<(), PipelineError> {
    let (program, args) = adapter
        .split_first()
        .ok_or_else(|| PipelineError::AdapterUnavailable("empty adapter command".into()))?;
    let result = Command::new(program)
        .args(args)
        .arg("extract")
        .arg("--input")
        .arg(input)
        .arg("--output")
        .arg(output)
        .args(["--model-size", model_size, "--conf", &confidence.to_string()])
        .output()
        .map_err(|e| PipelineError::AdapterUnavailable(format!("cannot run {program:?}: {e}")))?;
    if !result.status.success() {
        return Err(PipelineError::AdapterFailed {
            status: result.status.to_string(),
            stderr: String::from_utf8_lossy(&result.stderr).trim().to_string(),
        });
    }
    if !output.exists() {
        return Err(PipelineError::AdapterFailed {
            status: result.status.to_string(),
            stderr: format!("no output written to {}", output.display()),
        });
    }
    Ok(())
}

/// Where reports go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sink {
    Stdout,
    File(PathBuf),
    /// Directory receiving `fall_<timestamp>.json`.
    Spool(PathBuf),
}

/// Writes the report as one JSON line.
pub fn write_report<W: Write>(r: &FallReport, mut w: W) -> std::io::Result<()> {
    w.write_all(r.to_json().as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Returns the file written, if any.
pub fn emit_report(r: &FallReport, sink: &Sink) -> Result<Option<PathBuf>, PipelineError> {
    let path = match sink {
        Sink::Stdout => {
            write_report(r, std::io::stdout().lock()).map_err(io_err("stdout"))?;
            return Ok(None);
        }
        Sink::File(p) => p.clone(),
        Sink::Spool(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(dir.display()))?;
            dir.join(format!("fall_{}.json", r.timestamp))
        }
    };
    let file = std::fs::File::create(&path).map_err(io_err(path.display()))?;
    write_report(r, file).map_err(io_err(path.display()))?;
    Ok(Some(path))
}
