//! Motion-clip ingestion (BVH and the native JSON format) and pointing-movement analysis.

mod analysis;
mod bvh;
mod clip;

use thiserror::Error;

use crate::geom::GeomError;

pub use analysis::{
    classify_octant, count_octants, kinematic_stats, precision_profile, sagittal_displacement, segment_pointing,
    speed_series, velocity_profile, BodyFrame, KinematicStats, Octant, OctantTable, ProfileBand, Segment,
    SegmentParams,
};
pub use bvh::{parse_bvh, LengthUnit};
pub use clip::{clip_to_value, parse_clip_json, write_clip_json, Annotation, Clip, Target};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MocapError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported channel '{channel}'")]
    UnsupportedChannel { line: usize, channel: String },
    #[error("invalid or missing field '{0}'")]
    Schema(String),
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("no pointing movement found")]
    NoMovementFound,
    #[error("clip too short for segmentation: {0:.3} s (need at least 1 s)")]
    ClipTooShort(f64),
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Geom(#[from] GeomError),
}
