//! File formats, rendering and report output for the `pdq` command.

pub mod formats;
pub mod render;
pub mod report;
pub mod rle;

pub use formats::{parse_detections, parse_ground_truth, DetectionFile, FormatError, GroundTruthFile};
pub use report::ReportJson;
