//! Probability-based Detection Quality (PDQ).
//!
//! Scores probabilistic object detections against pixel-level ground truth.
//! Each detection carries a spatial probability map (from a conventional box,
//! a uniform-probability box or a box with Gaussian corners) and a full label
//! distribution. Detections are matched to objects per frame by maximising
//! pairwise quality, and the matched, missed and spurious outcomes are
//! averaged into one score.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar type for the common cases.
//!
//! ```
//! use pdq_core::{evaluate, AxisAlignedBox, Dataset, Detection64, EvalConfig64, Frame, FrameId,
//!                Geometry, GroundTruthObject, ImageDims};
//!
//! let bbox = AxisAlignedBox::new(2, 2, 5, 5).unwrap();
//! let dataset = Dataset {
//!     frames: vec![Frame {
//!         id: FrameId(0),
//!         dims: ImageDims::new(10, 10).unwrap(),
//!         objects: vec![GroundTruthObject::from_box(FrameId(0), bbox, 0)],
//!     }],
//!     class_names: vec!["thing".into(), "other".into()],
//! };
//! let det = Detection64::new(FrameId(0), Geometry::ConventionalBox(bbox), vec![0.75, 0.25]);
//! let report = evaluate(&dataset, &[det], &EvalConfig64::default()).unwrap();
//! assert!((report.pdq() - 0.75f64.sqrt()).abs() < 1e-12);
//! ```

pub mod assign;
pub mod baseline_map;
pub mod model;
pub mod quality;
pub mod scalar;
pub mod score;
pub mod simharness;
pub mod spatial;

pub use assign::{assign_frame, hungarian_max, AssignedPair, FrameAssignment};
pub use baseline_map::{average_precision, greedy_assign, iou, map_score, MapReport, MatchRecord};
pub use model::{
    validate_dataset, validate_detections, AxisAlignedBox, Dataset, Detection, Frame, FrameId, GaussianCorner,
    Geometry, GroundTruthObject, ImageDims, ModelError, PixelSet, Violation,
};
pub use quality::{pair_quality, PairQuality, PreparedDetection, QualityError};
pub use scalar::{CompensatedSum, Scalar};
pub use score::{evaluate, filter_by_threshold, EvalConfig, EvaluationReport, PdqAccumulator, ScoreError};
pub use simharness::{run_sweep, simulate_detections, Experiment, SimConfig, SweepResult, SweepSpec};
pub use spatial::{bvn_rect_prob, build_probability_map, pixel_probability, ProbabilityMap, SpatialConfig, SpatialError};

pub type Detection64 = Detection<f64>;
pub type Detection32 = Detection<f32>;
pub type Geometry64 = Geometry<f64>;
pub type Geometry32 = Geometry<f32>;
pub type GaussianCorner64 = GaussianCorner<f64>;
pub type GaussianCorner32 = GaussianCorner<f32>;
pub type SpatialConfig64 = SpatialConfig<f64>;
pub type SpatialConfig32 = SpatialConfig<f32>;
pub type ProbabilityMap64 = ProbabilityMap<f64>;
pub type ProbabilityMap32 = ProbabilityMap<f32>;
pub type PairQuality64 = PairQuality<f64>;
pub type PairQuality32 = PairQuality<f32>;
pub type EvalConfig64 = EvalConfig<f64>;
pub type EvalConfig32 = EvalConfig<f32>;
pub type Report64 = EvaluationReport<f64>;
pub type Report32 = EvaluationReport<f32>;
