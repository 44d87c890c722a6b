//! JSON ground-truth and detection files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use pdq_core::model::{detection_violations, GaussianCorner};
use pdq_core::{
    validate_dataset, AxisAlignedBox, Dataset, Detection, Frame, FrameId, Geometry, GroundTruthObject, ImageDims,
    PixelSet, Violation,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rle;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    MalformedJson { line: usize, column: usize, message: String },
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("mask of annotation {annotation}: {source}")]
    RleLengthMismatch {
        annotation: usize,
        #[source]
        source: rle::RleLengthError,
    },
    #[error("detection {detection} refers to unknown image id {image_id}")]
    UnknownImageId { detection: usize, image_id: u32 },
    #[error("detection {detection}: covariance `{field}` is not positive semi-definite (smallest eigenvalue {min_eigenvalue})")]
    NonPsdCovariance {
        detection: usize,
        field: &'static str,
        min_eigenvalue: f64,
    },
    #[error("ground truth fails validation: {}", list(.0))]
    InvalidDataset(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl FormatError {
    /// Stable identifier printed alongside the message.
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::Io { .. } => "io",
            FormatError::MalformedJson { .. } => "malformed_json",
            FormatError::SchemaViolation { .. } => "schema_violation",
            FormatError::RleLengthMismatch { .. } => "rle_length_mismatch",
            FormatError::UnknownImageId { .. } => "unknown_image_id",
            FormatError::NonPsdCovariance { .. } => "non_psd_covariance",
            FormatError::InvalidDataset(_) => "invalid_dataset",
        }
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> FormatError {
    FormatError::SchemaViolation {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub schema_version: u32,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub image_id: u32,
    pub class_id: usize,
    pub bbox: [i64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleMask {
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFile {
    pub schema_version: u32,
    pub detections: Vec<DetectionEntry>,
}

/// One detection. Covariances are row-major 2x2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DetectionEntry {
    Bbox {
        image_id: u32,
        bbox: [i64; 4],
        label_probs: Vec<f64>,
        /// Uniform spatial probability inside the box; omitted means a
        /// conventional box.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spatial_prob: Option<f64>,
    },
    Pbox {
        image_id: u32,
        tl_mean: [f64; 2],
        tl_cov: [f64; 4],
        br_mean: [f64; 2],
        br_cov: [f64; 4],
        label_probs: Vec<f64>,
    },
}

impl DetectionEntry {
    pub fn image_id(&self) -> u32 {
        match self {
            DetectionEntry::Bbox { image_id, .. } | DetectionEntry::Pbox { image_id, .. } => *image_id,
        }
    }
}

fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, FormatError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    match serde_path_to_error::deserialize(de) {
        Ok(v) => Ok(v),
        Err(e) => {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_data() {
                Err(schema(path, inner.to_string()))
            } else {
                Err(FormatError::MalformedJson {
                    line: inner.line(),
                    column: inner.column(),
                    message: inner.to_string(),
                })
            }
        }
    }
}

fn read(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_box(path: String, b: [i64; 4]) -> Result<AxisAlignedBox, FormatError> {
    AxisAlignedBox::new(b[0], b[1], b[2], b[3]).map_err(|e| schema(path, e.to_string()))
}

impl GroundTruthFile {
    pub fn to_dataset(&self) -> Result<Dataset, FormatError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let mut names = vec![None; self.categories.len()];
        for (i, c) in self.categories.iter().enumerate() {
            match names.get_mut(c.id) {
                Some(slot @ None) => *slot = Some(c.name.clone()),
                _ => {
                    return Err(schema(
                        format!("categories[{i}].id"),
                        "category ids must be unique and cover 0..count-1",
                    ))
                }
            }
        }
        let class_names: Vec<String> = names.into_iter().flatten().collect();

        let mut frames: Vec<Frame> = Vec::with_capacity(self.images.len());
        let mut index: HashMap<u32, usize> = HashMap::new();
        for (i, img) in self.images.iter().enumerate() {
            let dims = ImageDims::new(img.width, img.height)
                .map_err(|e| schema(format!("images[{i}]"), e.to_string()))?;
            if index.insert(img.id, frames.len()).is_some() {
                return Err(schema(format!("images[{i}].id"), format!("duplicate image id {}", img.id)));
            }
            frames.push(Frame {
                id: FrameId(img.id),
                dims,
                objects: Vec::new(),
            });
        }
        for (i, a) in self.annotations.iter().enumerate() {
            let Some(&fi) = index.get(&a.image_id) else {
                return Err(schema(
                    format!("annotations[{i}].image_id"),
                    format!("unknown image id {}", a.image_id),
                ));
            };
            if a.class_id >= class_names.len() {
                return Err(schema(
                    format!("annotations[{i}].class_id"),
                    format!("class {} out of range for {} categories", a.class_id, class_names.len()),
                ));
            }
            let frame = &mut frames[fi];
            let bbox = to_box(format!("annotations[{i}].bbox"), a.bbox)?;
            if !bbox.within(frame.dims) {
                return Err(schema(format!("annotations[{i}].bbox"), "box extends outside the image"));
            }
            let segment = match &a.mask {
                None => PixelSet::from_box(bbox),
                Some(m) => {
                    let raster = rle::decode(&m.counts, frame.dims.pixel_count())
                        .map_err(|source| FormatError::RleLengthMismatch { annotation: i, source })?;
                    PixelSet::from_column_major(frame.dims, &raster)
                }
            };
            frame.objects.push(GroundTruthObject::new(frame.id, segment, bbox, a.class_id));
        }
        let dataset = Dataset { frames, class_names };
        let violations = validate_dataset(&dataset);
        if violations.is_empty() {
            Ok(dataset)
        } else {
            Err(FormatError::InvalidDataset(violations))
        }
    }

    /// Masks are written only for objects whose segment is not the whole box.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let images = dataset
            .frames
            .iter()
            .map(|f| ImageEntry {
                id: f.id.0,
                width: f.dims.width,
                height: f.dims.height,
            })
            .collect();
        let annotations = dataset
            .frames
            .iter()
            .flat_map(|f| {
                f.objects.iter().map(move |o| {
                    let full = o.segment.is_full_box() && o.segment.bounds() == Some(o.bbox);
                    Annotation {
                        image_id: f.id.0,
                        class_id: o.class_id,
                        bbox: [o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1],
                        mask: (!full).then(|| RleMask {
                            counts: rle::encode(&o.segment.to_column_major(f.dims)),
                        }),
                    }
                })
            })
            .collect();
        let categories = dataset
            .class_names
            .iter()
            .enumerate()
            .map(|(id, name)| Category { id, name: name.clone() })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            images,
            annotations,
            categories,
        }
    }
}

fn cov_matrix(c: [f64; 4]) -> [[f64; 2]; 2] {
    [[c[0], c[1]], [c[2], c[3]]]
}

fn check_corner(detection: usize, field: &'static str, mean: [f64; 2], cov: [f64; 4]) -> Result<GaussianCorner<f64>, FormatError> {
    let corner = GaussianCorner {
        mean,
        cov: cov_matrix(cov),
    };
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(schema(format!("detections[{detection}].{field}"), "non-finite value"));
    }
    match corner.check() {
        Ok(()) => Ok(corner),
        Err(pdq_core::ModelError::NonPsdCovariance(min_eigenvalue)) => Err(FormatError::NonPsdCovariance {
            detection,
            field,
            min_eigenvalue,
        }),
        Err(e) => Err(schema(format!("detections[{detection}].{field}"), e.to_string())),
    }
}

impl DetectionFile {
    /// Converts to detections in file order, checked against `dataset`.
    pub fn to_detections(&self, dataset: &Dataset) -> Result<Vec<Detection<f64>>, FormatError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let num_classes = dataset.num_classes();
        let mut out = Vec::with_capacity(self.detections.len());
        for (j, entry) in self.detections.iter().enumerate() {
            let frame = FrameId(entry.image_id());
            if dataset.frame(frame).is_none() {
                return Err(FormatError::UnknownImageId {
                    detection: j,
                    image_id: entry.image_id(),
                });
            }
            let (geometry, probs) = match entry {
                DetectionEntry::Bbox {
                    bbox,
                    label_probs,
                    spatial_prob,
                    ..
                } => {
                    let b = to_box(format!("detections[{j}].bbox"), *bbox)?;
                    let g = match spatial_prob {
                        None => Geometry::ConventionalBox(b),
                        Some(p) => Geometry::UniformBox { bbox: b, prob: *p },
                    };
                    (g, label_probs)
                }
                DetectionEntry::Pbox {
                    tl_mean,
                    tl_cov,
                    br_mean,
                    br_cov,
                    label_probs,
                    ..
                } => {
                    let top_left = check_corner(j, "tl_cov", *tl_mean, *tl_cov)?;
                    let bottom_right = check_corner(j, "br_cov", *br_mean, *br_cov)?;
                    (Geometry::ProbabilisticBox { top_left, bottom_right }, label_probs)
                }
            };
            let det = Detection::new(frame, geometry, probs.clone());
            if let Some(v) = detection_violations(j, &det, num_classes).into_iter().next() {
                let field = match v {
                    Violation::LabelDistLength { .. }
                    | Violation::LabelProbOutOfRange { .. }
                    | Violation::LabelDistNotNormalized { .. } => "label_probs",
                    Violation::InvalidSpatialProb { .. } => "spatial_prob",
                    Violation::CornersInverted { .. } => "br_mean",
                    _ => "bbox",
                };
                return Err(schema(format!("detections[{j}].{field}"), v.to_string()));
            }
            out.push(det);
        }
        Ok(out)
    }

    pub fn from_detections(dets: &[Detection<f64>]) -> Self {
        let flat = |c: &GaussianCorner<f64>| [c.cov[0][0], c.cov[0][1], c.cov[1][0], c.cov[1][1]];
        let detections = dets
            .iter()
            .map(|d| {
                let image_id = d.frame().0;
                let label_probs = d.label_dist().to_vec();
                match d.geometry() {
                    Geometry::ConventionalBox(b) => DetectionEntry::Bbox {
                        image_id,
                        bbox: [b.x0, b.y0, b.x1, b.y1],
                        label_probs,
                        spatial_prob: None,
                    },
                    Geometry::UniformBox { bbox: b, prob } => DetectionEntry::Bbox {
                        image_id,
                        bbox: [b.x0, b.y0, b.x1, b.y1],
                        label_probs,
                        spatial_prob: Some(*prob),
                    },
                    Geometry::ProbabilisticBox { top_left, bottom_right } => DetectionEntry::Pbox {
                        image_id,
                        tl_mean: top_left.mean,
                        tl_cov: flat(top_left),
                        br_mean: bottom_right.mean,
                        br_cov: flat(bottom_right),
                        label_probs,
                    },
                }
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            detections,
        }
    }
}

pub fn ground_truth_from_str(text: &str) -> Result<Dataset, FormatError> {
    from_json::<GroundTruthFile>(text)?.to_dataset()
}

pub fn detections_from_str(text: &str, dataset: &Dataset) -> Result<Vec<Detection<f64>>, FormatError> {
    from_json::<DetectionFile>(text)?.to_detections(dataset)
}

pub fn parse_ground_truth(path: &Path) -> Result<Dataset, FormatError> {
    ground_truth_from_str(&read(path)?)
}

pub fn parse_detections(path: &Path, dataset: &Dataset) -> Result<Vec<Detection<f64>>, FormatError> {
    detections_from_str(&read(path)?, dataset)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let text = serde_json::to_string_pretty(value).expect("serialisable value");
    std::fs::write(path, text + "\n").map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}
