//! Image-level filtering and square crop geometry.

use serde::{Deserialize, Serialize};

use crate::schema::{AttributeRecord, BoundingBox, ImageSize, Landmarks, Point, SourceDataset};

/// Minimum face side used for in-the-wild sources.
pub const LAION_MIN_FACE_SIDE_PX: u32 = 250;

pub const DEFAULT_CROP_MARGIN: f64 = 1.3;

/// Per-source filtering thresholds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetProfile {
    pub name: SourceDataset,
    pub min_face_side_px: Option<u32>,
    pub require_single_face: bool,
    pub require_real_human: bool,
    pub reject_text_overlay: bool,
}

impl DatasetProfile {
    /// Built-in profile for a source. Curated portrait sets keep every
    /// single-face sample; LAION-Face gets the full CLIP and resolution
    /// screens.
    pub fn builtin(name: SourceDataset) -> Self {
        match name {
            SourceDataset::EasyPortrait | SourceDataset::Ffhq => Self {
                name,
                min_face_side_px: None,
                require_single_face: true,
                require_real_human: false,
                reject_text_overlay: false,
            },
            SourceDataset::LaionFace => Self {
                name,
                min_face_side_px: Some(LAION_MIN_FACE_SIDE_PX),
                require_single_face: true,
                require_real_human: true,
                reject_text_overlay: true,
            },
            SourceDataset::Other => Self {
                name,
                min_face_side_px: None,
                require_single_face: true,
                require_real_human: true,
                reject_text_overlay: true,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Ok,
    NoFace,
    MultipleFaces,
    LowResolution,
    NotRealHuman,
    TextOverlay,
}

impl FilterReason {
    pub const ALL: [FilterReason; 6] = [
        FilterReason::Ok,
        FilterReason::NoFace,
        FilterReason::MultipleFaces,
        FilterReason::LowResolution,
        FilterReason::NotRealHuman,
        FilterReason::TextOverlay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::Ok => "ok",
            FilterReason::NoFace => "no_face",
            FilterReason::MultipleFaces => "multiple_faces",
            FilterReason::LowResolution => "low_resolution",
            FilterReason::NotRealHuman => "not_real_human",
            FilterReason::TextOverlay => "text_overlay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub accepted: bool,
    pub reason: FilterReason,
}

impl FilterVerdict {
    pub fn from_reason(reason: FilterReason) -> Self {
        Self {
            accepted: reason == FilterReason::Ok,
            reason,
        }
    }
}

/// Applies face count, resolution, real-human and text-overlay rules in that
/// order; the first failing rule determines the reason.
pub fn check_image(record: &AttributeRecord, profile: &DatasetProfile) -> FilterVerdict {
    let det = &record.detection;
    if det.face_count == 0 {
        return FilterVerdict::from_reason(FilterReason::NoFace);
    }
    if profile.require_single_face && det.face_count > 1 {
        return FilterVerdict::from_reason(FilterReason::MultipleFaces);
    }
    if let (Some(min_side), Some(bbox)) = (profile.min_face_side_px, det.bbox) {
        if bbox.width().min(bbox.height()) < f64::from(min_side) {
            return FilterVerdict::from_reason(FilterReason::LowResolution);
        }
    }
    if profile.require_real_human && !record.clip.is_real_human {
        return FilterVerdict::from_reason(FilterReason::NotRealHuman);
    }
    if profile.reject_text_overlay && record.clip.has_text_overlay {
        return FilterVerdict::from_reason(FilterReason::TextOverlay);
    }
    FilterVerdict::from_reason(FilterReason::Ok)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate box ({x0}, {y0}, {x1}, {y1})")]
    DegenerateBox { x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error("crop margin {0} must be >= 1")]
    InvalidMargin(f64),
    #[error("image has zero area")]
    EmptyImage,
    #[error("alignment needs a non-degenerate landmark set")]
    DegenerateLandmarks,
}

/// Integer pixel crop window, `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl CropRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        f64::from(self.x0) <= x && x <= f64::from(self.x1) && f64::from(self.y0) <= y && y <= f64::from(self.y1)
    }
}

/// Square crop around a detection box.
///
/// The side is `round(margin * max(w, h))`, clamped to the shorter image
/// dimension. The window is centered on the box center and then shifted
/// (never shrunk) to lie inside the image.
pub fn compute_crop(
    bbox: &BoundingBox,
    image_size: ImageSize,
    margin: f64,
) -> Result<CropRect, GeometryError> {
    if !(margin.is_finite() && margin >= 1.0) {
        return Err(GeometryError::InvalidMargin(margin));
    }
    let (w, h) = (bbox.width(), bbox.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(GeometryError::DegenerateBox {
            x0: bbox.x0,
            y0: bbox.y0,
            x1: bbox.x1,
            y1: bbox.y1,
        });
    }
    let limit = image_size.width.min(image_size.height);
    if limit == 0 {
        return Err(GeometryError::EmptyImage);
    }

    let side = ((margin * w.max(h)).round() as u32).clamp(1, limit);
    let (cx, cy) = bbox.center();
    let half = f64::from(side) / 2.0;
    let place = |center: f64, extent: u32| -> u32 {
        let start = (center - half).round().max(0.0) as u32;
        start.min(extent - side)
    };
    let x0 = place(cx, image_size.width);
    let y0 = place(cy, image_size.height);
    Ok(CropRect {
        x0,
        y0,
        x1: x0 + side,
        y1: y0 + side,
    })
}

/// Five-point alignment template in output-pixel coordinates, same order as
/// [`Landmarks::points`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentTemplate {
    pub size: u32,
    pub points: [Point; 5],
}

impl Default for AlignmentTemplate {
    /// The widely used 112x112 five-point face template.
    fn default() -> Self {
        Self {
            size: 112,
            points: [
                [38.2946, 51.6963],
                [73.5318, 51.5014],
                [56.0252, 71.7366],
                [41.5493, 92.3655],
                [70.7299, 92.2041],
            ],
        }
    }
}

/// `p' = [[a, -b], [b, a]] p + [tx, ty]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub fn apply(&self, [x, y]: Point) -> Point {
        [
            self.a * x - self.b * y + self.tx,
            self.b * x + self.a * y + self.ty,
        ]
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }
}

/// Least-squares similarity transform (rotation, uniform scale,
/// translation; no reflection) mapping detected landmarks onto a template.
pub fn estimate_alignment(
    landmarks: &Landmarks,
    template: &AlignmentTemplate,
) -> Result<SimilarityTransform, GeometryError> {
    let src = landmarks.points();
    let dst = template.points;
    let n = src.len() as f64;
    let mean = |pts: &[Point; 5]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(ax, ay), p| (ax + p[0], ay + p[1]));
        (sx / n, sy / n)
    };
    let (msx, msy) = mean(&src);
    let (mdx, mdy) = mean(&dst);

    let (mut var, mut dot, mut cross) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst.iter()) {
        let (sx, sy) = (s[0] - msx, s[1] - msy);
        let (dx, dy) = (d[0] - mdx, d[1] - mdy);
        var += sx * sx + sy * sy;
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
    }
    if var <= f64::EPSILON {
        return Err(GeometryError::DegenerateLandmarks);
    }
    let a = dot / var;
    let b = cross / var;
    Ok(SimilarityTransform {
        a,
        b,
        tx: mdx - (a * msx - b * msy),
        ty: mdy - (b * msx + a * msy),
    })
}
