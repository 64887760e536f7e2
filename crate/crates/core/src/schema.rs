//! Attribute vocabulary and the per-image [`AttributeRecord`].
//!
//! Records are stored as one JSON object per line. Field names and enum
//! values use the snake_case identifiers defined here; the human-readable
//! labels are what ends up in captions.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Version tag of the vocabulary tables below. Bump on any reorder or rename.
pub const VOCABULARY_VERSION: &str = "1";

/// A closed vocabulary with stable identifiers and human-readable labels.
pub trait Vocabulary: Sized + Copy + 'static {
    /// All members in canonical order.
    const ALL: &'static [Self];

    fn id(self) -> &'static str;
    fn label(self) -> &'static str;

    fn index(self) -> usize;

    /// Looks up a member by identifier or label, ignoring case and
    /// punctuation (`"Middle Eastern"`, `"middle_eastern"` and
    /// `"middle-eastern"` all resolve to the same member).
    fn parse_loose(s: &str) -> Option<Self> {
        let key = normalize_key(s);
        Self::ALL
            .iter()
            .copied()
            .find(|m| normalize_key(m.id()) == key || normalize_key(m.label()) == key)
    }
}

fn normalize_key(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_sep = false;
    for c in s.trim().chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(c.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

macro_rules! vocabulary {
    (
        $(#[$meta:meta])*
        $name:ident, $what:literal {
            $($variant:ident => ($id:literal, $label:literal)),+ $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl Vocabulary for $name {
            const ALL: &'static [Self] = &[$($name::$variant),+];

            fn id(self) -> &'static str {
                match self {
                    $($name::$variant => $id),+
                }
            }

            fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl std::str::FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$name as Vocabulary>::parse_loose(s)
                    .ok_or_else(|| format!("unknown {} `{}`", $what, s))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.id())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(de::Error::custom)
            }
        }
    };
}

vocabulary! {
    /// The 40 binary facial attributes, in canonical order.
    Attribute, "attribute" {
        FiveOClockShadow => ("5_o_clock_shadow", "5 o'clock shadow"),
        ArchedEyebrows => ("arched_eyebrows", "arched eyebrows"),
        Attractive => ("attractive", "attractive"),
        BagsUnderEyes => ("bags_under_eyes", "bags under eyes"),
        Bald => ("bald", "bald"),
        Bangs => ("bangs", "bangs"),
        BigLips => ("big_lips", "big lips"),
        BigNose => ("big_nose", "big nose"),
        BlackHair => ("black_hair", "black hair"),
        BlondHair => ("blond_hair", "blond hair"),
        Blurry => ("blurry", "blurry"),
        BrownHair => ("brown_hair", "brown hair"),
        BushyEyebrows => ("bushy_eyebrows", "bushy eyebrows"),
        Chubby => ("chubby", "chubby"),
        DoubleChin => ("double_chin", "double chin"),
        Eyeglasses => ("eyeglasses", "eyeglasses"),
        Goatee => ("goatee", "goatee"),
        GrayHair => ("gray_hair", "gray hair"),
        HeavyMakeup => ("heavy_makeup", "heavy makeup"),
        HighCheekbones => ("high_cheekbones", "high cheekbones"),
        Male => ("male", "male"),
        MouthSlightlyOpen => ("mouth_slightly_open", "mouth slightly open"),
        Mustache => ("mustache", "mustache"),
        NarrowEyes => ("narrow_eyes", "narrow eyes"),
        NoBeard => ("no_beard", "no beard"),
        OvalFace => ("oval_face", "oval face"),
        PaleSkin => ("pale_skin", "pale skin"),
        PointyNose => ("pointy_nose", "pointy nose"),
        RecedingHairline => ("receding_hairline", "receding hairline"),
        RosyCheeks => ("rosy_cheeks", "rosy cheeks"),
        Sideburns => ("sideburns", "sideburns"),
        Smiling => ("smiling", "smiling"),
        StraightHair => ("straight_hair", "straight hair"),
        WavyHair => ("wavy_hair", "wavy hair"),
        WearingEarrings => ("wearing_earrings", "wearing earrings"),
        WearingHat => ("wearing_hat", "wearing hat"),
        WearingLipstick => ("wearing_lipstick", "wearing lipstick"),
        WearingNecklace => ("wearing_necklace", "wearing necklace"),
        WearingNecktie => ("wearing_necktie", "wearing necktie"),
        Young => ("young", "young"),
    }
}

vocabulary! {
    /// Categorical emotion classes, in canonical (tie-break) order.
    Emotion, "emotion" {
        Anger => ("anger", "anger"),
        Disgust => ("disgust", "disgust"),
        Fear => ("fear", "fear"),
        Happiness => ("happiness", "happiness"),
        Sadness => ("sadness", "sadness"),
        Surprise => ("surprise", "surprise"),
        Neutral => ("neutral", "neutral"),
    }
}

vocabulary! {
    Ethnicity, "ethnicity" {
        Black => ("black", "black"),
        White => ("white", "white"),
        Asian => ("asian", "asian"),
        MiddleEastern => ("middle_eastern", "middle eastern"),
        Indian => ("indian", "indian"),
        Hispanic => ("hispanic", "hispanic"),
    }
}

vocabulary! {
    /// Two classes, matching the demographics model output.
    Gender, "gender" {
        Male => ("male", "male"),
        Female => ("female", "female"),
    }
}

vocabulary! {
    SourceDataset, "source dataset" {
        EasyPortrait => ("easyportrait", "EasyPortrait"),
        Ffhq => ("ffhq", "FFHQ"),
        LaionFace => ("laion_face", "LAION-Face"),
        Other => ("other", "other"),
    }
}

pub const ATTRIBUTE_COUNT: usize = 40;

/// One flag per [`Attribute`], stored in canonical order.
///
/// Serialized as a JSON object keyed by attribute id. Every key must be
/// present exactly once; unknown keys are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AttributeFlags([bool; ATTRIBUTE_COUNT]);

impl Default for AttributeFlags {
    fn default() -> Self {
        Self([false; ATTRIBUTE_COUNT])
    }
}

impl AttributeFlags {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_set<I: IntoIterator<Item = Attribute>>(attrs: I) -> Self {
        let mut flags = Self::none();
        for a in attrs {
            flags.set(a, true);
        }
        flags
    }

    pub fn get(&self, a: Attribute) -> bool {
        self.0[a.index()]
    }

    pub fn set(&mut self, a: Attribute, value: bool) {
        self.0[a.index()] = value;
    }

    /// Set attributes in canonical order.
    pub fn iter_set(&self) -> impl Iterator<Item = Attribute> + '_ {
        Attribute::ALL.iter().copied().filter(|a| self.get(*a))
    }

    pub fn count_set(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

impl Serialize for AttributeFlags {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(ATTRIBUTE_COUNT))?;
        for a in Attribute::ALL {
            map.serialize_entry(a.id(), &self.get(*a))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for AttributeFlags {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct FlagsVisitor;

        impl<'de> Visitor<'de> for FlagsVisitor {
            type Value = AttributeFlags;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping each of the 40 attribute ids to a boolean")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut seen = [false; ATTRIBUTE_COUNT];
                let mut flags = AttributeFlags::none();
                while let Some(key) = map.next_key::<String>()? {
                    let attr: Attribute = key.parse().map_err(de::Error::custom)?;
                    if seen[attr.index()] {
                        return Err(de::Error::custom(format!(
                            "duplicate attribute `{}`",
                            attr.id()
                        )));
                    }
                    seen[attr.index()] = true;
                    flags.set(attr, map.next_value()?);
                }
                if let Some(missing) = Attribute::ALL.iter().find(|a| !seen[a.index()]) {
                    return Err(de::Error::custom(format!(
                        "missing attribute `{}`",
                        missing.id()
                    )));
                }
                Ok(flags)
            }
        }

        deserializer.deserialize_map(FlagsVisitor)
    }
}

/// Axis-aligned rectangle in pixel coordinates, `(x0, y0)` top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }
}

/// Pixel coordinate `[x, y]`.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Landmarks {
    pub left_pupil: Point,
    pub right_pupil: Point,
    pub nose_tip: Point,
    pub mouth_left: Point,
    pub mouth_right: Point,
}

impl Landmarks {
    pub fn points(&self) -> [Point; 5] {
        [
            self.left_pupil,
            self.right_pupil,
            self.nose_tip,
            self.mouth_left,
            self.mouth_right,
        ]
    }
}

/// Detector output. `bbox` and `landmarks` describe the primary face and are
/// required whenever `face_count >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceDetection {
    pub face_count: u32,
    #[serde(rename = "box")]
    pub bbox: Option<BoundingBox>,
    pub landmarks: Option<Landmarks>,
    pub confidence: f64,
}

/// CLIP probe results. The booleans are thresholded from `raw_scores` by the
/// extractor; the thresholds live in the extractor's sidecar config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipVerdict {
    pub is_real_human: bool,
    pub has_text_overlay: bool,
    pub teeth_visible: bool,
    pub tongue_visible: bool,
    pub raw_scores: BTreeMap<String, f64>,
}

/// Independent per-class confidences; not required to sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EmotionScores {
    pub anger: f64,
    pub disgust: f64,
    pub fear: f64,
    pub happiness: f64,
    pub sadness: f64,
    pub surprise: f64,
    pub neutral: f64,
}

impl EmotionScores {
    pub fn get(&self, e: Emotion) -> f64 {
        match e {
            Emotion::Anger => self.anger,
            Emotion::Disgust => self.disgust,
            Emotion::Fear => self.fear,
            Emotion::Happiness => self.happiness,
            Emotion::Sadness => self.sadness,
            Emotion::Surprise => self.surprise,
            Emotion::Neutral => self.neutral,
        }
    }

    pub fn set(&mut self, e: Emotion, v: f64) {
        let slot = match e {
            Emotion::Anger => &mut self.anger,
            Emotion::Disgust => &mut self.disgust,
            Emotion::Fear => &mut self.fear,
            Emotion::Happiness => &mut self.happiness,
            Emotion::Sadness => &mut self.sadness,
            Emotion::Surprise => &mut self.surprise,
            Emotion::Neutral => &mut self.neutral,
        };
        *slot = v;
    }

    pub fn from_pairs<I: IntoIterator<Item = (Emotion, f64)>>(pairs: I) -> Self {
        let mut s = Self::default();
        for (e, v) in pairs {
            s.set(e, v);
        }
        s
    }
}

/// Pixel counts per face-parsing region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParsingStats {
    pub hair_px: u64,
    pub face_skin_px: u64,
    pub left_eye_px: u64,
    pub right_eye_px: u64,
    pub inner_mouth_px: u64,
    pub upper_lip_px: u64,
    pub lower_lip_px: u64,
    pub face_height_px: u64,
    pub image_area_px: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demographics {
    pub age_pred: f64,
    pub gender: Gender,
    pub ethnicity: Ethnicity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

/// Everything feature extraction knows about one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeRecord {
    pub image_id: String,
    pub source_dataset: SourceDataset,
    pub image_size: ImageSize,
    pub detection: FaceDetection,
    pub clip: ClipVerdict,
    pub attributes: AttributeFlags,
    pub emotions: EmotionScores,
    pub parsing: ParsingStats,
    pub demographics: Demographics,
    pub is_blurry: bool,
    pub is_monochrome: bool,
    pub extractor_versions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("schema error at {path}: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl SchemaError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

fn check_unit(path: &str, v: f64) -> Result<(), SchemaError> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(SchemaError::at(path, format!("value {v} outside [0, 1]")))
    }
}

fn check_point(path: &str, p: Point, size: ImageSize) -> Result<(), SchemaError> {
    let [x, y] = p;
    let inside = x.is_finite()
        && y.is_finite()
        && (0.0..=size.width as f64).contains(&x)
        && (0.0..=size.height as f64).contains(&y);
    if inside {
        Ok(())
    } else {
        Err(SchemaError::at(
            path,
            format!(
                "point ({x}, {y}) outside image {}x{}",
                size.width, size.height
            ),
        ))
    }
}

impl AttributeRecord {
    /// Checks every invariant that serde's structural parsing cannot express.
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.image_id.is_empty() {
            return Err(SchemaError::at("image_id", "must be non-empty"));
        }
        let size = self.image_size;
        if size.width == 0 || size.height == 0 {
            return Err(SchemaError::at("image_size", "dimensions must be positive"));
        }

        let det = &self.detection;
        check_unit("detection.confidence", det.confidence)?;
        if det.face_count >= 1 {
            let bbox = det
                .bbox
                .ok_or_else(|| SchemaError::at("detection.box", "required when face_count >= 1"))?;
            let coords = [bbox.x0, bbox.y0, bbox.x1, bbox.y1];
            if coords.iter().any(|c| !c.is_finite()) {
                return Err(SchemaError::at("detection.box", "coordinates must be finite"));
            }
            if !(bbox.x0 < bbox.x1 && bbox.y0 < bbox.y1) {
                return Err(SchemaError::at(
                    "detection.box",
                    "requires x0 < x1 and y0 < y1",
                ));
            }
            check_point("detection.box", [bbox.x0, bbox.y0], size)?;
            check_point("detection.box", [bbox.x1, bbox.y1], size)?;
            let lm = det.landmarks.ok_or_else(|| {
                SchemaError::at("detection.landmarks", "required when face_count >= 1")
            })?;
            let names = ["left_pupil", "right_pupil", "nose_tip", "mouth_left", "mouth_right"];
            for (name, p) in names.iter().zip(lm.points()) {
                check_point(&format!("detection.landmarks.{name}"), p, size)?;
            }
        }

        for (probe, score) in &self.clip.raw_scores {
            check_unit(&format!("clip.raw_scores.{probe}"), *score)?;
        }

        for e in Emotion::ALL {
            check_unit(&format!("emotions.{}", e.id()), self.emotions.get(*e))?;
        }

        let p = &self.parsing;
        if p.face_height_px == 0 {
            return Err(SchemaError::at("parsing.face_height_px", "must be positive"));
        }
        if p.image_area_px == 0 {
            return Err(SchemaError::at("parsing.image_area_px", "must be positive"));
        }
        let regions = [
            ("hair_px", p.hair_px),
            ("face_skin_px", p.face_skin_px),
            ("left_eye_px", p.left_eye_px),
            ("right_eye_px", p.right_eye_px),
            ("inner_mouth_px", p.inner_mouth_px),
            ("upper_lip_px", p.upper_lip_px),
            ("lower_lip_px", p.lower_lip_px),
        ];
        for (name, count) in regions {
            if count > p.image_area_px {
                return Err(SchemaError::at(
                    format!("parsing.{name}"),
                    format!("count {count} exceeds image_area_px {}", p.image_area_px),
                ));
            }
        }

        let age = self.demographics.age_pred;
        if !age.is_finite() || age < 0.0 {
            return Err(SchemaError::at(
                "demographics.age_pred",
                format!("age {age} must be finite and non-negative"),
            ));
        }

        if self.is_blurry != self.attributes.get(Attribute::Blurry) {
            return Err(SchemaError::at(
                "is_blurry",
                "must mirror attributes.blurry",
            ));
        }
        Ok(())
    }
}

/// Parses and validates one serialized record.
pub fn parse_record(text: &str) -> Result<AttributeRecord, SchemaError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let record: AttributeRecord = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        let path = if path == "." { "<root>".to_string() } else { path };
        SchemaError::at(path, err.into_inner().to_string())
    })?;
    de.end()
        .map_err(|e| SchemaError::at("<root>", e.to_string()))?;
    record.validate()?;
    Ok(record)
}

/// Serializes a record to a single JSON line (no trailing newline).
///
/// Key order is fixed by the struct layout and the canonical attribute
/// order, so the output is byte-stable.
pub fn serialize_record(record: &AttributeRecord) -> String {
    serde_json::to_string(record).expect("attribute records always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::minimal_record;

    #[test]
    fn attribute_labels_match_published_list() {
        let labels: Vec<&str> = Attribute::ALL.iter().map(|a| a.label()).collect();
        assert_eq!(
            labels,
            [
                "5 o'clock shadow", "arched eyebrows", "attractive", "bags under eyes", "bald",
                "bangs", "big lips", "big nose", "black hair", "blond hair", "blurry",
                "brown hair", "bushy eyebrows", "chubby", "double chin", "eyeglasses", "goatee",
                "gray hair", "heavy makeup", "high cheekbones", "male", "mouth slightly open",
                "mustache", "narrow eyes", "no beard", "oval face", "pale skin", "pointy nose",
                "receding hairline", "rosy cheeks", "sideburns", "smiling", "straight hair",
                "wavy hair", "wearing earrings", "wearing hat", "wearing lipstick",
                "wearing necklace", "wearing necktie", "young",
            ]
        );
        assert_eq!(Attribute::ALL.len(), ATTRIBUTE_COUNT);
    }

    #[test]
    fn emotion_and_ethnicity_labels_match_published_lists() {
        let emotions: Vec<&str> = Emotion::ALL.iter().map(|e| e.label()).collect();
        assert_eq!(
            emotions,
            ["anger", "disgust", "fear", "happiness", "sadness", "surprise", "neutral"]
        );
        let ethnicities: Vec<&str> = Ethnicity::ALL.iter().map(|e| e.label()).collect();
        assert_eq!(
            ethnicities,
            ["black", "white", "asian", "middle eastern", "indian", "hispanic"]
        );
    }

    #[test]
    fn loose_parsing_canonicalizes() {
        assert_eq!("Middle Eastern".parse::<Ethnicity>(), Ok(Ethnicity::MiddleEastern));
        assert_eq!("5_o_Clock_Shadow".parse::<Attribute>(), Ok(Attribute::FiveOClockShadow));
        assert_eq!("wearing hat".parse::<Attribute>(), Ok(Attribute::WearingHat));
        assert!("martian".parse::<Ethnicity>().is_err());
    }

    #[test]
    fn minimal_record_parses() {
        let text = serialize_record(&minimal_record());
        let parsed = parse_record(&text).unwrap();
        assert_eq!(parsed, minimal_record());
        assert_eq!(parsed.attributes.count_set(), 0);
    }

    #[test]
    fn serialization_is_stable() {
        let r = minimal_record();
        assert_eq!(serialize_record(&r), serialize_record(&r.clone()));
    }

    #[test]
    fn unknown_ethnicity_reports_path() {
        let text = serialize_record(&minimal_record()).replace("\"white\"", "\"martian\"");
        let err = parse_record(&text).unwrap_err();
        assert_eq!(err.path, "demographics.ethnicity");
    }

    #[test]
    fn unknown_attribute_rejected() {
        let text = serialize_record(&minimal_record())
            .replace("\"young\":false", "\"young\":false,\"tall\":true");
        let err = parse_record(&text).unwrap_err();
        assert_eq!(err.path, "attributes");
        assert!(err.message.contains("tall"), "{err}");
    }

    #[test]
    fn missing_attribute_rejected() {
        let text = serialize_record(&minimal_record()).replace(",\"young\":false", "");
        let err = parse_record(&text).unwrap_err();
        assert!(err.message.contains("young"), "{err}");
    }

    #[test]
    fn missing_field_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&serialize_record(&minimal_record())).unwrap();
        v["demographics"].as_object_mut().unwrap().remove("gender");
        let err = parse_record(&v.to_string()).unwrap_err();
        assert_eq!(err.path, "demographics");
        assert!(err.message.contains("gender"));
    }

    #[test]
    fn out_of_range_score_rejected() {
        let mut r = minimal_record();
        r.emotions.happiness = 1.5;
        let err = parse_record(&serialize_record(&r)).unwrap_err();
        assert_eq!(err.path, "emotions.happiness");

        let mut r = minimal_record();
        r.clip.raw_scores.insert("real_human".into(), -0.1);
        let err = parse_record(&serialize_record(&r)).unwrap_err();
        assert_eq!(err.path, "clip.raw_scores.real_human");
    }

    #[test]
    fn degenerate_box_rejected() {
        let mut r = minimal_record();
        r.detection.bbox = Some(BoundingBox::new(100.0, 100.0, 100.0, 200.0));
        assert_eq!(parse_record(&serialize_record(&r)).unwrap_err().path, "detection.box");
    }

    #[test]
    fn landmark_outside_image_rejected() {
        let mut r = minimal_record();
        r.detection.landmarks.as_mut().unwrap().nose_tip = [600.0, 10.0];
        let err = parse_record(&serialize_record(&r)).unwrap_err();
        assert_eq!(err.path, "detection.landmarks.nose_tip");
    }

    #[test]
    fn blurry_flag_must_mirror_attribute() {
        let mut r = minimal_record();
        r.is_blurry = true;
        assert_eq!(parse_record(&serialize_record(&r)).unwrap_err().path, "is_blurry");
        r.attributes.set(Attribute::Blurry, true);
        assert!(parse_record(&serialize_record(&r)).is_ok());
    }

    #[test]
    fn parsing_counts_bounded_by_area() {
        let mut r = minimal_record();
        r.parsing.hair_px = r.parsing.image_area_px + 1;
        assert_eq!(
            parse_record(&serialize_record(&r)).unwrap_err().path,
            "parsing.hair_px"
        );
    }

    #[test]
    fn no_face_record_needs_no_box() {
        let mut r = minimal_record();
        r.detection.face_count = 0;
        r.detection.bbox = None;
        r.detection.landmarks = None;
        assert!(parse_record(&serialize_record(&r)).is_ok());
    }

    #[test]
    fn unicode_image_id_round_trips() {
        let mut r = minimal_record();
        r.image_id = "顔/😀/ß-ø".into();
        assert_eq!(parse_record(&serialize_record(&r)).unwrap(), r);
    }

    #[test]
    fn trailing_garbage_rejected() {
        let text = serialize_record(&minimal_record()) + " x";
        assert!(parse_record(&text).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_random_content(
                bits in proptest::collection::vec(any::<bool>(), ATTRIBUTE_COUNT),
                scores in proptest::collection::vec(0.0f64..=1.0, 7),
                age in 0.0f64..110.0,
                g in 0usize..2,
                e in 0usize..6,
                mono in any::<bool>(),
                id in "[a-z0-9/_.-]{1,24}",
            ) {
                let mut r = minimal_record();
                r.image_id = id;
                let set = Attribute::ALL.iter().zip(&bits).filter(|(_, b)| **b).map(|(a, _)| *a);
                r.attributes = AttributeFlags::from_set(set);
                r.is_blurry = r.attributes.get(Attribute::Blurry);
                r.is_monochrome = mono;
                r.emotions = EmotionScores::from_pairs(Emotion::ALL.iter().copied().zip(scores));
                r.demographics.age_pred = age;
                r.demographics.gender = Gender::ALL[g];
                r.demographics.ethnicity = Ethnicity::ALL[e];
                let text = serialize_record(&r);
                prop_assert_eq!(parse_record(&text).unwrap(), r);
            }

            #[test]
            fn loose_parse_accepts_label_and_id(i in 0usize..ATTRIBUTE_COUNT) {
                let a = Attribute::ALL[i];
                prop_assert_eq!(Attribute::parse_loose(a.id()), Some(a));
                prop_assert_eq!(Attribute::parse_loose(a.label()), Some(a));
                prop_assert_eq!(Attribute::parse_loose(&a.label().to_uppercase()), Some(a));
            }
        }
    }
}
