//! Shared fixtures for unit tests.

use std::collections::BTreeMap;

use crate::schema::*;

pub fn minimal_record() -> AttributeRecord {
    AttributeRecord {
        image_id: "img-0001".into(),
        source_dataset: SourceDataset::Ffhq,
        image_size: ImageSize {
            width: 512,
            height: 512,
        },
        detection: FaceDetection {
            face_count: 1,
            bbox: Some(BoundingBox::new(100.0, 120.0, 400.0, 440.0)),
            landmarks: Some(Landmarks {
                left_pupil: [200.0, 230.0],
                right_pupil: [300.0, 230.0],
                nose_tip: [250.0, 300.0],
                mouth_left: [210.0, 360.0],
                mouth_right: [290.0, 360.0],
            }),
            confidence: 0.99,
        },
        clip: ClipVerdict {
            is_real_human: true,
            has_text_overlay: false,
            teeth_visible: false,
            tongue_visible: false,
            raw_scores: BTreeMap::new(),
        },
        attributes: AttributeFlags::none(),
        emotions: EmotionScores::from_pairs([(Emotion::Neutral, 1.0)]),
        parsing: ParsingStats {
            hair_px: 20_000,
            face_skin_px: 60_000,
            left_eye_px: 400,
            right_eye_px: 400,
            inner_mouth_px: 0,
            upper_lip_px: 900,
            lower_lip_px: 1_100,
            face_height_px: 320,
            image_area_px: 512 * 512,
        },
        demographics: Demographics {
            age_pred: 30.0,
            gender: Gender::Female,
            ethnicity: Ethnicity::White,
        },
        is_blurry: false,
        is_monochrome: false,
        extractor_versions: BTreeMap::new(),
    }
}
