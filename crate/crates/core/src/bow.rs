//! Bag-of-words assembly: every retained feature becomes exactly one
//! phrase, split into primary descriptors (F1: age, gender, ethnicity) and
//! everything else (F2), each list shuffled independently.

use std::sync::OnceLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive::{AgePhrase, DerivedAttributes, EyeState, HairLength, MouthState};
use crate::schema::{Attribute, AttributeRecord, Emotion, Gender, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HairPhrases {
    pub bald: String,
    pub short: String,
    pub medium: String,
    pub long: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EyePhrases {
    pub open: String,
    pub narrow: String,
    pub closed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MouthPhrases {
    pub closed: String,
    pub slightly_open: String,
    pub open: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisibilityPhrases {
    pub teeth: String,
    pub tongue: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenderTerms {
    pub male: Vec<String>,
    pub female: Vec<String>,
}

/// Rendering table for derived values, loaded from `data/phrases.toml`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhraseTable {
    pub version: String,
    pub emotion_prefix: String,
    pub emotion_joiner: String,
    pub hair: HairPhrases,
    pub eyes: EyePhrases,
    pub mouth: MouthPhrases,
    pub visibility: VisibilityPhrases,
    pub gender: GenderTerms,
}

const BUILTIN_PHRASES: &str = include_str!("../data/phrases.toml");

impl PhraseTable {
    pub fn builtin() -> &'static PhraseTable {
        static TABLE: OnceLock<PhraseTable> = OnceLock::new();
        TABLE.get_or_init(|| toml::from_str(BUILTIN_PHRASES).expect("bundled phrase table is valid TOML"))
    }

    pub fn gender_terms(&self, g: Gender) -> &[String] {
        match g {
            Gender::Male => &self.gender.male,
            Gender::Female => &self.gender.female,
        }
    }
}

/// Anything that can be rendered into a bag phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Feature {
    Flag(Attribute),
    Hair(HairLength),
    Eyes(EyeState),
    Mouth(MouthState),
    Emotions(Vec<Emotion>),
    TeethVisible,
    TongueVisible,
}

pub fn attribute_to_phrase(feature: &Feature, table: &PhraseTable) -> String {
    match feature {
        Feature::Flag(a) => a.label().to_string(),
        Feature::Hair(h) => match h {
            HairLength::Bald => &table.hair.bald,
            HairLength::Short => &table.hair.short,
            HairLength::Medium => &table.hair.medium,
            HairLength::Long => &table.hair.long,
        }
        .clone(),
        Feature::Eyes(e) => match e {
            EyeState::Open => &table.eyes.open,
            EyeState::Narrow => &table.eyes.narrow,
            EyeState::Closed => &table.eyes.closed,
        }
        .clone(),
        Feature::Mouth(m) => match m {
            MouthState::Closed => &table.mouth.closed,
            MouthState::SlightlyOpen => &table.mouth.slightly_open,
            MouthState::Open => &table.mouth.open,
        }
        .clone(),
        Feature::Emotions(es) => {
            let names: Vec<&str> = es.iter().map(|e| e.label()).collect();
            format!("{} {}", table.emotion_prefix, names.join(&table.emotion_joiner))
        }
        Feature::TeethVisible => table.visibility.teeth.clone(),
        Feature::TongueVisible => table.visibility.tongue.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BowError {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
}

/// Phrase for an attribute given by id or label.
pub fn phrase_for_name(name: &str) -> Result<String, BowError> {
    name.parse::<Attribute>()
        .map(|a| attribute_to_phrase(&Feature::Flag(a), PhraseTable::builtin()))
        .map_err(|_| BowError::UnknownAttribute(name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImageFlags {
    pub blurry: bool,
    pub monochrome: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagOfWords {
    pub f1: Vec<String>,
    pub f2: Vec<String>,
    pub flags: ImageFlags,
    pub permutation_seed: u64,
}

/// Attributes that never enter F2: blurriness becomes a prompt suffix and
/// gender is carried by the demographics term in F1.
fn routed_elsewhere(a: Attribute) -> bool {
    matches!(a, Attribute::Blurry | Attribute::Male)
}

/// Unshuffled F2 features for a record, in canonical order.
pub fn f2_features(record: &AttributeRecord, derived: &DerivedAttributes) -> Vec<Feature> {
    let mut features: Vec<Feature> = record
        .attributes
        .iter_set()
        .filter(|a| !routed_elsewhere(*a))
        .map(Feature::Flag)
        .collect();
    features.push(Feature::Hair(derived.hair_length));
    features.push(Feature::Eyes(derived.eye_state));
    features.push(Feature::Mouth(derived.mouth_state));
    features.push(Feature::Emotions(derived.emotions_selected.clone()));
    if record.clip.teeth_visible {
        features.push(Feature::TeethVisible);
    }
    if record.clip.tongue_visible {
        features.push(Feature::TongueVisible);
    }
    features
}

/// Builds the shuffled bag for one (already debiased) record.
///
/// All randomness comes from `seed`: the gender wording is drawn first,
/// then F1 and F2 are shuffled.
pub fn assemble_bow(
    record: &AttributeRecord,
    derived: &DerivedAttributes,
    age: &AgePhrase,
    seed: u64,
    table: &PhraseTable,
) -> BagOfWords {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let demo = &record.demographics;
    let gender_term = table
        .gender_terms(demo.gender)
        .choose(&mut rng)
        .cloned()
        .unwrap_or_else(|| demo.gender.label().to_string());

    let mut f1 = vec![age.text.clone(), gender_term, demo.ethnicity.label().to_string()];

    // Derived descriptors can coincide with a flag ("bald", "narrow eyes").
    let mut f2: Vec<String> = Vec::new();
    for phrase in f2_features(record, derived).iter().map(|f| attribute_to_phrase(f, table)) {
        if !f2.contains(&phrase) && !f1.contains(&phrase) {
            f2.push(phrase);
        }
    }

    f1.shuffle(&mut rng);
    f2.shuffle(&mut rng);
    BagOfWords {
        f1,
        f2,
        flags: ImageFlags {
            blurry: record.is_blurry || record.attributes.get(Attribute::Blurry),
            monochrome: record.is_monochrome,
        },
        permutation_seed: seed,
    }
}
