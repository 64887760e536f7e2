//! Caption-ready descriptors computed from raw extraction outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::schema::{Emotion, EmotionScores, ParsingStats, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HairLength {
    Bald,
    Short,
    Medium,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EyeState {
    Open,
    Narrow,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MouthState {
    Closed,
    SlightlyOpen,
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedAttributes {
    /// One or two emotions, strongest first.
    pub emotions_selected: Vec<Emotion>,
    pub hair_length: HairLength,
    pub eye_state: EyeState,
    pub mouth_state: MouthState,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeriveError {
    #[error("face parsing found no face skin pixels")]
    NoFaceSkin,
}

/// Ratio cut points. Each list is strictly ascending; a ratio below the
/// i-th cut maps to the i-th category, anything at or above the last cut
/// maps to the final category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParsingThresholds {
    /// hair / face skin: bald, short, medium | long
    pub hair: [f64; 3],
    /// (left + right eye) / face skin: closed, narrow | open
    pub eyes: [f64; 2],
    /// inner mouth / face skin: closed, slightly open | open
    pub mouth: [f64; 2],
}

impl Default for ParsingThresholds {
    fn default() -> Self {
        Self {
            hair: [0.02, 0.35, 0.9],
            eyes: [0.002, 0.01],
            mouth: [0.001, 0.02],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeBand {
    pub label: String,
    /// Inclusive lower bound in years.
    pub from: f64,
}

/// Age bands ordered by lower bound; the first starts at zero and the last
/// is open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgeCategories(pub Vec<AgeBand>);

impl Default for AgeCategories {
    fn default() -> Self {
        let bands = [
            ("baby", 0.0),
            ("toddler", 1.0),
            ("preschooler", 3.0),
            ("child", 5.0),
            ("teenager", 13.0),
            ("young adult", 20.0),
            ("adult", 30.0),
            ("middle-aged adult", 45.0),
            ("senior adult", 60.0),
            ("elderly", 75.0),
        ];
        Self(
            bands
                .iter()
                .map(|(label, from)| AgeBand {
                    label: (*label).to_string(),
                    from: *from,
                })
                .collect(),
        )
    }
}

impl AgeCategories {
    pub fn validate(&self) -> Result<(), String> {
        let first = self.0.first().ok_or("at least one age band is required")?;
        if first.from != 0.0 {
            return Err(format!("first age band must start at 0, got {}", first.from));
        }
        for pair in self.0.windows(2) {
            if pair[1].from.partial_cmp(&pair[0].from) != Some(std::cmp::Ordering::Greater) {
                return Err(format!(
                    "age band `{}` must start after `{}`",
                    pair[1].label, pair[0].label
                ));
            }
        }
        if let Some(band) = self.0.iter().find(|b| b.label.trim().is_empty()) {
            return Err(format!("age band starting at {} has an empty label", band.from));
        }
        Ok(())
    }

    pub fn label_for(&self, age: f64) -> &str {
        self.0
            .iter()
            .rev()
            .find(|b| age >= b.from)
            .or(self.0.first())
            .map(|b| b.label.as_str())
            .expect("age bands are validated non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeriveConfig {
    /// Minimum top-1 minus top-2 emotion score for a single-emotion reading.
    pub emotion_margin: f64,
    pub parsing: ParsingThresholds,
    pub age_categories: AgeCategories,
}

impl Default for DeriveConfig {
    fn default() -> Self {
        Self {
            emotion_margin: 0.15,
            parsing: ParsingThresholds::default(),
            age_categories: AgeCategories::default(),
        }
    }
}

fn ascending(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite() && *x >= 0.0) && xs.windows(2).all(|w| w[0] < w[1])
}

impl DeriveConfig {
    /// Returns `(field, message)` on the first invalid entry.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if !(self.emotion_margin.is_finite() && (0.0..=1.0).contains(&self.emotion_margin)) {
            return Err(("emotion_margin".into(), "must lie in [0, 1]".into()));
        }
        let p = &self.parsing;
        for (name, xs) in [("hair", &p.hair[..]), ("eyes", &p.eyes[..]), ("mouth", &p.mouth[..])] {
            if !ascending(xs) {
                return Err((
                    format!("parsing.{name}"),
                    "thresholds must be non-negative and strictly ascending".into(),
                ));
            }
        }
        self.age_categories
            .validate()
            .map_err(|m| ("age_categories".to_string(), m))
    }
}

/// Strongest emotion, or the top two when the lead is under `margin`.
///
/// Scores are compared raw. Ties are broken by canonical emotion order.
pub fn dominant_emotions(scores: &EmotionScores, margin: f64) -> Vec<Emotion> {
    let mut ranked: Vec<(Emotion, f64)> = Emotion::ALL.iter().map(|e| (*e, scores.get(*e))).collect();
    // Stable sort keeps enumeration order among equal scores.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (top1, s1) = ranked[0];
    let (top2, s2) = ranked[1];
    if s1 - s2 >= margin {
        vec![top1]
    } else {
        vec![top1, top2]
    }
}

fn bucket(ratio: f64, cuts: &[f64]) -> usize {
    cuts.iter().position(|c| ratio < *c).unwrap_or(cuts.len())
}

pub fn derive_parsing_attributes(
    stats: &ParsingStats,
    thresholds: &ParsingThresholds,
) -> Result<(HairLength, EyeState, MouthState), DeriveError> {
    if stats.face_skin_px == 0 {
        return Err(DeriveError::NoFaceSkin);
    }
    let skin = stats.face_skin_px as f64;
    let hair_ratio = stats.hair_px as f64 / skin;
    let eye_ratio = (stats.left_eye_px + stats.right_eye_px) as f64 / skin;
    let mouth_ratio = stats.inner_mouth_px as f64 / skin;

    let hair = match bucket(hair_ratio, &thresholds.hair) {
        0 => HairLength::Bald,
        1 => HairLength::Short,
        2 => HairLength::Medium,
        _ => HairLength::Long,
    };
    let eyes = match bucket(eye_ratio, &thresholds.eyes) {
        0 => EyeState::Closed,
        1 => EyeState::Narrow,
        _ => EyeState::Open,
    };
    let mouth = match bucket(mouth_ratio, &thresholds.mouth) {
        0 => MouthState::Closed,
        1 => MouthState::SlightlyOpen,
        _ => MouthState::Open,
    };
    Ok((hair, eyes, mouth))
}

pub fn derive_attributes(
    emotions: &EmotionScores,
    parsing: &ParsingStats,
    config: &DeriveConfig,
) -> Result<DerivedAttributes, DeriveError> {
    let (hair_length, eye_state, mouth_state) = derive_parsing_attributes(parsing, &config.parsing)?;
    Ok(DerivedAttributes {
        emotions_selected: dominant_emotions(emotions, config.emotion_margin),
        hair_length,
        eye_state,
        mouth_state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeStrategy {
    Noisy,
    Bracket,
    Category,
}

impl AgeStrategy {
    pub const ALL: [AgeStrategy; 3] = [AgeStrategy::Noisy, AgeStrategy::Bracket, AgeStrategy::Category];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgePhrase {
    pub strategy: AgeStrategy,
    pub text: String,
    pub numeric_basis: f64,
}

pub const AGE_BRACKET_HALF_WIDTH: i64 = 5;

/// Jitter radius for the noisy strategy: `age / 15`, rounded, at least 1.
pub fn age_jitter_radius(age: f64) -> i64 {
    ((age / 15.0).round() as i64).max(1)
}

pub fn render_age(strategy: AgeStrategy, age: f64, categories: &AgeCategories, rng: &mut impl Rng) -> String {
    let center = age.round() as i64;
    match strategy {
        AgeStrategy::Noisy => {
            let r = age_jitter_radius(age);
            let jittered = rng.random_range((center - r).max(0)..=center + r);
            format!("{jittered} year old")
        }
        AgeStrategy::Bracket => {
            let lo = (center - AGE_BRACKET_HALF_WIDTH).max(0);
            let hi = center + AGE_BRACKET_HALF_WIDTH;
            format!("between {lo} and {hi} years old")
        }
        AgeStrategy::Category => categories.label_for(age).to_string(),
    }
}

/// Picks one of the three age renderings with equal probability.
pub fn sample_age_phrase(age: f64, categories: &AgeCategories, rng: &mut impl Rng) -> AgePhrase {
    let strategy = AgeStrategy::ALL[rng.random_range(0..AgeStrategy::ALL.len())];
    AgePhrase {
        strategy,
        text: render_age(strategy, age, categories, rng),
        numeric_basis: age,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const MARGIN: f64 = 0.15;

    fn stats(hair: u64, eyes: u64, mouth: u64) -> ParsingStats {
        ParsingStats {
            hair_px: hair,
            face_skin_px: 10_000,
            left_eye_px: eyes / 2,
            right_eye_px: eyes - eyes / 2,
            inner_mouth_px: mouth,
            upper_lip_px: 0,
            lower_lip_px: 0,
            face_height_px: 200,
            image_area_px: 1_000_000,
        }
    }

    #[test]
    fn clear_winner_is_single() {
        let s = EmotionScores::from_pairs([
            (Emotion::Happiness, 0.8),
            (Emotion::Neutral, 0.1),
            (Emotion::Anger, 0.02),
            (Emotion::Sadness, 0.01),
        ]);
        assert_eq!(dominant_emotions(&s, MARGIN), vec![Emotion::Happiness]);
    }

    #[test]
    fn close_pair_is_reported_together() {
        let s = EmotionScores::from_pairs([
            (Emotion::Happiness, 0.40),
            (Emotion::Surprise, 0.38),
            (Emotion::Neutral, 0.05),
        ]);
        assert_eq!(
            dominant_emotions(&s, MARGIN),
            vec![Emotion::Happiness, Emotion::Surprise]
        );
    }

    #[test]
    fn uniform_scores_break_ties_by_enumeration_order() {
        let s = EmotionScores::from_pairs(Emotion::ALL.iter().map(|e| (*e, 1.0 / 7.0)));
        assert_eq!(dominant_emotions(&s, MARGIN), vec![Emotion::Anger, Emotion::Disgust]);
    }

    #[test]
    fn zero_counts_map_to_lowest_category() {
        let (hair, _, mouth) = derive_parsing_attributes(&stats(0, 300, 0), &ParsingThresholds::default()).unwrap();
        assert_eq!(hair, HairLength::Bald);
        assert_eq!(mouth, MouthState::Closed);
    }

    #[test]
    fn constructed_ratios_hit_expected_buckets() {
        // hair 0.5, eyes 0.02, mouth 0.01
        let got = derive_parsing_attributes(&stats(5_000, 200, 100), &ParsingThresholds::default()).unwrap();
        assert_eq!(got, (HairLength::Medium, EyeState::Open, MouthState::SlightlyOpen));
    }

    #[test]
    fn threshold_edges_are_half_open() {
        let t = ParsingThresholds::default();
        // exactly 0.02 hair -> short, exactly 0.9 -> long
        assert_eq!(derive_parsing_attributes(&stats(200, 100, 0), &t).unwrap().0, HairLength::Short);
        assert_eq!(derive_parsing_attributes(&stats(9_000, 100, 0), &t).unwrap().0, HairLength::Long);
        // eyes 0.002 -> narrow, 0.01 -> open
        assert_eq!(derive_parsing_attributes(&stats(0, 20, 0), &t).unwrap().1, EyeState::Narrow);
        assert_eq!(derive_parsing_attributes(&stats(0, 19, 0), &t).unwrap().1, EyeState::Closed);
        assert_eq!(derive_parsing_attributes(&stats(0, 100, 0), &t).unwrap().1, EyeState::Open);
        // mouth 0.02 -> open
        assert_eq!(derive_parsing_attributes(&stats(0, 0, 200), &t).unwrap().2, MouthState::Open);
    }

    #[test]
    fn missing_skin_is_error() {
        let mut s = stats(10, 10, 10);
        s.face_skin_px = 0;
        assert_eq!(
            derive_parsing_attributes(&s, &ParsingThresholds::default()),
            Err(DeriveError::NoFaceSkin)
        );
    }

    #[test]
    fn age_categories_follow_band_table() {
        let c = AgeCategories::default();
        let cases = [
            (0.0, "baby"), (0.9, "baby"), (1.0, "toddler"), (4.0, "preschooler"),
            (12.9, "child"), (16.0, "teenager"), (19.99, "teenager"), (20.0, "young adult"),
            (30.0, "adult"), (44.0, "adult"), (45.0, "middle-aged adult"),
            (60.0, "senior adult"), (75.0, "elderly"), (120.0, "elderly"),
        ];
        for (age, label) in cases {
            assert_eq!(c.label_for(age), label, "age {age}");
        }
        assert!(c.validate().is_ok());
    }

    #[test]
    fn bracket_text_and_lower_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = AgeCategories::default();
        assert_eq!(render_age(AgeStrategy::Bracket, 40.0, &c, &mut rng), "between 35 and 45 years old");
        assert_eq!(render_age(AgeStrategy::Bracket, 3.0, &c, &mut rng), "between 0 and 8 years old");
    }

    #[test]
    fn noisy_age_at_thirty_within_two_years() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = AgeCategories::default();
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..2_000 {
            let text = render_age(AgeStrategy::Noisy, 30.0, &c, &mut rng);
            let n: i64 = text.strip_suffix(" year old").unwrap().parse().unwrap();
            assert!((28..=32).contains(&n), "{text}");
            seen.insert(n);
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn young_ages_still_jitter_by_one() {
        assert_eq!(age_jitter_radius(5.0), 1);
        assert_eq!(age_jitter_radius(0.0), 1);
        assert_eq!(age_jitter_radius(30.0), 2);
        assert_eq!(age_jitter_radius(60.0), 4);
    }

    #[test]
    fn strategy_frequencies_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let c = AgeCategories::default();
        let n = 30_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let p = sample_age_phrase(30.0, &c, &mut rng);
            counts[AgeStrategy::ALL.iter().position(|s| *s == p.strategy).unwrap()] += 1;
        }
        for k in counts {
            let f = k as f64 / n as f64;
            assert!((f - 1.0 / 3.0).abs() <= 0.01, "{counts:?}");
        }
    }

    #[test]
    fn config_validation_flags_bad_thresholds() {
        let mut cfg = DeriveConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.parsing.hair = [0.5, 0.35, 0.9];
        assert_eq!(cfg.validate().unwrap_err().0, "parsing.hair");
        let mut cfg = DeriveConfig::default();
        cfg.age_categories.0[0].from = 1.0;
        assert_eq!(cfg.validate().unwrap_err().0, "age_categories");
    }

    fn scores_strategy() -> impl Strategy<Value = EmotionScores> {
        proptest::array::uniform7(0.0f64..=1.0).prop_map(|v| {
            EmotionScores::from_pairs(Emotion::ALL.iter().copied().zip(v))
        })
    }

    proptest! {
        #[test]
        fn dominance_is_well_formed(s in scores_strategy(), margin in 0.0f64..1.0) {
            let picked = dominant_emotions(&s, margin);
            prop_assert!(picked.len() == 1 || picked.len() == 2);
            if picked.len() == 2 {
                prop_assert_ne!(picked[0], picked[1]);
            }
            let max = Emotion::ALL.iter().map(|e| s.get(*e)).fold(f64::MIN, f64::max);
            prop_assert_eq!(s.get(picked[0]), max);
        }

        #[test]
        fn dominance_ignores_map_construction_order(v in proptest::array::uniform7(0.0f64..=1.0), seed: u64) {
            use rand::seq::SliceRandom;
            let mut pairs: Vec<(Emotion, f64)> = Emotion::ALL.iter().copied().zip(v).collect();
            let a = EmotionScores::from_pairs(pairs.clone());
            pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = EmotionScores::from_pairs(pairs);
            prop_assert_eq!(dominant_emotions(&a, MARGIN), dominant_emotions(&b, MARGIN));
        }

        #[test]
        fn noisy_age_stays_within_radius(age in 0.0f64..110.0, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let text = render_age(AgeStrategy::Noisy, age, &AgeCategories::default(), &mut rng);
            let n: i64 = text.strip_suffix(" year old").unwrap().parse().unwrap();
            prop_assert!(n >= 0);
            prop_assert!((n - age.round() as i64).abs() <= age_jitter_radius(age));
        }

        #[test]
        fn parsing_tables_are_total(hair in 0u64..50_000, eyes in 0u64..2_000, mouth in 0u64..2_000, skin in 1u64..50_000) {
            let mut s = stats(hair, eyes, mouth);
            s.face_skin_px = skin;
            prop_assert!(derive_parsing_attributes(&s, &ParsingThresholds::default()).is_ok());
        }
    }
}
