//! Domain vocabulary shared by every pipeline stage.
//!
//! The emotion and social-interaction taxonomies follow the Hall–Van de Castle
//! (HVDC) coding scheme. Emotion is stored at six-way granularity (happiness is
//! split into a calm and an excited subtype) and the classic five-way HVDC view
//! is derived from it with [`collapse_emotion`].

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds since the Unix epoch.
pub type Timestamp = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unknown emotion label {0:?}")]
    UnknownEmotion(String),
    #[error("unknown social class {0:?}")]
    UnknownSocialClass(String),
    #[error("cannot compare {0} with {1}: different social groups")]
    CrossGroupComparison(SocialClass, SocialClass),
    #[error("utterance text is empty")]
    EmptyText,
    #[error("valence/arousal component {0} outside [-1, 1] or not finite")]
    OutOfRange(f64),
}

/// One whispering interaction: a short transcript fragment (usually one or two
/// sentences) and its position in the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub session_id: String,
    pub seq: u64,
    pub text: String,
    pub received_at: Timestamp,
}

impl Utterance {
    /// Builds an utterance, trimming the text and rejecting whitespace-only input.
    pub fn new(
        session_id: impl Into<String>,
        seq: u64,
        text: &str,
        received_at: Timestamp,
    ) -> Result<Self, ModelError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ModelError::EmptyText);
        }
        Ok(Self {
            session_id: session_id.into(),
            seq,
            text: text.to_owned(),
            received_at,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Character,
    Object,
}

/// A single visualizable character or object, used verbatim as a generation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DreamEntity {
    pub label: String,
    pub kind: EntityKind,
    pub source_seq: u64,
}

/// Six-way emotion label. `HaPeaceful` and `HaExcited` are the two happiness
/// subtypes needed by the color mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EmotionLabel {
    #[serde(rename = "AN")]
    Anger,
    #[serde(rename = "AP")]
    Apprehension,
    #[serde(rename = "SD")]
    Sadness,
    #[serde(rename = "CO")]
    Confusion,
    #[serde(rename = "HA_PEACEFUL")]
    HaPeaceful,
    #[serde(rename = "HA_EXCITED")]
    HaExcited,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 6] = [
        EmotionLabel::Anger,
        EmotionLabel::Apprehension,
        EmotionLabel::Sadness,
        EmotionLabel::Confusion,
        EmotionLabel::HaPeaceful,
        EmotionLabel::HaExcited,
    ];

    pub fn code(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "AN",
            EmotionLabel::Apprehension => "AP",
            EmotionLabel::Sadness => "SD",
            EmotionLabel::Confusion => "CO",
            EmotionLabel::HaPeaceful => "HA_PEACEFUL",
            EmotionLabel::HaExcited => "HA_EXCITED",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for EmotionLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmotionLabel::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| ModelError::UnknownEmotion(s.to_owned()))
    }
}

/// The five classic HVDC emotion classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HvdcEmotionClass {
    AN,
    AP,
    SD,
    CO,
    HA,
}

/// Maps the internal six-way label onto the five HVDC classes.
pub fn collapse_emotion(label: EmotionLabel) -> HvdcEmotionClass {
    match label {
        EmotionLabel::Anger => HvdcEmotionClass::AN,
        EmotionLabel::Apprehension => HvdcEmotionClass::AP,
        EmotionLabel::Sadness => HvdcEmotionClass::SD,
        EmotionLabel::Confusion => HvdcEmotionClass::CO,
        EmotionLabel::HaPeaceful | EmotionLabel::HaExcited => HvdcEmotionClass::HA,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SocialGroup {
    Aggression,
    Friendliness,
    Sexual,
}

impl SocialGroup {
    pub const ALL: [SocialGroup; 3] = [
        SocialGroup::Aggression,
        SocialGroup::Friendliness,
        SocialGroup::Sexual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SocialGroup::Aggression => "Aggression",
            SocialGroup::Friendliness => "Friendliness",
            SocialGroup::Sexual => "Sexual",
        }
    }

    /// Number of ordinal levels in the group.
    pub fn levels(self) -> u8 {
        match self {
            SocialGroup::Aggression => 8,
            SocialGroup::Friendliness => 7,
            SocialGroup::Sexual => 5,
        }
    }

    fn prefix(self) -> char {
        match self {
            SocialGroup::Aggression => 'A',
            SocialGroup::Friendliness => 'F',
            SocialGroup::Sexual => 'S',
        }
    }
}

impl fmt::Display for SocialGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of [`social_group`]; `None` is a real group value, not an absence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SocialGroupOrNone {
    Group(SocialGroup),
    None,
}

/// One of the twenty HVDC social-interaction subclasses, or `None` when no
/// interaction clears the classifier threshold.
///
/// Deliberately not `PartialOrd`: levels are only comparable inside a group,
/// see [`SocialClass::compare_level`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SocialClass {
    Interaction { group: SocialGroup, level: u8 },
    None,
}

impl SocialClass {
    /// All 21 values: A1..A8, F1..F7, S1..S5, NONE.
    pub fn all() -> Vec<SocialClass> {
        let mut out: Vec<SocialClass> = Self::subclasses().collect();
        out.push(SocialClass::None);
        out
    }

    /// The 20 interaction subclasses in canonical order.
    pub fn subclasses() -> impl Iterator<Item = SocialClass> {
        SocialGroup::ALL.into_iter().flat_map(|group| {
            (1..=group.levels()).map(move |level| SocialClass::Interaction { group, level })
        })
    }

    pub fn new(group: SocialGroup, level: u8) -> Option<SocialClass> {
        (1..=group.levels())
            .contains(&level)
            .then_some(SocialClass::Interaction { group, level })
    }

    pub fn group(self) -> Option<SocialGroup> {
        match self {
            SocialClass::Interaction { group, .. } => Some(group),
            SocialClass::None => None,
        }
    }

    pub fn level(self) -> Option<u8> {
        match self {
            SocialClass::Interaction { level, .. } => Some(level),
            SocialClass::None => None,
        }
    }

    /// Orders two subclasses of the same group by level.
    pub fn compare_level(self, other: SocialClass) -> Result<Ordering, ModelError> {
        match (self, other) {
            (
                SocialClass::Interaction { group: g1, level: l1 },
                SocialClass::Interaction { group: g2, level: l2 },
            ) if g1 == g2 => Ok(l1.cmp(&l2)),
            _ => Err(ModelError::CrossGroupComparison(self, other)),
        }
    }

    pub fn code(self) -> String {
        match self {
            SocialClass::Interaction { group, level } => format!("{}{}", group.prefix(), level),
            SocialClass::None => "NONE".to_owned(),
        }
    }
}

impl fmt::Display for SocialClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for SocialClass {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ModelError::UnknownSocialClass(s.to_owned());
        if s == "NONE" {
            return Ok(SocialClass::None);
        }
        let mut chars = s.chars();
        let group = match chars.next() {
            Some('A') => SocialGroup::Aggression,
            Some('F') => SocialGroup::Friendliness,
            Some('S') => SocialGroup::Sexual,
            _ => return Err(unknown()),
        };
        let digits = chars.as_str();
        // Reject "A01", "A+1" and friends; only the canonical spelling is accepted.
        if digits.len() != 1 || !digits.chars().all(|c| c.is_ascii_digit()) {
            return Err(unknown());
        }
        let level: u8 = digits.parse().map_err(|_| unknown())?;
        SocialClass::new(group, level).ok_or_else(unknown)
    }
}

impl Serialize for SocialClass {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for SocialClass {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn social_group(class: SocialClass) -> SocialGroupOrNone {
    match class.group() {
        Some(g) => SocialGroupOrNone::Group(g),
        None => SocialGroupOrNone::None,
    }
}

/// A point in Russell's circumplex: valence (pleasantness) and arousal
/// (activation), both in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValenceArousal {
    pub valence: f64,
    pub arousal: f64,
}

impl ValenceArousal {
    pub fn new(valence: f64, arousal: f64) -> Result<Self, ModelError> {
        for c in [valence, arousal] {
            if !c.is_finite() || !(-1.0..=1.0).contains(&c) {
                return Err(ModelError::OutOfRange(c));
            }
        }
        Ok(Self { valence, arousal })
    }
}
