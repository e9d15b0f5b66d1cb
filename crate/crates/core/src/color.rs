//! Emotion → render color, circumplex position, and idle-motion amplitude.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EmotionLabel, ValenceArousal};

/// |component| at or below this counts as neutral.
pub const NEUTRAL_BAND: f64 = 0.1;
pub const DEFAULT_MOTION_FACTOR: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ColorError {
    #[error("invalid rgb {0:?}, expected #RRGGBB")]
    BadRgb(String),
    #[error("{label}: ({valence}, {arousal}) violates its circumplex quadrant")]
    QuadrantViolation {
        label: EmotionLabel,
        valence: f64,
        arousal: f64,
    },
    #[error("{0} and {1} would share the same rgb")]
    DuplicateRgb(EmotionLabel, EmotionLabel),
    #[error("override file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgb(pub [u8; 3]);

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, g, b] = self.0;
        write!(f, "#{r:02X}{g:02X}{b:02X}")
    }
}

impl FromStr for Rgb {
    type Err = ColorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ColorError::BadRgb(s.to_owned());
        let hex = s.strip_prefix('#').ok_or_else(bad)?;
        if hex.len() != 6 || !hex.is_ascii() {
            return Err(bad());
        }
        let mut out = [0u8; 3];
        for (i, c) in out.iter_mut().enumerate() {
            *c = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        Ok(Rgb(out))
    }
}

impl Serialize for Rgb {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rgb {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RenderMode {
    Solid,
    Glow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorSpec {
    pub name: String,
    pub rgb: Rgb,
    pub render_mode: RenderMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sign {
    Negative,
    Neutral,
    Positive,
    /// Neutral or positive.
    NonNegative,
}

impl Sign {
    fn admits(self, x: f64) -> bool {
        match self {
            Sign::Negative => x < -NEUTRAL_BAND,
            Sign::Neutral => x.abs() <= NEUTRAL_BAND,
            Sign::Positive => x > NEUTRAL_BAND,
            Sign::NonNegative => x >= 0.0,
        }
    }
}

/// Qualitative (valence, arousal) placement of each label.
fn quadrant(label: EmotionLabel) -> (Sign, Sign) {
    match label {
        EmotionLabel::HaPeaceful => (Sign::Positive, Sign::Negative),
        EmotionLabel::HaExcited => (Sign::Positive, Sign::Positive),
        EmotionLabel::Anger => (Sign::Negative, Sign::Positive),
        EmotionLabel::Apprehension => (Sign::Negative, Sign::Neutral),
        EmotionLabel::Sadness => (Sign::Negative, Sign::Negative),
        EmotionLabel::Confusion => (Sign::Neutral, Sign::NonNegative),
    }
}

pub fn in_quadrant(label: EmotionLabel, va: ValenceArousal) -> bool {
    let (v, a) = quadrant(label);
    v.admits(va.valence) && a.admits(va.arousal)
}

#[derive(Debug, Clone, PartialEq)]
struct Placement {
    color: ColorSpec,
    va: ValenceArousal,
}

/// The full label → color/position table. Always total over [`EmotionLabel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMap {
    table: HashMap<EmotionLabel, Placement>,
    pub motion_factor: f64,
}

fn default_placement(label: EmotionLabel) -> Placement {
    let (name, rgb, mode, v, a) = match label {
        EmotionLabel::HaPeaceful => ("light blue", [0xAD, 0xD8, 0xE6], RenderMode::Solid, 0.8, -0.7),
        EmotionLabel::HaExcited => ("gold", [0xFF, 0xD7, 0x00], RenderMode::Solid, 0.8, 0.8),
        EmotionLabel::Anger => ("dark red", [0x8B, 0x00, 0x00], RenderMode::Solid, -0.7, 0.8),
        EmotionLabel::Apprehension => ("purple", [0x80, 0x00, 0x80], RenderMode::Solid, -0.7, 0.0),
        EmotionLabel::Sadness => ("dark blue", [0x00, 0x00, 0x8B], RenderMode::Solid, -0.7, -0.7),
        EmotionLabel::Confusion => ("white", [0xFF, 0xFF, 0xFF], RenderMode::Glow, 0.0, 0.3),
    };
    Placement {
        color: ColorSpec {
            name: name.into(),
            rgb: Rgb(rgb),
            render_mode: mode,
        },
        va: ValenceArousal {
            valence: v,
            arousal: a,
        },
    }
}

impl Default for ColorMap {
    fn default() -> Self {
        Self {
            table: EmotionLabel::ALL
                .into_iter()
                .map(|l| (l, default_placement(l)))
                .collect(),
            motion_factor: DEFAULT_MOTION_FACTOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorOverride {
    pub rgb: Rgb,
    pub valence: f64,
    pub arousal: f64,
}

impl ColorMap {
    pub fn emotion_to_color(&self, label: EmotionLabel) -> ColorSpec {
        self.table[&label].color.clone()
    }

    pub fn emotion_to_va(&self, label: EmotionLabel) -> ValenceArousal {
        self.table[&label].va
    }

    /// Idle-motion amplitude, linear in |arousal|.
    pub fn motion_amplitude(&self, label: EmotionLabel) -> f64 {
        self.motion_factor * self.emotion_to_va(label).arousal.abs()
    }

    /// Applies overrides, rejecting any that leave a label outside its
    /// quadrant or make two labels share an rgb. On error `self` is unchanged.
    pub fn with_overrides(
        &self,
        overrides: &BTreeMap<EmotionLabel, ColorOverride>,
    ) -> Result<ColorMap, ColorError> {
        let mut next = self.clone();
        for (label, o) in overrides {
            let va = ValenceArousal::new(o.valence, o.arousal).map_err(|_| {
                ColorError::QuadrantViolation {
                    label: *label,
                    valence: o.valence,
                    arousal: o.arousal,
                }
            })?;
            if !in_quadrant(*label, va) {
                return Err(ColorError::QuadrantViolation {
                    label: *label,
                    valence: o.valence,
                    arousal: o.arousal,
                });
            }
            let p = next.table.get_mut(label).expect("table is total");
            p.color.rgb = o.rgb;
            p.va = va;
        }
        for (i, a) in EmotionLabel::ALL.iter().enumerate() {
            for b in &EmotionLabel::ALL[i + 1..] {
                if next.table[a].color.rgb == next.table[b].color.rgb {
                    return Err(ColorError::DuplicateRgb(*a, *b));
                }
            }
        }
        Ok(next)
    }

    pub fn parse_overrides(json: &str) -> Result<BTreeMap<EmotionLabel, ColorOverride>, ColorError> {
        let raw: BTreeMap<String, ColorOverride> =
            serde_json::from_str(json).map_err(|e| ColorError::Parse(e.to_string()))?;
        raw.into_iter()
            .map(|(k, v)| {
                let label = k.parse().map_err(|_| ColorError::Parse(format!("unknown label {k:?}")))?;
                Ok((label, v))
            })
            .collect()
    }

    pub fn load_overrides(&self, path: &Path) -> Result<ColorMap, ColorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ColorError::Parse(format!("{}: {e}", path.display())))?;
        self.with_overrides(&Self::parse_overrides(&text)?)
    }
}

pub fn emotion_to_color(label: EmotionLabel) -> ColorSpec {
    default_placement(label).color
}

pub fn emotion_to_va(label: EmotionLabel) -> ValenceArousal {
    default_placement(label).va
}
