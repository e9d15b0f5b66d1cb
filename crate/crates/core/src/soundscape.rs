//! Layered soundscape state: a permanent neutral base, one emotion layer that
//! is substituted when the emotion changes, and one social-interaction layer
//! blended on top. Layer changes crossfade linearly.
//!
//! All transitions are pure functions of the previous state and an explicit
//! timestamp, so a session's soundscape is a fold over its events.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{social_group, EmotionLabel, SocialClass, SocialGroup, SocialGroupOrNone, Timestamp};

pub const DEFAULT_CROSSFADE_MS: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerId {
    Base,
    Emotion(EmotionLabel),
    Social(SocialGroup),
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerId::Base => f.write_str("base"),
            LayerId::Emotion(l) => write!(f, "emotion:{}", l.code()),
            LayerId::Social(g) => write!(f, "social:{}", g.name()),
        }
    }
}

impl FromStr for LayerId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "base" {
            return Ok(LayerId::Base);
        }
        if let Some(code) = s.strip_prefix("emotion:") {
            return code.parse().map(LayerId::Emotion).map_err(|e| e.to_string());
        }
        if let Some(name) = s.strip_prefix("social:") {
            return SocialGroup::ALL
                .into_iter()
                .find(|g| g.name() == name)
                .map(LayerId::Social)
                .ok_or_else(|| format!("unknown social layer {name:?}"));
        }
        Err(format!("unknown layer id {s:?}"))
    }
}

impl Serialize for LayerId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A layer ramping up from `start_gain` at `activated_at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveLayer<T> {
    pub value: T,
    pub activated_at: Timestamp,
    pub start_gain: f64,
}

/// A layer ramping down from `start_gain` at `fade_start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingLayer {
    pub layer: LayerId,
    pub fade_start: Timestamp,
    pub start_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundLayerState {
    pub base_gain: f64,
    pub emotion_layer: Option<ActiveLayer<EmotionLabel>>,
    pub social_layer: Option<ActiveLayer<SocialGroup>>,
    pub fading_out: Vec<FadingLayer>,
}

impl Default for SoundLayerState {
    fn default() -> Self {
        Self {
            base_gain: 1.0,
            emotion_layer: None,
            social_layer: None,
            fading_out: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGain {
    pub layer_id: LayerId,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMix {
    pub layers: Vec<LayerGain>,
}

impl LayerMix {
    pub fn gain(&self, id: LayerId) -> f64 {
        self.layers
            .iter()
            .find(|l| l.layer_id == id)
            .map_or(0.0, |l| l.gain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Soundscape {
    pub crossfade_ms: u64,
}

impl Default for Soundscape {
    fn default() -> Self {
        Self {
            crossfade_ms: DEFAULT_CROSSFADE_MS,
        }
    }
}

impl Soundscape {
    pub fn new(crossfade_ms: u64) -> Self {
        Self { crossfade_ms }
    }

    fn ramp(&self, start_gain: f64, since: Timestamp, t: Timestamp, rising: bool) -> f64 {
        if self.crossfade_ms == 0 {
            return if rising { 1.0 } else { 0.0 };
        }
        let delta = t.saturating_sub(since) as f64 / self.crossfade_ms as f64;
        if rising {
            (start_gain + delta).min(1.0)
        } else {
            (start_gain - delta).max(0.0)
        }
    }

    fn active_gain<T>(&self, layer: &ActiveLayer<T>, t: Timestamp) -> f64 {
        self.ramp(layer.start_gain, layer.activated_at, t, true)
    }

    fn fading_gain(&self, layer: &FadingLayer, t: Timestamp) -> f64 {
        self.ramp(layer.start_gain, layer.fade_start, t, false)
    }

    /// Drops finished fades, moves `old` (if any) to fading, and returns the
    /// gain `new_layer` should start its ramp from.
    fn transition(
        &self,
        state: &mut SoundLayerState,
        old: Option<(LayerId, f64)>,
        new_layer: Option<LayerId>,
        at: Timestamp,
    ) -> f64 {
        state.fading_out.retain(|f| self.fading_gain(f, at) > 0.0);
        let mut start = 0.0;
        if let Some(id) = new_layer {
            if let Some(pos) = state.fading_out.iter().position(|f| f.layer == id) {
                start = self.fading_gain(&state.fading_out.remove(pos), at);
            }
        }
        if let Some((id, gain)) = old {
            if gain > 0.0 {
                state.fading_out.push(FadingLayer {
                    layer: id,
                    fade_start: at,
                    start_gain: gain,
                });
            }
        }
        start
    }

    /// Substitutes the emotion layer. Re-applying the active label is a no-op.
    pub fn apply_emotion(
        &self,
        state: &SoundLayerState,
        label: EmotionLabel,
        at: Timestamp,
    ) -> SoundLayerState {
        if state.emotion_layer.is_some_and(|l| l.value == label) {
            return state.clone();
        }
        let mut next = state.clone();
        let old = state
            .emotion_layer
            .map(|l| (LayerId::Emotion(l.value), self.active_gain(&l, at)));
        let start_gain = self.transition(&mut next, old, Some(LayerId::Emotion(label)), at);
        next.emotion_layer = Some(ActiveLayer {
            value: label,
            activated_at: at,
            start_gain,
        });
        next
    }

    /// Blends the social layer for `class`'s group on top, or clears it on NONE.
    /// The emotion layer is never touched.
    pub fn apply_social(
        &self,
        state: &SoundLayerState,
        class: SocialClass,
        at: Timestamp,
    ) -> SoundLayerState {
        let target = match social_group(class) {
            SocialGroupOrNone::Group(g) => Some(g),
            SocialGroupOrNone::None => None,
        };
        if state.social_layer.map(|l| l.value) == target {
            return state.clone();
        }
        let mut next = state.clone();
        let old = state
            .social_layer
            .map(|l| (LayerId::Social(l.value), self.active_gain(&l, at)));
        let start_gain = self.transition(&mut next, old, target.map(LayerId::Social), at);
        next.social_layer = target.map(|g| ActiveLayer {
            value: g,
            activated_at: at,
            start_gain,
        });
        next
    }

    /// Gains at time `t`: base first, then the active emotion and social
    /// layers, then fading layers that have not yet reached zero.
    pub fn render_mix(&self, state: &SoundLayerState, t: Timestamp) -> LayerMix {
        let mut layers = vec![LayerGain {
            layer_id: LayerId::Base,
            gain: state.base_gain,
        }];
        if let Some(l) = &state.emotion_layer {
            layers.push(LayerGain {
                layer_id: LayerId::Emotion(l.value),
                gain: self.active_gain(l, t),
            });
        }
        if let Some(l) = &state.social_layer {
            layers.push(LayerGain {
                layer_id: LayerId::Social(l.value),
                gain: self.active_gain(l, t),
            });
        }
        for f in &state.fading_out {
            let gain = self.fading_gain(f, t);
            if gain > 0.0 {
                layers.push(LayerGain {
                    layer_id: f.layer,
                    gain,
                });
            }
        }
        LayerMix { layers }
    }

    /// Latest timestamp after which the mix no longer changes.
    pub fn settled_at(&self, state: &SoundLayerState) -> Timestamp {
        let cf = self.crossfade_ms;
        let actives = [
            state.emotion_layer.map(|l| l.activated_at),
            state.social_layer.map(|l| l.activated_at),
        ];
        actives
            .into_iter()
            .flatten()
            .chain(state.fading_out.iter().map(|f| f.fade_start))
            .map(|t| t + cf)
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sc(code: &str) -> SocialClass {
        code.parse().unwrap()
    }

    fn ids(mix: &LayerMix) -> Vec<String> {
        mix.layers.iter().map(|l| l.layer_id.to_string()).collect()
    }

    #[test]
    fn emotion_activation_and_substitution() {
        let s = Soundscape::default();
        let st = s.apply_emotion(&SoundLayerState::default(), EmotionLabel::HaExcited, 0);
        assert_eq!(st.emotion_layer.unwrap().value, EmotionLabel::HaExcited);
        let st = s.apply_emotion(&st, EmotionLabel::Sadness, 3000);
        assert_eq!(st.emotion_layer.unwrap().value, EmotionLabel::Sadness);
        assert_eq!(st.fading_out.len(), 1);
        assert_eq!(st.fading_out[0].layer, LayerId::Emotion(EmotionLabel::HaExcited));
        assert_eq!(s.apply_emotion(&st, EmotionLabel::Sadness, 4000), st);
    }

    #[test]
    fn social_blend_clear_and_replace() {
        let s = Soundscape::default();
        let st = s.apply_emotion(&SoundLayerState::default(), EmotionLabel::Sadness, 0);
        let st = s.apply_social(&st, sc("A3"), 100);
        let mix = s.render_mix(&st, 5000);
        assert_eq!(ids(&mix), ["base", "emotion:SD", "social:Aggression"]);

        let cleared = s.apply_social(&st, SocialClass::None, 6000);
        assert!(cleared.social_layer.is_none());
        assert_eq!(cleared.fading_out[0].layer, LayerId::Social(SocialGroup::Aggression));
        assert_eq!(cleared.emotion_layer, st.emotion_layer);

        let replaced = s.apply_social(&st, sc("F5"), 6000);
        assert_eq!(replaced.social_layer.unwrap().value, SocialGroup::Friendliness);
        assert_eq!(replaced.fading_out[0].layer, LayerId::Social(SocialGroup::Aggression));
        // Same group, different level: no change.
        assert_eq!(s.apply_social(&st, sc("A7"), 7000), st);
        assert_eq!(s.apply_social(&SoundLayerState::default(), SocialClass::None, 0), SoundLayerState::default());
    }

    #[test]
    fn ramp_endpoints() {
        let s = Soundscape::default();
        let st = s.apply_emotion(&SoundLayerState::default(), EmotionLabel::Anger, 1000);
        let id = LayerId::Emotion(EmotionLabel::Anger);
        assert_eq!(s.render_mix(&st, 1000 + 2000).gain(id), 1.0);
        assert!((s.render_mix(&st, 1000 + 1000).gain(id) - 0.5).abs() < 1e-9);
        assert_eq!(s.render_mix(&st, 1000).gain(id), 0.0);
        assert_eq!(s.render_mix(&st, 1000).gain(LayerId::Base), 1.0);
    }

    #[test]
    fn zero_crossfade_switches_instantly() {
        let s = Soundscape::new(0);
        let st = s.apply_emotion(&SoundLayerState::default(), EmotionLabel::Anger, 10);
        let st = s.apply_emotion(&st, EmotionLabel::Sadness, 20);
        let mix = s.render_mix(&st, 20);
        assert_eq!(ids(&mix), ["base", "emotion:SD"]);
        assert_eq!(mix.gain(LayerId::Emotion(EmotionLabel::Sadness)), 1.0);
    }

    #[test]
    fn reactivating_a_fading_layer_is_continuous() {
        let s = Soundscape::default();
        let st = s.apply_emotion(&SoundLayerState::default(), EmotionLabel::Anger, 0);
        let st = s.apply_emotion(&st, EmotionLabel::Sadness, 3000);
        let before = s.render_mix(&st, 3500).gain(LayerId::Emotion(EmotionLabel::Anger));
        let st = s.apply_emotion(&st, EmotionLabel::Anger, 3500);
        let after = s.render_mix(&st, 3500).gain(LayerId::Emotion(EmotionLabel::Anger));
        assert!((before - 0.75).abs() < 1e-12);
        assert!((before - after).abs() < 1e-12);
        assert_eq!(st.fading_out.len(), 1);
    }

    #[test]
    fn layer_id_strings() {
        for s in ["base", "emotion:HA_PEACEFUL", "social:Sexual"] {
            assert_eq!(s.parse::<LayerId>().unwrap().to_string(), s);
        }
        assert!("social:Hugs".parse::<LayerId>().is_err());
        assert!("emotion:HA".parse::<LayerId>().is_err());
    }

    #[derive(Debug, Clone)]
    enum Ev {
        Emotion(EmotionLabel),
        Social(SocialClass),
    }

    fn ev_strategy() -> impl Strategy<Value = (u64, Ev)> {
        let all_social = SocialClass::all();
        (
            0u64..3000,
            prop_oneof![
                (0usize..6).prop_map(|i| Ev::Emotion(EmotionLabel::ALL[i])),
                prop::sample::select(all_social).prop_map(Ev::Social),
            ],
        )
    }

    fn fold(s: &Soundscape, evs: &[(u64, Ev)]) -> (SoundLayerState, Vec<u64>) {
        let mut st = SoundLayerState::default();
        let mut t = 0;
        let mut times = Vec::new();
        for (dt, e) in evs {
            t += dt;
            times.push(t);
            st = match e {
                Ev::Emotion(l) => s.apply_emotion(&st, *l, t),
                Ev::Social(c) => s.apply_social(&st, *c, t),
            };
        }
        (st, times)
    }

    proptest! {
        #[test]
        fn settled_mix_follows_composition_rule(evs in prop::collection::vec(ev_strategy(), 0..12)) {
            let s = Soundscape::default();
            let (st, times) = fold(&s, &evs);
            let last_t = times.last().copied().unwrap_or(0);
            let mix = s.render_mix(&st, last_t + s.crossfade_ms);
            let mut want = vec!["base".to_owned()];
            if let Some(Ev::Emotion(l)) = evs.iter().rev().map(|e| &e.1).find(|e| matches!(e, Ev::Emotion(_))) {
                want.push(format!("emotion:{}", l.code()));
            }
            if let Some(Ev::Social(c)) = evs.iter().rev().map(|e| &e.1).find(|e| matches!(e, Ev::Social(_))) {
                if let Some(g) = c.group() {
                    want.push(format!("social:{}", g.name()));
                }
            }
            prop_assert_eq!(ids(&mix), want);
            prop_assert!(mix.layers.iter().all(|l| l.gain == 1.0));
        }

        #[test]
        fn gains_bounded_and_continuous(evs in prop::collection::vec(ev_strategy(), 1..10)) {
            // Continuity is checked across each event boundary, where a jump
            // would appear, and along ramps at 1 ms resolution.
            let s = Soundscape::default();
            let mut st = SoundLayerState::default();
            let mut t = 0;
            let max_step = 1.0 / s.crossfade_ms as f64 + 1e-12;
            for (dt, e) in &evs {
                t += dt;
                let before = s.render_mix(&st, t);
                st = match e {
                    Ev::Emotion(l) => s.apply_emotion(&st, *l, t),
                    Ev::Social(c) => s.apply_social(&st, *c, t),
                };
                let after = s.render_mix(&st, t);
                for id in before.layers.iter().chain(&after.layers).map(|l| l.layer_id) {
                    prop_assert!((before.gain(id) - after.gain(id)).abs() < 1e-12, "jump in {} at {}", id, t);
                }
                for probe in [t, t + 1, t + 999, t + 1000, t + 1999, t + 2000] {
                    let a = s.render_mix(&st, probe);
                    let b = s.render_mix(&st, probe + 1);
                    prop_assert_eq!(a.gain(LayerId::Base), 1.0);
                    for l in a.layers.iter().chain(&b.layers) {
                        prop_assert!((0.0..=1.0).contains(&l.gain));
                        prop_assert!((a.gain(l.layer_id) - b.gain(l.layer_id)).abs() <= max_step);
                    }
                }
            }
        }

        #[test]
        fn reapplying_active_values_is_noop(evs in prop::collection::vec(ev_strategy(), 1..10), extra in 0u64..5000) {
            let s = Soundscape::default();
            let (st, times) = fold(&s, &evs);
            let t = times.last().unwrap() + extra;
            if let Some(l) = st.emotion_layer {
                prop_assert_eq!(s.apply_emotion(&st, l.value, t), st.clone());
            }
            if let Some(l) = st.social_layer {
                let class = SocialClass::new(l.value, 1).unwrap();
                prop_assert_eq!(s.apply_social(&st, class, t), st.clone());
            }
        }
    }
}
