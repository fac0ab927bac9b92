use std::f64::consts::TAU;

use crate::error::{config_err, Result};
use crate::kv::{parse_value, KvFile};
use crate::numerics::layers::positional_frequency;

/// Channel band `[start, end)` and modulation frequency of one emotion.
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionBand {
    pub start: usize,
    pub end: usize,
    /// Temporal modulation frequency in cycles per frame.
    pub frequency: f64,
    /// Phase in radians at frame 0.
    pub phase: f64,
}

/// Everything that shapes a generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    pub vocab: usize,
    pub speakers: usize,
    pub channels: usize,
    pub noise: f64,
    pub amplitude: f64,
    /// Emotion names; index 0 is the neutral class.
    pub emotions: Vec<String>,
    /// One band per non-neutral emotion (`bands[k - 1]` belongs to emotion `k`).
    pub bands: Vec<EmotionBand>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        // Modulation frequencies coincide with pairs 0, 1, 2, 3 of a 64-wide
        // sinusoidal position table (pairs 0, 4, 8, 12 of a 256-wide one).
        let f = |i| positional_frequency(i, 64) / TAU;
        let band = |start, i| EmotionBand {
            start,
            end: start + 10,
            frequency: f(i),
            phase: 0.0,
        };
        CorpusConfig {
            train: 200,
            val: 20,
            test: 30,
            min_phonemes: 6,
            max_phonemes: 12,
            min_duration: 4,
            max_duration: 16,
            vocab: 20,
            speakers: 4,
            channels: 80,
            noise: 0.01,
            amplitude: 0.3,
            emotions: ["neutral", "happy", "sad", "angry", "surprise"]
                .map(String::from)
                .to_vec(),
            bands: vec![band(8, 0), band(26, 3), band(44, 1), band(62, 2)],
        }
    }
}

impl CorpusConfig {
    pub fn emotion_count(&self) -> usize {
        self.emotions.len()
    }

    pub fn band(&self, emotion: usize) -> Option<&EmotionBand> {
        emotion.checked_sub(1).and_then(|k| self.bands.get(k))
    }

    pub fn emotion_id(&self, name: &str) -> Option<usize> {
        self.emotions.iter().position(|e| e.eq_ignore_ascii_case(name))
    }

    pub fn validate(&self) -> Result<()> {
        if self.emotions.len() < 2 {
            config_err!("need neutral plus at least one emotion");
        }
        if self.bands.len() != self.emotions.len() - 1 {
            config_err!(
                "{} emotional classes but {} bands",
                self.emotions.len() - 1,
                self.bands.len()
            );
        }
        if self.channels < 40 {
            config_err!("at least 40 channels required, got {}", self.channels);
        }
        if self.vocab == 0 || self.speakers == 0 {
            config_err!("vocab and speakers must be positive");
        }
        if self.min_phonemes == 0 || self.min_phonemes > self.max_phonemes {
            config_err!("bad phoneme count range {}..={}", self.min_phonemes, self.max_phonemes);
        }
        if self.min_duration < 1 || self.min_duration > self.max_duration {
            config_err!("bad duration range {}..={}", self.min_duration, self.max_duration);
        }
        if !(0.0..=0.2).contains(&self.noise) || !(0.0..=0.5).contains(&self.amplitude) {
            config_err!("noise or amplitude out of range");
        }
        let mut bands: Vec<_> = self.bands.iter().collect();
        bands.sort_by_key(|b| b.start);
        for b in &bands {
            if b.start >= b.end || b.end > self.channels {
                config_err!("band {}..{} invalid for {} channels", b.start, b.end, self.channels);
            }
            if !(b.frequency > 0.0 && b.frequency < 0.5) {
                config_err!("band frequency {} must lie in (0, 0.5) cycles/frame", b.frequency);
            }
        }
        if bands.windows(2).any(|w| w[0].end > w[1].start) {
            config_err!("emotion bands overlap");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvFile {
        let mut f = KvFile::default();
        f.push("train", self.train);
        f.push("val", self.val);
        f.push("test", self.test);
        f.push("min_phonemes", self.min_phonemes);
        f.push("max_phonemes", self.max_phonemes);
        f.push("min_duration", self.min_duration);
        f.push("max_duration", self.max_duration);
        f.push("vocab", self.vocab);
        f.push("speakers", self.speakers);
        f.push("channels", self.channels);
        f.push("noise", self.noise);
        f.push("amplitude", self.amplitude);
        f.push("emotions", self.emotions.join(","));
        for (name, b) in self.emotions.iter().skip(1).zip(&self.bands) {
            f.push(format!("band.{name}"), format!("{}..{}", b.start, b.end));
            f.push(format!("freq.{name}"), b.frequency);
            f.push(format!("phase.{name}"), b.phase);
        }
        f
    }

    /// Reads overrides on top of the defaults. Unknown keys are rejected.
    pub fn from_kv(f: &KvFile) -> Result<Self> {
        let mut c = CorpusConfig::default();
        if let Some(e) = f.get("emotions") {
            c.emotions = e.split(',').map(|s| s.trim().to_string()).collect();
            if c.emotions.len() != CorpusConfig::default().emotions.len() {
                // band table has to be supplied explicitly for a different class set
                c.bands = vec![
                    EmotionBand {
                        start: 0,
                        end: 0,
                        frequency: 0.0,
                        phase: 0.0
                    };
                    c.emotions.len().saturating_sub(1)
                ];
            }
        }
        for (k, v) in &f.entries {
            match k.as_str() {
                "train" => c.train = parse_value(k, v)?,
                "val" => c.val = parse_value(k, v)?,
                "test" => c.test = parse_value(k, v)?,
                "min_phonemes" => c.min_phonemes = parse_value(k, v)?,
                "max_phonemes" => c.max_phonemes = parse_value(k, v)?,
                "min_duration" => c.min_duration = parse_value(k, v)?,
                "max_duration" => c.max_duration = parse_value(k, v)?,
                "vocab" => c.vocab = parse_value(k, v)?,
                "speakers" => c.speakers = parse_value(k, v)?,
                "channels" => c.channels = parse_value(k, v)?,
                "noise" => c.noise = parse_value(k, v)?,
                "amplitude" => c.amplitude = parse_value(k, v)?,
                "emotions" => {}
                _ => {
                    let Some((kind, name)) = k.split_once('.') else {
                        config_err!("unknown corpus key {k}");
                    };
                    let Some(e) = c.emotion_id(name).filter(|e| *e > 0) else {
                        config_err!("unknown emotion in key {k}");
                    };
                    let band = &mut c.bands[e - 1];
                    match kind {
                        "band" => {
                            let (s, e) = v
                                .split_once("..")
                                .ok_or_else(|| crate::Error::Config(format!("{k}: expected start..end")))?;
                            band.start = parse_value(k, s)?;
                            band.end = parse_value(k, e)?;
                        }
                        "freq" => band.frequency = parse_value(k, v)?,
                        "phase" => band.phase = parse_value(k, v)?,
                        _ => config_err!("unknown corpus key {k}"),
                    }
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}
