//! Synthetic paired neutral/emotional spectrogram corpus with ground-truth
//! per-phoneme emotion intensity.

pub mod config;
pub mod dataset;
pub mod render;

pub use config::{CorpusConfig, EmotionBand};
pub use dataset::{generate_corpus, load_split, Corpus, IntensityPattern, Split};
pub use render::{
    apply_emotion, apply_emotions, band_energy, frame_intensity, phoneme_envelope,
    reference_band_energy, render_neutral, speaker_slope, BumpSpec,
};

use crate::error::{config_err, Result};
use crate::numerics::{Segments, Tensor};

/// Phoneme ids and their frame durations.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeSequence {
    ids: Vec<usize>,
    durations: Vec<usize>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<usize>, durations: Vec<usize>) -> Result<Self> {
        if ids.len() != durations.len() {
            config_err!("{} phoneme ids but {} durations", ids.len(), durations.len());
        }
        if ids.is_empty() {
            config_err!("empty phoneme sequence");
        }
        if durations.contains(&0) {
            config_err!("phoneme durations must be at least one frame");
        }
        Ok(PhonemeSequence { ids, durations })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn durations(&self) -> &[usize] {
        &self.durations
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.durations.iter().sum()
    }

    pub fn boundaries(&self) -> Segments {
        Segments::from_durations(&self.durations).expect("durations validated on construction")
    }

    /// Leading `n` phonemes.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::new(self.ids[..n].to_vec(), self.durations[..n].to_vec())
    }
}

/// Frame-major `frames × channels` spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram(Tensor<f32>);

impl MelSpectrogram {
    pub fn new(frames: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Ok(MelSpectrogram(Tensor::new(vec![frames, channels], data)?))
    }

    pub fn from_tensor(t: Tensor<f32>) -> Result<Self> {
        if t.shape().len() != 2 {
            config_err!("mel must be 2-D, got shape {:?}", t.shape());
        }
        Ok(MelSpectrogram(t))
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        self.0.row(i)
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.0
    }

    /// Leading `n` frames.
    pub fn prefix(&self, n: usize) -> Self {
        let c = self.channels();
        let n = n.min(self.frames());
        MelSpectrogram::new(n, c, self.data()[..n * c].to_vec()).expect("prefix shape")
    }
}

/// One-hot emotion class label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmotionLabel {
    pub index: usize,
    pub classes: usize,
}

impl EmotionLabel {
    pub fn new(index: usize, classes: usize) -> Result<Self> {
        if index >= classes {
            config_err!("emotion id {index} out of range for {classes} classes");
        }
        Ok(EmotionLabel { index, classes })
    }

    pub fn one_hot<T: crate::numerics::Real>(&self) -> Vec<T> {
        (0..self.classes)
            .map(|k| if k == self.index { T::one() } else { T::zero() })
            .collect()
    }
}

/// Neutral and emotional renderings of the same text by the same speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct UtterancePair {
    pub id: String,
    pub phonemes: PhonemeSequence,
    pub speaker: usize,
    pub emotion: usize,
    pub pattern: IntensityPattern,
    /// Ground-truth per-phoneme intensity of `emotion`; all zeros for neutral.
    pub intensity: Vec<f64>,
    pub mel_neutral: MelSpectrogram,
    pub mel_emotional: MelSpectrogram,
}

impl UtterancePair {
    pub fn check(&self, cfg: &CorpusConfig) -> Result<()> {
        let t = self.phonemes.len();
        let v = self.phonemes.frames();
        if self.intensity.len() != t {
            config_err!("{}: {} intensities for {t} phonemes", self.id, self.intensity.len());
        }
        if self.intensity.iter().any(|a| !(0.0..=1.0).contains(a)) {
            config_err!("{}: intensity outside [0, 1]", self.id);
        }
        if self.speaker >= cfg.speakers || self.emotion >= cfg.emotion_count() {
            config_err!("{}: speaker or emotion id out of range", self.id);
        }
        if self.phonemes.ids().iter().any(|&p| p >= cfg.vocab) {
            config_err!("{}: phoneme id out of range", self.id);
        }
        for mel in [&self.mel_neutral, &self.mel_emotional] {
            if mel.frames() != v || mel.channels() != cfg.channels {
                config_err!(
                    "{}: mel is {}x{}, expected {v}x{}",
                    self.id,
                    mel.frames(),
                    mel.channels(),
                    cfg.channels
                );
            }
            if mel.data().iter().any(|x| !(0.0..=1.0).contains(x)) {
                config_err!("{}: mel value outside [0, 1]", self.id);
            }
        }
        if self.emotion == 0
            && (self.intensity.iter().any(|&a| a != 0.0) || self.mel_emotional != self.mel_neutral)
        {
            config_err!("{}: neutral pair must carry zero intensity and identical mels", self.id);
        }
        Ok(())
    }

    pub fn label(&self, classes: usize) -> EmotionLabel {
        EmotionLabel {
            index: self.emotion,
            classes,
        }
    }
}
