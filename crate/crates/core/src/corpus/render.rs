//! Deterministic spectrogram rendering.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{CorpusConfig, MelSpectrogram, PhonemeSequence};
use crate::error::{config_err, Result};
use crate::numerics::Segments;

const FLOOR: f64 = 0.4;
const ENVELOPE_GAIN: f64 = 0.2;
const SECOND_BUMP: f64 = 0.6;
const MAX_TILT: f64 = 0.12;

/// Two Gaussian bumps along the channel axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpSpec {
    pub center: usize,
    pub width: f64,
    pub second_center: usize,
    pub second_width: f64,
}

impl BumpSpec {
    pub fn for_phoneme(p: usize, channels: usize) -> Self {
        let center = 4 + (29 * p) % (channels - 8);
        let offset = 14 + (11 * p) % 20;
        let second_center = if center + offset < channels - 2 {
            center + offset
        } else {
            center - offset
        };
        BumpSpec {
            center,
            width: (2 + p % 3) as f64,
            second_center,
            second_width: (3 + p % 2) as f64,
        }
    }
}

/// Noise-free spectral envelope of phoneme `p` before speaker tilt.
pub fn phoneme_envelope(p: usize, channels: usize) -> Vec<f64> {
    let b = BumpSpec::for_phoneme(p, channels);
    let bump = |c: usize, mu: usize, s: f64| {
        let d = c as f64 - mu as f64;
        (-d * d / (2.0 * s * s)).exp()
    };
    (0..channels)
        .map(|c| {
            FLOOR
                + ENVELOPE_GAIN
                    * (bump(c, b.center, b.width) + SECOND_BUMP * bump(c, b.second_center, b.second_width))
        })
        .collect()
}

/// Slope of the linear channel ramp added for `speaker`.
pub fn speaker_slope(speaker: usize, speakers: usize) -> f64 {
    if speakers < 2 {
        return 0.0;
    }
    MAX_TILT * (speaker as f64 / (speakers - 1) as f64 - 0.5)
}

fn tilt(speaker: usize, speakers: usize, channels: usize) -> Vec<f64> {
    let s = speaker_slope(speaker, speakers);
    (0..channels)
        .map(|c| s * (c as f64 / (channels - 1) as f64 - 0.5))
        .collect()
}

/// Renders the emotion-free spectrogram of `phonemes` spoken by `speaker`.
pub fn render_neutral(
    cfg: &CorpusConfig,
    phonemes: &PhonemeSequence,
    speaker: usize,
    seed: u64,
) -> Result<MelSpectrogram> {
    if let Some(&p) = phonemes.ids().iter().find(|&&p| p >= cfg.vocab) {
        config_err!("phoneme id {p} out of range for vocabulary {}", cfg.vocab);
    }
    if speaker >= cfg.speakers {
        config_err!("speaker {speaker} out of range for {} speakers", cfg.speakers);
    }
    let c = cfg.channels;
    let ramp = tilt(speaker, cfg.speakers, c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| crate::Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(phonemes.frames() * c);
    for (&p, &dur) in phonemes.ids().iter().zip(phonemes.durations()) {
        let env = phoneme_envelope(p, c);
        for _ in 0..dur {
            for ch in 0..c {
                let n = if cfg.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push((env[ch] + ramp[ch] + n).clamp(0.0, 1.0) as f32);
            }
        }
    }
    MelSpectrogram::new(phonemes.frames(), c, data)
}

/// Per-frame intensity: linear between phoneme centres, flat beyond the
/// first and last centre.
pub fn frame_intensity(boundaries: &Segments, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != boundaries.len() {
        config_err!("{} intensities for {} phonemes", alpha.len(), boundaries.len());
    }
    let centres: Vec<f64> = boundaries
        .iter()
        .map(|(s, e)| (s + e - 1) as f64 / 2.0)
        .collect();
    let mut out = Vec::with_capacity(boundaries.total());
    let mut seg = 0;
    for n in 0..boundaries.total() {
        let x = n as f64;
        while seg + 1 < centres.len() && centres[seg + 1] <= x {
            seg += 1;
        }
        let a = if x <= centres[0] {
            alpha[0]
        } else if seg + 1 >= centres.len() {
            alpha[alpha.len() - 1]
        } else {
            let t = (x - centres[seg]) / (centres[seg + 1] - centres[seg]);
            alpha[seg] + t * (alpha[seg + 1] - alpha[seg])
        };
        out.push(a);
    }
    Ok(out)
}

fn modulation(cfg: &CorpusConfig, emotion: usize, frame: usize) -> Result<f64> {
    let Some(b) = cfg.band(emotion) else {
        config_err!("emotion id {emotion} has no band");
    };
    Ok(cfg.amplitude * (TAU * b.frequency * frame as f64 + b.phase).sin())
}

/// Adds one emotion's modulation, scaled per phoneme by `intensity`.
pub fn apply_emotion(
    cfg: &CorpusConfig,
    mel: &MelSpectrogram,
    emotion: usize,
    intensity: &[f64],
    boundaries: &Segments,
) -> Result<MelSpectrogram> {
    apply_emotions(cfg, mel, &[(emotion, intensity)], boundaries)
}

/// Adds several emotions' modulations; bands are disjoint so the
/// contributions superpose.
pub fn apply_emotions(
    cfg: &CorpusConfig,
    mel: &MelSpectrogram,
    components: &[(usize, &[f64])],
    boundaries: &Segments,
) -> Result<MelSpectrogram> {
    if boundaries.total() != mel.frames() {
        config_err!("boundaries cover {} frames, mel has {}", boundaries.total(), mel.frames());
    }
    if mel.channels() != cfg.channels {
        config_err!("mel has {} channels, corpus {}", mel.channels(), cfg.channels);
    }
    let c = cfg.channels;
    let mut acc: Vec<f64> = mel.data().iter().map(|&x| x as f64).collect();
    for &(emotion, intensity) in components {
        if emotion == 0 {
            config_err!("emotion modulation requires an emotional class");
        }
        if intensity.iter().any(|a| !(0.0..=1.0).contains(a)) {
            config_err!("intensities must lie in [0, 1]");
        }
        let band = cfg
            .band(emotion)
            .ok_or_else(|| crate::Error::Config(format!("unknown emotion id {emotion}")))?
            .clone();
        let alpha = frame_intensity(boundaries, intensity)?;
        for (n, a) in alpha.iter().enumerate() {
            let m = a * modulation(cfg, emotion, n)?;
            for x in &mut acc[n * c + band.start..n * c + band.end] {
                *x += m;
            }
        }
    }
    let data = acc.into_iter().map(|x| x.clamp(0.0, 1.0) as f32).collect();
    MelSpectrogram::new(mel.frames(), c, data)
}

/// Mean over the band's channels of the temporal variance across frames
/// `[start, end)`.
pub fn band_energy(mel: &MelSpectrogram, band: (usize, usize), frames: (usize, usize)) -> f64 {
    let (b0, b1) = band;
    let (s, e) = frames;
    let n = (e - s) as f64;
    let mut total = 0.0;
    for ch in b0..b1 {
        let col = (s..e).map(|t| mel.frame(t)[ch] as f64);
        let mean = col.clone().sum::<f64>() / n;
        total += col.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    }
    total / (b1 - b0) as f64
}

/// Band energy of the noise-free, unclamped full-intensity modulation of
/// `emotion` on frames `[start, end)`.
pub fn reference_band_energy(cfg: &CorpusConfig, emotion: usize, frames: (usize, usize)) -> Result<f64> {
    let (s, e) = frames;
    let vals = (s..e).map(|t| modulation(cfg, emotion, t)).collect::<Result<Vec<_>>>()?;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    Ok(vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}
