//! Objective metrics: cepstral distortion, band-energy intensity proxy,
//! correlations, and the PCA / tangent-angle analysis of code traces.

pub mod control;
mod pca;
pub mod report;
mod trace;

pub use pca::{pca_2d, Pca2d};
pub use report::{analyze_manifold, evaluate, manifold_csv, report_csv, ManifoldRow, UtteranceReport};
pub use trace::{tangent_period, TangentTrace, PERIOD_EPS};

use std::f64::consts::{LN_10, PI};

use crate::corpus::{reference_band_energy, CorpusConfig, MelSpectrogram};
use crate::error::{config_err, Result};
use crate::numerics::Segments;

/// Number of cepstral coefficients kept, excluding the 0th.
pub const CEPSTRAL_ORDER: usize = 13;
/// Floor applied before the log.
pub const LOG_FLOOR: f64 = 1e-5;
/// Upper clip of the intensity proxy.
pub const PROXY_MAX: f64 = 1.5;

/// Coefficients `1..=k` of the orthonormal DCT-II of the log mel frame.
pub fn cepstrum(frame: &[f32], k: usize) -> Result<Vec<f64>> {
    let c = frame.len();
    if k >= c {
        config_err!("cepstral order {k} must be below the channel count {c}");
    }
    let logs: Vec<f64> = frame.iter().map(|&m| (m as f64).max(LOG_FLOOR).ln()).collect();
    let scale = (2.0 / c as f64).sqrt();
    Ok((1..=k)
        .map(|q| {
            let s: f64 = logs
                .iter()
                .enumerate()
                .map(|(j, x)| x * (PI * q as f64 * (j as f64 + 0.5) / c as f64).cos())
                .sum();
            scale * s
        })
        .collect())
}

/// Per-frame cepstra of a whole spectrogram.
pub fn cepstra(mel: &MelSpectrogram, k: usize) -> Result<Vec<Vec<f64>>> {
    (0..mel.frames()).map(|t| cepstrum(mel.frame(t), k)).collect()
}

/// Mean cepstral distortion in dB over aligned frames.
pub fn mcd(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    mcd_with_order(a, b, CEPSTRAL_ORDER)
}

pub fn mcd_with_order(a: &MelSpectrogram, b: &MelSpectrogram, k: usize) -> Result<f64> {
    if a.frames() != b.frames() || a.channels() != b.channels() {
        config_err!(
            "mcd needs aligned mels, got {}×{} and {}×{}",
            a.frames(),
            a.channels(),
            b.frames(),
            b.channels()
        );
    }
    if a.frames() == 0 {
        config_err!("mcd of empty mels");
    }
    let (ca, cb) = (cepstra(a, k)?, cepstra(b, k)?);
    let total: f64 = ca
        .iter()
        .zip(&cb)
        .map(|(x, y)| cepstral_distance(x, y))
        .sum();
    Ok(total / a.frames() as f64)
}

/// `(10 / ln 10) · √(2 Σ (x − y)²)`.
pub fn cepstral_distance(x: &[f64], y: &[f64]) -> f64 {
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    10.0 / LN_10 * (2.0 * s).sqrt()
}

/// Temporal variance over frames `[start, end)` of the band's channel mean.
pub fn band_mean_energy(mel: &MelSpectrogram, band: (usize, usize), frames: (usize, usize)) -> f64 {
    let (b0, b1) = band;
    let signal: Vec<f64> = (frames.0..frames.1)
        .map(|t| mel.frame(t)[b0..b1].iter().map(|&x| x as f64).sum::<f64>() / (b1 - b0) as f64)
        .collect();
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    signal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Per-phoneme modulation intensity of `emotion` in its band: energy of the
/// band's channel mean minus the expected noise contribution, divided by the
/// energy a full-intensity modulation has on the same frames, as an
/// amplitude ratio clipped to `[0, 1.5]`.
pub fn intensity_proxy(cfg: &CorpusConfig, mel: &MelSpectrogram, boundaries: &Segments, emotion: usize) -> Result<Vec<f64>> {
    let Some(band) = cfg.band(emotion) else {
        config_err!("emotion id {emotion} has no band");
    };
    if boundaries.total() != mel.frames() {
        config_err!("boundaries cover {} frames, mel has {}", boundaries.total(), mel.frames());
    }
    if mel.channels() != cfg.channels {
        config_err!("mel has {} channels, corpus {}", mel.channels(), cfg.channels);
    }
    let width = (band.end - band.start) as f64;
    let sigma2 = cfg.noise * cfg.noise / width;
    boundaries
        .iter()
        .map(|(s, e)| {
            let n = (e - s) as f64;
            let energy = band_mean_energy(mel, (band.start, band.end), (s, e)) - sigma2 * (n - 1.0) / n;
            let reference = reference_band_energy(cfg, emotion, (s, e))?;
            if reference <= 0.0 {
                return Ok(0.0);
            }
            Ok((energy.max(0.0) / reference).sqrt().clamp(0.0, PROXY_MAX))
        })
        .collect()
}

/// Pearson and Spearman coefficients; `None` where a side has zero variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlations {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

pub fn correlations(a: &[f64], b: &[f64]) -> Result<Correlations> {
    if a.len() != b.len() || a.len() < 3 {
        config_err!("correlations need equal lengths of at least 3, got {} and {}", a.len(), b.len());
    }
    Ok(Correlations {
        pearson: pearson(a, b),
        spearman: pearson(&ranks(a), &ranks(b)),
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
