//! Curve-driven control probes: commanded intensity against the band proxy
//! measured on the synthesised spectrogram.

use super::{correlations, intensity_proxy};
use crate::cascade::{CascadeModel, CurveSpec};
use crate::corpus::{CorpusConfig, PhonemeSequence};
use crate::error::{config_err, Result};

/// One synthesis request: phonemes and speaker.
#[derive(Clone, Debug)]
pub struct ProbeUtterance {
    pub phonemes: PhonemeSequence,
    pub speaker: usize,
}

/// Band proxy of `emotion` at every phoneme of the synthesised result.
pub fn commanded_proxy(
    model: &CascadeModel,
    corpus: &CorpusConfig,
    utt: &ProbeUtterance,
    curves: &CurveSpec,
    emotion: usize,
) -> Result<Vec<f64>> {
    let (_, mel) = model.infer_from_curves(&utt.phonemes, utt.speaker, curves, &corpus.emotions)?;
    intensity_proxy(corpus, &mel, &utt.phonemes.boundaries(), emotion)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RampResult {
    pub emotion: usize,
    pub rising: bool,
    pub commanded: Vec<f64>,
    pub proxy: Vec<f64>,
    /// `None` when the proxy is constant.
    pub spearman: Option<f64>,
}

/// Commands a 0→1 (or 1→0) ramp of `emotion` and correlates the proxy with it.
pub fn ramp_probe(
    model: &CascadeModel,
    corpus: &CorpusConfig,
    utt: &ProbeUtterance,
    emotion: usize,
    rising: bool,
) -> Result<RampResult> {
    let Some(name) = corpus.emotions.get(emotion).filter(|_| emotion > 0) else {
        config_err!("emotion id {emotion} cannot be ramped");
    };
    let (from, to) = if rising { (0.0, 1.0) } else { (1.0, 0.0) };
    let curves = CurveSpec::ramp(name, from, to)?;
    let proxy = commanded_proxy(model, corpus, utt, &curves, emotion)?;
    let commanded = CurveSpec::evaluate(curves.get(name).unwrap_or_default(), utt.phonemes.len());
    Ok(RampResult {
        emotion,
        rising,
        spearman: correlations(&proxy, &commanded)?.spearman,
        commanded,
        proxy,
    })
}

/// Named mixture of constant intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Recipe {
    pub name: &'static str,
    pub components: Vec<(&'static str, f64)>,
}

/// Proud, Disappointed and Devastated.
pub fn mixture_recipes() -> Vec<Recipe> {
    vec![
        Recipe {
            name: "proud",
            components: vec![("happy", 0.9), ("surprise", 0.45)],
        },
        Recipe {
            name: "disappointed",
            components: vec![("sad", 0.7), ("angry", 0.64)],
        },
        Recipe {
            name: "devastated",
            components: vec![("surprise", 0.1), ("sad", 0.93)],
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentResult {
    pub emotion: usize,
    pub weight: f64,
    /// Mean proxy over every probe phoneme under the mixture.
    pub mixed: f64,
    /// Mean proxy with the emotion commanded alone at full intensity.
    pub solo_full: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureResult {
    pub recipe: &'static str,
    pub components: Vec<ComponentResult>,
}

fn mean_proxy(model: &CascadeModel, corpus: &CorpusConfig, utts: &[ProbeUtterance], curves: &CurveSpec, emotion: usize) -> Result<f64> {
    let mut all = Vec::new();
    for u in utts {
        all.extend(commanded_proxy(model, corpus, u, curves, emotion)?);
    }
    if all.is_empty() {
        config_err!("no probe phonemes");
    }
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}

pub fn mixture_probe(model: &CascadeModel, corpus: &CorpusConfig, utts: &[ProbeUtterance], recipe: &Recipe) -> Result<MixtureResult> {
    let mix = CurveSpec::constant(&recipe.components)?;
    let components = recipe
        .components
        .iter()
        .map(|&(name, weight)| {
            let Some(emotion) = corpus.emotion_id(name) else {
                config_err!("recipe {} uses unknown emotion {name}", recipe.name);
            };
            Ok(ComponentResult {
                emotion,
                weight,
                mixed: mean_proxy(model, corpus, utts, &mix, emotion)?,
                solo_full: mean_proxy(model, corpus, utts, &CurveSpec::constant(&[(name, 1.0)])?, emotion)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MixtureResult {
        recipe: recipe.name,
        components,
    })
}
