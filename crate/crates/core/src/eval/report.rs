//! Per-utterance evaluation rows and manifold traces, rendered as CSV.

use std::fmt::Write as _;

use super::{correlations, intensity_proxy, mcd, pca_2d, tangent_period};
use crate::cascade::CascadeModel;
use crate::corpus::{CorpusConfig, UtterancePair};
use crate::error::Result;
use crate::manifold::ManifoldModel;
use crate::swer::SwerModel;

/// Restoration and intensity-tracking metrics for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceReport {
    pub id: String,
    pub emotion: usize,
    pub pattern: String,
    pub mcd: f64,
    /// Mean band proxy of the utterance's emotion on the restored mel.
    pub proxy_mean: Option<f64>,
    pub alpha_mean: f64,
    /// Correlations of the per-phoneme proxy with the ground-truth intensity.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

/// Restores every pair from its own SWER distribution and measures it.
pub fn evaluate(
    corpus: &CorpusConfig,
    swer: &SwerModel,
    cascade: &CascadeModel,
    pairs: &[UtterancePair],
) -> Result<Vec<UtteranceReport>> {
    pairs
        .iter()
        .map(|p| {
            let seg = p.phonemes.boundaries();
            let dist = swer.predict_distribution(&p.mel_emotional, &seg)?;
            let mel = cascade.render(&p.phonemes, p.speaker, &dist)?;
            let (mut proxy_mean, mut pearson, mut spearman) = (None, None, None);
            if p.emotion > 0 {
                let proxy = intensity_proxy(corpus, &mel, &seg, p.emotion)?;
                proxy_mean = Some(proxy.iter().sum::<f64>() / proxy.len() as f64);
                if proxy.len() >= 3 {
                    let c = correlations(&proxy, &p.intensity)?;
                    pearson = c.pearson;
                    spearman = c.spearman;
                }
            }
            Ok(UtteranceReport {
                id: p.id.clone(),
                emotion: p.emotion,
                pattern: p.pattern.to_string(),
                mcd: mcd(&mel, &p.mel_emotional)?,
                proxy_mean,
                alpha_mean: p.intensity.iter().sum::<f64>() / p.intensity.len() as f64,
                pearson,
                spearman,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-utterance rows followed by `mean` rows overall and per emotion.
pub fn report_csv(rows: &[UtteranceReport], emotions: &[String]) -> String {
    let mut s = String::from("id,emotion,pattern,mcd,proxy_mean,alpha_mean,pearson,spearman\n");
    let name = |k: usize| emotions.get(k).cloned().unwrap_or_else(|| k.to_string());
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{},{:.6},{},{}",
            r.id,
            name(r.emotion),
            r.pattern,
            r.mcd,
            opt(r.proxy_mean),
            r.alpha_mean,
            opt(r.pearson),
            opt(r.spearman)
        );
    }
    let mut aggregate = |label: String, group: Vec<&UtteranceReport>| {
        if group.is_empty() {
            return;
        }
        let _ = writeln!(
            s,
            "{label},,,{:.6},{},{:.6},{},{}",
            group.iter().map(|r| r.mcd).sum::<f64>() / group.len() as f64,
            opt(mean_of(group.iter().map(|r| r.proxy_mean))),
            group.iter().map(|r| r.alpha_mean).sum::<f64>() / group.len() as f64,
            opt(mean_of(group.iter().map(|r| r.pearson))),
            opt(mean_of(group.iter().map(|r| r.spearman)))
        );
    };
    aggregate("mean".into(), rows.iter().collect());
    for k in 0..emotions.len() {
        aggregate(format!("mean:{}", name(k)), rows.iter().filter(|r| r.emotion == k).collect());
    }
    s
}

/// One phoneme of a code trace.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldRow {
    pub phoneme: usize,
    pub code: usize,
    pub pc1: f64,
    pub pc2: f64,
    /// Direction of the step to the next point (`NaN` at the last point).
    pub angle: f64,
    pub turn: f64,
    pub period: f64,
    pub intensity_like: f64,
    pub alpha: f64,
    pub flagged: bool,
}

/// PCA of the utterance's quantised codes, then the tangent-angle period.
pub fn analyze_manifold(manifold: &ManifoldModel, pair: &UtterancePair) -> Result<Vec<ManifoldRow>> {
    let latents = manifold.encode(&pair.mel_emotional, &pair.phonemes.boundaries())?;
    let rows: Vec<Vec<f64>> = (0..latents.len())
        .map(|i| latents.quantized.row(i).iter().map(|&v| v as f64).collect())
        .collect();
    let pca = pca_2d(&rows)?;
    let trace = tangent_period(&pca.points)?;
    Ok((0..rows.len())
        .map(|i| ManifoldRow {
            phoneme: i,
            code: latents.indices[i],
            pc1: pca.points[i][0],
            pc2: pca.points[i][1],
            angle: trace.angles.get(i).copied().unwrap_or(f64::NAN),
            turn: trace.turns[i],
            period: trace.period[i],
            intensity_like: trace.intensity[i],
            alpha: pair.intensity[i],
            flagged: trace.flagged.contains(&i),
        })
        .collect())
}

pub fn manifold_csv(rows: &[ManifoldRow]) -> String {
    let mut s = String::from("phoneme,code,pc1,pc2,angle,turn,period,intensity_like,alpha,flagged\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.phoneme,
            r.code,
            r.pc1,
            r.pc2,
            r.angle,
            r.turn,
            r.period,
            r.intensity_like,
            r.alpha,
            u8::from(r.flagged)
        );
    }
    s
}
