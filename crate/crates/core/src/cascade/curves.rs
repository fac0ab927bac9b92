//! Declarative per-emotion intensity curves.

use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::swer::EmotionDistribution;

/// Anchor points `(position, intensity)` for each named emotion, positions
/// being fractions of the phoneme sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurveSpec {
    pub curves: Vec<(String, Vec<(f64, f64)>)>,
}

impl CurveSpec {
    pub fn new(curves: Vec<(String, Vec<(f64, f64)>)>) -> Result<Self> {
        let spec = CurveSpec { curves };
        spec.validate()?;
        Ok(spec)
    }

    /// One constant anchor per emotion.
    pub fn constant(levels: &[(&str, f64)]) -> Result<Self> {
        Self::new(levels.iter().map(|(n, v)| (n.to_string(), vec![(0.0, *v)])).collect())
    }

    /// Straight line from `from` at the first phoneme to `to` at the last.
    pub fn ramp(emotion: &str, from: f64, to: f64) -> Result<Self> {
        Self::new(vec![(emotion.to_string(), vec![(0.0, from), (1.0, to)])])
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (name, anchors)) in self.curves.iter().enumerate() {
            if anchors.is_empty() {
                config_err!("curve for {name} has no anchors");
            }
            if self.curves[..i].iter().any(|(n, _)| n == name) {
                config_err!("emotion {name} listed twice");
            }
            for &(x, y) in anchors {
                if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                    config_err!("anchor {x}={y} for {name} outside [0, 1]");
                }
            }
            if anchors.windows(2).any(|w| w[1].0 <= w[0].0) {
                config_err!("anchor positions for {name} are not strictly increasing");
            }
        }
        Ok(())
    }

    pub fn get(&self, emotion: &str) -> Option<&[(f64, f64)]> {
        self.curves.iter().find(|(n, _)| n == emotion).map(|(_, a)| a.as_slice())
    }

    /// Curve values at `t` evenly spaced phoneme positions.
    pub fn evaluate(anchors: &[(f64, f64)], t: usize) -> Vec<f64> {
        (0..t)
            .map(|i| {
                let x = if t > 1 { i as f64 / (t - 1) as f64 } else { 0.0 };
                interpolate(anchors, x)
            })
            .collect()
    }

    /// `t × n` distribution over `emotions` (index 0 being neutral). Unlisted
    /// emotions are 0; unless neutral has its own curve, its column is
    /// `max(0, 1 − max emotional intensity)`.
    pub fn distribution(&self, emotions: &[String], t: usize) -> Result<EmotionDistribution> {
        for (name, _) in &self.curves {
            if !emotions.contains(name) {
                config_err!("unknown emotion {name} in curve spec");
            }
        }
        let n = emotions.len();
        let mut data = vec![0f32; t * n];
        for (k, name) in emotions.iter().enumerate() {
            if let Some(a) = self.get(name) {
                for (i, v) in Self::evaluate(a, t).into_iter().enumerate() {
                    data[i * n + k] = v as f32;
                }
            }
        }
        if n > 0 && self.get(&emotions[0]).is_none() {
            for row in data.chunks_mut(n) {
                let peak = row[1..].iter().fold(0f32, |m, &v| m.max(v));
                row[0] = (1.0 - peak).max(0.0);
            }
        }
        EmotionDistribution::new(t, n, data)
    }
}

/// Piecewise-linear interpolation, constant beyond the end anchors.
pub fn interpolate(anchors: &[(f64, f64)], x: f64) -> f64 {
    let (first, last) = (anchors[0], anchors[anchors.len() - 1]);
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let j = anchors.iter().position(|a| a.0 > x).unwrap_or(anchors.len() - 1);
    let (a, b) = (anchors[j - 1], anchors[j]);
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

impl FromStr for CurveSpec {
    type Err = Error;

    /// One line per emotion, `happy: 0.0=0.0, 1.0=1.0`; `#` starts a comment.
    fn from_str(text: &str) -> Result<Self> {
        let mut curves = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((name, rest)) = line.split_once(':') else {
                config_err!("curve line {}: expected `emotion: pos=value, ...`", no + 1);
            };
            let mut anchors = Vec::new();
            for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let parsed = item
                    .split_once('=')
                    .and_then(|(x, y)| Some((x.trim().parse().ok()?, y.trim().parse().ok()?)));
                match parsed {
                    Some(a) => anchors.push(a),
                    None => config_err!("curve line {}: bad anchor `{item}`", no + 1),
                }
            }
            curves.push((name.trim().to_lowercase(), anchors));
        }
        CurveSpec::new(curves)
    }
}

impl fmt::Display for CurveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, anchors) in &self.curves {
            let items: Vec<String> = anchors.iter().map(|(x, y)| format!("{x}={y}")).collect();
            writeln!(f, "{name}: {}", items.join(", "))?;
        }
        Ok(())
    }
}
