use std::f64::consts::{PI, TAU};

use crate::error::{config_err, Result};

/// Keeps the period proxy finite on straight segments.
pub const PERIOD_EPS: f64 = 1e-6;

/// Tangent-angle analysis of a 2-D point sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentTrace {
    /// Direction of every step, `NaN` for a zero-length step.
    pub angles: Vec<f64>,
    /// Wrapped turn at every point (endpoints copied from their neighbour).
    pub turns: Vec<f64>,
    /// `2π / (|turn| + ε)` per point.
    pub period: Vec<f64>,
    /// Negated period, min-max normalised to `[0, 1]`.
    pub intensity: Vec<f64>,
    /// Points whose turn was undefined and reused the previous one.
    pub flagged: Vec<usize>,
}

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % TAU;
    if x > PI {
        x -= TAU;
    } else if x <= -PI {
        x += TAU;
    }
    x
}

pub fn tangent_period(points: &[[f64; 2]]) -> Result<TangentTrace> {
    let n = points.len();
    if n < 3 {
        config_err!("tangent_period needs at least 3 points, got {n}");
    }
    let angles: Vec<f64> = points
        .windows(2)
        .map(|w| {
            let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            if dx == 0.0 && dy == 0.0 {
                f64::NAN
            } else {
                dy.atan2(dx)
            }
        })
        .collect();
    let mut interior = Vec::with_capacity(n - 2);
    let mut flagged = Vec::new();
    for j in 0..n - 2 {
        let turn = wrap_angle(angles[j + 1] - angles[j]);
        if turn.is_nan() {
            flagged.push(j + 1);
            interior.push(interior.last().copied().unwrap_or(0.0));
        } else {
            interior.push(turn);
        }
    }
    let mut turns = Vec::with_capacity(n);
    turns.push(interior[0]);
    turns.extend_from_slice(&interior);
    turns.push(interior[interior.len() - 1]);
    let period: Vec<f64> = turns.iter().map(|t| TAU / (t.abs() + PERIOD_EPS)).collect();
    let neg: Vec<f64> = period.iter().map(|p| -p).collect();
    let (lo, hi) = neg.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let intensity = neg
        .iter()
        .map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
        .collect();
    Ok(TangentTrace {
        angles,
        turns,
        period,
        intensity,
        flagged,
    })
}
