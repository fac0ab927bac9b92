use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};

const TOLERANCE: f64 = 1e-9;
const MAX_ITERATIONS: usize = 10_000;

/// Two-component projection of mean-centred rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2d {
    pub points: Vec<[f64; 2]>,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: [f64; 2],
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
    /// Fewer than two non-zero eigenvalues; the missing components are zero.
    pub rank_deficient: bool,
}

/// Top-two principal components by power iteration with deflation.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Pca2d> {
    if rows.len() < 3 {
        config_err!("pca_2d needs at least 3 rows, got {}", rows.len());
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        config_err!("pca_2d rows must share a non-zero width");
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let centred: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![0.0; d * d];
    for r in &centred {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += r[i] * r[j] / (n - 1.0);
            }
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let floor = 1e-12 * trace.max(f64::MIN_POSITIVE);

    let mut rng = ChaCha8Rng::seed_from_u64(0x9ca);
    let mut eigenvalues = [0.0; 2];
    let mut components = [vec![0.0; d], vec![0.0; d]];
    let mut rank_deficient = false;
    for k in 0..2 {
        let (value, vector) = power_iteration(&cov, d, &mut rng);
        if value <= floor {
            rank_deficient = true;
            break;
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= value * vector[i] * vector[j];
            }
        }
        eigenvalues[k] = value;
        components[k] = vector;
    }
    let points = centred
        .iter()
        .map(|r| {
            let p = |c: &[f64]| r.iter().zip(c).map(|(x, v)| x * v).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    Ok(Pca2d {
        points,
        eigenvalues,
        components,
        mean,
        rank_deficient,
    })
}

fn mat_vec(m: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum()).collect()
}

fn normalise(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Sign convention: the first component with magnitude above 1e-12 is positive.
fn orient(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Dominant eigenpair of a symmetric positive semi-definite matrix.
fn power_iteration(m: &[f64], d: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalise(&mut v);
    for _ in 0..MAX_ITERATIONS {
        let mut w = mat_vec(m, d, &v);
        if normalise(&mut w) == 0.0 {
            return (0.0, vec![0.0; d]);
        }
        orient(&mut w);
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        v = w;
        if delta < TOLERANCE {
            break;
        }
    }
    let mv = mat_vec(m, d, &v);
    let value = v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>();
    (value, v)
}
