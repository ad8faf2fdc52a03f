//! Error metrics between estimated and ground-truth trajectories.

use serde::Serialize;

use crate::error::{Error, Result};

/// Summary over every time step of every sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub median: f64,
    pub rmse_per_dim: Vec<f64>,
    pub steps: usize,
}

fn check_pair(est: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<()> {
    if est.len() != truth.len() {
        return Err(Error::invalid(format!(
            "estimate has {} steps, truth has {}",
            est.len(),
            truth.len()
        )));
    }
    if let Some((t, _)) = est
        .iter()
        .zip(truth)
        .enumerate()
        .find(|(_, (a, b))| a.len() != b.len())
    {
        return Err(Error::invalid(format!("dimension mismatch at step {t}")));
    }
    Ok(())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-step Euclidean distances, sequence after sequence.
pub fn step_errors<'a>(
    pairs: impl IntoIterator<Item = (&'a [Vec<f64>], &'a [Vec<f64>])>,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (est, truth) in pairs {
        check_pair(est, truth)?;
        out.extend(est.iter().zip(truth).map(|(a, b)| euclidean(a, b)));
    }
    Ok(out)
}

pub fn mean_euclidean(est: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    let e = step_errors([(est, truth)])?;
    if e.is_empty() {
        return Err(Error::invalid("no steps to score"));
    }
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize<'a>(
    pairs: impl IntoIterator<Item = (&'a [Vec<f64>], &'a [Vec<f64>])> + Clone,
) -> Result<ErrorSummary> {
    let errors = step_errors(pairs.clone())?;
    if errors.is_empty() {
        return Err(Error::invalid("no steps to score"));
    }
    let mut sq: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (est, truth) in pairs {
        for (a, b) in est.iter().zip(truth) {
            if sq.is_empty() {
                sq = vec![0.0; a.len()];
            }
            for k in 0..a.len().min(sq.len()) {
                sq[k] += (a[k] - b[k]).powi(2);
            }
            n += 1;
        }
    }
    Ok(ErrorSummary {
        mean: errors.iter().sum::<f64>() / errors.len() as f64,
        median: median(&errors),
        rmse_per_dim: sq.iter().map(|s| (s / n as f64).sqrt()).collect(),
        steps: errors.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_summary() {
        let est = [vec![0.0, 0.0], vec![3.0, 4.0]];
        let truth = [vec![0.0, 0.0], vec![0.0, 0.0]];
        let s = summarize([(&est[..], &truth[..])]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.rmse_per_dim[0] - (9.0f64 / 2.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        let a = vec![vec![0.0]];
        let b: Vec<Vec<f64>> = vec![];
        assert!(mean_euclidean(&a, &b).is_err());
    }
}
