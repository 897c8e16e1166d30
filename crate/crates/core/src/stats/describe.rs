//! Descriptive statistics and histogram divergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (N - 1 normalisation; 0 for one value).
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile (`q` in [0, 1]) of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn describe(values: &[f64]) -> Result<Description> {
    if values.is_empty() {
        return Err(Error::Empty("no values to describe".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Description {
        count: n,
        mean,
        std,
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[n - 1],
    })
}

/// `KL(P || U)` of a count histogram against the uniform distribution over
/// the same bins, in nats. Empty bins contribute nothing.
pub fn kld_uniform(counts: &[u64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Empty("histogram has no bins".into()));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("histogram has no counts".into()));
    }
    let k = counts.len() as f64;
    let total = total as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * (p * k).ln()
        })
        .sum::<f64>()
        .max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_values() {
        let d = describe(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((d.mean, d.std), (1.0, 0.0));
    }

    #[test]
    fn quartiles_interpolate() {
        let d = describe(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((d.q1, d.median, d.q3), (1.75, 2.5, 3.25));
        assert!((d.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn normal_draws_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.387, 0.022).unwrap();
        let v: Vec<f64> = (0..2000).map(|_| n.sample(&mut rng)).collect();
        let d = describe(&v).unwrap();
        assert!((d.mean - 0.387).abs() < 3.0 * 0.022 / (2000f64).sqrt());
        assert!((d.std - 0.022).abs() < 3.0 * 0.022 / (2.0 * 1999f64).sqrt());
    }

    #[test]
    fn empty_rejected() {
        assert!(describe(&[]).is_err());
        assert!(kld_uniform(&[]).is_err());
        assert!(kld_uniform(&[0, 0, 0]).is_err());
    }

    #[test]
    fn kld_limits() {
        assert_eq!(kld_uniform(&[5, 5, 5, 5]).unwrap(), 0.0);
        assert!((kld_uniform(&[0, 9, 0, 0, 0]).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!(kld_uniform(&[1, 2, 3]).unwrap() > 0.0);
    }
}
