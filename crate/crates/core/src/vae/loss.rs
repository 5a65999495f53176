use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::LatentPosterior;

/// Loss components for one sample (or a batch mean).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon_mse: f64,
    pub kl: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.recon_mse.is_finite() && self.kl.is_finite()
    }
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_divergence<T: Scalar>(post: &LatentPosterior<T>) -> f64 {
    0.5 * post
        .mu
        .iter()
        .zip(&post.log_var)
        .map(|(m, lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            m * m + lv.exp() - 1.0 - lv
        })
        .sum::<f64>()
}

/// Mean squared reconstruction error plus `β` times the KL term.
pub fn vae_loss<T: Scalar>(
    target: &[T],
    recon: &[T],
    post: &LatentPosterior<T>,
    beta: f64,
) -> Result<LossParts> {
    if target.len() != recon.len() || target.is_empty() {
        return Err(Error::Shape(format!(
            "reconstruction length {} vs target {}",
            recon.len(),
            target.len()
        )));
    }
    if post.mu.len() != post.log_var.len() {
        return Err(Error::Shape(
            "posterior mean and log-variance lengths differ".into(),
        ));
    }
    let sse: f64 = target
        .iter()
        .zip(recon)
        .map(|(t, r)| {
            let d = r.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    let recon_mse = sse / target.len() as f64;
    let kl = kl_divergence(post);
    let parts = LossParts {
        total: recon_mse + beta * kl,
        recon_mse,
        kl,
    };
    if !parts.is_finite() {
        return Err(Error::TrainingDivergence(format!(
            "non-finite loss {parts:?}"
        )));
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn perfect_reconstruction_at_prior_is_zero() {
        let x = vec![0.3f64, -0.2, 0.9];
        let post = LatentPosterior {
            mu: vec![0.0; 128],
            log_var: vec![0.0; 128],
        };
        let l = vae_loss(&x, &x, &post, 1.0).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn unit_mean_kl_is_64() {
        let post = LatentPosterior {
            mu: vec![1.0f64; 128],
            log_var: vec![0.0; 128],
        };
        assert_eq!(kl_divergence(&post), 64.0);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 8;
        let mu: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let lv: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let post = LatentPosterior {
            mu: mu.clone(),
            log_var: lv.clone(),
        };
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut log_ratio = 0.0;
            for k in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                let z = mu[k] + (lv[k] / 2.0).exp() * e;
                // log q − log p; the 2π constants cancel
                log_ratio += -0.5 * (lv[k] + e * e) + 0.5 * z * z;
            }
            acc += log_ratio;
        }
        let mc = acc / n as f64;
        let kl = kl_divergence(&post);
        assert!((mc - kl).abs() / kl < 0.01, "mc {mc} vs {kl}");
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let post = LatentPosterior {
                mu: (0..4)
                    .map(|_| rng.random::<f64>() - 0.5)
                    .collect::<Vec<_>>(),
                log_var: (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
            };
            assert!(kl_divergence(&post) > 0.0);
        }
    }

    #[test]
    fn non_finite_loss_is_divergence() {
        let post = LatentPosterior {
            mu: vec![0.0f64],
            log_var: vec![0.0],
        };
        let r = vae_loss(&[0.0], &[f64::NAN], &post, 1.0);
        assert!(matches!(r, Err(Error::TrainingDivergence(_))));
    }
}
