use serde::{Deserialize, Serialize};

use super::ClassifierError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Binary cross-entropy on the sigmoid output.
    #[default]
    CrossEntropy,
    /// Half squared error on the sigmoid output.
    Mse,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Loss {
    /// Loss of one example given its logit and 0/1 target, and the
    /// derivative of that loss with respect to the logit.
    pub fn value_and_grad(self, logit: f64, target: f64) -> (f64, f64) {
        let p = sigmoid(logit);
        match self {
            Loss::CrossEntropy => {
                // softplus(z) - t z, written to avoid overflow
                let value = logit.max(0.0) - target * logit + (-logit.abs()).exp().ln_1p();
                (value, p - target)
            }
            Loss::Mse => {
                let r = p - target;
                (0.5 * r * r, r * p * (1.0 - p))
            }
        }
    }
}

/// `0.5 * sum_k (y_k - t_k)^2`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, ClassifierError> {
    if pred.len() != target.len() {
        return Err(ClassifierError::LengthMismatch(pred.len(), target.len()));
    }
    Ok(0.5 * pred.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>())
}

/// Gradient of [`mse_loss`] with respect to the weights of a linear layer
/// `y = W x`: entry `(j, i)` is `(y_j - t_j) * x_i`. Returned row-major,
/// `pred.len()` rows of `input.len()`.
pub fn mse_grad(pred: &[f64], target: &[f64], input: &[f64]) -> Result<Vec<f64>, ClassifierError> {
    if pred.len() != target.len() {
        return Err(ClassifierError::ShapeMismatch(format!(
            "{} outputs but {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .flat_map(|(y, t)| input.iter().map(move |x| (y - t) * x))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(mse_loss(&[1.0], &[1.0, 2.0]), Err(ClassifierError::LengthMismatch(1, 2))));
    }

    #[test]
    fn mse_grad_cases() {
        assert!(mse_grad(&[0.5, 0.1], &[0.5, 0.1], &[3.0, 4.0]).unwrap().iter().all(|&g| g == 0.0));
        assert_eq!(mse_grad(&[1.0], &[0.0], &[2.0]).unwrap(), vec![2.0]);
        assert!(matches!(mse_grad(&[1.0], &[], &[2.0]), Err(ClassifierError::ShapeMismatch(_))));
    }

    #[test]
    fn mse_matches_scalar_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let y: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let t: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut oracle = 0.0;
            for k in 0..5 {
                let r = y[k] - t[k];
                oracle += r * r;
            }
            assert!((mse_loss(&y, &t).unwrap() - oracle / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_grad_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (rows, cols) = (3, 4);
        let w: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let apply = |w: &[f64]| -> Vec<f64> {
            (0..rows).map(|j| (0..cols).map(|i| w[j * cols + i] * x[i]).sum()).collect()
        };
        let g = mse_grad(&apply(&w), &t, &x).unwrap();
        let h = 1e-5;
        for k in 0..w.len() {
            let (mut plus, mut minus) = (w.clone(), w.clone());
            plus[k] += h;
            minus[k] -= h;
            let num = (mse_loss(&apply(&plus), &t).unwrap() - mse_loss(&apply(&minus), &t).unwrap()) / (2.0 * h);
            assert!((num - g[k]).abs() < 1e-6, "{k}: {num} vs {}", g[k]);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        let (v, g) = Loss::CrossEntropy.value_and_grad(-800.0, 1.0);
        assert!((v - 800.0).abs() < 1e-9 && (g + 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_grads_match_finite_differences() {
        for loss in [Loss::CrossEntropy, Loss::Mse] {
            for &(z, t) in &[(0.3, 1.0), (-1.7, 0.0), (2.2, 0.0), (-0.4, 1.0)] {
                let h = 1e-6;
                let num = (loss.value_and_grad(z + h, t).0 - loss.value_and_grad(z - h, t).0) / (2.0 * h);
                let (_, g) = loss.value_and_grad(z, t);
                assert!((num - g).abs() < 1e-8, "{loss:?} z={z} t={t}: {num} vs {g}");
            }
        }
    }
}
