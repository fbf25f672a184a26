//! Minibatch Adam training on background samples.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rows_to_matrix, standard_normal_matrix, Params, VaeModel};
use crate::error::{Error, Result};
use crate::rng::{substream, STREAM_VAE_NOISE};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 coefficient added to each gradient before the Adam step.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the KL term relative to the reconstruction MSE.
    pub kl_weight: f64,
    /// Seed of the shuffling and reparameterization noise stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 1024,
            epochs: 20,
            kl_weight: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.kl_weight >= 0.0
            && self.batch_size > 0
            && self.epochs > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid VAE training configuration: {self:?}")))
        }
    }
}

/// Adam with coupled L2 weight decay (`g += weight_decay * p`).
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    lr: T,
    beta1: T,
    beta2: T,
    epsilon: T,
    weight_decay: T,
    step: i32,
    m: Params<T>,
    v: Params<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &VaeModel<T>, config: &TrainConfig) -> Self {
        Adam {
            lr: T::lit(config.learning_rate),
            beta1: T::lit(config.beta1),
            beta2: T::lit(config.beta2),
            epsilon: T::lit(config.epsilon),
            weight_decay: T::lit(config.weight_decay),
            step: 0,
            m: Params::zeros(&model.arch),
            v: Params::zeros(&model.arch),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut Params<T>, grads: &Params<T>) {
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1, self.beta2);
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for i in 0..p.len() {
                let grad = g[i] + self.weight_decay * p[i];
                m[i] = b1 * m[i] + one_b1 * grad;
                v[i] = b2 * v[i] + one_b2 * grad * grad;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Sample-weighted mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub model: VaeModel<T>,
    pub epochs: Vec<EpochLoss>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn epoch_totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }

    /// Per-epoch loss CSV: `epoch,total,recon,kl`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,total,recon,kl\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.total, e.recon, e.kl));
        }
        out
    }
}

/// Trains `model` on normalized background rows. Each epoch visits the rows
/// in a fresh shuffled order; every forward pass draws new noise.
pub fn train<T: Scalar>(mut model: VaeModel<T>, rows: &[Vec<T>], config: &TrainConfig) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::invalid("VAE training needs at least one sample"));
    }
    let data = rows_to_matrix(rows, model.input_dim())?;
    let mut rng = substream(config.seed, STREAM_VAE_NOISE);
    let mut adam = Adam::new(&model, config);
    let kl_weight = T::lit(config.kl_weight);
    let latent = model.latent_dim();
    let width = model.input_dim();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut recon, mut kl) = (0.0, 0.0, 0.0);
        for (batch_no, idx) in order.chunks(config.batch_size).enumerate() {
            let mut batch = Array2::zeros((idx.len(), width));
            for (dst, &src) in batch.outer_iter_mut().zip(idx) {
                dst.into_slice().expect("row").copy_from_slice(data.row(src).as_slice().expect("row"));
            }
            let noise = standard_normal_matrix::<T, _>(idx.len(), latent, &mut rng);
            let (parts, grads) = model.loss_and_gradients(batch.view(), noise.view(), kl_weight)?;
            if !parts.total.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_no} (recon {}, kl {})",
                    parts.recon, parts.kl
                )));
            }
            let w = idx.len() as f64;
            total += parts.total.as_f64() * w;
            recon += parts.recon.as_f64() * w;
            kl += parts.kl.as_f64() * w;
            adam.update(&mut model.params, &grads);
        }
        let n = rows.len() as f64;
        let e = EpochLoss { epoch, total: total / n, recon: recon / n, kl: kl / n };
        log::debug!("vae epoch {epoch}: total {:.6} recon {:.6} kl {:.6}", e.total, e.recon, e.kl);
        epochs.push(e);
    }
    if !model.is_finite() {
        return Err(Error::Numerical("training produced non-finite parameters".into()));
    }
    Ok(TrainOutcome { model, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::VaeArchitecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mini() -> VaeArchitecture {
        VaeArchitecture { input_dim: 6, encoder_hidden: vec![16], latent_dim: 3 }
    }

    fn rows(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a: f64 = rng.random();
                vec![a, 1.0 - a, 0.5 * a, 0.1, 0.0, rng.random::<f64>() * 0.1]
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let model = VaeModel::<f64>::init(mini(), 1).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 1, batch_size: 16, ..Default::default() };
        let out = train(model.clone(), &rows(64, 2), &cfg).unwrap();
        assert_eq!(out.model, model);
    }

    #[test]
    fn loss_decreases_and_is_reproducible() {
        let model = VaeModel::<f64>::init(mini(), 1).unwrap();
        let cfg = TrainConfig { learning_rate: 1e-2, epochs: 30, batch_size: 32, seed: 5, ..Default::default() };
        let data = rows(256, 3);
        let a = train(model.clone(), &data, &cfg).unwrap();
        let b = train(model, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let first = a.epochs.first().unwrap().total;
        let last = a.epochs.last().unwrap().total;
        assert!(last < 0.5 * first, "{first} -> {last}");
        assert!(a.loss_csv().starts_with("epoch,total,recon,kl\n0,"));
    }

    #[test]
    fn rejects_empty_and_bad_config() {
        let model = VaeModel::<f64>::init(mini(), 1).unwrap();
        assert!(train(model.clone(), &[], &TrainConfig::default()).is_err());
        let cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(train(model.clone(), &rows(4, 1), &cfg).is_err());
        assert!(matches!(train(model, &[vec![0.0; 5]], &TrainConfig::default()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let mut model = VaeModel::<f64>::zeros(mini()).unwrap();
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut adam = Adam::new(&model, &cfg);
        let mut grads = Params::zeros(&model.arch);
        grads.mu_head.bias[0] = 0.5;
        grads.mu_head.bias[1] = -2.0;
        adam.update(&mut model.params, &grads);
        assert!((model.params.mu_head.bias[0] + 1e-3).abs() < 1e-10);
        assert!((model.params.mu_head.bias[1] - 1e-3).abs() < 1e-10);
        assert_eq!(model.params.mu_head.bias[2], 0.0);
        assert_eq!(adam.steps(), 1);
    }
}
