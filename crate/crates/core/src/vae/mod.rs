//! Variational autoencoder anomaly scorer.
//!
//! Fully connected encoder with ReLU hidden layers, separate linear heads for
//! the latent mean and log-variance, and a mirrored decoder ending in a
//! sigmoid. The anomaly score of a sample is the per-dimension mean squared
//! error between the sample and the reconstruction of its latent mean.
//!
//! Weights are stored `(fan_in, fan_out)` so a batch `X` (rows are samples)
//! propagates as `X · W + b`.

pub mod gradcheck;
mod threshold;
mod train;

pub use threshold::{select_threshold, AnomalyThreshold};
pub use train::{train, Adam, EpochLoss, TrainConfig, TrainOutcome};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, STREAM_VAE_INIT};
use crate::scalar::Scalar;

pub const VAE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArchitecture {
    pub input_dim: usize,
    /// Encoder hidden widths; the decoder uses them in reverse.
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for VaeArchitecture {
    /// 69 → 512 → 512 → 1024 → (100, 100) → 1024 → 512 → 512 → 69.
    fn default() -> Self {
        VaeArchitecture { input_dim: 69, encoder_hidden: vec![512, 512, 1024], latent_dim: 100 }
    }
}

impl VaeArchitecture {
    pub fn with_input(input_dim: usize) -> Self {
        VaeArchitecture { input_dim, ..Default::default() }
    }

    pub fn decoder_hidden(&self) -> Vec<usize> {
        self.encoder_hidden.iter().rev().copied().collect()
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.encoder_hidden.contains(&0) {
            return Err(Error::invalid("VAE layer widths must be positive"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer in parameter order: encoder,
    /// mean head, log-variance head, decoder.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = self.input_dim;
        for &h in &self.encoder_hidden {
            shapes.push((width, h));
            width = h;
        }
        shapes.push((width, self.latent_dim));
        shapes.push((width, self.latent_dim));
        let mut width = self.latent_dim;
        for h in self.decoder_hidden() {
            shapes.push((width, h));
            width = h;
        }
        shapes.push((width, self.input_dim));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `(fan_in, fan_out)`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    fn forward(&self, x: &ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }
}

/// All trainable tensors. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub encoder: Vec<Dense<T>>,
    pub mu_head: Dense<T>,
    pub logvar_head: Dense<T>,
    /// Hidden layers followed by the output layer.
    pub decoder: Vec<Dense<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(arch: &VaeArchitecture) -> Self {
        let mut layers = arch.layer_shapes().into_iter().map(|(i, o)| Dense::zeros(i, o));
        let encoder = (0..arch.encoder_hidden.len()).map(|_| layers.next().unwrap()).collect();
        let mu_head = layers.next().unwrap();
        let logvar_head = layers.next().unwrap();
        Params { encoder, mu_head, logvar_head, decoder: layers.collect() }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense<T>> {
        self.encoder
            .iter()
            .chain([&self.mu_head, &self.logvar_head])
            .chain(self.decoder.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<T>> {
        self.encoder
            .iter_mut()
            .chain([&mut self.mu_head, &mut self.logvar_head])
            .chain(self.decoder.iter_mut())
    }

    /// Flat views of every weight and bias, in a fixed order.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers()
            .flat_map(|l| [l.weight.as_slice().expect("standard layout"), l.bias.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

/// Loss terms averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub total: T,
    pub recon: T,
    pub kl: T,
}

/// Per-sample loss of one reconstruction:
/// `recon = mean_i (x_i - xhat_i)^2`,
/// `kl = -0.5 * mean_j (1 + logvar_j - mu_j^2 - exp(logvar_j))`,
/// `total = recon + kl_weight * kl`.
pub fn loss<T: Scalar>(x: &[T], xhat: &[T], mu: &[T], logvar: &[T], kl_weight: T) -> LossParts<T> {
    let recon = x
        .iter()
        .zip(xhat)
        .map(|(&a, &b)| (a - b) * (a - b))
        .fold(T::zero(), |acc, v| acc + v)
        / T::lit(x.len() as f64);
    let kl = mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| T::one() + lv - m * m - lv.exp())
        .fold(T::zero(), |acc, v| acc + v)
        * T::lit(-0.5)
        / T::lit(mu.len() as f64);
    LossParts { total: recon + kl_weight * kl, recon, kl }
}

/// `z = mu + exp(0.5 * logvar) * noise`.
pub fn reparameterize<T: Scalar>(mu: &[T], logvar: &[T], noise: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    mu.iter()
        .zip(logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect()
}

fn relu_in_place<T: Scalar>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

fn sigmoid_in_place<T: Scalar>(a: &mut Array2<T>) {
    // Clamped so outputs stay strictly inside (0, 1) even when saturated.
    let lo = T::epsilon();
    let hi = T::one() - T::epsilon();
    a.mapv_inplace(|v| (T::one() / (T::one() + (-v).exp())).max(lo).min(hi));
}

/// Activations kept for the backward pass.
struct Trace<T> {
    /// Post-ReLU encoder activations.
    enc: Vec<Array2<T>>,
    mu: Array2<T>,
    logvar: Array2<T>,
    /// `exp(0.5 * logvar)`.
    std: Array2<T>,
    z: Array2<T>,
    /// Post-ReLU decoder hidden activations.
    dec: Vec<Array2<T>>,
    xhat: Array2<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VaeRecord<T>", try_from = "VaeRecord<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct VaeModel<T: Scalar> {
    pub arch: VaeArchitecture,
    pub params: Params<T>,
}

impl<T: Scalar> VaeModel<T> {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(arch: VaeArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = substream(seed, STREAM_VAE_INIT);
        let mut params = Params::zeros(&arch);
        for layer in params.layers_mut() {
            let (fan_in, fan_out) = layer.weight.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer.weight.mapv_inplace(|_| T::lit(rng.random_range(-bound..bound)));
        }
        Ok(VaeModel { arch, params })
    }

    /// Model with every weight and bias zero.
    pub fn zeros(arch: VaeArchitecture) -> Result<Self> {
        arch.validate()?;
        let params = Params::zeros(&arch);
        Ok(VaeModel { arch, params })
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn check_cols(&self, got: usize, expected: usize) -> Result<()> {
        if got != expected {
            return Err(Error::Dimension { expected, got });
        }
        Ok(())
    }

    fn encode_batch_inner(&self, x: ArrayView2<'_, T>) -> (Vec<Array2<T>>, Array2<T>, Array2<T>) {
        let mut acts: Vec<Array2<T>> = Vec::with_capacity(self.params.encoder.len());
        for layer in &self.params.encoder {
            let input = acts.last().map(|a| a.view()).unwrap_or(x);
            let mut h = layer.forward(&input);
            relu_in_place(&mut h);
            acts.push(h);
        }
        let top = acts.last().map(|a| a.view()).unwrap_or(x);
        let mu = self.params.mu_head.forward(&top);
        let logvar = self.params.logvar_head.forward(&top);
        (acts, mu, logvar)
    }

    fn decode_batch_inner(&self, z: ArrayView2<'_, T>) -> (Vec<Array2<T>>, Array2<T>) {
        let (hidden, out) = self.params.decoder.split_at(self.params.decoder.len() - 1);
        let mut acts: Vec<Array2<T>> = Vec::with_capacity(hidden.len());
        for layer in hidden {
            let input = acts.last().map(|a| a.view()).unwrap_or(z);
            let mut h = layer.forward(&input);
            relu_in_place(&mut h);
            acts.push(h);
        }
        let last = acts.last().map(|a| a.view()).unwrap_or(z);
        let mut xhat = out[0].forward(&last);
        sigmoid_in_place(&mut xhat);
        (acts, xhat)
    }

    /// Latent mean and log-variance for each row of `x`.
    pub fn encode_batch(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, Array2<T>)> {
        self.check_cols(x.ncols(), self.input_dim())?;
        let (_, mu, logvar) = self.encode_batch_inner(x);
        Ok((mu, logvar))
    }

    pub fn decode_batch(&self, z: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_cols(z.ncols(), self.latent_dim())?;
        Ok(self.decode_batch_inner(z).1)
    }

    pub fn encode(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let (mu, logvar) = self.encode_batch(view)?;
        Ok((mu.into_raw_vec_and_offset().0, logvar.into_raw_vec_and_offset().0))
    }

    pub fn decode(&self, z: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, z.len()), z).expect("row view");
        Ok(self.decode_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Anomaly scores of a batch: MSE between each row and the decoding of
    /// its latent mean. Deterministic.
    pub fn reconstruction_errors(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        let (mu, _) = self.encode_batch(x)?;
        let xhat = self.decode_batch_inner(mu.view()).1;
        let d = T::lit(self.input_dim() as f64);
        let mut diff = xhat;
        Zip::from(&mut diff).and(&x).for_each(|h, &v| *h = (*h - v) * (*h - v));
        Ok(diff.sum_axis(Axis(1)) / d)
    }

    pub fn reconstruction_error(&self, x: &[T]) -> Result<T> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.reconstruction_errors(view)?[0])
    }

    /// Scores rows of `rows` in chunks of `chunk` samples.
    pub fn score_rows(&self, rows: &[Vec<T>], chunk: usize) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(rows.len());
        for block in rows.chunks(chunk.max(1)) {
            let m = rows_to_matrix(block, self.input_dim())?;
            out.extend(self.reconstruction_errors(m.view())?);
        }
        Ok(out)
    }

    fn forward_train(&self, x: ArrayView2<'_, T>, noise: ArrayView2<'_, T>) -> Trace<T> {
        let (enc, mu, logvar) = self.encode_batch_inner(x);
        let std = logvar.mapv(|lv| (T::lit(0.5) * lv).exp());
        let z = &mu + &(&std * &noise);
        let (dec, xhat) = self.decode_batch_inner(z.view());
        Trace { enc, mu, logvar, std, z, dec, xhat }
    }

    /// Batch-mean loss and its exact gradient for fixed reparameterization
    /// noise (one row of standard-normal draws per sample).
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, T>,
        noise: ArrayView2<'_, T>,
        kl_weight: T,
    ) -> Result<(LossParts<T>, Params<T>)> {
        self.check_cols(x.ncols(), self.input_dim())?;
        self.check_cols(noise.ncols(), self.latent_dim())?;
        if noise.nrows() != x.nrows() || x.nrows() == 0 {
            return Err(Error::invalid("noise rows must match a nonempty batch"));
        }
        let t = self.forward_train(x, noise);
        let b = T::lit(x.nrows() as f64);
        let d = T::lit(self.input_dim() as f64);
        let l = T::lit(self.latent_dim() as f64);
        let half = T::lit(0.5);

        // Loss values.
        let mut recon_sum = T::zero();
        Zip::from(&t.xhat).and(&x).for_each(|&h, &v| recon_sum += (h - v) * (h - v));
        let mut kl_sum = T::zero();
        Zip::from(&t.mu)
            .and(&t.logvar)
            .for_each(|&m, &lv| kl_sum += T::one() + lv - m * m - lv.exp());
        let recon = recon_sum / (d * b);
        let kl = -half * kl_sum / (l * b);
        let parts = LossParts { total: recon + kl_weight * kl, recon, kl };

        let mut grads = Params::zeros(&self.arch);

        // Output layer: d total / d pre-sigmoid.
        let scale = T::lit(2.0) / (d * b);
        let mut delta = Array2::zeros(t.xhat.raw_dim());
        Zip::from(&mut delta)
            .and(&t.xhat)
            .and(&x)
            .for_each(|g, &h, &v| *g = scale * (h - v) * h * (T::one() - h));

        // Decoder, last layer first.
        let n_dec = self.params.decoder.len();
        for i in (0..n_dec).rev() {
            let input = if i == 0 { t.z.view() } else { t.dec[i - 1].view() };
            let layer = &self.params.decoder[i];
            grads.decoder[i].weight = input.t().dot(&delta);
            grads.decoder[i].bias = delta.sum_axis(Axis(0));
            let mut back = delta.dot(&layer.weight.t());
            if i > 0 {
                Zip::from(&mut back).and(&t.dec[i - 1]).for_each(|g, &a| {
                    if a <= T::zero() {
                        *g = T::zero()
                    }
                });
            }
            delta = back;
        }

        // Latent: delta is now d total / d z.
        let kl_scale = kl_weight / (l * b);
        let mut d_mu = delta.clone();
        Zip::from(&mut d_mu).and(&t.mu).for_each(|g, &m| *g += kl_scale * m);
        let mut d_logvar = delta;
        Zip::from(&mut d_logvar)
            .and(&noise)
            .and(&t.std)
            .and(&t.logvar)
            .for_each(|g, &e, &s, &lv| *g = *g * e * half * s + kl_scale * half * (lv.exp() - T::one()));
        debug_assert_eq!(t.z.dim(), d_mu.dim());

        let top = t.enc.last().map(|a| a.view()).unwrap_or(x);
        grads.mu_head.weight = top.t().dot(&d_mu);
        grads.mu_head.bias = d_mu.sum_axis(Axis(0));
        grads.logvar_head.weight = top.t().dot(&d_logvar);
        grads.logvar_head.bias = d_logvar.sum_axis(Axis(0));
        let mut back = d_mu.dot(&self.params.mu_head.weight.t());
        back += &d_logvar.dot(&self.params.logvar_head.weight.t());

        // Encoder, top layer first.
        for i in (0..self.params.encoder.len()).rev() {
            Zip::from(&mut back).and(&t.enc[i]).for_each(|g, &a| {
                if a <= T::zero() {
                    *g = T::zero()
                }
            });
            let input = if i == 0 { x } else { t.enc[i - 1].view() };
            grads.encoder[i].weight = input.t().dot(&back);
            grads.encoder[i].bias = back.sum_axis(Axis(0));
            if i > 0 {
                back = back.dot(&self.params.encoder[i].weight.t());
            }
        }
        Ok((parts, grads))
    }

    /// Batch-mean loss with fixed noise, without gradients.
    pub fn batch_loss(&self, x: ArrayView2<'_, T>, noise: ArrayView2<'_, T>, kl_weight: T) -> Result<LossParts<T>> {
        self.check_cols(x.ncols(), self.input_dim())?;
        self.check_cols(noise.ncols(), self.latent_dim())?;
        let t = self.forward_train(x, noise);
        let n = x.nrows();
        let (mut total, mut recon, mut kl) = (T::zero(), T::zero(), T::zero());
        for r in 0..n {
            let p = loss(
                &x.row(r).to_vec(),
                &t.xhat.row(r).to_vec(),
                &t.mu.row(r).to_vec(),
                &t.logvar.row(r).to_vec(),
                kl_weight,
            );
            total += p.total;
            recon += p.recon;
            kl += p.kl;
        }
        let nb = T::lit(n as f64);
        Ok(LossParts { total: total / nb, recon: recon / nb, kl: kl / nb })
    }

    pub fn is_finite(&self) -> bool {
        self.params.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Copies rows into a matrix, checking their width.
pub fn rows_to_matrix<T: Scalar>(rows: &[Vec<T>], width: usize) -> Result<Array2<T>> {
    let mut flat = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::Dimension { expected: width, got: r.len() });
        }
        flat.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("shape matches"))
}

/// Fills a `(rows, cols)` matrix with standard-normal draws, row by row.
pub fn standard_normal_matrix<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v)
    })
}

#[derive(Serialize, Deserialize)]
struct LayerRecord<T> {
    rows: usize,
    cols: usize,
    /// Row-major `(rows, cols)` = `(fan_in, fan_out)`.
    weight: Vec<T>,
    bias: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct VaeRecord<T> {
    format_version: u32,
    architecture: VaeArchitecture,
    /// Encoder layers, mean head, log-variance head, decoder layers.
    layers: Vec<LayerRecord<T>>,
}

impl<T: Scalar> From<VaeModel<T>> for VaeRecord<T> {
    fn from(m: VaeModel<T>) -> Self {
        let layers = m
            .params
            .layers()
            .map(|l| LayerRecord {
                rows: l.weight.nrows(),
                cols: l.weight.ncols(),
                weight: l.weight.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect();
        VaeRecord { format_version: VAE_FORMAT_VERSION, architecture: m.arch, layers }
    }
}

impl<T: Scalar> TryFrom<VaeRecord<T>> for VaeModel<T> {
    type Error = String;

    fn try_from(r: VaeRecord<T>) -> std::result::Result<Self, String> {
        if r.format_version != VAE_FORMAT_VERSION {
            return Err(format!("VAE format version {} (expected {VAE_FORMAT_VERSION})", r.format_version));
        }
        let mut model = VaeModel::zeros(r.architecture).map_err(|e| e.to_string())?;
        let expected = model.params.layers().count();
        if r.layers.len() != expected {
            return Err(format!("expected {expected} layers, found {}", r.layers.len()));
        }
        for (i, (layer, rec)) in model.params.layers_mut().zip(r.layers).enumerate() {
            if (rec.rows, rec.cols) != layer.weight.dim() || rec.bias.len() != rec.cols {
                return Err(format!("layer {i}: shape mismatch"));
            }
            layer.weight = Array2::from_shape_vec((rec.rows, rec.cols), rec.weight).map_err(|e| format!("layer {i}: {e}"))?;
            layer.bias = Array1::from_vec(rec.bias);
        }
        if !model.is_finite() {
            return Err("non-finite parameter".into());
        }
        Ok(model)
    }
}

/// Column view of a single vector as a 1-row batch.
pub fn row_batch<T: Scalar>(x: &[T]) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((1, x.len()), x).expect("row view")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mini() -> VaeArchitecture {
        VaeArchitecture { input_dim: 5, encoder_hidden: vec![4], latent_dim: 2 }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = VaeModel::<f64>::init(VaeArchitecture::default(), 11).unwrap();
        let b = VaeModel::<f64>::init(VaeArchitecture::default(), 11).unwrap();
        assert_eq!(a, b);
        for layer in a.params.layers() {
            assert!(layer.bias.iter().all(|&v| v == 0.0));
            let (i, o) = layer.weight.dim();
            let bound = (6.0 / (i + o) as f64).sqrt();
            assert!(layer.weight.iter().all(|w| w.abs() <= bound));
        }
        assert_ne!(a, VaeModel::<f64>::init(VaeArchitecture::default(), 12).unwrap());
    }

    #[test]
    fn default_shapes() {
        let arch = VaeArchitecture::default();
        let m = VaeModel::<f32>::init(arch.clone(), 1).unwrap();
        let x = vec![0.3f32; 69];
        let (mu, lv) = m.encode(&x).unwrap();
        assert_eq!((mu.len(), lv.len()), (100, 100));
        assert!(mu.iter().chain(&lv).all(|v| v.is_finite()));
        let xhat = m.decode(&mu).unwrap();
        assert_eq!(xhat.len(), 69);
        assert!(xhat.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(m.encode(&[0.0; 68]).is_err());
        assert!(m.decode(&[0.0; 99]).is_err());
        let widths: Vec<usize> = m.params.decoder.iter().map(|l| l.weight.ncols()).collect();
        assert_eq!(widths, vec![1024, 512, 512, 69]);
    }

    #[test]
    fn zero_weight_model_is_affine() {
        let mut m = VaeModel::<f64>::zeros(mini()).unwrap();
        m.params.mu_head.bias = Array1::from_vec(vec![0.5, -1.0]);
        m.params.logvar_head.bias = Array1::from_vec(vec![0.25, 2.0]);
        let (mu, lv) = m.encode(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(mu, vec![0.5, -1.0]);
        assert_eq!(lv, vec![0.25, 2.0]);
        assert_eq!(m.decode(&[3.0, -7.0]).unwrap(), vec![0.5; 5]);
    }

    #[test]
    fn decode_stays_open_interval_under_saturation() {
        let mut m = VaeModel::<f64>::init(mini(), 3).unwrap();
        for l in m.params.decoder.iter_mut() {
            l.weight.mapv_inplace(|w| w * 1e4);
        }
        for z in [[1e3, -1e3], [-1e3, 1e3], [0.0, 0.0]] {
            assert!(m.decode(&z).unwrap().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn reparameterization() {
        let mu = [0.5, -2.0];
        let lv = [0.0, 4f64.ln()];
        assert_eq!(reparameterize(&mu, &lv, &[0.0, 0.0]), mu.to_vec());
        let z = reparameterize(&mu, &[0.0, 0.0], &[1.5, -0.5]);
        assert_eq!(z, vec![2.0, -2.5]);
        let z = reparameterize(&[0.0, 0.0], &lv, &[1.0, 1.0]);
        assert!((z[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn loss_terms() {
        let x = [0.2, 0.4, 0.6];
        let p = loss(&x, &x, &[0.0, 0.0], &[0.0, 0.0], 1.0);
        assert_eq!((p.recon, p.kl, p.total), (0.0, 0.0, 0.0));
        let p = loss(&[1.0; 4], &[0.5; 4], &[0.0], &[0.0], 0.0);
        assert_eq!(p.recon, 0.25);
        let p = loss(&[0.0], &[0.0], &[1.0, 1.0], &[0.0, 0.0], 0.5);
        assert_eq!(p.kl, 0.5);
        assert_eq!(p.total, 0.25);
    }

    #[test]
    fn batch_loss_matches_per_sample_loss() {
        let m = VaeModel::<f64>::init(mini(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((6, 5), |_| rng.random::<f64>());
        let noise = standard_normal_matrix::<f64, _>(6, 2, &mut rng);
        let (parts, _) = m.loss_and_gradients(x.view(), noise.view(), 0.3).unwrap();
        let direct = m.batch_loss(x.view(), noise.view(), 0.3).unwrap();
        assert!((parts.total - direct.total).abs() < 1e-14);
        assert!((parts.recon - direct.recon).abs() < 1e-14);
    }

    #[test]
    fn scores_are_deterministic_and_nonnegative() {
        let m = VaeModel::<f64>::init(VaeArchitecture::default(), 8).unwrap();
        let x: Vec<f64> = (0..69).map(|i| (i % 7) as f64 / 7.0).collect();
        let a = m.reconstruction_error(&x).unwrap();
        assert_eq!(a, m.reconstruction_error(&x).unwrap());
        assert!(a >= 0.0);
        let rows = vec![x.clone(), vec![0.0; 69], vec![1.0; 69]];
        let batch = m.score_rows(&rows, 2).unwrap();
        assert_eq!(batch[0], a);
    }

    #[test]
    fn json_round_trip() {
        let m = VaeModel::<f64>::init(mini(), 4).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: VaeModel<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let broken = text.replacen("\"rows\":5", "\"rows\":6", 1);
        assert!(serde_json::from_str::<VaeModel<f64>>(&broken).is_err());
    }
}
