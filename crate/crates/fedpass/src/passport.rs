//! Passport layers: a Linear or Conv2d base whose per-channel scale and bias
//! are derived from secret passport tensors through the base weights and an
//! autoencoder, so the obfuscation adapts to the model as it trains.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    conv2d_forward, conv2d_input_grad, conv2d_weight_grad, linear_forward, Layer,
};
use crate::tensor::Tensor;

/// Minimum separation between two channel means; closer draws are resampled.
const MEAN_COLLISION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassportScope {
    /// One key per round, shared by the whole batch.
    PerBatch,
    /// A fresh key for every sample in the batch.
    PerSample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassportConfig {
    /// Passport mean range: channel means are drawn uniformly from (-N, 0).
    pub mean_range: f64,
    /// Gaussian variance of passport entries around their channel mean.
    pub sigma2: f64,
    /// Passport tensor shape; matches the wrapped layer's per-sample input
    /// shape (conv: [c, h, w]; linear: [in_dim]).
    pub shape: Vec<usize>,
    pub scope: PassportScope,
}

impl PassportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mean_range <= 0.0 {
            return Err(Error::Config("passport mean range must be positive".into()));
        }
        if self.sigma2 < 0.0 {
            return Err(Error::Config("passport variance must be non-negative".into()));
        }
        if self.shape.is_empty() {
            return Err(Error::Config("passport shape must be non-empty".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn elements_per_channel(&self) -> usize {
        self.shape[1..].iter().product::<usize>().max(1)
    }
}

/// The secret obfuscation material of one party for one slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassportKey {
    pub s_gamma: Tensor,
    pub s_beta: Tensor,
    pub channel_means: Vec<f64>,
}

/// Key material handed to a forward pass, resolved per scope.
#[derive(Debug, Clone)]
pub enum KeyAssignment {
    PerBatch(PassportKey),
    PerSample(Vec<PassportKey>),
}

/// Draws one set of channel means from U(-N, 0), resampling near-collisions.
pub fn sample_channel_means(config: &PassportConfig, rng: &mut impl Rng) -> Vec<f64> {
    let c = config.channels();
    let mut means: Vec<f64> = Vec::with_capacity(c);
    while means.len() < c {
        let mu = -config.mean_range * rng.random::<f64>();
        if means.iter().all(|&m| (m - mu).abs() > MEAN_COLLISION_EPS) {
            means.push(mu);
        }
    }
    means
}

/// Draws the channel means from U(-N, 0), resampling near-collisions, then
/// fills both passports i.i.d. from N(mu_j, sigma^2) per channel.
pub fn sample_passport(config: &PassportConfig, rng: &mut impl Rng) -> PassportKey {
    let means = sample_channel_means(config, rng);
    sample_passport_with_means(config, &means, rng)
}

/// Fills both passports i.i.d. from N(mu_j, sigma^2) around the supplied
/// channel means. Per-sample keys within one forward pass share their means
/// so that sigma^2 alone controls the cross-sample passport spread.
pub fn sample_passport_with_means(
    config: &PassportConfig,
    means: &[f64],
    rng: &mut impl Rng,
) -> PassportKey {
    let c = config.channels();
    let per = config.elements_per_channel();
    let sigma = config.sigma2.sqrt();
    let mut draw = |mu: f64| -> f64 {
        if sigma == 0.0 {
            mu
        } else {
            Normal::new(mu, sigma).unwrap().sample(rng)
        }
    };
    let mut g = Vec::with_capacity(c * per);
    let mut b = Vec::with_capacity(c * per);
    for j in 0..c {
        for _ in 0..per {
            g.push(draw(means[j]));
        }
    }
    for j in 0..c {
        for _ in 0..per {
            b.push(draw(means[j]));
        }
    }
    PassportKey {
        s_gamma: Tensor::new(config.shape.clone(), g).unwrap(),
        s_beta: Tensor::new(config.shape.clone(), b).unwrap(),
        channel_means: means.to_vec(),
    }
}

/// A base layer whose output is rewritten as gamma * (W x) + beta, with gamma
/// and beta derived from passports. The base bias is unused inside a slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassportLayer {
    pub base: Layer,
    /// Encoder weights, hidden x q where q is the flattened size of W applied
    /// to a passport.
    pub encoder: Tensor,
    /// Decoder weights, q x hidden.
    pub decoder: Tensor,
    pub config: PassportConfig,
}

/// Per-key intermediate values retained by a forward pass.
#[derive(Debug, Clone)]
pub struct KeyGroupTrace {
    pub key: PassportKey,
    pub rows: std::ops::Range<usize>,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub p_gamma: Tensor,
    pub a_gamma: Tensor,
    pub p_beta: Tensor,
    pub a_beta: Tensor,
}

#[derive(Debug, Clone)]
pub struct SlotTrace {
    /// Pre-obfuscation base output W x for the whole batch.
    pub z: Tensor,
    pub groups: Vec<KeyGroupTrace>,
}

#[derive(Debug, Clone)]
pub struct PassportGradients {
    pub weight: Tensor,
    pub encoder: Tensor,
    pub decoder: Tensor,
}

/// The weight gradient split into its three backpropagation paths.
#[derive(Debug, Clone)]
pub struct WeightPathDecomposition {
    pub w_path: Tensor,
    pub gamma_path: Tensor,
    pub beta_path: Tensor,
}

fn matvec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    debug_assert_eq!(cols, v.len());
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let row = &m.data()[r * cols..(r + 1) * cols];
        out[r] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

fn matvec_t(m: &Tensor, v: &[f64]) -> Vec<f64> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    debug_assert_eq!(rows, v.len());
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let row = &m.data()[r * cols..(r + 1) * cols];
        for c in 0..cols {
            out[c] += row[c] * v[r];
        }
    }
    out
}

fn outer_add(acc: &mut Tensor, u: &[f64], v: &[f64]) {
    let cols = v.len();
    let data = acc.data_mut();
    for (r, &uv) in u.iter().enumerate() {
        let row = &mut data[r * cols..(r + 1) * cols];
        for (c, &vv) in v.iter().enumerate() {
            row[c] += uv * vv;
        }
    }
}

impl PassportLayer {
    pub fn new(base: Layer, config: PassportConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let q = passport_map_dim(&base, &config)?;
        let hidden = (q + 3) / 4;
        let hidden = hidden.max(1);
        let bound = (6.0 / (q + hidden) as f64).sqrt();
        let mut rand_mat = |r: usize, c: usize| {
            Tensor::new(
                vec![r, c],
                (0..r * c)
                    .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                    .collect(),
            )
            .unwrap()
        };
        let encoder = rand_mat(hidden, q);
        let decoder = rand_mat(q, hidden);
        let mut layer = PassportLayer {
            base,
            encoder,
            decoder,
            config,
        };
        layer.normalize_initial_scale(rng)?;
        Ok(layer)
    }

    /// Rescales the freshly initialized decoder so the derived scale factor
    /// starts with unit root-mean-square magnitude. The raw magnitude grows
    /// with the key mean range, which makes early optimization unstable; the
    /// derivation formula itself is unchanged and training is free to move
    /// the autoencoder anywhere from this starting point.
    fn normalize_initial_scale(&mut self, rng: &mut impl Rng) -> Result<()> {
        let key = sample_passport(&self.config, rng);
        let (gamma, beta) = self.derive_scale_bias(&key)?;
        let sq: f64 = gamma
            .data()
            .iter()
            .chain(beta.data().iter())
            .map(|v| v * v)
            .sum();
        let rms = (sq / (gamma.data().len() + beta.data().len()) as f64).sqrt();
        if rms > 1e-12 {
            let scale = 1.0 / rms;
            for v in self.decoder.data_mut() {
                *v *= scale;
            }
        }
        Ok(())
    }

    /// Identity autoencoder (hidden dim = q, E = D = I); useful wherever the
    /// derived gamma/beta must equal Avg(W s) exactly.
    pub fn with_identity_autoencoder(base: Layer, config: PassportConfig) -> Result<Self> {
        config.validate()?;
        let q = passport_map_dim(&base, &config)?;
        let mut eye = Tensor::zeros(vec![q, q]);
        for i in 0..q {
            eye.data_mut()[i * q + i] = 1.0;
        }
        Ok(PassportLayer {
            base,
            encoder: eye.clone(),
            decoder: eye,
            config,
        })
    }

    pub fn out_channels(&self) -> usize {
        match &self.base {
            Layer::Linear { weight, .. } => weight.shape()[0],
            Layer::Conv2d { weight, .. } => weight.shape()[0],
            _ => unreachable!("passport base is linear or conv"),
        }
    }

    /// Applies the base linear map (no bias) to a single passport-shaped
    /// tensor and returns the flattened result of length q.
    fn base_map(&self, s: &Tensor) -> Result<Vec<f64>> {
        let mut shape = vec![1usize];
        shape.extend_from_slice(s.shape());
        let x = s.reshape(shape)?;
        let out = match &self.base {
            Layer::Linear { weight, .. } => linear_forward(weight, None, &x)?,
            Layer::Conv2d { weight, stride, .. } => conv2d_forward(weight, None, &x, *stride)?,
            _ => unreachable!(),
        };
        Ok(out.into_data())
    }

    /// Gradient of the base map with respect to its weights, for a given
    /// passport input and output cotangent of length q.
    fn base_map_weight_grad(&self, s: &Tensor, cotangent: &[f64]) -> Result<Tensor> {
        let mut in_shape = vec![1usize];
        in_shape.extend_from_slice(s.shape());
        let x = s.reshape(in_shape)?;
        match &self.base {
            Layer::Linear { weight, .. } => {
                let (o, i) = (weight.shape()[0], weight.shape()[1]);
                let mut dw = Tensor::zeros(vec![o, i]);
                outer_add(&mut dw, cotangent, x.data());
                Ok(dw)
            }
            Layer::Conv2d { weight, stride, .. } => {
                let mut out_shape = vec![1usize];
                out_shape.extend_from_slice(&self.map_output_shape()?);
                let g = Tensor::new(out_shape, cotangent.to_vec())?;
                conv2d_weight_grad(&x, &g, weight.shape(), *stride)
            }
            _ => unreachable!(),
        }
    }

    /// Shape of W applied to a passport, without the batch axis.
    fn map_output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = vec![1usize];
        shape.extend_from_slice(&self.config.shape);
        let out = match &self.base {
            Layer::Linear { weight, bias } => Layer::Linear {
                weight: weight.clone(),
                bias: bias.clone(),
            }
            .output_shape(&shape)?,
            Layer::Conv2d {
                weight,
                bias,
                stride,
            } => Layer::Conv2d {
                weight: weight.clone(),
                bias: bias.clone(),
                stride: *stride,
            }
            .output_shape(&shape)?,
            _ => unreachable!(),
        };
        Ok(out[1..].to_vec())
    }

    /// Spatial size pooled by Avg per output channel (1 for linear bases).
    fn avg_span(&self) -> Result<usize> {
        let out = self.map_output_shape()?;
        Ok(out[1..].iter().product::<usize>().max(1))
    }

    fn check_key(&self, key: &PassportKey) -> Result<()> {
        if key.s_gamma.shape() != self.config.shape.as_slice()
            || key.s_beta.shape() != self.config.shape.as_slice()
        {
            return Err(Error::Shape(format!(
                "passport key shape {:?} does not match config {:?}",
                key.s_gamma.shape(),
                self.config.shape
            )));
        }
        Ok(())
    }

    /// gamma = Avg(D(E(W s_gamma))), beta = Avg(D(E(W s_beta))); one scalar
    /// per output channel of the base layer.
    pub fn derive_scale_bias(&self, key: &PassportKey) -> Result<(Tensor, Tensor)> {
        let (g, b) = self.derive_with_trace(key)?;
        Ok((g.0, b.0))
    }

    /// Like `derive_scale_bias` but also returns (p, a) intermediates.
    #[allow(clippy::type_complexity)]
    fn derive_with_trace(
        &self,
        key: &PassportKey,
    ) -> Result<((Tensor, Tensor, Tensor), (Tensor, Tensor, Tensor))> {
        self.check_key(key)?;
        let span = self.avg_span()?;
        let co = self.out_channels();
        let derive = |s: &Tensor| -> Result<(Tensor, Tensor, Tensor)> {
            let p = self.base_map(s)?;
            let a = matvec(&self.encoder, &p);
            let d = matvec(&self.decoder, &a);
            let mut avg = vec![0.0; co];
            for c in 0..co {
                avg[c] = d[c * span..(c + 1) * span].iter().sum::<f64>() / span as f64;
            }
            Ok((
                Tensor::new(vec![co], avg)?,
                Tensor::from_vec(p),
                Tensor::from_vec(a),
            ))
        };
        Ok((derive(&key.s_gamma)?, derive(&key.s_beta)?))
    }

    /// Returns gamma(W x) + beta for the batch, plus the trace the backward
    /// pass needs. Keys are per batch or per sample according to assignment.
    pub fn forward(&self, x: &Tensor, keys: &KeyAssignment) -> Result<(Tensor, SlotTrace)> {
        let batch = x.shape()[0];
        let z = match &self.base {
            Layer::Linear { weight, .. } => linear_forward(weight, None, x)?,
            Layer::Conv2d { weight, stride, .. } => conv2d_forward(weight, None, x, *stride)?,
            _ => unreachable!(),
        };
        let groups: Vec<(PassportKey, std::ops::Range<usize>)> = match keys {
            KeyAssignment::PerBatch(k) => vec![(k.clone(), 0..batch)],
            KeyAssignment::PerSample(ks) => {
                if ks.len() != batch {
                    return Err(Error::Shape(format!(
                        "{} per-sample keys for batch of {batch}",
                        ks.len()
                    )));
                }
                ks.iter()
                    .enumerate()
                    .map(|(i, k)| (k.clone(), i..i + 1))
                    .collect()
            }
        };
        let co = self.out_channels();
        let span = z.len() / (batch * co);
        let mut out = z.clone();
        let mut traces = Vec::with_capacity(groups.len());
        for (key, rows) in groups {
            let ((gamma, p_g, a_g), (beta, p_b, a_b)) = self.derive_with_trace(&key)?;
            for r in rows.clone() {
                for c in 0..co {
                    let (gv, bv) = (gamma.data()[c], beta.data()[c]);
                    for s in 0..span {
                        let idx = (r * co + c) * span + s;
                        out.data_mut()[idx] = gv * z.data()[idx] + bv;
                    }
                }
            }
            traces.push(KeyGroupTrace {
                key,
                rows,
                gamma,
                beta,
                p_gamma: p_g,
                a_gamma: a_g,
                p_beta: p_b,
                a_beta: a_b,
            });
        }
        Ok((out, SlotTrace { z, groups: traces }))
    }

    /// Full backward pass: gradients for W (all three paths summed), the
    /// autoencoder parameters, and the layer input.
    pub fn backward(
        &self,
        x: &Tensor,
        trace: &SlotTrace,
        out_grad: &Tensor,
    ) -> Result<(PassportGradients, Tensor)> {
        let (grads, dx, _) = self.backward_inner(x, trace, out_grad)?;
        Ok((grads, dx))
    }

    /// Backward pass that additionally reports the three W-gradient paths
    /// separately; their sum equals the monolithic weight gradient.
    pub fn backward_with_paths(
        &self,
        x: &Tensor,
        trace: &SlotTrace,
        out_grad: &Tensor,
    ) -> Result<(PassportGradients, Tensor, WeightPathDecomposition)> {
        self.backward_inner(x, trace, out_grad)
    }

    fn backward_inner(
        &self,
        x: &Tensor,
        trace: &SlotTrace,
        out_grad: &Tensor,
    ) -> Result<(PassportGradients, Tensor, WeightPathDecomposition)> {
        let batch = x.shape()[0];
        trace.z.assert_same_shape(out_grad, "passport backward out_grad")?;
        if trace.groups.iter().map(|g| g.rows.len()).sum::<usize>() != batch {
            return Err(Error::Shape("trace does not cover the batch".into()));
        }
        let co = self.out_channels();
        let span = trace.z.len() / (batch * co);
        let avg_span = self.avg_span()?;
        let weight_shape = match &self.base {
            Layer::Linear { weight, .. } | Layer::Conv2d { weight, .. } => {
                weight.shape().to_vec()
            }
            _ => unreachable!(),
        };

        // dz accumulates gamma * g for the base backward (the W path and dx).
        let mut dz = Tensor::zeros(out_grad.shape().to_vec());
        let mut d_encoder = Tensor::zeros(self.encoder.shape().to_vec());
        let mut d_decoder = Tensor::zeros(self.decoder.shape().to_vec());
        let mut dw_gamma = Tensor::zeros(weight_shape.clone());
        let mut dw_beta = Tensor::zeros(weight_shape.clone());

        for group in &trace.groups {
            let mut dgamma = vec![0.0; co];
            let mut dbeta = vec![0.0; co];
            for r in group.rows.clone() {
                for c in 0..co {
                    for s in 0..span {
                        let idx = (r * co + c) * span + s;
                        let g = out_grad.data()[idx];
                        dgamma[c] += g * trace.z.data()[idx];
                        dbeta[c] += g;
                        dz.data_mut()[idx] = group.gamma.data()[c] * g;
                    }
                }
            }
            // Avg backward: each pooled element shares the channel gradient.
            let expand = |dchan: &[f64]| -> Vec<f64> {
                let mut dd = vec![0.0; co * avg_span];
                for c in 0..co {
                    let v = dchan[c] / avg_span as f64;
                    for s in 0..avg_span {
                        dd[c * avg_span + s] = v;
                    }
                }
                dd
            };
            // gamma path: through D, E, then the base map on s_gamma.
            let dd_g = expand(&dgamma);
            outer_add(&mut d_decoder, &dd_g, group.a_gamma.data());
            let da_g = matvec_t(&self.decoder, &dd_g);
            outer_add(&mut d_encoder, &da_g, group.p_gamma.data());
            let dp_g = matvec_t(&self.encoder, &da_g);
            dw_gamma.add_scaled(&self.base_map_weight_grad(&group.key.s_gamma, &dp_g)?, 1.0)?;
            // beta path.
            let dd_b = expand(&dbeta);
            outer_add(&mut d_decoder, &dd_b, group.a_beta.data());
            let da_b = matvec_t(&self.decoder, &dd_b);
            outer_add(&mut d_encoder, &da_b, group.p_beta.data());
            let dp_b = matvec_t(&self.encoder, &da_b);
            dw_beta.add_scaled(&self.base_map_weight_grad(&group.key.s_beta, &dp_b)?, 1.0)?;
        }

        let (dw_w, dx) = match &self.base {
            Layer::Linear { weight, .. } => {
                let (o, i) = (weight.shape()[0], weight.shape()[1]);
                let mut dw = Tensor::zeros(vec![o, i]);
                let mut dxv = Tensor::zeros(x.shape().to_vec());
                for r in 0..batch {
                    let xrow = &x.data()[r * i..(r + 1) * i];
                    for p in 0..o {
                        let g = dz.data()[r * o + p];
                        let dwp = &mut dw.data_mut()[p * i..(p + 1) * i];
                        for q in 0..i {
                            dwp[q] += g * xrow[q];
                        }
                    }
                }
                for r in 0..batch {
                    let dxr = &mut dxv.data_mut()[r * i..(r + 1) * i];
                    for p in 0..o {
                        let g = dz.data()[r * o + p];
                        let wrow = &weight.data()[p * i..(p + 1) * i];
                        for q in 0..i {
                            dxr[q] += g * wrow[q];
                        }
                    }
                }
                (dw, dxv)
            }
            Layer::Conv2d { weight, stride, .. } => {
                let dw = conv2d_weight_grad(x, &dz, weight.shape(), *stride)?;
                let dx = conv2d_input_grad(weight, &dz, x.shape(), *stride)?;
                (dw, dx)
            }
            _ => unreachable!(),
        };

        let mut weight = dw_w.clone();
        weight.add_scaled(&dw_gamma, 1.0)?;
        weight.add_scaled(&dw_beta, 1.0)?;
        Ok((
            PassportGradients {
                weight,
                encoder: d_encoder,
                decoder: d_decoder,
            },
            dx,
            WeightPathDecomposition {
                w_path: dw_w,
                gamma_path: dw_gamma,
                beta_path: dw_beta,
            },
        ))
    }
}

/// Flattened size of the base linear map applied to a passport.
pub fn passport_map_dim(base: &Layer, config: &PassportConfig) -> Result<usize> {
    let mut shape = vec![1usize];
    shape.extend_from_slice(&config.shape);
    match base {
        Layer::Linear { .. } | Layer::Conv2d { .. } => {
            let out = base.output_shape(&shape)?;
            Ok(out[1..].iter().product())
        }
        _ => Err(Error::Config(
            "passport slots wrap only Linear or Conv2d layers".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn cfg(shape: Vec<usize>, n: f64, sigma2: f64) -> PassportConfig {
        PassportConfig {
            mean_range: n,
            sigma2,
            shape,
            scope: PassportScope::PerBatch,
        }
    }

    #[test]
    fn sigma_zero_gives_channel_means() {
        let c = cfg(vec![4, 3], 10.0, 0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let key = sample_passport(&c, &mut rng);
        for j in 0..4 {
            for e in 0..3 {
                assert_eq!(key.s_gamma.data()[j * 3 + e], key.channel_means[j]);
                assert_eq!(key.s_beta.data()[j * 3 + e], key.channel_means[j]);
            }
            assert!(key.channel_means[j] > -10.0 && key.channel_means[j] < 0.0);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let c = cfg(vec![3], 5.0, 1.0);
        let k1 = sample_passport(&c, &mut ChaCha20Rng::seed_from_u64(11));
        let k2 = sample_passport(&c, &mut ChaCha20Rng::seed_from_u64(11));
        let k3 = sample_passport(&c, &mut ChaCha20Rng::seed_from_u64(12));
        assert_eq!(k1.s_gamma.data(), k2.s_gamma.data());
        assert_eq!(k1.channel_means, k2.channel_means);
        assert_ne!(k1.channel_means, k3.channel_means);
    }

    #[test]
    fn gaussian_moments_match() {
        // One channel, many elements: sample mean near mu, variance near 1.
        let c = cfg(vec![1, 10_000], 50.0, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let key = sample_passport(&c, &mut rng);
        let mu = key.channel_means[0];
        let n = 10_000.0;
        let mean = key.s_gamma.data().iter().sum::<f64>() / n;
        let var = key
            .s_gamma
            .data()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        assert!((mean - mu).abs() < 3.0 / n.sqrt());
        assert!((var - 1.0).abs() < 0.1);
    }

    #[test]
    fn channel_means_distinct_over_many_draws() {
        let c = cfg(vec![10], 1.0, 0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let key = sample_passport(&c, &mut rng);
            let mut means = key.channel_means.clone();
            means.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in means.windows(2) {
                assert!(w[1] - w[0] > MEAN_COLLISION_EPS);
            }
        }
    }

    #[test]
    fn identity_pipeline_scalar_example() {
        // W=[[2]], s_gamma=[0.5], s_beta=[1] -> gamma=[1], beta=[2]; x=[3] -> 8.
        let base = Layer::Linear {
            weight: Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            bias: Tensor::zeros(vec![1]),
        };
        let layer =
            PassportLayer::with_identity_autoencoder(base, cfg(vec![1], 1.0, 0.0)).unwrap();
        let key = PassportKey {
            s_gamma: Tensor::from_vec(vec![0.5]),
            s_beta: Tensor::from_vec(vec![1.0]),
            channel_means: vec![-0.5],
        };
        let (gamma, beta) = layer.derive_scale_bias(&key).unwrap();
        assert_eq!(gamma.data(), &[1.0]);
        assert_eq!(beta.data(), &[2.0]);
        let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let (out, _) = layer
            .forward(&x, &KeyAssignment::PerBatch(key))
            .unwrap();
        assert_eq!(out.data(), &[8.0]);
    }

    #[test]
    fn identity_autoencoder_all_ones_passport() {
        let mut eye = Tensor::zeros(vec![2, 2]);
        eye.data_mut()[0] = 1.0;
        eye.data_mut()[3] = 1.0;
        let base = Layer::Linear {
            weight: eye,
            bias: Tensor::zeros(vec![2]),
        };
        let layer =
            PassportLayer::with_identity_autoencoder(base, cfg(vec![2], 1.0, 0.0)).unwrap();
        let key = PassportKey {
            s_gamma: Tensor::from_vec(vec![1.0, 1.0]),
            s_beta: Tensor::from_vec(vec![0.0, 0.0]),
            channel_means: vec![-0.1, -0.2],
        };
        let (gamma, beta) = layer.derive_scale_bias(&key).unwrap();
        assert_eq!(gamma.data(), &[1.0, 1.0]);
        assert_eq!(beta.data(), &[0.0, 0.0]);
    }

    #[test]
    fn conv_beta_equals_spatial_mean_of_convolved_passport() {
        // 1->1 channel conv on a 2x2 input with a 1x1 kernel of weight w:
        // beta must equal mean(w * s_beta).
        let base = Layer::Conv2d {
            weight: Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap(),
            bias: Tensor::zeros(vec![1]),
            stride: 1,
        };
        let layer = PassportLayer::with_identity_autoencoder(
            base,
            cfg(vec![1, 2, 2], 1.0, 0.0),
        )
        .unwrap();
        let s_beta = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let key = PassportKey {
            s_gamma: Tensor::new(vec![1, 2, 2], vec![0.0; 4]).unwrap(),
            s_beta: s_beta.clone(),
            channel_means: vec![-1.0],
        };
        let (_, beta) = layer.derive_scale_bias(&key).unwrap();
        // brute-force conv oracle: 1x1 kernel, so conv output = 3*s elementwise
        let expect = s_beta.data().iter().map(|v| 3.0 * v).sum::<f64>() / 4.0;
        assert!((beta.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn neutral_passports_match_plain_forward() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let base = Layer::linear_init(3, 2, &mut rng);
        let plain = match &base {
            Layer::Linear { weight, .. } => Layer::Linear {
                weight: weight.clone(),
                bias: Tensor::zeros(vec![2]),
            },
            _ => unreachable!(),
        };
        let layer =
            PassportLayer::with_identity_autoencoder(base, cfg(vec![3], 1.0, 0.0)).unwrap();
        // Engineer gamma = 1, beta = 0: need W s_gamma summed per output to be 1.
        // Use least squares via the 2x3 system; easier: solve with W^T (W W^T)^-1.
        let w = match &layer.base {
            Layer::Linear { weight, .. } => weight.clone(),
            _ => unreachable!(),
        };
        // Solve W s = [1, 1] and W s = [0, 0] (the latter is s = 0).
        let target = [1.0, 1.0];
        // 2x2 normal matrix M = W W^T
        let wd = w.data();
        let mut m = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for j in 0..3 {
                    m[a][b] += wd[a * 3 + j] * wd[b * 3 + j];
                }
            }
        }
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let y = [
            (m[1][1] * target[0] - m[0][1] * target[1]) / det,
            (-m[1][0] * target[0] + m[0][0] * target[1]) / det,
        ];
        let mut s = vec![0.0; 3];
        for j in 0..3 {
            s[j] = wd[j] * y[0] + wd[3 + j] * y[1];
        }
        let key = PassportKey {
            s_gamma: Tensor::from_vec(s),
            s_beta: Tensor::from_vec(vec![0.0; 3]),
            channel_means: vec![-0.1, -0.2, -0.3],
        };
        let x = Tensor::new(vec![2, 3], vec![0.4, -1.2, 0.3, 2.0, 0.1, -0.7]).unwrap();
        let (out, _) = layer.forward(&x, &KeyAssignment::PerBatch(key)).unwrap();
        let plain_out = plain.forward(&x).unwrap();
        assert!(out.max_abs_diff(&plain_out) < 1e-12);
    }

    #[test]
    fn passport_forward_matches_scalar_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let base = Layer::linear_init(4, 3, &mut rng);
        let config = cfg(vec![4], 5.0, 1.0);
        let layer = PassportLayer::new(base, config.clone(), &mut rng).unwrap();
        let key = sample_passport(&config, &mut rng);
        let x = Tensor::new(vec![2, 4], (0..8).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let (out, _) = layer
            .forward(&x, &KeyAssignment::PerBatch(key.clone()))
            .unwrap();

        // scalar-loop recomputation of Eq-style pipeline
        let w = match &layer.base {
            Layer::Linear { weight, .. } => weight.clone(),
            _ => unreachable!(),
        };
        let apply = |s: &Tensor| -> Vec<f64> {
            let mut p = vec![0.0; 3];
            for o in 0..3 {
                for i in 0..4 {
                    p[o] += w.data()[o * 4 + i] * s.data()[i];
                }
            }
            let h = layer.encoder.shape()[0];
            let mut a = vec![0.0; h];
            for r in 0..h {
                for c in 0..3 {
                    a[r] += layer.encoder.data()[r * 3 + c] * p[c];
                }
            }
            let mut d = vec![0.0; 3];
            for r in 0..3 {
                for c in 0..h {
                    d[r] += layer.decoder.data()[r * h + c] * a[c];
                }
            }
            d
        };
        let gamma = apply(&key.s_gamma);
        let beta = apply(&key.s_beta);
        let mut expect = vec![0.0; 6];
        for r in 0..2 {
            for o in 0..3 {
                let mut z = 0.0;
                for i in 0..4 {
                    z += w.data()[o * 4 + i] * x.data()[r * 4 + i];
                }
                expect[r * 3 + o] = gamma[o] * z + beta[o];
            }
        }
        for (got, want) in out.data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_keys_change_output() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let config = cfg(vec![4], 10.0, 1.0);
        let base = Layer::linear_init(4, 3, &mut rng);
        let layer = PassportLayer::new(base, config.clone(), &mut rng).unwrap();
        let x = Tensor::new(vec![1, 4], vec![0.3, -0.2, 0.9, 0.5]).unwrap();
        for _ in 0..100 {
            let k1 = sample_passport(&config, &mut rng);
            let k2 = sample_passport(&config, &mut rng);
            let (o1, _) = layer.forward(&x, &KeyAssignment::PerBatch(k1)).unwrap();
            let (o2, _) = layer.forward(&x, &KeyAssignment::PerBatch(k2)).unwrap();
            assert!(o1.max_abs_diff(&o2) > 0.0);
        }
    }
}
