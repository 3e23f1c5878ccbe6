//! Network: an ordered stack of plain layers and passport slots, with a
//! recorded forward trace, full reverse pass and an in-place SGD step.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerGradient};
use crate::passport::{
    sample_channel_means, sample_passport, sample_passport_with_means, KeyAssignment,
    PassportLayer, PassportScope, SlotTrace,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum NetLayer {
    Plain(Layer),
    Passport(PassportLayer),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<NetLayer>,
}

/// Keys for each passport slot of one forward pass, indexed by layer.
pub type SlotKeys = BTreeMap<usize, KeyAssignment>;

#[derive(Debug, Clone)]
pub struct ActivationTrace {
    /// Input to each layer; `layer_inputs[0]` is the network input.
    pub layer_inputs: Vec<Tensor>,
    pub output: Tensor,
    pub slots: BTreeMap<usize, SlotTrace>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
    pub input: Tensor,
}

impl Network {
    pub fn new(layers: Vec<NetLayer>) -> Network {
        Network { layers }
    }

    pub fn plain(layers: Vec<Layer>) -> Network {
        Network {
            layers: layers.into_iter().map(NetLayer::Plain).collect(),
        }
    }

    pub fn passport_slots(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, NetLayer::Passport(_)).then_some(i))
            .collect()
    }

    pub fn output_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let mut shape = in_shape.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                NetLayer::Plain(l) => l.output_shape(&shape),
                NetLayer::Passport(p) => p.base.output_shape(&shape),
            }
            .map_err(|e| Error::LayerShape {
                layer: i,
                expected: format!("{e}"),
                actual: format!("{shape:?}"),
            })?;
        }
        Ok(shape)
    }

    /// Samples keys for every passport slot, per each slot's scope.
    pub fn sample_keys(&self, batch: usize, rng: &mut impl Rng) -> SlotKeys {
        let mut keys = SlotKeys::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let NetLayer::Passport(p) = layer {
                let assignment = match p.config.scope {
                    PassportScope::PerBatch => {
                        KeyAssignment::PerBatch(sample_passport(&p.config, rng))
                    }
                    PassportScope::PerSample => {
                        let means = sample_channel_means(&p.config, rng);
                        KeyAssignment::PerSample(
                            (0..batch)
                                .map(|_| sample_passport_with_means(&p.config, &means, rng))
                                .collect(),
                        )
                    }
                };
                keys.insert(i, assignment);
            }
        }
        keys
    }

    pub fn forward(&self, x: &Tensor, keys: &SlotKeys) -> Result<ActivationTrace> {
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut slots = BTreeMap::new();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            layer_inputs.push(cur.clone());
            cur = match layer {
                NetLayer::Plain(l) => l.forward(&cur).map_err(|e| Error::LayerShape {
                    layer: i,
                    expected: format!("{e}"),
                    actual: format!("{:?}", cur.shape()),
                })?,
                NetLayer::Passport(p) => {
                    let assignment = keys.get(&i).ok_or_else(|| {
                        Error::Config(format!("no passport key supplied for slot {i}"))
                    })?;
                    let (out, trace) = p.forward(&cur, assignment)?;
                    slots.insert(i, trace);
                    out
                }
            };
            if !cur.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite activation after layer {i}"
                )));
            }
        }
        Ok(ActivationTrace {
            layer_inputs,
            output: cur,
            slots,
        })
    }

    /// Forward without any passport keys; errors if the network has slots.
    pub fn forward_plain(&self, x: &Tensor) -> Result<Tensor> {
        if !self.passport_slots().is_empty() {
            return Err(Error::Config(
                "network has passport slots; keys are required".into(),
            ));
        }
        Ok(self.forward(x, &SlotKeys::new())?.output)
    }

    /// Reverse pass: parameter gradients for every layer plus the gradient
    /// with respect to the network input.
    pub fn backward(&self, trace: &ActivationTrace, out_grad: &Tensor) -> Result<Gradients> {
        if trace.layer_inputs.len() != self.layers.len() {
            return Err(Error::Protocol(
                "activation trace does not match network depth".into(),
            ));
        }
        out_grad.assert_same_shape(&trace.output, "backward out_grad")?;
        let mut grads: Vec<LayerGradient> = Vec::with_capacity(self.layers.len());
        let mut g = out_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.layer_inputs[i];
            let (pg, dx) = match layer {
                NetLayer::Plain(l) => l.backward(x, &g)?,
                NetLayer::Passport(p) => {
                    let slot = trace.slots.get(&i).ok_or_else(|| {
                        Error::Protocol(format!("trace missing passport slot {i}"))
                    })?;
                    let (pg, dx) = p.backward(x, slot, &g)?;
                    (
                        LayerGradient::Passport {
                            weight: pg.weight,
                            encoder: pg.encoder,
                            decoder: pg.decoder,
                        },
                        dx,
                    )
                }
            };
            grads.push(pg);
            g = dx;
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: g,
        })
    }

    /// theta <- theta - lr * (g + weight_decay * theta), in place.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, weight_decay: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradients do not mirror the network".into()));
        }
        let step = |t: &mut Tensor, g: &Tensor| -> Result<()> {
            t.assert_same_shape(g, "sgd_step")?;
            for (p, gv) in t.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * (gv + weight_decay * *p);
            }
            Ok(())
        };
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            match (layer, grad) {
                (NetLayer::Plain(Layer::Linear { weight, bias }), LayerGradient::Linear { weight: gw, bias: gb }) => {
                    step(weight, gw)?;
                    step(bias, gb)?;
                }
                (NetLayer::Plain(Layer::Conv2d { weight, bias, .. }), LayerGradient::Conv2d { weight: gw, bias: gb }) => {
                    step(weight, gw)?;
                    step(bias, gb)?;
                }
                (NetLayer::Plain(Layer::ChannelAffine { gamma, beta }), LayerGradient::ChannelAffine { gamma: gg, beta: gb }) => {
                    step(gamma, gg)?;
                    step(beta, gb)?;
                }
                (NetLayer::Passport(p), LayerGradient::Passport { weight, encoder, decoder }) => {
                    match &mut p.base {
                        Layer::Linear { weight: w, .. } | Layer::Conv2d { weight: w, .. } => {
                            step(w, weight)?
                        }
                        _ => unreachable!(),
                    }
                    step(&mut p.encoder, encoder)?;
                    step(&mut p.decoder, decoder)?;
                }
                (NetLayer::Plain(l), LayerGradient::None) if !l.has_params() => {}
                _ => {
                    return Err(Error::Shape(
                        "gradient kind does not match layer kind".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Visits every trainable parameter tensor; used by oracles that perturb
    /// parameters one coordinate at a time.
    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for layer in &mut self.layers {
            match layer {
                NetLayer::Plain(Layer::Linear { weight, bias }) => {
                    f(weight);
                    f(bias);
                }
                NetLayer::Plain(Layer::Conv2d { weight, bias, .. }) => {
                    f(weight);
                    f(bias);
                }
                NetLayer::Plain(Layer::ChannelAffine { gamma, beta }) => {
                    f(gamma);
                    f(beta);
                }
                NetLayer::Passport(p) => {
                    match &mut p.base {
                        Layer::Linear { weight, .. } | Layer::Conv2d { weight, .. } => f(weight),
                        _ => unreachable!(),
                    }
                    f(&mut p.encoder);
                    f(&mut p.decoder);
                }
                NetLayer::Plain(_) => {}
            }
        }
    }

    /// Flattened copy of every trainable parameter, in visiting order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut me = self.clone();
        me.for_each_param_mut(&mut |t| out.extend_from_slice(t.data()));
        out
    }
}

impl Gradients {
    /// Flattened parameter gradients in the same order as `flat_params`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGradient::None => {}
                LayerGradient::Linear { weight, bias } | LayerGradient::Conv2d { weight, bias } => {
                    out.extend_from_slice(weight.data());
                    out.extend_from_slice(bias.data());
                }
                LayerGradient::ChannelAffine { gamma, beta } => {
                    out.extend_from_slice(gamma.data());
                    out.extend_from_slice(beta.data());
                }
                LayerGradient::Passport {
                    weight,
                    encoder,
                    decoder,
                } => {
                    out.extend_from_slice(weight.data());
                    out.extend_from_slice(encoder.data());
                    out.extend_from_slice(decoder.data());
                }
            }
        }
        out
    }

    fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        for g in &mut self.layers {
            match g {
                LayerGradient::None => {}
                LayerGradient::Linear { weight, bias } | LayerGradient::Conv2d { weight, bias } => {
                    f(weight);
                    f(bias);
                }
                LayerGradient::ChannelAffine { gamma, beta } => {
                    f(gamma);
                    f(beta);
                }
                LayerGradient::Passport {
                    weight,
                    encoder,
                    decoder,
                } => {
                    f(weight);
                    f(encoder);
                    f(decoder);
                }
            }
        }
    }

    /// Euclidean norm of the full gradient vector.
    pub fn global_norm(&self) -> f64 {
        self.flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales the gradient down so its global norm does not exceed `max_norm`.
    ///
    /// Large derived scale factors can blow up early updates at high key
    /// magnitudes; clipping keeps optimization stable without changing the
    /// forward or backward formulas.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let scale = max_norm / norm;
            self.for_each_tensor_mut(|t| {
                for v in t.data_mut() {
                    *v *= scale;
                }
            });
        }
    }
}
