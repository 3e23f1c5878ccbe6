//! Layers with analytic forward/backward rules, plus the two losses used by
//! training and the attacks. Input gradients are always produced; the
//! inversion attacks depend on them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Layer {
    /// weight is out_dim x in_dim, bias is out_dim.
    Linear { weight: Tensor, bias: Tensor },
    /// weight is out_ch x in_ch x k x k, bias is out_ch. Valid padding.
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
    },
    ReLU,
    Flatten,
    /// Non-overlapping window average pooling.
    AvgPool2d { window: usize },
    /// Per-channel scale and shift. Used by attackers that jointly optimize a
    /// guessed obfuscation alongside the input.
    ChannelAffine { gamma: Tensor, beta: Tensor },
}

/// Parameter gradients mirroring one layer's parameters.
#[derive(Debug, Clone)]
pub enum LayerGradient {
    None,
    Linear { weight: Tensor, bias: Tensor },
    Conv2d { weight: Tensor, bias: Tensor },
    ChannelAffine { gamma: Tensor, beta: Tensor },
    Passport {
        weight: Tensor,
        encoder: Tensor,
        decoder: Tensor,
    },
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound).collect()
}

impl Layer {
    pub fn linear_init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Layer {
        Layer::Linear {
            weight: Tensor::new(
                vec![out_dim, in_dim],
                xavier(rng, in_dim, out_dim, in_dim * out_dim),
            )
            .unwrap(),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn conv2d_init(in_ch: usize, out_ch: usize, k: usize, rng: &mut impl Rng) -> Layer {
        let fan_in = in_ch * k * k;
        let fan_out = out_ch * k * k;
        Layer::Conv2d {
            weight: Tensor::new(
                vec![out_ch, in_ch, k, k],
                xavier(rng, fan_in, fan_out, out_ch * in_ch * k * k),
            )
            .unwrap(),
            bias: Tensor::zeros(vec![out_ch]),
            stride: 1,
        }
    }

    /// Output shape as a pure function of the input shape (leading batch axis
    /// included in both).
    pub fn output_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Linear { weight, .. } => {
                let (o, i) = (weight.shape()[0], weight.shape()[1]);
                if in_shape.len() != 2 || in_shape[1] != i {
                    return Err(Error::Shape(format!(
                        "linear expects [b, {i}], got {in_shape:?}"
                    )));
                }
                Ok(vec![in_shape[0], o])
            }
            Layer::Conv2d { weight, stride, .. } => {
                let (co, ci, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
                if in_shape.len() != 4 || in_shape[1] != ci || in_shape[2] < k || in_shape[3] < k {
                    return Err(Error::Shape(format!(
                        "conv2d expects [b, {ci}, >={k}, >={k}], got {in_shape:?}"
                    )));
                }
                let oh = (in_shape[2] - k) / stride + 1;
                let ow = (in_shape[3] - k) / stride + 1;
                Ok(vec![in_shape[0], co, oh, ow])
            }
            Layer::ReLU => Ok(in_shape.to_vec()),
            Layer::Flatten => Ok(vec![in_shape[0], in_shape[1..].iter().product()]),
            Layer::AvgPool2d { window } => {
                if in_shape.len() != 4 || in_shape[2] % window != 0 || in_shape[3] % window != 0 {
                    return Err(Error::Shape(format!(
                        "avgpool window {window} does not divide {in_shape:?}"
                    )));
                }
                Ok(vec![
                    in_shape[0],
                    in_shape[1],
                    in_shape[2] / window,
                    in_shape[3] / window,
                ])
            }
            Layer::ChannelAffine { gamma, .. } => {
                let c = gamma.len();
                if in_shape.len() < 2 || in_shape[1] != c {
                    return Err(Error::Shape(format!(
                        "channel affine expects channel axis {c}, got {in_shape:?}"
                    )));
                }
                Ok(in_shape.to_vec())
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Linear { weight, bias } => linear_forward(weight, Some(bias), x),
            Layer::Conv2d {
                weight,
                bias,
                stride,
            } => conv2d_forward(weight, Some(bias), x, *stride),
            Layer::ReLU => Ok(x.map(|v| if v > 0.0 { v } else { 0.0 })),
            Layer::Flatten => x.reshape(self.output_shape(x.shape())?),
            Layer::AvgPool2d { window } => avgpool_forward(x, *window),
            Layer::ChannelAffine { gamma, beta } => channel_affine_forward(x, gamma, beta),
        }
    }

    /// Returns (parameter gradients, input gradient).
    pub fn backward(&self, x: &Tensor, out_grad: &Tensor) -> Result<(LayerGradient, Tensor)> {
        out_grad.assert_same_shape(
            &Tensor::zeros(self.output_shape(x.shape())?),
            "layer backward out_grad",
        )?;
        match self {
            Layer::Linear { weight, .. } => {
                let (b, i) = (x.shape()[0], x.shape()[1]);
                let o = weight.shape()[0];
                // dW[p,q] = sum_r g[r,p] x[r,q]; db[p] = sum_r g[r,p]; dx = g W
                let mut dw = vec![0.0; o * i];
                let mut db = vec![0.0; o];
                for r in 0..b {
                    for p in 0..o {
                        let g = out_grad.data()[r * o + p];
                        db[p] += g;
                        let row = &x.data()[r * i..(r + 1) * i];
                        let dwp = &mut dw[p * i..(p + 1) * i];
                        for q in 0..i {
                            dwp[q] += g * row[q];
                        }
                    }
                }
                let mut dx = vec![0.0; b * i];
                for r in 0..b {
                    for p in 0..o {
                        let g = out_grad.data()[r * o + p];
                        let wrow = &weight.data()[p * i..(p + 1) * i];
                        let dxr = &mut dx[r * i..(r + 1) * i];
                        for q in 0..i {
                            dxr[q] += g * wrow[q];
                        }
                    }
                }
                Ok((
                    LayerGradient::Linear {
                        weight: Tensor::new(vec![o, i], dw)?,
                        bias: Tensor::new(vec![o], db)?,
                    },
                    Tensor::new(vec![b, i], dx)?,
                ))
            }
            Layer::Conv2d { weight, stride, .. } => {
                let dw = conv2d_weight_grad(x, out_grad, weight.shape(), *stride)?;
                let db = conv2d_bias_grad(out_grad);
                let dx = conv2d_input_grad(weight, out_grad, x.shape(), *stride)?;
                Ok((LayerGradient::Conv2d { weight: dw, bias: db }, dx))
            }
            Layer::ReLU => {
                let dx: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(out_grad.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                Ok((LayerGradient::None, Tensor::new(x.shape().to_vec(), dx)?))
            }
            Layer::Flatten => Ok((LayerGradient::None, out_grad.reshape(x.shape().to_vec())?)),
            Layer::AvgPool2d { window } => {
                Ok((LayerGradient::None, avgpool_backward(x.shape(), out_grad, *window)?))
            }
            Layer::ChannelAffine { gamma, .. } => {
                let c = gamma.len();
                let (b, spatial) = (x.shape()[0], x.len() / (x.shape()[0] * c));
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; x.len()];
                for r in 0..b {
                    for ch in 0..c {
                        for s in 0..spatial {
                            let idx = (r * c + ch) * spatial + s;
                            let g = out_grad.data()[idx];
                            dgamma[ch] += g * x.data()[idx];
                            dbeta[ch] += g;
                            dx[idx] = g * gamma.data()[ch];
                        }
                    }
                }
                Ok((
                    LayerGradient::ChannelAffine {
                        gamma: Tensor::new(vec![c], dgamma)?,
                        beta: Tensor::new(vec![c], dbeta)?,
                    },
                    Tensor::new(x.shape().to_vec(), dx)?,
                ))
            }
        }
    }

    pub fn has_params(&self) -> bool {
        !matches!(self, Layer::ReLU | Layer::Flatten | Layer::AvgPool2d { .. })
    }
}

pub fn linear_forward(weight: &Tensor, bias: Option<&Tensor>, x: &Tensor) -> Result<Tensor> {
    let (o, i) = (weight.shape()[0], weight.shape()[1]);
    if x.shape().len() != 2 || x.shape()[1] != i {
        return Err(Error::Shape(format!(
            "linear expects [b, {i}], got {:?}",
            x.shape()
        )));
    }
    let b = x.shape()[0];
    let mut out = vec![0.0; b * o];
    for r in 0..b {
        let row = &x.data()[r * i..(r + 1) * i];
        let out_row = &mut out[r * o..(r + 1) * o];
        for p in 0..o {
            let wrow = &weight.data()[p * i..(p + 1) * i];
            let mut acc = 0.0;
            for q in 0..i {
                acc += wrow[q] * row[q];
            }
            out_row[p] = acc;
        }
        if let Some(bias) = bias {
            for p in 0..o {
                out_row[p] += bias.data()[p];
            }
        }
    }
    Tensor::new(vec![b, o], out)
}

pub fn conv2d_forward(
    weight: &Tensor,
    bias: Option<&Tensor>,
    x: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let ws = weight.shape();
    let (co, ci, k) = (ws[0], ws[1], ws[2]);
    if x.shape().len() != 4 || x.shape()[1] != ci {
        return Err(Error::Shape(format!(
            "conv2d expects [b, {ci}, h, w], got {:?}",
            x.shape()
        )));
    }
    let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    if h < k || w < k {
        return Err(Error::Shape(format!("input {h}x{w} smaller than kernel {k}")));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = vec![0.0; b * co * oh * ow];
    for r in 0..b {
        for oc in 0..co {
            let bias_v = bias.map(|t| t.data()[oc]).unwrap_or(0.0);
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias_v;
                    for ic in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let xi = x.data()
                                    [((r * ci + ic) * h + y * stride + ky) * w + xo * stride + kx];
                                let wv = weight.data()[((oc * ci + ic) * k + ky) * k + kx];
                                acc += xi * wv;
                            }
                        }
                    }
                    out[((r * co + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, co, oh, ow], out)
}

pub fn conv2d_weight_grad(
    x: &Tensor,
    out_grad: &Tensor,
    weight_shape: &[usize],
    stride: usize,
) -> Result<Tensor> {
    let (co, ci, k) = (weight_shape[0], weight_shape[1], weight_shape[2]);
    let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (out_grad.shape()[2], out_grad.shape()[3]);
    let mut dw = vec![0.0; co * ci * k * k];
    for r in 0..b {
        for oc in 0..co {
            for y in 0..oh {
                for xo in 0..ow {
                    let g = out_grad.data()[((r * co + oc) * oh + y) * ow + xo];
                    for ic in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let xi = x.data()
                                    [((r * ci + ic) * h + y * stride + ky) * w + xo * stride + kx];
                                dw[((oc * ci + ic) * k + ky) * k + kx] += g * xi;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(weight_shape.to_vec(), dw)
}

pub fn conv2d_bias_grad(out_grad: &Tensor) -> Tensor {
    let (b, co, oh, ow) = (
        out_grad.shape()[0],
        out_grad.shape()[1],
        out_grad.shape()[2],
        out_grad.shape()[3],
    );
    let mut db = vec![0.0; co];
    for r in 0..b {
        for oc in 0..co {
            for s in 0..oh * ow {
                db[oc] += out_grad.data()[(r * co + oc) * oh * ow + s];
            }
        }
    }
    Tensor::new(vec![co], db).unwrap()
}

pub fn conv2d_input_grad(
    weight: &Tensor,
    out_grad: &Tensor,
    input_shape: &[usize],
    stride: usize,
) -> Result<Tensor> {
    let ws = weight.shape();
    let (co, ci, k) = (ws[0], ws[1], ws[2]);
    let (b, h, w) = (input_shape[0], input_shape[2], input_shape[3]);
    let (oh, ow) = (out_grad.shape()[2], out_grad.shape()[3]);
    let mut dx = vec![0.0; b * ci * h * w];
    for r in 0..b {
        for oc in 0..co {
            for y in 0..oh {
                for xo in 0..ow {
                    let g = out_grad.data()[((r * co + oc) * oh + y) * ow + xo];
                    for ic in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = weight.data()[((oc * ci + ic) * k + ky) * k + kx];
                                dx[((r * ci + ic) * h + y * stride + ky) * w + xo * stride + kx] +=
                                    g * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

fn avgpool_forward(x: &Tensor, window: usize) -> Result<Tensor> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h % window != 0 || w % window != 0 {
        return Err(Error::Shape(format!(
            "avgpool window {window} does not divide {h}x{w}"
        )));
    }
    let (oh, ow) = (h / window, w / window);
    let inv = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; b * c * oh * ow];
    for r in 0..b {
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..window {
                        for kx in 0..window {
                            acc += x.data()
                                [((r * c + ch) * h + y * window + ky) * w + xo * window + kx];
                        }
                    }
                    out[((r * c + ch) * oh + y) * ow + xo] = acc * inv;
                }
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

fn avgpool_backward(input_shape: &[usize], out_grad: &Tensor, window: usize) -> Result<Tensor> {
    let (b, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (h / window, w / window);
    let inv = 1.0 / (window * window) as f64;
    let mut dx = vec![0.0; b * c * h * w];
    for r in 0..b {
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let g = out_grad.data()[((r * c + ch) * oh + y) * ow + xo] * inv;
                    for ky in 0..window {
                        for kx in 0..window {
                            dx[((r * c + ch) * h + y * window + ky) * w + xo * window + kx] = g;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

pub fn channel_affine_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let c = gamma.len();
    if x.shape().len() < 2 || x.shape()[1] != c {
        return Err(Error::Shape(format!(
            "channel affine expects channel axis {c}, got {:?}",
            x.shape()
        )));
    }
    let b = x.shape()[0];
    let spatial = x.len() / (b * c);
    let mut out = vec![0.0; x.len()];
    for r in 0..b {
        for ch in 0..c {
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for s in 0..spatial {
                let idx = (r * c + ch) * spatial + s;
                out[idx] = g * x.data()[idx] + bt;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Mean cross-entropy over the batch with a stable log-sum-exp; the gradient
/// is (softmax - onehot) / batch.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "logits must be [b, classes], got {:?}",
            logits.shape()
        )));
    }
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::Shape(format!(
            "{b} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Config(format!("label {bad} out of range 0..{c}")));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * c];
    for r in 0..b {
        let row = &logits.data()[r * c..(r + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[r]];
        for j in 0..c {
            let p = (row[j] - lse).exp();
            grad[r * c + j] = (p - if j == labels[r] { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, Tensor::new(vec![b, c], grad)?))
}

/// Mean squared error and its gradient with respect to the first argument.
pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
    a.assert_same_shape(b, "mse_loss")?;
    let n = a.len() as f64;
    let loss = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    let grad = Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| 2.0 * (x - y) / n)
            .collect(),
    )?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_forward_example() {
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_vec(vec![0.0, 0.0]);
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let y = linear_forward(&w, Some(&b), &x).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = Layer::ReLU.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);

        let x = Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        let g = Tensor::new(vec![1, 2], vec![5.0, 5.0]).unwrap();
        let (_, dx) = Layer::ReLU.backward(&x, &g).unwrap();
        assert_eq!(dx.data(), &[0.0, 5.0]);
    }

    #[test]
    fn linear_backward_scalar_chain_rule() {
        // y = Wx, W=[[2]], x=[3], g=[1] -> dW=[[3]], dx=[2]
        let layer = Layer::Linear {
            weight: Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            bias: Tensor::zeros(vec![1]),
        };
        let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let g = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let (pg, dx) = layer.backward(&x, &g).unwrap();
        match pg {
            LayerGradient::Linear { weight, .. } => assert_eq!(weight.data(), &[3.0]),
            _ => panic!("wrong gradient kind"),
        }
        assert_eq!(dx.data(), &[2.0]);
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let logits = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let (loss, _) = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);

        let logits = Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
        let (loss, grad) = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-9);
        assert!(grad.all_finite());
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        assert!(cross_entropy_loss(&logits, &[2]).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = Tensor::from_vec(vec![1.0, 3.0]);
        let b = Tensor::from_vec(vec![1.0, 1.0]);
        let (loss, _) = mse_loss(&a, &b).unwrap();
        assert_eq!(loss, 2.0);
        let (zero, _) = mse_loss(&a, &a).unwrap();
        assert_eq!(zero, 0.0);
        assert!(mse_loss(&a, &Tensor::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn avgpool_roundtrip_shapes() {
        let x = Tensor::new(vec![1, 1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let y = Layer::AvgPool2d { window: 2 }.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data()[0], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
    }
}
