//! Semi-honest privacy attacks against the split protocol: white-box feature
//! inversion of a known passive model, black-box inversion through a shadow
//! model, and label inference by completing the attacker's own passive model
//! with a small auxiliary labeled set.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetLayer, Network};
use crate::nn::{cross_entropy_loss, mse_loss, Layer};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub tv_lambda: f64,
    pub restarts: usize,
    pub seed: u64,
    /// When set, the white-box attacker also optimizes a per-unit scale and
    /// bias jointly with the input guess, to cover an adversary that suspects
    /// an affine obfuscation without knowing its keys.
    pub optimize_scale_bias: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 2000,
            step_size: 0.05,
            tv_lambda: 0.1,
            restarts: 3,
            seed: 0,
            optimize_scale_bias: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Cafe,
    Mi,
    Pmc,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Cafe => "cafe",
            AttackKind::Mi => "mi",
            AttackKind::Pmc => "pmc",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    /// MSE per sample for feature attacks, 0/1 correctness for label attacks.
    pub per_sample: Vec<f64>,
    pub aggregate: f64,
}

impl AttackReport {
    pub fn new(kind: AttackKind, per_sample: Vec<f64>) -> Result<AttackReport> {
        if per_sample.is_empty() {
            return Err(Error::Attack("empty attack report".into()));
        }
        let aggregate = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        Ok(AttackReport {
            kind,
            per_sample,
            aggregate,
        })
    }
}

/// What a semi-honest adversary sees of a passive model: the layer stack and
/// weights, but never the passport keys. Passport slots are replaced by their
/// bare base layer, which is the gamma = 1, beta = 0 guess.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackerView {
    pub model: Network,
    pub input_shape: Vec<usize>,
}

impl AttackerView {
    pub fn strip(passive: &Network, input_shape: &[usize], jointly_optimize: bool) -> AttackerView {
        let mut layers = Vec::with_capacity(passive.layers.len());
        for layer in &passive.layers {
            match layer {
                NetLayer::Plain(l) => layers.push(NetLayer::Plain(l.clone())),
                NetLayer::Passport(p) => {
                    let bare = match &p.base {
                        Layer::Linear { weight, .. } => Layer::Linear {
                            weight: weight.clone(),
                            bias: Tensor::zeros(vec![weight.shape()[0]]),
                        },
                        Layer::Conv2d { weight, stride, .. } => Layer::Conv2d {
                            weight: weight.clone(),
                            bias: Tensor::zeros(vec![weight.shape()[0]]),
                            stride: *stride,
                        },
                        other => other.clone(),
                    };
                    let affine_dim = bare.output_shape(input_shape).ok().map(|s| s[0]);
                    layers.push(NetLayer::Plain(bare));
                    if jointly_optimize {
                        if let Some(c) = affine_dim {
                            layers.push(NetLayer::Plain(Layer::ChannelAffine {
                                gamma: Tensor::filled(vec![c], 1.0),
                                beta: Tensor::zeros(vec![c]),
                            }));
                        }
                    }
                }
            }
        }
        AttackerView {
            model: Network::new(layers),
            input_shape: input_shape.to_vec(),
        }
    }
}

/// Squared anisotropic total variation and its gradient. Spatial axes are the
/// trailing ones: both trailing axes for rank >= 3 tensors, the final axis
/// for matrices and vectors.
pub fn tv_regularizer(x: &Tensor) -> (f64, Tensor) {
    let shape = x.shape();
    let nd = shape.len();
    let axes: Vec<usize> = if nd >= 3 {
        vec![nd - 2, nd - 1]
    } else {
        vec![nd - 1]
    };
    let mut strides = vec![1usize; nd];
    for i in (0..nd - 1).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for &a in &axes {
        let (size, stride) = (shape[a], strides[a]);
        for i in 0..x.len() {
            if (i / stride) % size + 1 < size {
                let d = x.data()[i + stride] - x.data()[i];
                value += d * d;
                grad[i + stride] += 2.0 * d;
                grad[i] -= 2.0 * d;
            }
        }
    }
    (value, Tensor::new(shape.to_vec(), grad).unwrap())
}

struct InversionState {
    x: Tensor,
    model: Network,
}

/// Inversion objective: sum of squared embedding residuals plus lambda * TV.
fn inversion_loss(model: &Network, x: &Tensor, target: &Tensor, lambda: f64) -> Result<f64> {
    let out = model.forward_plain(x)?;
    let diff = out.sub(target)?;
    let (tv, _) = tv_regularizer(x);
    Ok(diff.dot(&diff)? + lambda * tv)
}

/// Gradient descent with backtracking line search on the input guess (and,
/// when enabled, on appended per-unit scale/bias parameters). Returns the
/// final loss and reconstruction, or an error if the run went non-finite.
fn invert_once(
    view: &AttackerView,
    target: &Tensor,
    cfg: &AttackConfig,
    x0: Tensor,
) -> Result<(f64, Tensor)> {
    let mut state = InversionState {
        x: x0,
        model: view.model.clone(),
    };
    let mut step = cfg.step_size;
    let mut loss = inversion_loss(&state.model, &state.x, target, cfg.tv_lambda)?;
    if !loss.is_finite() {
        return Err(Error::Attack("non-finite initial inversion loss".into()));
    }
    for _ in 0..cfg.iterations {
        let trace = state.model.forward(&state.x, &Default::default())?;
        let diff = trace.output.sub(target)?;
        let mut grads = state.model.backward(&trace, &diff.scale(2.0))?;
        let (_, tv_grad) = tv_regularizer(&state.x);
        let mut x_grad = grads.input.clone();
        x_grad.add_scaled(&tv_grad, cfg.tv_lambda)?;

        if cfg.optimize_scale_bias {
            // Only the appended affine parameters belong to the attacker; the
            // known passive weights stay fixed.
            for (layer, g) in state.model.layers.iter().zip(grads.layers.iter_mut()) {
                if !matches!(layer, NetLayer::Plain(Layer::ChannelAffine { .. })) {
                    *g = zero_like_gradient(g);
                }
            }
        }

        let mut accepted = false;
        while step > 1e-16 {
            let mut cand_x = state.x.clone();
            cand_x.add_scaled(&x_grad, -step)?;
            let mut cand_model = state.model.clone();
            if cfg.optimize_scale_bias {
                cand_model.sgd_step(&grads, step, 0.0)?;
            }
            match inversion_loss(&cand_model, &cand_x, target, cfg.tv_lambda) {
                Ok(l) if l.is_finite() && l <= loss => {
                    state.x = cand_x;
                    state.model = cand_model;
                    loss = l;
                    step = (step * 1.1).min(cfg.step_size * 10.0);
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }
    if !loss.is_finite() || !state.x.all_finite() {
        return Err(Error::Attack("inversion diverged".into()));
    }
    Ok((loss, state.x))
}

/// White-box feature inversion: argmin over x' of the embedding residual plus
/// TV, best of `restarts` random initializations drawn from N(0, 0.1).
pub fn cafe_invert(view: &AttackerView, target_h: &Tensor, cfg: &AttackConfig) -> Result<Tensor> {
    if cfg.iterations == 0 || cfg.restarts == 0 {
        return Err(Error::Attack("iterations and restarts must be positive".into()));
    }
    let n = target_h.shape()[0];
    let mut shape = vec![n];
    shape.extend_from_slice(&view.input_shape);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 0.1).unwrap();
    let mut best: Option<(f64, Tensor)> = None;
    let mut last_err = None;
    for _ in 0..cfg.restarts {
        let x0 = Tensor::new(
            shape.clone(),
            (0..shape.iter().product())
                .map(|_| init.sample(&mut rng))
                .collect(),
        )?;
        match invert_once(view, target_h, cfg, x0) {
            Ok((loss, x)) => {
                if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                    best = Some((loss, x));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((_, x)) => Ok(x),
        None => Err(last_err.unwrap_or_else(|| Error::Attack("all restarts failed".into()))),
    }
}

fn zero_like_gradient(g: &crate::nn::LayerGradient) -> crate::nn::LayerGradient {
    use crate::nn::LayerGradient as G;
    match g {
        G::None => G::None,
        G::Linear { weight, bias } => G::Linear {
            weight: Tensor::zeros(weight.shape().to_vec()),
            bias: Tensor::zeros(bias.shape().to_vec()),
        },
        G::Conv2d { weight, bias } => G::Conv2d {
            weight: Tensor::zeros(weight.shape().to_vec()),
            bias: Tensor::zeros(bias.shape().to_vec()),
        },
        G::ChannelAffine { gamma, beta } => G::ChannelAffine {
            gamma: Tensor::zeros(gamma.shape().to_vec()),
            beta: Tensor::zeros(beta.shape().to_vec()),
        },
        G::Passport {
            weight,
            encoder,
            decoder,
        } => G::Passport {
            weight: Tensor::zeros(weight.shape().to_vec()),
            encoder: Tensor::zeros(encoder.shape().to_vec()),
            decoder: Tensor::zeros(decoder.shape().to_vec()),
        },
    }
}

/// Full-batch gradient descent with backtracking on an arbitrary
/// loss-and-gradient closure over the model. Returns the final loss.
fn fit_model(
    model: &mut Network,
    xs: &Tensor,
    loss_grad: &dyn Fn(&Tensor) -> Result<(f64, Tensor)>,
    iterations: usize,
    step_size: f64,
) -> Result<f64> {
    let mut step = step_size;
    let eval = |m: &Network| -> Result<f64> {
        let out = m.forward_plain(xs)?;
        Ok(loss_grad(&out)?.0)
    };
    let mut loss = eval(model)?;
    for _ in 0..iterations {
        let trace = model.forward(xs, &Default::default())?;
        let (_, out_grad) = loss_grad(&trace.output)?;
        let grads = model.backward(&trace, &out_grad)?;
        let mut accepted = false;
        while step > 1e-16 {
            let mut cand = model.clone();
            cand.sgd_step(&grads, step, 0.0)?;
            match eval(&cand) {
                Ok(l) if l.is_finite() && l <= loss => {
                    *model = cand;
                    loss = l;
                    step = (step * 1.1).min(step_size * 10.0);
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
        if loss < 1e-14 {
            break;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Attack("model fit diverged".into()));
    }
    Ok(loss)
}

/// Re-initializes every trainable tensor of a stripped view to give the
/// shadow the same skeleton with fresh weights.
fn shadow_skeleton(view: &AttackerView, rng: &mut ChaCha20Rng) -> Network {
    let mut model = view.model.clone();
    let init = Normal::new(0.0, 0.1).unwrap();
    model.for_each_param_mut(&mut |t| {
        for v in t.data_mut() {
            *v = init.sample(rng);
        }
    });
    model
}

pub struct ShadowModel {
    pub model: Network,
    pub pairs: usize,
    pub fit_residual: f64,
}

/// Fits a shadow model to probe pairs by MSE regression.
pub fn fit_shadow(
    view: &AttackerView,
    aux_x: &Tensor,
    aux_h: &Tensor,
    cfg: &AttackConfig,
) -> Result<ShadowModel> {
    let n = aux_x.shape()[0];
    if n == 0 || aux_h.shape()[0] != n {
        return Err(Error::Attack("shadow fitting needs matching probe pairs".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x5badc0de);
    let mut model = shadow_skeleton(view, &mut rng);
    let residual = fit_model(
        &mut model,
        aux_x,
        &|out| mse_loss(out, aux_h),
        cfg.iterations,
        cfg.step_size,
    )?;
    Ok(ShadowModel {
        model,
        pairs: n,
        fit_residual: residual,
    })
}

/// Black-box inversion: fit a shadow model from probe pairs, then invert the
/// shadow exactly as the white-box attack inverts the true model.
pub fn mi_blackbox(
    view_shape: &[usize],
    view: &AttackerView,
    aux_x: &Tensor,
    aux_h: &Tensor,
    target_h: &Tensor,
    cfg: &AttackConfig,
) -> Result<Tensor> {
    let shadow = fit_shadow(view, aux_x, aux_h, cfg)?;
    let shadow_view = AttackerView {
        model: shadow.model,
        input_shape: view_shape.to_vec(),
    };
    cafe_invert(&shadow_view, target_h, cfg)
}

/// Passive model completion: train a linear softmax head on n_a auxiliary
/// (embedding, label) pairs and predict labels for the test embeddings.
pub fn pmc_attack(
    aux_h: &Tensor,
    aux_y: &[usize],
    test_h: &Tensor,
    classes: usize,
    cfg: &AttackConfig,
) -> Result<Vec<usize>> {
    let n = aux_h.shape()[0];
    if n == 0 || aux_y.len() != n {
        return Err(Error::Attack("auxiliary set must be non-empty and labeled".into()));
    }
    if let Some(&y) = aux_y.iter().find(|&&y| y >= classes) {
        return Err(Error::Attack(format!("label {y} out of range {classes}")));
    }
    let d = aux_h.shape()[1];
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x00a771c4);
    let mut head = Network::plain(vec![Layer::linear_init(d, classes, &mut rng)]);
    fit_model(
        &mut head,
        aux_h,
        &|out| cross_entropy_loss(out, aux_y),
        cfg.iterations,
        cfg.step_size,
    )?;
    let logits = head.forward_plain(test_h)?;
    let rows = logits.shape()[0];
    Ok((0..rows)
        .map(|r| {
            logits.data()[r * classes..(r + 1) * classes]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::passport::{KeyAssignment, PassportConfig, PassportKey, PassportLayer, PassportScope};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn tv_examples() {
        let (v, g) = tv_regularizer(&Tensor::filled(vec![3, 3], 2.5));
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
        let (v, _) = tv_regularizer(&Tensor::from_vec(vec![0.0, 1.0, 0.0]));
        assert_eq!(v, 2.0);
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = Tensor::new(vec![2, 1, 3, 3], (0..18).map(|_| rng.random::<f64>()).collect()).unwrap();
        let (_, g) = tv_regularizer(&x);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (tv_regularizer(&xp).0 - tv_regularizer(&xm).0) / (2.0 * h);
            let denom = fd.abs().max(g.data()[i].abs()).max(1e-8);
            assert!((fd - g.data()[i]).abs() / denom < 1e-5);
        }
    }

    #[test]
    fn identity_model_inverts_exactly() {
        let view = AttackerView {
            model: Network::plain(vec![Layer::Linear {
                weight: eye(3),
                bias: Tensor::zeros(vec![3]),
            }]),
            input_shape: vec![3],
        };
        let target = Tensor::new(vec![1, 3], vec![0.4, -1.2, 0.7]).unwrap();
        let cfg = AttackConfig {
            tv_lambda: 0.0,
            iterations: 3000,
            ..Default::default()
        };
        let x = cafe_invert(&view, &target, &cfg).unwrap();
        let mse = crate::metrics::mse_recovery_error(&target, &x).unwrap();
        assert!(mse < 1e-10, "mse {mse}");
    }

    #[test]
    fn full_rank_inversion_matches_pseudo_inverse() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let (out_d, in_d) = (6, 4);
        let w = Tensor::new(
            vec![out_d, in_d],
            (0..out_d * in_d).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap();
        let x_true = Tensor::new(vec![1, in_d], vec![0.3, -0.8, 1.1, 0.2]).unwrap();
        let view = AttackerView {
            model: Network::plain(vec![Layer::Linear {
                weight: w.clone(),
                bias: Tensor::zeros(vec![out_d]),
            }]),
            input_shape: vec![in_d],
        };
        let h = view.model.forward_plain(&x_true).unwrap();
        let cfg = AttackConfig {
            tv_lambda: 0.0,
            iterations: 5000,
            ..Default::default()
        };
        let x_hat = cafe_invert(&view, &h, &cfg).unwrap();
        let wm = DMatrix::from_row_slice(out_d, in_d, w.data());
        let hv = nalgebra::DVector::from_row_slice(h.data());
        let sol = wm
            .clone()
            .svd(true, true)
            .solve(&hv, 1e-12)
            .expect("pseudo-inverse solve");
        let mse = x_hat
            .data()
            .iter()
            .zip(sol.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / in_d as f64;
        assert!(mse < 1e-6, "mse vs pinv {mse}");
    }

    #[test]
    fn beta_passport_inversion_matches_closed_form() {
        // Invertible W with gamma derived to exactly 1, so the naive attacker
        // recovers x + s_beta and the error norm equals ||s_beta||.
        let n = 3;
        let mut w = eye(n);
        w.data_mut()[1] = 0.3;
        w.data_mut()[5] = -0.4;
        let wm = DMatrix::from_row_slice(n, n, w.data());
        let s_gamma = wm
            .clone()
            .lu()
            .solve(&nalgebra::DVector::from_element(n, 1.0))
            .unwrap();
        let s_beta = vec![0.7, -0.2, 0.5];
        let key = PassportKey {
            s_gamma: Tensor::from_vec(s_gamma.iter().copied().collect()),
            s_beta: Tensor::from_vec(s_beta.clone()),
            channel_means: vec![0.0; n],
        };
        let layer = PassportLayer::with_identity_autoencoder(
            Layer::Linear {
                weight: w.clone(),
                bias: Tensor::zeros(vec![n]),
            },
            PassportConfig {
                mean_range: 1.0,
                sigma2: 0.0,
                shape: vec![n],
                scope: PassportScope::PerBatch,
            },
        )
        .unwrap();
        let x_true = Tensor::new(vec![1, n], vec![0.2, 0.9, -0.4]).unwrap();
        let (h, _) = layer
            .forward(&x_true, &KeyAssignment::PerBatch(key))
            .unwrap();
        let net = Network::new(vec![NetLayer::Passport(layer)]);
        let view = AttackerView::strip(&net, &[n], false);
        assert!(view.model.passport_slots().is_empty());
        let cfg = AttackConfig {
            tv_lambda: 0.0,
            iterations: 6000,
            ..Default::default()
        };
        let x_hat = cafe_invert(&view, &h, &cfg).unwrap();
        let actual = x_hat.sub(&x_true).unwrap().norm2();
        let predicted = Tensor::from_vec(s_beta).norm2();
        assert!(
            (actual - predicted).abs() < 1e-6,
            "actual {actual} predicted {predicted}"
        );
    }

    #[test]
    fn stripped_view_has_no_key_material() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let layer = PassportLayer::new(
            Layer::linear_init(4, 3, &mut rng),
            PassportConfig {
                mean_range: 10.0,
                sigma2: 1.0,
                shape: vec![4],
                scope: PassportScope::PerBatch,
            },
            &mut rng,
        )
        .unwrap();
        let net = Network::new(vec![NetLayer::Passport(layer)]);
        let view = AttackerView::strip(&net, &[4], true);
        let json = serde_json::to_string(&view).unwrap();
        assert!(!json.contains("s_gamma"));
        assert!(!json.contains("s_beta"));
        assert!(view
            .model
            .layers
            .iter()
            .all(|l| !matches!(l, NetLayer::Passport(_))));
    }

    #[test]
    fn shadow_regression_recovers_linear_model() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let true_net = Network::plain(vec![Layer::linear_init(3, 4, &mut rng)]);
        let n = 60;
        let xs = Tensor::new(
            vec![n, 3],
            (0..n * 3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        )
        .unwrap();
        let hs = true_net.forward_plain(&xs).unwrap();
        let view = AttackerView {
            model: true_net.clone(),
            input_shape: vec![3],
        };
        let cfg = AttackConfig {
            iterations: 4000,
            tv_lambda: 0.0,
            ..Default::default()
        };
        let shadow = fit_shadow(&view, &xs, &hs, &cfg).unwrap();
        let tw = true_net.flat_params();
        let sw = shadow.model.flat_params();
        let num: f64 = tw.iter().zip(&sw).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = tw.iter().map(|a| a * a).sum();
        assert!((num / den).sqrt() < 1e-3, "rel err {}", (num / den).sqrt());

        let x_true = xs.row(0).unwrap();
        let target = true_net.forward_plain(&x_true).unwrap();
        let x_hat = mi_blackbox(&[3], &view, &xs, &hs, &target, &cfg).unwrap();
        let mse = crate::metrics::mse_recovery_error(&x_true, &x_hat).unwrap();
        assert!(mse < 1e-4, "mi mse {mse}");
    }

    #[test]
    fn shadow_requires_pairs() {
        let view = AttackerView {
            model: Network::plain(vec![Layer::Linear {
                weight: eye(2),
                bias: Tensor::zeros(vec![2]),
            }]),
            input_shape: vec![2],
        };
        let empty = Tensor::zeros(vec![1, 2]).select_rows(&[]).err();
        // select_rows(&[]) yields a zero-dim tensor error, so construct the
        // degenerate case directly through fit_shadow's length check.
        assert!(empty.is_some());
        let xs = Tensor::zeros(vec![2, 2]);
        let hs = Tensor::zeros(vec![1, 2]);
        assert!(fit_shadow(&view, &xs, &hs, &AttackConfig::default()).is_err());
    }

    #[test]
    fn pmc_memorizes_one_hot_embeddings() {
        let classes = 4;
        let mut aux = Tensor::zeros(vec![classes, classes]);
        for c in 0..classes {
            aux.data_mut()[c * classes + c] = 1.0;
        }
        let labels: Vec<usize> = (0..classes).collect();
        let cfg = AttackConfig {
            iterations: 500,
            ..Default::default()
        };
        let preds = pmc_attack(&aux, &labels, &aux, classes, &cfg).unwrap();
        assert_eq!(preds, labels);
    }

    #[test]
    fn pmc_rejects_bad_aux() {
        let cfg = AttackConfig::default();
        let aux = Tensor::zeros(vec![2, 3]);
        assert!(pmc_attack(&aux, &[0], &aux, 4, &cfg).is_err());
        assert!(pmc_attack(&aux, &[0, 9], &aux, 4, &cfg).is_err());
    }

    #[test]
    fn report_aggregate_is_mean() {
        let r = AttackReport::new(AttackKind::Cafe, vec![1.0, 3.0]).unwrap();
        assert_eq!(r.aggregate, 2.0);
        assert!(AttackReport::new(AttackKind::Pmc, vec![]).is_err());
    }
}
