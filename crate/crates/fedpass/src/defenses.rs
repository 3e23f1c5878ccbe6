//! Baseline protections applied at the protocol boundary: Gaussian noise and
//! top-k sparsification on outbound embeddings or gradients. FedPass itself
//! is realized by passport slots and is an identity at this boundary.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::passport::PassportScope;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseTarget {
    Embeddings,
    Gradients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum DefenseSpec {
    None,
    FedPass {
        mean_range: f64,
        sigma2: f64,
        scope: PassportScope,
    },
    GaussianNoise {
        noise_level: f64,
        target: DefenseTarget,
    },
    Sparsify {
        keep_ratio: f64,
        target: DefenseTarget,
    },
    /// Cited baselines that are deliberately not implemented.
    Cae,
    InstaHide,
}

impl DefenseSpec {
    /// The scalar strength knob used for grid sweeps and result rows.
    pub fn strength(&self) -> f64 {
        match self {
            DefenseSpec::None => 0.0,
            DefenseSpec::FedPass { mean_range, .. } => *mean_range,
            DefenseSpec::GaussianNoise { noise_level, .. } => *noise_level,
            DefenseSpec::Sparsify { keep_ratio, .. } => *keep_ratio,
            DefenseSpec::Cae | DefenseSpec::InstaHide => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DefenseSpec::None => "none",
            DefenseSpec::FedPass { .. } => "fedpass",
            DefenseSpec::GaussianNoise { .. } => "gaussian_noise",
            DefenseSpec::Sparsify { .. } => "sparsify",
            DefenseSpec::Cae => "cae",
            DefenseSpec::InstaHide => "instahide",
        }
    }

    /// A short stable description of the non-strength knobs, used to keep
    /// result keys unique across sweep axes.
    pub fn detail(&self) -> String {
        match self {
            DefenseSpec::FedPass {
                mean_range,
                sigma2,
                scope,
            } => format!("N={mean_range},sigma2={sigma2},scope={scope:?}"),
            _ => String::new(),
        }
    }

    fn target(&self) -> Option<DefenseTarget> {
        match self {
            DefenseSpec::GaussianNoise { target, .. } | DefenseSpec::Sparsify { target, .. } => {
                Some(*target)
            }
            _ => None,
        }
    }
}

/// Applies a tensor-boundary defense at the stated call site. FedPass and
/// None pass the tensor through unchanged here.
pub fn apply_tensor_defense(
    t: &Tensor,
    spec: &DefenseSpec,
    site: DefenseTarget,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    match spec {
        DefenseSpec::None | DefenseSpec::FedPass { .. } => Ok(t.clone()),
        DefenseSpec::Cae => Err(Error::OutOfScope("CAE baseline is not implemented".into())),
        DefenseSpec::InstaHide => Err(Error::OutOfScope(
            "InstaHide baseline is not implemented".into(),
        )),
        DefenseSpec::GaussianNoise { noise_level, .. } => {
            if spec.target() != Some(site) {
                return Ok(t.clone());
            }
            if *noise_level == 0.0 {
                return Ok(t.clone());
            }
            let dist = Normal::new(0.0, *noise_level)
                .map_err(|e| Error::Config(format!("bad noise level: {e}")))?;
            Ok(Tensor::new(
                t.shape().to_vec(),
                t.data().iter().map(|v| v + dist.sample(rng)).collect(),
            )?)
        }
        DefenseSpec::Sparsify { keep_ratio, .. } => {
            if spec.target() != Some(site) {
                return Ok(t.clone());
            }
            Ok(sparsify(t, *keep_ratio))
        }
    }
}

/// Zeroes all but the ceil(keep_ratio * n) largest-magnitude entries. Ties at
/// the threshold keep the lower flat index.
pub fn sparsify(t: &Tensor, keep_ratio: f64) -> Tensor {
    let n = t.len();
    let keep = ((keep_ratio * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        t.data()[b]
            .abs()
            .partial_cmp(&t.data()[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut out = vec![0.0; n];
    for &i in order.iter().take(keep) {
        out[i] = t.data()[i];
    }
    Tensor::new(t.shape().to_vec(), out).unwrap()
}

/// One spec per strength, shared variant; strengths must be non-empty and
/// sorted ascending.
pub fn defense_grid(template: &DefenseSpec, strengths: &[f64]) -> Result<Vec<DefenseSpec>> {
    if strengths.is_empty() {
        return Err(Error::Config("empty defense strength list".into()));
    }
    if strengths.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("strengths must be sorted ascending".into()));
    }
    strengths
        .iter()
        .map(|&s| {
            Ok(match template {
                DefenseSpec::None => DefenseSpec::None,
                DefenseSpec::FedPass { sigma2, scope, .. } => DefenseSpec::FedPass {
                    mean_range: s,
                    sigma2: *sigma2,
                    scope: *scope,
                },
                DefenseSpec::GaussianNoise { target, .. } => DefenseSpec::GaussianNoise {
                    noise_level: s,
                    target: *target,
                },
                DefenseSpec::Sparsify { target, .. } => DefenseSpec::Sparsify {
                    keep_ratio: s,
                    target: *target,
                },
                DefenseSpec::Cae => return Err(Error::OutOfScope("CAE grid".into())),
                DefenseSpec::InstaHide => return Err(Error::OutOfScope("InstaHide grid".into())),
            })
        })
        .collect()
}
