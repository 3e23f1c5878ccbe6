//! Numerical verification of the privacy guarantees on linear single-layer
//! instances: reconstruction-error identities for bias and scale obfuscation,
//! the random-guessing recovery probability bound, and the label-recovery
//! lower bound with its fixed-embedding pairwise special case.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PI: f64 = std::f64::consts::PI;

/// A one-layer passive model H = diag(W_p s_gamma) W_p x + W_p s_beta with an
/// analogous active head on top.
#[derive(Debug, Clone)]
pub struct LinearInstance {
    /// Passive weights, o x i.
    pub w_p: Tensor,
    pub s_gamma_p: Tensor,
    pub s_beta_p: Tensor,
    /// Active weights, c x o.
    pub w_a: Tensor,
    pub s_gamma_a: Tensor,
    pub s_beta_a: Tensor,
    pub x: Tensor,
}

fn as_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.shape()[0], t.shape()[1], t.data())
}

fn as_vector(t: &Tensor) -> DVector<f64> {
    DVector::from_row_slice(t.data())
}

fn passive_embedding(w_p: &DMatrix<f64>, s_gamma: &DVector<f64>, s_beta: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let d_gamma = w_p * s_gamma;
    let wx = w_p * x;
    d_gamma.component_mul(&wx) + w_p * s_beta
}

impl LinearInstance {
    pub fn validate(&self) -> Result<()> {
        let (o, i) = (self.w_p.shape()[0], self.w_p.shape()[1]);
        let (c, oa) = (self.w_a.shape()[0], self.w_a.shape()[1]);
        if self.s_gamma_p.len() != i
            || self.s_beta_p.len() != i
            || self.x.len() != i
            || oa != o
            || self.s_gamma_a.len() != oa
            || self.s_beta_a.len() != oa
        {
            return Err(Error::Shape("linear instance dimensions do not compose".into()));
        }
        let _ = c;
        Ok(())
    }
}

/// Forward pass of the linear instance: the passive embedding and the active
/// output computed with the instance's own passports.
pub fn linear_forward(inst: &LinearInstance) -> Result<(Tensor, Tensor)> {
    inst.validate()?;
    let w_p = as_matrix(&inst.w_p);
    let w_a = as_matrix(&inst.w_a);
    let h = passive_embedding(
        &w_p,
        &as_vector(&inst.s_gamma_p),
        &as_vector(&inst.s_beta_p),
        &as_vector(&inst.x),
    );
    let y = passive_embedding(&w_a, &as_vector(&inst.s_gamma_a), &as_vector(&inst.s_beta_a), &h);
    Ok((
        Tensor::from_vec(h.iter().copied().collect()),
        Tensor::from_vec(y.iter().copied().collect()),
    ))
}

/// Passport whose derived scale is exactly one: the solution of W s = 1.
pub fn neutral_gamma(w: &Tensor) -> Result<Tensor> {
    let m = as_matrix(w);
    if m.nrows() != m.ncols() {
        return Err(Error::Shape("neutral scale needs a square model".into()));
    }
    let s = m
        .lu()
        .solve(&DVector::from_element(w.shape()[0], 1.0))
        .ok_or_else(|| Error::Numerical("singular model weights".into()))?;
    Ok(Tensor::from_vec(s.iter().copied().collect()))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Bias-obfuscation identity: an attacker inverting with a wrong bias
/// passport lands at distance exactly equal to its guessing error. Returns
/// (actual reconstruction error, predicted value ||s_beta - guess||).
pub fn lemma1_beta_check(inst: &LinearInstance, s_beta_guess: &Tensor) -> Result<(f64, f64)> {
    inst.validate()?;
    let w_p = as_matrix(&inst.w_p);
    if w_p.nrows() < w_p.ncols() || condition_number(&w_p) > 1e8 {
        return Err(Error::Numerical("model is rank deficient or ill conditioned".into()));
    }
    let d_gamma = &w_p * as_vector(&inst.s_gamma_p);
    if d_gamma.iter().any(|v| (v - 1.0).abs() > 1e-9) {
        return Err(Error::Config("bias-only case requires a neutral scale passport".into()));
    }
    if s_beta_guess.len() != inst.s_beta_p.len() {
        return Err(Error::Shape("bias guess dimension mismatch".into()));
    }
    let x = as_vector(&inst.x);
    let h = passive_embedding(&w_p, &as_vector(&inst.s_gamma_p), &as_vector(&inst.s_beta_p), &x);
    let rhs = &h - &w_p * as_vector(s_beta_guess);
    let x_hat = w_p
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let actual = (&x - &x_hat).norm();
    let predicted = inst.s_beta_p.sub(s_beta_guess)?.norm2();
    Ok((actual, predicted))
}

/// Scale-obfuscation inequality: the reconstruction error under a wrong scale
/// passport is at least the embedding-weighted diagonal mismatch divided by
/// the spectral norm of the model. Returns (actual error, lower bound).
pub fn lemma1_gamma_check(inst: &LinearInstance, s_gamma_guess: &Tensor) -> Result<(f64, f64)> {
    inst.validate()?;
    if inst.s_beta_p.data().iter().any(|v| *v != 0.0) {
        return Err(Error::Config("scale-only case requires a zero bias passport".into()));
    }
    let w_p = as_matrix(&inst.w_p);
    if w_p.nrows() != w_p.ncols() || condition_number(&w_p) > 1e8 {
        return Err(Error::Numerical("scale case requires an invertible model".into()));
    }
    if s_gamma_guess.len() != inst.s_gamma_p.len() {
        return Err(Error::Shape("scale guess dimension mismatch".into()));
    }
    let d_true = &w_p * as_vector(&inst.s_gamma_p);
    let d_guess = &w_p * as_vector(s_gamma_guess);
    if d_true.iter().chain(d_guess.iter()).any(|v| v.abs() < 1e-12) {
        return Err(Error::Numerical("singular diagonal obfuscation".into()));
    }
    let x = as_vector(&inst.x);
    let h = d_true.component_mul(&(&w_p * &x));
    let unscaled = h.component_div(&d_guess);
    let x_hat = w_p
        .clone()
        .lu()
        .solve(&unscaled)
        .ok_or_else(|| Error::Numerical("singular model weights".into()))?;
    let actual = (&x - &x_hat).norm();
    let mismatch: f64 = h
        .iter()
        .zip(d_true.iter().zip(d_guess.iter()))
        .map(|(hv, (a, b))| {
            let d = hv * (1.0 / a - 1.0 / b);
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let bound = mismatch / spectral_norm(&w_p);
    Ok((actual, bound))
}

/// Gamma function via the Lanczos approximation (g = 7, 9 coefficients),
/// valid for positive arguments; relative error below 1e-10.
pub fn lanczos_gamma(z: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if z < 0.5 {
        // reflection
        return PI / ((PI * z).sin() * lanczos_gamma(1.0 - z));
    }
    let x = z - 1.0;
    let mut a = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// Closed-form ceiling on the probability that a uniform passport guess from
/// the (-N, 0)^m cube lands within eps of the true bias passport:
/// pi^{m/2} eps^m / (Gamma(1 + m/2) N^m), the ball-to-cube volume ratio.
pub fn theorem1_bound(m: u32, eps: f64, n: f64) -> Result<f64> {
    if m == 0 || eps <= 0.0 || n <= 0.0 {
        return Err(Error::Config("bound needs positive m, eps, N".into()));
    }
    let mf = m as f64;
    Ok(PI.powf(mf / 2.0) * eps.powi(m as i32) / (lanczos_gamma(1.0 + mf / 2.0) * n.powi(m as i32)))
}

/// Monte Carlo counterpart of the bound on a bias-obfuscated instance: the
/// fraction of uniform guesses whose induced reconstruction lands within eps
/// of the truth. Returns (empirical probability, standard error).
pub fn theorem1_montecarlo(
    inst: &LinearInstance,
    eps: f64,
    n: f64,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if trials < 1000 {
        return Err(Error::Config("need at least 1000 trials".into()));
    }
    let m = inst.s_beta_p.len();
    if m > 4 {
        return Err(Error::Config("passport dimension too large for a meaningful estimate".into()));
    }
    let w_p = as_matrix(&inst.w_p);
    if w_p.nrows() < w_p.ncols() || condition_number(&w_p) > 1e8 {
        return Err(Error::Numerical("model is rank deficient or ill conditioned".into()));
    }
    let d_gamma = &w_p * as_vector(&inst.s_gamma_p);
    if d_gamma.iter().any(|v| (v - 1.0).abs() > 1e-9) {
        return Err(Error::Config("bias-only case requires a neutral scale passport".into()));
    }
    // x_hat = pinv(W)(H - W s') = x + s_beta - s'; precompute pinv once.
    let svd = w_p.clone().svd(true, true);
    let x = as_vector(&inst.x);
    let h = passive_embedding(&w_p, &as_vector(&inst.s_gamma_p), &as_vector(&inst.s_beta_p), &x);
    let mut hits = 0usize;
    let mut guess = DVector::zeros(m);
    for _ in 0..trials {
        for g in guess.iter_mut() {
            *g = -n * rng.random::<f64>();
        }
        let rhs = &h - &w_p * &guess;
        let x_hat = svd
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        if (&x - &x_hat).norm() <= eps {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    Ok((p, se))
}

/// Label-recovery instance: n_a samples whose outputs follow the active rule
/// y_i = T_i H_i with T_i = diag(W_a s_gamma_i) W_a.
#[derive(Debug, Clone)]
pub struct LabelRecoveryInstance {
    /// c x o active weights.
    pub w_a: Tensor,
    /// Per-sample scale passports, each of length o.
    pub passports: Vec<Tensor>,
    /// Per-sample embeddings, each of length o.
    pub embeddings: Vec<Tensor>,
}

impl LabelRecoveryInstance {
    pub fn n_a(&self) -> usize {
        self.passports.len()
    }

    fn t_matrix(&self, i: usize) -> DMatrix<f64> {
        let w_a = as_matrix(&self.w_a);
        let d = &w_a * as_vector(&self.passports[i]);
        DMatrix::from_diagonal(&d) * w_a
    }

    pub fn validate(&self) -> Result<()> {
        let o = self.w_a.shape()[1];
        if self.passports.len() != self.embeddings.len() {
            return Err(Error::Shape("one embedding per passport required".into()));
        }
        if self
            .passports
            .iter()
            .chain(self.embeddings.iter())
            .any(|t| t.len() != o)
        {
            return Err(Error::Shape("passport or embedding dimension mismatch".into()));
        }
        Ok(())
    }

    /// Targets y_i = T_i H_i, exact by construction.
    pub fn targets(&self) -> Result<Vec<DVector<f64>>> {
        self.validate()?;
        Ok((0..self.n_a())
            .map(|i| self.t_matrix(i) * as_vector(&self.embeddings[i]))
            .collect())
    }
}

/// Geometric median of points by Weiszfeld iteration, with a subgradient
/// stationarity check on exit. Returns the minimized sum of distances.
fn geometric_median_cost(points: &[DVector<f64>]) -> Result<f64> {
    let dim = points[0].len();
    let mut u: DVector<f64> =
        points.iter().fold(DVector::zeros(dim), |acc, p| acc + p) / points.len() as f64;
    let eps = 1e-14;
    for _ in 0..10_000 {
        let mut num = DVector::zeros(dim);
        let mut den = 0.0;
        let mut at_point = false;
        for p in points {
            let d = (&u - p).norm();
            if d < eps {
                at_point = true;
                continue;
            }
            num += p / d;
            den += 1.0 / d;
        }
        if den == 0.0 {
            break; // all points coincide with u
        }
        let next = num / den;
        let moved = (&next - &u).norm();
        u = next;
        if moved < 1e-13 && !at_point {
            break;
        }
        if moved < 1e-13 {
            break;
        }
    }
    // stationarity: the subgradient over non-coincident points must be small
    // relative to the number of coincident ones.
    let mut sub = DVector::zeros(points[0].len());
    let mut coincident = 0usize;
    for p in points {
        let d = (&u - p).norm();
        if d < 1e-9 {
            coincident += 1;
        } else {
            sub += (&u - p) / d;
        }
    }
    if sub.norm() > coincident as f64 + 1e-6 {
        return Err(Error::Numerical("geometric median failed stationarity".into()));
    }
    Ok(points.iter().map(|p| (&u - p).norm()).sum())
}

/// Subgradient descent on f(W) = sum_i ||W H_i - y_i||_2 with a diminishing
/// step, for instances whose embeddings differ.
pub fn minimize_attack_loss(inst: &LabelRecoveryInstance, iterations: usize) -> Result<f64> {
    inst.validate()?;
    let ys = inst.targets()?;
    let (c, o) = (ys[0].len(), inst.w_a.shape()[1]);
    let hs: Vec<DVector<f64>> = inst.embeddings.iter().map(as_vector).collect();
    let eval = |w: &DMatrix<f64>| -> f64 {
        hs.iter().zip(&ys).map(|(h, y)| (w * h - y).norm()).sum()
    };
    let mut w = DMatrix::zeros(c, o);
    let mut best = eval(&w);
    let mut best_w = w.clone();
    let scale = inst
        .embeddings
        .iter()
        .map(|h| h.norm2())
        .fold(0.0, f64::max)
        .max(1e-9);
    for k in 0..iterations {
        let mut g = DMatrix::zeros(c, o);
        for (h, y) in hs.iter().zip(&ys) {
            let r = &w * h - y;
            let n = r.norm();
            if n > 1e-14 {
                g += (r / n) * h.transpose();
            }
        }
        let gn = g.norm();
        if gn < 1e-12 {
            break;
        }
        let step = 1.0 / (scale * (k as f64 + 1.0).sqrt());
        w -= g * (step / gn.max(1.0));
        let f = eval(&w);
        if f < best {
            best = f;
            best_w = w.clone();
        }
    }
    let _ = best_w;
    Ok(best)
}

/// For identical embeddings: the oracle-minimized attack training loss and
/// the pairwise lower bound (1/(n_a - 1)) sum over pairs ||(T_i - T_j) H||.
pub fn theorem2_check(inst: &LabelRecoveryInstance) -> Result<(f64, f64)> {
    inst.validate()?;
    let n_a = inst.n_a();
    if n_a < 2 {
        return Err(Error::Config("pairwise bound needs at least two samples".into()));
    }
    let h0 = &inst.embeddings[0];
    for h in &inst.embeddings[1..] {
        if h.max_abs_diff(h0) > 1e-12 {
            return Err(Error::Config("pairwise form requires identical embeddings".into()));
        }
    }
    if h0.norm2() < 1e-12 {
        return Err(Error::Numerical("zero embedding".into()));
    }
    // With a fixed embedding, W |-> W H is onto, so the minimum over W equals
    // the geometric median cost of the targets.
    let ys = inst.targets()?;
    let oracle = geometric_median_cost(&ys)?;
    let mut bound = 0.0;
    for i in 0..n_a {
        for j in (i + 1)..n_a {
            bound += (&ys[i] - &ys[j]).norm();
        }
    }
    bound /= (n_a - 1) as f64;
    Ok((oracle, bound))
}

/// Pairwise passport-distance bound: (1/(n_a - 1)) sum over unordered pairs
/// of ||s_i - s_j||_2.
pub fn prop1_bound(passports: &[Tensor]) -> Result<f64> {
    let n_a = passports.len();
    if n_a < 2 {
        return Err(Error::Config("need at least two passports".into()));
    }
    let mut total = 0.0;
    for i in 0..n_a {
        for j in (i + 1)..n_a {
            total += passports[i].sub(&passports[j])?.norm2();
        }
    }
    Ok(total / (n_a - 1) as f64)
}

/// Random matrix with standard normal entries, rejected while its condition
/// number exceeds 1e6.
pub fn well_conditioned(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let t = Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| normal.sample(rng)).collect(),
        )
        .unwrap();
        if condition_number(&as_matrix(&t)) < 1e6 {
            return t;
        }
    }
}

fn random_vector(dim: usize, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, 1.0).unwrap();
    Tensor::from_vec((0..dim).map(|_| normal.sample(rng)).collect())
}

/// Random bias-only instance: square well-conditioned model, neutral scale
/// passport, standard normal bias passport and input.
pub fn random_beta_instance(dim: usize, rng: &mut impl Rng) -> LinearInstance {
    loop {
        let w_p = well_conditioned(dim, dim, rng);
        if let Ok(s_gamma) = neutral_gamma(&w_p) {
            return LinearInstance {
                w_p,
                s_gamma_p: s_gamma,
                s_beta_p: random_vector(dim, rng),
                w_a: well_conditioned(2, dim, rng),
                s_gamma_a: random_vector(dim, rng),
                s_beta_a: random_vector(dim, rng),
                x: random_vector(dim, rng),
            };
        }
    }
}

/// Random scale-only instance with nonzero derived diagonals.
pub fn random_gamma_instance(dim: usize, rng: &mut impl Rng) -> (LinearInstance, Tensor) {
    loop {
        let w_p = well_conditioned(dim, dim, rng);
        let s_gamma = random_vector(dim, rng);
        let guess = random_vector(dim, rng);
        let m = as_matrix(&w_p);
        let d1 = &m * as_vector(&s_gamma);
        let d2 = &m * as_vector(&guess);
        if d1.iter().chain(d2.iter()).all(|v| v.abs() > 1e-3) {
            let inst = LinearInstance {
                w_p,
                s_gamma_p: s_gamma,
                s_beta_p: Tensor::zeros(vec![dim]),
                w_a: well_conditioned(2, dim, rng),
                s_gamma_a: random_vector(dim, rng),
                s_beta_a: random_vector(dim, rng),
                x: random_vector(dim, rng),
            };
            return (inst, guess);
        }
    }
}

/// Random identical-embedding label-recovery instance with per-sample scale
/// passports drawn N(0, sigma2).
pub fn random_label_instance(
    n_a: usize,
    classes: usize,
    dim: usize,
    sigma2: f64,
    rng: &mut impl Rng,
) -> LabelRecoveryInstance {
    let normal = Normal::new(0.0, sigma2.sqrt().max(1e-12)).unwrap();
    let h = loop {
        let h = random_vector(dim, rng);
        if h.norm2() > 0.1 {
            break h;
        }
    };
    LabelRecoveryInstance {
        w_a: well_conditioned(classes, dim, rng),
        passports: (0..n_a)
            .map(|_| Tensor::from_vec((0..dim).map(|_| normal.sample(rng)).collect()))
            .collect(),
        embeddings: vec![h; n_a],
    }
}

/// One theorem verification outcome, serializable for the CLI report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremReport {
    pub name: String,
    pub params: serde_json::Value,
    pub values: serde_json::Value,
    pub pass: bool,
}

pub fn lemma1_report(seed: u64, trials: usize) -> Result<TheoremReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut max_beta_dev: f64 = 0.0;
    let mut gamma_holds = true;
    let mut min_gamma_slack = f64::INFINITY;
    for _ in 0..trials {
        let inst = random_beta_instance(4, &mut rng);
        let guess = random_vector(4, &mut rng);
        let (actual, predicted) = lemma1_beta_check(&inst, &guess)?;
        max_beta_dev = max_beta_dev.max((actual - predicted).abs());

        let (inst, guess) = random_gamma_instance(3, &mut rng);
        let (actual, bound) = lemma1_gamma_check(&inst, &guess)?;
        min_gamma_slack = min_gamma_slack.min(actual - bound);
        if actual < bound - 1e-9 {
            gamma_holds = false;
        }
    }
    let pass = max_beta_dev < 1e-8 && gamma_holds;
    Ok(TheoremReport {
        name: "reconstruction-error identities".into(),
        params: serde_json::json!({"trials": trials, "seed": seed}),
        values: serde_json::json!({
            "max_beta_deviation": max_beta_dev,
            "min_gamma_slack": min_gamma_slack,
        }),
        pass,
    })
}

pub fn theorem1_report(seed: u64, trials: usize) -> Result<TheoremReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut cells = Vec::new();
    let mut pass = true;
    for &m in &[2u32, 3] {
        for &n in &[2.0, 5.0] {
            for &eps in &[0.2, 0.5] {
                let dim = m as usize;
                let mut inst = random_beta_instance(dim, &mut rng);
                // place the true bias passport inside the guessing cube
                inst.s_beta_p =
                    Tensor::from_vec((0..dim).map(|_| -n * rng.random::<f64>()).collect());
                let bound = theorem1_bound(m, eps, n)?;
                let (p, se) = theorem1_montecarlo(&inst, eps, n, trials, &mut rng)?;
                let ok = p <= bound + 3.0 * se.max((bound / trials as f64).sqrt());
                pass &= ok;
                cells.push(serde_json::json!({
                    "m": m, "N": n, "eps": eps,
                    "bound": bound, "empirical": p, "std_error": se, "pass": ok,
                }));
            }
        }
    }
    Ok(TheoremReport {
        name: "random-guessing recovery probability".into(),
        params: serde_json::json!({"trials": trials, "seed": seed}),
        values: serde_json::Value::Array(cells),
        pass,
    })
}

pub fn theorem2_report(seed: u64, trials: usize) -> Result<TheoremReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut min_slack = f64::INFINITY;
    let mut pass = true;
    for k in 0..trials {
        let n_a = 2 + k % 4;
        let inst = random_label_instance(n_a, 3, 3, 1.0, &mut rng);
        let (oracle, bound) = theorem2_check(&inst)?;
        min_slack = min_slack.min(oracle - bound);
        if oracle < bound - 1e-6 {
            pass = false;
        }
    }
    Ok(TheoremReport {
        name: "label-recovery lower bound".into(),
        params: serde_json::json!({"trials": trials, "seed": seed}),
        values: serde_json::json!({"min_slack": min_slack}),
        pass,
    })
}

pub fn prop1_report(seed: u64) -> Result<TheoremReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut means = Vec::new();
    for &sigma2 in &[1.0, 4.0, 16.0] {
        let normal = Normal::new(0.0, (sigma2 as f64).sqrt()).unwrap();
        let mut total = 0.0;
        let pairs = 200;
        for _ in 0..pairs {
            let a = Tensor::from_vec((0..8).map(|_| normal.sample(&mut rng)).collect());
            let b = Tensor::from_vec((0..8).map(|_| normal.sample(&mut rng)).collect());
            total += prop1_bound(&[a, b])?;
        }
        means.push(total / pairs as f64);
    }
    let pass = means.windows(2).all(|w| w[0] < w[1]);
    Ok(TheoremReport {
        name: "pairwise passport distance grows with variance".into(),
        params: serde_json::json!({"sigma2": [1.0, 4.0, 16.0], "seed": seed}),
        values: serde_json::json!({"mean_pairwise_distance": means}),
        pass,
    })
}

/// The full verification battery, one report per claim.
pub fn verify_all(seed: u64) -> Result<Vec<TheoremReport>> {
    Ok(vec![
        lemma1_report(seed, 100)?,
        theorem1_report(seed, 100_000)?,
        theorem2_report(seed, 50)?,
        prop1_report(seed)?,
    ])
}
