//! Experiment orchestration: configuration, model construction, defense-grid
//! sweeps across seeds and attacks, checkpointing, and CSV/JSON persistence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{cafe_invert, mi_blackbox, pmc_attack, AttackConfig, AttackKind, AttackerView};
use crate::data;
use crate::defenses::{DefenseSpec, DefenseTarget};
use crate::error::{Error, Result};
use crate::metrics;
use crate::network::{NetLayer, Network};
use crate::nn::Layer;
use crate::passport::{PassportConfig, PassportLayer, PassportScope};
use crate::protocol::{
    train, ActiveParty, InferenceMode, PassiveParty, TrainingConfig, TransportLog,
};
use crate::tensor::Tensor;

/// Fixed stream for dataset synthesis so every run of a sweep sees the same
/// data regardless of its training seed.
const DATASET_SEED: u64 = 0xda7a_5eed;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Handwritten-digit IDX files from FEDPASS_DATA_DIR (or `path`) when
    /// present, the rendered corpus otherwise.
    Digits {
        #[serde(default)]
        path: Option<PathBuf>,
        train_subset: usize,
        test_subset: usize,
    },
    Synthetic {
        n: usize,
        test_n: usize,
        dims: usize,
        classes: usize,
        blob_sep: f64,
    },
}

impl DatasetSpec {
    pub fn classes(&self) -> usize {
        match self {
            DatasetSpec::Digits { .. } => 10,
            DatasetSpec::Synthetic { classes, .. } => *classes,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchSpec {
    /// Per-party dense stack: input -> hidden dims, the last being the fused
    /// embedding width.
    Mlp { hidden: Vec<usize> },
    /// One strided conv followed by a dense embedding layer.
    LenetLite { channels: usize, embed: usize },
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec::Mlp {
            hidden: vec![128, 64],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip per party per step; set to zero to disable.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
}

fn default_clip() -> Option<f64> {
    Some(20.0)
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 20,
            batch_size: 64,
            lr: 1e-2,
            weight_decay: 4e-5,
            clip_norm: Some(20.0),
        }
    }
}

/// One defense variant with its strength grid, expanded to concrete specs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseGridSpec {
    pub variant: String,
    #[serde(default)]
    pub strengths: Vec<f64>,
    /// Which knob `strengths` sweeps: "mean_range" (default) or, for the
    /// passport defense, "sigma2" with `mean_range` held fixed.
    #[serde(default = "default_sweep")]
    pub sweep: String,
    #[serde(default = "default_mean_range")]
    pub mean_range: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_scope")]
    pub scope: PassportScope,
    #[serde(default = "default_target")]
    pub target: DefenseTarget,
}

fn default_sigma2() -> f64 {
    1.0
}
fn default_sweep() -> String {
    "mean_range".into()
}
fn default_mean_range() -> f64 {
    50.0
}
fn default_scope() -> PassportScope {
    PassportScope::PerBatch
}
fn default_target() -> DefenseTarget {
    DefenseTarget::Embeddings
}

impl DefenseGridSpec {
    /// Expands to (strength label, concrete spec) pairs; the label is the
    /// swept knob's value and becomes the result row's strength column.
    pub fn expand(&self) -> Result<Vec<(f64, DefenseSpec)>> {
        if self.sweep == "sigma2" && self.variant != "fedpass" {
            return Err(Error::Config(
                "sigma2 sweeps only apply to the fedpass defense".into(),
            ));
        }
        match self.variant.as_str() {
            "none" => Ok(vec![(0.0, DefenseSpec::None)]),
            "fedpass" if self.sweep == "sigma2" => {
                if self.strengths.is_empty() {
                    return Err(Error::Config("empty defense strength list".into()));
                }
                if self.strengths.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::Config("strengths must be sorted ascending".into()));
                }
                Ok(self
                    .strengths
                    .iter()
                    .map(|&s2| {
                        (
                            s2,
                            DefenseSpec::FedPass {
                                mean_range: self.mean_range,
                                sigma2: s2,
                                scope: self.scope,
                            },
                        )
                    })
                    .collect())
            }
            "fedpass" => {
                let template = DefenseSpec::FedPass {
                    mean_range: 1.0,
                    sigma2: self.sigma2,
                    scope: self.scope,
                };
                Ok(label_by_strength(crate::defenses::defense_grid(
                    &template,
                    &self.strengths,
                )?))
            }
            "gaussian_noise" => {
                let template = DefenseSpec::GaussianNoise {
                    noise_level: 1.0,
                    target: self.target,
                };
                Ok(label_by_strength(crate::defenses::defense_grid(
                    &template,
                    &self.strengths,
                )?))
            }
            "sparsify" => {
                let template = DefenseSpec::Sparsify {
                    keep_ratio: 1.0,
                    target: self.target,
                };
                Ok(label_by_strength(crate::defenses::defense_grid(
                    &template,
                    &self.strengths,
                )?))
            }
            other => Err(Error::Config(format!("unknown defense variant {other}"))),
        }
    }
}

fn label_by_strength(specs: Vec<DefenseSpec>) -> Vec<(f64, DefenseSpec)> {
    specs.into_iter().map(|s| (s.strength(), s)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSection {
    #[serde(default = "default_attack_iters")]
    pub iterations: usize,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_tv")]
    pub tv_lambda: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Number of test records targeted by feature-inversion attacks.
    #[serde(default = "default_targets")]
    pub targets: usize,
    /// Probe pairs used to fit the black-box shadow model.
    #[serde(default = "default_probes")]
    pub probes: usize,
}

fn default_attack_iters() -> usize {
    300
}
fn default_step() -> f64 {
    0.05
}
fn default_tv() -> f64 {
    0.1
}
fn default_restarts() -> usize {
    2
}
fn default_targets() -> usize {
    8
}
fn default_probes() -> usize {
    200
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            iterations: default_attack_iters(),
            step_size: default_step(),
            tv_lambda: default_tv(),
            restarts: default_restarts(),
            targets: default_targets(),
            probes: default_probes(),
        }
    }
}

impl AttackSection {
    fn to_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            iterations: self.iterations,
            step_size: self.step_size,
            tv_lambda: self.tv_lambda,
            restarts: self.restarts,
            seed,
            optimize_scale_bias: false,
        }
    }
}

fn default_aux() -> usize {
    40
}
fn default_parties() -> usize {
    2
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub arch: ArchSpec,
    #[serde(default = "default_parties")]
    pub parties: usize,
    #[serde(default)]
    pub training: TrainSpec,
    #[serde(default)]
    pub defense: Vec<DefenseGridSpec>,
    #[serde(default)]
    pub attacks: Vec<AttackKind>,
    #[serde(default)]
    pub attack: AttackSection,
    /// Auxiliary labeled set size for the label-inference attack.
    #[serde(default = "default_aux")]
    pub aux_size: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.defense.is_empty() {
            return Err(Error::Config("defense grid must be non-empty".into()));
        }
        if self.parties == 0 {
            return Err(Error::Config("need at least one passive party".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub defense: String,
    pub strength: f64,
    pub attack: String,
    pub seed: u64,
    pub main_accuracy: f64,
    pub recovery_error: f64,
    pub train_s: f64,
    pub attack_s: f64,
    /// Disambiguates grid cells whose strength label coincides across sweep
    /// axes (for example mean-range 5 versus sigma-squared 5). JSON only; not
    /// part of the CSV columns.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunResult {
    fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}",
            self.defense, self.strength, self.attack, self.seed, self.detail
        )
    }
}

/// A trained split system plus the data needed to evaluate and attack it.
pub struct TrainedSystem {
    pub passives: Vec<PassiveParty>,
    pub active: ActiveParty,
    pub train_shards: Vec<Tensor>,
    pub train_labels: Vec<usize>,
    pub test_shards: Vec<Tensor>,
    pub test_labels: Vec<usize>,
    pub classes: usize,
    pub round_loss: Vec<f64>,
}

fn passport_linear(
    in_dim: usize,
    out_dim: usize,
    mean_range: f64,
    sigma2: f64,
    scope: PassportScope,
    rng: &mut ChaCha20Rng,
) -> Result<NetLayer> {
    let base = Layer::linear_init(in_dim, out_dim, rng);
    let layer = PassportLayer::new(
        base,
        PassportConfig {
            mean_range,
            sigma2,
            shape: vec![in_dim],
            scope,
        },
        rng,
    )?;
    Ok(NetLayer::Passport(layer))
}

/// Passive bottom model for one party. Under the passport defense the final
/// dense layer carries the obfuscation slot.
pub fn build_passive(
    arch: &ArchSpec,
    in_shape: &[usize],
    defense: &DefenseSpec,
    rng: &mut ChaCha20Rng,
) -> Result<Network> {
    let flat: usize = in_shape.iter().product();
    let mut layers: Vec<NetLayer> = Vec::new();
    let (stack_in, hidden): (usize, Vec<usize>) = match arch {
        ArchSpec::Mlp { hidden } => {
            if hidden.is_empty() {
                return Err(Error::Config("mlp needs at least one hidden dim".into()));
            }
            layers.push(NetLayer::Plain(Layer::Flatten));
            (flat, hidden.clone())
        }
        ArchSpec::LenetLite { channels, embed } => {
            if in_shape.len() != 3 {
                return Err(Error::Config("conv arch needs c x h x w inputs".into()));
            }
            let conv = Layer::conv2d_init(in_shape[0], *channels, 3, rng);
            let conv = match conv {
                Layer::Conv2d { weight, bias, .. } => Layer::Conv2d {
                    weight,
                    bias,
                    stride: 2,
                },
                _ => unreachable!(),
            };
            let out = conv.output_shape(in_shape)?;
            layers.push(NetLayer::Plain(conv));
            layers.push(NetLayer::Plain(Layer::ReLU));
            layers.push(NetLayer::Plain(Layer::Flatten));
            (out.iter().product(), vec![*embed])
        }
    };
    let mut dim = stack_in;
    for (i, &h) in hidden.iter().enumerate() {
        let last = i + 1 == hidden.len();
        if last {
            if let DefenseSpec::FedPass {
                mean_range,
                sigma2,
                scope,
            } = defense
            {
                layers.push(passport_linear(dim, h, *mean_range, *sigma2, *scope, rng)?);
                dim = h;
                continue;
            }
        }
        layers.push(NetLayer::Plain(Layer::linear_init(dim, h, rng)));
        if !last {
            layers.push(NetLayer::Plain(Layer::ReLU));
        }
        dim = h;
    }
    Ok(Network::new(layers))
}

/// Active top model: a single dense head over the fused embedding, passported
/// under the passport defense.
pub fn build_active(
    embed: usize,
    classes: usize,
    defense: &DefenseSpec,
    rng: &mut ChaCha20Rng,
) -> Result<Network> {
    if let DefenseSpec::FedPass {
        mean_range,
        sigma2,
        scope,
    } = defense
    {
        Ok(Network::new(vec![passport_linear(
            embed,
            classes,
            *mean_range,
            *sigma2,
            *scope,
            rng,
        )?]))
    } else {
        Ok(Network::plain(vec![Layer::linear_init(embed, classes, rng)]))
    }
}

fn embedding_dim(arch: &ArchSpec) -> usize {
    match arch {
        ArchSpec::Mlp { hidden } => *hidden.last().unwrap_or(&64),
        ArchSpec::LenetLite { embed, .. } => *embed,
    }
}

#[allow(clippy::type_complexity)]
fn load_dataset(
    spec: &DatasetSpec,
) -> Result<((Tensor, Vec<usize>), (Tensor, Vec<usize>))> {
    let mut rng = ChaCha20Rng::seed_from_u64(DATASET_SEED);
    match spec {
        DatasetSpec::Digits {
            path,
            train_subset,
            test_subset,
        } => {
            let dir = path.clone().or_else(data::data_dir);
            data::digits_dataset(dir.as_deref(), *train_subset, *test_subset, &mut rng)
        }
        DatasetSpec::Synthetic {
            n,
            test_n,
            dims,
            classes,
            blob_sep,
        } => {
            let spec = data::SynthSpec {
                n: n + test_n,
                dims: *dims,
                classes: *classes,
                blob_sep: *blob_sep,
            };
            let (x, y) = data::synth_dataset(&spec, &mut rng)?;
            let train_idx: Vec<usize> = (0..*n).collect();
            let test_idx: Vec<usize> = (*n..n + test_n).collect();
            Ok((
                (x.select_rows(&train_idx)?, train_idx.iter().map(|&i| y[i]).collect()),
                (x.select_rows(&test_idx)?, test_idx.iter().map(|&i| y[i]).collect()),
            ))
        }
    }
}

/// Builds parties, runs split training, and returns the trained system.
pub fn train_system(
    cfg: &ExperimentConfig,
    defense: &DefenseSpec,
    seed: u64,
) -> Result<TrainedSystem> {
    let ((train_x, train_y), (test_x, test_y)) = load_dataset(&cfg.dataset)?;
    let train_shards = data::vertical_split(&train_x, cfg.parties)?;
    let test_shards = data::vertical_split(&test_x, cfg.parties)?;
    let classes = cfg.dataset.classes();
    let embed = embedding_dim(&cfg.arch);

    let mut init_rng = ChaCha20Rng::seed_from_u64(seed);
    let mut passives = Vec::with_capacity(cfg.parties);
    for (k, shard) in train_shards.iter().enumerate() {
        let in_shape = shard.shape()[1..].to_vec();
        let model = build_passive(&cfg.arch, &in_shape, defense, &mut init_rng)?;
        passives.push(PassiveParty::new(
            k + 1,
            shard.clone(),
            model,
            defense.clone(),
            seed,
        ));
    }
    let active_model = build_active(embed, classes, defense, &mut init_rng)?;
    let mut active = ActiveParty::new(train_y.clone(), active_model, defense.clone(), seed);

    let n = train_x.shape()[0];
    let rounds = cfg.training.epochs * n.div_ceil(cfg.training.batch_size);
    let tc = TrainingConfig {
        rounds,
        batch_size: cfg.training.batch_size.min(n),
        lr: cfg.training.lr,
        weight_decay: cfg.training.weight_decay,
        clip_norm: cfg.training.clip_norm,
        parties: cfg.parties,
        seed,
    };
    let mut log = TransportLog::default();
    let history = train(&tc, &mut passives, &mut active, &mut log)?;
    Ok(TrainedSystem {
        passives,
        active,
        train_shards,
        train_labels: train_y,
        test_shards,
        test_labels: test_y,
        classes,
        round_loss: history.round_loss,
    })
}

/// Runs one configured attack against a trained system and returns its
/// recovery metric (MSE for feature attacks, label error for PMC).
pub fn run_attack(
    system: &mut TrainedSystem,
    kind: AttackKind,
    section: &AttackSection,
    aux_size: usize,
    seed: u64,
) -> Result<f64> {
    let cfg = section.to_config(seed);
    match kind {
        AttackKind::Cafe => {
            let party = &mut system.passives[0];
            let in_shape = party.dataset.shape()[1..].to_vec();
            let view = AttackerView::strip(&party.model, &in_shape, false);
            let t = section.targets.min(system.test_shards[0].shape()[0]);
            let idx: Vec<usize> = (0..t).collect();
            let x_true = system.test_shards[0].select_rows(&idx)?;
            let target_h = party.infer(&x_true, None)?;
            let x_hat = cafe_invert(&view, &target_h, &cfg)?;
            metrics::mse_recovery_error(&x_true, &x_hat)
        }
        AttackKind::Mi => {
            let party = &mut system.passives[0];
            let in_shape = party.dataset.shape()[1..].to_vec();
            let view = AttackerView::strip(&party.model, &in_shape, false);
            let p = section.probes.min(party.dataset.shape()[0]);
            let probe_idx: Vec<usize> = (0..p).collect();
            let aux_x = party.dataset.select_rows(&probe_idx)?;
            let aux_h = party.infer(&aux_x, None)?;
            let t = section.targets.min(system.test_shards[0].shape()[0]);
            let idx: Vec<usize> = (0..t).collect();
            let x_true = system.test_shards[0].select_rows(&idx)?;
            let target_h = party.infer(&x_true, None)?;
            let x_hat = mi_blackbox(&in_shape, &view, &aux_x, &aux_h, &target_h, &cfg)?;
            metrics::mse_recovery_error(&x_true, &x_hat)
        }
        AttackKind::Pmc => {
            let party = &mut system.passives[0];
            let n_a = aux_size.min(party.dataset.shape()[0]);
            if n_a == 0 {
                return Err(Error::Attack("auxiliary set is empty".into()));
            }
            let aux_idx: Vec<usize> = (0..n_a).collect();
            let aux_x = party.dataset.select_rows(&aux_idx)?;
            let aux_h = party.infer(&aux_x, None)?;
            let aux_y: Vec<usize> = aux_idx.iter().map(|&i| system.train_labels[i]).collect();
            let test_h = party.infer(&system.test_shards[0], None)?;
            let preds = pmc_attack(&aux_h, &aux_y, &test_h, system.classes, &cfg)?;
            metrics::label_error(&system.test_labels, &preds)
        }
    }
}

fn run_single(
    cfg: &ExperimentConfig,
    defense: &DefenseSpec,
    strength: f64,
    seed: u64,
) -> Vec<RunResult> {
    let defense_name = defense.name().to_string();
    let detail = defense.detail();
    let t0 = Instant::now();
    let mut system = match train_system(cfg, defense, seed) {
        Ok(s) => s,
        Err(e) => {
            return vec![RunResult {
                defense: defense_name,
                strength,
                attack: "none".into(),
                seed,
                main_accuracy: f64::NAN,
                recovery_error: f64::NAN,
                train_s: t0.elapsed().as_secs_f64(),
                attack_s: 0.0,
                detail,
                error: Some(e.to_string()),
            }];
        }
    };
    let train_s = t0.elapsed().as_secs_f64();
    let accuracy = {
        let TrainedSystem {
            passives,
            active,
            test_shards,
            test_labels,
            ..
        } = &mut system;
        crate::protocol::evaluate(passives, active, test_shards, test_labels, InferenceMode::Resample)
    };
    let accuracy = match accuracy {
        Ok(a) => a,
        Err(e) => {
            return vec![RunResult {
                defense: defense_name,
                strength,
                attack: "none".into(),
                seed,
                main_accuracy: f64::NAN,
                recovery_error: f64::NAN,
                train_s,
                attack_s: 0.0,
                detail,
                error: Some(e.to_string()),
            }];
        }
    };
    let attacks: Vec<AttackKind> = if cfg.attacks.is_empty() {
        vec![]
    } else {
        cfg.attacks.clone()
    };
    if attacks.is_empty() {
        return vec![RunResult {
            defense: defense_name,
            strength,
            attack: "none".into(),
            seed,
            main_accuracy: accuracy,
            recovery_error: 0.0,
            train_s,
            attack_s: 0.0,
            detail,
            error: None,
        }];
    }
    let mut rows = Vec::with_capacity(attacks.len());
    for kind in attacks {
        let ta = Instant::now();
        let outcome = run_attack(&mut system, kind, &cfg.attack, cfg.aux_size, seed);
        let attack_s = ta.elapsed().as_secs_f64();
        match outcome {
            Ok(rerr) => rows.push(RunResult {
                defense: defense_name.clone(),
                strength,
                attack: kind.name().into(),
                seed,
                main_accuracy: accuracy,
                recovery_error: rerr,
                train_s,
                attack_s,
                detail: detail.clone(),
                error: None,
            }),
            Err(e) => rows.push(RunResult {
                defense: defense_name.clone(),
                strength,
                attack: kind.name().into(),
                seed,
                main_accuracy: accuracy,
                recovery_error: f64::NAN,
                train_s,
                attack_s,
                detail: detail.clone(),
                error: Some(e.to_string()),
            }),
        }
    }
    rows
}

/// Runs the full grid (defenses x strengths x seeds), optionally in parallel,
/// merges with any prior results in the output directory (rerun rows replace
/// rows with the same key), and persists CSV and JSON.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let mut grid: Vec<(DefenseSpec, f64, u64)> = Vec::new();
    for g in &cfg.defense {
        for (strength, spec) in g.expand()? {
            for &seed in &cfg.seeds {
                grid.push((spec.clone(), strength, seed));
            }
        }
    }
    let jobs = jobs.max(1);
    let results = Mutex::new(Vec::<RunResult>::new());
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(grid.len().max(1)) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= grid.len() {
                    break;
                }
                let (spec, strength, seed) = &grid[i];
                let rows = run_single(cfg, spec, *strength, *seed);
                results.lock().unwrap().extend(rows);
            });
        }
    });
    let fresh = results.into_inner().unwrap();

    std::fs::create_dir_all(&cfg.output_dir)?;
    let json_path = cfg.output_dir.join("results.json");
    let mut merged: BTreeMap<String, RunResult> = BTreeMap::new();
    if json_path.exists() {
        let old: Vec<RunResult> = serde_json::from_str(&std::fs::read_to_string(&json_path)?)
            .map_err(|e| Error::Format(format!("corrupt results.json: {e}")))?;
        for r in old {
            merged.insert(r.key(), r);
        }
    }
    for r in fresh {
        merged.insert(r.key(), r);
    }
    let mut all: Vec<RunResult> = merged.into_values().collect();
    all.sort_by(|a, b| {
        (&a.defense, &a.attack, a.seed)
            .cmp(&(&b.defense, &b.attack, b.seed))
            .then(a.strength.total_cmp(&b.strength))
    });
    write_results(&cfg.output_dir, &all)?;
    Ok(all)
}

pub fn write_results(dir: &Path, results: &[RunResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record([
        "defense",
        "strength",
        "attack",
        "seed",
        "main_accuracy",
        "recovery_error",
        "train_s",
        "attack_s",
    ])?;
    for r in results {
        w.write_record([
            r.defense.clone(),
            format!("{}", r.strength),
            r.attack.clone(),
            format!("{}", r.seed),
            format!("{}", r.main_accuracy),
            format!("{}", r.recovery_error),
            format!("{:.3}", r.train_s),
            format!("{:.3}", r.attack_s),
        ])?;
    }
    w.flush()?;
    std::fs::write(
        dir.join("results.json"),
        serde_json::to_string_pretty(results).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    Ok(())
}

impl std::convert::From<csv::Error> for Error {
    fn from(e: csv::Error) -> Error {
        Error::Format(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapRow {
    pub defense: String,
    pub attack: String,
    pub cap_mean: f64,
    pub cap_std: f64,
}

/// Per-(defense, attack) trade-off score: each seed's accuracy-times-error
/// products are averaged over the strength grid, then summarized across
/// seeds. Groups with no usable rows are omitted.
pub fn cap_table(results: &[RunResult]) -> Result<Vec<CapRow>> {
    let mut groups: BTreeMap<(String, String), BTreeMap<u64, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in results {
        if r.error.is_some() || !r.main_accuracy.is_finite() || !r.recovery_error.is_finite() {
            continue;
        }
        if r.attack == "none" {
            continue;
        }
        groups
            .entry((r.defense.clone(), r.attack.clone()))
            .or_default()
            .entry(r.seed)
            .or_default()
            .push((r.main_accuracy, r.recovery_error));
    }
    let mut out = Vec::new();
    for ((defense, attack), per_seed) in groups {
        let caps: Vec<f64> = per_seed
            .values()
            .filter(|points| !points.is_empty())
            .map(|points| metrics::cap(points))
            .collect::<Result<_>>()?;
        if caps.is_empty() {
            eprintln!("warning: no usable rows for {defense}/{attack}");
            continue;
        }
        let mean = caps.iter().sum::<f64>() / caps.len() as f64;
        let var = caps.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / caps.len() as f64;
        out.push(CapRow {
            defense,
            attack,
            cap_mean: mean,
            cap_std: var.sqrt(),
        });
    }
    Ok(out)
}

/// Shareable checkpoint: architecture and weights plus the defense spec.
/// Passport keys are never part of the model, so none can leak here; frozen
/// inference keys, when used, live in a separate owner-only file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Network,
    pub defense: DefenseSpec,
    pub input_shape: Vec<usize>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(
        path,
        serde_json::to_string(ckpt).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::Format(format!("corrupt checkpoint: {e}")))
}

/// Owner-only file holding frozen passport keys for stable inference.
pub fn save_owner_keys(
    path: &Path,
    keys: &BTreeMap<usize, crate::passport::PassportKey>,
) -> Result<()> {
    std::fs::write(
        path,
        serde_json::to_string(keys).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    Ok(())
}
