//! K-passive + 1-active split-learning protocol: record alignment, per-round
//! forward-embedding exchange, sum fusion, active-side obfuscation and loss,
//! gradient fan-out and local updates, over a deterministic in-process
//! transport.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::defenses::{apply_tensor_defense, DefenseSpec, DefenseTarget};
use crate::error::{Error, Result};
use crate::network::{ActivationTrace, Network, SlotKeys};
use crate::nn::cross_entropy_loss;
use crate::tensor::Tensor;

pub type PartyId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    ForwardEmbedding {
        party: PartyId,
        round: u64,
        batch: Vec<usize>,
        embedding: Tensor,
    },
    BackwardGradient {
        party: PartyId,
        round: u64,
        grad: Tensor,
    },
}

/// Direction-only record of every delivered message, kept for protocol
/// safety assertions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEntry {
    Forward { party: PartyId, round: u64, shape: Vec<usize> },
    Backward { party: PartyId, round: u64, shape: Vec<usize> },
}

#[derive(Debug, Default)]
pub struct TransportLog {
    pub entries: Vec<LogEntry>,
}

impl TransportLog {
    pub fn record(&mut self, msg: &Message) {
        self.entries.push(match msg {
            Message::ForwardEmbedding {
                party,
                round,
                embedding,
                ..
            } => LogEntry::Forward {
                party: *party,
                round: *round,
                shape: embedding.shape().to_vec(),
            },
            Message::BackwardGradient { party, round, grad } => LogEntry::Backward {
                party: *party,
                round: *round,
                shape: grad.shape().to_vec(),
            },
        });
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Number of communication rounds (batch steps).
    pub rounds: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Optional global gradient-norm clip applied by every party before its
    /// SGD step. Large derived scale factors inflate early gradients at high
    /// key magnitudes; clipping keeps those runs stable.
    pub clip_norm: Option<f64>,
    pub parties: usize,
    pub seed: u64,
}

/// Whether inference resamples fresh passports per forward pass or freezes a
/// single key set for the whole evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    Resample,
    Frozen,
}

pub struct PassiveParty {
    pub id: PartyId,
    /// Feature shard, first axis indexes aligned records.
    pub dataset: Tensor,
    pub model: Network,
    pub defense: DefenseSpec,
    rng: ChaCha20Rng,
    retained: Option<RetainedRound>,
}

struct RetainedRound {
    round: u64,
    trace: ActivationTrace,
}

pub struct ActiveParty {
    /// Labels aligned with the record order.
    pub labels: Vec<usize>,
    pub model: Network,
    pub defense: DefenseSpec,
    rng: ChaCha20Rng,
}

fn party_rng(seed: u64, party: PartyId) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(party as u64 + 1)))
}

impl PassiveParty {
    pub fn new(
        id: PartyId,
        dataset: Tensor,
        model: Network,
        defense: DefenseSpec,
        seed: u64,
    ) -> PassiveParty {
        PassiveParty {
            id,
            dataset,
            model,
            defense,
            rng: party_rng(seed, id),
            retained: None,
        }
    }

    /// Computes H_k for a batch, retaining the trace for the round's backward.
    pub fn forward(&mut self, batch: &[usize], round: u64) -> Result<Message> {
        if let Some(r) = &self.retained {
            if r.round == round {
                return Err(Error::Protocol(format!(
                    "party {} already produced an embedding for round {round}",
                    self.id
                )));
            }
        }
        let x = self.dataset.select_rows(batch)?;
        let keys = self.model.sample_keys(batch.len(), &mut self.rng);
        let trace = self.model.forward(&x, &keys)?;
        let embedding = apply_tensor_defense(
            &trace.output,
            &self.defense,
            DefenseTarget::Embeddings,
            &mut self.rng,
        )?;
        self.retained = Some(RetainedRound { round, trace });
        Ok(Message::ForwardEmbedding {
            party: self.id,
            round,
            batch: batch.to_vec(),
            embedding,
        })
    }

    /// Chain-rule update of the local model from the active party's gradient.
    pub fn update(
        &mut self,
        msg: &Message,
        lr: f64,
        weight_decay: f64,
        clip_norm: Option<f64>,
    ) -> Result<()> {
        let (round, grad) = match msg {
            Message::BackwardGradient { party, round, grad } => {
                if *party != self.id {
                    return Err(Error::Protocol(format!(
                        "gradient addressed to party {party}, held by {}",
                        self.id
                    )));
                }
                (*round, grad)
            }
            _ => return Err(Error::Protocol("expected a backward gradient".into())),
        };
        let retained = self.retained.take().ok_or_else(|| {
            Error::Protocol(format!("party {} has no retained trace", self.id))
        })?;
        if retained.round != round {
            self.retained = Some(retained);
            return Err(Error::Protocol(format!(
                "gradient for round {round} but retained round differs"
            )));
        }
        let mut grads = self.model.backward(&retained.trace, grad)?;
        if let Some(max_norm) = clip_norm {
            grads.clip_norm(max_norm);
        }
        self.model.sgd_step(&grads, lr, weight_decay)?;
        Ok(())
    }

    /// Inference forward (no trace retention, no defense-independent state
    /// change other than RNG advancement when resampling passports).
    pub fn infer(&mut self, x: &Tensor, frozen: Option<&SlotKeys>) -> Result<Tensor> {
        let keys = match frozen {
            Some(k) => k.clone(),
            None => self.model.sample_keys(x.shape()[0], &mut self.rng),
        };
        Ok(self.model.forward(x, &keys)?.output)
    }

    pub fn freeze_keys(&mut self, batch: usize) -> SlotKeys {
        self.model.sample_keys(batch, &mut self.rng)
    }
}

impl ActiveParty {
    pub fn new(
        labels: Vec<usize>,
        model: Network,
        defense: DefenseSpec,
        seed: u64,
    ) -> ActiveParty {
        ActiveParty {
            labels,
            model,
            defense,
            rng: party_rng(seed, 0),
        }
    }

    /// Fuses the K embeddings, applies its own obfuscation, computes the
    /// loss, updates the active model, and fans out one gradient per party.
    pub fn step(
        &mut self,
        embeddings: &[Message],
        expected_parties: &[PartyId],
        lr: f64,
        weight_decay: f64,
        clip_norm: Option<f64>,
    ) -> Result<(f64, Vec<Message>)> {
        let (round, batch) = match embeddings.first() {
            Some(Message::ForwardEmbedding { round, batch, .. }) => (*round, batch.clone()),
            _ => return Err(Error::Protocol("no forward embeddings supplied".into())),
        };
        for id in expected_parties {
            let found = embeddings.iter().any(|m| {
                matches!(m, Message::ForwardEmbedding { party, round: r, .. } if party == id && *r == round)
            });
            if !found {
                return Err(Error::Protocol(format!(
                    "missing embedding from party {id} in round {round}"
                )));
            }
        }
        let mut fused: Option<Tensor> = None;
        for msg in embeddings {
            let (b, h) = match msg {
                Message::ForwardEmbedding { batch: b, embedding, .. } => (b, embedding),
                _ => return Err(Error::Protocol("unexpected message kind".into())),
            };
            if b != &batch {
                return Err(Error::Protocol("embeddings disagree on the batch".into()));
            }
            fused = Some(match fused {
                None => h.clone(),
                Some(acc) => acc.add(h)?,
            });
        }
        let fused = fused.unwrap();
        let labels: Vec<usize> = batch.iter().map(|&i| self.labels[i]).collect();

        let keys = self.model.sample_keys(batch.len(), &mut self.rng);
        let trace = self.model.forward(&fused, &keys)?;
        let (loss, logit_grad) = cross_entropy_loss(&trace.output, &labels)?;
        let mut grads = self.model.backward(&trace, &logit_grad)?;
        let fused_grad = grads.input.clone();
        if let Some(max_norm) = clip_norm {
            grads.clip_norm(max_norm);
        }
        self.model.sgd_step(&grads, lr, weight_decay)?;

        // Sum fusion: d(sum H_k)/dH_k = I, so every party receives the same
        // gradient, after any gradient-boundary defense.
        let mut out = Vec::with_capacity(expected_parties.len());
        for &party in expected_parties {
            let protected = apply_tensor_defense(
                &fused_grad,
                &self.defense,
                DefenseTarget::Gradients,
                &mut self.rng,
            )?;
            out.push(Message::BackwardGradient {
                party,
                round,
                grad: protected,
            });
        }
        Ok((loss, out))
    }

    pub fn infer_logits(&mut self, fused: &Tensor, frozen: Option<&SlotKeys>) -> Result<Tensor> {
        let keys = match frozen {
            Some(k) => k.clone(),
            None => self.model.sample_keys(fused.shape()[0], &mut self.rng),
        };
        Ok(self.model.forward(fused, &keys)?.output)
    }

    pub fn freeze_keys(&mut self, batch: usize) -> SlotKeys {
        self.model.sample_keys(batch, &mut self.rng)
    }
}

/// Sorted intersection of all parties' id lists. An alignment stub, not
/// cryptographic PSI.
pub fn align_records(id_lists: &[Vec<u64>]) -> Result<Vec<u64>> {
    if id_lists.is_empty() {
        return Err(Error::Config("no id lists to align".into()));
    }
    for (i, l) in id_lists.iter().enumerate() {
        let mut seen = std::collections::HashSet::new();
        if !l.iter().all(|id| seen.insert(id)) {
            return Err(Error::Config(format!("duplicate ids in list {i}")));
        }
    }
    let mut common: Vec<u64> = id_lists[0].clone();
    for l in &id_lists[1..] {
        let set: std::collections::HashSet<u64> = l.iter().copied().collect();
        common.retain(|id| set.contains(id));
    }
    common.sort_unstable();
    if common.is_empty() {
        return Err(Error::Protocol("empty record intersection".into()));
    }
    Ok(common)
}

/// Positions of the aligned ids inside one party's own id list, in aligned
/// order; parties use this to reindex their shards.
pub fn reindex(own_ids: &[u64], aligned: &[u64]) -> Result<Vec<usize>> {
    let pos: std::collections::HashMap<u64, usize> =
        own_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    aligned
        .iter()
        .map(|id| {
            pos.get(id)
                .copied()
                .ok_or_else(|| Error::Protocol(format!("aligned id {id} not held")))
        })
        .collect()
}

/// Deterministic per-round batch index lists: a shuffled epoch permutation
/// consumed in contiguous chunks, reshuffled when exhausted.
pub fn batch_plan(cfg: &TrainingConfig, n: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut cursor = n; // force an initial shuffle
    let mut plan = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        if cursor + cfg.batch_size > n {
            perm.shuffle(&mut rng);
            cursor = 0;
        }
        plan.push(perm[cursor..cursor + cfg.batch_size].to_vec());
        cursor += cfg.batch_size;
    }
    plan
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub round_loss: Vec<f64>,
}

/// Runs T rounds of the three-step loop over the in-process transport.
pub fn train(
    cfg: &TrainingConfig,
    passives: &mut [PassiveParty],
    active: &mut ActiveParty,
    log: &mut TransportLog,
) -> Result<TrainHistory> {
    if passives.is_empty() {
        return Err(Error::Config("at least one passive party required".into()));
    }
    let n = passives[0].dataset.shape()[0];
    for p in passives.iter() {
        if p.dataset.shape()[0] != n {
            return Err(Error::Protocol("unaligned passive shards".into()));
        }
    }
    if active.labels.len() != n {
        return Err(Error::Protocol("labels not aligned with shards".into()));
    }
    if cfg.batch_size > n {
        return Err(Error::Config("batch size exceeds aligned dataset".into()));
    }
    let ids: Vec<PartyId> = passives.iter().map(|p| p.id).collect();
    let plan = batch_plan(cfg, n);
    let mut history = TrainHistory::default();
    for (round, batch) in plan.iter().enumerate() {
        let round = round as u64;
        let mut embeddings = Vec::with_capacity(passives.len());
        for p in passives.iter_mut() {
            let msg = p.forward(batch, round)?;
            log.record(&msg);
            embeddings.push(msg);
        }
        let (loss, grads) = active.step(&embeddings, &ids, cfg.lr, cfg.weight_decay, cfg.clip_norm)?;
        history.round_loss.push(loss);
        for msg in &grads {
            log.record(msg);
            let party = match msg {
                Message::BackwardGradient { party, .. } => *party,
                _ => unreachable!(),
            };
            let p = passives
                .iter_mut()
                .find(|p| p.id == party)
                .ok_or_else(|| Error::Protocol(format!("unknown party {party}")))?;
            p.update(msg, cfg.lr, cfg.weight_decay, cfg.clip_norm)?;
        }
    }
    Ok(history)
}

/// Fraction of argmax-correct predictions through the parties' inference
/// path, in chunks.
pub fn evaluate(
    passives: &mut [PassiveParty],
    active: &mut ActiveParty,
    test_shards: &[Tensor],
    test_labels: &[usize],
    mode: InferenceMode,
) -> Result<f64> {
    if test_shards.len() != passives.len() {
        return Err(Error::Protocol("one test shard per passive party".into()));
    }
    let n = test_shards[0].shape()[0];
    if test_labels.len() != n {
        return Err(Error::Protocol("test labels misaligned".into()));
    }
    let chunk = 256usize;
    let mut correct = 0usize;
    let mut start = 0usize;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let mut fused: Option<Tensor> = None;
        for (p, shard) in passives.iter_mut().zip(test_shards) {
            let x = shard.select_rows(&idx)?;
            let frozen = match mode {
                InferenceMode::Resample => None,
                InferenceMode::Frozen => Some(p.freeze_keys(idx.len())),
            };
            let h = p.infer(&x, frozen.as_ref())?;
            fused = Some(match fused {
                None => h,
                Some(acc) => acc.add(&h)?,
            });
        }
        let frozen = match mode {
            InferenceMode::Resample => None,
            InferenceMode::Frozen => Some(active.freeze_keys(idx.len())),
        };
        let logits = active.infer_logits(&fused.unwrap(), frozen.as_ref())?;
        let classes = logits.shape()[1];
        for (r, &label) in idx.iter().zip(&test_labels[start..end]).map(|(r, l)| (*r - start, l)).collect::<Vec<_>>() {
            let row = &logits.data()[r * classes..(r + 1) * classes];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use rand::Rng;

    #[test]
    fn align_basic_intersection() {
        let out = align_records(&[vec![1, 2, 3], vec![2, 3, 4]]).unwrap();
        assert_eq!(out, vec![2, 3]);
        let same = align_records(&[vec![5, 1, 9], vec![5, 1, 9]]).unwrap();
        assert_eq!(same, vec![1, 5, 9]);
        assert!(align_records(&[vec![1], vec![2]]).is_err());
        assert!(align_records(&[vec![1, 1], vec![1]]).is_err());
    }

    #[test]
    fn align_three_party_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let mut lists = Vec::new();
        for _ in 0..3 {
            let mut ids: Vec<u64> = (0..100).filter(|_| rng.random::<f64>() < 0.7).collect();
            ids.shuffle(&mut rng);
            lists.push(ids);
        }
        if let Ok(aligned) = align_records(&lists) {
            // brute-force triple intersection
            let expect: Vec<u64> = (0..100)
                .filter(|id| lists.iter().all(|l| l.contains(id)))
                .collect();
            assert_eq!(aligned, expect);
        }
    }

    #[test]
    fn reindex_maps_alignment() {
        let own = vec![30u64, 10, 20];
        let aligned = vec![10u64, 30];
        assert_eq!(reindex(&own, &aligned).unwrap(), vec![1, 0]);
        assert!(reindex(&own, &[99]).is_err());
    }

    #[test]
    fn batch_plan_is_deterministic_and_covers() {
        let cfg = TrainingConfig {
            rounds: 6,
            batch_size: 4,
            lr: 0.1,
            weight_decay: 0.0,
            clip_norm: None,
            parties: 1,
            seed: 3,
        };
        let a = batch_plan(&cfg, 10);
        let b = batch_plan(&cfg, 10);
        assert_eq!(a, b);
        for batch in &a {
            assert_eq!(batch.len(), 4);
            let mut sorted = batch.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 4);
        }
    }

    fn identity_passive(id: usize, data: Tensor, seed: u64) -> PassiveParty {
        let dim = data.shape()[1];
        let mut eye = Tensor::zeros(vec![dim, dim]);
        for i in 0..dim {
            eye.data_mut()[i * dim + i] = 1.0;
        }
        PassiveParty::new(
            id,
            data,
            Network::plain(vec![Layer::Linear {
                weight: eye,
                bias: Tensor::zeros(vec![dim]),
            }]),
            DefenseSpec::None,
            seed,
        )
    }

    #[test]
    fn identity_model_emits_raw_batch() {
        let data = Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut p = identity_passive(1, data.clone(), 0);
        let msg = p.forward(&[2, 0], 0).unwrap();
        match msg {
            Message::ForwardEmbedding { embedding, .. } => {
                assert_eq!(embedding.data(), &[5., 6., 1., 2.]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn round_replay_is_rejected() {
        let data = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        let mut p = identity_passive(1, data, 0);
        p.forward(&[0], 5).unwrap();
        assert!(p.forward(&[0], 5).is_err());
    }

    #[test]
    fn update_without_trace_errors() {
        let data = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        let mut p = identity_passive(1, data, 0);
        let msg = Message::BackwardGradient {
            party: 1,
            round: 0,
            grad: Tensor::zeros(vec![1, 2]),
        };
        assert!(p.update(&msg, 0.1, 0.0, None).is_err());
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let data = Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let mut p = identity_passive(1, data, 0);
        let before = p.model.flat_params();
        p.forward(&[0, 1], 0).unwrap();
        let msg = Message::BackwardGradient {
            party: 1,
            round: 0,
            grad: Tensor::zeros(vec![2, 2]),
        };
        p.update(&msg, 0.1, 0.0, None).unwrap();
        assert_eq!(p.model.flat_params(), before);
    }

    #[test]
    fn missing_embedding_names_party() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut active = ActiveParty::new(
            vec![0, 1],
            Network::plain(vec![Layer::linear_init(2, 2, &mut rng)]),
            DefenseSpec::None,
            7,
        );
        let data = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        let mut p = identity_passive(1, data, 0);
        let msg = p.forward(&[0], 0).unwrap();
        let err = active.step(&[msg], &[1, 2], 0.1, 0.0, None).unwrap_err();
        assert!(format!("{err}").contains("party 2"));
    }

    #[test]
    fn zero_second_embedding_matches_single_party_loss() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let model = Network::plain(vec![Layer::linear_init(2, 2, &mut rng)]);
        let mut active1 = ActiveParty::new(vec![0, 1], model.clone(), DefenseSpec::None, 7);
        let mut active2 = ActiveParty::new(vec![0, 1], model, DefenseSpec::None, 7);
        let h = Tensor::new(vec![2, 2], vec![0.3, -0.8, 1.2, 0.4]).unwrap();
        let fwd = |party, embedding: Tensor| Message::ForwardEmbedding {
            party,
            round: 0,
            batch: vec![0, 1],
            embedding,
        };
        let (l1, g1) = active1
            .step(&[fwd(1, h.clone())], &[1], 0.0, 0.0, None)
            .unwrap();
        let (l2, g2) = active2
            .step(
                &[fwd(1, h.clone()), fwd(2, Tensor::zeros(vec![2, 2]))],
                &[1, 2],
                0.0,
                0.0,
                None,
            )
            .unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        // sum fusion: identical gradients across parties
        match (&g1[0], &g2[0], &g2[1]) {
            (
                Message::BackwardGradient { grad: a, .. },
                Message::BackwardGradient { grad: b, .. },
                Message::BackwardGradient { grad: c, .. },
            ) => {
                assert_eq!(a.data(), b.data());
                assert_eq!(b.data(), c.data());
            }
            _ => panic!(),
        }
    }
}
