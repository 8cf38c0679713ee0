//! A bilinear fact scorer trained by noisy SGD.
//!
//! The logit of object `o` for subject `s` under relation `r` is
//! `sum_k E[s,k] * R[r,k] * O[o,k]`, normalized by a softmax over the
//! relation's object pool. The object table is a fixed random codebook of
//! unit rows; subjects and relation gates are trained. Every step applies
//! weight decay and seeded Gaussian noise to the subject table, so a subject
//! that stops appearing in the data drifts back to a random embedding.
//! Relation gates decay toward one.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::synth::{Triple, ToyWorld};
use super::ToyError;
use crate::corpus::DataBatch;
use crate::evaluator::{predict, ChoiceScore, ChoiceScorer, EvalError, Normalization};
use crate::item::EvalItem;
use crate::selector::{CorrectnessMatrix, Step};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub learning_rate: f64,
    /// Per-step shrink factor is `1 - learning_rate * weight_decay`.
    pub weight_decay: f64,
    /// Standard deviation of the per-step, per-parameter noise.
    pub noise_scale: f64,
    pub init_scale: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            learning_rate: 0.5,
            weight_decay: 0.01,
            noise_scale: 0.02,
            init_scale: 0.1,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub config: ModelConfig,
    subjects: Vec<f64>,
    relations: Vec<f64>,
    objects: Vec<f64>,
    step: u64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt().max(1e-12)
}

fn gaussian_table(rng: &mut ChaCha8Rng, len: usize, mean: f64, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| mean + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

impl ToyModel {
    /// Fresh model for `world` at step 0. Relation gates start near one.
    pub fn new(config: ModelConfig, world: &ToyWorld) -> Self {
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let subjects = gaussian_table(&mut rng, world.facts().len() * d, 0.0, config.init_scale);
        let relations = gaussian_table(&mut rng, world.relations().len() * d, 1.0, config.init_scale);
        let mut objects = gaussian_table(&mut rng, world.object_count() * d, 0.0, 1.0);
        for row in objects.chunks_mut(d) {
            let n = norm(row);
            row.iter_mut().for_each(|x| *x /= n);
        }
        Self {
            config,
            subjects,
            relations,
            objects,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn subject(&self, fact: usize) -> &[f64] {
        Self::row(&self.subjects, fact, self.config.dim)
    }

    pub fn is_finite(&self) -> bool {
        self.subjects
            .iter()
            .chain(&self.relations)
            .chain(&self.objects)
            .all(|x| x.is_finite())
    }

    fn row(table: &[f64], i: usize, d: usize) -> &[f64] {
        &table[i * d..(i + 1) * d]
    }

    /// Log-probabilities over `pool` for subject `fact` under `relation`.
    pub fn log_probs(&self, fact: usize, relation: usize, pool: &[usize]) -> Vec<f64> {
        let d = self.config.dim;
        self.log_probs_with(Self::row(&self.subjects, fact, d), relation, pool)
    }

    /// Log-probabilities over `pool` for an arbitrary subject embedding.
    pub fn log_probs_with(&self, e: &[f64], relation: usize, pool: &[usize]) -> Vec<f64> {
        let d = self.config.dim;
        let r = Self::row(&self.relations, relation, d);
        let h: Vec<f64> = e.iter().zip(r).map(|(a, b)| a * b).collect();
        let logits: Vec<f64> = pool
            .iter()
            .map(|&o| dot(Self::row(&self.objects, o, d), &h))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        logits.iter().map(|z| z - lse).collect()
    }

    /// One SGD step on the summed cross-entropy of `triples`, followed by
    /// weight decay and noise. Returns the loss.
    pub fn update(&mut self, world: &ToyWorld, triples: &[Triple], noise_seed: u64) -> f64 {
        let d = self.config.dim;
        let lr = self.config.learning_rate;
        let mut loss = 0.0;
        let mut g_sub: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut g_rel: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for t in triples {
            let pool = &world.relations()[t.relation].objects;
            let lp = self.log_probs(t.fact, t.relation, pool);
            let e = Self::row(&self.subjects, t.fact, d);
            let r = Self::row(&self.relations, t.relation, d);
            let mut dh = vec![0.0; d];
            for (&o, &l) in pool.iter().zip(&lp) {
                let dz = l.exp() - f64::from(o == t.object);
                if o == t.object {
                    loss -= l;
                }
                for (g, &u) in dh.iter_mut().zip(Self::row(&self.objects, o, d)) {
                    *g += dz * u;
                }
            }
            let gs = g_sub.entry(t.fact).or_insert_with(|| vec![0.0; d]);
            for k in 0..d {
                gs[k] += dh[k] * r[k];
            }
            let gr = g_rel.entry(t.relation).or_insert_with(|| vec![0.0; d]);
            for k in 0..d {
                gr[k] += dh[k] * e[k];
            }
        }
        for (table, grads) in [(&mut self.subjects, &g_sub), (&mut self.relations, &g_rel)] {
            for (&i, g) in grads {
                for (x, gk) in table[i * d..(i + 1) * d].iter_mut().zip(g) {
                    *x -= lr * gk;
                }
            }
        }

        let shrink = 1.0 - lr * self.config.weight_decay;
        let sigma = self.config.noise_scale;
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        rng.set_stream(self.step);
        for x in &mut self.subjects {
            let xi: f64 = rng.sample(StandardNormal);
            *x = *x * shrink + sigma * xi;
        }
        for x in &mut self.relations {
            *x = 1.0 + (*x - 1.0) * shrink;
        }
        self.step += 1;
        loss
    }
}

/// Scores item choices with a model; items are looked up by id.
pub struct ToyScorer<'a> {
    model: &'a ToyModel,
    world: &'a ToyWorld,
    facts: BTreeMap<String, usize>,
    objects: BTreeMap<&'a str, usize>,
}

impl<'a> ToyScorer<'a> {
    pub fn new(model: &'a ToyModel, world: &'a ToyWorld) -> Self {
        Self {
            model,
            world,
            facts: (0..world.facts().len()).map(|f| (world.item_id(f), f)).collect(),
            objects: (0..world.object_count()).map(|o| (world.object_name(o), o)).collect(),
        }
    }
}

impl ChoiceScorer for ToyScorer<'_> {
    fn choice_scores(&self, item: &EvalItem) -> Result<Vec<ChoiceScore>, EvalError> {
        let missing = || EvalError::MissingScores(item.item_id.clone());
        let &fact = self.facts.get(&item.item_id).ok_or_else(missing)?;
        let rel = self.world.facts()[fact].relation;
        let pool = &self.world.relations()[rel].objects;
        let lp = self.model.log_probs(fact, rel, pool);
        item.choices
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let o = self.objects.get(c.as_str()).ok_or_else(missing)?;
                let at = pool.iter().position(|p| p == o).ok_or_else(missing)?;
                Ok(ChoiceScore {
                    item_id: item.item_id.clone(),
                    choice_index: i,
                    logprob: lp[at],
                    num_tokens: 1,
                    num_chars: c.chars().count(),
                    prior_logprob: None,
                })
            })
            .collect()
    }
}

/// Per-item correctness of `model` on `items`.
pub fn evaluate(model: &ToyModel, world: &ToyWorld, items: &[EvalItem]) -> Result<BTreeMap<String, bool>, ToyError> {
    Ok(predict(&ToyScorer::new(model, world), items, Normalization::None)?)
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Model snapshots keyed by step, including the starting state.
    pub checkpoints: BTreeMap<Step, ToyModel>,
    pub matrix: CorrectnessMatrix,
}

impl TrainRun {
    pub fn checkpoint(&self, step: Step) -> Result<&ToyModel, ToyError> {
        self.checkpoints.get(&step).ok_or(ToyError::UnknownCheckpoint(step))
    }
}

fn train_sequence(model: &mut ToyModel, world: &ToyWorld, seq: &[u32], noise_seed: u64) -> Result<(), ToyError> {
    let triples = world.extract(seq);
    let loss = model.update(world, &triples, noise_seed);
    if !loss.is_finite() || !model.is_finite() {
        return Err(ToyError::Diverged { step: model.step });
    }
    Ok(())
}

/// Trains on one batch without taking snapshots.
pub fn train_batch(
    model: &mut ToyModel,
    world: &ToyWorld,
    batch: &DataBatch,
    sequence_length: usize,
    noise_seed: u64,
) -> Result<(), ToyError> {
    if sequence_length == 0 {
        return Err(ToyError::InvalidSpec("sequence_length must be positive".into()));
    }
    for seq in batch.tokens().chunks(sequence_length) {
        train_sequence(model, world, seq, noise_seed)?;
    }
    Ok(())
}

/// Trains on `batches` in order, one step per sequence of `sequence_length`
/// tokens. Snapshots are taken at the start, at every batch end and, when
/// `checkpoint_every` is set, at every multiple of it.
pub fn train(
    model: &mut ToyModel,
    world: &ToyWorld,
    batches: &[DataBatch],
    sequence_length: usize,
    checkpoint_every: Option<u64>,
    noise_seed: u64,
    items: &[EvalItem],
) -> Result<TrainRun, ToyError> {
    if sequence_length == 0 {
        return Err(ToyError::InvalidSpec("sequence_length must be positive".into()));
    }
    if checkpoint_every == Some(0) {
        return Err(ToyError::InvalidSpec("checkpoint_every must be positive".into()));
    }
    let mut checkpoints = BTreeMap::new();
    checkpoints.insert(model.step, model.clone());
    for batch in batches {
        for seq in batch.tokens().chunks(sequence_length) {
            train_sequence(model, world, seq, noise_seed)?;
            if checkpoint_every.is_some_and(|c| model.step.is_multiple_of(c)) {
                checkpoints.insert(model.step, model.clone());
            }
        }
        checkpoints.insert(model.step, model.clone());
    }
    let mut rows = vec![Vec::with_capacity(checkpoints.len()); items.len()];
    for m in checkpoints.values() {
        let correct = evaluate(m, world, items)?;
        for (row, item) in rows.iter_mut().zip(items) {
            row.push(correct[&item.item_id]);
        }
    }
    let matrix = CorrectnessMatrix::new(
        checkpoints.keys().copied().collect(),
        items.iter().map(|i| i.item_id.clone()).collect(),
        rows,
    )?;
    Ok(TrainRun { checkpoints, matrix })
}
