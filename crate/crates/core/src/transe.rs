//! Translational base embeddings: energy `‖h + r − t‖`, the margin ranking
//! loss, and minibatch Adam pretraining with per-epoch unit-norm entities.

use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::evaluator::{evaluate, RankMode};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::numerics::{l1_norm, l2_norm, uniform_init, AdamConfig, AdamState, Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(Error::Argument(format!("unknown norm '{other}' (expected l1 or l2)"))),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

impl Norm {
    pub fn apply<F: Real>(self, x: &[F]) -> F {
        match self {
            Norm::L1 => l1_norm(x),
            Norm::L2 => l2_norm(x),
        }
    }

    /// Gradient of the norm with respect to `x`. Zero coordinates (L1) and
    /// the zero vector (L2) get a zero subgradient.
    pub fn grad<F: Real>(self, x: &[F]) -> Vec<F> {
        match self {
            Norm::L1 => x
                .iter()
                .map(|&v| {
                    if v > F::zero() {
                        F::one()
                    } else if v < F::zero() {
                        -F::one()
                    } else {
                        F::zero()
                    }
                })
                .collect(),
            Norm::L2 => {
                let n = l2_norm(x);
                if n == F::zero() {
                    vec![F::zero(); x.len()]
                } else {
                    x.iter().map(|&v| v / n).collect()
                }
            }
        }
    }
}

/// `‖h + r − t‖` under `norm`.
pub fn transe_energy<F: Real>(h: &[F], r: &[F], t: &[F], norm: Norm) -> Result<F> {
    if h.len() != r.len() || r.len() != t.len() {
        return Err(Error::Shape(format!(
            "translation energy over dimensions {}, {}, {}",
            h.len(),
            r.len(),
            t.len()
        )));
    }
    Ok(norm.apply(&translation(h, r, t)))
}

fn translation<F: Real>(h: &[F], r: &[F], t: &[F]) -> Vec<F> {
    h.iter().zip(r).zip(t).map(|((&a, &b), &c)| a + b - c).collect()
}

/// `max(0, γ + E_pos − E_neg)`.
pub fn margin_loss<F: Real>(pos_energy: F, neg_energy: F, margin: F) -> F {
    (margin + pos_energy - neg_energy).max(F::zero())
}

/// Entity and relation embeddings. The relation table carries one extra row
/// past the graph's relations for the self-loop relation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<F> {
    pub entities: Tensor<F>,
    pub relations: Tensor<F>,
}

impl<F: Real> EmbeddingTable<F> {
    /// Uniform on `±6/√d`, relation rows scaled to unit length.
    pub fn init(entity_count: usize, relation_rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 6.0 / (dim as f64).sqrt();
        let entities = uniform_init(entity_count, dim, bound, &mut rng);
        let mut relations = uniform_init(relation_rows, dim, bound, &mut rng);
        for i in 0..relation_rows {
            normalize_row(relations.row_mut(i));
        }
        Self { entities, relations }
    }

    pub fn from_parts(entities: Tensor<F>, relations: Tensor<F>) -> Result<Self> {
        if entities.cols() != relations.cols() {
            return Err(Error::Shape(format!(
                "entity dimension {} != relation dimension {}",
                entities.cols(),
                relations.cols()
            )));
        }
        Ok(Self { entities, relations })
    }

    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.rows()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.rows()
    }

    pub fn entity(&self, e: EntityId) -> &[F] {
        self.entities.row(e.index())
    }

    pub fn relation(&self, r: RelationId) -> &[F] {
        self.relations.row(r.index())
    }

    pub fn energy(&self, h: EntityId, r: RelationId, t: EntityId, norm: Norm) -> F {
        norm.apply(&translation(self.entity(h), self.relation(r), self.entity(t)))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entities: Tensor::zeros(self.entities.rows(), self.entities.cols()),
            relations: Tensor::zeros(self.relations.rows(), self.relations.cols()),
        }
    }

    pub fn normalize_entities(&mut self) {
        for i in 0..self.entities.rows() {
            normalize_row(self.entities.row_mut(i));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entities.is_finite() && self.relations.is_finite()
    }

    pub fn cast<G: Real>(&self) -> EmbeddingTable<G> {
        EmbeddingTable {
            entities: self.entities.cast(),
            relations: self.relations.cast(),
        }
    }

    /// Adds `scale · ∂E/∂params` of one energy term into `grads`.
    fn accumulate_energy_grad(&self, t: &Triple, norm: Norm, scale: F, grads: &mut Self) {
        let diff = translation(self.entity(t.head), self.relation(t.rel), self.entity(t.tail));
        let g = norm.grad(&diff);
        for (k, &gk) in g.iter().enumerate() {
            let v = gk * scale;
            grads.entities.row_mut(t.head.index())[k] += v;
            grads.relations.row_mut(t.rel.index())[k] += v;
            grads.entities.row_mut(t.tail.index())[k] -= v;
        }
    }
}

fn normalize_row<F: Real>(row: &mut [F]) {
    let n = l2_norm(row);
    if n > F::zero() {
        row.iter_mut().for_each(|v| *v /= n);
    }
}

/// Summed margin loss over `(positive, negative)` pairs and its gradient
/// with respect to both tables.
pub fn margin_loss_and_grad<F: Real>(
    table: &EmbeddingTable<F>,
    pairs: &[(Triple, Triple)],
    margin: F,
    norm: Norm,
) -> (F, EmbeddingTable<F>) {
    let mut grads = table.zeros_like();
    let mut loss = F::zero();
    for (pos, neg) in pairs {
        let l = margin_loss(table.energy(pos.head, pos.rel, pos.tail, norm), table.energy(neg.head, neg.rel, neg.tail, norm), margin);
        if l > F::zero() {
            loss += l;
            table.accumulate_energy_grad(pos, norm, F::one(), &mut grads);
            table.accumulate_energy_grad(neg, norm, -F::one(), &mut grads);
        }
    }
    (loss, grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub dim: usize,
    pub lr: f64,
    pub margin: f64,
    pub norm: Norm,
    pub negatives: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop when validation MRR has not improved for this many epochs.
    pub patience: usize,
    pub validate_every: usize,
    /// Cap on validation triples scored per check (0 = all).
    pub valid_sample: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            lr: 0.001,
            margin: 1.0,
            norm: Norm::L1,
            negatives: 1,
            epochs: 1000,
            batch_size: 4096,
            seed: 1,
            patience: 50,
            validate_every: 10,
            valid_sample: 1000,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Argument("embedding dimension must be positive".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Argument("margin must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Trains base embeddings on `kg`. When `valid` is given, raw validation MRR
/// drives early stopping and the best table seen is returned.
pub fn pretrain<F: Real>(kg: &KnowledgeGraph, valid: Option<&KnowledgeGraph>, config: &PretrainConfig) -> Result<EmbeddingTable<F>> {
    config.validate()?;
    let mut table = EmbeddingTable::<F>::init(kg.entity_count(), kg.relation_count() + 1, config.dim, config.seed);
    table.relations.row_mut(kg.self_loop().index()).fill(F::zero());
    if config.epochs == 0 || kg.is_empty() {
        return Ok(table);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x7a5e));
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), [&table.entities, &table.relations]);
    let margin = F::lit(config.margin);
    let mut order: Vec<usize> = (0..kg.len()).collect();
    let valid_triples: Vec<Triple> = valid
        .map(|v| {
            let n = if config.valid_sample == 0 { v.len() } else { config.valid_sample.min(v.len()) };
            v.triples()[..n].to_vec()
        })
        .unwrap_or_default();
    let mut best: Option<(f64, usize, EmbeddingTable<F>)> = None;

    for epoch in 0..config.epochs {
        table.normalize_entities();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut pairs = Vec::with_capacity(chunk.len() * config.negatives);
            for &i in chunk {
                let pos = kg.triples()[i];
                for neg in kg.sample_negatives_with(&pos, config.negatives, &mut rng)? {
                    pairs.push((pos, neg));
                }
            }
            let (loss, grads) = margin_loss_and_grad(&table, &pairs, margin, config.norm);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("pretraining loss at epoch {epoch}, batch {b}")));
            }
            epoch_loss += loss.as_f64();
            adam.step(
                vec![&mut table.entities, &mut table.relations],
                vec![&grads.entities, &grads.relations],
            )?;
        }
        debug!("pretrain epoch {epoch}: loss {epoch_loss:.4}");

        if !valid_triples.is_empty() && (epoch + 1) % config.validate_every.max(1) == 0 {
            let scorer = |h, r, t| table.energy(h, r, t, config.norm).as_f64();
            let report = evaluate(&scorer, &valid_triples, kg.entity_count(), None, RankMode::Raw)?;
            info!("pretrain epoch {}: loss {epoch_loss:.4}, valid raw MRR {:.4}", epoch + 1, report.mrr);
            match &best {
                Some((mrr, _, _)) if report.mrr <= *mrr => {}
                _ => best = Some((report.mrr, epoch, table.clone())),
            }
            if let Some((_, at, _)) = &best {
                if epoch - at >= config.patience {
                    info!("pretrain early stop at epoch {}", epoch + 1);
                    break;
                }
            }
        }
    }
    if !table.is_finite() {
        return Err(Error::Numeric("pretrained embeddings".into()));
    }
    Ok(best.map_or(table, |(_, _, t)| t))
}
