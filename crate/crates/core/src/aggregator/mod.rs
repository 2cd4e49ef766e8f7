//! Two-layer neighbor aggregation. Each layer builds inputs for original and
//! transformed one-hop neighbors, attends within each type with `k_m` heads,
//! mixes the `2·k_m` head outputs with `k_s` self-attention heads, and fuses
//! them through a dense layer. Layer 2 consumes layer-1 outputs of the entity
//! and of its neighbors.

mod layer;
mod params;

pub use layer::{
    aggregate_head, build_input, layer_backward, layer_forward, neighbor_attention, self_attention_fuse, Dropout,
    InputGrads, LayerCache, LayerInput,
};
pub use params::{AggregatorDims, AggregatorParams, FeatureMask, LayerParams};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::kg::{EntityId, KnowledgeGraph, Neighbor, NeighborSets, Triple};
use crate::numerics::{chunked_reduce, AdamConfig, AdamState, Real, Tensor};
use crate::rules::TransformedNeighbor;
use crate::transe::{transe_energy, EmbeddingTable, Norm};
use crate::{Error, Result};

/// The neighbors one entity aggregates over in one pass.
#[derive(Clone, Debug)]
pub struct Neighborhood<'a> {
    pub original: Vec<Neighbor>,
    pub transformed: Vec<&'a TransformedNeighbor>,
}

/// Chooses each entity's neighborhood. With a cap, at most `cap` neighbors
/// of each type are drawn uniformly without replacement; the draw depends
/// only on `seed` and the entity.
#[derive(Clone, Copy, Debug)]
pub struct NeighborSampler<'a> {
    sets: &'a NeighborSets,
    cap: usize,
    seed: u64,
    use_transformed: bool,
}

impl<'a> NeighborSampler<'a> {
    /// Every neighbor of both types.
    pub fn all(sets: &'a NeighborSets) -> Self {
        Self {
            sets,
            cap: 0,
            seed: 0,
            use_transformed: true,
        }
    }

    /// `cap = 0` keeps every neighbor.
    pub fn new(sets: &'a NeighborSets, cap: usize, seed: u64, use_transformed: bool) -> Self {
        Self {
            sets,
            cap,
            seed,
            use_transformed,
        }
    }

    pub fn sets(&self) -> &'a NeighborSets {
        self.sets
    }

    pub fn neighborhood(&self, e: EntityId) -> Neighborhood<'a> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(e.0 as u64);
        let original = pick(&self.sets.original[e.index()], self.cap, &mut rng);
        let transformed = if self.use_transformed {
            let all: Vec<&TransformedNeighbor> = self.sets.transformed[e.index()].iter().collect();
            pick(&all, self.cap, &mut rng)
        } else {
            Vec::new()
        };
        Neighborhood { original, transformed }
    }
}

fn pick<T: Clone>(items: &[T], cap: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if cap == 0 || items.len() <= cap {
        return items.to_vec();
    }
    let mut idx = rand::seq::index::sample(rng, items.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

/// `W · r` for every relation row of `relations`.
fn transform_relations<F: Real>(w: &Tensor<F>, relations: &Tensor<F>) -> Tensor<F> {
    let mut out = Tensor::zeros(relations.rows(), w.rows());
    for i in 0..relations.rows() {
        out.row_mut(i).copy_from_slice(&w.matvec(relations.row(i)));
    }
    out
}

fn check_compatible<F: Real>(sets: &NeighborSets, base: &EmbeddingTable<F>, params: &AggregatorParams<F>) -> Result<()> {
    if base.dim() != params.dims.d {
        return Err(Error::Shape(format!(
            "base embeddings have dimension {}, aggregator expects {}",
            base.dim(),
            params.dims.d
        )));
    }
    if sets.entity_count() != base.entity_count() {
        return Err(Error::Consistency(format!(
            "neighbor sets cover {} entities, embeddings {}",
            sets.entity_count(),
            base.entity_count()
        )));
    }
    let nr = base.relation_count();
    let ne = base.entity_count();
    for (o, t) in sets.original.iter().zip(&sets.transformed) {
        let rels = o.iter().map(|n| (n.0, n.1)).chain(t.iter().map(|n| (n.rel, n.entity)));
        for (r, e) in rels {
            if r.index() >= nr {
                return Err(Error::Index {
                    kind: "relation",
                    id: r.index(),
                    count: nr,
                });
            }
            if e.index() >= ne {
                return Err(Error::Index {
                    kind: "entity",
                    id: e.index(),
                    count: ne,
                });
            }
        }
    }
    Ok(())
}

/// Shared state of one forward/backward pass over a set of entities.
struct Encoder<'a, F> {
    params: &'a AggregatorParams<F>,
    base: &'a EmbeddingTable<F>,
    /// Base relations mapped into layer-2 input space.
    rel1: Tensor<F>,
    dropout: Option<(f64, u64)>,
}

impl<'a, F: Real> Encoder<'a, F> {
    fn new(params: &'a AggregatorParams<F>, base: &'a EmbeddingTable<F>, dropout: Option<(f64, u64)>) -> Self {
        Self {
            params,
            base,
            rel1: transform_relations(&params.w_r1, &base.relations),
            dropout,
        }
    }

    fn dropout_for(&self, layer: usize, e: EntityId) -> Option<Dropout> {
        self.dropout.map(|(p, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((layer as u64) << 32) | e.0 as u64);
            Dropout { p, seed: rng.next_u64() }
        })
    }

    fn input1<'b>(&'b self, e: EntityId, nb: &Neighborhood) -> LayerInput<'b, F> {
        let b = self.base;
        LayerInput {
            entity: b.entity(e),
            original: nb.original.iter().map(|&(r, t)| (b.relation(r), b.entity(t))).collect(),
            transformed: nb
                .transformed
                .iter()
                .map(|n| (b.relation(n.rel), b.entity(n.entity), self.params.mask.select(n)))
                .collect(),
        }
    }

    fn input2<'b>(&'b self, e: EntityId, nb: &Neighborhood, e1: &'b [Vec<F>]) -> LayerInput<'b, F> {
        LayerInput {
            entity: &e1[e.index()],
            original: nb
                .original
                .iter()
                .map(|&(r, t)| (self.rel1.row(r.index()), e1[t.index()].as_slice()))
                .collect(),
            transformed: nb
                .transformed
                .iter()
                .map(|n| (self.rel1.row(n.rel.index()), e1[n.entity.index()].as_slice(), self.params.mask.select(n)))
                .collect(),
        }
    }

    fn forward1(&self, e: EntityId, nb: &Neighborhood) -> Result<(Vec<F>, LayerCache<F>)> {
        layer_forward(&self.params.layers[0], &self.input1(e, nb), self.dropout_for(0, e))
    }

    fn forward2(&self, e: EntityId, nb: &Neighborhood, e1: &[Vec<F>]) -> Result<(Vec<F>, LayerCache<F>)> {
        layer_forward(&self.params.layers[1], &self.input2(e, nb, e1), self.dropout_for(1, e))
    }
}

fn sorted_unique(mut v: Vec<EntityId>) -> Vec<EntityId> {
    v.sort_unstable();
    v.dedup();
    v
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Materialized encoder outputs for every entity, in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborEmbeddings<F> {
    /// `entity_count × d1`
    pub layer1: Tensor<F>,
    /// `entity_count × d2`
    pub entities: Tensor<F>,
    /// Relations mapped by `w_r2`, `relation rows × d2`.
    pub relations: Tensor<F>,
}

impl<F: Real> NeighborEmbeddings<F> {
    pub fn energy(&self, h: EntityId, r: crate::kg::RelationId, t: EntityId, norm: Norm) -> F {
        let diff: Vec<F> = self
            .entities
            .row(h.index())
            .iter()
            .zip(self.relations.row(r.index()))
            .zip(self.entities.row(t.index()))
            .map(|((&a, &b), &c)| a + b - c)
            .collect();
        norm.apply(&diff)
    }
}

/// Runs both layers for every entity over all of its neighbors.
pub fn encode_all<F: Real>(
    sets: &NeighborSets,
    base: &EmbeddingTable<F>,
    params: &AggregatorParams<F>,
) -> Result<NeighborEmbeddings<F>> {
    check_compatible(sets, base, params)?;
    let sampler = NeighborSampler::all(sets);
    let enc = Encoder::new(params, base, None);
    let n = base.entity_count();
    let e1: Vec<Vec<F>> = (0..n as u32)
        .into_par_iter()
        .map(|e| enc.forward1(EntityId(e), &sampler.neighborhood(EntityId(e))).map(|o| o.0))
        .collect::<Result<_>>()?;
    let e2: Vec<Vec<F>> = (0..n as u32)
        .into_par_iter()
        .map(|e| enc.forward2(EntityId(e), &sampler.neighborhood(EntityId(e)), &e1).map(|o| o.0))
        .collect::<Result<_>>()?;
    let to_tensor = |rows: Vec<Vec<F>>, width: usize| Tensor::from_vec(n, width, rows.into_iter().flatten().collect());
    Ok(NeighborEmbeddings {
        layer1: to_tensor(e1, params.dims.d1)?,
        entities: to_tensor(e2, params.dims.d2)?,
        relations: transform_relations(&params.w_r2, &base.relations),
    })
}

/// Eval-mode neighbor-based embedding of a single entity.
pub fn forward<F: Real>(
    e: EntityId,
    sets: &NeighborSets,
    base: &EmbeddingTable<F>,
    params: &AggregatorParams<F>,
) -> Result<Vec<F>> {
    check_compatible(sets, base, params)?;
    if e.index() >= base.entity_count() {
        return Err(Error::Index {
            kind: "entity",
            id: e.index(),
            count: base.entity_count(),
        });
    }
    let sampler = NeighborSampler::all(sets);
    let enc = Encoder::new(params, base, None);
    let nb = sampler.neighborhood(e);
    let needed = sorted_unique(
        std::iter::once(e)
            .chain(nb.original.iter().map(|n| n.1))
            .chain(nb.transformed.iter().map(|n| n.entity))
            .collect(),
    );
    let mut e1 = vec![Vec::new(); base.entity_count()];
    for x in needed {
        e1[x.index()] = enc.forward1(x, &sampler.neighborhood(x))?.0;
    }
    Ok(enc.forward2(e, &nb, &e1)?.0)
}

/// Eval-mode attention weights of every entity, layer and head: one entry
/// per `(entity, layer)` holding `k_m` original-type vectors followed by
/// `k_m` transformed-type vectors (empty when that set is empty).
#[allow(clippy::type_complexity)]
pub fn attention_weights<F: Real>(
    sets: &NeighborSets,
    base: &EmbeddingTable<F>,
    params: &AggregatorParams<F>,
) -> Result<Vec<(EntityId, usize, Vec<Vec<F>>)>> {
    check_compatible(sets, base, params)?;
    let sampler = NeighborSampler::all(sets);
    let enc = Encoder::new(params, base, None);
    let n = base.entity_count() as u32;
    let mut out = Vec::new();
    let mut e1 = Vec::with_capacity(n as usize);
    for e in (0..n).map(EntityId) {
        let (o, cache) = enc.forward1(e, &sampler.neighborhood(e))?;
        out.push((e, 1, cache.attention().map(<[F]>::to_vec).collect()));
        e1.push(o);
    }
    for e in (0..n).map(EntityId) {
        let (_, cache) = enc.forward2(e, &sampler.neighborhood(e), &e1)?;
        out.push((e, 2, cache.attention().map(<[F]>::to_vec).collect()));
    }
    Ok(out)
}

/// `‖h_nei + r_nei − t_nei‖`.
pub fn na_energy<F: Real>(h_nei: &[F], r_nei: &[F], t_nei: &[F], norm: Norm) -> Result<F> {
    transe_energy(h_nei, r_nei, t_nei, norm)
}

/// Gradients of one batch with respect to encoder weights and base tables.
#[derive(Clone, Debug)]
pub struct BatchGrads<F> {
    pub params: AggregatorParams<F>,
    pub base: EmbeddingTable<F>,
}

/// Summed margin loss of `(positive, negative)` pairs scored by the
/// neighbor-based energy, and its gradient. `dropout` is `(rate, seed)`.
pub fn margin_loss_and_grad<F: Real>(
    sampler: &NeighborSampler,
    base: &EmbeddingTable<F>,
    params: &AggregatorParams<F>,
    pairs: &[(Triple, Triple)],
    margin: F,
    norm: Norm,
    dropout: Option<(f64, u64)>,
) -> Result<(F, BatchGrads<F>)> {
    check_compatible(sampler.sets(), base, params)?;
    let enc = Encoder::new(params, base, dropout);
    let n_ent = base.entity_count();
    let n_rel = base.relation_count();
    let (d1, d2) = (params.dims.d1, params.dims.d2);

    let s2 = sorted_unique(pairs.iter().flat_map(|(p, q)| [p.head, p.tail, q.head, q.tail]).collect());
    let hoods2: Vec<Neighborhood> = s2.iter().map(|&e| sampler.neighborhood(e)).collect();
    let mut s1 = s2.clone();
    for nb in &hoods2 {
        s1.extend(nb.original.iter().map(|n| n.1));
        s1.extend(nb.transformed.iter().map(|n| n.entity));
    }
    let s1 = sorted_unique(s1);

    let e1_list: Vec<Vec<F>> = s1
        .par_iter()
        .map(|&e| enc.forward1(e, &sampler.neighborhood(e)).map(|o| o.0))
        .collect::<Result<_>>()?;
    let mut e1 = vec![Vec::new(); n_ent];
    for (e, v) in s1.iter().zip(e1_list) {
        e1[e.index()] = v;
    }
    let e2: Vec<Vec<F>> = s2
        .par_iter()
        .zip(&hoods2)
        .map(|(&e, nb)| enc.forward2(e, nb, &e1).map(|o| o.0))
        .collect::<Result<_>>()?;
    let slot = |e: EntityId| s2.binary_search(&e).expect("batch entity");
    let rel2 = transform_relations(&params.w_r2, &base.relations);

    let mut loss = F::zero();
    let mut g_e2 = vec![vec![F::zero(); d2]; s2.len()];
    let mut g_rel2 = Tensor::zeros(n_rel, d2);
    for (pos, neg) in pairs {
        let diff = |t: &Triple| -> Vec<F> {
            e2[slot(t.head)]
                .iter()
                .zip(rel2.row(t.rel.index()))
                .zip(&e2[slot(t.tail)])
                .map(|((&a, &b), &c)| a + b - c)
                .collect()
        };
        let (dp, dn) = (diff(pos), diff(neg));
        let l = margin + norm.apply(&dp) - norm.apply(&dn);
        if l <= F::zero() {
            continue;
        }
        loss += l;
        for (t, d, sign) in [(pos, dp, F::one()), (neg, dn, -F::one())] {
            let g: Vec<F> = norm.grad(&d).into_iter().map(|v| v * sign).collect();
            add_into(&mut g_e2[slot(t.head)], &g);
            add_into(g_rel2.row_mut(t.rel.index()), &g);
            let tail = &mut g_e2[slot(t.tail)];
            for (o, &v) in tail.iter_mut().zip(&g) {
                *o -= v;
            }
        }
    }

    let mut grads = BatchGrads {
        params: params.zeros_like(),
        base: base.zeros_like(),
    };
    let mut g_e1 = Tensor::<F>::zeros(n_ent, d1);
    let mut g_rel1 = Tensor::<F>::zeros(n_rel, d1);
    let work2: Vec<usize> = (0..s2.len()).filter(|&i| g_e2[i].iter().any(|&v| v != F::zero())).collect();
    chunked_reduce(
        &work2,
        |chunk| {
            let mut lg = params.layers[1].zeros_like();
            let mut ents: Vec<(EntityId, Vec<F>)> = Vec::new();
            let mut rels = Tensor::<F>::zeros(n_rel, d1);
            for &i in chunk {
                let (e, nb) = (s2[i], &hoods2[i]);
                let (_, cache) = enc.forward2(e, nb, &e1)?;
                let ig = layer_backward(&params.layers[1], &cache, &g_e2[i], &mut lg);
                ents.push((e, ig.entity));
                for (&(r, t), (gr, gt)) in nb.original.iter().zip(ig.original) {
                    add_into(rels.row_mut(r.index()), &gr);
                    ents.push((t, gt));
                }
                for (n, (gr, gt)) in nb.transformed.iter().zip(ig.transformed) {
                    add_into(rels.row_mut(n.rel.index()), &gr);
                    ents.push((n.entity, gt));
                }
            }
            Ok((lg, ents, rels))
        },
        |(lg, ents, rels)| {
            grads.params.layers[1].add_assign(&lg);
            for (e, g) in ents {
                add_into(g_e1.row_mut(e.index()), &g);
            }
            g_rel1.add_assign(&rels);
        },
    )?;

    for (w, gw, g_rel) in [
        (&params.w_r2, &mut grads.params.w_r2, &g_rel2),
        (&params.w_r1, &mut grads.params.w_r1, &g_rel1),
    ] {
        for r in 0..n_rel {
            let g = g_rel.row(r);
            if g.iter().all(|&v| v == F::zero()) {
                continue;
            }
            gw.add_outer(g, base.relations.row(r));
            w.matvec_t_acc(g, grads.base.relations.row_mut(r));
        }
    }

    let work1: Vec<EntityId> = s1
        .iter()
        .copied()
        .filter(|e| g_e1.row(e.index()).iter().any(|&v| v != F::zero()))
        .collect();
    let base_grads = &mut grads.base;
    let layer0 = &mut grads.params.layers[0];
    chunked_reduce(
        &work1,
        |chunk| {
            let mut lg = params.layers[0].zeros_like();
            let mut ents: Vec<(EntityId, Vec<F>)> = Vec::new();
            let mut rels = Tensor::<F>::zeros(n_rel, params.dims.d);
            for &e in chunk {
                let nb = sampler.neighborhood(e);
                let (_, cache) = enc.forward1(e, &nb)?;
                let ig = layer_backward(&params.layers[0], &cache, g_e1.row(e.index()), &mut lg);
                ents.push((e, ig.entity));
                for (&(r, t), (gr, gt)) in nb.original.iter().zip(ig.original) {
                    add_into(rels.row_mut(r.index()), &gr);
                    ents.push((t, gt));
                }
                for (n, (gr, gt)) in nb.transformed.iter().zip(ig.transformed) {
                    add_into(rels.row_mut(n.rel.index()), &gr);
                    ents.push((n.entity, gt));
                }
            }
            Ok((lg, ents, rels))
        },
        |(lg, ents, rels)| {
            layer0.add_assign(&lg);
            for (e, g) in ents {
                add_into(base_grads.entities.row_mut(e.index()), &g);
            }
            base_grads.relations.add_assign(&rels);
        },
    )?;
    Ok((loss, grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatorConfig {
    pub dims: AggregatorDims,
    pub mask: FeatureMask,
    pub lr: f64,
    pub margin: f64,
    pub norm: Norm,
    pub dropout: f64,
    /// Full passes over the training triples.
    pub epochs: usize,
    /// Triples per optimizer step; 0 means the whole training set.
    pub batch_size: usize,
    pub negatives: usize,
    /// Neighbors kept per type and entity each epoch; 0 keeps all.
    pub neighbor_cap: usize,
    /// Keep base embeddings fixed and train only the encoder.
    pub freeze_base: bool,
    /// Aggregate over transformed neighbors; off gives the original-only ablation.
    pub use_transformed: bool,
    pub seed: u64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            dims: AggregatorDims::default(),
            mask: FeatureMask::full(),
            lr: 0.001,
            margin: 1.0,
            norm: Norm::L1,
            dropout: 0.3,
            epochs: 2000,
            batch_size: 0,
            negatives: 1,
            neighbor_cap: 64,
            freeze_base: false,
            use_transformed: true,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedAggregator<F> {
    pub params: AggregatorParams<F>,
    pub base: EmbeddingTable<F>,
    /// Summed training loss per epoch.
    pub losses: Vec<f64>,
}

pub fn train_aggregator<F: Real>(
    kg: &KnowledgeGraph,
    sets: &NeighborSets,
    base: &EmbeddingTable<F>,
    config: &AggregatorConfig,
) -> Result<TrainedAggregator<F>> {
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(Error::Argument(format!("dropout {} not in [0, 1)", config.dropout)));
    }
    if !(config.margin > 0.0) {
        return Err(Error::Argument("margin must be positive".into()));
    }
    let mut params = AggregatorParams::init(config.dims, config.mask, config.seed)?;
    let mut base = base.clone();
    check_compatible(sets, &base, &params)?;
    let mut losses = Vec::with_capacity(config.epochs);
    if config.epochs == 0 || kg.is_empty() {
        return Ok(TrainedAggregator { params, base, losses });
    }

    let tensors = params
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t)
        .chain([&base.entities, &base.relations])
        .collect::<Vec<_>>();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xa66));
    let margin = F::lit(config.margin);
    let mut order: Vec<usize> = (0..kg.len()).collect();
    let batch = if config.batch_size == 0 { kg.len() } else { config.batch_size };

    for epoch in 0..config.epochs {
        let sampler = NeighborSampler::new(sets, config.neighbor_cap, rng.gen(), config.use_transformed);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let mut pairs = Vec::with_capacity(chunk.len() * config.negatives);
            for &i in chunk {
                let pos = kg.triples()[i];
                for neg in kg.sample_negatives_with(&pos, config.negatives, &mut rng)? {
                    pairs.push((pos, neg));
                }
            }
            let dropout = (config.dropout > 0.0).then(|| (config.dropout, rng.gen()));
            let (loss, mut grads) = margin_loss_and_grad(&sampler, &base, &params, &pairs, margin, config.norm, dropout)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("aggregator loss at epoch {epoch}, batch {b}")));
            }
            epoch_loss += loss.as_f64();
            if config.freeze_base {
                grads.base.entities.fill(F::zero());
                grads.base.relations.fill(F::zero());
            }
            let grad_refs: Vec<&Tensor<F>> = grads
                .params
                .named_tensors()
                .into_iter()
                .map(|(_, t)| t)
                .chain([&grads.base.entities, &grads.base.relations])
                .collect();
            let mut targets = params.tensors_mut();
            targets.push(&mut base.entities);
            targets.push(&mut base.relations);
            // Zero gradients from the first step on leave Adam's moments at
            // zero, so frozen tables never move.
            adam.step(targets, grad_refs)?;
        }
        debug!("aggregator epoch {}: loss {epoch_loss:.4}", epoch + 1);
        if (epoch + 1) % 100 == 0 {
            info!("aggregator epoch {}: loss {epoch_loss:.4}", epoch + 1);
        }
        losses.push(epoch_loss);
    }
    if !params.is_finite() || !base.is_finite() {
        return Err(Error::Numeric("aggregator parameters".into()));
    }
    Ok(TrainedAggregator { params, base, losses })
}
