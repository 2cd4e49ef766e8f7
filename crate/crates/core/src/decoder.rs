//! ConvKB scoring on neighbor-based embeddings. A triple is stacked into a
//! `d × 3` matrix, each `1 × 3` kernel slides down its rows, the ReLU feature
//! maps are concatenated and projected to a scalar energy by `W_RL`.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregator::NeighborEmbeddings;
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::numerics::{chunked_reduce, glorot_init, relu, AdamConfig, AdamState, DropoutMask, Real, Tensor};
use crate::{Error, Result};

/// `log(1 + e^x)` without overflow.
pub fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// ReLU feature maps of all kernels over `[h, r, t]`, kernel-major.
fn features<F: Real>(h: &[F], r: &[F], t: &[F], kernels: &Tensor<F>) -> Vec<F> {
    let mut out = Vec::with_capacity(kernels.rows() * h.len());
    for m in 0..kernels.rows() {
        let w = kernels.row(m);
        out.extend((0..h.len()).map(|i| relu(w[0] * h[i] + w[1] * r[i] + w[2] * t[i])));
    }
    out
}

pub fn convkb_energy<F: Real>(h: &[F], r: &[F], t: &[F], kernels: &Tensor<F>, w_rl: &[F]) -> Result<F> {
    if h.len() != r.len() || r.len() != t.len() {
        return Err(Error::Shape(format!("convolution over dimensions {}, {}, {}", h.len(), r.len(), t.len())));
    }
    if kernels.cols() != 3 || w_rl.len() != kernels.rows() * h.len() {
        return Err(Error::Shape(format!(
            "{} kernels of width {} with a projection of length {} over dimension {}",
            kernels.rows(),
            kernels.cols(),
            w_rl.len(),
            h.len()
        )));
    }
    Ok(features(h, r, t, kernels).iter().zip(w_rl).map(|(&a, &b)| a * b).sum())
}

/// `Σ softplus(E·y) + (λ/2)‖W_RL‖²` over `(energy, label)` pairs.
pub fn convkb_loss<F: Real>(scored: &[(F, F)], w_rl: &[F], lambda: F) -> F {
    let data: F = scored.iter().map(|&(e, y)| softplus(e * y)).sum();
    let reg: F = w_rl.iter().map(|&w| w * w).sum();
    data + lambda * F::lit(0.5) * reg
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<F> {
    pub entities: Tensor<F>,
    pub relations: Tensor<F>,
    /// One `1 × 3` kernel per row.
    pub kernels: Tensor<F>,
    /// `Ω·d × 1`
    pub w_rl: Tensor<F>,
}

impl<F: Real> DecoderParams<F> {
    /// Embeddings copied from the encoder, fresh kernels and projection.
    pub fn from_embeddings(nei: &NeighborEmbeddings<F>, kernels: usize, seed: u64) -> Result<Self> {
        Self::new(nei.entities.clone(), nei.relations.clone(), kernels, seed)
    }

    pub fn new(entities: Tensor<F>, relations: Tensor<F>, kernels: usize, seed: u64) -> Result<Self> {
        if kernels == 0 {
            return Err(Error::Argument("at least one convolution kernel is required".into()));
        }
        if entities.cols() != relations.cols() {
            return Err(Error::Shape(format!(
                "entity dimension {} != relation dimension {}",
                entities.cols(),
                relations.cols()
            )));
        }
        let d = entities.cols();
        Ok(Self {
            entities,
            relations,
            kernels: glorot_init(kernels, 3, seed),
            w_rl: glorot_init(kernels * d, 1, seed.wrapping_add(1)),
        })
    }

    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    pub fn energy(&self, h: EntityId, r: RelationId, t: EntityId) -> F {
        let v = features(
            self.entities.row(h.index()),
            self.relations.row(r.index()),
            self.entities.row(t.index()),
            &self.kernels,
        );
        v.iter().zip(self.w_rl.data()).map(|(&a, &b)| a * b).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor<F>| Tensor::zeros(t.rows(), t.cols());
        Self {
            entities: z(&self.entities),
            relations: z(&self.relations),
            kernels: z(&self.kernels),
            w_rl: z(&self.w_rl),
        }
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<F>)> {
        vec![
            ("entities", &self.entities),
            ("relations", &self.relations),
            ("kernels", &self.kernels),
            ("w_rl", &self.w_rl),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        vec![&mut self.entities, &mut self.relations, &mut self.kernels, &mut self.w_rl]
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }
}

/// Loss of labeled triples (`+1` true, `−1` corrupted) and its gradient.
/// `dropout` is `(rate, seed)` on the concatenated feature maps.
pub fn loss_and_grad<F: Real>(
    params: &DecoderParams<F>,
    batch: &[(Triple, F)],
    lambda: F,
    dropout: Option<(f64, u64)>,
) -> Result<(F, DecoderParams<F>)> {
    let d = params.dim();
    let omega = params.kernels.rows();
    let n_rel = params.relations.rows();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut grads = params.zeros_like();
    let mut loss = F::zero();
    chunked_reduce(
        &idx,
        |chunk| {
            let mut g_kernels = Tensor::<F>::zeros(omega, 3);
            let mut g_w = vec![F::zero(); omega * d];
            let mut g_rel = Tensor::<F>::zeros(n_rel, d);
            let mut ents: Vec<(EntityId, Vec<F>)> = Vec::new();
            let mut part = F::zero();
            for &i in chunk {
                let (t, y) = &batch[i];
                let (h, r, tl) = (
                    params.entities.row(t.head.index()),
                    params.relations.row(t.rel.index()),
                    params.entities.row(t.tail.index()),
                );
                let mut v = features(h, r, tl, &params.kernels);
                let mask = match dropout {
                    Some((p, seed)) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(i as u64);
                        DropoutMask::sample(v.len(), p, &mut rng)
                    }
                    None => DropoutMask::identity(),
                };
                mask.apply(&mut v);
                let e: F = v.iter().zip(params.w_rl.data()).map(|(&a, &b)| a * b).sum();
                part += softplus(e * *y);
                let g_e = *y * sigmoid(e * *y);
                // dE/dv = W_RL, masked back through dropout.
                let mut g_v: Vec<F> = params.w_rl.data().iter().map(|&w| w * g_e).collect();
                mask.apply(&mut g_v);
                for (gw, &vi) in g_w.iter_mut().zip(&v) {
                    *gw += g_e * vi;
                }
                let (mut gh, mut gr, mut gt) = (vec![F::zero(); d], vec![F::zero(); d], vec![F::zero(); d]);
                for m in 0..omega {
                    let w = params.kernels.row(m);
                    let mut gk = [F::zero(); 3];
                    for j in 0..d {
                        let pre = w[0] * h[j] + w[1] * r[j] + w[2] * tl[j];
                        let g = g_v[m * d + j];
                        if pre <= F::zero() || g == F::zero() {
                            continue;
                        }
                        gk[0] += g * h[j];
                        gk[1] += g * r[j];
                        gk[2] += g * tl[j];
                        gh[j] += g * w[0];
                        gr[j] += g * w[1];
                        gt[j] += g * w[2];
                    }
                    for (a, b) in g_kernels.row_mut(m).iter_mut().zip(gk) {
                        *a += b;
                    }
                }
                for (a, &b) in g_rel.row_mut(t.rel.index()).iter_mut().zip(&gr) {
                    *a += b;
                }
                ents.push((t.head, gh));
                ents.push((t.tail, gt));
            }
            Ok((part, g_kernels, g_w, g_rel, ents))
        },
        |(part, g_kernels, g_w, g_rel, ents)| {
            loss += part;
            grads.kernels.add_assign(&g_kernels);
            for (a, b) in grads.w_rl.data_mut().iter_mut().zip(g_w) {
                *a += b;
            }
            grads.relations.add_assign(&g_rel);
            for (e, g) in ents {
                for (a, b) in grads.entities.row_mut(e.index()).iter_mut().zip(g) {
                    *a += b;
                }
            }
        },
    )?;
    let reg: F = params.w_rl.data().iter().map(|&w| w * w).sum();
    loss += lambda * F::lit(0.5) * reg;
    for (g, &w) in grads.w_rl.data_mut().iter_mut().zip(params.w_rl.data()) {
        *g += lambda * w;
    }
    Ok((loss, grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    /// Number of convolution kernels.
    pub kernels: usize,
    pub lr: f64,
    /// Weight of the `W_RL` penalty.
    pub lambda: f64,
    pub dropout: f64,
    pub epochs: usize,
    /// Triples per optimizer step; 0 means the whole training set.
    pub batch_size: usize,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            kernels: 50,
            lr: 0.001,
            lambda: 0.001,
            dropout: 0.3,
            epochs: 150,
            batch_size: 1024,
            negatives: 1,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedDecoder<F> {
    pub params: DecoderParams<F>,
    pub losses: Vec<f64>,
}

/// Fine-tunes `init` on the training triples of `kg` with one label-`−1`
/// corruption per negative draw.
pub fn train_decoder<F: Real>(kg: &KnowledgeGraph, init: DecoderParams<F>, config: &DecoderConfig) -> Result<TrainedDecoder<F>> {
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(Error::Argument(format!("dropout {} not in [0, 1)", config.dropout)));
    }
    if init.entities.rows() < kg.entity_count() || init.relations.rows() < kg.relation_count() {
        return Err(Error::Consistency(format!(
            "decoder tables cover {} entities / {} relations, graph has {} / {}",
            init.entities.rows(),
            init.relations.rows(),
            kg.entity_count(),
            kg.relation_count()
        )));
    }
    let mut params = init;
    let mut losses = Vec::with_capacity(config.epochs);
    if config.epochs == 0 || kg.is_empty() {
        return Ok(TrainedDecoder { params, losses });
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), params.named_tensors().into_iter().map(|(_, t)| t));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xdec));
    let lambda = F::lit(config.lambda);
    let mut order: Vec<usize> = (0..kg.len()).collect();
    let batch_size = if config.batch_size == 0 { kg.len() } else { config.batch_size };
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len() * (1 + config.negatives));
            for &i in chunk {
                let pos = kg.triples()[i];
                batch.push((pos, F::one()));
                for neg in kg.sample_negatives_with(&pos, config.negatives, &mut rng)? {
                    batch.push((neg, -F::one()));
                }
            }
            let dropout = (config.dropout > 0.0).then(|| (config.dropout, rng.next_u64()));
            let (loss, grads) = loss_and_grad(&params, &batch, lambda, dropout)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("decoder loss at epoch {epoch}, batch {b}")));
            }
            epoch_loss += loss.as_f64();
            let grad_refs: Vec<&Tensor<F>> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
            adam.step(params.tensors_mut(), grad_refs)?;
        }
        debug!("decoder epoch {}: loss {epoch_loss:.4}", epoch + 1);
        if (epoch + 1) % 10 == 0 {
            info!("decoder epoch {}: loss {epoch_loss:.4}", epoch + 1);
        }
        losses.push(epoch_loss);
    }
    if !params.is_finite() {
        return Err(Error::Numeric("decoder parameters".into()));
    }
    Ok(TrainedDecoder { params, losses })
}
