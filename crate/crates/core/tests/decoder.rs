mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmna::decoder::{loss_and_grad, train_decoder, DecoderConfig, DecoderParams};
use rmna::kg::{KnowledgeGraph, Triple};
use rmna::numerics::{glorot_init, grad_check, Tensor};

use common::{graph_from_ids, random_graph};

fn flatten(p: &DecoderParams<f64>) -> Vec<f64> {
    p.named_tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

fn unflatten(like: &DecoderParams<f64>, flat: &[f64]) -> DecoderParams<f64> {
    let mut offset = 0;
    let mut take = |t: &Tensor<f64>| {
        let n = t.data().len();
        let out = Tensor::from_vec(t.rows(), t.cols(), flat[offset..offset + n].to_vec()).unwrap();
        offset += n;
        out
    };
    DecoderParams {
        entities: take(&like.entities),
        relations: take(&like.relations),
        kernels: take(&like.kernels),
        w_rl: take(&like.w_rl),
    }
}

fn labeled_batch(kg: &KnowledgeGraph, n: usize, seed: u64) -> Vec<(Triple, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Vec::new();
    for t in kg.triples().iter().take(n) {
        batch.push((*t, 1.0));
        for neg in kg.sample_negatives_with(t, 1, &mut rng).unwrap() {
            batch.push((neg, -1.0));
        }
    }
    batch
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let kg = random_graph(21, 12, 3, 30);
    let params = DecoderParams::new(
        glorot_init::<f64>(kg.entity_count(), 5, 1),
        glorot_init::<f64>(kg.relation_count(), 5, 2),
        4,
        3,
    )
    .unwrap();
    let batch = labeled_batch(&kg, 8, 4);
    let lambda = 0.05;
    for dropout in [None, Some((0.3, 77))] {
        let (_, grads) = loss_and_grad(&params, &batch, lambda, dropout).unwrap();
        let mut flat = flatten(&params);
        let analytic = flatten(&grads);
        let loss = |x: &[f64]| loss_and_grad(&unflatten(&params, x), &batch, lambda, dropout).unwrap().0;
        let n_ent = params.entities.data().len() + params.relations.data().len();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Every kernel and projection weight plus 60 sampled embedding coordinates.
        let mut coords: Vec<usize> = (n_ent..flat.len()).collect();
        coords.extend((0..60).map(|_| rng.gen_range(0..n_ent)));
        let err = grad_check(loss, &mut flat, &analytic, &coords, 1e-4);
        assert!(err < 1e-3, "dropout {dropout:?}: {err}");
    }
}

#[test]
fn training_separates_true_from_corrupted_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ids: Vec<(u32, u32, u32)> = (0..60).map(|_| (rng.gen_range(0..20), rng.gen_range(0..3), rng.gen_range(0..20))).collect();
    let kg = graph_from_ids(20, 3, &ids).add_inverse_relations().unwrap();
    let init = DecoderParams::new(
        glorot_init::<f32>(kg.entity_count(), 8, 1),
        glorot_init::<f32>(kg.relation_count() + 1, 8, 2),
        6,
        3,
    )
    .unwrap();
    let config = DecoderConfig { kernels: 6, lr: 0.01, epochs: 80, batch_size: 64, dropout: 0.0, ..DecoderConfig::default() };
    let trained = train_decoder(&kg, init, &config).unwrap();
    assert!(trained.losses.last().unwrap() < &trained.losses[0]);
    let p = &trained.params;
    let pos: f32 = kg.triples().iter().map(|t| p.energy(t.head, t.rel, t.tail)).sum::<f32>() / kg.len() as f32;
    let negs: Vec<Triple> = kg.triples().iter().flat_map(|t| kg.sample_negatives(t, 1, t.tail.0 as u64).unwrap()).collect();
    let neg: f32 = negs.iter().map(|t| p.energy(t.head, t.rel, t.tail)).sum::<f32>() / negs.len() as f32;
    assert!(pos < neg, "true {pos} vs corrupted {neg}");
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let kg = random_graph(3, 10, 2, 20);
    let init = DecoderParams::new(glorot_init::<f32>(10, 4, 1), glorot_init::<f32>(2, 4, 2), 2, 3).unwrap();
    let config = DecoderConfig { epochs: 0, ..DecoderConfig::default() };
    assert_eq!(train_decoder(&kg, init.clone(), &config).unwrap().params, init);
}
