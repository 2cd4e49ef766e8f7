mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmna::aggregator::{
    attention_weights, encode_all, forward, margin_loss_and_grad, na_energy, train_aggregator, AggregatorConfig,
    AggregatorParams, FeatureMask, NeighborSampler,
};
use rmna::kg::{EntityId, KnowledgeGraph, NeighborSets, Triple, Vocab};
use rmna::numerics::{grad_check, Tensor};
use rmna::rules::{filter_rules, match_rules, mine_path_rules, MiningConfig};
use rmna::transe::{EmbeddingTable, Norm};

use common::{aggregator_setup as setup, small_dims};

#[test]
fn na_energy_examples() {
    assert_eq!(na_energy(&[1.0f64, 1.0], &[0.0, 1.0], &[1.0, 2.0], Norm::L1).unwrap(), 0.0);
    assert_eq!(na_energy(&[1.0f64, 1.0], &[0.0, 1.0], &[0.0, 0.0], Norm::L1).unwrap(), 3.0);
    let h = [0.2f64, -0.3];
    assert_eq!(na_energy(&h, &[0.0, 0.0], &h, Norm::L2).unwrap(), 0.0);
}

#[test]
fn margin_gradient_matches_finite_differences() {
    let (kg, sets, base) = setup();
    let params = AggregatorParams::<f64>::init(small_dims(), FeatureMask::full(), 5).unwrap();
    let sampler = NeighborSampler::all(&sets);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs: Vec<(Triple, Triple)> = kg
        .triples()
        .iter()
        .take(4)
        .map(|t| (*t, kg.sample_negatives_with(t, 1, &mut rng).unwrap()[0]))
        .collect();
    let margin = 100.0;
    let (_, grads) = margin_loss_and_grad(&sampler, &base, &params, &pairs, margin, Norm::L2, None).unwrap();

    let mut flat = params.flatten();
    let analytic = grads.params.flatten();
    let coords: Vec<usize> = (0..60).map(|_| rng.gen_range(0..flat.len())).collect();
    let loss = |p: &[f64]| {
        let mut q = params.clone();
        q.assign_flat(p).unwrap();
        margin_loss_and_grad(&sampler, &base, &q, &pairs, margin, Norm::L2, None).unwrap().0
    };
    let err = grad_check(loss, &mut flat, &analytic, &coords, 1e-4);
    assert!(err < 1e-3, "encoder weights: {err}");

    let mut flat: Vec<f64> = base.entities.data().iter().chain(base.relations.data()).copied().collect();
    let analytic: Vec<f64> = grads.base.entities.data().iter().chain(grads.base.relations.data()).copied().collect();
    let split = base.entities.data().len();
    let (ne, nr) = (base.entity_count(), base.relation_count());
    let loss = |p: &[f64]| {
        let b = EmbeddingTable::from_parts(
            Tensor::from_vec(ne, 4, p[..split].to_vec()).unwrap(),
            Tensor::from_vec(nr, 4, p[split..].to_vec()).unwrap(),
        )
        .unwrap();
        margin_loss_and_grad(&sampler, &b, &params, &pairs, margin, Norm::L2, None).unwrap().0
    };
    let coords: Vec<usize> = (0..flat.len()).collect();
    let err = grad_check(loss, &mut flat, &analytic, &coords, 1e-4);
    assert!(err < 1e-3, "base embeddings: {err}");
}

#[test]
fn attention_weights_sum_to_one_per_type() {
    let (_, sets, base) = setup();
    let params = AggregatorParams::<f64>::init(small_dims(), FeatureMask::full(), 2).unwrap();
    let k_m = small_dims().k_m;
    for (e, layer, heads) in attention_weights(&sets, &base, &params).unwrap() {
        assert_eq!(heads.len(), 2 * k_m);
        for (h, w) in heads.iter().enumerate() {
            let expected = if h < k_m { sets.original[e.index()].len() } else { sets.transformed[e.index()].len() };
            assert_eq!(w.len(), expected, "entity {e:?} layer {layer} head {h}");
            if !w.is_empty() {
                let sum: f64 = w.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6, "entity {e:?} layer {layer} head {h}: {sum}");
                assert!(w.iter().all(|&x| x >= 0.0));
            }
        }
    }
}

#[test]
fn forward_ignores_neighbor_storage_order() {
    let (kg, sets, base) = setup();
    let params = AggregatorParams::<f64>::init(small_dims(), FeatureMask::full(), 4).unwrap();
    let before = encode_all(&sets, &base, &params).unwrap();
    let mut shuffled = sets.clone();
    for e in 0..kg.entity_count() {
        shuffled.original[e].reverse();
        let t = &mut shuffled.transformed[e];
        let mid = t.len() / 2;
        t.rotate_left(mid);
        t.reverse();
    }
    let after = encode_all(&shuffled, &base, &params).unwrap();
    for (a, b) in before.entities.data().iter().zip(after.entities.data()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn forward_matches_batch_encoding_and_is_pure() {
    let (kg, sets, base) = setup();
    let params = AggregatorParams::<f64>::init(small_dims(), FeatureMask::full(), 6).unwrap();
    let all = encode_all(&sets, &base, &params).unwrap();
    for e in 0..kg.entity_count() as u32 {
        let one = forward(EntityId(e), &sets, &base, &params).unwrap();
        assert_eq!(one, all.entities.row(e as usize));
        assert_eq!(one, forward(EntityId(e), &sets, &base, &params).unwrap());
    }
}

#[test]
fn isolated_entity_still_gets_an_embedding() {
    let mut vocab = Vocab::new();
    let (a, p, b) = (vocab.intern_entity("a"), vocab.intern_relation("p"), vocab.intern_entity("b"));
    let lonely = vocab.intern_entity("lonely");
    let kg = KnowledgeGraph::from_triples(std::sync::Arc::new(vocab), [Triple::new(a, p, b)])
        .unwrap()
        .add_inverse_relations()
        .unwrap();
    let base = EmbeddingTable::<f64>::init(3, kg.relation_count() + 1, 4, 1);
    let sets = NeighborSets::from_graph(&kg);
    assert_eq!(sets.original[lonely.index()], vec![(kg.self_loop(), lonely)]);
    let params = AggregatorParams::<f64>::init(small_dims(), FeatureMask::full(), 1).unwrap();
    let out = forward(lonely, &sets, &base, &params).unwrap();
    assert_eq!(out.len(), small_dims().d2);
    assert!(out.iter().all(|x| x.is_finite()));
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let (kg, sets, base) = setup();
    let config = AggregatorConfig { dims: small_dims(), epochs: 0, ..AggregatorConfig::default() };
    let trained = train_aggregator(&kg, &sets, &base, &config).unwrap();
    assert_eq!(trained.params, AggregatorParams::init(small_dims(), FeatureMask::full(), config.seed).unwrap());
    assert_eq!(trained.base, base);
    assert!(trained.losses.is_empty());
}

#[test]
fn frozen_base_embeddings_do_not_move() {
    let (kg, sets, base) = setup();
    let config = AggregatorConfig { dims: small_dims(), epochs: 5, freeze_base: true, ..AggregatorConfig::default() };
    let trained = train_aggregator(&kg, &sets, &base, &config).unwrap();
    assert_eq!(trained.base, base);
    assert_ne!(trained.params, AggregatorParams::init(small_dims(), FeatureMask::full(), config.seed).unwrap());
}

#[test]
fn training_loss_decreases_on_a_planted_graph() {
    let p = common::planted(40, 2, 0.9, 4, 2);
    let dir = tempfile::tempdir().unwrap();
    common::write_triples(&dir.path().join("all.txt"), &p.triples);
    let kg = rmna::kg::load_triples(&dir.path().join("all.txt"), rmna::kg::VocabMode::Build)
        .unwrap()
        .add_inverse_relations()
        .unwrap();
    let base = EmbeddingTable::<f32>::init(kg.entity_count(), kg.relation_count() + 1, 4, 3);
    let rules = filter_rules(&mine_path_rules(&kg, &MiningConfig::default()), 0.3, 0.5);
    let transformed = match_rules(&kg, &rules, &base, 2, Norm::L1).unwrap();
    let sets = NeighborSets::with_transformed(&kg, transformed).unwrap();
    let config = AggregatorConfig { dims: small_dims(), epochs: 300, lr: 0.01, dropout: 0.0, ..AggregatorConfig::default() };
    let trained = train_aggregator(&kg, &sets, &base, &config).unwrap();
    let head: f64 = trained.losses[..20].iter().sum();
    let tail: f64 = trained.losses[280..].iter().sum();
    assert!(tail < head, "first 20 epochs {head}, last 20 {tail}");
}
