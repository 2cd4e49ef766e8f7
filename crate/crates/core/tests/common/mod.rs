#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmna::aggregator::AggregatorDims;
use rmna::config::PipelineConfig;
use rmna::kg::{KnowledgeGraph, NeighborSets, Triple, Vocab};
use rmna::rules::{filter_rules, match_rules, mine_path_rules, MiningConfig};
use rmna::transe::{EmbeddingTable, Norm};

pub type LabelTriple = (String, String, String);

/// Graph over `e0..e{n}` and `r0..r{m}` from id triples.
pub fn graph_from_ids(entities: usize, relations: usize, triples: &[(u32, u32, u32)]) -> KnowledgeGraph {
    let mut vocab = Vocab::new();
    for e in 0..entities {
        vocab.intern_entity(&format!("e{e}"));
    }
    for r in 0..relations {
        vocab.intern_relation(&format!("r{r}"));
    }
    let vocab = Arc::new(vocab);
    let triples = triples.iter().map(|&(h, r, t)| {
        Triple::new(rmna::kg::EntityId(h), rmna::kg::RelationId(r), rmna::kg::EntityId(t))
    });
    KnowledgeGraph::from_triples(vocab, triples).unwrap()
}

/// Uniformly random small graph.
pub fn random_graph(seed: u64, max_entities: usize, max_relations: usize, max_triples: usize) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_entities);
    let m = rng.gen_range(1..=max_relations);
    let k = rng.gen_range(1..=max_triples);
    let triples: Vec<_> = (0..k)
        .map(|_| {
            (
                rng.gen_range(0..n as u32),
                rng.gen_range(0..m as u32),
                rng.gen_range(0..n as u32),
            )
        })
        .collect();
    graph_from_ids(n, m, &triples)
}

/// A graph where `r3(a, c)` holds for exactly `rate` of the distinct pairs
/// joined by `r1 ∘ r2`, plus `noise` extra `r3` edges off those paths.
pub struct Planted {
    pub entities: usize,
    pub triples: Vec<LabelTriple>,
    /// Pairs joined by `r1 ∘ r2`.
    pub body_pairs: BTreeSet<(usize, usize)>,
    /// `r3` edges that lie on a body pair.
    pub planted: Vec<(usize, usize)>,
}

pub fn planted(entities: usize, degree: usize, rate: f64, noise: usize, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: BTreeSet<(usize, &str, usize)> = BTreeSet::new();
    for a in 0..entities {
        for rel in ["r1", "r2"] {
            for _ in 0..degree {
                edges.insert((a, rel, rng.gen_range(0..entities)));
            }
        }
    }
    let succ = |a: usize, rel: &str| -> Vec<usize> {
        edges.range((a, rel, 0)..=(a, rel, usize::MAX)).map(|e| e.2).collect()
    };
    let mut body_pairs = BTreeSet::new();
    for a in 0..entities {
        for b in succ(a, "r1") {
            for c in succ(b, "r2") {
                body_pairs.insert((a, c));
            }
        }
    }
    let mut pairs: Vec<_> = body_pairs.iter().copied().collect();
    pairs.shuffle(&mut rng);
    pairs.truncate((rate * pairs.len() as f64).round() as usize);
    pairs.sort_unstable();
    let mut triples: Vec<LabelTriple> = edges
        .iter()
        .map(|&(a, r, b)| (format!("e{a}"), r.to_owned(), format!("e{b}")))
        .collect();
    triples.extend(pairs.iter().map(|&(a, c)| (format!("e{a}"), "r3".to_owned(), format!("e{c}"))));
    let mut extra = HashSet::new();
    while extra.len() < noise {
        let p = (rng.gen_range(0..entities), rng.gen_range(0..entities));
        if !body_pairs.contains(&p) {
            extra.insert(p);
        }
    }
    let mut extra: Vec<_> = extra.into_iter().collect();
    extra.sort_unstable();
    triples.extend(extra.iter().map(|&(a, c)| (format!("e{a}"), "r3".to_owned(), format!("e{c}"))));
    Planted {
        entities,
        triples,
        body_pairs,
        planted: pairs,
    }
}

pub fn write_triples(path: &Path, rows: &[LabelTriple]) {
    let text: String = rows.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
    fs::write(path, text).unwrap();
}

/// Writes `train.txt`, `valid.txt` and `test.txt`. A fraction `held_out` of
/// the planted `r3` edges goes to test; valid is left empty.
pub fn write_planted_dataset(dir: &Path, p: &Planted, held_out: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut planted: Vec<LabelTriple> = p
        .planted
        .iter()
        .map(|&(a, c)| (format!("e{a}"), "r3".to_owned(), format!("e{c}")))
        .collect();
    planted.shuffle(&mut rng);
    let k = ((held_out * planted.len() as f64).round() as usize).max(1);
    let test: Vec<_> = planted[..k].to_vec();
    let held: HashSet<&LabelTriple> = test.iter().collect();
    let train: Vec<_> = p.triples.iter().filter(|t| !held.contains(t)).cloned().collect();
    fs::create_dir_all(dir).unwrap();
    write_triples(&dir.join("train.txt"), &train);
    write_triples(&dir.join("valid.txt"), &[]);
    write_triples(&dir.join("test.txt"), &test);
}

/// Small, fast settings for synthetic runs.
pub fn small_config(data: &Path, out: &Path) -> PipelineConfig {
    let text = "
        d = 16
        d1 = 16
        d2 = 16
        k_m = 2
        k_s = 2
        d_q1 = 8
        d_q2 = 8
        d_v1 = 8
        d_v2 = 8
        pretrain_epochs = 200
        pretrain_batch = 128
        pretrain_lr = 0.01
        agg_lr = 0.01
        agg_epochs = 300
        dec_lr = 0.01
        dec_epochs = 40
        dec_batch = 256
        kernels = 8
    ";
    let mut c = PipelineConfig::parse(text).unwrap();
    c.data_dir = data.to_owned();
    c.out_dir = out.to_owned();
    c
}

/// Brute-force miner: boolean reachability matrices, one per body, as
/// `u64` row bitsets. Returns `(body, head) -> (support, hc, conf)` for every
/// rule with support ≥ 1 other than `r → r`.
pub fn oracle_mine(
    kg: &KnowledgeGraph,
    l_max: usize,
) -> std::collections::BTreeMap<(Vec<u32>, u32), (usize, f64, f64)> {
    let n = kg.entity_count();
    let m = kg.relation_count();
    assert!(n <= 64, "oracle bitsets hold at most 64 entities");
    let mut adj = vec![vec![0u64; n]; m];
    for t in kg.triples() {
        adj[t.rel.index()][t.head.index()] |= 1 << t.tail.index();
    }
    let count = |mat: &[u64]| mat.iter().map(|r| r.count_ones() as usize).sum::<usize>();
    let mut out = std::collections::BTreeMap::new();
    let mut layer: Vec<(Vec<u32>, Vec<u64>)> = (0..m).map(|r| (vec![r as u32], adj[r].clone())).collect();
    for len in 1..=l_max {
        for (body, mat) in &layer {
            let body_count = count(mat);
            if body_count == 0 {
                continue;
            }
            for head in 0..m {
                if len == 1 && body[0] == head as u32 {
                    continue;
                }
                let support: usize = mat
                    .iter()
                    .zip(&adj[head])
                    .map(|(a, b)| (a & b).count_ones() as usize)
                    .sum();
                if support > 0 {
                    let hc = support as f64 / count(&adj[head]) as f64;
                    let conf = support as f64 / body_count as f64;
                    out.insert((body.clone(), head as u32), (support, hc, conf));
                }
            }
        }
        if len == l_max {
            break;
        }
        let mut next = Vec::new();
        for (body, mat) in &layer {
            for r in 0..m {
                let prod: Vec<u64> = mat
                    .iter()
                    .map(|&row| {
                        (0..n)
                            .filter(|&k| row >> k & 1 == 1)
                            .fold(0u64, |acc, k| acc | adj[r][k])
                    })
                    .collect();
                let mut b = body.clone();
                b.push(r as u32);
                next.push((b, prod));
            }
        }
        layer = next;
    }
    out
}

/// Sort-and-count rank: place the target among all candidates sorted by
/// energy; with `t` ties the rank is the first slot of its run plus `⌈t/2⌉`.
pub fn oracle_rank(target: f64, others: &[f64]) -> usize {
    let mut all: Vec<(f64, bool)> = others.iter().map(|&e| (e, false)).collect();
    all.push((target, true));
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let first = all.iter().position(|&(e, _)| e == target).unwrap() + 1;
    let last = all.iter().rposition(|&(e, _)| e == target).unwrap() + 1;
    let ties = last - first;
    first + ties.div_ceil(2)
}

/// Five entities joined by two-step paths, inverse-augmented.
pub fn toy_graph() -> KnowledgeGraph {
    let mut vocab = Vocab::new();
    let lines = [
        ("a", "p", "b"),
        ("b", "q", "c"),
        ("a", "s", "c"),
        ("d", "p", "e"),
        ("e", "q", "c"),
        ("d", "p", "b"),
    ];
    let triples: Vec<Triple> = lines
        .iter()
        .map(|(h, r, t)| Triple::new(vocab.intern_entity(h), vocab.intern_relation(r), vocab.intern_entity(t)))
        .collect();
    KnowledgeGraph::from_triples(Arc::new(vocab), triples)
        .unwrap()
        .add_inverse_relations()
        .unwrap()
}

pub fn small_dims() -> AggregatorDims {
    AggregatorDims {
        d: 4,
        d1: 3,
        d2: 5,
        k_m: 2,
        k_s: 2,
        d_qk: [2, 3],
        d_v: [2, 2],
    }
}

pub fn aggregator_setup() -> (KnowledgeGraph, NeighborSets, EmbeddingTable<f64>) {
    let kg = toy_graph();
    let base = EmbeddingTable::<f64>::init(kg.entity_count(), kg.relation_count() + 1, 4, 3);
    let rules = filter_rules(&mine_path_rules(&kg, &MiningConfig::default()), 0.0, 0.0);
    let transformed = match_rules(&kg, &rules, &base, 3, Norm::L1).unwrap();
    let sets = NeighborSets::with_transformed(&kg, transformed).unwrap();
    assert!(sets.transformed.iter().any(|t| !t.is_empty()));
    (kg, sets, base)
}

