mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmna::evaluator::{evaluate, rank_triple, tie_rank, RankMode, RankingReport};
use rmna::kg::{EntityId, RelationId, Triple};

use common::oracle_rank;

/// Random energy table over `n` entities and one relation, drawn from a
/// handful of levels so ties are common.
fn table(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let levels = rng.gen_range(1..=5);
    (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(0..levels) as f64 * 0.5).collect())
        .collect()
}

#[test]
fn ranks_match_sort_and_count_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let n = rng.gen_range(2..=20);
        let e = table(n, &mut rng);
        let scorer = |h: EntityId, _: RelationId, t: EntityId| e[h.index()][t.index()];
        let (h, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let triple = Triple::new(EntityId(h as u32), RelationId(0), EntityId(t as u32));
        let known: HashSet<Triple> = (0..n)
            .filter(|_| rng.gen_bool(0.3))
            .map(|x| Triple::new(EntityId(h as u32), RelationId(0), EntityId(x as u32)))
            .chain(std::iter::once(triple))
            .collect();
        let target = e[h][t];
        let tails_raw: Vec<f64> = (0..n).filter(|&x| x != t).map(|x| e[h][x]).collect();
        let heads_raw: Vec<f64> = (0..n).filter(|&x| x != h).map(|x| e[x][t]).collect();
        let tails_filt: Vec<f64> = (0..n)
            .filter(|&x| x != t && !known.contains(&Triple::new(EntityId(h as u32), RelationId(0), EntityId(x as u32))))
            .map(|x| e[h][x])
            .collect();
        let raw = rank_triple(&scorer, &triple, n, None, RankMode::Raw).unwrap();
        let filt = rank_triple(&scorer, &triple, n, Some(&known), RankMode::Filtered).unwrap();
        assert_eq!(raw, (oracle_rank(target, &heads_raw), oracle_rank(target, &tails_raw)));
        assert_eq!(filt, (oracle_rank(target, &heads_raw), oracle_rank(target, &tails_filt)));
    }
}

#[test]
fn evaluate_summarizes_per_triple_ranks() {
    let e = [[0.0, 1.0, 2.0], [2.0, 0.0, 1.0], [1.0, 1.0, 0.5]];
    let scorer = |h: EntityId, _: RelationId, t: EntityId| e[h.index()][t.index()];
    let test = vec![
        Triple::new(EntityId(0), RelationId(0), EntityId(1)),
        Triple::new(EntityId(2), RelationId(0), EntityId(2)),
    ];
    let report = evaluate(&scorer, &test, 3, None, RankMode::Raw).unwrap();
    // (0,1): heads {0:1.0 target, 1:0.0, 2:1.0} -> 1 lower, 1 tie -> 3; tails {0.0, 2.0} -> 2.
    // (2,2): heads {2.0, 1.0} vs 0.5 -> 1; tails {1.0, 1.0} vs 0.5 -> 1.
    assert_eq!(report.per_triple_ranks, vec![(3, 2), (1, 1)]);
    let mrr = (1.0 / 3.0 + 0.5 + 1.0 + 1.0) / 4.0;
    assert!((report.mrr - mrr).abs() < 1e-15);
    assert_eq!(report.hits(1), Some(0.5));
    assert_eq!(report.hits(3), Some(1.0));
    assert_eq!(report.hits(10), Some(1.0));
    assert_eq!(report.hits(5), None);
    assert!(report.to_tsv().starts_with("mode\traw\nmrr\t"));
}

#[test]
fn filtered_without_known_set_is_rejected() {
    let scorer = |_: EntityId, _: RelationId, _: EntityId| 0.0;
    let t = Triple::new(EntityId(0), RelationId(0), EntityId(1));
    assert!(rank_triple(&scorer, &t, 2, None, RankMode::Filtered).is_err());
}

#[test]
fn nan_energy_is_an_error() {
    let scorer = |_: EntityId, _: RelationId, t: EntityId| if t.0 == 1 { f64::NAN } else { 0.0 };
    let t = Triple::new(EntityId(0), RelationId(0), EntityId(0));
    assert!(rank_triple(&scorer, &t, 2, None, RankMode::Raw).is_err());
}

#[test]
fn empty_test_set_is_rejected() {
    assert!(RankingReport::from_ranks(RankMode::Raw, vec![]).is_err());
}

proptest! {
    #[test]
    fn tie_rank_matches_oracle(target in 0u8..4, others in prop::collection::vec(0u8..4, 0..20)) {
        let others: Vec<f64> = others.into_iter().map(f64::from).collect();
        prop_assert_eq!(tie_rank(target as f64, others.iter().copied()), oracle_rank(target as f64, &others));
    }

    #[test]
    fn filtered_rank_never_exceeds_raw(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=15);
        let e = table(n, &mut rng);
        let scorer = |h: EntityId, _: RelationId, t: EntityId| e[h.index()][t.index()];
        let known: HashSet<Triple> = (0..n * n)
            .filter(|_| rng.gen_bool(0.2))
            .map(|i| Triple::new(EntityId((i / n) as u32), RelationId(0), EntityId((i % n) as u32)))
            .collect();
        let t = Triple::new(EntityId(rng.gen_range(0..n) as u32), RelationId(0), EntityId(rng.gen_range(0..n) as u32));
        let raw = rank_triple(&scorer, &t, n, None, RankMode::Raw).unwrap();
        let filt = rank_triple(&scorer, &t, n, Some(&known), RankMode::Filtered).unwrap();
        prop_assert!(filt.0 <= raw.0 && filt.1 <= raw.1);
        prop_assert!(raw.0 >= 1 && raw.0 <= n && raw.1 >= 1 && raw.1 <= n);
    }

    #[test]
    fn metrics_are_bounded_and_monotone(ranks in prop::collection::vec((1usize..50, 1usize..50), 1..30)) {
        let r = RankingReport::from_ranks(RankMode::Raw, ranks).unwrap();
        prop_assert!(r.mrr > 0.0 && r.mrr <= 1.0);
        prop_assert!(r.hits_at[0] <= r.hits_at[1] && r.hits_at[1] <= r.hits_at[2]);
        prop_assert!(r.hits_at[0] <= r.mrr);
    }
}
