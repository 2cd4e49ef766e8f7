use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;

use super::{HornRule, MiningConfig, RuleMetrics};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

/// Start entity with the sorted, distinct endpoints reachable along a body.
type Frontier = Vec<(EntityId, Vec<EntityId>)>;

pub fn head_pairs(kg: &KnowledgeGraph, head: RelationId) -> HashSet<(EntityId, EntityId)> {
    kg.triples()
        .iter()
        .filter(|t| t.rel == head)
        .map(|t| (t.head, t.tail))
        .collect()
}

/// Distinct `(start, end)` pairs connected by a walk following `body`.
pub fn body_pairs(kg: &KnowledgeGraph, body: &[RelationId]) -> HashSet<(EntityId, EntityId)> {
    let Some((&first, rest)) = body.split_first() else {
        return HashSet::new();
    };
    let mut out = HashSet::new();
    for s in 0..kg.entity_count() as u32 {
        let s = EntityId(s);
        let mut ends: Vec<EntityId> = kg.successors(s, first).iter().map(|&(_, t)| t).collect();
        for &r in rest {
            if ends.is_empty() {
                break;
            }
            let mut next: Vec<EntityId> = ends
                .iter()
                .flat_map(|&x| kg.successors(x, r).iter().map(|&(_, t)| t))
                .collect();
            next.sort_unstable();
            next.dedup();
            ends = next;
        }
        out.extend(ends.into_iter().map(|e| (s, e)));
    }
    out
}

/// Emits every path rule with body length `1..=l_max` and support ≥ 1,
/// except the trivial `r → r`. Thresholds in `config` are not applied here.
pub fn mine_path_rules(kg: &KnowledgeGraph, config: &MiningConfig) -> Vec<(HornRule, RuleMetrics)> {
    if kg.is_empty() || config.l_max == 0 {
        return Vec::new();
    }
    let miner = Miner::new(kg, config.l_max);
    let first = miner.extend(&initial_frontier(kg));
    let mut rules: Vec<(HornRule, RuleMetrics)> = first
        .into_par_iter()
        .flat_map_iter(|(r, frontier)| {
            let mut out = Vec::new();
            miner.grow(&mut vec![r], &frontier, &mut out);
            out
        })
        .collect();
    rules.sort_by(|a, b| a.0.order_key().cmp(&b.0.order_key()));
    rules
}

/// Every entity paired with itself: the empty body.
fn initial_frontier(kg: &KnowledgeGraph) -> Frontier {
    (0..kg.entity_count() as u32)
        .map(|e| (EntityId(e), vec![EntityId(e)]))
        .collect()
}

struct Miner<'a> {
    kg: &'a KnowledgeGraph,
    l_max: usize,
    pair_relations: HashMap<(EntityId, EntityId), Vec<RelationId>>,
    head_counts: Vec<usize>,
}

impl<'a> Miner<'a> {
    fn new(kg: &'a KnowledgeGraph, l_max: usize) -> Self {
        let mut pair_relations: HashMap<_, Vec<RelationId>> = HashMap::new();
        let mut head_counts = vec![0; kg.relation_count()];
        for t in kg.triples() {
            pair_relations.entry((t.head, t.tail)).or_default().push(t.rel);
            head_counts[t.rel.index()] += 1;
        }
        Self {
            kg,
            l_max,
            pair_relations,
            head_counts,
        }
    }

    /// Extends every endpoint by one edge, grouped by the edge relation.
    fn extend(&self, frontier: &Frontier) -> BTreeMap<RelationId, Frontier> {
        let mut next: BTreeMap<RelationId, Frontier> = BTreeMap::new();
        for (s, ends) in frontier {
            let mut per_rel: BTreeMap<RelationId, Vec<EntityId>> = BTreeMap::new();
            for &x in ends {
                for &(r, y) in self.kg.out_adj(x) {
                    per_rel.entry(r).or_default().push(y);
                }
            }
            for (r, mut ys) in per_rel {
                ys.sort_unstable();
                ys.dedup();
                next.entry(r).or_default().push((*s, ys));
            }
        }
        next
    }

    fn grow(&self, body: &mut Vec<RelationId>, frontier: &Frontier, out: &mut Vec<(HornRule, RuleMetrics)>) {
        self.emit(body, frontier, out);
        if body.len() == self.l_max {
            return;
        }
        for (r, next) in self.extend(frontier) {
            body.push(r);
            self.grow(body, &next, out);
            body.pop();
        }
    }

    fn emit(&self, body: &[RelationId], frontier: &Frontier, out: &mut Vec<(HornRule, RuleMetrics)>) {
        let mut support: BTreeMap<RelationId, usize> = BTreeMap::new();
        let mut body_count = 0usize;
        for (s, ends) in frontier {
            body_count += ends.len();
            for e in ends {
                if let Some(rels) = self.pair_relations.get(&(*s, *e)) {
                    for &r in rels {
                        *support.entry(r).or_default() += 1;
                    }
                }
            }
        }
        for (head, sup) in support {
            if body.len() == 1 && body[0] == head {
                continue;
            }
            out.push((
                HornRule::new(body.to_vec(), head),
                RuleMetrics {
                    support: sup,
                    head_coverage: sup as f64 / self.head_counts[head.index()] as f64,
                    confidence: sup as f64 / body_count as f64,
                },
            ));
        }
    }
}
