use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::{HornRule, RuleMetrics, TransformedNeighbor};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::numerics::Real;
use crate::transe::{EmbeddingTable, Norm};
use crate::{Error, Result};

/// Prefix tree over rule bodies.
#[derive(Default)]
struct Trie {
    nodes: Vec<TrieNode>,
}

#[derive(Default)]
struct TrieNode {
    children: HashMap<RelationId, usize>,
    rules: Vec<usize>,
}

impl Trie {
    fn build(rules: &[(HornRule, RuleMetrics)]) -> Self {
        let mut trie = Trie {
            nodes: vec![TrieNode::default()],
        };
        for (i, (rule, _)) in rules.iter().enumerate() {
            let mut node = 0;
            for &r in &rule.body {
                let next = trie.nodes.len();
                node = *trie.nodes[node].children.entry(r).or_insert(next);
                if node == next {
                    trie.nodes.push(TrieNode::default());
                }
            }
            trie.nodes[node].rules.push(i);
        }
        trie
    }
}

/// Candidate before scoring: winning rule index per (relation, entity).
type Candidates = BTreeMap<(RelationId, EntityId), usize>;

/// Matches every entity against every selected rule. A body walk from `e`
/// ending at `t` yields the transformed neighbor `(head, t)` unless `e`
/// already has it as an original neighbor. Duplicates keep the derivation
/// with the highest confidence (then head coverage, then shorter body, then
/// rule order). Scores are translation energies min-max scaled over all
/// emitted neighbors.
pub fn match_rules<F: Real>(
    kg: &KnowledgeGraph,
    rules: &[(HornRule, RuleMetrics)],
    embeddings: &EmbeddingTable<F>,
    l_max: usize,
    norm: Norm,
) -> Result<Vec<Vec<TransformedNeighbor>>> {
    if embeddings.entity_count() < kg.entity_count() || embeddings.relation_count() < kg.relation_count() {
        return Err(Error::Consistency(format!(
            "embedding table covers {} entities / {} relations, graph has {} / {}",
            embeddings.entity_count(),
            embeddings.relation_count(),
            kg.entity_count(),
            kg.relation_count()
        )));
    }
    for (rule, _) in rules {
        super::check_rule(kg, rule)?;
        if rule.len() > l_max {
            return Err(Error::Argument(format!("rule {rule} is longer than l_max = {l_max}")));
        }
    }
    let trie = Trie::build(rules);

    let mut matched: Vec<Vec<(RelationId, EntityId, usize, f64)>> = (0..kg.entity_count() as u32)
        .into_par_iter()
        .map(|e| {
            let e = EntityId(e);
            let mut found = Candidates::new();
            walk(kg, &trie, rules, e, 0, e, None, &mut found);
            found
                .into_iter()
                .map(|((rel, t), rule)| {
                    let energy = embeddings.energy(e, rel, t, norm).as_f64();
                    (rel, t, rule, energy)
                })
                .collect()
        })
        .collect();

    let (lo, hi) = matched
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| (lo.min(n.3), hi.max(n.3)));
    let span = hi - lo;
    Ok(matched
        .iter_mut()
        .map(|list| {
            list.iter()
                .map(|&(rel, entity, rule, energy)| {
                    let (r, m) = &rules[rule];
                    TransformedNeighbor {
                        rel,
                        entity,
                        hc: m.head_coverage,
                        conf: m.confidence,
                        l_norm: r.len() as f64 / l_max as f64,
                        s: if span > 0.0 { (energy - lo) / span } else { 0.0 },
                        rule: rule as u32,
                    }
                })
                .collect()
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn walk(
    kg: &KnowledgeGraph,
    trie: &Trie,
    rules: &[(HornRule, RuleMetrics)],
    source: EntityId,
    node: usize,
    at: EntityId,
    arrived: Option<(RelationId, EntityId)>,
    found: &mut Candidates,
) {
    let children = &trie.nodes[node].children;
    if children.is_empty() {
        return;
    }
    for &(r, t) in kg.out_adj(at) {
        let Some(&child) = children.get(&r) else {
            continue;
        };
        if let Some((prev, from)) = arrived {
            if t == from && kg.is_inverse_pair(prev, r) {
                continue;
            }
        }
        for &i in &trie.nodes[child].rules {
            let head = rules[i].0.head;
            if kg.contains(&crate::kg::Triple::new(source, head, t)) {
                continue;
            }
            found
                .entry((head, t))
                .and_modify(|best| {
                    if better(&rules[i], &rules[*best], i, *best) {
                        *best = i;
                    }
                })
                .or_insert(i);
        }
        walk(kg, trie, rules, source, child, t, Some((r, at)), found);
    }
}

fn better(a: &(HornRule, RuleMetrics), b: &(HornRule, RuleMetrics), ia: usize, ib: usize) -> bool {
    let key = |(r, m): &(HornRule, RuleMetrics), i: usize| (-m.confidence, -m.head_coverage, r.len(), i);
    key(a, ia).partial_cmp(&key(b, ib)) == Some(std::cmp::Ordering::Less)
}
