//! Path-shaped closed horn rules: exact support / head coverage / confidence,
//! threshold filtering, and rule matching that turns multi-hop neighbors into
//! transformed one-hop neighbors.
//!
//! A rule `r1(e, e1) ∧ r2(e1, e2) ∧ … ∧ rn(e_{n-1}, e') → r(e, e')` is stored
//! as its body `[r1, …, rn]` and head `r`. All three metrics count distinct
//! entity pairs, never walks.

mod io;
mod matching;
mod mining;

pub use io::{read_neighbors, read_rules, write_neighbors, write_rules};
pub use matching::match_rules;
pub use mining::{body_pairs, head_pairs, mine_path_rules};

use std::fmt;

use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HornRule {
    pub body: Vec<RelationId>,
    pub head: RelationId,
}

impl HornRule {
    pub fn new(body: Vec<RelationId>, head: RelationId) -> Self {
        Self { body, head }
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    /// Sort key: head id, body length, then body ids lexicographically.
    pub fn order_key(&self) -> (RelationId, usize, &[RelationId]) {
        (self.head, self.body.len(), &self.body)
    }
}

impl fmt::Display for HornRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self.body.iter().map(|r| r.to_string()).collect();
        write!(f, "{} => {}", body.join(" ∧ "), self.head)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RuleMetrics {
    pub support: usize,
    pub head_coverage: f64,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiningConfig {
    pub l_max: usize,
    pub hc_min: f64,
    pub conf_min: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            l_max: 3,
            hc_min: 0.7,
            conf_min: 0.7,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_max == 0 {
            return Err(Error::Argument("l_max must be at least 1".into()));
        }
        for (name, v) in [("hc_min", self.hc_min), ("conf_min", self.conf_min)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Argument(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A one-hop neighbor synthesized by a selected rule, with the reliability
/// scalars the aggregator consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedNeighbor {
    pub rel: RelationId,
    pub entity: EntityId,
    pub hc: f64,
    pub conf: f64,
    /// Body length over `l_max`.
    pub l_norm: f64,
    /// Translation energy of `(source, rel, entity)` min-max scaled to `[0, 1]`.
    pub s: f64,
    /// Index of the winning rule in the selected rule list.
    pub rule: u32,
}

fn check_rule(kg: &KnowledgeGraph, rule: &HornRule) -> Result<()> {
    let nr = kg.relation_count();
    for r in rule.body.iter().chain(std::iter::once(&rule.head)) {
        if r.index() >= nr {
            return Err(Error::Index {
                kind: "relation",
                id: r.index(),
                count: nr,
            });
        }
    }
    if rule.body.is_empty() {
        return Err(Error::Argument("rule body must be non-empty".into()));
    }
    Ok(())
}

/// Distinct pairs `(e1, e2)` connected by the body that also satisfy the head.
pub fn rule_support(kg: &KnowledgeGraph, rule: &HornRule) -> Result<usize> {
    check_rule(kg, rule)?;
    let heads = head_pairs(kg, rule.head);
    Ok(body_pairs(kg, &rule.body)
        .iter()
        .filter(|p| heads.contains(p))
        .count())
}

pub fn head_coverage(kg: &KnowledgeGraph, rule: &HornRule) -> Result<f64> {
    let support = rule_support(kg, rule)?;
    let heads = head_pairs(kg, rule.head).len();
    if heads == 0 {
        return Err(Error::UndefinedMetric(format!(
            "head relation {} has no instances",
            rule.head
        )));
    }
    Ok(support as f64 / heads as f64)
}

pub fn rule_confidence(kg: &KnowledgeGraph, rule: &HornRule) -> Result<f64> {
    let support = rule_support(kg, rule)?;
    let body = body_pairs(kg, &rule.body).len();
    if body == 0 {
        return Err(Error::UndefinedMetric(format!("body of {rule} has no instances")));
    }
    Ok(support as f64 / body as f64)
}

/// Keeps rules whose head coverage and confidence both strictly exceed the
/// thresholds, in their original order.
pub fn filter_rules(rules: &[(HornRule, RuleMetrics)], hc_min: f64, conf_min: f64) -> Vec<(HornRule, RuleMetrics)> {
    rules
        .iter()
        .filter(|(_, m)| m.head_coverage > hc_min && m.confidence > conf_min)
        .cloned()
        .collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use std::sync::Arc;

    use crate::kg::{KnowledgeGraph, Triple, Vocab};

    /// Builds a graph from label triples; relations are interned in the order
    /// given by `relations` first so ids are predictable.
    pub fn graph(relations: &[&str], lines: &[(&str, &str, &str)]) -> KnowledgeGraph {
        let mut vocab = Vocab::new();
        for r in relations {
            vocab.intern_relation(r);
        }
        let ids: Vec<_> = lines
            .iter()
            .map(|(h, r, t)| Triple::new(vocab.intern_entity(h), vocab.intern_relation(r), vocab.intern_entity(t)))
            .collect();
        KnowledgeGraph::from_triples(Arc::new(vocab), ids).unwrap()
    }

    /// r1(a,b), r2(b,c), r(a,c), r1(d,e2), r2(e2,f)
    pub fn toy_t2() -> KnowledgeGraph {
        graph(
            &["r1", "r2", "r"],
            &[
                ("a", "r1", "b"),
                ("b", "r2", "c"),
                ("a", "r", "c"),
                ("d", "r1", "e2"),
                ("e2", "r2", "f"),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    const R1: RelationId = RelationId(0);
    const R2: RelationId = RelationId(1);
    const R: RelationId = RelationId(2);

    #[test]
    fn toy_metrics() {
        let kg = toy_t2();
        let rule = HornRule::new(vec![R1, R2], R);
        assert_eq!(rule_support(&kg, &rule).unwrap(), 1);
        assert_eq!(head_coverage(&kg, &rule).unwrap(), 1.0);
        assert_eq!(rule_confidence(&kg, &rule).unwrap(), 0.5);
    }

    #[test]
    fn extra_head_instance_halves_coverage() {
        let kg = graph(
            &["r1", "r2", "r"],
            &[
                ("a", "r1", "b"),
                ("b", "r2", "c"),
                ("a", "r", "c"),
                ("d", "r1", "e2"),
                ("e2", "r2", "f"),
                ("g", "r", "k"),
            ],
        );
        let rule = HornRule::new(vec![R1, R2], R);
        assert_eq!(head_coverage(&kg, &rule).unwrap(), 0.5);
    }

    #[test]
    fn parallel_body_paths_count_once() {
        let kg = graph(
            &["r1", "r2", "r"],
            &[
                ("a", "r1", "b"),
                ("b", "r2", "c"),
                ("a", "r1", "x"),
                ("x", "r2", "c"),
                ("a", "r", "c"),
            ],
        );
        let rule = HornRule::new(vec![R1, R2], R);
        assert_eq!(rule_support(&kg, &rule).unwrap(), 1);
    }

    #[test]
    fn absent_head_gives_zero_support_and_undefined_coverage() {
        let kg = graph(&["r1", "r2", "r", "q"], &[("a", "r1", "b"), ("b", "r2", "c"), ("a", "r", "c")]);
        let rule = HornRule::new(vec![R1, R2], RelationId(3));
        assert_eq!(rule_support(&kg, &rule).unwrap(), 0);
        assert!(matches!(head_coverage(&kg, &rule), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn self_implication_has_full_confidence() {
        let kg = toy_t2();
        let rule = HornRule::new(vec![R], R);
        assert_eq!(rule_confidence(&kg, &rule).unwrap(), 1.0);
        let empty_body = HornRule::new(vec![R2, R1], R);
        assert!(matches!(rule_confidence(&kg, &empty_body), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn filter_is_strict() {
        let m = |hc, conf| RuleMetrics {
            support: 1,
            head_coverage: hc,
            confidence: conf,
        };
        let rules = vec![
            (HornRule::new(vec![R1, R2], R), m(1.0, 0.5)),
            (HornRule::new(vec![R1], R), m(0.7, 0.9)),
            (HornRule::new(vec![R2], R), m(0.8, 0.8)),
        ];
        let kept = filter_rules(&rules, 0.7, 0.7);
        assert_eq!(kept, vec![rules[2].clone()]);
        assert_eq!(filter_rules(&rules, 0.0, 0.0), rules);
    }

    #[test]
    fn default_thresholds() {
        let c = MiningConfig::default();
        assert_eq!((c.l_max, c.hc_min, c.conf_min), (3, 0.7, 0.7));
        assert!(MiningConfig { l_max: 0, ..c }.validate().is_err());
        assert!(MiningConfig { hc_min: 1.5, ..c }.validate().is_err());
    }
}
