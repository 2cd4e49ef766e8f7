//! Triple storage, interning, adjacency and neighbor enumeration.
//!
//! A [`KnowledgeGraph`] is immutable once built. Inverse augmentation adds
//! `(t, r^-1, h)` for every `(h, r, t)` so incoming edges become outgoing
//! one-hop neighbors; every entity additionally owns a synthetic self-loop
//! neighbor so its neighborhood is never empty.

mod io;
mod vocab;

pub use io::{load_triples, read_label_triples, write_triples, Dataset, VocabMode};
pub use vocab::{Interner, Vocab, INVERSE_SUFFIX, SELF_LOOP_LABEL};

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::rules::TransformedNeighbor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Self { head, rel, tail }
    }
}

/// A (relation, entity) pair reachable in one step.
pub type Neighbor = (RelationId, EntityId);

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    vocab: Arc<Vocab>,
    triples: Vec<Triple>,
    index: HashSet<Triple>,
    out_adj: Vec<Vec<Neighbor>>,
    inverse_augmented: bool,
}

impl KnowledgeGraph {
    /// Builds a graph over `vocab`, dropping duplicate triples while keeping
    /// first-occurrence order.
    pub fn from_triples(vocab: Arc<Vocab>, triples: impl IntoIterator<Item = Triple>) -> Result<Self> {
        let ne = vocab.entity_count();
        let nr = vocab.relation_count();
        let mut index = HashSet::new();
        let mut kept = Vec::new();
        for t in triples {
            if t.head.index() >= ne || t.tail.index() >= ne {
                return Err(Error::Index {
                    kind: "entity",
                    id: t.head.index().max(t.tail.index()),
                    count: ne,
                });
            }
            if t.rel.index() >= nr {
                return Err(Error::Index {
                    kind: "relation",
                    id: t.rel.index(),
                    count: nr,
                });
            }
            if index.insert(t) {
                kept.push(t);
            }
        }
        Ok(Self::assemble(vocab, kept, index, false))
    }

    fn assemble(vocab: Arc<Vocab>, triples: Vec<Triple>, index: HashSet<Triple>, inverse_augmented: bool) -> Self {
        let mut out_adj = vec![Vec::new(); vocab.entity_count()];
        for t in &triples {
            out_adj[t.head.index()].push((t.rel, t.tail));
        }
        for adj in &mut out_adj {
            adj.sort_unstable();
        }
        Self {
            vocab,
            triples,
            index,
            out_adj,
            inverse_augmented,
        }
    }

    /// Adds `(t, inv(r), h)` for every triple, with `inv(r) = r + base count`.
    pub fn add_inverse_relations(&self) -> Result<Self> {
        if self.inverse_augmented {
            return Err(Error::State("graph is already inverse-augmented".into()));
        }
        let base = self.vocab.relation_count() as u32;
        let mut triples = self.triples.clone();
        let mut index = self.index.clone();
        for t in &self.triples {
            let inv = Triple::new(t.tail, RelationId(t.rel.0 + base), t.head);
            if index.insert(inv) {
                triples.push(inv);
            }
        }
        Ok(Self::assemble(self.vocab.clone(), triples, index, true))
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.index.contains(t)
    }

    pub fn entity_count(&self) -> usize {
        self.vocab.entity_count()
    }

    /// Relation count including inverses when augmented; excludes the self-loop.
    pub fn relation_count(&self) -> usize {
        let base = self.vocab.relation_count();
        if self.inverse_augmented {
            2 * base
        } else {
            base
        }
    }

    pub fn base_relation_count(&self) -> usize {
        self.vocab.relation_count()
    }

    pub fn is_inverse_augmented(&self) -> bool {
        self.inverse_augmented
    }

    /// The dedicated self-loop relation id, one past the last real relation.
    pub fn self_loop(&self) -> RelationId {
        RelationId(self.relation_count() as u32)
    }

    /// True when `b` is the inverse of `a` (in either direction).
    pub fn is_inverse_pair(&self, a: RelationId, b: RelationId) -> bool {
        if !self.inverse_augmented {
            return false;
        }
        let base = self.base_relation_count() as u32;
        b.0 == a.0 + base || a.0 == b.0 + base
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.index() < self.entity_count() {
            Ok(())
        } else {
            Err(Error::Index {
                kind: "entity",
                id: e.index(),
                count: self.entity_count(),
            })
        }
    }

    /// Outgoing `(relation, entity)` pairs of `e`, sorted, without the self-loop.
    pub fn out_adj(&self, e: EntityId) -> &[Neighbor] {
        &self.out_adj[e.index()]
    }

    /// Outgoing neighbors of `e` along relation `r`.
    pub fn successors(&self, e: EntityId, r: RelationId) -> &[Neighbor] {
        let adj = self.out_adj(e);
        let lo = adj.partition_point(|&(rel, _)| rel < r);
        let hi = adj.partition_point(|&(rel, _)| rel <= r);
        &adj[lo..hi]
    }

    /// One-hop neighbors: the self-loop first, then the outgoing pairs in
    /// (relation id, entity id) order.
    pub fn one_hop_neighbors(&self, e: EntityId) -> Result<Vec<Neighbor>> {
        self.check_entity(e)?;
        let adj = self.out_adj(e);
        let mut out = Vec::with_capacity(adj.len() + 1);
        out.push((self.self_loop(), e));
        out.extend_from_slice(adj);
        Ok(out)
    }

    /// Lazily enumerates every walk of length `1..=max_len` from `e` as
    /// `(relation path, end entity)`, skipping any step that immediately
    /// returns along the inverse of the previous step.
    pub fn walks_up_to(&self, e: EntityId, max_len: usize) -> Result<Walks<'_>> {
        self.check_entity(e)?;
        if max_len == 0 {
            return Err(Error::Argument("walk length must be at least 1".into()));
        }
        Ok(Walks {
            kg: self,
            max_len,
            stack: vec![Frame {
                node: e,
                cursor: 0,
                arrived: None,
            }],
            path: Vec::new(),
        })
    }

    /// Draws `n` corruptions of `t`, deterministic for a given `seed`.
    pub fn sample_negatives(&self, t: &Triple, n: usize, seed: u64) -> Result<Vec<Triple>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_negatives_with(t, n, &mut rng)
    }

    /// Replaces the head or the tail (fair coin per sample) with a uniformly
    /// drawn entity, rejecting corruptions that are known triples or that
    /// collapse into a reflexive `(x, r, x)` pair. Gives up after `100 · n`
    /// draws.
    pub fn sample_negatives_with<R: Rng>(&self, t: &Triple, n: usize, rng: &mut R) -> Result<Vec<Triple>> {
        if !self.contains(t) {
            return Err(Error::Argument(format!(
                "triple ({}, {}, {}) is not in the graph",
                t.head, t.rel, t.tail
            )));
        }
        let ne = self.entity_count() as u32;
        let budget = 100 * n.max(1);
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n {
            if attempts == budget {
                return Err(Error::Exhausted { attempts });
            }
            attempts += 1;
            let e = EntityId(rng.gen_range(0..ne));
            let corrupt = if rng.gen::<bool>() {
                if e == t.tail {
                    continue;
                }
                Triple::new(e, t.rel, t.tail)
            } else {
                if e == t.head {
                    continue;
                }
                Triple::new(t.head, t.rel, e)
            };
            if !self.contains(&corrupt) {
                out.push(corrupt);
            }
        }
        Ok(out)
    }
}

struct Frame {
    node: EntityId,
    cursor: usize,
    arrived: Option<(RelationId, EntityId)>,
}

/// Depth-first walk enumerator returned by [`KnowledgeGraph::walks_up_to`].
pub struct Walks<'a> {
    kg: &'a KnowledgeGraph,
    max_len: usize,
    stack: Vec<Frame>,
    path: Vec<RelationId>,
}

impl Iterator for Walks<'_> {
    type Item = (Vec<RelationId>, EntityId);

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let depth = self.stack.len();
            let top = self.stack.last_mut()?;
            let adj = self.kg.out_adj(top.node);
            if top.cursor >= adj.len() {
                self.stack.pop();
                if depth > 1 {
                    self.path.pop();
                }
                continue;
            }
            let (r, t) = adj[top.cursor];
            top.cursor += 1;
            if let Some((prev, from)) = top.arrived {
                if t == from && self.kg.is_inverse_pair(prev, r) {
                    continue;
                }
            }
            let node = top.node;
            let mut walk = self.path.clone();
            walk.push(r);
            if walk.len() < self.max_len {
                self.path.push(r);
                self.stack.push(Frame {
                    node: t,
                    cursor: 0,
                    arrived: Some((r, node)),
                });
            }
            return Some((walk, t));
        }
    }
}

/// Per-entity original and transformed one-hop neighbors fed to the
/// aggregator.
#[derive(Clone, Debug, Default)]
pub struct NeighborSets {
    pub original: Vec<Vec<Neighbor>>,
    pub transformed: Vec<Vec<TransformedNeighbor>>,
}

impl NeighborSets {
    /// Original neighbors from the graph, with no transformed neighbors yet.
    pub fn from_graph(kg: &KnowledgeGraph) -> Self {
        let original = (0..kg.entity_count() as u32)
            .map(|e| kg.one_hop_neighbors(EntityId(e)).expect("entity in range"))
            .collect();
        Self {
            original,
            transformed: vec![Vec::new(); kg.entity_count()],
        }
    }

    pub fn with_transformed(kg: &KnowledgeGraph, transformed: Vec<Vec<TransformedNeighbor>>) -> Result<Self> {
        let mut sets = Self::from_graph(kg);
        if transformed.len() != sets.original.len() {
            return Err(Error::Consistency(format!(
                "{} transformed lists for {} entities",
                transformed.len(),
                sets.original.len()
            )));
        }
        sets.transformed = transformed;
        Ok(sets)
    }

    pub fn entity_count(&self) -> usize {
        self.original.len()
    }

    /// Drops every transformed neighbor.
    pub fn without_transformed(&self) -> Self {
        Self {
            original: self.original.clone(),
            transformed: vec![Vec::new(); self.original.len()],
        }
    }
}
