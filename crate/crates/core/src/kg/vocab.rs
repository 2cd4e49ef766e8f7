use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{EntityId, RelationId};
use crate::{Error, Result};

/// Suffix marking the inverse of a base relation in labels.
pub const INVERSE_SUFFIX: &str = "^-1";
/// Label of the synthetic self-loop relation.
pub const SELF_LOOP_LABEL: &str = "SELF_LOOP";

/// Bidirectional label table with ids assigned in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interner {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Entity and base-relation interning tables shared by the train, valid and
/// test splits of a dataset.
///
/// Relation ids past the base range are derived: `base + r` is the inverse of
/// `r`, and the self-loop id is one past the last relation of a graph.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    pub(crate) entities: Interner,
    pub(crate) relations: Interner,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Number of base (non-inverse) relations.
    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn intern_entity(&mut self, label: &str) -> EntityId {
        EntityId(self.entities.intern(label))
    }

    pub fn intern_relation(&mut self, label: &str) -> RelationId {
        RelationId(self.relations.intern(label))
    }

    pub fn entity_id(&self, label: &str) -> Result<EntityId> {
        self.entities.get(label).map(EntityId).ok_or_else(|| Error::UnknownSymbol {
            kind: "entity",
            label: label.to_owned(),
        })
    }

    /// Resolves base and inverse (`label^-1`) labels.
    pub fn relation_id(&self, label: &str) -> Result<RelationId> {
        let base = self.relations.len() as u32;
        if let Some(id) = self.relations.get(label) {
            return Ok(RelationId(id));
        }
        if let Some(stem) = label.strip_suffix(INVERSE_SUFFIX) {
            if let Some(id) = self.relations.get(stem) {
                return Ok(RelationId(id + base));
            }
        }
        Err(Error::UnknownSymbol {
            kind: "relation",
            label: label.to_owned(),
        })
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0).unwrap_or("<invalid>")
    }

    pub fn relation_label(&self, id: RelationId) -> String {
        let base = self.relations.len() as u32;
        match id.0 {
            r if r < base => self.relations.label(r).unwrap_or_default().to_owned(),
            r if r < 2 * base => format!("{}{INVERSE_SUFFIX}", self.relations.label(r - base).unwrap_or_default()),
            _ => SELF_LOOP_LABEL.to_owned(),
        }
    }

    pub fn entity_labels(&self) -> &[String] {
        self.entities.labels()
    }

    /// Hex SHA-256 over both label tables in id order.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for label in self.entities.labels() {
            hasher.update(b"E\t");
            hasher.update(label.as_bytes());
            hasher.update(b"\n");
        }
        for label in self.relations.labels() {
            hasher.update(b"R\t");
            hasher.update(label.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}
