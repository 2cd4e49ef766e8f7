use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{KnowledgeGraph, Triple, Vocab};
use crate::{Error, Result};

/// How `load_triples` treats labels it has not seen before.
#[derive(Clone, Debug)]
pub enum VocabMode {
    /// Start a fresh vocabulary in first-appearance order.
    Build,
    /// Resolve against an existing vocabulary; unseen labels are errors.
    Reuse(Arc<Vocab>),
}

/// Parses `head<TAB>relation<TAB>tail` lines, skipping blank and `#` lines.
pub fn read_label_triples(path: &Path) -> Result<Vec<[String; 3]>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            [h, r, t] if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                out.push([h.to_string(), r.to_string(), t.to_string()])
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: n + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                })
            }
        }
    }
    Ok(out)
}

pub fn load_triples(path: &Path, mode: VocabMode) -> Result<KnowledgeGraph> {
    let rows = read_label_triples(path)?;
    match mode {
        VocabMode::Build => {
            let mut vocab = Vocab::new();
            let ids = intern_rows(&mut vocab, &rows);
            KnowledgeGraph::from_triples(Arc::new(vocab), ids)
        }
        VocabMode::Reuse(vocab) => {
            let ids = resolve_rows(&vocab, &rows)?;
            KnowledgeGraph::from_triples(vocab, ids)
        }
    }
}

fn intern_rows(vocab: &mut Vocab, rows: &[[String; 3]]) -> Vec<Triple> {
    rows.iter()
        .map(|[h, r, t]| {
            let head = vocab.intern_entity(h);
            let rel = vocab.intern_relation(r);
            let tail = vocab.intern_entity(t);
            Triple::new(head, rel, tail)
        })
        .collect()
}

fn resolve_rows(vocab: &Vocab, rows: &[[String; 3]]) -> Result<Vec<Triple>> {
    rows.iter()
        .map(|[h, r, t]| {
            Ok(Triple::new(
                vocab.entity_id(h)?,
                vocab.relation_id(r)?,
                vocab.entity_id(t)?,
            ))
        })
        .collect()
}

/// Writes the base (non-inverse) triples of `kg` as label TSV.
pub fn write_triples(kg: &KnowledgeGraph, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let vocab = kg.vocab();
    let base = kg.base_relation_count();
    for t in kg.triples().iter().filter(|t| t.rel.index() < base) {
        writeln!(
            w,
            "{}\t{}\t{}",
            vocab.entity_label(t.head),
            vocab.relation_label(t.rel),
            vocab.entity_label(t.tail)
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Train/valid/test splits over one shared vocabulary, interned in the order
/// train, valid, test.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Arc<Vocab>,
    pub train: KnowledgeGraph,
    pub valid: KnowledgeGraph,
    pub test: KnowledgeGraph,
}

impl Dataset {
    pub fn load(train: &Path, valid: &Path, test: &Path) -> Result<Self> {
        let rows = [train, valid, test]
            .into_iter()
            .map(read_label_triples)
            .collect::<Result<Vec<_>>>()?;
        let mut vocab = Vocab::new();
        let ids: Vec<Vec<Triple>> = rows.iter().map(|r| intern_rows(&mut vocab, r)).collect();
        let vocab = Arc::new(vocab);
        let mut splits = ids
            .into_iter()
            .map(|t| KnowledgeGraph::from_triples(vocab.clone(), t));
        Ok(Self {
            train: splits.next().expect("three splits")?,
            valid: splits.next().expect("three splits")?,
            test: splits.next().expect("three splits")?,
            vocab,
        })
    }

    /// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let p = |name: &str| -> PathBuf { dir.join(name) };
        Self::load(&p("train.txt"), &p("valid.txt"), &p("test.txt"))
    }

    pub fn entity_count(&self) -> usize {
        self.vocab.entity_count()
    }

    pub fn relation_count(&self) -> usize {
        self.vocab.relation_count()
    }

    /// Every known triple across the three splits (base relations only).
    pub fn known_triples(&self) -> std::collections::HashSet<Triple> {
        self.train
            .triples()
            .iter()
            .chain(self.valid.triples())
            .chain(self.test.triples())
            .copied()
            .collect()
    }
}
