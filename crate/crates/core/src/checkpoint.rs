//! Line-oriented text checkpoints.
//!
//! ```text
//! RMNA-CKPT v1
//! kind=transe
//! vocab=<sha256 of the label tables>
//! dim=100
//! tensors=2
//! entities 14541 100
//! 0.0123 -0.5 ...
//! relations 475 100
//! ...
//! ```
//!
//! Floats are written with the shortest decimal that parses back to the
//! same value, so a round trip is bitwise exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::aggregator::{AggregatorDims, AggregatorParams, FeatureMask, NeighborEmbeddings};
use crate::decoder::DecoderParams;
use crate::kg::Vocab;
use crate::numerics::{Real, Tensor};
use crate::transe::{EmbeddingTable, Norm};
use crate::{Error, Result};

pub const MAGIC: &str = "RMNA-CKPT v1";

pub const KIND_TRANSE: &str = "transe";
pub const KIND_AGGREGATOR: &str = "aggregator";
pub const KIND_EMBEDDINGS: &str = "embeddings";
pub const KIND_DECODER: &str = "decoder";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F> {
    pub kind: String,
    pub vocab_hash: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<F>)>,
}

impl<F: Real> Checkpoint<F> {
    pub fn new(kind: &str, vocab: &Vocab) -> Self {
        Self {
            kind: kind.to_owned(),
            vocab_hash: vocab.hash(),
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn with_tensor(mut self, name: &str, tensor: Tensor<F>) -> Self {
        self.tensors.push((name.to_owned(), tensor));
        self
    }

    pub fn meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing metadata key '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad value '{raw}' for metadata key '{key}'")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\nkind={}\nvocab={}\n", self.kind, self.vocab_hash);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "{k}={v}");
        }
        let _ = writeln!(out, "tensors={}", self.tensors.len());
        for (name, t) in &self.tensors {
            let _ = writeln!(out, "{name} {} {}", t.rows(), t.cols());
            for i in 0..t.rows() {
                let row: Vec<String> = t.row(i).iter().map(|x| x.to_string()).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Parses checkpoint text without checking kind or vocabulary.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(MAGIC) => {}
            Some(other) => return Err(Error::Format(format!("unsupported header '{other}'"))),
            None => return Err(Error::Format("empty checkpoint".into())),
        }
        let mut meta = BTreeMap::new();
        let count: usize = loop {
            let line = lines.next().ok_or_else(|| Error::Format("truncated metadata".into()))?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key=value, found '{line}'")))?;
            if k == "tensors" {
                break v
                    .parse()
                    .map_err(|_| Error::Format(format!("bad tensor count '{v}'")))?;
            }
            meta.insert(k.to_owned(), v.to_owned());
        };
        let kind = meta
            .remove("kind")
            .ok_or_else(|| Error::Format("missing checkpoint kind".into()))?;
        let vocab_hash = meta
            .remove("vocab")
            .ok_or_else(|| Error::Format("missing vocabulary hash".into()))?;

        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let header = lines
                .next()
                .ok_or_else(|| Error::Format(format!("expected {count} tensors, found {}", tensors.len())))?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(Error::Format(format!("bad tensor header '{header}'")));
            };
            let dim = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::Format(format!("bad tensor header '{header}'")))
            };
            let (rows, cols) = (dim(rows)?, dim(cols)?);
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Format(format!("tensor '{name}' truncated at row {i}")))?;
                let before = data.len();
                for tok in line.split_whitespace() {
                    data.push(
                        tok.parse::<F>()
                            .map_err(|_| Error::Format(format!("bad number '{tok}' in tensor '{name}'")))?,
                    );
                }
                if data.len() - before != cols {
                    return Err(Error::Format(format!(
                        "tensor '{name}' row {i} has {} values, expected {cols}",
                        data.len() - before
                    )));
                }
            }
            tensors.push((name.to_owned(), Tensor::from_vec(rows, cols, data)?));
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Format("trailing content after the last tensor".into()));
        }
        Ok(Self {
            kind,
            vocab_hash,
            meta,
            tensors,
        })
    }

    /// Reads a checkpoint, requiring `kind` and the hash of `vocab`.
    pub fn load(path: &Path, kind: &str, vocab: &Vocab) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt = Self::parse(&text)?;
        ckpt.check(kind, vocab)?;
        Ok(ckpt)
    }

    pub fn check(&self, kind: &str, vocab: &Vocab) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Kind {
                expected: kind.to_owned(),
                found: self.kind.clone(),
            });
        }
        let expected = vocab.hash();
        if self.vocab_hash != expected {
            return Err(Error::Incompatible {
                expected,
                found: self.vocab_hash.clone(),
            });
        }
        Ok(())
    }
}

pub fn transe_checkpoint<F: Real>(table: &EmbeddingTable<F>, norm: Norm, vocab: &Vocab) -> Checkpoint<F> {
    Checkpoint::new(KIND_TRANSE, vocab)
        .with_meta("dim", table.dim())
        .with_meta("norm", norm)
        .with_tensor("entities", table.entities.clone())
        .with_tensor("relations", table.relations.clone())
}

pub fn transe_from_checkpoint<F: Real>(ckpt: &Checkpoint<F>) -> Result<(EmbeddingTable<F>, Norm)> {
    let table = EmbeddingTable::from_parts(ckpt.tensor("entities")?.clone(), ckpt.tensor("relations")?.clone())?;
    Ok((table, ckpt.meta("norm")?))
}

/// Encoder weights together with the base tables they were trained against.
pub fn aggregator_checkpoint<F: Real>(
    params: &AggregatorParams<F>,
    base: &EmbeddingTable<F>,
    norm: Norm,
    vocab: &Vocab,
) -> Checkpoint<F> {
    let (d, m) = (params.dims, params.mask);
    let mut ckpt = Checkpoint::new(KIND_AGGREGATOR, vocab)
        .with_meta("d", d.d)
        .with_meta("d1", d.d1)
        .with_meta("d2", d.d2)
        .with_meta("k_m", d.k_m)
        .with_meta("k_s", d.k_s)
        .with_meta("d_q1", d.d_qk[0])
        .with_meta("d_q2", d.d_qk[1])
        .with_meta("d_v1", d.d_v[0])
        .with_meta("d_v2", d.d_v[1])
        .with_meta("use_hc", m.use_hc)
        .with_meta("use_conf", m.use_conf)
        .with_meta("use_lnorm", m.use_lnorm)
        .with_meta("use_s", m.use_s)
        .with_meta("norm", norm)
        .with_tensor("base.entities", base.entities.clone())
        .with_tensor("base.relations", base.relations.clone());
    for (name, t) in params.named_tensors() {
        ckpt = ckpt.with_tensor(&name, t.clone());
    }
    ckpt
}

pub fn aggregator_from_checkpoint<F: Real>(
    ckpt: &Checkpoint<F>,
) -> Result<(AggregatorParams<F>, EmbeddingTable<F>, Norm)> {
    let dims = AggregatorDims {
        d: ckpt.meta("d")?,
        d1: ckpt.meta("d1")?,
        d2: ckpt.meta("d2")?,
        k_m: ckpt.meta("k_m")?,
        k_s: ckpt.meta("k_s")?,
        d_qk: [ckpt.meta("d_q1")?, ckpt.meta("d_q2")?],
        d_v: [ckpt.meta("d_v1")?, ckpt.meta("d_v2")?],
    };
    let mask = FeatureMask {
        use_hc: ckpt.meta("use_hc")?,
        use_conf: ckpt.meta("use_conf")?,
        use_lnorm: ckpt.meta("use_lnorm")?,
        use_s: ckpt.meta("use_s")?,
    };
    let mut params = AggregatorParams::init(dims, mask, 0)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let t = ckpt.tensor(name)?;
        if !t.same_shape(slot) {
            return Err(Error::Format(format!("tensor '{name}' has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t.clone();
    }
    let base = EmbeddingTable::from_parts(ckpt.tensor("base.entities")?.clone(), ckpt.tensor("base.relations")?.clone())?;
    Ok((params, base, ckpt.meta("norm")?))
}

pub fn embeddings_checkpoint<F: Real>(nei: &NeighborEmbeddings<F>, vocab: &Vocab) -> Checkpoint<F> {
    Checkpoint::new(KIND_EMBEDDINGS, vocab)
        .with_meta("dim", nei.entities.cols())
        .with_tensor("layer1", nei.layer1.clone())
        .with_tensor("entities", nei.entities.clone())
        .with_tensor("relations", nei.relations.clone())
}

pub fn embeddings_from_checkpoint<F: Real>(ckpt: &Checkpoint<F>) -> Result<NeighborEmbeddings<F>> {
    Ok(NeighborEmbeddings {
        layer1: ckpt.tensor("layer1")?.clone(),
        entities: ckpt.tensor("entities")?.clone(),
        relations: ckpt.tensor("relations")?.clone(),
    })
}

pub fn decoder_checkpoint<F: Real>(params: &DecoderParams<F>, vocab: &Vocab) -> Checkpoint<F> {
    let mut ckpt = Checkpoint::new(KIND_DECODER, vocab)
        .with_meta("dim", params.dim())
        .with_meta("kernels", params.kernels.rows());
    for (name, t) in params.named_tensors() {
        ckpt = ckpt.with_tensor(name, t.clone());
    }
    ckpt
}

pub fn decoder_from_checkpoint<F: Real>(ckpt: &Checkpoint<F>) -> Result<DecoderParams<F>> {
    let params = DecoderParams {
        entities: ckpt.tensor("entities")?.clone(),
        relations: ckpt.tensor("relations")?.clone(),
        kernels: ckpt.tensor("kernels")?.clone(),
        w_rl: ckpt.tensor("w_rl")?.clone(),
    };
    let (d, k) = (params.dim(), params.kernels.rows());
    if params.relations.cols() != d || params.kernels.cols() != 3 || params.w_rl.shape() != (k * d, 1) {
        return Err(Error::Format("decoder tensors have inconsistent shapes".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(labels: &[&str]) -> Vocab {
        let mut v = Vocab::new();
        for l in labels {
            v.intern_entity(l);
        }
        v.intern_relation("r");
        v
    }

    #[test]
    fn text_round_trip_is_bitwise() {
        let v = vocab(&["a", "b"]);
        let vals = vec![0.1f32, -1e-30, f32::MAX, f32::MIN_POSITIVE, 1.0 / 3.0, -0.0];
        let ckpt = Checkpoint::new("x", &v)
            .with_meta("dim", 3)
            .with_tensor("w", Tensor::from_vec(2, 3, vals.clone()).unwrap())
            .with_tensor("empty", Tensor::zeros(0, 4));
        let back = Checkpoint::<f32>::parse(&ckpt.to_text()).unwrap();
        let bits: Vec<u32> = back.tensor("w").unwrap().data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits, vals.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(back, ckpt);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let v = vocab(&["a"]);
        let text = Checkpoint::new("x", &v)
            .with_tensor("w", Tensor::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap())
            .to_text();
        let lines: Vec<&str> = text.lines().collect();
        for keep in 0..lines.len() {
            let cut = lines[..keep].join("\n");
            let err = Checkpoint::<f64>::parse(&cut).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "keep {keep}: {err}");
        }
        let short_row = text.replace("3 4", "3");
        assert!(matches!(Checkpoint::<f64>::parse(&short_row), Err(Error::Format(_))));
    }
}
