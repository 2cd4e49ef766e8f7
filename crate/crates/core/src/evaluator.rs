//! Link-prediction ranking: corrupt each test triple on both ends, rank by
//! ascending energy, and summarize as MRR and Hits@{1,3,10}.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::kg::{EntityId, RelationId, Triple};
use crate::{Error, Result};

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RankMode {
    Raw,
    #[default]
    Filtered,
}

impl FromStr for RankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(RankMode::Raw),
            "filtered" => Ok(RankMode::Filtered),
            other => Err(Error::Argument(format!("unknown ranking mode '{other}' (expected raw or filtered)"))),
        }
    }
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankMode::Raw => "raw",
            RankMode::Filtered => "filtered",
        })
    }
}

/// Rank of `target` among `others`: one plus the strictly lower energies
/// plus half the exact ties, rounded up.
pub fn tie_rank(target: f64, others: impl IntoIterator<Item = f64>) -> usize {
    let (mut lower, mut ties) = (0usize, 0usize);
    for e in others {
        if e < target {
            lower += 1;
        } else if e == target {
            ties += 1;
        }
    }
    1 + lower + ties.div_ceil(2)
}

/// Head and tail ranks of `triple` against every entity substitution. In
/// filtered mode, corruptions found in `known` are skipped.
pub fn rank_triple<S>(
    scorer: &S,
    triple: &Triple,
    entity_count: usize,
    known: Option<&HashSet<Triple>>,
    mode: RankMode,
) -> Result<(usize, usize)>
where
    S: Fn(EntityId, RelationId, EntityId) -> f64 + ?Sized,
{
    let known = match (mode, known) {
        (RankMode::Raw, _) => None,
        (RankMode::Filtered, Some(k)) => Some(k),
        (RankMode::Filtered, None) => {
            return Err(Error::Argument("filtered ranking needs the known triple set".into()))
        }
    };
    let score = |t: &Triple| -> Result<f64> {
        let e = scorer(t.head, t.rel, t.tail);
        if e.is_nan() {
            return Err(Error::Numeric(format!("energy of {t:?} is NaN")));
        }
        Ok(e)
    };
    let target = score(triple)?;
    let mut ranks = [0usize; 2];
    for (side, rank) in ranks.iter_mut().enumerate() {
        let mut others = Vec::with_capacity(entity_count);
        for e in 0..entity_count as u32 {
            let e = EntityId(e);
            let candidate = if side == 0 {
                Triple::new(e, triple.rel, triple.tail)
            } else {
                Triple::new(triple.head, triple.rel, e)
            };
            if candidate == *triple || known.is_some_and(|k| k.contains(&candidate)) {
                continue;
            }
            others.push(score(&candidate)?);
        }
        *rank = tie_rank(target, others);
    }
    Ok((ranks[0], ranks[1]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingReport {
    pub mode: RankMode,
    pub mrr: f64,
    /// Paired with [`HITS_AT`].
    pub hits_at: [f64; 3],
    pub per_triple_ranks: Vec<(usize, usize)>,
}

impl RankingReport {
    pub fn from_ranks(mode: RankMode, per_triple_ranks: Vec<(usize, usize)>) -> Result<Self> {
        if per_triple_ranks.is_empty() {
            return Err(Error::Argument("cannot summarize an empty test set".into()));
        }
        let all: Vec<usize> = per_triple_ranks.iter().flat_map(|&(h, t)| [h, t]).collect();
        let n = all.len() as f64;
        let mrr = all.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits_at = HITS_AT.map(|k| all.iter().filter(|&&r| r <= k).count() as f64 / n);
        Ok(Self {
            mode,
            mrr,
            hits_at,
            per_triple_ranks,
        })
    }

    pub fn hits(&self, k: usize) -> Option<f64> {
        HITS_AT.iter().position(|&h| h == k).map(|i| self.hits_at[i])
    }

    /// `metric<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("mode\t{}\nmrr\t{}\n", self.mode, self.mrr);
        for (k, v) in HITS_AT.iter().zip(self.hits_at) {
            out.push_str(&format!("hits@{k}\t{v}\n"));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:>8}\n", "metric", self.mode.to_string());
        out.push_str(&format!("{:<10} {:>8.4}\n", "MRR", self.mrr));
        for (k, v) in HITS_AT.iter().zip(self.hits_at) {
            out.push_str(&format!("{:<10} {:>8.4}\n", format!("Hits@{k}"), v));
        }
        out
    }
}

pub fn evaluate<S>(
    scorer: &S,
    test: &[Triple],
    entity_count: usize,
    known: Option<&HashSet<Triple>>,
    mode: RankMode,
) -> Result<RankingReport>
where
    S: Fn(EntityId, RelationId, EntityId) -> f64 + Sync + ?Sized,
{
    if test.is_empty() {
        return Err(Error::Argument("test set is empty".into()));
    }
    let ranks = test
        .par_iter()
        .map(|t| rank_triple(scorer, t, entity_count, known, mode))
        .collect::<Result<Vec<_>>>()?;
    RankingReport::from_ranks(mode, ranks)
}
