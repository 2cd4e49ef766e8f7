//! Stage runners. Each stage reads only the artifacts of earlier stages from
//! the output directory and writes its own, so any stage can be rerun alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;

use crate::aggregator::{encode_all, train_aggregator};
use crate::checkpoint::{self, Checkpoint};
use crate::config::{PipelineConfig, Scorer};
use crate::decoder::{train_decoder, DecoderParams};
use crate::evaluator::{evaluate, RankMode, RankingReport};
use crate::kg::{Dataset, KnowledgeGraph, NeighborSets};
use crate::rules::{filter_rules, match_rules, mine_path_rules, read_neighbors, read_rules, write_neighbors, write_rules};
use crate::transe::pretrain;
use crate::{Error, Result};

/// Production precision of every learned stage.
pub type Scalar = f32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Mine,
    Filter,
    Match,
    TrainAgg,
    TrainDec,
    Eval,
}

impl Stage {
    /// Stage order of a full run.
    pub const ALL: [Stage; 7] = [
        Stage::Pretrain,
        Stage::Mine,
        Stage::Filter,
        Stage::Match,
        Stage::TrainAgg,
        Stage::TrainDec,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Mine => "mine",
            Stage::Filter => "filter",
            Stage::Match => "match",
            Stage::TrainAgg => "train-agg",
            Stage::TrainDec => "train-dec",
            Stage::Eval => "eval",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown stage '{s}'")))
    }
}

/// Artifact locations under the output directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn transe(&self) -> PathBuf {
        self.dir.join("transe.ckpt")
    }

    pub fn rules(&self) -> PathBuf {
        self.dir.join("rules.tsv")
    }

    pub fn filtered_rules(&self) -> PathBuf {
        self.dir.join("rules.filtered.tsv")
    }

    pub fn neighbors(&self) -> PathBuf {
        self.dir.join("neighbors.tsv")
    }

    pub fn aggregator(&self) -> PathBuf {
        self.dir.join("aggregator.ckpt")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.dir.join("embeddings.ckpt")
    }

    pub fn decoder(&self) -> PathBuf {
        self.dir.join("decoder.ckpt")
    }

    pub fn report(&self, mode: RankMode) -> PathBuf {
        self.dir.join(format!("report.{mode}.tsv"))
    }

    fn require(&self, path: PathBuf, producer: Stage) -> Result<PathBuf> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::Dependency {
                path,
                producer: producer.name(),
            })
        }
    }
}

/// Loaded splits plus the graph every stage trains on.
pub struct Context {
    pub config: PipelineConfig,
    pub dataset: Dataset,
    pub graph: KnowledgeGraph,
    pub artifacts: Artifacts,
}

impl Context {
    pub fn load(config: PipelineConfig) -> Result<Self> {
        let dataset = Dataset::load_dir(&config.data_dir)?;
        info!(
            "dataset {}: {} entities, {} relations, {}/{}/{} train/valid/test",
            config.data_dir.display(),
            dataset.entity_count(),
            dataset.relation_count(),
            dataset.train.len(),
            dataset.valid.len(),
            dataset.test.len()
        );
        let graph = if config.inverse {
            dataset.train.add_inverse_relations()?
        } else {
            dataset.train.clone()
        };
        let artifacts = Artifacts::new(&config.out_dir);
        fs::create_dir_all(&artifacts.dir).map_err(|e| Error::io(&artifacts.dir, e))?;
        Ok(Self {
            config,
            dataset,
            graph,
            artifacts,
        })
    }

    fn load_ckpt(&self, path: PathBuf, producer: Stage, kind: &str) -> Result<Checkpoint<Scalar>> {
        let path = self.artifacts.require(path, producer)?;
        Checkpoint::load(&path, kind, &self.dataset.vocab)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        info!("stage {}", stage.name());
        match stage {
            Stage::Pretrain => self.pretrain(),
            Stage::Mine => self.mine(),
            Stage::Filter => self.filter(),
            Stage::Match => self.match_rules(),
            Stage::TrainAgg => self.train_aggregator(),
            Stage::TrainDec => self.train_decoder(),
            Stage::Eval => self.evaluate(self.config.eval_mode, self.config.scorer).map(|_| ()),
        }
    }

    pub fn run_all(&self) -> Result<RankingReport> {
        for stage in &Stage::ALL[..Stage::ALL.len() - 1] {
            self.run(*stage)?;
        }
        info!("stage eval");
        self.evaluate(self.config.eval_mode, self.config.scorer)
    }

    fn pretrain(&self) -> Result<()> {
        let table = pretrain::<Scalar>(&self.graph, Some(&self.dataset.valid), &self.config.pretrain)?;
        checkpoint::transe_checkpoint(&table, self.config.pretrain.norm, &self.dataset.vocab).save(&self.artifacts.transe())
    }

    fn mine(&self) -> Result<()> {
        let rules = mine_path_rules(&self.graph, &self.config.mining);
        info!("mined {} rules", rules.len());
        write_rules(&self.artifacts.rules(), &rules, &self.dataset.vocab)
    }

    fn filter(&self) -> Result<()> {
        let path = self.artifacts.require(self.artifacts.rules(), Stage::Mine)?;
        let rules = read_rules(&path, &self.dataset.vocab)?;
        let kept = filter_rules(&rules, self.config.mining.hc_min, self.config.mining.conf_min);
        info!("kept {} of {} rules", kept.len(), rules.len());
        write_rules(&self.artifacts.filtered_rules(), &kept, &self.dataset.vocab)
    }

    fn match_rules(&self) -> Result<()> {
        let path = self.artifacts.require(self.artifacts.filtered_rules(), Stage::Filter)?;
        let rules = read_rules(&path, &self.dataset.vocab)?;
        let ckpt = self.load_ckpt(self.artifacts.transe(), Stage::Pretrain, checkpoint::KIND_TRANSE)?;
        let (table, norm) = checkpoint::transe_from_checkpoint(&ckpt)?;
        let neighbors = match_rules(&self.graph, &rules, &table, self.config.mining.l_max, norm)?;
        info!("matched {} transformed neighbors", neighbors.iter().map(Vec::len).sum::<usize>());
        write_neighbors(&self.artifacts.neighbors(), &neighbors, &self.dataset.vocab)
    }

    fn neighbor_sets(&self) -> Result<NeighborSets> {
        let path = self.artifacts.require(self.artifacts.neighbors(), Stage::Match)?;
        let sets = NeighborSets::with_transformed(&self.graph, read_neighbors(&path, &self.dataset.vocab)?)?;
        Ok(if self.config.aggregator.use_transformed {
            sets
        } else {
            sets.without_transformed()
        })
    }

    fn train_aggregator(&self) -> Result<()> {
        let ckpt = self.load_ckpt(self.artifacts.transe(), Stage::Pretrain, checkpoint::KIND_TRANSE)?;
        let (base, _) = checkpoint::transe_from_checkpoint(&ckpt)?;
        let sets = self.neighbor_sets()?;
        let trained = train_aggregator(&self.graph, &sets, &base, &self.config.aggregator)?;
        let vocab = &self.dataset.vocab;
        checkpoint::aggregator_checkpoint(&trained.params, &trained.base, self.config.aggregator.norm, vocab)
            .save(&self.artifacts.aggregator())?;
        let nei = encode_all(&sets, &trained.base, &trained.params)?;
        checkpoint::embeddings_checkpoint(&nei, vocab).save(&self.artifacts.embeddings())
    }

    fn train_decoder(&self) -> Result<()> {
        let ckpt = self.load_ckpt(self.artifacts.embeddings(), Stage::TrainAgg, checkpoint::KIND_EMBEDDINGS)?;
        let nei = checkpoint::embeddings_from_checkpoint(&ckpt)?;
        let dec = &self.config.decoder;
        let init = DecoderParams::from_embeddings(&nei, dec.kernels, dec.seed)?;
        let trained = train_decoder(&self.graph, init, dec)?;
        checkpoint::decoder_checkpoint(&trained.params, &self.dataset.vocab).save(&self.artifacts.decoder())
    }

    /// Ranks the test split, writes `report.<mode>.tsv` and returns the report.
    pub fn evaluate(&self, mode: RankMode, scorer: Scorer) -> Result<RankingReport> {
        let known = self.dataset.known_triples();
        let test = self.dataset.test.triples();
        let n = self.dataset.entity_count();
        let report = match scorer {
            Scorer::Decoder => {
                let ckpt = self.load_ckpt(self.artifacts.decoder(), Stage::TrainDec, checkpoint::KIND_DECODER)?;
                let params = checkpoint::decoder_from_checkpoint(&ckpt)?;
                evaluate(&|h, r, t| params.energy(h, r, t) as f64, test, n, Some(&known), mode)?
            }
            Scorer::Aggregator => {
                let ckpt = self.load_ckpt(self.artifacts.embeddings(), Stage::TrainAgg, checkpoint::KIND_EMBEDDINGS)?;
                let nei = checkpoint::embeddings_from_checkpoint(&ckpt)?;
                let norm = self.config.aggregator.norm;
                evaluate(&|h, r, t| nei.energy(h, r, t, norm) as f64, test, n, Some(&known), mode)?
            }
            Scorer::Transe => {
                let ckpt = self.load_ckpt(self.artifacts.transe(), Stage::Pretrain, checkpoint::KIND_TRANSE)?;
                let (table, norm) = checkpoint::transe_from_checkpoint(&ckpt)?;
                evaluate(&|h, r, t| table.energy(h, r, t, norm) as f64, test, n, Some(&known), mode)?
            }
        };
        let path = self.artifacts.report(mode);
        fs::write(&path, report.to_tsv()).map_err(|e| Error::io(&path, e))?;
        info!("{scorer} {mode}: MRR {:.4}, report at {}", report.mrr, path.display());
        Ok(report)
    }
}

/// Loads the config at `path` (or the default preset) and applies overrides.
pub fn resolve_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<PipelineConfig> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for (k, v) in overrides {
        config
            .set(k, v)
            .map_err(|message| Error::Argument(format!("--set {k}={v}: {message}")))?;
    }
    config.validate()?;
    Ok(config)
}
