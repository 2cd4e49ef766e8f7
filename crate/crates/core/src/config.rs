//! `key = value` pipeline configuration. Lines starting with `#` and text
//! after a `#` are comments. Unknown or repeated keys are errors. Relative
//! paths resolve against the directory of the config file.

use std::collections::HashSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::aggregator::{AggregatorConfig, AggregatorDims, FeatureMask};
use crate::decoder::DecoderConfig;
use crate::evaluator::RankMode;
use crate::rules::MiningConfig;
use crate::transe::{Norm, PretrainConfig};
use crate::{Error, Result};

/// Which energy ranks candidates during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scorer {
    #[default]
    Decoder,
    Aggregator,
    Transe,
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoder" => Ok(Scorer::Decoder),
            "aggregator" => Ok(Scorer::Aggregator),
            "transe" => Ok(Scorer::Transe),
            other => Err(Error::Argument(format!(
                "unknown scorer '{other}' (expected decoder, aggregator or transe)"
            ))),
        }
    }
}

impl std::fmt::Display for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scorer::Decoder => "decoder",
            Scorer::Aggregator => "aggregator",
            Scorer::Transe => "transe",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Directory holding `train.txt`, `valid.txt` and `test.txt`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub inverse: bool,
    pub mining: MiningConfig,
    pub pretrain: PretrainConfig,
    pub aggregator: AggregatorConfig,
    pub decoder: DecoderConfig,
    pub eval_mode: RankMode,
    pub scorer: Scorer,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::fb15k237()
    }
}

impl PipelineConfig {
    pub fn fb15k237() -> Self {
        Self {
            data_dir: PathBuf::from("data/FB15k-237"),
            out_dir: PathBuf::from("runs/fb15k237"),
            seed: 1,
            inverse: true,
            mining: MiningConfig::default(),
            pretrain: PretrainConfig::default(),
            aggregator: AggregatorConfig::default(),
            decoder: DecoderConfig::default(),
            eval_mode: RankMode::Filtered,
            scorer: Scorer::Decoder,
        }
    }

    pub fn wn18rr() -> Self {
        let mut c = Self::fb15k237();
        c.data_dir = PathBuf::from("data/WN18RR");
        c.out_dir = PathBuf::from("runs/wn18rr");
        c.mining.hc_min = 0.0;
        c.mining.conf_min = 0.2;
        c.pretrain.dim = 50;
        c.aggregator.dims.d = 50;
        c.aggregator.epochs = 3600;
        c.decoder.epochs = 200;
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data_dir, &mut config.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// Parses config text over the FB15k-237 defaults. A leading
    /// `preset = wn18rr` line switches the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: n + 1, message };
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(format!("expected 'key = value', found '{line}'")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_owned()) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            if key == "preset" {
                if seen.len() > 1 {
                    return Err(err("'preset' must come before every other key".into()));
                }
                config = match value {
                    "fb15k237" => Self::fb15k237(),
                    "wn18rr" => Self::wn18rr(),
                    other => return Err(err(format!("unknown preset '{other}'"))),
                };
                continue;
            }
            config.set(key, value).map_err(err)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: Display,
        {
            value.parse().map_err(|e| format!("bad value '{value}' for '{key}': {e}"))
        }
        let a = &mut self.aggregator;
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => {
                self.seed = parse(key, value)?;
                self.pretrain.seed = self.seed;
                self.aggregator.seed = self.seed;
                self.decoder.seed = self.seed;
            }
            "inverse" => self.inverse = parse(key, value)?,
            "l_max" => self.mining.l_max = parse(key, value)?,
            "hc_min" => self.mining.hc_min = parse(key, value)?,
            "conf_min" => self.mining.conf_min = parse(key, value)?,
            "d" => {
                self.pretrain.dim = parse(key, value)?;
                a.dims.d = self.pretrain.dim;
            }
            "norm" => {
                let norm: Norm = parse(key, value)?;
                self.pretrain.norm = norm;
                a.norm = norm;
            }
            "pretrain_lr" => self.pretrain.lr = parse(key, value)?,
            "pretrain_margin" => self.pretrain.margin = parse(key, value)?,
            "pretrain_epochs" => self.pretrain.epochs = parse(key, value)?,
            "pretrain_batch" => self.pretrain.batch_size = parse(key, value)?,
            "pretrain_negatives" => self.pretrain.negatives = parse(key, value)?,
            "pretrain_patience" => self.pretrain.patience = parse(key, value)?,
            "pretrain_validate_every" => self.pretrain.validate_every = parse(key, value)?,
            "pretrain_valid_sample" => self.pretrain.valid_sample = parse(key, value)?,
            "d1" => a.dims.d1 = parse(key, value)?,
            "d2" => a.dims.d2 = parse(key, value)?,
            "k_m" => a.dims.k_m = parse(key, value)?,
            "k_s" => a.dims.k_s = parse(key, value)?,
            "d_q1" | "d_k1" => a.dims.d_qk[0] = parse(key, value)?,
            "d_q2" | "d_k2" => a.dims.d_qk[1] = parse(key, value)?,
            "d_v1" => a.dims.d_v[0] = parse(key, value)?,
            "d_v2" => a.dims.d_v[1] = parse(key, value)?,
            "agg_lr" => a.lr = parse(key, value)?,
            "margin" => a.margin = parse(key, value)?,
            "agg_dropout" => a.dropout = parse(key, value)?,
            "agg_epochs" => a.epochs = parse(key, value)?,
            "agg_batch" => a.batch_size = parse(key, value)?,
            "agg_negatives" => a.negatives = parse(key, value)?,
            "neighbor_cap" => a.neighbor_cap = parse(key, value)?,
            "freeze_base" => a.freeze_base = parse(key, value)?,
            "use_transformed" => a.use_transformed = parse(key, value)?,
            "use_hc" => a.mask.use_hc = parse(key, value)?,
            "use_conf" => a.mask.use_conf = parse(key, value)?,
            "use_lnorm" => a.mask.use_lnorm = parse(key, value)?,
            "use_s" => a.mask.use_s = parse(key, value)?,
            "ablation" => a.mask = FeatureMask::ablation(value).map_err(|e| e.to_string())?,
            "kernels" => self.decoder.kernels = parse(key, value)?,
            "dec_lr" => self.decoder.lr = parse(key, value)?,
            "dec_lambda" => self.decoder.lambda = parse(key, value)?,
            "dec_dropout" => self.decoder.dropout = parse(key, value)?,
            "dec_epochs" => self.decoder.epochs = parse(key, value)?,
            "dec_batch" => self.decoder.batch_size = parse(key, value)?,
            "dec_negatives" => self.decoder.negatives = parse(key, value)?,
            "eval_mode" => self.eval_mode = parse(key, value)?,
            "scorer" => self.scorer = parse(key, value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.mining.validate()?;
        self.pretrain.validate()?;
        self.aggregator.dims.validate()?;
        if self.pretrain.dim != self.aggregator.dims.d {
            return Err(Error::Argument("pretraining and aggregator dimensions disagree".into()));
        }
        for (name, p) in [("agg_dropout", self.aggregator.dropout), ("dec_dropout", self.decoder.dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Argument(format!("{name} = {p} not in [0, 1)")));
            }
        }
        if self.decoder.kernels == 0 {
            return Err(Error::Argument("kernels must be at least 1".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, in a stable order; parsing the
    /// rendered text reproduces the config.
    pub fn render(&self) -> String {
        let a = &self.aggregator;
        let (p, d, m) = (&self.pretrain, &self.decoder, &a.mask);
        let entries: Vec<(&str, String)> = vec![
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            ("inverse", self.inverse.to_string()),
            ("l_max", self.mining.l_max.to_string()),
            ("hc_min", self.mining.hc_min.to_string()),
            ("conf_min", self.mining.conf_min.to_string()),
            ("d", p.dim.to_string()),
            ("norm", p.norm.to_string()),
            ("pretrain_lr", p.lr.to_string()),
            ("pretrain_margin", p.margin.to_string()),
            ("pretrain_epochs", p.epochs.to_string()),
            ("pretrain_batch", p.batch_size.to_string()),
            ("pretrain_negatives", p.negatives.to_string()),
            ("pretrain_patience", p.patience.to_string()),
            ("pretrain_validate_every", p.validate_every.to_string()),
            ("pretrain_valid_sample", p.valid_sample.to_string()),
            ("d1", a.dims.d1.to_string()),
            ("d2", a.dims.d2.to_string()),
            ("k_m", a.dims.k_m.to_string()),
            ("k_s", a.dims.k_s.to_string()),
            ("d_q1", a.dims.d_qk[0].to_string()),
            ("d_q2", a.dims.d_qk[1].to_string()),
            ("d_v1", a.dims.d_v[0].to_string()),
            ("d_v2", a.dims.d_v[1].to_string()),
            ("agg_lr", a.lr.to_string()),
            ("margin", a.margin.to_string()),
            ("agg_dropout", a.dropout.to_string()),
            ("agg_epochs", a.epochs.to_string()),
            ("agg_batch", a.batch_size.to_string()),
            ("agg_negatives", a.negatives.to_string()),
            ("neighbor_cap", a.neighbor_cap.to_string()),
            ("freeze_base", a.freeze_base.to_string()),
            ("use_transformed", a.use_transformed.to_string()),
            ("use_hc", m.use_hc.to_string()),
            ("use_conf", m.use_conf.to_string()),
            ("use_lnorm", m.use_lnorm.to_string()),
            ("use_s", m.use_s.to_string()),
            ("kernels", d.kernels.to_string()),
            ("dec_lr", d.lr.to_string()),
            ("dec_lambda", d.lambda.to_string()),
            ("dec_dropout", d.dropout.to_string()),
            ("dec_epochs", d.epochs.to_string()),
            ("dec_batch", d.batch_size.to_string()),
            ("dec_negatives", d.negatives.to_string()),
            ("eval_mode", self.eval_mode.to_string()),
            ("scorer", self.scorer.to_string()),
        ];
        entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn dims(&self) -> AggregatorDims {
        self.aggregator.dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_settings() {
        let c = PipelineConfig::fb15k237();
        assert_eq!((c.mining.l_max, c.mining.hc_min, c.mining.conf_min, c.pretrain.dim), (3, 0.7, 0.7, 100));
        let a = &c.aggregator;
        assert_eq!((a.lr, a.dims.k_m, a.dims.k_s, a.dims.d1, a.dims.d2), (0.001, 2, 4, 100, 200));
        assert_eq!((a.dims.d_qk, a.dims.d_v, a.margin, a.dropout, a.epochs), ([25, 50], [25, 50], 1.0, 0.3, 2000));
        assert_eq!((c.decoder.lambda, c.decoder.dropout, c.decoder.epochs), (0.001, 0.3, 150));
        let w = PipelineConfig::wn18rr();
        assert_eq!((w.mining.hc_min, w.mining.conf_min, w.pretrain.dim), (0.0, 0.2, 50));
        assert_eq!((w.aggregator.epochs, w.decoder.epochs), (3600, 200));
    }

    #[test]
    fn parse_overrides_and_comments() {
        let c = PipelineConfig::parse("# comment\npreset = wn18rr\n\nd1 = 64 # trailing\nscorer = aggregator\n").unwrap();
        assert_eq!(c.aggregator.dims.d1, 64);
        assert_eq!(c.pretrain.dim, 50);
        assert_eq!(c.scorer, Scorer::Aggregator);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = PipelineConfig::parse("d = 10\n\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
        let e = PipelineConfig::parse("d = ten\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }), "{e}");
        let e = PipelineConfig::parse("d = 10\nd = 20\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e}");
        let e = PipelineConfig::parse("just words\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }), "{e}");
        let e = PipelineConfig::parse("d = 10\npreset = wn18rr\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e}");
    }

    #[test]
    fn render_round_trips() {
        let mut c = PipelineConfig::wn18rr();
        c.aggregator.mask = FeatureMask::ablation("nl").unwrap();
        c.scorer = Scorer::Transe;
        assert_eq!(PipelineConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn shipped_configs_match_presets() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for (file, preset) in [("fb15k237.cfg", PipelineConfig::fb15k237()), ("wn18rr.cfg", PipelineConfig::wn18rr())] {
            let text = fs::read_to_string(dir.join(file)).unwrap();
            let parsed = PipelineConfig::parse(&text).unwrap();
            assert_eq!(parsed.aggregator, preset.aggregator, "{file}");
            assert_eq!(parsed.mining, preset.mining, "{file}");
            assert_eq!(parsed.decoder, preset.decoder, "{file}");
            assert_eq!(parsed.pretrain, preset.pretrain, "{file}");
        }
    }
}
