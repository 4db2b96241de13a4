//! Flat key=value run configuration: one `key = value` pair per line,
//! `#` comments, unknown keys rejected. Environment variables prefixed
//! `TGCN_` override file values (`TGCN_LR=0.01` overrides `lr`). The
//! serialized form round-trips exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tgcn_core::{
    Activation, CoreLayout, DecoderKind, EncoderKind, Error, LossKind, ModelConfig, Result,
    TrainConfig, WeightScheme,
};

/// Every tunable of a run, bound to a flat text document.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Dataset.
    pub data_dir: String,
    pub train_path: String,
    pub valid_path: String,
    pub test_path: String,
    /// Dataset statistics for auditing without the files present (0 = unset).
    pub n_entities: usize,
    pub n_relations: usize,
    /// Reciprocal augmentation of relations; training requires it.
    pub reciprocal: bool,
    // Model.
    pub encoder: EncoderKind,
    pub layout: CoreLayout,
    pub scheme: WeightScheme,
    pub decoder: DecoderKind,
    pub d: usize,
    pub layers: usize,
    pub n_b: usize,
    pub n_blocks: usize,
    pub activation_hidden: Activation,
    pub activation_output: Activation,
    // Training.
    pub loss: LossKind,
    pub tau: f64,
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub reg_f: f64,
    pub g_s: usize,
    pub dr_i: f64,
    pub dr_h1: f64,
    pub dr_h2: f64,
    pub dr_o: f64,
    pub dr_d: f64,
    pub max_iterations: u64,
    pub eval_period: u64,
    pub patience: u64,
    pub seed: u64,
    pub sub_batch: usize,
    // Output.
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: String::new(),
            train_path: String::new(),
            valid_path: String::new(),
            test_path: String::new(),
            n_entities: 0,
            n_relations: 0,
            reciprocal: true,
            encoder: EncoderKind::Tgcn,
            layout: CoreLayout::Dense,
            scheme: WeightScheme::Full,
            decoder: DecoderKind::Tucker,
            d: 100,
            layers: 2,
            n_b: 100,
            n_blocks: 100,
            activation_hidden: Activation::Relu,
            activation_output: Activation::Identity,
            loss: LossKind::OneN,
            tau: 1.0,
            lr: 0.005,
            decay_factor: 0.95,
            decay_every: 500,
            reg_f: 0.01,
            g_s: 90_000,
            dr_i: 0.0,
            dr_h1: 0.0,
            dr_h2: 0.0,
            dr_o: 0.0,
            dr_d: 0.0,
            max_iterations: 50_000,
            eval_period: 500,
            patience: 20,
            seed: 0,
            sub_batch: 0,
            out_dir: "runs/default".to_string(),
        }
    }
}

/// Keys in canonical serialization order.
pub const KEYS: &[&str] = &[
    "data_dir",
    "train_path",
    "valid_path",
    "test_path",
    "n_entities",
    "n_relations",
    "reciprocal",
    "encoder",
    "layout",
    "scheme",
    "decoder",
    "d",
    "layers",
    "n_b",
    "n_blocks",
    "activation_hidden",
    "activation_output",
    "loss",
    "tau",
    "lr",
    "decay_factor",
    "decay_every",
    "reg_f",
    "g_s",
    "dr_i",
    "dr_h1",
    "dr_h2",
    "dr_o",
    "dr_d",
    "max_iterations",
    "eval_period",
    "patience",
    "seed",
    "sub_batch",
    "out_dir",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("{key}={value}: {e}")))
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "data_dir" => self.data_dir.clone(),
            "train_path" => self.train_path.clone(),
            "valid_path" => self.valid_path.clone(),
            "test_path" => self.test_path.clone(),
            "n_entities" => self.n_entities.to_string(),
            "n_relations" => self.n_relations.to_string(),
            "reciprocal" => self.reciprocal.to_string(),
            "encoder" => match self.encoder {
                EncoderKind::Tgcn => "tgcn".into(),
                EncoderKind::Rgcn => "rgcn".into(),
            },
            "layout" => match self.layout {
                CoreLayout::Dense => "dense".into(),
                CoreLayout::Cp => "cp".into(),
            },
            "scheme" => match self.scheme {
                WeightScheme::Full => "full".into(),
                WeightScheme::Basis => "basis".into(),
                WeightScheme::Block => "block".into(),
                WeightScheme::Cp => "cp".into(),
            },
            "decoder" => match self.decoder {
                DecoderKind::DistMult => "distmult".into(),
                DecoderKind::Tucker => "tucker".into(),
            },
            "d" => self.d.to_string(),
            "layers" => self.layers.to_string(),
            "n_b" => self.n_b.to_string(),
            "n_blocks" => self.n_blocks.to_string(),
            "activation_hidden" => self.activation_hidden.as_str().into(),
            "activation_output" => self.activation_output.as_str().into(),
            "loss" => self.loss.as_str().into(),
            "tau" => self.tau.to_string(),
            "lr" => self.lr.to_string(),
            "decay_factor" => self.decay_factor.to_string(),
            "decay_every" => self.decay_every.to_string(),
            "reg_f" => self.reg_f.to_string(),
            "g_s" => self.g_s.to_string(),
            "dr_i" => self.dr_i.to_string(),
            "dr_h1" => self.dr_h1.to_string(),
            "dr_h2" => self.dr_h2.to_string(),
            "dr_o" => self.dr_o.to_string(),
            "dr_d" => self.dr_d.to_string(),
            "max_iterations" => self.max_iterations.to_string(),
            "eval_period" => self.eval_period.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "sub_batch" => self.sub_batch.to_string(),
            "out_dir" => self.out_dir.clone(),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data_dir" => self.data_dir = value.to_string(),
            "train_path" => self.train_path = value.to_string(),
            "valid_path" => self.valid_path = value.to_string(),
            "test_path" => self.test_path = value.to_string(),
            "n_entities" => self.n_entities = parse_num(key, value)?,
            "n_relations" => self.n_relations = parse_num(key, value)?,
            "reciprocal" => self.reciprocal = parse_num(key, value)?,
            "encoder" => {
                self.encoder = match value {
                    "tgcn" => EncoderKind::Tgcn,
                    "rgcn" => EncoderKind::Rgcn,
                    other => {
                        return Err(Error::Config(format!(
                            "encoder={other} (expected tgcn or rgcn)"
                        )))
                    }
                }
            }
            "layout" => {
                self.layout = match value {
                    "dense" => CoreLayout::Dense,
                    "cp" => CoreLayout::Cp,
                    other => {
                        return Err(Error::Config(format!(
                            "layout={other} (expected dense or cp)"
                        )))
                    }
                }
            }
            "scheme" => {
                self.scheme = match value {
                    "full" => WeightScheme::Full,
                    "basis" => WeightScheme::Basis,
                    "block" => WeightScheme::Block,
                    "cp" => WeightScheme::Cp,
                    other => {
                        return Err(Error::Config(format!(
                            "scheme={other} (expected full, basis, block or cp)"
                        )))
                    }
                }
            }
            "decoder" => {
                self.decoder = match value {
                    "distmult" => DecoderKind::DistMult,
                    "tucker" => DecoderKind::Tucker,
                    other => {
                        return Err(Error::Config(format!(
                            "decoder={other} (expected distmult or tucker)"
                        )))
                    }
                }
            }
            "d" => self.d = parse_num(key, value)?,
            "layers" => self.layers = parse_num(key, value)?,
            "n_b" => self.n_b = parse_num(key, value)?,
            "n_blocks" => self.n_blocks = parse_num(key, value)?,
            "activation_hidden" => self.activation_hidden = value.parse()?,
            "activation_output" => self.activation_output = value.parse()?,
            "loss" => self.loss = value.parse()?,
            "tau" => self.tau = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "decay_factor" => self.decay_factor = parse_num(key, value)?,
            "decay_every" => self.decay_every = parse_num(key, value)?,
            "reg_f" => self.reg_f = parse_num(key, value)?,
            "g_s" => self.g_s = parse_num(key, value)?,
            "dr_i" => self.dr_i = parse_num(key, value)?,
            "dr_h1" => self.dr_h1 = parse_num(key, value)?,
            "dr_h2" => self.dr_h2 = parse_num(key, value)?,
            "dr_o" => self.dr_o = parse_num(key, value)?,
            "dr_d" => self.dr_d = parse_num(key, value)?,
            "max_iterations" => self.max_iterations = parse_num(key, value)?,
            "eval_period" => self.eval_period = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "sub_batch" => self.sub_batch = parse_num(key, value)?,
            "out_dir" => self.out_dir = value.to_string(),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a key=value document on top of the defaults, then applies
    /// `TGCN_*` environment overrides.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got '{raw}'",
                    i + 1
                )));
            };
            cfg.set(key.trim(), value)?;
        }
        cfg.apply_env_overrides()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        RunConfig::parse(&text)
    }

    fn apply_env_overrides(&mut self) -> Result<()> {
        for key in KEYS {
            let var = format!("TGCN_{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&var) {
                self.set(key, &value)?;
            }
        }
        Ok(())
    }

    /// Canonical serialization; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.get(k).unwrap()))
            .collect()
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Split file paths: explicit paths win over `data_dir` conventions.
    pub fn split_paths(&self) -> Result<(PathBuf, PathBuf, PathBuf)> {
        let from_dir = |name: &str, explicit: &str| -> Result<PathBuf> {
            if !explicit.is_empty() {
                return Ok(PathBuf::from(explicit));
            }
            if self.data_dir.is_empty() {
                return Err(Error::Config(format!(
                    "neither {name}_path nor data_dir is set"
                )));
            }
            Ok(Path::new(&self.data_dir).join(format!("{name}.txt")))
        };
        Ok((
            from_dir("train", &self.train_path)?,
            from_dir("valid", &self.valid_path)?,
            from_dir("test", &self.test_path)?,
        ))
    }

    /// Model structure for the given vocabulary sizes (relations already
    /// augmented).
    pub fn model_config(&self, n_entities: usize, n_relations_aug: usize) -> ModelConfig {
        ModelConfig {
            n_entities,
            n_relations: n_relations_aug,
            d: self.d,
            n_layers: self.layers,
            encoder: self.encoder,
            layout: self.layout,
            scheme: self.scheme,
            n_b: self.n_b,
            n_blocks: self.n_blocks,
            decoder: self.decoder,
            decoder_dropout: self.dr_d,
            hidden_activation: self.activation_hidden,
            output_activation: self.activation_output,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            tau: self.tau,
            lr: self.lr,
            decay_factor: self.decay_factor,
            decay_every: self.decay_every,
            reg_f: self.reg_f,
            g_s: self.g_s,
            dr_i: self.dr_i,
            dr_h1: self.dr_h1,
            dr_h2: self.dr_h2,
            dr_o: self.dr_o,
            dr_d: self.dr_d,
            max_iterations: self.max_iterations,
            eval_period: self.eval_period,
            patience: self.patience,
            seed: self.seed,
            sub_batch: self.sub_batch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let text = "lr = 0.001\n# comment\nloss = 1-b\ntau = 0.5\nencoder = rgcn\nscheme = basis\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.loss, LossKind::OneB);
        assert_eq!(cfg.encoder, EncoderKind::Rgcn);
        assert_eq!(cfg.scheme, WeightScheme::Basis);
        let re = RunConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(cfg, re);
        let re2 = RunConfig::parse(&re.serialize()).unwrap();
        assert_eq!(re, re2);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse("no_such_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
    }

    #[test]
    fn malformed_line_rejected() {
        assert!(RunConfig::parse("just a line\n").is_err());
    }

    #[test]
    fn env_override_applies() {
        std::env::set_var("TGCN_G_S", "123");
        let cfg = RunConfig::parse("g_s = 7\n").unwrap();
        std::env::remove_var("TGCN_G_S");
        assert_eq!(cfg.g_s, 123);
    }

    #[test]
    fn split_paths_conventions() {
        let mut cfg = RunConfig::default();
        assert!(cfg.split_paths().is_err());
        cfg.data_dir = "data/x".into();
        let (t, v, s) = cfg.split_paths().unwrap();
        assert_eq!(t, PathBuf::from("data/x/train.txt"));
        assert_eq!(v, PathBuf::from("data/x/valid.txt"));
        assert_eq!(s, PathBuf::from("data/x/test.txt"));
        cfg.valid_path = "elsewhere/dev.tsv".into();
        let (_, v, _) = cfg.split_paths().unwrap();
        assert_eq!(v, PathBuf::from("elsewhere/dev.tsv"));
    }
}
