//! Flat `section.key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are errors.
//! Relative paths resolve against the directory of the config file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::synthetic::SyntheticSpec;
use crate::error::{Error, Result};
use crate::evaluation::EvalOptions;
use crate::network::NetworkConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub name: String,
    pub interactions: Option<PathBuf>,
    pub aux: Vec<PathBuf>,
    pub min_user_len: usize,
    pub head_fraction: f64,
}

/// Training hyperparameters without seeds; seeds come from the run seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub lambda: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub cross_pseudo: bool,
}

impl TrainSettings {
    pub fn for_seed(&self, root: u64) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            cross_pseudo: self.cross_pseudo,
            ..TrainConfig::from_root_seed(root)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub cutoffs: Vec<usize>,
    pub window: usize,
    pub exclude_consumed: bool,
    /// Average both networks' scores instead of using network 1.
    pub ensemble: bool,
    /// Degrees of freedom for paired t-tests; `None` means pairs - 1.
    pub dof: Option<f64>,
}

impl EvalSettings {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            cutoffs: self.cutoffs.clone(),
            exclude_consumed: self.exclude_consumed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub net: NetworkConfig,
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub synth: SyntheticSpec,
    /// Whether `net.k` / `net.ffn_dim` were set explicitly (otherwise they follow `net.d`).
    k_set: bool,
    ffn_set: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            data: DataConfig {
                name: "dataset".into(),
                interactions: None,
                aux: Vec::new(),
                min_user_len: 5,
                head_fraction: 0.2,
            },
            net: NetworkConfig::default(),
            train: TrainSettings {
                lambda: train.lambda,
                learning_rate: train.learning_rate,
                weight_decay: train.weight_decay,
                grad_clip: train.grad_clip,
                max_epochs: train.max_epochs,
                patience: train.patience,
                batch_size: train.batch_size,
                cross_pseudo: train.cross_pseudo,
            },
            eval: EvalSettings {
                cutoffs: vec![10],
                window: 50,
                exclude_consumed: false,
                ensemble: false,
                dof: None,
            },
            seeds: vec![0],
            out: None,
            synth: SyntheticSpec::default(),
            k_set: false,
            ffn_set: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim(), base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides (paths resolve against the working directory).
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(key.trim(), value.trim(), Path::new("."))?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = |v: &str| base.join(v);
        match key {
            "data.name" => self.data.name = value.to_string(),
            "data.interactions" => self.data.interactions = (!value.is_empty()).then(|| path(value)),
            "data.aux" => self.data.aux = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(path).collect(),
            "data.max_len" => self.net.n = parse(key, value)?,
            "data.min_user_len" => self.data.min_user_len = parse(key, value)?,
            "data.head_fraction" => self.data.head_fraction = parse(key, value)?,
            "net.d" => {
                self.net.d = parse(key, value)?;
                if !self.k_set {
                    self.net.k = self.net.d;
                }
                if !self.ffn_set {
                    self.net.ffn_dim = 4 * self.net.d;
                }
            }
            "net.k" => {
                self.net.k = parse(key, value)?;
                self.k_set = true;
            }
            "net.ffn_dim" => {
                self.net.ffn_dim = parse(key, value)?;
                self.ffn_set = true;
            }
            "net.layers" => self.net.layers = parse(key, value)?,
            "net.heads" => self.net.heads = parse(key, value)?,
            "net.tau" => self.net.tau = parse(key, value)?,
            "net.dropout_hidden" => self.net.dropout_hidden = parse(key, value)?,
            "net.dropout_attn" => self.net.dropout_attn = parse(key, value)?,
            "net.layer_norm_eps" => self.net.layer_norm_eps = parse(key, value)?,
            "net.use_aux" => self.net.use_aux = parse(key, value)?,
            "net.use_coattention" => self.net.use_coattention = parse(key, value)?,
            "net.use_popularity_embedding" => self.net.use_popularity_embedding = parse(key, value)?,
            "net.use_popularity_bias" => self.net.use_popularity_bias = parse(key, value)?,
            "train.lambda" => self.train.lambda = parse(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, value)?,
            "train.grad_clip" => self.train.grad_clip = parse(key, value)?,
            "train.max_epochs" => self.train.max_epochs = parse(key, value)?,
            "train.patience" => self.train.patience = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.cross_pseudo" => self.train.cross_pseudo = parse(key, value)?,
            "eval.cutoffs" => self.eval.cutoffs = parse_list(key, value)?,
            "eval.window" => self.eval.window = parse(key, value)?,
            "eval.exclude_consumed" => self.eval.exclude_consumed = parse(key, value)?,
            "eval.ensemble" => self.eval.ensemble = parse(key, value)?,
            "eval.dof" => {
                self.eval.dof = if value == "auto" { None } else { Some(parse(key, value)?) }
            }
            "run.seeds" => self.seeds = parse_list(key, value)?,
            "run.out" => self.out = (!value.is_empty()).then(|| path(value)),
            "synth.users" => self.synth.users = parse(key, value)?,
            "synth.items" => self.synth.items = parse(key, value)?,
            "synth.zipf" => self.synth.zipf_exponent = parse(key, value)?,
            "synth.drift" => self.synth.drift = parse(key, value)?,
            "synth.p0" => self.synth.p0 = parse(key, value)?,
            "synth.min_len" => self.synth.min_len = parse(key, value)?,
            "synth.max_len" => self.synth.max_len = parse(key, value)?,
            "synth.aux_dim" => self.synth.aux_dim = parse(key, value)?,
            "synth.seed" => self.synth.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            return Err(Error::Config("eval.cutoffs must be a non-empty list of positive integers".into()));
        }
        if self.data.min_user_len < 3 {
            return Err(Error::Config("data.min_user_len must be at least 3".into()));
        }
        if !(self.data.head_fraction > 0.0 && self.data.head_fraction < 1.0) {
            return Err(Error::Config("data.head_fraction must be in (0, 1)".into()));
        }
        self.synth.validate()?;
        self.train.for_seed(0).validate()
    }

    /// Fails if a referenced input file is missing.
    pub fn check_paths(&self) -> Result<()> {
        let interactions = self
            .data
            .interactions
            .as_ref()
            .ok_or_else(|| Error::Config("data.interactions is not set".into()))?;
        for p in std::iter::once(interactions).chain(&self.data.aux) {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Canonical listing of every setting, one `key = value` per line.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let disp = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        kv("data.name", self.data.name.clone());
        kv("data.interactions", disp(&self.data.interactions));
        kv("data.aux", join(&self.data.aux.iter().map(|p| p.display()).collect::<Vec<_>>()));
        kv("data.max_len", self.net.n.to_string());
        kv("data.min_user_len", self.data.min_user_len.to_string());
        kv("data.head_fraction", self.data.head_fraction.to_string());
        let n = &self.net;
        kv("net.d", n.d.to_string());
        kv("net.k", n.k.to_string());
        kv("net.ffn_dim", n.ffn_dim.to_string());
        kv("net.layers", n.layers.to_string());
        kv("net.heads", n.heads.to_string());
        kv("net.tau", n.tau.to_string());
        kv("net.dropout_hidden", n.dropout_hidden.to_string());
        kv("net.dropout_attn", n.dropout_attn.to_string());
        kv("net.layer_norm_eps", n.layer_norm_eps.to_string());
        kv("net.use_aux", n.use_aux.to_string());
        kv("net.use_coattention", n.use_coattention.to_string());
        kv("net.use_popularity_embedding", n.use_popularity_embedding.to_string());
        kv("net.use_popularity_bias", n.use_popularity_bias.to_string());
        let t = &self.train;
        kv("train.lambda", t.lambda.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.weight_decay", t.weight_decay.to_string());
        kv("train.grad_clip", t.grad_clip.to_string());
        kv("train.max_epochs", t.max_epochs.to_string());
        kv("train.patience", t.patience.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.cross_pseudo", t.cross_pseudo.to_string());
        let e = &self.eval;
        kv("eval.cutoffs", join(&e.cutoffs));
        kv("eval.window", e.window.to_string());
        kv("eval.exclude_consumed", e.exclude_consumed.to_string());
        kv("eval.ensemble", e.ensemble.to_string());
        kv("eval.dof", e.dof.map(|d| d.to_string()).unwrap_or_else(|| "auto".into()));
        kv("run.seeds", join(&self.seeds));
        kv("run.out", disp(&self.out));
        let y = &self.synth;
        kv("synth.users", y.users.to_string());
        kv("synth.items", y.items.to_string());
        kv("synth.zipf", y.zipf_exponent.to_string());
        kv("synth.drift", y.drift.to_string());
        kv("synth.p0", y.p0.to_string());
        kv("synth.min_len", y.min_len.to_string());
        kv("synth.max_len", y.max_len.to_string());
        kv("synth.aux_dim", y.aux_dim.to_string());
        kv("synth.seed", y.seed.to_string());
        s
    }

    /// Hex SHA-256 of the model-relevant settings (data, net, train, eval).
    /// File locations are left out so a moved run directory keeps its hash.
    pub fn hash(&self) -> String {
        let skip = ["run.", "synth.", "data.interactions =", "data.aux ="];
        let echo: String = self
            .echo()
            .lines()
            .filter(|l| !skip.iter().any(|p| l.starts_with(p)))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(echo.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
