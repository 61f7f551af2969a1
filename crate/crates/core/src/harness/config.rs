//! Plain-text experiment configuration.
//!
//! ```text
//! # comment
//! [system]
//! antennas = 3
//! users = 3
//! [run]
//! snr_db = "0,5,10,15,20"
//! ```
//!
//! Every key lives in a section. Unknown sections or keys, malformed values and
//! missing required keys are reported with the offending key and line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::channels::ChannelModel;
use crate::error::{Error, Result};
use crate::memory::{MemoryConfig, RankPool};
use crate::meta::MetaConfig;
use crate::nn::pipeline::{Reduction, VInit};
use crate::objective::{LossVariant, SystemConfig};

/// Evaluation methods, in the order results are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Wmmse,
    Unsupervised,
    Maml,
    MamlNoPretrain,
    Mml,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Wmmse,
        Method::Unsupervised,
        Method::Maml,
        Method::MamlNoPretrain,
        Method::Mml,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "wmmse" => Ok(Method::Wmmse),
            "unsupervised" => Ok(Method::Unsupervised),
            "maml" => Ok(Method::Maml),
            "maml_no_pretrain" => Ok(Method::MamlNoPretrain),
            "mml" => Ok(Method::Mml),
            other => Err(Error::Argument(format!("unknown method `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Wmmse => "wmmse",
            Method::Unsupervised => "unsupervised",
            Method::Maml => "maml",
            Method::MamlNoPretrain => "maml_no_pretrain",
            Method::Mml => "mml",
        }
    }

    /// Whether the method starts from a trained checkpoint.
    pub fn needs_checkpoint(self) -> bool {
        matches!(self, Method::Unsupervised | Method::Maml | Method::Mml)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSection {
    pub antennas: usize,
    pub users: usize,
    pub sigma2: f64,
    /// Per-user weights; empty means all ones.
    pub alpha: Vec<f64>,
    pub loss_variant: LossVariant,
    pub v_init: VInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub mix: Vec<(ChannelModel, f64)>,
    pub dataset_size: usize,
    pub unsup_lr: f64,
    pub unsup_epochs: usize,
    pub unsup_batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSection {
    pub channel: ChannelModel,
    pub slots: usize,
    pub slot_size: usize,
    /// Alternate with `episodic_alt` every `episode_len` slots.
    pub episodic: bool,
    pub episodic_alt: ChannelModel,
    pub episode_len: usize,
    pub wmmse_iters: usize,
    pub wmmse_eps: f64,
    /// Random starts on top of the deterministic ones.
    pub wmmse_random_starts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub snr_db: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub json: bool,
    pub train: TrainSection,
    pub meta: MetaConfig,
    pub memory: MemoryConfig,
    pub test: TestSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: SystemSection {
                antennas: 3,
                users: 3,
                sigma2: 1.0,
                alpha: Vec::new(),
                loss_variant: LossVariant::Consistent,
                v_init: VInit::Mrt,
            },
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            seeds: vec![0, 1, 2, 3, 4],
            methods: Method::ALL.to_vec(),
            json: false,
            train: TrainSection {
                mix: vec![
                    (ChannelModel::Rician { k_factor: crate::channels::DEFAULT_RICIAN_K }, 0.5),
                    (ChannelModel::Rayleigh, 0.5),
                ],
                dataset_size: 500,
                unsup_lr: 0.001,
                unsup_epochs: 200,
                unsup_batch: 40,
            },
            meta: MetaConfig::default(),
            memory: MemoryConfig::default(),
            test: TestSection {
                channel: ChannelModel::Rayleigh,
                slots: 50,
                slot_size: 40,
                episodic: false,
                episodic_alt: ChannelModel::Rician { k_factor: crate::channels::DEFAULT_RICIAN_K },
                episode_len: 10,
                wmmse_iters: crate::wmmse::DEFAULT_MAX_ITERS,
                wmmse_eps: crate::wmmse::DEFAULT_EPS,
                wmmse_random_starts: crate::wmmse::DEFAULT_RANDOM_STARTS,
            },
        }
    }
}

const REQUIRED: [&str; 2] = ["system.antennas", "system.users"];

enum Bad {
    Unknown,
    Value(String),
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, Bad> {
    v.parse()
        .map_err(|_| Bad::Value(format!("cannot parse `{v}` as {}", std::any::type_name::<T>())))
}

fn list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, Bad> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(x.trim())).collect()
}

fn boolean(v: &str) -> std::result::Result<bool, Bad> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Bad::Value(format!("expected true or false, got `{v}`"))),
    }
}

fn lift<T>(r: Result<T>) -> std::result::Result<T, Bad> {
    r.map_err(|e| Bad::Value(e.to_string()))
}

/// `rician:3*0.5, rayleigh*0.5`
fn parse_mix(v: &str) -> std::result::Result<Vec<(ChannelModel, f64)>, Bad> {
    v.split(',')
        .map(|part| {
            let (model, frac) = part
                .rsplit_once('*')
                .ok_or_else(|| Bad::Value(format!("expected model*fraction, got `{}`", part.trim())))?;
            Ok((lift(ChannelModel::parse(model))?, num(frac.trim())?))
        })
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    fn apply(&mut self, key: &str, v: &str) -> std::result::Result<(), Bad> {
        match key {
            "system.antennas" => self.system.antennas = num(v)?,
            "system.users" => self.system.users = num(v)?,
            "system.sigma2" => self.system.sigma2 = num(v)?,
            "system.alpha" => self.system.alpha = list(v)?,
            "system.loss_variant" => self.system.loss_variant = lift(LossVariant::parse(v))?,
            "system.v_init" => self.system.v_init = lift(VInit::parse(v, 0))?,

            "run.snr_db" => self.snr_db = list(v)?,
            "run.seeds" => self.seeds = list(v)?,
            "run.methods" => {
                self.methods = v
                    .split(',')
                    .map(|m| lift(Method::parse(m)))
                    .collect::<std::result::Result<_, _>>()?
            }
            "run.json" => self.json = boolean(v)?,

            "train.mix" => self.train.mix = parse_mix(v)?,
            "train.dataset_size" => self.train.dataset_size = num(v)?,
            "train.unsup_lr" => self.train.unsup_lr = num(v)?,
            "train.unsup_epochs" => self.train.unsup_epochs = num(v)?,
            "train.unsup_batch" => self.train.unsup_batch = num(v)?,

            "meta.inner_lr" => self.meta.inner_lr = num(v)?,
            "meta.outer_lr" => self.meta.outer_lr = num(v)?,
            "meta.n_s" => self.meta.n_s = num(v)?,
            "meta.n_q" => self.meta.n_q = num(v)?,
            "meta.n_t" => self.meta.n_t = num(v)?,
            "meta.epochs" => self.meta.epochs = num(v)?,
            "meta.inner_steps" => self.meta.inner_steps = num(v)?,
            "meta.adapt_steps" => self.meta.adapt_steps = num(v)?,
            "meta.inner_reduction" => self.meta.inner_reduction = lift(Reduction::parse(v))?,
            "meta.hidden" => self.meta.hidden = list(v)?,

            "memory.capacity" => self.memory.capacity = num(v)?,
            "memory.fresh_fraction" => self.memory.fresh_fraction = num(v)?,
            "memory.rank_pool" => self.memory.rank_pool = lift(RankPool::parse(v))?,
            "memory.adapt_reduction" => self.memory.adapt_reduction = lift(Reduction::parse(v))?,

            "test.channel" => self.test.channel = lift(ChannelModel::parse(v))?,
            "test.slots" => self.test.slots = num(v)?,
            "test.slot_size" => self.test.slot_size = num(v)?,
            "test.episodic" => self.test.episodic = boolean(v)?,
            "test.episodic_alt" => self.test.episodic_alt = lift(ChannelModel::parse(v))?,
            "test.episode_len" => self.test.episode_len = num(v)?,
            "test.wmmse_iters" => self.test.wmmse_iters = num(v)?,
            "test.wmmse_eps" => self.test.wmmse_eps = num(v)?,
            "test.wmmse_random_starts" => self.test.wmmse_random_starts = num(v)?,
            _ => return Err(Bad::Unknown),
        }
        Ok(())
    }

    /// Parses configuration text; defaults fill every key not given.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        let mut lines: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["system", "run", "train", "meta", "memory", "test"].contains(&section.as_str()) {
                    return Err(Error::Config {
                        key: format!("[{section}]"),
                        line: line_no,
                        msg: "unknown section".into(),
                    });
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    key: line.to_string(),
                    line: line_no,
                    msg: "expected `key = value`".into(),
                });
            };
            let key = key.trim();
            let value = value.trim().trim_matches('"').trim();
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            match cfg.apply(&full, value) {
                Ok(()) => {
                    lines.insert(full, line_no);
                }
                Err(Bad::Unknown) => {
                    return Err(Error::Config {
                        key: full,
                        line: line_no,
                        msg: "unknown key".into(),
                    })
                }
                Err(Bad::Value(msg)) => {
                    return Err(Error::Config {
                        key: full,
                        line: line_no,
                        msg,
                    })
                }
            }
        }
        for req in REQUIRED {
            if !lines.contains_key(req) {
                return Err(Error::Config {
                    key: req.to_string(),
                    line: 0,
                    msg: "required key missing".into(),
                });
            }
        }
        cfg.validate().map_err(|(key, msg)| Error::Config {
            line: lines.get(key).copied().unwrap_or(0),
            key: key.to_string(),
            msg,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let s = &self.system;
        if s.antennas == 0 {
            return Err(("system.antennas", "must be >= 1".into()));
        }
        if s.users == 0 {
            return Err(("system.users", "must be >= 1".into()));
        }
        if !(s.sigma2 > 0.0) {
            return Err(("system.sigma2", "must be positive".into()));
        }
        if !s.alpha.is_empty() && (s.alpha.len() != s.users || s.alpha.iter().any(|a| !(*a > 0.0))) {
            return Err(("system.alpha", format!("needs {} positive weights", s.users)));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|x| !x.is_finite()) {
            return Err(("run.snr_db", "needs at least one finite value".into()));
        }
        if self.seeds.is_empty() {
            return Err(("run.seeds", "needs at least one seed".into()));
        }
        if self.methods.is_empty() {
            return Err(("run.methods", "needs at least one method".into()));
        }
        let total: f64 = self.train.mix.iter().map(|m| m.1).sum();
        if self.train.mix.is_empty() || self.train.mix.iter().any(|m| !(m.1 >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(("train.mix", "fractions must be non-negative and sum to 1".into()));
        }
        if self.train.dataset_size == 0 {
            return Err(("train.dataset_size", "must be >= 1".into()));
        }
        if !(self.train.unsup_lr > 0.0) {
            return Err(("train.unsup_lr", "must be positive".into()));
        }
        if self.train.unsup_batch == 0 {
            return Err(("train.unsup_batch", "must be >= 1".into()));
        }
        self.meta
            .validate()
            .map_err(|e| ("meta.inner_lr", e.to_string()))?;
        if self.meta.n_s + self.meta.n_q > self.train.dataset_size {
            return Err(("meta.n_s", "support plus query exceeds the dataset size".into()));
        }
        self.memory
            .validate()
            .map_err(|e| ("memory.fresh_fraction", e.to_string()))?;
        if self.test.slots == 0 {
            return Err(("test.slots", "must be >= 1".into()));
        }
        if self.test.slot_size == 0 {
            return Err(("test.slot_size", "must be >= 1".into()));
        }
        if self.test.episode_len == 0 {
            return Err(("test.episode_len", "must be >= 1".into()));
        }
        if self.test.wmmse_iters == 0 || !(self.test.wmmse_eps > 0.0) {
            return Err(("test.wmmse_iters", "iterations and tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Physical system at one SNR point: `P = sigma2 * 10^(snr/10)`.
    pub fn system_at(&self, snr_db: f64) -> SystemConfig {
        let s = &self.system;
        let mut sys = SystemConfig::new(s.antennas, s.users, snr_db).with_sigma2(s.sigma2);
        sys.power = s.sigma2 * 10f64.powf(snr_db / 10.0);
        if !s.alpha.is_empty() {
            sys.alpha = s.alpha.clone();
        }
        sys.loss_variant = s.loss_variant;
        sys
    }

    /// Complete effective configuration; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let s = &self.system;
        let _ = writeln!(o, "[system]");
        let _ = writeln!(o, "antennas = {}", s.antennas);
        let _ = writeln!(o, "users = {}", s.users);
        let _ = writeln!(o, "sigma2 = {}", s.sigma2);
        let _ = writeln!(o, "alpha = \"{}\"", join(&s.alpha));
        let _ = writeln!(o, "loss_variant = {}", s.loss_variant.as_str());
        let _ = writeln!(o, "v_init = {}", s.v_init.as_str());
        let _ = writeln!(o, "\n[run]");
        let _ = writeln!(o, "snr_db = \"{}\"", join(&self.snr_db));
        let _ = writeln!(o, "seeds = \"{}\"", join(&self.seeds));
        let methods: Vec<&str> = self.methods.iter().map(|m| m.as_str()).collect();
        let _ = writeln!(o, "methods = \"{}\"", methods.join(","));
        let _ = writeln!(o, "json = {}", self.json);
        let t = &self.train;
        let _ = writeln!(o, "\n[train]");
        let mix: Vec<String> = t.mix.iter().map(|(m, f)| format!("{m}*{f}")).collect();
        let _ = writeln!(o, "mix = \"{}\"", mix.join(","));
        let _ = writeln!(o, "dataset_size = {}", t.dataset_size);
        let _ = writeln!(o, "unsup_lr = {}", t.unsup_lr);
        let _ = writeln!(o, "unsup_epochs = {}", t.unsup_epochs);
        let _ = writeln!(o, "unsup_batch = {}", t.unsup_batch);
        let m = &self.meta;
        let _ = writeln!(o, "\n[meta]");
        let _ = writeln!(o, "inner_lr = {}", m.inner_lr);
        let _ = writeln!(o, "outer_lr = {}", m.outer_lr);
        let _ = writeln!(o, "n_s = {}", m.n_s);
        let _ = writeln!(o, "n_q = {}", m.n_q);
        let _ = writeln!(o, "n_t = {}", m.n_t);
        let _ = writeln!(o, "epochs = {}", m.epochs);
        let _ = writeln!(o, "inner_steps = {}", m.inner_steps);
        let _ = writeln!(o, "adapt_steps = {}", m.adapt_steps);
        let _ = writeln!(o, "inner_reduction = {}", m.inner_reduction.as_str());
        let _ = writeln!(o, "hidden = \"{}\"", join(&m.hidden));
        let mem = &self.memory;
        let _ = writeln!(o, "\n[memory]");
        let _ = writeln!(o, "capacity = {}", mem.capacity);
        let _ = writeln!(o, "fresh_fraction = {}", mem.fresh_fraction);
        let _ = writeln!(o, "rank_pool = {}", mem.rank_pool.as_str());
        let _ = writeln!(o, "adapt_reduction = {}", mem.adapt_reduction.as_str());
        let te = &self.test;
        let _ = writeln!(o, "\n[test]");
        let _ = writeln!(o, "channel = {}", te.channel);
        let _ = writeln!(o, "slots = {}", te.slots);
        let _ = writeln!(o, "slot_size = {}", te.slot_size);
        let _ = writeln!(o, "episodic = {}", te.episodic);
        let _ = writeln!(o, "episodic_alt = {}", te.episodic_alt);
        let _ = writeln!(o, "episode_len = {}", te.episode_len);
        let _ = writeln!(o, "wmmse_iters = {}", te.wmmse_iters);
        let _ = writeln!(o, "wmmse_eps = {}", te.wmmse_eps);
        let _ = writeln!(o, "wmmse_random_starts = {}", te.wmmse_random_starts);
        o
    }

    /// Writes the effective configuration as `config.echo` under `dir`.
    pub fn echo(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.echo");
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
