//! `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use chunkrnn_core::chunked::{ChunkedConfig, PhaseSchedule, TagInjection, TagMode, TransferConfig};
use chunkrnn_core::chunking::TaggerConfig;
use chunkrnn_core::environment::{EnvConfig, Token};
use chunkrnn_core::naive::{SweepGrid, DEFAULT_STEPS, DEFAULT_WIN, NAIVE_LEARNING_RATE};
use chunkrnn_core::nn::{Activation, HiddenCarry, TrainConfig};

pub const EXPERIMENTS: [&str; 9] = [
    "generate",
    "naive",
    "ablate",
    "chunked",
    "constant-tag",
    "transfer",
    "analyze",
    "compare",
    "gradcheck",
];

const KEYS: &[&str] = &[
    "experiment",
    "seed",
    "replicates",
    "length",
    "entry_tokens",
    "entry_probs",
    "source_entry_tokens",
    "source_entry_probs",
    "neurons",
    "layers",
    "activation",
    "bptt_window",
    "learning_rate",
    "init_scale",
    "clip",
    "carry",
    "steps",
    "win",
    "record_every",
    "grid_neurons",
    "grid_layers",
    "grid_windows",
    "injection",
    "tag",
    "pre_sleep_steps",
    "sleep_buffer_len",
    "post_sleep_steps",
    "tagger_learning_rate",
    "tagger_bptt_window",
    "tagger_threshold",
    "tagger_max_epochs",
    "tagger_patience",
    "tagger_holdout_fraction",
    "brief_steps",
    "target_steps",
    "auc_steps",
    "snapshot_steps",
    "dims",
    "eps",
    "tolerance",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Parsed but untyped entries, each remembering its line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Line {
                    line,
                    message: format!("expected `key = value`, found `{content}`"),
                });
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::Line {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
            if let Some((first, _)) = entries.get(key) {
                return Err(ConfigError::Line {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
            entries.insert(key.to_string(), (line, value.trim().to_string()));
        }
        Ok(RawConfig { entries })
    }

    /// Overrides from the command line; they report line 0.
    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), (0, value));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn fail(&self, key: &str, message: String) -> ConfigError {
        match self.entries.get(key) {
            Some((line, _)) if *line > 0 => ConfigError::Line { line: *line, message },
            _ => ConfigError::Invalid(message),
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((_, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| self.fail(key, format!("invalid value `{v}` for `{key}`: {e}"))),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(|item| {
                item.trim()
                    .parse()
                    .map_err(|e| self.fail(key, format!("invalid item `{}` in `{key}`: {e}", item.trim())))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn tokens(&self, key: &str) -> Result<Option<Vec<Token>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(|item| {
                let item = item.trim();
                let mut chars = item.chars();
                match (chars.next().and_then(Token::from_symbol), chars.next()) {
                    (Some(t), None) => Ok(t),
                    _ => Err(self.fail(key, format!("invalid token `{item}` in `{key}`"))),
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn env(&self, tokens_key: &str, probs_key: &str, default: &[Token], seed: u64) -> Result<EnvConfig> {
        let tokens = self.tokens(tokens_key)?.unwrap_or_else(|| default.to_vec());
        let built = match self.list::<f64>(probs_key)? {
            Some(probs) => EnvConfig::new(tokens, probs, seed),
            None => EnvConfig::uniform(&tokens, seed),
        };
        built.map_err(|e| self.fail(probs_key, format!("{e}")).or_key(self, tokens_key))
    }
}

trait OrKey {
    fn or_key(self, raw: &RawConfig, key: &str) -> ConfigError;
}

impl OrKey for ConfigError {
    fn or_key(self, raw: &RawConfig, key: &str) -> ConfigError {
        match self {
            ConfigError::Invalid(message) => raw.fail(key, message),
            other => other,
        }
    }
}

/// Fully resolved settings for one invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub replicates: usize,
    pub length: usize,
    pub env: EnvConfig,
    pub source_env: EnvConfig,
    pub neurons: usize,
    pub layers: usize,
    pub activation: Activation,
    pub train: TrainConfig,
    pub steps: usize,
    pub win: usize,
    pub record_every: usize,
    pub grid: SweepGrid,
    pub chunked: ChunkedConfig,
    pub tag: TagMode,
    pub transfer: TransferConfig,
    pub snapshot_steps: usize,
    pub dims: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub auc_steps: Option<usize>,
}

fn parse_tag(v: &str) -> Option<TagMode> {
    match v {
        "learned" => Some(TagMode::Learned),
        "oracle" => Some(TagMode::Oracle),
        _ => {
            let sym = v.strip_prefix("constant:")?;
            let mut chars = sym.chars();
            let t = Token::from_symbol(chars.next()?)?;
            chars.next().is_none().then_some(TagMode::Constant(t))
        }
    }
}

fn tag_name(t: TagMode) -> String {
    match t {
        TagMode::Learned => "learned".into(),
        TagMode::Oracle => "oracle".into(),
        TagMode::Constant(tok) => format!("constant:{tok}"),
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn resolve(experiment: &str, raw: &RawConfig) -> Result<Self> {
        if !EXPERIMENTS.contains(&experiment) {
            return Err(ConfigError::Invalid(unknown_experiment(experiment)));
        }
        let seed = raw.get_or("seed", 0u64)?;
        let all = &Token::ALL[..6];
        let env = raw.env("entry_tokens", "entry_probs", all, seed)?;
        let source_env = raw.env(
            "source_entry_tokens",
            "source_entry_probs",
            &[Token::A, Token::B, Token::D, Token::E],
            seed,
        )?;

        let chunked_like = matches!(experiment, "chunked" | "constant-tag" | "transfer");
        let base = ChunkedConfig::default();
        let (d_neurons, d_layers, d_window, d_lr, d_steps) = match experiment {
            "analyze" => (10, 1, 1, 0.05, 20_000),
            _ if chunked_like => (base.neurons, base.layers, 1, base.train.learning_rate, DEFAULT_STEPS),
            _ => (15, 1, 7, NAIVE_LEARNING_RATE, DEFAULT_STEPS),
        };
        let defaults = TrainConfig::default();
        let clip = match raw.raw("clip") {
            None => defaults.gradient_clip,
            Some("none") => None,
            Some(_) => Some(raw.get::<f64>("clip")?.expect("present")),
        };
        let carry = match raw.raw("carry") {
            None => defaults.carry,
            Some(v) => HiddenCarry::from_name(v)
                .ok_or_else(|| raw.fail("carry", format!("invalid carry `{v}` (aligned|previous)")))?,
        };
        let activation = match raw.raw("activation") {
            None => Activation::Tanh,
            Some(v) => Activation::from_name(v)
                .ok_or_else(|| raw.fail("activation", format!("invalid activation `{v}` (tanh|relu)")))?,
        };
        let train = TrainConfig {
            learning_rate: raw.get_or("learning_rate", d_lr)?,
            bptt_window: raw.get_or("bptt_window", d_window)?,
            init_scale: raw.get_or("init_scale", defaults.init_scale)?,
            seed,
            gradient_clip: clip,
            carry,
        };
        train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let neurons = raw.get_or("neurons", d_neurons)?;
        let layers = raw.get_or("layers", d_layers)?;
        if neurons == 0 || layers == 0 {
            return Err(ConfigError::Invalid("neurons and layers must be positive".into()));
        }
        let win = raw.get_or("win", DEFAULT_WIN)?;
        let steps = raw.get_or("steps", d_steps)?;
        if win == 0 {
            return Err(raw.fail("win", "win must be positive".into()));
        }

        let grid_default = SweepGrid::default();
        let grid = SweepGrid {
            neurons: raw.list("grid_neurons")?.unwrap_or(grid_default.neurons),
            layers: raw.list("grid_layers")?.unwrap_or(grid_default.layers),
            windows: raw.list("grid_windows")?.unwrap_or(grid_default.windows),
        };

        let injection = match raw.raw("injection") {
            None => base.injection,
            Some(v) => TagInjection::from_name(v)
                .ok_or_else(|| raw.fail("injection", format!("invalid injection `{v}` (layer1|layer2)")))?,
        };
        let td = TaggerConfig::default();
        let tagger = TaggerConfig {
            train: TrainConfig {
                learning_rate: raw.get_or("tagger_learning_rate", td.train.learning_rate)?,
                bptt_window: raw.get_or("tagger_bptt_window", td.train.bptt_window)?,
                seed,
                ..td.train
            },
            threshold: raw.get_or("tagger_threshold", td.threshold)?,
            max_epochs: raw.get_or("tagger_max_epochs", td.max_epochs)?,
            patience: raw.get_or("tagger_patience", td.patience)?,
            holdout_fraction: raw.get_or("tagger_holdout_fraction", td.holdout_fraction)?,
        };
        let sd = PhaseSchedule::default();
        let pre = raw.get_or("pre_sleep_steps", sd.pre_sleep_steps)?;
        let schedule = PhaseSchedule {
            pre_sleep_steps: pre,
            sleep_buffer_len: raw.get_or("sleep_buffer_len", sd.sleep_buffer_len)?,
            post_sleep_steps: raw.get_or(
                "post_sleep_steps",
                if raw.raw("steps").is_some() {
                    steps.saturating_sub(pre)
                } else {
                    sd.post_sleep_steps
                },
            )?,
        };
        let chunked = ChunkedConfig {
            neurons,
            layers,
            activation,
            injection,
            train,
            tagger,
            schedule,
            win,
        };
        if chunked_like {
            chunked.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }

        let tag = match raw.raw("tag") {
            None if experiment == "constant-tag" => TagMode::Constant(Token::A),
            None => TagMode::Learned,
            Some(v) => parse_tag(v)
                .ok_or_else(|| raw.fail("tag", format!("invalid tag `{v}` (learned|oracle|constant:<token>)")))?,
        };
        if experiment == "constant-tag" && !matches!(tag, TagMode::Constant(_)) {
            return Err(raw.fail("tag", "constant-tag needs `tag = constant:<token>`".into()));
        }

        let trd = TransferConfig::default();
        let transfer = TransferConfig {
            model: chunked,
            brief_steps: raw.get_or("brief_steps", trd.brief_steps)?,
            target_steps: raw.get_or("target_steps", trd.target_steps)?,
            auc_steps: raw.get_or("auc_steps", trd.auc_steps)?,
        };

        let replicates = raw.get_or("replicates", 1usize)?;
        if replicates == 0 {
            return Err(raw.fail("replicates", "replicates must be positive".into()));
        }
        let record_every = raw.get_or("record_every", 10usize)?;
        if record_every == 0 {
            return Err(raw.fail("record_every", "record_every must be positive".into()));
        }
        Ok(ExperimentConfig {
            experiment: experiment.to_string(),
            seed,
            replicates,
            length: raw.get_or("length", 1000usize)?,
            env,
            source_env,
            neurons,
            layers,
            activation,
            train,
            steps,
            win,
            record_every,
            grid,
            chunked,
            tag,
            transfer,
            snapshot_steps: raw.get_or("snapshot_steps", 10_000usize)?,
            dims: raw.get_or("dims", 2usize)?,
            eps: raw.get_or("eps", 1e-3)?,
            tolerance: raw.get_or("tolerance", 1e-5)?,
            auc_steps: raw.get("auc_steps")?,
        })
    }

    /// Every effective setting; feeding this back through `--config`
    /// reproduces the run.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let env = |e: &EnvConfig| {
            (
                e.entry_tokens()
                    .iter()
                    .map(|t| t.symbol())
                    .map(String::from)
                    .collect::<Vec<_>>()
                    .join(","),
                join(e.entry_probs()),
            )
        };
        let (et, ep) = env(&self.env);
        let (st, sp) = env(&self.source_env);
        let c = &self.chunked;
        let t = &c.tagger;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("experiment", self.experiment.clone());
        put("seed", self.seed.to_string());
        put("replicates", self.replicates.to_string());
        put("length", self.length.to_string());
        put("entry_tokens", et);
        put("entry_probs", ep);
        put("source_entry_tokens", st);
        put("source_entry_probs", sp);
        put("neurons", self.neurons.to_string());
        put("layers", self.layers.to_string());
        put("activation", self.activation.name().into());
        put("bptt_window", self.train.bptt_window.to_string());
        put("learning_rate", self.train.learning_rate.to_string());
        put("init_scale", self.train.init_scale.to_string());
        put(
            "clip",
            self.train.gradient_clip.map_or("none".into(), |c| c.to_string()),
        );
        put("carry", self.train.carry.name().into());
        put("steps", self.steps.to_string());
        put("win", self.win.to_string());
        put("record_every", self.record_every.to_string());
        put("grid_neurons", join(&self.grid.neurons));
        put("grid_layers", join(&self.grid.layers));
        put("grid_windows", join(&self.grid.windows));
        put("injection", c.injection.name().into());
        put("tag", tag_name(self.tag));
        put("pre_sleep_steps", c.schedule.pre_sleep_steps.to_string());
        put("sleep_buffer_len", c.schedule.sleep_buffer_len.to_string());
        put("post_sleep_steps", c.schedule.post_sleep_steps.to_string());
        put("tagger_learning_rate", t.train.learning_rate.to_string());
        put("tagger_bptt_window", t.train.bptt_window.to_string());
        put("tagger_threshold", t.threshold.to_string());
        put("tagger_max_epochs", t.max_epochs.to_string());
        put("tagger_patience", t.patience.to_string());
        put("tagger_holdout_fraction", t.holdout_fraction.to_string());
        put("brief_steps", self.transfer.brief_steps.to_string());
        put("target_steps", self.transfer.target_steps.to_string());
        put("snapshot_steps", self.snapshot_steps.to_string());
        put("dims", self.dims.to_string());
        put("eps", self.eps.to_string());
        put("tolerance", self.tolerance.to_string());
        put(
            "auc_steps",
            self.auc_steps.unwrap_or(self.transfer.auc_steps).to_string(),
        );
        m
    }
}

pub fn unknown_experiment(name: &str) -> String {
    format!(
        "unknown experiment `{name}`; valid experiments: {}",
        EXPERIMENTS.join(", ")
    )
}

pub fn render(echo: &BTreeMap<String, String>) -> String {
    echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
