//! Run configuration: a flat `key = value` text format, flag overrides, and
//! a hash over every effective value for provenance.
//!
//! Flags mirror config keys one-to-one; flags override file values, and the
//! effective configuration is echoed into the training manifest.

use std::fs;
use std::path::Path;

use graphemb::error::{Error, Result};
use graphemb::graph::DEFAULT_EDGE_THRESHOLD;
use graphemb::losses::DistanceMetric;
use graphemb::model::DEFAULT_EMBEDDING_DIM;
use graphemb::trainer::{PhaseSegment, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub train: TrainConfig,
    pub graph_threshold: f64,
    pub eval_k: Vec<usize>,
    /// Margin grid as (min, max, step).
    pub eval_eta: (f64, f64, f64),
    pub eval_metric: DistanceMetric,
    pub eval_normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hidden_dims: vec![64],
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            train: TrainConfig::default(),
            graph_threshold: DEFAULT_EDGE_THRESHOLD,
            eval_k: vec![1, 5],
            eval_eta: (-1.0, 1.0, 0.05),
            eval_metric: DistanceMetric::Euclidean,
            eval_normalize: true,
        }
    }
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    if s == "-" || s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("invalid integer '{t}' in list")))
        })
        .collect()
}

fn format_usize_list(list: &[usize]) -> String {
    if list.is_empty() {
        "-".to_string()
    } else {
        list.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Parses phase schedules like `1000:0,+500:1`: each segment is
/// `boundary:alpha` where a `+` prefix makes the boundary relative to the
/// previous one. Steps past the last boundary use the configured alpha.
pub fn parse_phase_schedule(s: &str) -> Result<Vec<PhaseSegment>> {
    if s == "-" || s.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut prev = 0u64;
    for part in s.split(',') {
        let (step_part, alpha_part) = part.split_once(':').ok_or_else(|| {
            Error::InvalidArgument(format!("phase segment '{part}' is not boundary:alpha"))
        })?;
        let until_step = if let Some(rel) = step_part.strip_prefix('+') {
            let rel: u64 = rel.parse().map_err(|_| {
                Error::InvalidArgument(format!("invalid relative boundary '{step_part}'"))
            })?;
            prev + rel
        } else {
            step_part.parse().map_err(|_| {
                Error::InvalidArgument(format!("invalid phase boundary '{step_part}'"))
            })?
        };
        if until_step < prev {
            return Err(Error::InvalidArgument(
                "phase boundaries must be ascending".into(),
            ));
        }
        let alpha: f64 = alpha_part.parse().map_err(|_| {
            Error::InvalidArgument(format!("invalid phase alpha '{alpha_part}'"))
        })?;
        out.push(PhaseSegment { until_step, alpha });
        prev = until_step;
    }
    Ok(out)
}

fn format_phase_schedule(schedule: &[PhaseSegment]) -> String {
    if schedule.is_empty() {
        "-".to_string()
    } else {
        schedule
            .iter()
            .map(|s| format!("{}:{}", s.until_step, s.alpha))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Parses a margin grid string `min:max:step`.
pub fn parse_eta_range(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "margin grid '{s}' is not min:max:step"
        )));
    }
    let parse = |t: &str| -> Result<f64> {
        t.parse()
            .map_err(|_| Error::InvalidArgument(format!("invalid number '{t}' in margin grid")))
    };
    Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
}

impl RunConfig {
    /// Loads a config file on top of the defaults. Unknown keys are
    /// rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let text = fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                message: format!("expected key = value, found '{line}'"),
            })?;
            cfg.apply(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_num = || Error::InvalidArgument(format!("invalid value '{value}' for {key}"));
        match key {
            "model.hidden_dims" => self.hidden_dims = parse_usize_list(value)?,
            "model.embedding_dim" => self.embedding_dim = value.parse().map_err(|_| bad_num())?,
            "train.alpha" => self.train.alpha = value.parse().map_err(|_| bad_num())?,
            "train.epsilon" => self.train.epsilon = value.parse().map_err(|_| bad_num())?,
            "train.batch_size" => self.train.batch_size = value.parse().map_err(|_| bad_num())?,
            "train.sampled_vocab" => {
                self.train.sampled_vocab = if value == "-" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad_num())?)
                }
            }
            "train.lr0" => self.train.lr0 = value.parse().map_err(|_| bad_num())?,
            "train.decay_rate" => self.train.decay_rate = value.parse().map_err(|_| bad_num())?,
            "train.decay_every" => self.train.decay_every = value.parse().map_err(|_| bad_num())?,
            "train.momentum" => self.train.momentum_coef = value.parse().map_err(|_| bad_num())?,
            "train.weight_decay" => {
                self.train.weight_decay = value.parse().map_err(|_| bad_num())?
            }
            "train.metric" => self.train.metric = value.parse()?,
            "train.max_steps" => self.train.max_steps = value.parse().map_err(|_| bad_num())?,
            "train.seed" => self.train.seed = value.parse().map_err(|_| bad_num())?,
            "train.checkpoint_every" => {
                self.train.checkpoint_every = value.parse().map_err(|_| bad_num())?
            }
            "train.phase_schedule" => self.train.phase_schedule = parse_phase_schedule(value)?,
            "train.exhaustive_edges" => {
                self.train.exhaustive_edges = value.parse().map_err(|_| bad_num())?
            }
            "graph.threshold" => self.graph_threshold = value.parse().map_err(|_| bad_num())?,
            "eval.k" => self.eval_k = parse_usize_list(value)?,
            "eval.eta_grid" => self.eval_eta = parse_eta_range(value)?,
            "eval.metric" => self.eval_metric = value.parse()?,
            "eval.normalize" => self.eval_normalize = value.parse().map_err(|_| bad_num())?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown configuration key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Every effective value as canonical key/value pairs, sorted by key.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let mut kv = vec![
            ("model.hidden_dims", format_usize_list(&self.hidden_dims)),
            ("model.embedding_dim", self.embedding_dim.to_string()),
            ("train.alpha", t.alpha.to_string()),
            ("train.epsilon", t.epsilon.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            (
                "train.sampled_vocab",
                t.sampled_vocab.map_or("-".to_string(), |v| v.to_string()),
            ),
            ("train.lr0", t.lr0.to_string()),
            ("train.decay_rate", t.decay_rate.to_string()),
            ("train.decay_every", t.decay_every.to_string()),
            ("train.momentum", t.momentum_coef.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.metric", t.metric.to_string()),
            ("train.max_steps", t.max_steps.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            (
                "train.phase_schedule",
                format_phase_schedule(&t.phase_schedule),
            ),
            ("train.exhaustive_edges", t.exhaustive_edges.to_string()),
            ("graph.threshold", self.graph_threshold.to_string()),
            ("eval.k", format_usize_list(&self.eval_k)),
            (
                "eval.eta_grid",
                format!("{}:{}:{}", self.eval_eta.0, self.eval_eta.1, self.eval_eta.2),
            ),
            ("eval.metric", self.eval_metric.to_string()),
            ("eval.normalize", self.eval_normalize.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect::<Vec<_>>();
        kv.sort();
        kv
    }

    /// FNV-1a hash over the sorted canonical `key=value` lines.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &byte in bytes {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (k, v) in self.key_values() {
            eat(k.as_bytes());
            eat(b"=");
            eat(v.as_bytes());
            eat(b"\n");
        }
        h
    }
}
