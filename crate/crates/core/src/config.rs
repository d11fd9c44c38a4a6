//! Run configuration in a plain `key = value` format.
//!
//! Every run can be reproduced from its echoed config: [`RunConfig::render`]
//! writes every key, and [`RunConfig::parse`] reads it back losslessly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cmd::Metric;
use crate::corpus::{Weighting, MAX_WINDOW};
use crate::error::{Error, Result};
use crate::ot::{Domain, Normalization, SinkhornConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TaskKind {
    /// Sentence similarity.
    #[default]
    Sts,
    Wordsim,
    Hypernymy,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Sts => "sts",
            TaskKind::Wordsim => "wordsim",
            TaskKind::Hypernymy => "hypernymy",
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sts" => Ok(TaskKind::Sts),
            "wordsim" => Ok(TaskKind::Wordsim),
            "hypernymy" => Ok(TaskKind::Hypernymy),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Vectors clustered into representative contexts; defaults to `embeddings`.
    pub context_embeddings: Option<PathBuf>,
    /// Entailment vectors used by the entailment metric.
    pub entailment: Option<PathBuf>,
    pub window: usize,
    pub min_count: u64,
    pub weighting: Weighting,
    pub alpha: f64,
    pub shift: f64,
    pub beta: f64,
    pub k: usize,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub metric: Metric,
    pub p: u32,
    pub lambda: f64,
    pub iters: usize,
    pub domain: Domain,
    pub tol: Option<f64>,
    pub mix: f64,
    pub clip: Option<f64>,
    pub normalization: Normalization,
    pub pc_removal: bool,
    /// Digits printed after the decimal point.
    pub precision: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_task(TaskKind::Sts)
    }
}

impl RunConfig {
    /// Defaults for a task.
    pub fn for_task(task: TaskKind) -> Self {
        let base = Self {
            task,
            corpus: None,
            embeddings: None,
            context_embeddings: None,
            entailment: None,
            window: 10,
            min_count: 10,
            weighting: Weighting::InverseDistance,
            alpha: 0.55,
            shift: 5.0,
            beta: 1.0,
            k: 300,
            seed: 42,
            kmeans_iters: 100,
            metric: Metric::Euclidean,
            p: 1,
            lambda: 0.1,
            iters: 100,
            domain: Domain::Auto,
            tol: None,
            mix: 0.4,
            clip: None,
            normalization: Normalization::Median,
            pc_removal: false,
            precision: 6,
        };
        match task {
            TaskKind::Sts => base,
            TaskKind::Wordsim => Self { mix: 0.8, ..base },
            TaskKind::Hypernymy => Self {
                alpha: 0.5,
                beta: 0.5,
                shift: 1.0,
                k: 200,
                metric: Metric::Entailment,
                iters: 500,
                mix: 0.0,
                normalization: Normalization::Log,
                ..base
            },
        }
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            lambda: self.lambda,
            iters: self.iters,
            domain: self.domain,
            tol: self.tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(1..=MAX_WINDOW).contains(&self.window) {
            return bad(format!("window must lie in 1..={MAX_WINDOW}, got {}", self.window));
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0,1], got {}", self.alpha));
        }
        if !(self.shift >= 1.0 && self.shift.is_finite()) {
            return bad(format!("shift must be >= 1, got {}", self.shift));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0,1], got {}", self.beta));
        }
        if self.k == 0 || self.kmeans_iters == 0 || self.iters == 0 {
            return bad("k, kmeans_iters and iters must be positive".into());
        }
        if !(1..=2).contains(&self.p) {
            return bad(format!("p must be 1 or 2, got {}", self.p));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return bad(format!("mix must lie in [0,1], got {}", self.mix));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip must be > 0, got {c}"));
            }
        }
        if let Some(t) = self.tol {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("tol must be > 0, got {t}"));
            }
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let cfg_err = |e: String| Error::Config(format!("{key}: {e}"));
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse::<T>().map_err(|_| format!("cannot parse {v:?}"))
        }
        fn opt<T: FromStr>(v: &str) -> std::result::Result<Option<T>, String> {
            if v == "none" {
                Ok(None)
            } else {
                num(v).map(Some)
            }
        }
        let path = |v: &str| (v != "none").then(|| PathBuf::from(v));
        match key {
            "task" => self.task = value.parse()?,
            "corpus" => self.corpus = path(value),
            "embeddings" => self.embeddings = path(value),
            "context_embeddings" => self.context_embeddings = path(value),
            "entailment" => self.entailment = path(value),
            "window" => self.window = num(value).map_err(cfg_err)?,
            "min_count" => self.min_count = num(value).map_err(cfg_err)?,
            "weighting" => {
                self.weighting = match value {
                    "inverse_distance" => Weighting::InverseDistance,
                    "uniform" => Weighting::Uniform,
                    _ => return Err(cfg_err(format!("unknown weighting {value:?}"))),
                }
            }
            "alpha" => self.alpha = num(value).map_err(cfg_err)?,
            "shift" => self.shift = num(value).map_err(cfg_err)?,
            "beta" => self.beta = num(value).map_err(cfg_err)?,
            "k" => self.k = num(value).map_err(cfg_err)?,
            "seed" => self.seed = num(value).map_err(cfg_err)?,
            "kmeans_iters" => self.kmeans_iters = num(value).map_err(cfg_err)?,
            "metric" => self.metric = value.parse().map_err(|e: Error| cfg_err(e.to_string()))?,
            "p" => self.p = num(value).map_err(cfg_err)?,
            "lambda" => self.lambda = num(value).map_err(cfg_err)?,
            "iters" => self.iters = num(value).map_err(cfg_err)?,
            "domain" => {
                self.domain = match value {
                    "auto" => Domain::Auto,
                    "log" => Domain::Log,
                    "scaling" => Domain::Scaling,
                    _ => return Err(cfg_err(format!("unknown domain {value:?}"))),
                }
            }
            "tol" => self.tol = opt(value).map_err(cfg_err)?,
            "mix" => self.mix = num(value).map_err(cfg_err)?,
            "clip" => self.clip = opt(value).map_err(cfg_err)?,
            "normalization" => {
                self.normalization = match value {
                    "none" => Normalization::None,
                    "median" => Normalization::Median,
                    "log" => Normalization::Log,
                    _ => return Err(cfg_err(format!("unknown normalization {value:?}"))),
                }
            }
            "pc_removal" => self.pc_removal = num(value).map_err(cfg_err)?,
            "precision" => self.precision = num(value).map_err(cfg_err)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. A `task` key selects
    /// the defaults every other key is applied on top of.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let k = k.trim();
            if pairs.iter().any(|(seen, _): &(&str, &str)| *seen == k) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", lineno + 1)));
            }
            pairs.push((k, v.trim()));
        }
        let task = match pairs.iter().find(|(k, _)| *k == "task") {
            Some((_, v)) => v.parse()?,
            None => TaskKind::default(),
        };
        let mut cfg = Self::for_task(task);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key, one per line, in a fixed order.
    pub fn render(&self) -> String {
        fn p(x: &Option<PathBuf>) -> String {
            x.as_ref().map_or("none".into(), |p| p.display().to_string())
        }
        fn o(x: Option<f64>) -> String {
            x.map_or("none".into(), |v| format!("{v:?}"))
        }
        let weighting = match self.weighting {
            Weighting::InverseDistance => "inverse_distance",
            Weighting::Uniform => "uniform",
        };
        let domain = match self.domain {
            Domain::Auto => "auto",
            Domain::Log => "log",
            Domain::Scaling => "scaling",
        };
        let normalization = match self.normalization {
            Normalization::None => "none",
            Normalization::Median => "median",
            Normalization::Log => "log",
        };
        let lines = [
            ("task", self.task.name().to_string()),
            ("corpus", p(&self.corpus)),
            ("embeddings", p(&self.embeddings)),
            ("context_embeddings", p(&self.context_embeddings)),
            ("entailment", p(&self.entailment)),
            ("window", self.window.to_string()),
            ("min_count", self.min_count.to_string()),
            ("weighting", weighting.into()),
            ("alpha", format!("{:?}", self.alpha)),
            ("shift", format!("{:?}", self.shift)),
            ("beta", format!("{:?}", self.beta)),
            ("k", self.k.to_string()),
            ("seed", self.seed.to_string()),
            ("kmeans_iters", self.kmeans_iters.to_string()),
            ("metric", self.metric.name().into()),
            ("p", self.p.to_string()),
            ("lambda", format!("{:?}", self.lambda)),
            ("iters", self.iters.to_string()),
            ("domain", domain.into()),
            ("tol", o(self.tol)),
            ("mix", format!("{:?}", self.mix)),
            ("clip", o(self.clip)),
            ("normalization", normalization.into()),
            ("pc_removal", self.pc_removal.to_string()),
            ("precision", self.precision.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in lines {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
