//! Flat `key = value` run configuration shared by config files, the
//! environment and command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::{Ablations, TrainingConfig};

/// Every setting a command can read. Unset fields fall back to defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,

    pub k: Option<usize>,
    pub batch: Option<usize>,
    pub gamma: Option<f64>,
    pub neg: Option<usize>,
    pub adv_temp: Option<f64>,
    pub lr: Option<f64>,
    pub max_steps: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub eval_every: Option<usize>,
    pub lr_patience: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// Comma-separated subset of `scaling`, `adv`, `reciprocal`.
    pub ablate: Option<String>,

    pub split: Option<String>,
    pub raw: Option<bool>,

    pub bins: Option<usize>,
    pub geometry: Option<Vec<String>>,
    pub symmetry: Option<Vec<String>>,
    pub inverse: Option<Vec<String>>,
    pub composition: Option<Vec<String>>,
    pub variant: Option<String>,
    pub triangles: Option<Vec<String>>,
}

macro_rules! for_each_field {
    ($m:ident) => {
        $m!(
            dataset,
            data_dir,
            train,
            valid,
            test,
            out,
            checkpoint,
            k,
            batch,
            gamma,
            neg,
            adv_temp,
            lr,
            max_steps,
            steps_per_epoch,
            eval_every,
            lr_patience,
            early_stop_patience,
            seed,
            workers,
            ablate,
            split,
            raw,
            bins,
            geometry,
            symmetry,
            inverse,
            composition,
            variant,
            triangles
        )
    };
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

impl RunConfig {
    /// Parses `key = value` lines. `#` starts a comment; keys may use `-` or `_`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(&key.trim().replace('-', "_"), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! scalar {
            ($($f:ident),*) => {
                match key {
                    $(stringify!($f) => { self.$f = Some(parse_value(key, value)?); return Ok(()); })*
                    _ => {}
                }
            };
        }
        scalar!(
            dataset,
            data_dir,
            train,
            valid,
            test,
            out,
            checkpoint,
            k,
            batch,
            gamma,
            neg,
            adv_temp,
            lr,
            max_steps,
            steps_per_epoch,
            eval_every,
            lr_patience,
            early_stop_patience,
            seed,
            workers,
            ablate,
            split,
            raw,
            bins,
            variant
        );
        let list = Some(parse_list(value));
        match key {
            "geometry" => self.geometry = list,
            "symmetry" => self.symmetry = list,
            "inverse" => self.inverse = list,
            "composition" => self.composition = list,
            "triangles" => self.triangles = list,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merge(&mut self, other: &RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        for_each_field!(take);
    }

    /// `key = value` lines for every set field, readable by [`RunConfig::parse`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        macro_rules! line {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { let _ = writeln!(out, "{} = {}", stringify!($f), Show(v)); } )* };
        }
        for_each_field!(line);
        out
    }

    /// Hyperparameters with unset fields taken from [`TrainingConfig::default`].
    pub fn training(&self) -> Result<TrainingConfig> {
        let d = TrainingConfig::default();
        let cfg = TrainingConfig {
            k: self.k.unwrap_or(d.k),
            batch_size: self.batch.unwrap_or(d.batch_size),
            gamma: self.gamma.unwrap_or(d.gamma),
            negatives: self.neg.unwrap_or(d.negatives),
            adv_temperature: self.adv_temp.unwrap_or(d.adv_temperature),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
            steps_per_epoch: self.steps_per_epoch.or(d.steps_per_epoch),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            lr_patience: self.lr_patience.unwrap_or(d.lr_patience),
            early_stop_patience: self.early_stop_patience.unwrap_or(d.early_stop_patience),
            seed: self.seed.unwrap_or(d.seed),
            workers: self.workers.unwrap_or_else(default_workers),
            ablations: parse_ablations(self.ablate.as_deref().unwrap_or(""))?,
            adam: d.adam,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the resolved training fields back so that an echo shows every value used.
    pub fn fill_training(&mut self, t: &TrainingConfig) {
        self.k = Some(t.k);
        self.batch = Some(t.batch_size);
        self.gamma = Some(t.gamma);
        self.neg = Some(t.negatives);
        self.adv_temp = Some(t.adv_temperature);
        self.lr = Some(t.learning_rate);
        self.max_steps = Some(t.max_steps);
        self.steps_per_epoch = t.steps_per_epoch;
        self.eval_every = Some(t.eval_every);
        self.lr_patience = Some(t.lr_patience);
        self.early_stop_patience = Some(t.early_stop_patience);
        self.seed = Some(t.seed);
        self.workers = Some(t.workers);
        self.ablate = Some(render_ablations(&t.ablations));
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or_else(default_workers)
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// `scaling`, `adv` (or `adversarial`) and `reciprocal`, comma-separated; each listed
/// component is switched off.
pub fn parse_ablations(list: &str) -> Result<Ablations> {
    let mut a = Ablations::default();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item {
            "scaling" => a.scaling = false,
            "adv" | "adversarial" => a.adversarial = false,
            "reciprocal" => a.reciprocal = false,
            "none" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation `{other}` (expected scaling, adv, reciprocal)"
                )))
            }
        }
    }
    Ok(a)
}

pub fn render_ablations(a: &Ablations) -> String {
    let mut off = Vec::new();
    if !a.scaling {
        off.push("scaling");
    }
    if !a.adversarial {
        off.push("adv");
    }
    if !a.reciprocal {
        off.push("reciprocal");
    }
    if off.is_empty() {
        "none".to_owned()
    } else {
        off.join(",")
    }
}

struct Show<'a, T>(&'a T);

trait ConfigValue {
    fn show(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => { $( impl ConfigValue for $t { fn show(&self) -> String { self.to_string() } } )* };
}
display_value!(String, usize, u64, f64, bool);

impl ConfigValue for PathBuf {
    fn show(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Vec<String> {
    fn show(&self) -> String {
        self.join(" ")
    }
}

impl<T: ConfigValue> std::fmt::Display for Show<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0.show())
    }
}
