//! Experiment configuration and its INI-style text format.
//!
//! The format is `key = value` lines grouped under `[scene]`, `[network]`,
//! `[train]` and `[activation]`; `#` starts a comment. Every key is optional
//! and unknown keys are rejected. [`ExperimentConfig::to_ini`] writes a
//! complete file that parses back to the same configuration, which is how
//! the defaults are documented (`--print-defaults`) and how checkpoints carry
//! their configuration.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::activation::ActivationConfig;
use crate::losses::LossKind;
use crate::net::{Head, NetworkConfig};
use crate::synth::{AugmentConfig, SceneSpec};
use crate::{Error, Result};

/// A trained model variant compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Method {
    pub loss: LossKind,
    /// Class weighting, used by MCE (default on) and NCE (default off).
    pub weighted: bool,
}

impl Method {
    pub const fn new(loss: LossKind) -> Self {
        Self {
            loss,
            weighted: matches!(loss, LossKind::Mce),
        }
    }

    pub fn name(&self) -> String {
        match (self.loss, self.weighted) {
            (LossKind::Mce, false) => "mce-unweighted".into(),
            (LossKind::Nce, true) => "nce-weighted".into(),
            (loss, _) => loss.name().into(),
        }
    }

    pub fn head(&self) -> Head {
        if self.loss.is_multilevel() {
            Head::MultiLevel
        } else {
            Head::Softmax
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mce-unweighted" => Ok(Method {
                loss: LossKind::Mce,
                weighted: false,
            }),
            "nce-weighted" => Ok(Method {
                loss: LossKind::Nce,
                weighted: true,
            }),
            other => other.parse().map(Method::new),
        }
    }
}

/// Grid of candidate values for the top threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    /// `(m - 1.5) + 0.05 ..= m - 0.05` in steps of 0.01, i.e. `0.55..=1.95` for `m = 2`.
    pub fn auto(m: usize) -> Self {
        let m = m as f64;
        Self {
            lo: m - 1.45,
            hi: m - 0.05,
            step: 0.01,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub network: NetworkConfig,
    pub activation: ActivationConfig,
    pub augment: AugmentConfig,
    pub method: Method,
    /// Methods compared by the benchmark.
    pub methods: Vec<Method>,
    pub iterations: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub learning_rate: f64,
    pub k_folds: usize,
    pub n_images: usize,
    /// Validation fold used by single training runs.
    pub fold: usize,
    /// `None` selects [`GridSpec::auto`].
    pub threshold_grid: Option<GridSpec>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            network: NetworkConfig::default(),
            activation: ActivationConfig::default(),
            augment: AugmentConfig::default(),
            method: Method::new(LossKind::Sse),
            methods: vec![
                Method::new(LossKind::SoftmaxCe),
                Method::new(LossKind::Sse),
                Method::new(LossKind::Mce),
                Method::new(LossKind::Nce),
            ],
            iterations: 3000,
            batch_size: 4,
            eval_every: 100,
            learning_rate: 1e-3,
            k_folds: 4,
            n_images: 16,
            fold: 0,
            threshold_grid: None,
            master_seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn parse_value<T: FromStr>(key: &str, e: &Entry) -> Result<T>
where
    T::Err: fmt::Display,
{
    e.value
        .parse()
        .map_err(|err| Error::config(format!("line {}: bad value for `{key}`: {err}", e.line)))
}

fn parse_bool(key: &str, e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        v => Err(Error::config(format!("line {}: `{key}` expects true or false, got `{v}`", e.line))),
    }
}

fn parse_list<T: FromStr>(key: &str, e: &Entry) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    e.value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|err| Error::config(format!("line {}: bad item `{s}` in `{key}`: {err}", e.line)))
        })
        .collect()
}

fn parse_triple(key: &str, e: &Entry) -> Result<Vec<f64>> {
    e.value
        .split(':')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|err| Error::config(format!("line {}: bad number in `{key}`: {err}", e.line)))
        })
        .collect()
}

fn parse_range(key: &str, e: &Entry) -> Result<(usize, usize)> {
    let parts: Vec<&str> = e.value.split(':').map(str::trim).collect();
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|err| Error::config(format!("line {}: bad count in `{key}`: {err}", e.line)))
    };
    match parts.as_slice() {
        [one] => Ok((num(one)?, num(one)?)),
        [lo, hi] => Ok((num(lo)?, num(hi)?)),
        _ => Err(Error::config(format!("line {}: `{key}` expects N or MIN:MAX", e.line))),
    }
}

/// Keys resolved after all others, so their position in the file does not matter.
#[derive(Default)]
struct Pending {
    head: Option<Head>,
    weighted: Option<bool>,
}

const SECTIONS: [&str; 4] = ["scene", "network", "train", "activation"];

impl ExperimentConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let cfg = Self::parse_unchecked(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without the cross-field checks of [`ExperimentConfig::validate`].
    pub(crate) fn parse_unchecked(text: &str) -> Result<Self> {
        let mut sections: HashMap<&str, HashMap<String, Entry>> = HashMap::new();
        let mut current: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(format!("line {line_no}: unterminated section header")))?
                    .trim();
                current = Some(
                    SECTIONS
                        .iter()
                        .find(|s| **s == name)
                        .copied()
                        .ok_or_else(|| Error::config(format!("line {line_no}: unknown section [{name}]")))?,
                );
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {line_no}: expected `key = value`")))?;
            let section = current
                .ok_or_else(|| Error::config(format!("line {line_no}: key outside of any section")))?;
            let key = key.trim().to_string();
            let entry = Entry {
                line: line_no,
                value: value.trim().to_string(),
            };
            if let Some(prev) = sections.entry(section).or_default().insert(key.clone(), entry) {
                return Err(Error::config(format!(
                    "line {line_no}: duplicate key `{key}` (first set on line {})",
                    prev.line
                )));
            }
        }
        let mut cfg = Self::default();
        let mut pending = Pending::default();
        let mut ordered: Vec<(&str, &String, &Entry)> = sections
            .iter()
            .flat_map(|(section, entries)| entries.iter().map(move |(k, e)| (*section, k, e)))
            .collect();
        ordered.sort_by_key(|(_, _, e)| e.line);
        for (section, key, e) in ordered {
            cfg.apply(section, key, e, &mut pending)?;
        }
        if let Some(w) = pending.weighted {
            cfg.method.weighted = w;
        }
        let head = pending.head;
        cfg.network.m = cfg.scene.m;
        cfg.activation.m = cfg.scene.m;
        let wanted = cfg.method.head();
        match head {
            Some(h) if h != wanted => {
                return Err(Error::config(format!(
                    "loss = {} cannot use head = {h}: loss softmax-ce requires head softmax and every other loss requires head multilevel",
                    cfg.method.loss
                )));
            }
            _ => cfg.network.head = wanted,
        }
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, e: &Entry, pending: &mut Pending) -> Result<()> {
        let s = &mut self.scene;
        match (section, key) {
            ("scene", "height") => s.height = parse_value(key, e)?,
            ("scene", "width") => s.width = parse_value(key, e)?,
            ("scene", "m") => s.m = parse_value(key, e)?,
            ("scene", "blobs_per_image") => s.blobs_per_image = parse_range(key, e)?,
            ("scene", "children_per_blob") => s.children_per_blob = parse_range(key, e)?,
            ("scene", "radius_range") => {
                s.radius_range = e
                    .value
                    .split(',')
                    .map(|r| {
                        let p: Vec<&str> = r.split(':').map(str::trim).collect();
                        match p.as_slice() {
                            [lo, hi] => Ok((lo.parse::<f64>(), hi.parse::<f64>())),
                            _ => Err(()),
                        }
                    })
                    .map(|r| match r {
                        Ok((Ok(lo), Ok(hi))) => Ok((lo, hi)),
                        _ => Err(Error::config(format!(
                            "line {}: radius_range expects LO:HI per level, comma separated",
                            e.line
                        ))),
                    })
                    .collect::<Result<_>>()?
            }
            ("scene", "intensity") => s.intensity = parse_list(key, e)?,
            ("scene", "noise_sigma") => s.noise_sigma = parse_value(key, e)?,
            ("scene", "jitter") => s.jitter = parse_value(key, e)?,
            ("scene", "margin") => s.margin = parse_value(key, e)?,
            ("scene", "border_guard") => s.border_guard = parse_value(key, e)?,
            ("network", "depth") => self.network.depth = parse_value(key, e)?,
            ("network", "base_channels") => self.network.base_channels = parse_value(key, e)?,
            ("network", "head") => {
                pending.head = match e.value.as_str() {
                    "auto" => None,
                    v => Some(v.parse().map_err(|err| Error::config(format!("line {}: {err}", e.line)))?),
                }
            }
            ("activation", "h") => self.activation.h = parse_value(key, e)?,
            ("activation", "kappa") => self.activation.kappa = parse_value(key, e)?,
            ("activation", "t") => self.activation.t = parse_value(key, e)?,
            ("train", "loss") => self.method = parse_value(key, e)?,
            ("train", "class_weights") => pending.weighted = Some(parse_bool(key, e)?),
            ("train", "methods") => self.methods = parse_list(key, e)?,
            ("train", "iterations") => self.iterations = parse_value(key, e)?,
            ("train", "batch_size") => self.batch_size = parse_value(key, e)?,
            ("train", "eval_every") => self.eval_every = parse_value(key, e)?,
            ("train", "learning_rate") => self.learning_rate = parse_value(key, e)?,
            ("train", "k_folds") => self.k_folds = parse_value(key, e)?,
            ("train", "n_images") => self.n_images = parse_value(key, e)?,
            ("train", "fold") => self.fold = parse_value(key, e)?,
            ("train", "threshold_grid") => {
                self.threshold_grid = match e.value.as_str() {
                    "auto" => None,
                    _ => match parse_triple(key, e)?.as_slice() {
                        &[lo, hi, step] => Some(GridSpec { lo, hi, step }),
                        _ => {
                            return Err(Error::config(format!(
                                "line {}: threshold_grid expects LO:HI:STEP or auto",
                                e.line
                            )))
                        }
                    },
                }
            }
            ("train", "seed") => self.master_seed = parse_value(key, e)?,
            ("train", "output_dir") => self.output_dir = PathBuf::from(&e.value),
            ("train", "augment") => self.augment.enabled = parse_bool(key, e)?,
            ("train", "flips") => self.augment.flips = parse_bool(key, e)?,
            ("train", "rotate") => self.augment.rotate = parse_bool(key, e)?,
            ("train", "max_shift") => self.augment.max_shift = parse_value(key, e)?,
            ("train", "max_scale") => self.augment.max_scale = parse_value(key, e)?,
            _ => {
                return Err(Error::config(format!(
                    "line {}: unknown key `{key}` in [{section}]",
                    e.line
                )))
            }
        }
        Ok(())
    }

    /// Checks every cross-field invariant.
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.network.validate()?;
        self.activation.validate()?;
        self.augment.validate()?;
        self.network.check_spatial(self.scene.height, self.scene.width)
            .map_err(|e| Error::config(e.to_string()))?;
        if self.network.m != self.scene.m || self.activation.m != self.scene.m {
            return Err(Error::config("scene, network and activation must share m"));
        }
        if self.network.head != self.method.head() {
            return Err(Error::config(format!(
                "loss = {} cannot use head = {}: loss softmax-ce requires head softmax and every other loss requires head multilevel",
                self.method.loss, self.network.head
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size >= 1"));
        }
        if self.eval_every < 1 || self.iterations % self.eval_every != 0 {
            return Err(Error::config(format!(
                "eval_every must be positive and divide iterations (eval_every = {}, iterations = {})",
                self.eval_every, self.iterations
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate > 0"));
        }
        if self.k_folds < 2 || self.n_images % self.k_folds != 0 {
            return Err(Error::config(format!(
                "k_folds must be at least 2 and divide n_images (k_folds = {}, n_images = {})",
                self.k_folds, self.n_images
            )));
        }
        if self.n_images / self.k_folds < 2 {
            return Err(Error::config("n_images / k_folds >= 2 so that validation is not empty"));
        }
        if self.fold >= self.k_folds {
            return Err(Error::config("fold < k_folds"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods must not be empty"));
        }
        let m = self.scene.m as f64;
        let grid = self.grid();
        let bottom = if self.scene.m >= 2 { m - 1.5 } else { 0.0 };
        if !(grid.step > 0.0 && grid.lo <= grid.hi && grid.lo > bottom && grid.hi < m) {
            return Err(Error::config(format!(
                "threshold_grid must satisfy {bottom} < lo <= hi < {m} and step > 0"
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        self.threshold_grid.unwrap_or_else(|| GridSpec::auto(self.scene.m))
    }

    /// Complete configuration in the text format.
    pub fn to_ini(&self) -> String {
        let s = &self.scene;
        let ranges: Vec<String> = s.radius_range.iter().map(|(lo, hi)| format!("{lo}:{hi}")).collect();
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let methods: Vec<String> = self.methods.iter().map(Method::name).collect();
        let mut out = String::new();
        let _ = writeln!(out, "[scene]");
        let _ = writeln!(out, "height = {}", s.height);
        let _ = writeln!(out, "width = {}", s.width);
        let _ = writeln!(out, "m = {}", s.m);
        let _ = writeln!(out, "blobs_per_image = {}:{}", s.blobs_per_image.0, s.blobs_per_image.1);
        let _ = writeln!(out, "children_per_blob = {}:{}", s.children_per_blob.0, s.children_per_blob.1);
        let _ = writeln!(out, "# level 1 relative to min(height, width), deeper levels relative to the parent radius");
        let _ = writeln!(out, "radius_range = {}", ranges.join(", "));
        let _ = writeln!(out, "intensity = {}", list(&s.intensity));
        let _ = writeln!(out, "noise_sigma = {}", s.noise_sigma);
        let _ = writeln!(out, "jitter = {}", s.jitter);
        let _ = writeln!(out, "margin = {}", s.margin);
        let _ = writeln!(out, "border_guard = {}", s.border_guard);
        let _ = writeln!(out, "\n[network]");
        let _ = writeln!(out, "depth = {}", self.network.depth);
        let _ = writeln!(out, "base_channels = {}", self.network.base_channels);
        let _ = writeln!(out, "# auto, multilevel or softmax; softmax-ce needs softmax, the other losses multilevel");
        let _ = writeln!(out, "head = {}", self.network.head);
        let _ = writeln!(out, "\n[activation]");
        let _ = writeln!(out, "h = {}", self.activation.h);
        let _ = writeln!(out, "kappa = {}", self.activation.kappa);
        let _ = writeln!(out, "t = {}", self.activation.t);
        let _ = writeln!(out, "\n[train]");
        let _ = writeln!(out, "# sse, mce, nce, softmax-ce, mce-unweighted or nce-weighted");
        let _ = writeln!(out, "loss = {}", self.method.loss);
        let _ = writeln!(out, "class_weights = {}", self.method.weighted);
        let _ = writeln!(out, "methods = {}", methods.join(", "));
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "eval_every = {}", self.eval_every);
        let _ = writeln!(out, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(out, "k_folds = {}", self.k_folds);
        let _ = writeln!(out, "n_images = {}", self.n_images);
        let _ = writeln!(out, "fold = {}", self.fold);
        match self.threshold_grid {
            Some(g) => {
                let _ = writeln!(out, "threshold_grid = {g}");
            }
            None => {
                let _ = writeln!(out, "# LO:HI:STEP for the top threshold, or auto ({})", GridSpec::auto(s.m));
                let _ = writeln!(out, "threshold_grid = auto");
            }
        }
        let _ = writeln!(out, "seed = {}", self.master_seed);
        let _ = writeln!(out, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(out, "augment = {}", self.augment.enabled);
        let _ = writeln!(out, "flips = {}", self.augment.flips);
        let _ = writeln!(out, "rotate = {}", self.augment.rotate);
        let _ = writeln!(out, "max_shift = {}", self.augment.max_shift);
        let _ = writeln!(out, "max_scale = {}", self.augment.max_scale);
        out
    }
}
