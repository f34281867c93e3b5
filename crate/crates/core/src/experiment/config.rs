//! Experiment configuration files: one `section.key = value` per line, `#`
//! starts a comment. Every key is optional and defaults to the desk-scale
//! setup; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adapter::{AdapterPosition, AdapterVariant, BlockSet};
use crate::error::{Error, Result};
use crate::tensor::Activation;
use crate::train::{FreezeMode, SynthSpec, TrainConfig};
use crate::vit::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub clips_per_class: usize,
    /// Size of a separately drawn evaluation set; 0 evaluates on the
    /// training clips.
    pub eval_clips_per_class: usize,
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            clips_per_class: 40,
            eval_clips_per_class: 0,
            noise: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub mode: FreezeMode,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::desk(),
            mode: FreezeMode::Adapter,
            train: TrainConfig {
                lr: 1e-3,
                epochs: 30,
                ..TrainConfig::default()
            },
            data: DataConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_kernel(key: &str, value: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = value.split(['x', ',']).map(str::trim).collect();
    let bad = || Error::Config(format!("{key}: expected three extents like 3x3x3, got '{value}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut k = [0; 3];
    for (slot, p) in k.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|_| bad())?;
    }
    Ok(k)
}

fn parse_activation(key: &str, value: &str) -> Result<Activation> {
    match value {
        "gelu" => Ok(Activation::Gelu),
        "relu" => Ok(Activation::Relu),
        "identity" => Ok(Activation::Identity),
        _ => Err(Error::Config(format!(
            "{key}: unknown activation '{value}' (gelu, relu, identity)"
        ))),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Gelu => "gelu",
        Activation::Relu => "relu",
        Activation::Identity => "identity",
    }
}

/// Re-tags a validation error with the key it came from.
fn keyed<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{key}: {m}")),
        other => other,
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    n + 1
                )));
            };
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Sets one key. Values are checked individually here; cross-field
    /// constraints are checked by [`ExperimentConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let a = &mut m.adapter;
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "model.frames" => m.frames = parse_value(key, value)?,
            "model.height" => m.height = parse_value(key, value)?,
            "model.width" => m.width = parse_value(key, value)?,
            "model.patch" => m.patch = parse_value(key, value)?,
            "model.hidden" => m.hidden = parse_value(key, value)?,
            "model.depth" => m.depth = parse_value(key, value)?,
            "model.heads" => m.heads = parse_value(key, value)?,
            "model.mlp_ratio" => m.mlp_ratio = parse_value(key, value)?,
            "model.classes" => m.classes = parse_value(key, value)?,
            "adapter.variant" => a.variant = keyed(key, value.parse::<AdapterVariant>())?,
            "adapter.bottleneck" => a.bottleneck = parse_value(key, value)?,
            "adapter.blocks" => a.blocks = keyed(key, value.parse::<BlockSet>())?,
            "adapter.position" => a.position = keyed(key, value.parse::<AdapterPosition>())?,
            "adapter.kernel" => a.kernel = parse_kernel(key, value)?,
            "adapter.activation" => a.activation = parse_activation(key, value)?,
            "train.mode" => self.mode = keyed(key, value.parse::<FreezeMode>())?,
            "train.lr" => t.lr = parse_value(key, value)?,
            "train.min_lr" => t.min_lr = parse_value(key, value)?,
            "train.weight_decay" => t.weight_decay = parse_value(key, value)?,
            "train.batch" => t.batch = parse_value(key, value)?,
            "train.epochs" => t.epochs = parse_value(key, value)?,
            "train.seed" => t.seed = parse_value(key, value)?,
            "train.eval_every" => t.eval_every = parse_value(key, value)?,
            "train.target_war" => {
                t.target_war = match value {
                    "none" | "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "data.clips_per_class" => d.clips_per_class = parse_value(key, value)?,
            "data.eval_clips_per_class" => d.eval_clips_per_class = parse_value(key, value)?,
            "data.noise" => d.noise = parse_value(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mode.check(&self.model.adapter, self.model.depth)?;
        self.train.validate()?;
        if self.data.clips_per_class == 0 {
            return Err(Error::Config("data.clips_per_class must be at least 1".into()));
        }
        if !(self.data.noise >= 0.0 && self.data.noise.is_finite()) {
            return Err(Error::Config(format!(
                "data.noise must be >= 0, got {}",
                self.data.noise
            )));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal configuration.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let a = &m.adapter;
        let t = &self.train;
        let d = &self.data;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model.frames", m.frames.to_string());
        kv("model.height", m.height.to_string());
        kv("model.width", m.width.to_string());
        kv("model.patch", m.patch.to_string());
        kv("model.hidden", m.hidden.to_string());
        kv("model.depth", m.depth.to_string());
        kv("model.heads", m.heads.to_string());
        kv("model.mlp_ratio", m.mlp_ratio.to_string());
        kv("model.classes", m.classes.to_string());
        kv("adapter.variant", a.variant.to_string());
        kv("adapter.bottleneck", a.bottleneck.to_string());
        kv("adapter.blocks", a.blocks.to_string());
        kv("adapter.position", a.position.to_string());
        kv(
            "adapter.kernel",
            format!("{}x{}x{}", a.kernel[0], a.kernel[1], a.kernel[2]),
        );
        kv("adapter.activation", activation_name(a.activation).into());
        kv("train.mode", self.mode.to_string());
        kv("train.lr", format!("{:?}", t.lr));
        kv("train.min_lr", format!("{:?}", t.min_lr));
        kv("train.weight_decay", format!("{:?}", t.weight_decay));
        kv("train.batch", t.batch.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.eval_every", t.eval_every.to_string());
        kv(
            "train.target_war",
            t.target_war.map_or("none".into(), |w| format!("{w:?}")),
        );
        kv("data.clips_per_class", d.clips_per_class.to_string());
        kv("data.eval_clips_per_class", d.eval_clips_per_class.to_string());
        kv("data.noise", format!("{:?}", d.noise));
        kv("output.dir", self.output_dir.display().to_string());
        s
    }

    fn synth(&self, clips_per_class: usize) -> SynthSpec {
        let m = &self.model;
        SynthSpec {
            noise: self.data.noise,
            ..SynthSpec::new(m.classes, clips_per_class, m.frames, m.height, m.width)
        }
    }

    pub fn train_data(&self) -> SynthSpec {
        self.synth(self.data.clips_per_class)
    }

    /// `None` when evaluation reuses the training clips.
    pub fn eval_data(&self) -> Option<SynthSpec> {
        (self.data.eval_clips_per_class > 0)
            .then(|| self.synth(self.data.eval_clips_per_class).split("eval"))
    }
}
