//! Plain-text `key = value` configuration with `[section]` headers.
//!
//! The format is deliberately trivial to parse from any language: `#` starts
//! a comment, sections group keys, and repeated `[site.X]` sections describe
//! the synthetic sites.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use fedpoint_core::model::{ModelConfig, PositionMode, SamplingMode};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Raw parsed file: ordered section list, each with its key/value pairs.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    sections: Vec<(String, BTreeMap<String, String>)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: Vec<(String, BTreeMap<String, String>)> = Vec::new();
        let mut current = String::from("");
        sections.push((current.clone(), BTreeMap::new()));
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(i) => &raw_line[..i],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError(format!("line {}: unterminated section", lineno + 1)))?
                    .trim();
                current = name.to_string();
                sections.push((current.clone(), BTreeMap::new()));
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("line {}: expected `key = value`, got {line:?}", lineno + 1))
            })?;
            let section = sections
                .iter_mut()
                .rev()
                .find(|(n, _)| *n == current)
                .expect("current section exists");
            section.1.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(RawConfig { sections })
    }

    fn section(&self, name: &str) -> Option<&BTreeMap<String, String>> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.section(section).and_then(|m| m.get(key)).map(|s| s.as_str())
    }

    fn required(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key)
            .ok_or_else(|| ConfigError(format!("missing key `{key}` in section [{section}]")))
    }

    fn parse_as<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(s) => s.parse::<T>().map(Some).map_err(|_| {
                ConfigError(format!("key `{key}` in [{section}]: cannot parse {s:?}"))
            }),
        }
    }

    fn get_or<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.parse_as(section, key)?.unwrap_or(default))
    }

    /// Site sections, in file order.
    fn site_sections(&self) -> Vec<(&str, &BTreeMap<String, String>)> {
        self.sections
            .iter()
            .filter_map(|(n, m)| n.strip_prefix("site.").map(|s| (s, m)))
            .collect()
    }
}

/// One site's recipe as configured.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteConfig {
    pub name: String,
    pub gamma: f64,
    pub n_slides: usize,
    pub points_min: usize,
    pub points_max: usize,
    pub shift_norm: f64,
    /// Unseen sites are excluded from training and used only for the
    /// generalization evaluation.
    pub unseen: bool,
}

/// Everything a run needs: model, federation, data recipe, paths and seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,

    pub model: ModelConfig,

    pub epochs: usize,
    pub pace: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub bn_batch: usize,
    pub dda: bool,
    pub train_fraction: f64,
    pub split_seed: u64,

    pub feature_dim: usize,
    /// Norm of the global background feature direction shared by all sites.
    pub base_norm: f64,
    pub noise_sigma: f64,
    pub signal_strength: f64,
    pub cluster_radius: f64,
    pub clusters_min: usize,
    pub clusters_max: usize,
    pub sites: Vec<SiteConfig>,
}

pub const ALLOWED_TRAIN_FRACTIONS: [f64; 4] = [1.0, 0.75, 0.5, 0.25];

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let raw = RawConfig::parse(text)?;

        let sampling = match raw.get("model", "sampling").unwrap_or("fcs") {
            "fcs" => SamplingMode::Fcs,
            "fps" => SamplingMode::Fps,
            other => return Err(ConfigError(format!("unknown sampling mode {other:?}"))),
        };
        let position_mode = match raw.get("model", "position").unwrap_or("real") {
            "real" => PositionMode::Real,
            "zero" => PositionMode::AllZero,
            "one" => PositionMode::AllOne,
            other => return Err(ConfigError(format!("unknown position mode {other:?}"))),
        };
        let w_q_single_linear = match raw.get("model", "wq").unwrap_or("mlp") {
            "mlp" => false,
            "linear" => true,
            other => return Err(ConfigError(format!("unknown wq realization {other:?}"))),
        };
        let feature_dim = raw.get_or("data", "feature_dim", 8usize)?;
        let model = ModelConfig {
            n_points: raw.get_or("model", "n_points", 256usize)?,
            d_in: feature_dim,
            base_width: raw.get_or("model", "base_width", 8usize)?,
            k_neighbors: raw.get_or("model", "k_neighbors", 16usize)?,
            sampling,
            position_mode,
            w_q_single_linear,
        };

        let mut sites = Vec::new();
        for (name, _) in raw.site_sections() {
            let section = format!("site.{name}");
            sites.push(SiteConfig {
                name: name.to_string(),
                gamma: raw
                    .required(&section, "gamma")?
                    .parse()
                    .map_err(|_| ConfigError(format!("bad gamma in [{section}]")))?,
                n_slides: raw
                    .required(&section, "slides")?
                    .parse()
                    .map_err(|_| ConfigError(format!("bad slides in [{section}]")))?,
                points_min: raw.get_or(&section, "points_min", 300usize)?,
                points_max: raw.get_or(&section, "points_max", 900usize)?,
                shift_norm: raw.get_or(&section, "shift_norm", 3.0f64)?,
                unseen: raw.get_or(&section, "unseen", false)?,
            });
        }

        let cfg = RunConfig {
            seed: raw.get_or("run", "seed", 42u64)?,
            out_dir: PathBuf::from(raw.get("run", "out_dir").unwrap_or("runs")),
            data_dir: PathBuf::from(raw.get("data", "dir").unwrap_or("data/synth")),
            model,
            epochs: raw.get_or("fed", "epochs", 200usize)?,
            pace: raw.get_or("fed", "pace", 1usize)?,
            lr: raw.get_or("fed", "lr", 1e-3f64)?,
            warmup_epochs: raw.get_or("fed", "warmup", 10usize)?,
            weight_decay: raw.get_or("fed", "weight_decay", 1e-5f64)?,
            batch_size: raw.get_or("fed", "batch_size", 8usize)?,
            bn_batch: raw.get_or("fed", "bn_batch", 4usize)?,
            dda: matches!(raw.get("fed", "dda").unwrap_or("on"), "on" | "true" | "1"),
            train_fraction: raw.get_or("fed", "train_fraction", 1.0f64)?,
            split_seed: raw.get_or("fed", "split_seed", 0u64)?,
            feature_dim,
            base_norm: raw.get_or("data", "base_norm", 3.0f64)?,
            noise_sigma: raw.get_or("data", "noise_sigma", 1.0f64)?,
            signal_strength: raw.get_or("data", "signal_strength", 2.0f64)?,
            cluster_radius: raw.get_or("data", "cluster_radius", 0.1f64)?,
            clusters_min: raw.get_or("data", "clusters_min", 1usize)?,
            clusters_max: raw.get_or("data", "clusters_max", 3usize)?,
            sites,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model
            .validate()
            .map_err(|e| ConfigError(format!("{e}")))?;
        if !ALLOWED_TRAIN_FRACTIONS
            .iter()
            .any(|&f| (f - self.train_fraction).abs() < 1e-12)
        {
            return Err(ConfigError(format!(
                "train_fraction must be one of {ALLOWED_TRAIN_FRACTIONS:?}, got {}",
                self.train_fraction
            )));
        }
        if self.sites.is_empty() {
            return Err(ConfigError(String::from("no [site.*] sections configured")));
        }
        if self.sites.iter().all(|s| s.unseen) {
            return Err(ConfigError(String::from("every site is marked unseen")));
        }
        if self.epochs == 0 || self.pace == 0 || self.batch_size == 0 {
            return Err(ConfigError(String::from(
                "epochs, pace and batch_size must be positive",
            )));
        }
        for s in &self.sites {
            if s.points_min == 0 || s.points_min > s.points_max {
                return Err(ConfigError(format!(
                    "site {}: bad point range {}..{}",
                    s.name, s.points_min, s.points_max
                )));
            }
        }
        Ok(())
    }

    /// Federated (non-unseen) sites.
    pub fn federated_sites(&self) -> Vec<&SiteConfig> {
        self.sites.iter().filter(|s| !s.unseen).collect()
    }

    /// Key/value echo of every setting, for self-describing output files.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("seed".into(), self.seed.to_string()),
            ("data_dir".into(), self.data_dir.display().to_string()),
            ("n_points".into(), self.model.n_points.to_string()),
            ("d_in".into(), self.model.d_in.to_string()),
            ("base_width".into(), self.model.base_width.to_string()),
            ("k_neighbors".into(), self.model.k_neighbors.to_string()),
            (
                "sampling".into(),
                match self.model.sampling {
                    SamplingMode::Fcs => "fcs".into(),
                    SamplingMode::Fps => "fps".into(),
                },
            ),
            (
                "position".into(),
                match self.model.position_mode {
                    PositionMode::Real => "real".into(),
                    PositionMode::AllZero => "zero".into(),
                    PositionMode::AllOne => "one".into(),
                },
            ),
            (
                "wq".into(),
                if self.model.w_q_single_linear { "linear" } else { "mlp" }.into(),
            ),
            ("epochs".into(), self.epochs.to_string()),
            ("pace".into(), self.pace.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("warmup".into(), self.warmup_epochs.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("dda".into(), if self.dda { "on" } else { "off" }.into()),
            ("train_fraction".into(), self.train_fraction.to_string()),
            ("split_seed".into(), self.split_seed.to_string()),
        ];
        for s in &self.sites {
            kv.push((
                format!("site.{}", s.name),
                format!(
                    "gamma={} slides={} points={}..{} unseen={}",
                    s.gamma, s.n_slides, s.points_min, s.points_max, s.unseen
                ),
            ));
        }
        kv
    }
}

/// A ready-to-edit configuration matching the scaled four-site setup.
pub fn example_config() -> &'static str {
    "\
# fedpoint experiment configuration
[run]
seed = 42
out_dir = runs/demo

[data]
dir = data/synth
feature_dim = 8
base_norm = 3.0
noise_sigma = 0.5
signal_strength = 2.0
cluster_radius = 0.1
clusters_min = 1
clusters_max = 3

[model]
n_points = 256
base_width = 8
k_neighbors = 16
sampling = fcs
position = real
wq = mlp

[fed]
epochs = 60
pace = 1
lr = 1e-3
warmup = 10
weight_decay = 1e-5
batch_size = 8
dda = on
train_fraction = 1.0
split_seed = 0

[site.A]
gamma = 5.7
slides = 98

[site.B]
gamma = 3.1
slides = 110

[site.C]
gamma = 1.9
slides = 63

[site.D]
gamma = 1.5
slides = 64

[site.E]
gamma = 1.1
slides = 24
unseen = true

[site.F]
gamma = 2.2
slides = 28
unseen = true
"
}
