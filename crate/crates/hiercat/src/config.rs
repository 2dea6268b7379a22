//! Declarative experiment configuration.
//!
//! One JSON file drives the whole pipeline. Every module seed is derived
//! from the single master seed as `hash64(master, module-name, index)`
//! (see [`crate::rng::hash64`]), so one number pins every emitted byte.
//! CLI `--set key=value` overrides use dotted paths into the JSON tree.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::GenConfig;
use crate::error::{Error, Result};
use crate::network::{NetConfig, Regime, TrainConfig};
use crate::rng::hash64;
use crate::taxonomy::Taxonomy;

/// FNV-1a over raw bytes; used for config and artifact content hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hex64(x: u64) -> String {
    format!("{x:016x}")
}

/// Where the taxonomy comes from: generated names, inline pairs, or a CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaxonomySpec {
    Synthetic {
        basics: usize,
        subs_per_basic: usize,
    },
    Pairs {
        pairs: Vec<(String, String)>,
    },
    File {
        file: PathBuf,
    },
}

impl TaxonomySpec {
    pub fn resolve(&self) -> Result<Taxonomy> {
        match self {
            TaxonomySpec::Synthetic {
                basics,
                subs_per_basic,
            } => {
                if *basics == 0 || *subs_per_basic == 0 {
                    return Err(Error::InvalidConfig(
                        "synthetic taxonomy needs at least 1 basic and 1 sub per basic".into(),
                    ));
                }
                if *basics > 100 || *subs_per_basic > 100 {
                    return Err(Error::InvalidConfig(
                        "synthetic taxonomy supports at most 100 labels per level".into(),
                    ));
                }
                let pairs: Vec<(String, String)> = (0..*basics)
                    .flat_map(|b| {
                        (0..*subs_per_basic).map(move |s| (format!("b{b:02}s{s:02}"), format!("b{b:02}")))
                    })
                    .collect();
                Taxonomy::build(&pairs)
            }
            TaxonomySpec::Pairs { pairs } => Taxonomy::build(pairs),
            TaxonomySpec::File { file } => Taxonomy::read_csv(file),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub input_dim: usize,
    pub sigma_basic: f64,
    pub sigma_sub: f64,
    pub sigma_noise: f64,
    pub per_sub: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        let g = GenConfig::default();
        GenParams {
            input_dim: g.input_dim,
            sigma_basic: g.sigma_basic,
            sigma_sub: g.sigma_sub,
            sigma_noise: g.sigma_noise,
            per_sub: g.per_sub,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetParams {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub init_scale: f64,
}

impl Default for NetParams {
    fn default() -> Self {
        NetParams {
            hidden: vec![64],
            embedding_dim: 16,
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs_pretrain: usize,
    pub epochs_tune: usize,
    pub batch_size: usize,
    pub alpha: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 0.05,
            epochs_pretrain: 60,
            epochs_tune: 60,
            batch_size: 32,
            alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    /// Emit the 2-D PCA projection CSV.
    pub pca: bool,
    /// Gold similarity CSV over the held-out items; enables the R2 artifact.
    pub gold: Option<PathBuf>,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            pca: true,
            gold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralizationParams {
    pub trials_per_condition: usize,
    /// Emit the example-count-sharpened report.
    pub sharpened: bool,
    /// Also emit the unsharpened report.
    pub unsharpened: bool,
}

impl Default for GeneralizationParams {
    fn default() -> Self {
        GeneralizationParams {
            trials_per_condition: 200,
            sharpened: true,
            unsharpened: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub taxonomy: TaxonomySpec,
    pub gen: GenParams,
    /// Stimuli per subordinate held out of training; this held-out set is
    /// the pool for all analyses and generalization trials.
    pub holdout_per_sub: usize,
    pub net: NetParams,
    pub train: TrainParams,
    pub analysis: AnalysisParams,
    pub generalization: GeneralizationParams,
    pub out_dir: PathBuf,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            taxonomy: TaxonomySpec::Synthetic {
                basics: 6,
                subs_per_basic: 4,
            },
            gen: GenParams::default(),
            holdout_per_sub: 8,
            net: NetParams::default(),
            train: TrainParams::default(),
            analysis: AnalysisParams::default(),
            generalization: GeneralizationParams::default(),
            out_dir: PathBuf::from("out"),
            master_seed: 42,
        }
    }
}

fn regime_index(regime: Regime) -> u64 {
    Regime::ALL.iter().position(|&r| r == regime).unwrap() as u64
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen_config().validate()?;
        if self.holdout_per_sub >= self.gen.per_sub {
            return Err(Error::InvalidConfig(format!(
                "holdout_per_sub ({}) must be below per_sub ({})",
                self.holdout_per_sub, self.gen.per_sub
            )));
        }
        if self.net.embedding_dim == 0 || self.net.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.train.alpha
            )));
        }
        if self.train.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !self.train.learning_rate.is_finite() || self.train.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        self.taxonomy.resolve().map(|_| ())
    }

    /// Hash of the resolved config JSON; stamped into every manifest and
    /// checkpoint. The output directory is excluded: it does not shape the
    /// experiment, and runs into different directories must compare equal.
    pub fn config_hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.out_dir = PathBuf::new();
        let json = serde_json::to_string(&keyed).expect("config serializes");
        hex64(fnv1a64(json.as_bytes()))
    }

    pub fn datagen_seed(&self) -> u64 {
        hash64(self.master_seed, "datagen", 0)
    }

    pub fn split_seed(&self) -> u64 {
        hash64(self.master_seed, "split", 0)
    }

    pub fn net_seed(&self, regime: Regime) -> u64 {
        hash64(self.master_seed, "net", regime_index(regime))
    }

    pub fn train_seed(&self, regime: Regime) -> u64 {
        hash64(self.master_seed, "train", regime_index(regime))
    }

    pub fn generalize_seed(&self, regime: Regime) -> u64 {
        hash64(self.master_seed, "generalize", regime_index(regime))
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            input_dim: self.gen.input_dim,
            sigma_basic: self.gen.sigma_basic,
            sigma_sub: self.gen.sigma_sub,
            sigma_noise: self.gen.sigma_noise,
            per_sub: self.gen.per_sub,
            seed: self.datagen_seed(),
        }
    }

    pub fn net_config(&self, taxonomy: &Taxonomy, regime: Regime) -> NetConfig {
        let mut layer_sizes = Vec::with_capacity(self.net.hidden.len() + 2);
        layer_sizes.push(self.gen.input_dim);
        layer_sizes.extend_from_slice(&self.net.hidden);
        layer_sizes.push(self.net.embedding_dim);
        NetConfig {
            layer_sizes,
            n_basic: taxonomy.n_basics(),
            n_sub: taxonomy.n_subs(),
            init_scale: self.net.init_scale,
            seed: self.net_seed(regime),
        }
    }

    pub fn train_config(&self, regime: Regime) -> TrainConfig {
        TrainConfig {
            regime,
            alpha: self.train.alpha,
            learning_rate: self.train.learning_rate,
            epochs_pretrain: self.train.epochs_pretrain,
            epochs_tune: self.train.epochs_tune,
            batch_size: self.train.batch_size,
            seed: self.train_seed(regime),
        }
    }
}

/// Sets `value` at a dotted `path` inside a JSON tree, creating intermediate
/// objects as needed.
fn set_dotted(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::InvalidConfig(format!("`{path}`: `{key}` is not inside an object"))
        })?;
        if i + 1 == keys.len() {
            obj.insert((*key).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*key).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path has at least one key");
}

/// Loads a config, applies `--set` overrides, then the `--seed` / `--out`
/// flag overrides, and validates the result.
pub fn load_config(
    path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<ExperimentConfig> {
    let mut tree: Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::io(p.display().to_string(), e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(ExperimentConfig::default()).expect("default serializes"),
    };
    for set in sets {
        let (key, raw) = set.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("--set expects key=value, got `{set}`"))
        })?;
        // Values parse as JSON when they can, and fall back to strings.
        let value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
        set_dotted(&mut tree, key, value)?;
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(tree)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = out {
        cfg.out_dir = out.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}
