//! Synthetic hierarchically structured stimuli.
//!
//! Stimuli are drawn from a two-level Gaussian hierarchy that mirrors the
//! taxonomy: each basic category has a prototype vector, each subordinate's
//! prototype is a Gaussian offset from its basic prototype, and each stimulus
//! is its subordinate prototype plus isotropic noise. Separation between the
//! three scales is controlled by `sigma_basic`, `sigma_sub` and `sigma_noise`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{hash64, Rng};
use crate::taxonomy::Taxonomy;

/// Generation parameters. `seed` fixes the full byte content of the output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenConfig {
    pub input_dim: usize,
    pub sigma_basic: f64,
    pub sigma_sub: f64,
    pub sigma_noise: f64,
    pub per_sub: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            input_dim: 32,
            sigma_basic: 4.0,
            sigma_sub: 1.0,
            sigma_noise: 0.5,
            per_sub: 40,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.per_sub == 0 {
            return Err(Error::InvalidConfig("per_sub must be >= 1".into()));
        }
        for (name, v) in [
            ("sigma_basic", self.sigma_basic),
            ("sigma_sub", self.sigma_sub),
            ("sigma_noise", self.sigma_noise),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.sigma_sub >= self.sigma_basic {
            eprintln!(
                "warning: sigma_sub ({}) >= sigma_basic ({}); subordinate clusters may not nest inside basic clusters",
                self.sigma_sub, self.sigma_basic
            );
        }
        Ok(())
    }
}

/// Prototype vectors indexed by taxonomy order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub basic: Vec<Vec<f64>>,
    pub sub: Vec<Vec<f64>>,
}

/// A labeled stimulus set. `basic_labels[i]` always equals the taxonomy
/// parent of `sub_labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub stimuli: Vec<Vec<f64>>,
    pub sub_labels: Vec<usize>,
    pub basic_labels: Vec<usize>,
    pub taxonomy: Taxonomy,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.stimuli.first().map_or(0, Vec::len)
    }

    /// New dataset restricted to the given stimulus indices (order kept).
    fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            stimuli: indices.iter().map(|&i| self.stimuli[i].clone()).collect(),
            sub_labels: indices.iter().map(|&i| self.sub_labels[i]).collect(),
            basic_labels: indices.iter().map(|&i| self.basic_labels[i]).collect(),
            taxonomy: self.taxonomy.clone(),
        }
    }

    /// Writes the `sub,basic,f0..f{D-1}` CSV. Floats use Rust's shortest
    /// round-trip formatting, so reading the file back is bit-exact.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let dim = self.dim();
        let mut out = String::from("sub,basic");
        for d in 0..dim {
            out.push_str(&format!(",f{d}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.taxonomy.subs()[self.sub_labels[i]]);
            out.push(',');
            out.push_str(&self.taxonomy.basics()[self.basic_labels[i]]);
            for v in &self.stimuli[i] {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads a dataset CSV written by [`Dataset::write_csv`] and checks label
    /// consistency against `taxonomy`.
    pub fn read_csv(path: &Path, taxonomy: &Taxonomy) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let display = path.display().to_string();
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(&display, "empty file"))?;
        if !header.starts_with("sub,basic") {
            return Err(Error::parse(&display, "expected header `sub,basic,f0..`"));
        }
        let dim = header.split(',').count() - 2;
        let mut stimuli = Vec::new();
        let mut sub_labels = Vec::new();
        let mut basic_labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::parse(
                    &display,
                    format!("line {}: expected {} fields", lineno + 2, dim + 2),
                ));
            }
            let sub = taxonomy.sub_index(fields[0])?;
            let basic = taxonomy.basic_index(fields[1])?;
            if taxonomy.parent_of(sub) != basic {
                return Err(Error::parse(
                    &display,
                    format!("line {}: basic label is not the parent of the sub label", lineno + 2),
                ));
            }
            let mut row = Vec::with_capacity(dim);
            for f in &fields[2..] {
                row.push(f.parse::<f64>().map_err(|e| {
                    Error::parse(&display, format!("line {}: {e}", lineno + 2))
                })?);
            }
            stimuli.push(row);
            sub_labels.push(sub);
            basic_labels.push(basic);
        }
        Ok(Dataset {
            stimuli,
            sub_labels,
            basic_labels,
            taxonomy: taxonomy.clone(),
        })
    }
}

/// Draws basic prototypes i.i.d. from N(0, sigma_basic^2 I) and subordinate
/// prototypes as their parent's prototype plus a N(0, sigma_sub^2 I) offset.
/// Basics are consumed in sorted index order, then subordinates, so the
/// stream layout is stable.
pub fn sample_prototypes(t: &Taxonomy, cfg: &GenConfig) -> Result<PrototypeSet> {
    cfg.validate()?;
    let mut rng = Rng::seed_from(hash64(cfg.seed, "prototypes", 0));
    let basic: Vec<Vec<f64>> = (0..t.n_basics())
        .map(|_| (0..cfg.input_dim).map(|_| cfg.sigma_basic * rng.normal()).collect())
        .collect();
    let sub: Vec<Vec<f64>> = (0..t.n_subs())
        .map(|s| {
            let parent = &basic[t.parent_of(s)];
            (0..cfg.input_dim)
                .map(|d| parent[d] + cfg.sigma_sub * rng.normal())
                .collect()
        })
        .collect();
    Ok(PrototypeSet { basic, sub })
}

/// Draws `per_sub` stimuli per subordinate around its prototype with
/// N(0, sigma_noise^2 I) noise. Subordinates are visited in sorted index
/// order; stimuli appear grouped by subordinate.
pub fn sample_stimuli(protos: &PrototypeSet, t: &Taxonomy, cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    if protos.sub.len() != t.n_subs() || protos.basic.len() != t.n_basics() {
        return Err(Error::ShapeMismatch(format!(
            "prototype set has {} basics / {} subs, taxonomy has {} / {}",
            protos.basic.len(),
            protos.sub.len(),
            t.n_basics(),
            t.n_subs()
        )));
    }
    let mut rng = Rng::seed_from(hash64(cfg.seed, "stimuli", 0));
    let n = cfg.per_sub * t.n_subs();
    let mut stimuli = Vec::with_capacity(n);
    let mut sub_labels = Vec::with_capacity(n);
    let mut basic_labels = Vec::with_capacity(n);
    for s in 0..t.n_subs() {
        let proto = &protos.sub[s];
        let basic = t.parent_of(s);
        for _ in 0..cfg.per_sub {
            let x: Vec<f64> = (0..cfg.input_dim)
                .map(|d| proto[d] + cfg.sigma_noise * rng.normal())
                .collect();
            stimuli.push(x);
            sub_labels.push(s);
            basic_labels.push(basic);
        }
    }
    Ok(Dataset {
        stimuli,
        sub_labels,
        basic_labels,
        taxonomy: t.clone(),
    })
}

/// One-call generator: prototypes then stimuli.
pub fn generate(t: &Taxonomy, cfg: &GenConfig) -> Result<Dataset> {
    let protos = sample_prototypes(t, cfg)?;
    sample_stimuli(&protos, t, cfg)
}

/// Moves exactly `holdout_per_sub` stimuli per subordinate into the test set.
/// The partition is disjoint, exhaustive, and deterministic given `seed`;
/// original stimulus order is kept within each side.
pub fn split(d: &Dataset, holdout_per_sub: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = Rng::seed_from(hash64(seed, "split", 0));
    let mut by_sub: Vec<Vec<usize>> = vec![Vec::new(); d.taxonomy.n_subs()];
    for (i, &s) in d.sub_labels.iter().enumerate() {
        by_sub[s].push(i);
    }
    let mut test_marks = vec![false; d.len()];
    for (s, indices) in by_sub.iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        if holdout_per_sub >= indices.len() {
            return Err(Error::InsufficientStimuli {
                sub: d.taxonomy.subs()[s].clone(),
                available: indices.len(),
                requested: holdout_per_sub,
            });
        }
        for pick in rng.choose_distinct(indices.len(), holdout_per_sub) {
            test_marks[indices[pick]] = true;
        }
    }
    let train_idx: Vec<usize> = (0..d.len()).filter(|&i| !test_marks[i]).collect();
    let test_idx: Vec<usize> = (0..d.len()).filter(|&i| test_marks[i]).collect();
    Ok((d.select(&train_idx), d.select(&test_idx)))
}
