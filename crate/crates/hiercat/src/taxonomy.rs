//! Two-level label hierarchy: subordinate labels nested under basic labels.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Immutable two-level taxonomy. Labels are stored sorted, so the
/// label <-> index mapping is stable across runs; all training heads and
/// report tables index labels through this struct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    basics: Vec<String>,
    subs: Vec<String>,
    /// parent[i] = index into `basics` for subordinate `i`.
    parent: Vec<usize>,
}

impl Taxonomy {
    /// Builds a taxonomy from (subordinate, basic) pairs. Duplicate pairs are
    /// allowed; a subordinate mapped to two distinct basics is an error.
    pub fn build(pairs: &[(String, String)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut parent_map: BTreeMap<&str, &str> = BTreeMap::new();
        for (sub, basic) in pairs {
            if let Some(prev) = parent_map.get(sub.as_str()) {
                if *prev != basic.as_str() {
                    return Err(Error::ConflictingParent {
                        sub: sub.clone(),
                        first: (*prev).to_string(),
                        second: basic.clone(),
                    });
                }
            } else {
                parent_map.insert(sub, basic);
            }
        }
        let mut basics: Vec<String> = parent_map.values().map(|b| b.to_string()).collect();
        basics.sort();
        basics.dedup();
        let subs: Vec<String> = parent_map.keys().map(|s| s.to_string()).collect();
        let parent = subs
            .iter()
            .map(|s| {
                let b = parent_map[s.as_str()];
                basics.binary_search_by(|x| x.as_str().cmp(b)).unwrap()
            })
            .collect();
        Ok(Taxonomy {
            basics,
            subs,
            parent,
        })
    }

    pub fn basics(&self) -> &[String] {
        &self.basics
    }

    pub fn subs(&self) -> &[String] {
        &self.subs
    }

    pub fn n_basics(&self) -> usize {
        self.basics.len()
    }

    pub fn n_subs(&self) -> usize {
        self.subs.len()
    }

    pub fn sub_index(&self, sub: &str) -> Result<usize> {
        self.subs
            .binary_search_by(|x| x.as_str().cmp(sub))
            .map_err(|_| Error::UnknownLabel(sub.to_string()))
    }

    pub fn basic_index(&self, basic: &str) -> Result<usize> {
        self.basics
            .binary_search_by(|x| x.as_str().cmp(basic))
            .map_err(|_| Error::UnknownLabel(basic.to_string()))
    }

    /// Basic parent of a subordinate label.
    pub fn basic_of(&self, sub: &str) -> Result<&str> {
        let i = self.sub_index(sub)?;
        Ok(&self.basics[self.parent[i]])
    }

    /// Basic parent by subordinate index.
    pub fn parent_of(&self, sub_index: usize) -> usize {
        self.parent[sub_index]
    }

    /// Subordinate indices belonging to a basic index, ascending.
    pub fn subs_of(&self, basic_index: usize) -> Vec<usize> {
        (0..self.subs.len())
            .filter(|&i| self.parent[i] == basic_index)
            .collect()
    }

    /// Sorted basic labels with at least `min_subs` subordinates. This is the
    /// eligibility filter for the three-example generalization condition.
    pub fn basics_with_min_subs(&self, min_subs: usize) -> Vec<String> {
        assert!(min_subs >= 1);
        let mut counts = vec![0usize; self.basics.len()];
        for &p in &self.parent {
            counts[p] += 1;
        }
        self.basics
            .iter()
            .zip(&counts)
            .filter(|(_, &c)| c >= min_subs)
            .map(|(b, _)| b.clone())
            .collect()
    }

    /// Writes the `sub,basic` CSV described in the file-format docs.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("sub,basic\n");
        for (i, sub) in self.subs.iter().enumerate() {
            out.push_str(sub);
            out.push(',');
            out.push_str(&self.basics[self.parent[i]]);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads a `sub,basic` CSV. Fields must not contain commas or quotes.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let display = path.display().to_string();
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "sub,basic" => {}
            _ => return Err(Error::parse(display, "expected header `sub,basic`")),
        }
        let mut pairs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let (sub, basic) = match (fields.next(), fields.next(), fields.next()) {
                (Some(s), Some(b), None) => (s.trim(), b.trim()),
                _ => {
                    return Err(Error::parse(
                        display,
                        format!("line {}: expected exactly 2 fields", lineno + 2),
                    ))
                }
            };
            if sub.is_empty() || basic.is_empty() || sub.contains('"') || basic.contains('"') {
                return Err(Error::parse(
                    display,
                    format!("line {}: bad label", lineno + 2),
                ));
            }
            pairs.push((sub.to_string(), basic.to_string()));
        }
        Taxonomy::build(&pairs)
    }
}

/// Convenience constructor over string slices, used heavily in tests.
pub fn build_taxonomy(pairs: &[(&str, &str)]) -> Result<Taxonomy> {
    let owned: Vec<(String, String)> = pairs
        .iter()
        .map(|(s, b)| (s.to_string(), b.to_string()))
        .collect();
    Taxonomy::build(&owned)
}
