//! Plain-text run configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Recognized keys
//! and their defaults:
//!
//! | key | default |
//! |-----|---------|
//! | `edges` | none |
//! | `dataset` | none |
//! | `slots` | 1 |
//! | `undirected` | true |
//! | `binarize` | true |
//! | `k_hops` | 2 |
//! | `layers` | 2 |
//! | `dim` | 32 |
//! | `lr` | 0.01 |
//! | `beta` | 0.001 |
//! | `transform` | identity |
//! | `seed` | 0 |
//! | `neg_ratio` | 1 |
//! | `epochs` | 300 |
//! | `patience` | 10 |
//! | `threshold` | 0.5 |
//! | `out` | `out` |

use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

pub const KEYS: [&str; 17] = [
    "edges",
    "dataset",
    "slots",
    "undirected",
    "binarize",
    "k_hops",
    "layers",
    "dim",
    "lr",
    "beta",
    "transform",
    "seed",
    "neg_ratio",
    "epochs",
    "patience",
    "threshold",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub edges: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub slots: usize,
    pub undirected: bool,
    pub binarize: bool,
    pub out: PathBuf,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            edges: None,
            dataset: None,
            slots: 1,
            undirected: true,
            binarize: true,
            out: PathBuf::from("out"),
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| Error::Config {
        key: key.to_string(),
        msg: format!("invalid value {value:?}: {e}"),
    })
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "edges" => self.edges = Some(PathBuf::from(value)),
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "slots" => self.slots = parse(key, value)?,
            "undirected" => self.undirected = parse(key, value)?,
            "binarize" => self.binarize = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "k_hops" => t.hops = parse(key, value)?,
            "layers" => t.layers = parse(key, value)?,
            "dim" => t.dim = parse(key, value)?,
            "lr" => t.learning_rate = parse(key, value)?,
            "beta" => t.beta = parse(key, value)?,
            "transform" => t.transform = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "neg_ratio" => t.neg_ratio = parse(key, value)?,
            "epochs" => t.max_epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "threshold" => t.threshold = parse(key, value)?,
            _ => {
                return Err(Error::Config {
                    key: key.to_string(),
                    msg: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                msg: format!("line {}: expected `key = value`", n + 1),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    key: key.to_string(),
                    msg: format!("line {}: duplicate key", n + 1),
                });
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::Config {
                key: "slots".into(),
                msg: "must be at least 1".into(),
            });
        }
        self.train.validate()
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        if let Some(p) = &self.edges {
            s += &format!("edges = {}\n", p.display());
        }
        if let Some(p) = &self.dataset {
            s += &format!("dataset = {}\n", p.display());
        }
        s += &format!(
            "slots = {}\nundirected = {}\nbinarize = {}\nk_hops = {}\nlayers = {}\ndim = {}\nlr = {}\nbeta = {}\n\
             transform = {}\nseed = {}\nneg_ratio = {}\nepochs = {}\npatience = {}\nthreshold = {}\nout = {}\n",
            self.slots,
            self.undirected,
            self.binarize,
            t.hops,
            t.layers,
            t.dim,
            t.learning_rate,
            t.beta,
            t.transform,
            t.seed,
            t.neg_ratio,
            t.max_epochs,
            t.patience,
            t.threshold,
            self.out.display()
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TransformKind;

    #[test]
    fn missing_keys_take_defaults() {
        let c = RunConfig::parse_str("# nothing\n\n").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.dim, 32);
        assert_eq!(c.train.layers, 2);
        assert_eq!(c.train.hops, 2);
    }

    #[test]
    fn values_are_parsed() {
        let c = RunConfig::parse_str(
            "lr = 0.05\ntransform = dct # mixing\nslots=8\nundirected = false\n",
        )
        .unwrap();
        assert_eq!(c.train.learning_rate, 0.05);
        assert_eq!(c.train.transform, TransformKind::Dct2);
        assert_eq!(c.slots, 8);
        assert!(!c.undirected);
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        assert!(
            matches!(RunConfig::parse_str("learning_rate = 1"), Err(Error::Config { key, .. }) if key == "learning_rate")
        );
        assert!(
            matches!(RunConfig::parse_str("lr = fast"), Err(Error::Config { key, .. }) if key == "lr")
        );
        assert!(RunConfig::parse_str("lr 0.1").is_err());
        assert!(RunConfig::parse_str("lr = 0.1\nlr = 0.2").is_err());
    }

    #[test]
    fn invalid_learning_rate_names_key() {
        let c = RunConfig::parse_str("lr = 0").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "lr"));
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("edges", "a.txt").unwrap();
        c.set("beta", "0.0005").unwrap();
        c.set("transform", "dct").unwrap();
        assert_eq!(RunConfig::parse_str(&c.to_text()).unwrap(), c);
        for k in KEYS {
            assert!(c.to_text().contains(k) || k == "dataset", "{k}");
        }
    }
}
