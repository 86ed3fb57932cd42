//! Flat `key = value` run configuration covering every pipeline stage.
//!
//! Sources are applied in order: built-in defaults, the `--config` file,
//! `WIOPEN_<KEY>` environment variables, then `--key=value` flags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use wiopen_core::data::ClassId;
use wiopen_core::kv::{self, KeyDoc, KvSection};
use wiopen_core::osgr::TrainConfig;
use wiopen_core::preprocess::PreprocessConfig;
use wiopen_core::synth::{SceneConfig, SynthConfig};
use wiopen_core::uncertainty::UncertaintyConfig;
use wiopen_core::{Error, Result};

pub const ENV_PREFIX: &str = "WIOPEN_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Json => "json",
        })
    }
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            _ => Err(Error::InvalidArgument(format!("unknown export format `{s}`"))),
        }
    }
}

const RUN_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "seed", help: "master seed of every random stream" },
    KeyDoc { key: "threads", help: "worker threads, 0 = all cores; never changes results" },
    KeyDoc { key: "known", help: "known class ids, comma-separated" },
    KeyDoc { key: "train_fraction", help: "share of each known class used for training" },
    KeyDoc { key: "format", help: "eval export format: csv or json" },
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub known: Vec<ClassId>,
    pub train_fraction: f64,
    pub format: ExportFormat,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub uncertainty: UncertaintyConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            known: vec![0, 1, 2, 3],
            train_fraction: 0.8,
            format: ExportFormat::Csv,
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn has(keys: &[KeyDoc], key: &str) -> bool {
    keys.iter().any(|k| k.key == key)
}

impl RunConfig {
    /// Every documented key, grouped by section.
    pub fn sections() -> Vec<(&'static str, Vec<KeyDoc>)> {
        vec![
            ("run", RUN_KEYS.to_vec()),
            ("scene", SceneConfig::keys().to_vec()),
            ("synth", SynthConfig::keys().to_vec()),
            ("preprocess", PreprocessConfig::keys().to_vec()),
            ("uncertainty", UncertaintyConfig::keys().to_vec()),
            ("train", TrainConfig::keys().to_vec()),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = kv::value(key, v, "an unsigned integer")?,
            "threads" => self.threads = kv::value(key, v, "an unsigned integer")?,
            "known" => self.known = kv::list(key, v, "class ids")?,
            "train_fraction" => self.train_fraction = kv::value(key, v, "a number in (0, 1)")?,
            "format" => self.format = kv::value(key, v, "csv or json")?,
            _ if has(SynthConfig::keys(), key) || has(SceneConfig::keys(), key) => self.synth.set(key, v)?,
            _ if has(PreprocessConfig::keys(), key) => self.preprocess.set(key, v)?,
            _ if has(UncertaintyConfig::keys(), key) => self.uncertainty.set(key, v)?,
            _ if has(TrainConfig::keys(), key) => self.train.set(key, v)?,
            _ => {
                let all: Vec<KeyDoc> = Self::sections().into_iter().flat_map(|(_, k)| k).collect();
                return Err(kv::unknown_key(key, &all));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("known", kv::join(&self.known)),
            ("train_fraction", kv::float(self.train_fraction)),
            ("format", self.format.to_string()),
        ];
        out.extend(self.synth.entries());
        out.extend(self.preprocess.entries());
        out.extend(self.uncertainty.entries());
        out.extend(self.train.entries());
        out
    }

    /// Entries that can change results; `threads` is left out.
    pub fn result_entries(&self) -> Vec<(&'static str, String)> {
        self.entries().into_iter().filter(|(k, _)| *k != "threads").collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.preprocess.validate()?;
        self.train.validate()?;
        if self.known.len() < 2 {
            return Err(Error::InvalidArgument("`known` needs at least 2 classes".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument("`train_fraction` must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Defaults, then `file`, then `env`, then `flags`.
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply(&kv::parse(&text)?)?;
        }
        let mut from_env: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
            .collect();
        from_env.sort();
        cfg.apply(&from_env)?;
        cfg.apply(flags)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The resolved configuration as a commented `key = value` file.
    pub fn render(&self) -> String {
        let values = self.entries();
        let mut s = String::new();
        for (section, keys) in Self::sections() {
            s.push_str(&format!("# [{section}]\n"));
            for doc in keys {
                let v = values.iter().find(|(k, _)| *k == doc.key).map(|(_, v)| v.as_str()).unwrap_or("");
                s.push_str(&format!("{} = {}  # {}\n", doc.key, v, doc.help));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_unique_and_complete() {
        let mut all: Vec<&str> = RunConfig::sections().iter().flat_map(|(_, k)| k.iter().map(|d| d.key)).collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n, "duplicate key across sections");
        let entries: Vec<&str> = RunConfig::default().entries().into_iter().map(|(k, _)| k).collect();
        for k in &all {
            assert!(entries.contains(k), "{k} has no entry");
        }
        assert_eq!(entries.len(), n);
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "xi = 2\nk = 7\nseed = 1\n").unwrap();
        let env = vec![("WIOPEN_K".to_string(), "9".to_string()), ("HOME".to_string(), "/".to_string())];
        let flags = vec![("xi".to_string(), "3".to_string())];
        let cfg = RunConfig::resolve(Some(&file), env, &flags).unwrap();
        assert_eq!(cfg.train.xi, 3.0);
        assert_eq!(cfg.train.k, 9);
        assert_eq!(cfg.seed, 1);
    }

    #[test]
    fn render_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.set("gamma", "0.1").unwrap();
        cfg.set("classes", "clap,circle").unwrap();
        let mut back = RunConfig::default();
        back.apply(&kv::parse(&cfg.render()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
