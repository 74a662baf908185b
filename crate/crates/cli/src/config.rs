//! `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use kcagc::data::{PlantedGraph, SplitStrategy};
use kcagc::federation::AggregationMode;
use kcagc::graph::FilterFamily;
use kcagc::transport::{Backend, NetworkProfile};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Centralized,
    Basic,
    Optimized,
    Tree,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Self::Centralized => "centralized",
            Self::Basic => "basic",
            Self::Optimized => "optimized",
            Self::Tree => "tree",
        }
    }
}

impl FromStr for Protocol {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centralized" => Ok(Self::Centralized),
            "basic" => Ok(Self::Basic),
            "optimized" => Ok(Self::Optimized),
            "tree" => Ok(Self::Tree),
            other => bail!("unknown protocol {other:?} (expected centralized, basic, optimized or tree)"),
        }
    }
}

/// Local cluster count: absolute, or a multiple of the class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalClusters {
    Fixed(usize),
    TimesK(usize),
}

impl LocalClusters {
    pub fn resolve(self, k: usize) -> usize {
        match self {
            Self::Fixed(v) => v,
            Self::TimesK(f) => f * k,
        }
    }
}

impl FromStr for LocalClusters {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = if let Some(f) = s.strip_suffix('k') {
            Self::TimesK(if f.is_empty() { 1 } else { f.parse()? })
        } else {
            Self::Fixed(s.parse()?)
        };
        if matches!(v, Self::Fixed(0) | Self::TimesK(0)) {
            bail!("local cluster count must be positive");
        }
        Ok(v)
    }
}

impl std::fmt::Display for LocalClusters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Fixed(v) => write!(f, "{v}"),
            Self::TimesK(1) => write!(f, "k"),
            Self::TimesK(m) => write!(f, "{m}k"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Directory(PathBuf),
    CoraShaped,
    CiteseerShaped,
    Planted {
        n: usize,
        m: usize,
        k: usize,
        separation: f64,
        sigma: f64,
        graph: PlantedGraph,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    Simulated,
    Wall,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub source: Source,
    /// Seed of synthetic generators.
    pub data_seed: u64,
    pub protocols: Vec<Protocol>,
    pub parties: Vec<usize>,
    pub local_clusters: Vec<LocalClusters>,
    pub filter: FilterFamily,
    pub psi: u32,
    pub max_rounds: usize,
    pub restarts: usize,
    pub seed: u64,
    pub reps: usize,
    pub split: SplitStrategy,
    pub mode: AggregationMode,
    pub row_normalize: bool,
    pub network: NetworkProfile,
    pub backend: Backend,
    pub privacy: bool,
    pub timing: Timing,
    /// Canonical `key=value` lines after defaults and overrides.
    canonical: BTreeMap<String, String>,
}

const KEYS: &[&str] = &[
    "dataset",
    "synthetic",
    "data_seed",
    "planted.n",
    "planted.m",
    "planted.k",
    "planted.separation",
    "planted.sigma",
    "planted.graph",
    "protocols",
    "parties",
    "local_clusters",
    "filter",
    "psi",
    "max_rounds",
    "restarts",
    "seed",
    "reps",
    "split",
    "mode",
    "row_normalize",
    "network",
    "backend",
    "privacy",
    "timing",
];

fn defaults() -> BTreeMap<String, String> {
    [
        ("data_seed", "0"),
        ("planted.n", "300"),
        ("planted.m", "6"),
        ("planted.k", "3"),
        ("planted.separation", "100"),
        ("planted.sigma", "1"),
        ("planted.graph", "empty"),
        ("protocols", "optimized"),
        ("parties", "2"),
        ("local_clusters", "k"),
        ("filter", "half"),
        ("psi", "9"),
        ("max_rounds", "10"),
        ("restarts", "10"),
        ("seed", "0"),
        ("reps", "5"),
        ("split", "contiguous"),
        ("mode", "encrypted"),
        ("row_normalize", "false"),
        ("network", "lan"),
        ("backend", "sim"),
        ("privacy", "false"),
        ("timing", "simulated"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow!("{key}: {e}")))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        bail!("{key} must list at least one value");
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => bail!("{key}: expected true or false, got {other:?}"),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow!("{key}: {e}"))
}

impl Config {
    /// Reads a config file; relative dataset paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut given = BTreeMap::new();
        let mut unknown = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                unknown.push(key);
                continue;
            }
            if given.insert(key.clone(), value.trim().to_string()).is_some() {
                bail!("line {}: {key} given twice", i + 1);
            }
        }
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        let mut values = defaults();
        let source = match (given.get("dataset"), given.get("synthetic")) {
            (Some(dir), None) => {
                let p = PathBuf::from(dir);
                Source::Directory(if p.is_absolute() { p } else { base.join(p) })
            }
            (None, Some(kind)) => match kind.as_str() {
                "cora-shaped" => Source::CoraShaped,
                "citeseer-shaped" => Source::CiteseerShaped,
                "planted" => Source::Planted {
                    n: 0,
                    m: 0,
                    k: 0,
                    separation: 0.0,
                    sigma: 0.0,
                    graph: PlantedGraph::Empty,
                },
                other => bail!("synthetic: unknown generator {other:?} (cora-shaped, citeseer-shaped, planted)"),
            },
            _ => bail!("exactly one of dataset or synthetic must be set"),
        };
        values.extend(given);
        Self::from_values(source, values)
    }

    fn from_values(source: Source, values: BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| values.get(k).map(String::as_str).expect("defaulted");
        let source = match source {
            Source::Planted { .. } => Source::Planted {
                n: parse("planted.n", get("planted.n"))?,
                m: parse("planted.m", get("planted.m"))?,
                k: parse("planted.k", get("planted.k"))?,
                separation: parse("planted.separation", get("planted.separation"))?,
                sigma: parse("planted.sigma", get("planted.sigma"))?,
                graph: match get("planted.graph") {
                    "empty" => PlantedGraph::Empty,
                    "complete" => PlantedGraph::Complete,
                    "within" => PlantedGraph::WithinCluster,
                    other => bail!("planted.graph: expected empty, complete or within, got {other:?}"),
                },
            },
            other => other,
        };
        let mut protocols: Vec<Protocol> = parse_list("protocols", get("protocols"))?;
        protocols.sort();
        protocols.dedup();
        let parties: Vec<usize> = parse_list("parties", get("parties"))?;
        if parties.iter().any(|p| *p < 2) {
            bail!("parties: collaborative protocols need at least 2 parties");
        }
        let reps: usize = parse("reps", get("reps"))?;
        if reps == 0 {
            bail!("reps must be positive");
        }
        let mode = match get("mode") {
            "encrypted" => AggregationMode::Encrypted,
            "plaintext" => AggregationMode::Plaintext,
            other => bail!("mode: expected encrypted or plaintext, got {other:?}"),
        };
        let timing = match get("timing") {
            "simulated" => Timing::Simulated,
            "wall" => Timing::Wall,
            other => bail!("timing: expected simulated or wall, got {other:?}"),
        };
        let local_clusters: Vec<LocalClusters> = parse_list("local_clusters", get("local_clusters"))?;
        let join = |v: Vec<String>| v.join(",");
        let mut canonical = values.clone();
        canonical.insert("protocols".into(), join(protocols.iter().map(|p| p.name().to_string()).collect()));
        canonical.insert("parties".into(), join(parties.iter().map(usize::to_string).collect()));
        canonical.insert("local_clusters".into(), join(local_clusters.iter().map(LocalClusters::to_string).collect()));
        canonical.remove("synthetic");
        canonical.remove("dataset");
        match &source {
            Source::Directory(p) => {
                canonical.insert("dataset".into(), p.display().to_string());
            }
            Source::CoraShaped => {
                canonical.insert("synthetic".into(), "cora-shaped".into());
            }
            Source::CiteseerShaped => {
                canonical.insert("synthetic".into(), "citeseer-shaped".into());
            }
            Source::Planted { .. } => {
                canonical.insert("synthetic".into(), "planted".into());
            }
        }
        Ok(Self {
            data_seed: parse("data_seed", get("data_seed"))?,
            protocols,
            parties,
            local_clusters,
            filter: parse("filter", get("filter"))?,
            psi: parse("psi", get("psi"))?,
            max_rounds: parse("max_rounds", get("max_rounds"))?,
            restarts: parse("restarts", get("restarts"))?,
            seed: parse("seed", get("seed"))?,
            reps,
            split: parse("split", get("split"))?,
            mode,
            row_normalize: parse_bool("row_normalize", get("row_normalize"))?,
            network: parse("network", get("network"))?,
            backend: parse("backend", get("backend"))?,
            privacy: parse_bool("privacy", get("privacy"))?,
            timing,
            source,
            canonical,
        })
    }

    /// Re-validates after a command-line override of `key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut values = self.canonical.clone();
        values.insert(key.to_string(), value.to_string());
        *self = Self::from_values(self.source.clone(), values)?;
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical `key=value` lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.canonical {
            h.update(format!("{k}={v}\n"));
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn canonical(&self) -> &BTreeMap<String, String> {
        &self.canonical
    }
}
