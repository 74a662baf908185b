//! Runs the configured protocols and aggregates repetitions into rows.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use kcagc::data::{
    citation_like, load_dataset, planted_mixture, vertical_split, CitationConfig, Dataset, DatasetFormat,
    PlantedConfig, VerticalSplit,
};
use kcagc::federation::{FederationConfig, Federation, GlobalClustering};
use kcagc::graph::{apply_filter, build_laplacian, FilterSpec};
use kcagc::kmeans::{cluster_protocol1_with, Protocol1Config};
use kcagc::metrics::{evaluate, privacy_metrics, DEFAULT_NEIGHBORS, MIN_PRIVACY_SAMPLES};
use kcagc::parallel::map_range;
use kcagc::transport::Network;
use kcagc::FeatureMatrix;
use serde::Serialize;

use crate::config::{Config, Protocol, Source, Timing};

pub const BUILD_ID: &str = env!("KCAGC_BUILD_ID");

/// Summary of all repetitions of one (dataset, protocol, parties, local
/// clusters) combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub dataset: String,
    pub protocol: Protocol,
    /// 1 for the centralized baseline.
    pub parties: usize,
    /// Empty for protocols without a local phase.
    pub local_clusters: Option<usize>,
    pub k: usize,
    pub n: usize,
    pub filter: String,
    pub psi: u32,
    pub row_normalize: bool,
    pub split: String,
    pub mode: String,
    pub network: String,
    pub backend: String,
    pub reps: usize,
    /// `;`-separated seed of every repetition.
    pub seeds: String,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub nmi_mean: f64,
    pub nmi_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub rounds_mean: f64,
    /// Repetitions whose final Lloyd phase converged.
    pub converged: usize,
    pub calls_mean: f64,
    pub bytes_mean: f64,
    pub messages_mean: f64,
    pub simulated_seconds_mean: f64,
    pub privacy_level_mean: Option<f64>,
    pub privacy_leakage_mean: Option<f64>,
    pub build_id: String,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds_mean: Option<f64>,
}

struct Rep {
    acc: f64,
    nmi: f64,
    f1: f64,
    rounds: usize,
    converged: bool,
    calls: u64,
    bytes: u64,
    messages: u64,
    simulated_seconds: f64,
    privacy: Option<(f64, f64)>,
    wall_seconds: f64,
}

pub fn load_source(cfg: &Config) -> Result<Dataset> {
    let d = match &cfg.source {
        Source::Directory(dir) => load_dataset(dir, DatasetFormat::EdgelistCsv)
            .with_context(|| format!("loading dataset {}", dir.display()))?,
        Source::CoraShaped => {
            let mut d = citation_like(&CitationConfig::cora_shaped(cfg.data_seed))?;
            d.name = "cora-shaped".into();
            d
        }
        Source::CiteseerShaped => {
            let mut d = citation_like(&CitationConfig::citeseer_shaped(cfg.data_seed))?;
            d.name = "citeseer-shaped".into();
            d
        }
        Source::Planted {
            n,
            m,
            k,
            separation,
            sigma,
            graph,
        } => planted_mixture(&PlantedConfig::new(*n, *m, *k, *separation, *sigma, cfg.data_seed).with_graph(*graph))?,
    };
    Ok(d.with_row_normalization(cfg.row_normalize))
}

/// Graph-filtered features of `d`.
pub fn filtered(cfg: &Config, d: &Dataset) -> Result<FeatureMatrix> {
    let lap = build_laplacian(&d.graph);
    Ok(apply_filter(&d.features, &lap, &FilterSpec::new(cfg.filter, cfg.psi))?)
}

pub fn split(cfg: &Config, x: &FeatureMatrix, parties: usize) -> Result<VerticalSplit> {
    Ok(vertical_split(x, parties, cfg.seed, cfg.split)?)
}

/// Every row of the experiment grid, sorted.
pub fn run(cfg: &Config) -> Result<Vec<Row>> {
    let d = load_source(cfg)?;
    let x = filtered(cfg, &d)?;
    log::info!("{}: n={} m={} k={} edges={}", d.name, d.n(), d.m(), d.k, d.graph.num_edges());
    let mut rows = Vec::new();
    for &protocol in &cfg.protocols {
        match protocol {
            Protocol::Centralized => rows.push(summarize(cfg, &d, protocol, 1, None, |seed| {
                centralized(cfg, &d, &x, seed)
            })?),
            Protocol::Basic => {
                for &parties in &cfg.parties {
                    let s = split(cfg, &x, parties)?;
                    rows.push(summarize(cfg, &d, protocol, parties, None, |seed| {
                        collaborative(cfg, &d, &s, protocol, d.k, seed)
                    })?);
                }
            }
            Protocol::Optimized | Protocol::Tree => {
                for &parties in &cfg.parties {
                    let s = split(cfg, &x, parties)?;
                    let mut local: Vec<usize> = cfg.local_clusters.iter().map(|c| c.resolve(d.k)).collect();
                    local.sort_unstable();
                    local.dedup();
                    for khat in local {
                        rows.push(summarize(cfg, &d, protocol, parties, Some(khat), |seed| {
                            collaborative(cfg, &d, &s, protocol, khat, seed)
                        })?);
                    }
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        (&a.dataset, a.protocol, a.parties, a.local_clusters, a.psi).cmp(&(
            &b.dataset,
            b.protocol,
            b.parties,
            b.local_clusters,
            b.psi,
        ))
    });
    Ok(rows)
}

fn centralized(cfg: &Config, d: &Dataset, x: &FeatureMatrix, seed: u64) -> Result<Rep> {
    let start = Instant::now();
    let mut pcfg = Protocol1Config::new(d.k, cfg.max_rounds, seed);
    pcfg.restarts = cfg.restarts;
    let p = cluster_protocol1_with(x, &pcfg)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let s = evaluate(&p.assignment, &d.labels)?;
    Ok(Rep {
        acc: s.accuracy,
        nmi: s.nmi,
        f1: s.macro_f1,
        rounds: p.rounds,
        converged: p.converged,
        calls: 0,
        bytes: 0,
        messages: 0,
        simulated_seconds: 0.0,
        privacy: None,
        wall_seconds,
    })
}

fn collaborative(
    cfg: &Config,
    d: &Dataset,
    s: &VerticalSplit,
    protocol: Protocol,
    local_clusters: usize,
    seed: u64,
) -> Result<Rep> {
    let mut fcfg = FederationConfig::new(d.k, local_clusters, seed)
        .with_max_rounds(cfg.max_rounds)
        .with_mode(cfg.mode);
    fcfg.restarts = cfg.restarts;
    let net = Network::new(cfg.backend, s.parties(), cfg.network.clone())?;
    let start = Instant::now();
    let mut fed = Federation::new(s.slices.clone(), fcfg, net)?;
    let g: GlobalClustering = match protocol {
        Protocol::Basic => fed.run_basic()?,
        Protocol::Optimized => fed.run_optimized()?,
        Protocol::Tree => fed.run_tree()?,
        Protocol::Centralized => unreachable!("centralized runs without a federation"),
    };
    let wall_seconds = start.elapsed().as_secs_f64();
    let scores = evaluate(&g.assignment, &d.labels)?;
    let privacy = if cfg.privacy {
        let (shared, private) = g.distance_samples(&s.slices, 0)?;
        let r = privacy_metrics(&shared, &private, DEFAULT_NEIGHBORS)?;
        if r.degenerate {
            log::warn!("{}: degenerate privacy estimate for seed {seed}", protocol.name());
        }
        Some((r.privacy_level, r.privacy_leakage))
    } else {
        None
    };
    let total = g.ledger.total();
    Ok(Rep {
        acc: scores.accuracy,
        nmi: scores.nmi,
        f1: scores.macro_f1,
        rounds: g.rounds,
        converged: g.converged,
        calls: g.aggregation_calls(),
        bytes: total.bytes_sent,
        messages: total.messages_sent,
        simulated_seconds: total.simulated_elapsed_seconds,
        privacy,
        wall_seconds,
    })
}

fn summarize(
    cfg: &Config,
    d: &Dataset,
    protocol: Protocol,
    parties: usize,
    local_clusters: Option<usize>,
    one: impl Fn(u64) -> Result<Rep> + Sync + Send,
) -> Result<Row> {
    if cfg.privacy && d.n() < MIN_PRIVACY_SAMPLES {
        bail!("privacy estimates need at least {MIN_PRIVACY_SAMPLES} nodes, dataset has {}", d.n());
    }
    let seeds: Vec<u64> = (0..cfg.reps as u64).map(|r| cfg.seed + r).collect();
    let reps: Vec<Rep> = map_range(seeds.len(), |r| one(seeds[r]))
        .into_iter()
        .collect::<Result<_>>()
        .with_context(|| format!("{} with {parties} parties", protocol.name()))?;
    let stat = |f: &dyn Fn(&Rep) -> f64| mean_std(&reps.iter().map(f).collect::<Vec<_>>());
    let (acc_mean, acc_std) = stat(&|r| r.acc);
    let (nmi_mean, nmi_std) = stat(&|r| r.nmi);
    let (f1_mean, f1_std) = stat(&|r| r.f1);
    let privacy: Option<Vec<(f64, f64)>> = reps.iter().map(|r| r.privacy).collect();
    Ok(Row {
        dataset: d.name.clone(),
        protocol,
        parties,
        local_clusters,
        k: d.k,
        n: d.n(),
        filter: cfg.canonical()["filter"].clone(),
        psi: cfg.psi,
        row_normalize: cfg.row_normalize,
        split: cfg.canonical()["split"].clone(),
        mode: cfg.canonical()["mode"].clone(),
        network: cfg.canonical()["network"].clone(),
        backend: cfg.canonical()["backend"].clone(),
        reps: reps.len(),
        seeds: seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
        acc_mean,
        acc_std,
        nmi_mean,
        nmi_std,
        f1_mean,
        f1_std,
        rounds_mean: stat(&|r| r.rounds as f64).0,
        converged: reps.iter().filter(|r| r.converged).count(),
        calls_mean: stat(&|r| r.calls as f64).0,
        bytes_mean: stat(&|r| r.bytes as f64).0,
        messages_mean: stat(&|r| r.messages as f64).0,
        simulated_seconds_mean: stat(&|r| r.simulated_seconds).0,
        privacy_level_mean: privacy.as_ref().map(|p| mean_std(&p.iter().map(|v| v.0).collect::<Vec<_>>()).0),
        privacy_leakage_mean: privacy.as_ref().map(|p| mean_std(&p.iter().map(|v| v.1).collect::<Vec<_>>()).0),
        wall_seconds_mean: (cfg.timing == Timing::Wall).then(|| stat(&|r| r.wall_seconds).0),
        build_id: BUILD_ID.to_string(),
        config_hash: cfg.hash(),
    })
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_values() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
