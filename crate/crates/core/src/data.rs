//! Dataset files, vertical feature splits and synthetic generators.
//!
//! A dataset directory holds three files: `features.csv` (headerless CSV of
//! reals, one row per node), `labels.txt` (one class index per line) and
//! `edges.txt` (one `u v` pair of 0-based node indices per line, comma or
//! whitespace separated).

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::GraphStructure;
use crate::{Error, FeatureMatrix, Result};

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.txt";
pub const EDGES_FILE: &str = "edges.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: GraphStructure,
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub k: usize,
    pub row_normalized: bool,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graph: GraphStructure,
        features: FeatureMatrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = features.rows();
        if graph.n() != n || labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} feature rows, {} graph nodes, {} labels",
                graph.n(),
                labels.len()
            )));
        }
        let k = class_count(&labels)?;
        Ok(Self {
            name: name.into(),
            graph,
            features,
            labels,
            k,
            row_normalized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn m(&self) -> usize {
        self.features.cols()
    }

    /// Scales feature rows to unit norm when `enabled`; the flag is kept so
    /// result rows can record it.
    pub fn with_row_normalization(mut self, enabled: bool) -> Self {
        if enabled && !self.row_normalized {
            self.features.normalize_rows();
            self.row_normalized = true;
        }
        self
    }
}

/// Labels must use every class in `0..k`.
fn class_count(labels: &[usize]) -> Result<usize> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; k];
    labels.iter().for_each(|l| seen[*l] = true);
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidArgument(format!(
            "class {missing} has no nodes; labels must cover 0..{k}"
        )));
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DatasetFormat {
    /// The canonical three-file layout described in the module docs.
    #[default]
    EdgelistCsv,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edgelist+csv" | "edgelist-csv" => Ok(Self::EdgelistCsv),
            other => Err(Error::InvalidArgument(format!("unknown dataset format {other:?}"))),
        }
    }
}

pub fn load_dataset(dir: &Path, format: DatasetFormat) -> Result<Dataset> {
    let DatasetFormat::EdgelistCsv = format;
    let features = read_features(&dir.join(FEATURES_FILE))?;
    let n = features.rows();
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    if labels.len() != n {
        return Err(parse_error(
            &dir.join(LABELS_FILE),
            labels.len(),
            format!("{} labels for {n} feature rows", labels.len()),
        ));
    }
    let (pairs, edge_lines) = read_edges(&dir.join(EDGES_FILE), n)?;
    let graph = GraphStructure::new(n, pairs)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let d = Dataset::new(name, graph, features, labels)?;
    log::info!(
        "loaded {}: n={} edge lines={} undirected edges={} m={} k={}",
        d.name,
        d.n(),
        edge_lines,
        d.graph.num_edges(),
        d.m(),
        d.k
    );
    Ok(d)
}

/// Writes the canonical layout; reals use the shortest representation that
/// parses back to the same bits.
pub fn save_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.join(FEATURES_FILE))
        .map_err(csv_error)?;
    for i in 0..d.n() {
        w.write_record(d.features.row(i).iter().map(|v| v.to_string()))
            .map_err(csv_error)?;
    }
    w.flush()?;
    let mut labels = fs::File::create(dir.join(LABELS_FILE))?;
    for l in &d.labels {
        writeln!(labels, "{l}")?;
    }
    let mut edges = fs::File::create(dir.join(EDGES_FILE))?;
    for (u, v) in d.graph.edges() {
        writeln!(edges, "{u} {v}")?;
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("{other:?}")),
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match csv_error(e) {
            Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
            other => other,
        })?;
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        let width = *cols.get_or_insert(record.len());
        if record.len() != width {
            return Err(parse_error(
                path,
                line,
                format!("row has {} columns, expected {width}", record.len()),
            ));
        }
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(parse_error(path, line, format!("empty feature in column {j}")));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(path, line, format!("bad number {field:?} in column {j}")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, format!("non-finite value in column {j}")));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(parse_error(path, 1, "no feature columns"));
    }
    FeatureMatrix::new(rows, cols, data)
}

fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    content_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            text.parse()
                .map_err(|_| parse_error(path, line, format!("bad label {text:?}")))
        })
        .collect()
}

fn read_edges(path: &Path, n: usize) -> Result<(Vec<(usize, usize)>, usize)> {
    let lines = content_lines(path)?;
    let count = lines.len();
    let mut pairs = Vec::with_capacity(count);
    for (line, text) in lines {
        let fields: Vec<&str> = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err(parse_error(path, line, format!("expected 2 node ids, found {}", fields.len())));
        }
        let mut ends = [0usize; 2];
        for (slot, f) in ends.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| parse_error(path, line, format!("bad node id {f:?}")))?;
            if *slot >= n {
                return Err(parse_error(path, line, format!("unknown node {slot} (n = {n})")));
            }
        }
        pairs.push((ends[0], ends[1]));
    }
    Ok((pairs, count))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SplitStrategy {
    #[default]
    Contiguous,
    /// Columns are permuted by the seed before contiguous slicing.
    Shuffled,
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contiguous" => Ok(Self::Contiguous),
            "shuffled" => Ok(Self::Shuffled),
            other => Err(Error::InvalidArgument(format!("unknown split strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerticalSplit {
    /// Original column indices held by each party, in slice order.
    pub columns: Vec<Vec<usize>>,
    pub slices: Vec<FeatureMatrix>,
}

impl VerticalSplit {
    pub fn parties(&self) -> usize {
        self.slices.len()
    }

    /// Column order of the concatenated slices.
    pub fn permutation(&self) -> Vec<usize> {
        self.columns.concat()
    }

    pub fn concatenated(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::hconcat(&self.slices)
    }

    /// Column ranges of each slice inside the concatenated matrix.
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.slices
            .iter()
            .map(|s| {
                let r = start..start + s.cols();
                start = r.end;
                r
            })
            .collect()
    }
}

/// Splits columns into `parties` slices whose widths differ by at most one,
/// wider slices first.
pub fn vertical_split(
    features: &FeatureMatrix,
    parties: usize,
    seed: u64,
    strategy: SplitStrategy,
) -> Result<VerticalSplit> {
    let m = features.cols();
    if parties == 0 || parties > m {
        return Err(Error::InvalidArgument(format!(
            "cannot split {m} columns among {parties} parties"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    if strategy == SplitStrategy::Shuffled {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (base, extra) = (m / parties, m % parties);
    let mut columns = Vec::with_capacity(parties);
    let mut start = 0;
    for l in 0..parties {
        let width = base + usize::from(l < extra);
        columns.push(order[start..start + width].to_vec());
        start += width;
    }
    let slices = columns
        .iter()
        .map(|c| features.select_columns(c))
        .collect::<Result<_>>()?;
    Ok(VerticalSplit { columns, slices })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PlantedGraph {
    /// No edges: every filter is the identity.
    #[default]
    Empty,
    Complete,
    /// Every pair inside a blob is connected.
    WithinCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
    pub graph: PlantedGraph,
}

impl PlantedConfig {
    pub fn new(n: usize, m: usize, k: usize, separation: f64, sigma: f64, seed: u64) -> Self {
        Self {
            n,
            m,
            k,
            separation,
            sigma,
            seed,
            graph: PlantedGraph::Empty,
        }
    }

    pub fn with_graph(mut self, graph: PlantedGraph) -> Self {
        self.graph = graph;
        self
    }
}

/// Gaussian blobs whose centers sit on the main diagonal, consecutive centers
/// `separation` apart, so every column subset still sees separated blobs.
/// Node `i` belongs to blob `i % k`.
pub fn planted_mixture(cfg: &PlantedConfig) -> Result<Dataset> {
    let PlantedConfig { n, m, k, separation, sigma, seed, graph } = *cfg;
    if n < k || k == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!("planted mixture needs n >= k >= 1, m >= 1 (n={n}, m={m}, k={k})")));
    }
    if !(separation >= 0.0 && sigma > 0.0) {
        return Err(Error::InvalidArgument("separation must be >= 0 and sigma > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma checked positive");
    let step = separation / (m as f64).sqrt();
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let data = labels
        .iter()
        .flat_map(|&q| (0..m).map(move |_| q as f64 * step))
        .map(|c| c + noise.sample(&mut rng))
        .collect();
    let features = FeatureMatrix::new(n, m, data)?;
    let pairs: Vec<(usize, usize)> = match graph {
        PlantedGraph::Empty => Vec::new(),
        PlantedGraph::Complete => (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect(),
        PlantedGraph::WithinCluster => (0..n)
            .flat_map(|u| (u + 1..n).filter(move |v| v % k == u % k).map(move |v| (u, v)))
            .collect(),
    };
    Dataset::new(
        format!("planted-n{n}-m{m}-k{k}"),
        GraphStructure::new(n, pairs)?,
        features,
        labels,
    )
}

/// Shape of a synthetic citation network: sparse binary bag-of-words
/// features and a homophilous random graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CitationConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub edges: usize,
    /// Probability that an edge stays inside its source node's class.
    pub homophily: f64,
    pub words_per_node: usize,
    /// Probability that a word is drawn from the node's class vocabulary.
    pub topic_purity: f64,
    pub seed: u64,
}

impl CitationConfig {
    /// Matches the node, edge, feature and class counts of Cora.
    pub fn cora_shaped(seed: u64) -> Self {
        Self {
            n: 2708,
            m: 1433,
            k: 7,
            edges: 5429,
            homophily: 0.8,
            words_per_node: 18,
            topic_purity: 0.5,
            seed,
        }
    }

    pub fn citeseer_shaped(seed: u64) -> Self {
        Self {
            n: 3327,
            m: 3703,
            k: 6,
            edges: 4732,
            homophily: 0.74,
            words_per_node: 32,
            topic_purity: 0.4,
            seed,
        }
    }
}

pub fn citation_like(cfg: &CitationConfig) -> Result<Dataset> {
    let CitationConfig { n, m, k, edges, homophily, words_per_node, topic_purity, seed } = *cfg;
    if k == 0 || n < k || m < k || words_per_node == 0 || words_per_node > m / k {
        return Err(Error::InvalidArgument(format!(
            "citation config needs n >= k, m >= k and 1 <= words per node <= m/k (n={n}, m={m}, k={k})"
        )));
    }
    if !(0.0..=1.0).contains(&homophily) || !(0.0..=1.0).contains(&topic_purity) {
        return Err(Error::InvalidArgument("homophily and topic purity must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // every class owns at least one node so labels cover 0..k
    let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
    labels.shuffle(&mut rng);
    let mut by_class = vec![Vec::new(); k];
    for (i, l) in labels.iter().enumerate() {
        by_class[*l].push(i);
    }
    // class vocabularies are disjoint sets of columns scattered over the
    // whole feature range
    let vocab = m / k;
    let mut columns: Vec<usize> = (0..m).collect();
    columns.shuffle(&mut rng);
    let mut data = vec![0.0; n * m];
    for (i, &l) in labels.iter().enumerate() {
        let row = &mut data[i * m..(i + 1) * m];
        let mut placed = 0;
        while placed < words_per_node {
            let w = if rng.gen_bool(topic_purity) {
                columns[l * vocab + rng.gen_range(0..vocab)]
            } else {
                rng.gen_range(0..m)
            };
            if row[w] == 0.0 {
                row[w] = 1.0;
                placed += 1;
            }
        }
    }
    let mut pairs = Vec::with_capacity(edges);
    while pairs.len() < edges {
        let u = rng.gen_range(0..n);
        let v = if rng.gen_bool(homophily) {
            *by_class[labels[u]].choose(&mut rng).expect("class nonempty")
        } else {
            rng.gen_range(0..n)
        };
        if u != v {
            pairs.push((u, v));
        }
    }
    Dataset::new(
        format!("citation-n{n}-m{m}-k{k}"),
        GraphStructure::new(n, pairs)?,
        FeatureMatrix::new(n, m, data)?,
        labels,
    )
}
