#![allow(dead_code)]

use kcagc::data::{citation_like, vertical_split, CitationConfig, Dataset, SplitStrategy, VerticalSplit};
use kcagc::graph::{apply_filter, build_laplacian, FilterFamily, FilterSpec};
use kcagc::FeatureMatrix;

/// A small homophilous citation-style graph, filtered and split.
pub struct Fixture {
    pub dataset: Dataset,
    pub filtered: FeatureMatrix,
    pub split: VerticalSplit,
}

pub fn small_citation(n: usize, parties: usize, seed: u64) -> Fixture {
    let cfg = CitationConfig {
        n,
        m: 120,
        k: 4,
        edges: 3 * n,
        homophily: 0.85,
        words_per_node: 10,
        topic_purity: 0.6,
        seed,
    };
    let dataset = citation_like(&cfg).unwrap();
    let filtered = filter(&dataset, 3);
    let split = vertical_split(&filtered, parties, seed, SplitStrategy::Contiguous).unwrap();
    Fixture { dataset, filtered, split }
}

pub fn filter(d: &Dataset, order: u32) -> FeatureMatrix {
    let lap = build_laplacian(&d.graph);
    apply_filter(&d.features, &lap, &FilterSpec::new(FilterFamily::Half, order)).unwrap()
}

pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}
