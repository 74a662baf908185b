//! Planted-cluster recovery against the theory module's guarantees.

use kcagc::data::{planted_mixture, vertical_split, PlantedConfig, SplitStrategy};
use kcagc::federation::{run_optimized, run_tree, AggregationMode, FederationConfig};
use kcagc::kmeans::cluster_protocol1;
use kcagc::metrics::accuracy;
use kcagc::theory::{theorem1_budget, Condition, ConditionParams, Instance};
use kcagc::FeatureMatrix;

fn misclassified(assignment: &[usize], labels: &[usize]) -> usize {
    ((1.0 - accuracy(assignment, labels).unwrap()) * labels.len() as f64).round() as usize
}

#[test]
fn centralized_recovers_wide_mixture() {
    let d = planted_mixture(&PlantedConfig::new(300, 6, 3, 100.0, 1.0, 1)).unwrap();
    let p = cluster_protocol1(&d.features, 3, 10, 1).unwrap();
    assert_eq!(misclassified(&p.assignment, &d.labels), 0);
}

#[test]
fn split_wide_mixture_is_recovered_by_optimized() {
    let d = planted_mixture(&PlantedConfig::new(300, 6, 3, 100.0, 1.0, 2)).unwrap();
    let split = vertical_split(&d.features, 3, 2, SplitStrategy::Shuffled).unwrap();
    let g = run_optimized(&split.slices, &FederationConfig::new(3, 3, 2)).unwrap();
    assert_eq!(misclassified(&g.assignment, &d.labels), 0);
}

#[test]
fn unseparated_mixture_is_near_chance() {
    let mut total = 0.0;
    for seed in 0..5 {
        let d = planted_mixture(&PlantedConfig::new(600, 4, 3, 0.0, 1.0, seed)).unwrap();
        let p = cluster_protocol1(&d.features, 3, 10, seed).unwrap();
        total += accuracy(&p.assignment, &d.labels).unwrap();
    }
    // best matching inflates chance level slightly above 1/k
    let mean = total / 5.0;
    assert!(mean < 0.45, "{mean}");
}

#[test]
fn unseparated_mixture_reports_large_epsilon() {
    let d = planted_mixture(&PlantedConfig::new(300, 4, 3, 0.0, 1.0, 4)).unwrap();
    let split = vertical_split(&d.features, 2, 0, SplitStrategy::Contiguous).unwrap();
    let inst = Instance::new(split.slices, &d.labels, None).unwrap();
    let r = inst.report(&ConditionParams::new(100.0)).unwrap();
    assert!(r.epsilon.iter().all(|e| *e > 0.5), "{:?}", r.epsilon);
    assert!(r.measured_c < 1.0);
}

/// Moves `count` nodes of cluster 0 inside party `party`'s columns onto the
/// far side of the midpoint towards cluster 1, making them local 1-bad there.
fn perturb(x: &mut FeatureMatrix, labels: &[usize], cols: &[usize], count: usize, offset: usize) {
    let mean = |q: usize, j: usize| {
        let rows: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == q).collect();
        rows.iter().map(|i| x.get(*i, j)).sum::<f64>() / rows.len() as f64
    };
    let targets: Vec<(usize, f64)> = cols.iter().map(|&j| (j, 0.4 * mean(0, j) + 0.6 * mean(1, j))).collect();
    let victims: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == 0).skip(offset).take(count).collect();
    for i in victims {
        for &(j, v) in &targets {
            x.row_mut(i)[j] = v;
        }
    }
}

#[test]
fn perturbed_nodes_stay_within_the_budget() {
    let (n, k, parties) = (400, 3, 2);
    let d = planted_mixture(&PlantedConfig::new(n, 6, k, 3000.0, 1.0, 5)).unwrap();
    let mut x = d.features.clone();
    perturb(&mut x, &d.labels, &[0, 1, 2], 3, 0);
    perturb(&mut x, &d.labels, &[3, 4, 5], 3, 10);
    let split = vertical_split(&x, parties, 0, SplitStrategy::Contiguous).unwrap();
    let inst = Instance::new(split.slices.clone(), &d.labels, None).unwrap();
    let params = ConditionParams::new(100.0);
    let report = inst.report(&params).unwrap();
    assert_eq!(report.epsilon, vec![3.0 / n as f64; 2]);
    assert_eq!(report.epsilon, inst.check(Condition::Local, &params).epsilon);
    let budget = theorem1_budget(&report.epsilon, parties, report.measured_c, n, 1.0).unwrap();
    for seed in 0..3 {
        let cfg = FederationConfig::new(k, k, seed).with_mode(AggregationMode::Plaintext);
        for g in [run_optimized(&split.slices, &cfg).unwrap(), run_tree(&split.slices, &cfg).unwrap()] {
            let wrong = misclassified(&g.assignment, &d.labels);
            assert!(wrong as f64 <= budget, "{wrong} misclassified, budget {budget:.2}");
        }
    }
}
