//! End-to-end training properties on small synthetic fixtures: checkpoint
//! determinism, the graph-pull effect, and label-propagation convergence.

use std::collections::BTreeMap;
use std::fs;

use graphemb::dataio::{generate_click_logs, generate_synthetic, ClickLogConfig, SyntheticData};
use graphemb::graph::SimilarityGraph;
use graphemb::losses::{cosine_distance, DistanceMetric, LabelDistribution};
use graphemb::model::{forward, save_checkpoint, ModelConfig};
use graphemb::numerics::Prng;
use graphemb::trainer::{label_propagation, train, TrainConfig};

fn clustered_fixture(seed: u64) -> (SyntheticData<f64>, SimilarityGraph) {
    let mut rng = Prng::seed_from(seed);
    let data = generate_synthetic::<f64>(&mut rng, 8, 20, 16, 0.12, 0.15, 0.1).unwrap();
    let records = generate_click_logs(
        &data.dataset,
        &data.true_classes,
        &mut rng,
        &ClickLogConfig::default(),
    )
    .unwrap();
    let (graph, _) = SimilarityGraph::build(&records, 0.1, &data.dataset.labeled_id_set()).unwrap();
    (data, graph)
}

#[test]
fn same_seed_writes_bit_identical_checkpoints() {
    let (data, graph) = clustered_fixture(7);
    let model_cfg = ModelConfig::new(16, vec![8], 4, 8).unwrap();
    let cfg = TrainConfig {
        max_steps: 40,
        batch_size: 8,
        sampled_vocab: Some(6),
        decay_every: 20,
        seed: 99,
        ..TrainConfig::default()
    };
    let dir = std::env::temp_dir().join("graphemb-training-test");
    fs::create_dir_all(&dir).unwrap();

    let mut paths = Vec::new();
    for run in 0..2 {
        let (params, _) = train(&data.dataset, Some(&graph), &model_cfg, &cfg, None).unwrap();
        let path = dir.join(format!("run{run}.ckpt"));
        save_checkpoint(&params, &path).unwrap();
        paths.push(path);
    }
    let a = fs::read(&paths[0]).unwrap();
    let b = fs::read(&paths[1]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn graph_regularization_pulls_edge_pairs_together() {
    let (data, graph) = clustered_fixture(11);
    let model_cfg = ModelConfig::new(16, vec![], 4, 8).unwrap();
    let base = TrainConfig {
        max_steps: 400,
        batch_size: 16,
        sampled_vocab: Some(8),
        decay_every: 200,
        seed: 5,
        ..TrainConfig::default()
    };

    let mean_edge_distance = |alpha: f64| -> f64 {
        let cfg = TrainConfig { alpha, ..base.clone() };
        let (params, _) = train(&data.dataset, Some(&graph), &model_cfg, &cfg, None).unwrap();
        let mut total = 0.0;
        for e in graph.edges() {
            let u = forward(&params, &data.dataset.get(e.u).unwrap().features).unwrap();
            let v = forward(&params, &data.dataset.get(e.v).unwrap().features).unwrap();
            total += cosine_distance(&u.embedding, &v.embedding).unwrap();
        }
        total / graph.edge_count() as f64
    };

    let with_graph = mean_edge_distance(1.0);
    let without_graph = mean_edge_distance(0.0);
    assert!(
        with_graph < without_graph,
        "edge distance with regularizer {with_graph} vs without {without_graph}"
    );
}

#[test]
fn label_propagation_reaches_a_fixed_point() {
    let (data, graph) = clustered_fixture(13);
    let mut labeled: BTreeMap<u64, LabelDistribution<f64>> = BTreeMap::new();
    for ex in data.dataset.examples() {
        if !ex.is_labeled() || !graph.contains_vertex(ex.id) {
            continue;
        }
        let share = 1.0 / ex.labels.len() as f64;
        let mass: BTreeMap<usize, f64> = (0..data.dataset.num_classes())
            .map(|k| (k, if ex.labels.contains(&k) { share } else { 0.0 }))
            .collect();
        labeled.insert(ex.id, LabelDistribution::new(mass).unwrap());
    }
    let result = label_propagation(&graph, &labeled, 200, true).unwrap();
    assert!(
        result.last_max_delta < 1e-8,
        "did not converge: last delta {}",
        result.last_max_delta
    );
}

#[test]
fn exhaustive_edge_mode_trains_and_differs_from_sampled() {
    let (data, graph) = clustered_fixture(17);
    let model_cfg = ModelConfig::new(16, vec![], 4, 8).unwrap();
    let base = TrainConfig {
        max_steps: 20,
        batch_size: 8,
        decay_every: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let sampled = train(
        &data.dataset,
        Some(&graph),
        &model_cfg,
        &base,
        None,
    )
    .unwrap()
    .0;
    let exhaustive_cfg = TrainConfig {
        exhaustive_edges: true,
        ..base
    };
    let exhaustive = train(&data.dataset, Some(&graph), &model_cfg, &exhaustive_cfg, None)
        .unwrap()
        .0;
    assert_ne!(sampled, exhaustive);
}

#[test]
fn euclidean_metric_trains_cleanly() {
    let (data, graph) = clustered_fixture(19);
    let model_cfg = ModelConfig::new(16, vec![6], 4, 8).unwrap();
    let cfg = TrainConfig {
        metric: DistanceMetric::Euclidean,
        alpha: 0.01,
        max_steps: 30,
        batch_size: 8,
        decay_every: 10,
        seed: 21,
        ..TrainConfig::default()
    };
    let (_, records) = train(&data.dataset, Some(&graph), &model_cfg, &cfg, None).unwrap();
    assert_eq!(records.len(), 30);
    assert!(records.iter().all(|r| r.total.is_finite()));
}
