//! Central finite-difference verification of the analytic gradients of the
//! full training objective (supervised term plus weighted neighbor
//! distances).
//!
//! The differenced value comes from `trainer::compute_batch_loss`, which is
//! forward-only and shares nothing with the backward pass it checks.

use std::collections::BTreeSet;

use crate::dataio::{Dataset, Example};
use crate::error::{Error, Result};
use crate::graph::{Edge, SimilarityGraph};
use crate::losses::DistanceMetric;
use crate::model::{self, ModelConfig};
use crate::numerics::{DenseVector, Prng};
use crate::scalar::Scalar;
use crate::trainer::{self, BatchElement};

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Fixed alpha; `None` alternates between 1 and 0 across trials.
    pub alpha: Option<f64>,
    /// Fixed metric; `None` alternates cosine and euclidean across trials.
    pub metric: Option<DistanceMetric>,
    /// Test fixture: negates one analytic gradient component so the harness
    /// itself can be shown to catch a planted bug.
    pub inject_sign_flip: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 20,
            seed: 7,
            step: 1e-5,
            alpha: None,
            metric: None,
            inject_sign_flip: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub alpha: f64,
    pub metric: DistanceMetric,
    pub max_rel_error: f64,
    pub params_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub trials: Vec<TrialResult>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Relative error with a floor on the denominator: finite-difference
/// round-off sits near 1e-10 here, so components smaller than the floor are
/// compared absolutely instead of amplifying that noise.
fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-2)
}

struct Fixture<S: Scalar> {
    dataset: Dataset<S>,
    batch: Vec<BatchElement>,
    params: model::ModelParams<S>,
}

/// ReLU-6 kinks and near-zero embeddings make finite differences invalid, so
/// configurations close to them are redrawn.
fn fixture_is_well_conditioned<S: Scalar>(fixture: &Fixture<S>, margin: f64) -> bool {
    let mut ids: BTreeSet<u64> = fixture.batch.iter().map(|b| b.example_id).collect();
    for element in &fixture.batch {
        ids.extend(element.neighbors.iter().map(|&(v, _)| v));
    }
    for id in ids {
        let example = fixture.dataset.get(id).expect("batch ids exist");
        let trace = match model::forward(&fixture.params, &example.features) {
            Ok(t) => t,
            Err(_) => return false,
        };
        for z in &trace.pre_activations {
            for &v in z.values() {
                let v = v.as_f64();
                if v.abs() < margin || (v - 6.0).abs() < margin {
                    return false;
                }
            }
        }
        if trace.embedding.norm().as_f64() < 1e-2 {
            return false;
        }
    }
    true
}

fn build_fixture<S: Scalar>(seed: u64, trial: usize, attempt: u64) -> Result<Fixture<S>> {
    let mut rng = Prng::seed_stream(seed, 1 + trial as u64 * 64 + attempt);
    let input_dim = 2 + rng.next_below(7) as usize;
    let hidden_count = rng.next_below(3) as usize;
    let hidden_dims: Vec<usize> = (0..hidden_count)
        .map(|_| 2 + rng.next_below(7) as usize)
        .collect();
    let embedding_dim = 2 + rng.next_below(5) as usize;
    let num_classes = 4 + rng.next_below(13) as usize;
    let config = ModelConfig::new(input_dim, hidden_dims, embedding_dim, num_classes)?;
    let params = model::init_params::<S>(&config, &mut rng)?;

    // Six examples, the last two unlabeled so neighbors cover both kinds.
    let mut examples = Vec::new();
    for id in 0..6u64 {
        let features =
            DenseVector::from_f64s(&(0..input_dim).map(|_| 0.8 * rng.next_normal()).collect::<Vec<_>>());
        let labels: BTreeSet<usize> = if id < 4 {
            let count = 1 + rng.next_below(2) as usize;
            crate::numerics::sample_without_replacement(&mut rng, num_classes, count)?
                .into_iter()
                .collect()
        } else {
            BTreeSet::new()
        };
        examples.push(Example {
            id,
            features,
            labels,
        });
    }
    let dataset = Dataset::new(examples, num_classes, None)?;

    let labeled = dataset.labeled_id_set();
    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for &u in &labeled {
        let v = rng.next_below(6);
        let key = (u.min(v), u.max(v));
        if u == v || !seen.insert(key) {
            continue;
        }
        edges.push(Edge {
            u,
            v,
            weight: 0.2 + 0.7 * rng.next_f64(),
        });
    }
    let graph = SimilarityGraph::from_edges(edges, &labeled)?;

    let mut rng_example = Prng::seed_stream(seed, 500 + trial as u64 * 64 + attempt);
    let mut rng_vocab = rng_example.clone();
    rng_vocab.next_u64();
    let mut rng_neighbor = rng_vocab.clone();
    rng_neighbor.next_u64();
    let vocab = (4 + rng.next_below(5) as usize).min(num_classes);
    let batch = trainer::make_batch(
        &dataset,
        Some(&graph),
        &mut rng_example,
        &mut rng_vocab,
        &mut rng_neighbor,
        6,
        Some(vocab),
        false,
    )?;

    Ok(Fixture {
        dataset,
        batch,
        params,
    })
}

/// Runs the configured number of randomized trials, cycling alpha and metric
/// so both the supervised-only and the regularized paths are covered with
/// each distance function.
pub fn run_gradcheck<S: Scalar>(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.trials == 0 || cfg.step <= 0.0 {
        return Err(Error::InvalidArgument(
            "gradcheck needs at least one trial and a positive step".into(),
        ));
    }
    let epsilon = 0.1;
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut overall = 0.0f64;
    for trial in 0..cfg.trials {
        let alpha = cfg
            .alpha
            .unwrap_or(if trial % 2 == 0 { 1.0 } else { 0.0 });
        let metric = cfg.metric.unwrap_or(if (trial / 2) % 2 == 0 {
            DistanceMetric::Cosine
        } else {
            DistanceMetric::Euclidean
        });

        let mut fixture = build_fixture::<S>(cfg.seed, trial, 0)?;
        let mut attempt = 1;
        while !fixture_is_well_conditioned(&fixture, 100.0 * cfg.step) && attempt < 50 {
            fixture = build_fixture::<S>(cfg.seed, trial, attempt)?;
            attempt += 1;
        }

        let (_, mut analytic) = trainer::compute_batch_gradients(
            &fixture.params,
            &fixture.dataset,
            &fixture.batch,
            alpha,
            epsilon,
            metric,
        )?;
        if cfg.inject_sign_flip && trial == 0 {
            for block in analytic.blocks_mut() {
                if let Some(g) = block.iter_mut().find(|g| g.as_f64().abs() > 1e-3) {
                    *g = -*g;
                    break;
                }
            }
        }

        let h = S::from_f64(cfg.step);
        let n = fixture.params.param_count();
        let mut max_err = 0.0f64;
        for i in 0..n {
            let mut plus = fixture.params.clone();
            plus.flat_add(i, h);
            let mut minus = fixture.params.clone();
            minus.flat_add(i, -h);
            let f_plus = trainer::compute_batch_loss(
                &plus,
                &fixture.dataset,
                &fixture.batch,
                alpha,
                epsilon,
                metric,
            )?
            .total
            .as_f64();
            let f_minus = trainer::compute_batch_loss(
                &minus,
                &fixture.dataset,
                &fixture.batch,
                alpha,
                epsilon,
                metric,
            )?
            .total
            .as_f64();
            let numeric = (f_plus - f_minus) / (2.0 * cfg.step);
            max_err = max_err.max(relative_error(numeric, analytic.flat_get(i).as_f64()));
        }
        overall = overall.max(max_err);
        trials.push(TrialResult {
            trial,
            alpha,
            metric,
            max_rel_error: max_err,
            params_checked: n,
        });
    }
    Ok(GradCheckReport {
        trials,
        max_rel_error: overall,
        tolerance: GRADCHECK_TOLERANCE,
    })
}
