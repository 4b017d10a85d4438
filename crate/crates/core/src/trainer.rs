//! The optimization loop: batching with weight-proportional neighbor pairing,
//! sampled-softmax cross-entropy with label smoothing, the graph regularizer,
//! momentum SGD with staircase learning-rate decay and L2 weight decay, plus
//! the label-propagation mode the objective degenerates to without a network.
//!
//! Batch losses are sums: the supervised term sums over examples and the
//! graph term over the present (example, neighbor) pairs; `alpha` trades the
//! two off. Each step pairs a labeled example with at most one sampled
//! neighbor; `exhaustive_edges` switches to summing over every incident edge
//! instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::graph::{ExampleId, SimilarityGraph};
use crate::losses::{
    self, ClassId, DistanceMetric, LabelDistribution, LossBreakdown, SmoothingConfig,
};
use crate::model::{self, ModelConfig, ModelParams};
use crate::numerics::{sample_without_replacement, DenseVector, Prng};
use crate::scalar::Scalar;

/// A boundary in the alpha phase schedule: `alpha` applies to steps strictly
/// below `until_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSegment {
    pub until_step: u64,
    pub alpha: f64,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Sampled-vocabulary size; `None` means the full class vocabulary.
    pub sampled_vocab: Option<usize>,
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_every: u64,
    pub momentum_coef: f64,
    pub weight_decay: f64,
    pub metric: DistanceMetric,
    pub max_steps: u64,
    pub seed: u64,
    /// Steps between checkpoint callbacks; 0 disables intermediate
    /// checkpoints.
    pub checkpoint_every: u64,
    /// Alpha overrides for step ranges, ascending by `until_step`; steps past
    /// the last boundary use `alpha`.
    pub phase_schedule: Vec<PhaseSegment>,
    /// Regularize over every incident edge of each batch example instead of
    /// one sampled neighbor.
    pub exhaustive_edges: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            epsilon: 0.1,
            batch_size: 24,
            sampled_vocab: None,
            lr0: 0.001,
            decay_rate: 0.9,
            decay_every: 100_000,
            momentum_coef: 0.9,
            weight_decay: 0.00004,
            metric: DistanceMetric::Cosine,
            max_steps: 1000,
            seed: 0,
            checkpoint_every: 0,
            phase_schedule: Vec::new(),
            exhaustive_edges: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument("epsilon outside [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.sampled_vocab == Some(0) {
            return Err(Error::InvalidArgument(
                "sampled_vocab must be positive".into(),
            ));
        }
        if self.lr0 <= 0.0 || !(0.0..=1.0).contains(&self.decay_rate) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive and decay_rate in [0, 1]".into(),
            ));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidArgument("decay_every must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum_coef) {
            return Err(Error::InvalidArgument("momentum outside [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        let mut prev = 0u64;
        for seg in &self.phase_schedule {
            if seg.until_step < prev || seg.alpha < 0.0 {
                return Err(Error::InvalidArgument(
                    "phase schedule boundaries must ascend with nonnegative alpha".into(),
                ));
            }
            prev = seg.until_step;
        }
        Ok(())
    }

    /// Alpha in effect at `step`.
    pub fn alpha_at(&self, step: u64) -> f64 {
        for seg in &self.phase_schedule {
            if step < seg.until_step {
                return seg.alpha;
            }
        }
        self.alpha
    }
}

/// Staircase decay: `lr0 * decay_rate^floor(step / decay_every)`.
pub fn learning_rate(cfg: &TrainConfig, step: u64) -> f64 {
    cfg.lr0 * cfg.decay_rate.powi((step / cfg.decay_every) as i32)
}

/// Momentum buffers and the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<S: Scalar> {
    pub velocity: ModelParams<S>,
    pub step: u64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        OptimizerState {
            velocity: params.zeros_like(),
            step: 0,
        }
    }
}

/// Classical momentum with L2 weight decay folded into the gradient:
/// `v <- mu v + (g + wd theta)`, `theta <- theta - lr v`.
pub fn momentum_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &ModelParams<S>,
    state: &mut OptimizerState<S>,
    lr: f64,
    momentum_coef: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.config != params.config {
        return Err(Error::InvalidArgument(
            "momentum step: gradient shapes do not match".into(),
        ));
    }
    for block in grads.blocks() {
        if block.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
    }
    let lr = S::from_f64(lr);
    let mu = S::from_f64(momentum_coef);
    let wd = S::from_f64(weight_decay);
    let g_blocks = grads.blocks();
    let mut p_blocks = params.blocks_mut();
    let v_blocks = state.velocity.blocks_mut();
    for ((p, v), g) in p_blocks.iter_mut().zip(v_blocks).zip(g_blocks) {
        for i in 0..p.len() {
            v[i] = mu * v[i] + (g[i] + wd * p[i]);
            p[i] = p[i] - lr * v[i];
        }
    }
    state.step += 1;
    Ok(())
}

/// One batch slot: a labeled example, its (optional) sampled neighbors with
/// edge weights, and the sampled label subset containing all of the example's
/// ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchElement {
    pub example_id: ExampleId,
    pub neighbors: Vec<(ExampleId, f64)>,
    pub label_subset: Vec<ClassId>,
}

/// Maps `raw` (an index into the complement of `excluded` within `0..n`) to
/// the actual class id by skipping the excluded ids.
fn map_skipping(raw: usize, excluded: &[ClassId]) -> ClassId {
    let mut mapped = raw;
    for &e in excluded {
        if mapped >= e {
            mapped += 1;
        } else {
            break;
        }
    }
    mapped
}

/// Assembles a batch: uniform labeled-example draws (with replacement), a
/// weight-proportional neighbor per example when the graph provides one, and
/// a per-example label subset of size `sampled_vocab` that force-includes the
/// ground-truth labels. Neighbors without features in the dataset are
/// treated as absent.
#[allow(clippy::too_many_arguments)]
pub fn make_batch<S: Scalar>(
    dataset: &Dataset<S>,
    graph: Option<&SimilarityGraph>,
    rng_example: &mut Prng,
    rng_vocab: &mut Prng,
    rng_neighbor: &mut Prng,
    batch_size: usize,
    sampled_vocab: Option<usize>,
    exhaustive_edges: bool,
) -> Result<Vec<BatchElement>> {
    let labeled = dataset.labeled_ids();
    if labeled.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot build a batch from a dataset with no labeled examples".into(),
        ));
    }
    let num_classes = dataset.num_classes();
    let vocab = sampled_vocab.unwrap_or(num_classes);
    if vocab > num_classes {
        return Err(Error::InvalidArgument(format!(
            "sampled_vocab {vocab} exceeds the class count {num_classes}"
        )));
    }
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let id = labeled[rng_example.next_below(labeled.len() as u64) as usize];
        let example = dataset.get(id).expect("labeled id comes from the dataset");
        let gt: Vec<ClassId> = example.labels.iter().copied().collect();
        if vocab < gt.len() {
            return Err(Error::InvalidArgument(format!(
                "sampled_vocab {vocab} is smaller than the ground-truth label set ({})",
                gt.len()
            )));
        }
        let extra = vocab - gt.len();
        let raw = sample_without_replacement(rng_vocab, num_classes - gt.len(), extra)?;
        let mut subset: Vec<ClassId> = gt.clone();
        subset.extend(raw.into_iter().map(|r| map_skipping(r, &gt)));
        subset.sort_unstable();

        let neighbors = match graph {
            Some(g) if g.contains_vertex(id) => {
                if exhaustive_edges {
                    g.neighbors(id)
                        .map(<[(ExampleId, f64)]>::to_vec)
                        .unwrap_or_default()
                } else {
                    g.sample_neighbor(id, rng_neighbor)?
                        .into_iter()
                        .collect()
                }
            }
            _ => Vec::new(),
        };
        let neighbors = neighbors
            .into_iter()
            .filter(|(v, _)| dataset.get(*v).is_some())
            .collect();

        batch.push(BatchElement {
            example_id: id,
            neighbors,
            label_subset: subset,
        });
    }
    Ok(batch)
}

/// Distance for the regularizer term. With `alpha == 0` the term is pure
/// telemetry, so a degenerate pair (a zero embedding under the cosine
/// metric) contributes nothing instead of aborting the step; with a positive
/// `alpha` the error stands.
fn pair_distance_for_telemetry<S: Scalar>(
    metric: DistanceMetric,
    u: &DenseVector<S>,
    v: &DenseVector<S>,
    alpha: f64,
) -> Result<Option<S>> {
    match metric.distance(u, v) {
        Ok(d) => Ok(Some(d)),
        Err(Error::DegenerateInput(_)) if alpha == 0.0 => Ok(None),
        Err(e) => Err(e),
    }
}

/// Forward-only value of the batch objective. Independent of the backward
/// pass; the gradient-check harness differences this.
pub fn compute_batch_loss<S: Scalar>(
    params: &ModelParams<S>,
    dataset: &Dataset<S>,
    batch: &[BatchElement],
    alpha: f64,
    epsilon: f64,
    metric: DistanceMetric,
) -> Result<LossBreakdown<S>> {
    let mut supervised = S::zero();
    let mut graph_term = S::zero();
    for element in batch {
        let example = dataset.get(element.example_id).ok_or_else(|| {
            Error::InvalidArgument(format!("example {} not in dataset", element.example_id))
        })?;
        let trace = model::forward(params, &example.features)?;
        let z = model::logits(params, &trace.embedding, &element.label_subset)?;
        let subset: BTreeSet<ClassId> = element.label_subset.iter().copied().collect();
        let q = losses::ground_truth_distribution::<S>(&example.labels, &subset)?;
        let smoothing = SmoothingConfig::new(epsilon, subset.len())?;
        let target = losses::smooth(&q, &smoothing)?;
        supervised = supervised + losses::cross_entropy_from_logits(&z, &target)?;

        for &(neighbor_id, weight) in &element.neighbors {
            let neighbor = dataset.get(neighbor_id).ok_or_else(|| {
                Error::InvalidArgument(format!("neighbor {neighbor_id} not in dataset"))
            })?;
            let neighbor_trace = model::forward(params, &neighbor.features)?;
            if let Some(d) =
                pair_distance_for_telemetry(metric, &trace.embedding, &neighbor_trace.embedding, alpha)?
            {
                graph_term = graph_term + S::from_f64(weight) * d;
            }
        }
    }
    losses::total_objective(supervised, graph_term, alpha)
}

/// Value and analytic gradient of the batch objective. Gradients accumulate
/// in batch order so results are deterministic. The graph term contributes
/// through both operands of the distance; when `alpha` is zero its value is
/// still computed for telemetry but no gradient work happens, which keeps the
/// parameter trajectory bit-identical to a graph-free run.
pub fn compute_batch_gradients<S: Scalar>(
    params: &ModelParams<S>,
    dataset: &Dataset<S>,
    batch: &[BatchElement],
    alpha: f64,
    epsilon: f64,
    metric: DistanceMetric,
) -> Result<(LossBreakdown<S>, ModelParams<S>)> {
    let mut grads = params.zeros_like();
    let mut supervised = S::zero();
    let mut graph_term = S::zero();
    for element in batch {
        let example = dataset.get(element.example_id).ok_or_else(|| {
            Error::InvalidArgument(format!("example {} not in dataset", element.example_id))
        })?;
        let trace = model::forward(params, &example.features)?;
        let z = model::logits(params, &trace.embedding, &element.label_subset)?;
        let subset: BTreeSet<ClassId> = element.label_subset.iter().copied().collect();
        let predicted = losses::sampled_softmax(&z, &subset)?;
        let q = losses::ground_truth_distribution::<S>(&example.labels, &subset)?;
        let smoothing = SmoothingConfig::new(epsilon, subset.len())?;
        let target = losses::smooth(&q, &smoothing)?;
        supervised = supervised + losses::cross_entropy_from_logits(&z, &target)?;
        let logit_grads = losses::logit_gradient(&predicted, &target)?;

        let mut grad_embedding: Option<DenseVector<S>> = None;
        for &(neighbor_id, weight) in &element.neighbors {
            let neighbor = dataset.get(neighbor_id).ok_or_else(|| {
                Error::InvalidArgument(format!("neighbor {neighbor_id} not in dataset"))
            })?;
            let neighbor_trace = model::forward(params, &neighbor.features)?;
            if let Some(d) =
                pair_distance_for_telemetry(metric, &trace.embedding, &neighbor_trace.embedding, alpha)?
            {
                graph_term = graph_term + S::from_f64(weight) * d;
            }
            if alpha > 0.0 {
                let (gu, gv) =
                    metric.pair_gradients(&trace.embedding, &neighbor_trace.embedding)?;
                let factor = S::from_f64(alpha * weight);
                match &mut grad_embedding {
                    Some(acc) => acc.axpy(factor, &gu)?,
                    None => grad_embedding = Some(gu.scale(factor)),
                }
                model::backward_into(
                    params,
                    &neighbor_trace,
                    Some(&gv.scale(factor)),
                    &BTreeMap::new(),
                    &mut grads,
                )?;
            }
        }
        model::backward_into(
            params,
            &trace,
            grad_embedding.as_ref(),
            &logit_grads,
            &mut grads,
        )?;
    }
    let breakdown = losses::total_objective(supervised, graph_term, alpha)?;
    Ok((breakdown, grads))
}

/// Telemetry for one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub lr: f64,
    pub supervised: f64,
    pub graph: f64,
    pub total: f64,
    pub seconds: f64,
}

/// Runs one optimization step on `batch`: evaluates the objective at the
/// alpha currently in effect and applies one momentum update.
pub fn train_step<S: Scalar>(
    params: &mut ModelParams<S>,
    state: &mut OptimizerState<S>,
    dataset: &Dataset<S>,
    batch: &[BatchElement],
    cfg: &TrainConfig,
) -> Result<TrainRecord> {
    let step = state.step;
    let alpha = cfg.alpha_at(step);
    let lr = learning_rate(cfg, step);
    let (breakdown, grads) =
        match compute_batch_gradients(params, dataset, batch, alpha, cfg.epsilon, cfg.metric) {
            Ok(result) => result,
            Err(e) => {
                // Overflow inside a step surfaces as invalid inputs to the
                // downstream ops; exploded parameters mean divergence.
                let limit = S::from_f64(1e100);
                let exploded = params
                    .blocks()
                    .iter()
                    .any(|b| b.iter().any(|v| !v.is_finite() || v.abs() > limit));
                if exploded {
                    return Err(Error::Diverged(format!(
                        "parameters exploded at step {step}: {e}"
                    )));
                }
                return Err(e);
            }
        };
    if !breakdown.total.is_finite() {
        return Err(Error::Diverged(format!(
            "loss became non-finite at step {step}"
        )));
    }
    momentum_step(
        params,
        &grads,
        state,
        lr,
        cfg.momentum_coef,
        cfg.weight_decay,
    )?;
    Ok(TrainRecord {
        step,
        lr,
        supervised: breakdown.supervised.as_f64(),
        graph: breakdown.graph.as_f64(),
        total: breakdown.total.as_f64(),
        seconds: 0.0,
    })
}

/// Callback invoked with the step count and a parameter snapshot whenever a
/// checkpoint is due.
pub type CheckpointSink<'a, S> = &'a mut dyn FnMut(u64, &ModelParams<S>) -> Result<()>;

/// Full training run. Fully deterministic given the seed: parameter init,
/// example choice, vocabulary sampling and neighbor draws each consume an
/// independent substream, so disabling the graph does not shift the others.
///
/// `on_checkpoint` fires every `checkpoint_every` steps (when nonzero) with
/// the step count and a snapshot of the parameters.
pub fn train<S: Scalar>(
    dataset: &Dataset<S>,
    graph: Option<&SimilarityGraph>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_checkpoint: Option<CheckpointSink<'_, S>>,
) -> Result<(ModelParams<S>, Vec<TrainRecord>)> {
    cfg.validate()?;
    model_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if dataset.feature_dim() != Some(model_cfg.input_dim) {
        return Err(Error::InvalidArgument(format!(
            "dataset features ({:?}) do not match the model input dimension ({})",
            dataset.feature_dim(),
            model_cfg.input_dim
        )));
    }
    if dataset.num_classes() != model_cfg.num_classes {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, model head expects {}",
            dataset.num_classes(),
            model_cfg.num_classes
        )));
    }

    let mut rng_init = Prng::seed_stream(cfg.seed, 0);
    let mut rng_example = Prng::seed_stream(cfg.seed, 1);
    let mut rng_vocab = Prng::seed_stream(cfg.seed, 2);
    let mut rng_neighbor = Prng::seed_stream(cfg.seed, 3);

    let mut params = model::init_params::<S>(model_cfg, &mut rng_init)?;
    let mut state = OptimizerState::new(&params);
    let mut records = Vec::with_capacity(cfg.max_steps as usize);
    while state.step < cfg.max_steps {
        let started = Instant::now();
        let batch = make_batch(
            dataset,
            graph,
            &mut rng_example,
            &mut rng_vocab,
            &mut rng_neighbor,
            cfg.batch_size,
            cfg.sampled_vocab,
            cfg.exhaustive_edges,
        )?;
        let mut record = train_step(&mut params, &mut state, dataset, &batch, cfg)?;
        record.seconds = started.elapsed().as_secs_f64();
        records.push(record);
        params.check_finite()?;
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
            if let Some(callback) = on_checkpoint.as_deref_mut() {
                callback(state.step, &params)?;
            }
        }
    }
    Ok((params, records))
}

/// Writes the step log as `step<TAB>lr<TAB>supervised<TAB>graph<TAB>total<TAB>seconds`.
pub fn write_train_log(records: &[TrainRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# graphemb train log v1: step\tlr\tsupervised\tgraph\ttotal\tseconds")?;
    for r in records {
        writeln!(
            out,
            "{}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.6}",
            r.step, r.lr, r.supervised, r.graph, r.total, r.seconds
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Result of a label-propagation run.
#[derive(Debug, Clone)]
pub struct LabelPropagationResult<S: Scalar> {
    pub distributions: BTreeMap<ExampleId, LabelDistribution<S>>,
    /// Largest per-entry change during the final iteration (0 when no
    /// iterations ran).
    pub last_max_delta: f64,
    pub iterations_run: u64,
}

/// Iterative label propagation over the graph: each vertex's distribution
/// moves to the weight-normalized average of its neighbors' (synchronous
/// updates), renormalized every iteration. Labeled vertices stay clamped to
/// their ground-truth distribution when `clamp` is set; unlabeled vertices
/// start uniform over the union of the labeled supports.
pub fn label_propagation<S: Scalar>(
    graph: &SimilarityGraph,
    labeled: &BTreeMap<ExampleId, LabelDistribution<S>>,
    iterations: u64,
    clamp: bool,
) -> Result<LabelPropagationResult<S>> {
    if labeled.is_empty() {
        return Err(Error::InvalidArgument(
            "label propagation needs at least one labeled vertex".into(),
        ));
    }
    let support: Vec<ClassId> = labeled
        .values()
        .flat_map(LabelDistribution::support)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vertices: Vec<ExampleId> = graph
        .vertices()
        .chain(labeled.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let uniform = 1.0 / support.len() as f64;
    let mut current: BTreeMap<ExampleId, Vec<f64>> = BTreeMap::new();
    for &v in &vertices {
        let dist = match labeled.get(&v) {
            Some(d) => support
                .iter()
                .map(|&k| d.mass_of(k).map_or(0.0, Scalar::as_f64))
                .collect(),
            None => vec![uniform; support.len()],
        };
        current.insert(v, dist);
    }

    let mut last_max_delta = 0.0f64;
    for _ in 0..iterations {
        let mut next = current.clone();
        last_max_delta = 0.0;
        for &v in &vertices {
            if clamp && labeled.contains_key(&v) {
                continue;
            }
            let neighbors = match graph.neighbors(v) {
                Some(n) if !n.is_empty() => n,
                _ => continue,
            };
            let mut acc = vec![0.0f64; support.len()];
            let mut total_weight = 0.0;
            for &(nbr, w) in neighbors {
                let nbr_dist = &current[&nbr];
                for (a, m) in acc.iter_mut().zip(nbr_dist) {
                    *a += w * m;
                }
                total_weight += w;
            }
            for a in &mut acc {
                *a /= total_weight;
            }
            let mass: f64 = acc.iter().sum();
            if mass > 0.0 {
                for a in &mut acc {
                    *a /= mass;
                }
            }
            for (new, old) in acc.iter().zip(&current[&v]) {
                last_max_delta = last_max_delta.max((new - old).abs());
            }
            next.insert(v, acc);
        }
        current = next;
    }

    let mut distributions = BTreeMap::new();
    for (v, dist) in current {
        let mass: BTreeMap<ClassId, S> = support
            .iter()
            .zip(&dist)
            .map(|(&k, &m)| (k, S::from_f64(m)))
            .collect();
        distributions.insert(v, LabelDistribution::new(mass)?);
    }
    Ok(LabelPropagationResult {
        distributions,
        last_max_delta,
        iterations_run: iterations,
    })
}
