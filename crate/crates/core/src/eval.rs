//! Embedding quality measurement: brute-force kNN top-k accuracy, the
//! triplet margin predicate, recall-vs-margin curves, and synthetic triplet
//! generation with known ground truth.
//!
//! Evaluation embeddings are L2-normalized by the caller (see
//! `embed_dataset`); kNN ties break on ascending item id so results are
//! deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::graph::ExampleId;
use crate::losses::{ClassId, DistanceMetric};
use crate::model::{self, ModelParams};
use crate::numerics::{DenseVector, Prng};
use crate::scalar::Scalar;

/// Anchor / positive / negative item triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: ExampleId,
    pub positive: ExampleId,
    pub negative: ExampleId,
}

impl Triplet {
    pub fn new(anchor: ExampleId, positive: ExampleId, negative: ExampleId) -> Result<Self> {
        if anchor == positive || anchor == negative || positive == negative {
            return Err(Error::InvalidArgument(
                "triplet items must be distinct".into(),
            ));
        }
        Ok(Triplet {
            anchor,
            positive,
            negative,
        })
    }
}

/// An example rendered into embedding space.
#[derive(Debug, Clone)]
pub struct EmbeddedExample<S: Scalar> {
    pub id: ExampleId,
    pub embedding: DenseVector<S>,
    pub labels: BTreeSet<ClassId>,
}

/// Runs every example of `dataset` through the model, optionally applying the
/// inference-time L2 normalization.
pub fn embed_dataset<S: Scalar>(
    params: &ModelParams<S>,
    dataset: &Dataset<S>,
    normalize: bool,
) -> Result<Vec<EmbeddedExample<S>>> {
    let mut out = Vec::with_capacity(dataset.len());
    for ex in dataset.examples() {
        let trace = model::forward(params, &ex.features)?;
        let embedding = if normalize {
            model::normalize_embedding(&trace.embedding)?
        } else {
            trace.embedding
        };
        out.push(EmbeddedExample {
            id: ex.id,
            embedding,
            labels: ex.labels.clone(),
        });
    }
    Ok(out)
}

/// kNN accuracy per k, plus which k values had to be clamped to the index
/// size.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnReport {
    pub accuracy: BTreeMap<usize, f64>,
    pub clamped: Vec<usize>,
}

/// Candidate ordered worst-first so the heap root is the current worst of the
/// kept set: larger distance first, then larger id.
#[derive(Debug, PartialEq)]
struct Candidate {
    distance: f64,
    id: ExampleId,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact brute-force top-k retrieval accuracy: a query scores a hit for a
/// given k iff any of its k nearest index items shares at least one label
/// with it. `k` values beyond the index size are clamped (and reported).
pub fn knn_topk<S: Scalar>(
    queries: &[EmbeddedExample<S>],
    index: &[EmbeddedExample<S>],
    ks: &[usize],
    metric: DistanceMetric,
) -> Result<KnnReport> {
    if index.is_empty() {
        return Err(Error::InvalidArgument("knn: empty index".into()));
    }
    if queries.is_empty() {
        return Err(Error::InvalidArgument("knn: no queries".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument(
            "knn: k values must be positive".into(),
        ));
    }
    let clamped: Vec<usize> = ks.iter().copied().filter(|&k| k > index.len()).collect();
    let k_max = ks.iter().copied().max().unwrap().min(index.len());

    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for query in queries {
        // Bounded worst-at-root heap of the k_max nearest.
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k_max + 1);
        for (i, item) in index.iter().enumerate() {
            let distance = metric.distance(&query.embedding, &item.embedding)?.as_f64();
            let candidate = Candidate {
                distance,
                id: item.id,
                index: i,
            };
            if heap.len() < k_max {
                heap.push(candidate);
            } else if candidate < *heap.peek().expect("nonempty") {
                heap.pop();
                heap.push(candidate);
            }
        }
        let mut nearest = heap.into_sorted_vec();
        nearest.truncate(k_max);
        for (&k, hit_count) in hits.iter_mut() {
            let effective = k.min(index.len());
            let hit = nearest[..effective]
                .iter()
                .any(|c| !index[c.index].labels.is_disjoint(&query.labels));
            if hit {
                *hit_count += 1;
            }
        }
    }
    let accuracy = hits
        .into_iter()
        .map(|(k, h)| (k, h as f64 / queries.len() as f64))
        .collect();
    Ok(KnnReport { accuracy, clamped })
}

/// The margin predicate: the model is accurate on a triplet iff
/// `eta + d(A, P) - d(A, N) < 0` (strict).
pub fn triplet_accurate(d_anchor_positive: f64, d_anchor_negative: f64, eta: f64) -> bool {
    eta + d_anchor_positive - d_anchor_negative < 0.0
}

/// Evenly spaced margin grid, `min + i * step` up to `max` inclusive.
pub fn eta_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if step <= 0.0 || max < min {
        return Err(Error::InvalidArgument(format!(
            "invalid margin grid {min}:{max}:{step}"
        )));
    }
    let count = ((max - min) / step).round() as usize;
    Ok((0..=count).map(|i| min + i as f64 * step).collect())
}

/// Default margin grid: -1.0 to 1.0 in steps of 0.05.
pub fn default_eta_grid() -> Vec<f64> {
    eta_grid(-1.0, 1.0, 0.05).expect("default grid is valid")
}

/// Fraction of triplets satisfying the margin predicate at each grid point.
/// The curve is non-increasing in eta.
pub fn recall_vs_margin<S: Scalar>(
    triplets: &[Triplet],
    embeddings: &BTreeMap<ExampleId, DenseVector<S>>,
    metric: DistanceMetric,
    eta_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if triplets.is_empty() || eta_grid.is_empty() {
        return Err(Error::InvalidArgument(
            "recall curve needs triplets and a margin grid".into(),
        ));
    }
    let lookup = |id: ExampleId| -> Result<&DenseVector<S>> {
        embeddings.get(&id).ok_or_else(|| {
            Error::InvalidArgument(format!("triplet references unknown id {id}"))
        })
    };
    let mut margins = Vec::with_capacity(triplets.len());
    for t in triplets {
        let a = lookup(t.anchor)?;
        let d_ap = metric.distance(a, lookup(t.positive)?)?.as_f64();
        let d_an = metric.distance(a, lookup(t.negative)?)?.as_f64();
        margins.push((d_ap, d_an));
    }
    let mut curve = Vec::with_capacity(eta_grid.len());
    for &eta in eta_grid {
        let satisfied = margins
            .iter()
            .filter(|&&(d_ap, d_an)| triplet_accurate(d_ap, d_an, eta))
            .count();
        curve.push((eta, satisfied as f64 / triplets.len() as f64));
    }
    Ok(curve)
}

/// Generates triplets from a labeled dataset: the anchor and positive share a
/// class, and the negative comes from the class whose centroid is nearest to
/// the anchor's class centroid (a hard negative). Deterministic given the
/// generator state.
pub fn make_synthetic_triplets<S: Scalar>(
    dataset: &Dataset<S>,
    rng: &mut Prng,
    count: usize,
) -> Result<Vec<Triplet>> {
    // Group labeled examples by their primary (smallest) label.
    let mut members: BTreeMap<ClassId, Vec<ExampleId>> = BTreeMap::new();
    for ex in dataset.examples() {
        if let Some(&primary) = ex.labels.iter().next() {
            members.entry(primary).or_default().push(ex.id);
        }
    }
    members.retain(|_, ids| ids.len() >= 2);
    if members.len() < 2 {
        return Err(Error::InvalidArgument(
            "triplet generation needs at least two classes with two examples each".into(),
        ));
    }
    for ids in members.values_mut() {
        ids.sort_unstable();
    }
    let classes: Vec<ClassId> = members.keys().copied().collect();

    let dim = dataset.feature_dim().expect("dataset has examples");
    let centroid = |class: ClassId| -> Vec<f64> {
        let ids = &members[&class];
        let mut acc = vec![0.0f64; dim];
        for id in ids {
            for (a, v) in acc.iter_mut().zip(dataset.get(*id).unwrap().features.values()) {
                *a += v.as_f64();
            }
        }
        let n = ids.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    };
    let centroids: BTreeMap<ClassId, Vec<f64>> =
        classes.iter().map(|&c| (c, centroid(c))).collect();
    let nearest_foreign: BTreeMap<ClassId, ClassId> = classes
        .iter()
        .map(|&c| {
            let mut best = (f64::INFINITY, c);
            for &other in &classes {
                if other == c {
                    continue;
                }
                let d2: f64 = centroids[&c]
                    .iter()
                    .zip(&centroids[&other])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2 < best.0 {
                    best = (d2, other);
                }
            }
            (c, best.1)
        })
        .collect();

    let mut triplets = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while triplets.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::InvalidArgument(
                "triplet generation failed to find valid negatives; class structure too thin"
                    .into(),
            ));
        }
        let class = classes[rng.next_below(classes.len() as u64) as usize];
        let ids = &members[&class];
        let pick = crate::numerics::sample_without_replacement(rng, ids.len(), 2)?;
        let (anchor, positive) = (ids[pick[0]], ids[pick[1]]);
        let negative_class = nearest_foreign[&class];
        let anchor_labels = &dataset.get(anchor).unwrap().labels;
        let candidates: Vec<ExampleId> = members[&negative_class]
            .iter()
            .copied()
            .filter(|id| {
                dataset
                    .get(*id)
                    .map(|ex| ex.labels.is_disjoint(anchor_labels))
                    .unwrap_or(false)
            })
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let negative = candidates[rng.next_below(candidates.len() as u64) as usize];
        triplets.push(Triplet::new(anchor, positive, negative)?);
    }
    Ok(triplets)
}

/// Writes triplets as `anchor<TAB>positive<TAB>negative`.
pub fn save_triplets(triplets: &[Triplet], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# graphemb triplets v1: anchor\tpositive\tnegative")?;
    for t in triplets {
        writeln!(out, "{}\t{}\t{}", t.anchor, t.positive, t.negative)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let text = fs::read_to_string(path)?;
    let mut triplets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<ExampleId> {
            s.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid id '{s}'"),
            })
        };
        triplets.push(Triplet::new(
            parse(fields[0])?,
            parse(fields[1])?,
            parse(fields[2])?,
        )?);
    }
    Ok(triplets)
}

/// Evaluation outputs: the top-k table, the headline triplet accuracy at
/// eta = 0, and the recall-vs-margin curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top_k: BTreeMap<usize, f64>,
    pub triplet_accuracy: Option<f64>,
    pub recall_curve: Vec<(f64, f64)>,
    pub metric: DistanceMetric,
}

/// Writes the top-k table as `k<TAB>accuracy`.
pub fn write_topk_report(accuracy: &BTreeMap<usize, f64>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# graphemb topk report v1: k\taccuracy")?;
    for (k, acc) in accuracy {
        writeln!(out, "{k}\t{acc:.6}")?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the recall curve as `eta<TAB>recall`.
pub fn write_recall_curve(curve: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# graphemb recall curve v1: eta\trecall")?;
    for (eta, recall) in curve {
        writeln!(out, "{eta:.4}\t{recall:.6}")?;
    }
    fs::write(path, out)?;
    Ok(())
}
