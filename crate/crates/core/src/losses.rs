//! Objective-function math: softmax and sampled softmax, label smoothing,
//! cross-entropy, the distance functions, and the weighted neighbor-distance
//! regularizer, together with their analytic gradients.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numerics::DenseVector;
use crate::scalar::Scalar;

/// Class identifier. Classes are dense integers in `0..num_classes`.
pub type ClassId = usize;

static DISTRIBUTIONS_VALIDATED: AtomicU64 = AtomicU64::new(0);

/// Number of `LabelDistribution`s that have passed construction-time
/// validation since process start. Lets test harnesses confirm that a run
/// actually exercised the sum-to-one check.
pub fn validated_distribution_count() -> u64 {
    DISTRIBUTIONS_VALIDATED.load(Ordering::Relaxed)
}

/// A probability distribution over a finite support of class ids.
///
/// Construction validates non-negativity and that the total mass is 1; every
/// distribution that flows through training has therefore been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution<S: Scalar> {
    mass: BTreeMap<ClassId, S>,
}

impl<S: Scalar> LabelDistribution<S> {
    pub fn new(mass: BTreeMap<ClassId, S>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidArgument(
                "label distribution must have nonempty support".into(),
            ));
        }
        let mut total = 0.0f64;
        for (&k, &m) in &mass {
            let m = m.as_f64();
            if !m.is_finite() || m < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "label distribution has invalid mass {m} at class {k}"
                )));
            }
            total += m;
        }
        let tol = 1e-12f64.max(4.0 * mass.len() as f64 * S::epsilon().as_f64());
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "label distribution mass sums to {total}, expected 1"
            )));
        }
        DISTRIBUTIONS_VALIDATED.fetch_add(1, Ordering::Relaxed);
        Ok(LabelDistribution { mass })
    }

    pub fn support(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.mass.keys().copied()
    }

    pub fn support_size(&self) -> usize {
        self.mass.len()
    }

    pub fn contains(&self, k: ClassId) -> bool {
        self.mass.contains_key(&k)
    }

    /// Mass at `k`; `None` if `k` is outside the support.
    pub fn mass_of(&self, k: ClassId) -> Option<S> {
        self.mass.get(&k).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, S)> + '_ {
        self.mass.iter().map(|(&k, &m)| (k, m))
    }

    pub fn total_mass(&self) -> S {
        let mut acc = S::zero();
        for m in self.mass.values() {
            acc = acc + *m;
        }
        acc
    }
}

/// Label-smoothing parameters: mixing weight and the sampled-vocabulary size
/// the uniform component is spread over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    pub epsilon: f64,
    pub sampled_vocab_size: usize,
}

impl SmoothingConfig {
    pub const DEFAULT_EPSILON: f64 = 0.1;

    pub fn new(epsilon: f64, sampled_vocab_size: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!(
                "smoothing epsilon {epsilon} outside [0, 1]"
            )));
        }
        if sampled_vocab_size == 0 {
            return Err(Error::InvalidArgument(
                "sampled vocabulary size must be positive".into(),
            ));
        }
        Ok(SmoothingConfig {
            epsilon,
            sampled_vocab_size,
        })
    }
}

/// Scalar loss split into its supervised and graph components,
/// `total = supervised + alpha * graph`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<S: Scalar> {
    pub supervised: S,
    pub graph: S,
    pub alpha: S,
    pub total: S,
}

impl<S: Scalar> LossBreakdown<S> {
    pub fn is_consistent(&self) -> bool {
        let recomputed = self.supervised + self.alpha * self.graph;
        (self.total - recomputed).abs().as_f64() <= 1e-12 * self.total.as_f64().abs().max(1.0)
    }
}

fn check_logits<S: Scalar>(logits: &BTreeMap<ClassId, S>) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("softmax over empty logits".into()));
    }
    for (&k, &z) in logits {
        if !z.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite logit {z} at class {k}"
            )));
        }
    }
    Ok(())
}

fn max_logit<S: Scalar>(logits: &BTreeMap<ClassId, S>) -> S {
    let mut m = S::neg_infinity();
    for &z in logits.values() {
        if z > m {
            m = z;
        }
    }
    m
}

/// Softmax over the full set of supplied logits, with max-subtraction for
/// numerical stability.
pub fn softmax<S: Scalar>(logits: &BTreeMap<ClassId, S>) -> Result<LabelDistribution<S>> {
    check_logits(logits)?;
    let m = max_logit(logits);
    let mut denom = S::zero();
    let mut exps = BTreeMap::new();
    for (&k, &z) in logits {
        let e = (z - m).exp();
        denom = denom + e;
        exps.insert(k, e);
    }
    let mass = exps.into_iter().map(|(k, e)| (k, e / denom)).collect();
    LabelDistribution::new(mass)
}

/// Softmax whose normalization constant runs over the sampled subset only.
/// `subset` must be exactly the key set of `logits`.
pub fn sampled_softmax<S: Scalar>(
    logits: &BTreeMap<ClassId, S>,
    subset: &BTreeSet<ClassId>,
) -> Result<LabelDistribution<S>> {
    if logits.len() != subset.len() || !logits.keys().all(|k| subset.contains(k)) {
        return Err(Error::InvalidArgument(
            "sampled softmax: logit keys do not match the sampled subset".into(),
        ));
    }
    check_logits(logits)?;
    let m = max_logit(logits);
    let mut denom = S::zero();
    let mut shifted = BTreeMap::new();
    for (&k, &z) in logits {
        let e = (z - m).exp();
        denom = denom + e;
        shifted.insert(k, e);
    }
    let mass = shifted.into_iter().map(|(k, e)| (k, e / denom)).collect();
    LabelDistribution::new(mass)
}

/// Uniform ground-truth distribution over an example's labels, expressed on
/// the sampled subset (zero mass on non-label members).
///
/// The sampler must force-include the ground-truth labels in the subset;
/// anything else is a precondition violation.
pub fn ground_truth_distribution<S: Scalar>(
    labels: &BTreeSet<ClassId>,
    subset: &BTreeSet<ClassId>,
) -> Result<LabelDistribution<S>> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "ground-truth distribution needs at least one label".into(),
        ));
    }
    if !labels.is_subset(subset) {
        return Err(Error::InvalidArgument(
            "ground-truth labels missing from the sampled subset; the sampler must force-include them"
                .into(),
        ));
    }
    let share = S::one() / S::from_f64(labels.len() as f64);
    let mass = subset
        .iter()
        .map(|&k| (k, if labels.contains(&k) { share } else { S::zero() }))
        .collect();
    LabelDistribution::new(mass)
}

/// Label smoothing: mixes `q` with the uniform distribution over the sampled
/// vocabulary, `q'(k) = (1 - eps) q(k) + eps / |L|`.
pub fn smooth<S: Scalar>(
    q: &LabelDistribution<S>,
    cfg: &SmoothingConfig,
) -> Result<LabelDistribution<S>> {
    if q.support_size() != cfg.sampled_vocab_size {
        return Err(Error::InvalidArgument(format!(
            "smoothing config expects support of size {}, distribution has {}",
            cfg.sampled_vocab_size,
            q.support_size()
        )));
    }
    let eps = S::from_f64(cfg.epsilon);
    let uniform = eps / S::from_f64(cfg.sampled_vocab_size as f64);
    let keep = S::one() - eps;
    let mass = q.iter().map(|(k, m)| (k, keep * m + uniform)).collect();
    LabelDistribution::new(mass)
}

/// Cross-entropy `-sum_k q(k) log p(k)`.
pub fn cross_entropy<S: Scalar>(
    p: &LabelDistribution<S>,
    q: &LabelDistribution<S>,
) -> Result<S> {
    let mut acc = S::zero();
    for (k, qk) in q.iter() {
        if qk == S::zero() {
            continue;
        }
        let pk = p.mass_of(k).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "cross-entropy: class {k} carries target mass but is outside the prediction support"
            ))
        })?;
        if pk <= S::zero() {
            return Err(Error::DegenerateInput(format!(
                "cross-entropy: target mass on class {k} where prediction is zero"
            )));
        }
        acc = acc - qk * pk.ln();
    }
    Ok(acc)
}

/// Cross-entropy computed directly from logits in log-sum-exp form,
/// `-sum_k q(k) (z_k - lse(z))`. Avoids the underflow of exponentiating and
/// re-taking logs; this is the form the trainer uses for loss values.
pub fn cross_entropy_from_logits<S: Scalar>(
    logits: &BTreeMap<ClassId, S>,
    q: &LabelDistribution<S>,
) -> Result<S> {
    check_logits(logits)?;
    let m = max_logit(logits);
    let mut denom = S::zero();
    for &z in logits.values() {
        denom = denom + (z - m).exp();
    }
    let lse = m + denom.ln();
    let mut acc = S::zero();
    for (k, qk) in q.iter() {
        if qk == S::zero() {
            continue;
        }
        let z = logits.get(&k).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "cross-entropy: class {k} carries target mass but has no logit"
            ))
        })?;
        acc = acc - qk * (*z - lse);
    }
    Ok(acc)
}

/// Distance function used by the regularizer and the evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMetric {
    Cosine,
    Euclidean,
}

impl DistanceMetric {
    pub fn distance<S: Scalar>(&self, u: &DenseVector<S>, v: &DenseVector<S>) -> Result<S> {
        match self {
            DistanceMetric::Cosine => cosine_distance(u, v),
            DistanceMetric::Euclidean => euclidean_distance(u, v),
        }
    }

    /// Gradients of `d(u, v)` with respect to both operands.
    pub fn pair_gradients<S: Scalar>(
        &self,
        u: &DenseVector<S>,
        v: &DenseVector<S>,
    ) -> Result<(DenseVector<S>, DenseVector<S>)> {
        if u.dim() != v.dim() {
            return Err(Error::InvalidArgument(format!(
                "distance gradient: dimension mismatch {} vs {}",
                u.dim(),
                v.dim()
            )));
        }
        match self {
            DistanceMetric::Euclidean => {
                let diff = u.sub(v)?;
                let d = diff.norm();
                if d == S::zero() {
                    // Subgradient at the minimum.
                    return Ok((DenseVector::zeros(u.dim()), DenseVector::zeros(v.dim())));
                }
                let inv = S::one() / d;
                Ok((diff.scale(inv), diff.scale(-inv)))
            }
            DistanceMetric::Cosine => {
                let nu = u.norm();
                let nv = v.norm();
                if nu == S::zero() || nv == S::zero() {
                    return Err(Error::DegenerateInput(
                        "cosine distance gradient of a zero vector".into(),
                    ));
                }
                let dot = u.dot(v)?;
                let inv = S::one() / (nu * nv);
                let cu = dot / (nu * nu);
                let cv = dot / (nv * nv);
                let gu = DenseVector::new(
                    u.values()
                        .iter()
                        .zip(v.values())
                        .map(|(&ui, &vi)| (cu * ui - vi) * inv)
                        .collect(),
                );
                let gv = DenseVector::new(
                    u.values()
                        .iter()
                        .zip(v.values())
                        .map(|(&ui, &vi)| (cv * vi - ui) * inv)
                        .collect(),
                );
                Ok((gu, gv))
            }
        }
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(DistanceMetric::Cosine),
            "euclidean" => Ok(DistanceMetric::Euclidean),
            other => Err(Error::InvalidArgument(format!(
                "unknown distance metric '{other}' (expected 'cosine' or 'euclidean')"
            ))),
        }
    }
}

impl std::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceMetric::Cosine => write!(f, "cosine"),
            DistanceMetric::Euclidean => write!(f, "euclidean"),
        }
    }
}

/// Cosine distance `1 - u.v / (|u||v|)`, clamped to [0, 2].
pub fn cosine_distance<S: Scalar>(u: &DenseVector<S>, v: &DenseVector<S>) -> Result<S> {
    if u.dim() != v.dim() {
        return Err(Error::InvalidArgument(format!(
            "cosine distance: dimension mismatch {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu == S::zero() || nv == S::zero() {
        return Err(Error::DegenerateInput(
            "cosine distance of a zero vector".into(),
        ));
    }
    let sim = (u.dot(v)? / (nu * nv)).min(S::one()).max(-S::one());
    Ok(S::one() - sim)
}

/// Euclidean (L2) distance.
pub fn euclidean_distance<S: Scalar>(u: &DenseVector<S>, v: &DenseVector<S>) -> Result<S> {
    if u.dim() != v.dim() {
        return Err(Error::InvalidArgument(format!(
            "euclidean distance: dimension mismatch {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    Ok(u.sub(v)?.norm())
}

/// Weighted sum of embedding distances over the supplied neighbor pairs,
/// `sum_i w_i d(u_i, v_i)`.
pub fn graph_regularizer<S: Scalar>(
    pairs: &[(&DenseVector<S>, &DenseVector<S>, f64)],
    metric: DistanceMetric,
) -> Result<S> {
    let mut acc = S::zero();
    for &(u, v, w) in pairs {
        if w <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "graph regularizer: edge weight {w} must be positive"
            )));
        }
        acc = acc + S::from_f64(w) * metric.distance(u, v)?;
    }
    Ok(acc)
}

/// Combines the supervised and graph terms into the training objective,
/// `total = supervised + alpha * graph`.
pub fn total_objective<S: Scalar>(supervised: S, graph: S, alpha: f64) -> Result<LossBreakdown<S>> {
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "regularization multiplier alpha {alpha} must be nonnegative"
        )));
    }
    let alpha = S::from_f64(alpha);
    Ok(LossBreakdown {
        supervised,
        graph,
        alpha,
        total: supervised + alpha * graph,
    })
}

/// Gradient of the cross-entropy with respect to the logits on the sampled
/// subset: `p'(k) - q'(k)`. Supports must be aligned.
pub fn logit_gradient<S: Scalar>(
    predicted: &LabelDistribution<S>,
    target: &LabelDistribution<S>,
) -> Result<BTreeMap<ClassId, S>> {
    if predicted.support_size() != target.support_size()
        || !predicted.support().eq(target.support())
    {
        return Err(Error::InvalidArgument(
            "logit gradient: prediction and target supports differ".into(),
        ));
    }
    Ok(predicted
        .iter()
        .map(|(k, pk)| (k, pk - target.mass_of(k).unwrap()))
        .collect())
}

/// All gradients one training example contributes: the logit gradient of the
/// smoothed cross-entropy plus, for each neighbor pair, the gradients of
/// `alpha * w * d(u, v)` with respect to both embeddings.
#[allow(clippy::type_complexity)]
pub fn loss_gradients<S: Scalar>(
    predicted: &LabelDistribution<S>,
    target: &LabelDistribution<S>,
    pairs: &[(&DenseVector<S>, &DenseVector<S>, f64)],
    alpha: f64,
    metric: DistanceMetric,
) -> Result<(BTreeMap<ClassId, S>, Vec<(DenseVector<S>, DenseVector<S>)>)> {
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "regularization multiplier alpha {alpha} must be nonnegative"
        )));
    }
    let logit_grads = logit_gradient(predicted, target)?;
    let mut pair_grads = Vec::with_capacity(pairs.len());
    for &(u, v, w) in pairs {
        let (gu, gv) = metric.pair_gradients(u, v)?;
        let factor = S::from_f64(alpha * w);
        pair_grads.push((gu.scale(factor), gv.scale(factor)));
    }
    Ok((logit_grads, pair_grads))
}
