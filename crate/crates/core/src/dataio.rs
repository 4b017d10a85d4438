//! Datasets and synthetic-data generation: labeled/unlabeled example sets and
//! simulated interaction logs whose induced graph is consistent with the
//! ground-truth classes.
//!
//! File formats are UTF-8, LF-terminated, tab-separated text with '#' comment
//! lines. Feature values and weights are written with 17 significant digits
//! so round-trips are bit-exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{ClickKind, ClickLogRecord, ExampleId};
use crate::losses::ClassId;
use crate::numerics::{sample_without_replacement, DenseVector, Prng};
use crate::scalar::Scalar;

/// One labeled or unlabeled item. An empty label set marks an unlabeled
/// example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<S: Scalar> {
    pub id: ExampleId,
    pub features: DenseVector<S>,
    pub labels: BTreeSet<ClassId>,
}

impl<S: Scalar> Example<S> {
    pub fn is_labeled(&self) -> bool {
        !self.labels.is_empty()
    }
}

/// Which role a dataset file plays in a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Query,
    Index,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Query => write!(f, "query"),
            Split::Index => write!(f, "index"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "index" => Ok(Split::Index),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// A collection of examples with a shared class space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S: Scalar> {
    examples: Vec<Example<S>>,
    num_classes: usize,
    split: Option<Split>,
    index_of: BTreeMap<ExampleId, usize>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(
        examples: Vec<Example<S>>,
        num_classes: usize,
        split: Option<Split>,
    ) -> Result<Self> {
        let mut index_of = BTreeMap::new();
        let mut dim: Option<usize> = None;
        for (i, ex) in examples.iter().enumerate() {
            if index_of.insert(ex.id, i).is_some() {
                return Err(Error::Schema(format!("duplicate example id {}", ex.id)));
            }
            match dim {
                None => dim = Some(ex.features.dim()),
                Some(d) if d != ex.features.dim() => {
                    return Err(Error::Schema(format!(
                        "example {} has {} features, expected {d}",
                        ex.id,
                        ex.features.dim()
                    )));
                }
                _ => {}
            }
            ex.features.check_finite().map_err(|_| {
                Error::Schema(format!("example {} has a non-finite feature", ex.id))
            })?;
            if let Some(&max) = ex.labels.iter().next_back() {
                if max >= num_classes {
                    return Err(Error::Schema(format!(
                        "example {} has label {max} outside 0..{num_classes}",
                        ex.id
                    )));
                }
            }
        }
        Ok(Dataset {
            examples,
            num_classes,
            split,
            index_of,
        })
    }

    pub fn examples(&self) -> &[Example<S>] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Option<Split> {
        self.split
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.dim())
    }

    pub fn get(&self, id: ExampleId) -> Option<&Example<S>> {
        self.index_of.get(&id).map(|&i| &self.examples[i])
    }

    /// Ids of labeled examples, ascending.
    pub fn labeled_ids(&self) -> Vec<ExampleId> {
        let mut ids: Vec<ExampleId> = self
            .examples
            .iter()
            .filter(|e| e.is_labeled())
            .map(|e| e.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn labeled_id_set(&self) -> BTreeSet<ExampleId> {
        self.examples
            .iter()
            .filter(|e| e.is_labeled())
            .map(|e| e.id)
            .collect()
    }
}

/// Writes a dataset file: `#!` pragma lines carrying the class count and
/// split, then one `id<TAB>labels<TAB>features...` line per example. The
/// label field is a comma-separated id list, empty for unlabeled examples.
pub fn save_dataset<S: Scalar>(dataset: &Dataset<S>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# graphemb dataset v1: id\tlabels\tfeatures...")?;
    writeln!(out, "#! num_classes {}", dataset.num_classes)?;
    if let Some(split) = dataset.split {
        writeln!(out, "#! split {split}")?;
    }
    for ex in &dataset.examples {
        let labels = ex
            .labels
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",");
        write!(out, "{}\t{labels}", ex.id)?;
        for v in ex.features.values() {
            write!(out, "\t{:.16e}", v.as_f64())?;
        }
        writeln!(out)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_dataset<S: Scalar>(path: &Path) -> Result<Dataset<S>> {
    let text = fs::read_to_string(path)?;
    let mut num_classes = 0usize;
    let mut split = None;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if let Some(pragma) = line.strip_prefix("#!") {
            let mut parts = pragma.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some("num_classes"), Some(v)) => {
                    num_classes = v.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: "invalid num_classes pragma".into(),
                    })?;
                }
                (Some("split"), Some(v)) => {
                    split = Some(v.parse()?);
                }
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown pragma '{pragma}'"),
                    });
                }
            }
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let id: ExampleId = fields
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(Error::Parse {
                line: line_no,
                message: "invalid example id".into(),
            })?;
        let label_field = fields.next().ok_or(Error::Parse {
            line: line_no,
            message: "missing label field".into(),
        })?;
        let mut labels = BTreeSet::new();
        if !label_field.is_empty() {
            for token in label_field.split(',') {
                let label: ClassId = token.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("invalid label '{token}'"),
                })?;
                labels.insert(label);
            }
        }
        let mut values = Vec::new();
        for token in fields {
            let v: f64 = token.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid feature value '{token}'"),
            })?;
            values.push(v);
        }
        if values.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "example has no features".into(),
            });
        }
        examples.push(Example {
            id,
            features: DenseVector::from_f64s(&values),
            labels,
        });
    }
    Dataset::new(examples, num_classes, split)
}

/// A generated dataset together with the true class of every example,
/// including the ones published as unlabeled. The log generator needs the
/// hidden classes to aim intra-class interactions at unlabeled targets.
#[derive(Debug, Clone)]
pub struct SyntheticData<S: Scalar> {
    pub dataset: Dataset<S>,
    pub true_classes: BTreeMap<ExampleId, ClassId>,
}

/// Generates a clustered dataset: class centroids uniform on the unit sphere,
/// examples at `centroid + noise_sigma * gaussian`. An exact
/// `round(n * unlabeled_fraction)` subset is published without labels, and
/// labeled examples gain a second label (the nearest other class) at
/// `multilabel_rate`.
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic<S: Scalar>(
    rng: &mut Prng,
    num_classes: usize,
    per_class: usize,
    dim: usize,
    noise_sigma: f64,
    unlabeled_fraction: f64,
    multilabel_rate: f64,
) -> Result<SyntheticData<S>> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "num_classes, per_class and dim must be positive".into(),
        ));
    }
    if noise_sigma < 0.0 {
        return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
    }
    for (name, rate) in [
        ("unlabeled_fraction", unlabeled_fraction),
        ("multilabel_rate", multilabel_rate),
    ] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "{name} {rate} outside [0, 1]"
            )));
        }
    }

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        loop {
            let raw: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                centroids.push(raw.into_iter().map(|v| v / norm).collect());
                break;
            }
        }
    }

    // Nearest other centroid per class, for secondary labels.
    let nearest_other: Vec<ClassId> = (0..num_classes)
        .map(|c| {
            let mut best = (f64::INFINITY, c);
            for other in 0..num_classes {
                if other == c {
                    continue;
                }
                let d2: f64 = centroids[c]
                    .iter()
                    .zip(&centroids[other])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2 < best.0 {
                    best = (d2, other);
                }
            }
            best.1
        })
        .collect();

    let total = num_classes * per_class;
    let mut features: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut true_classes = BTreeMap::new();
    for (c, centroid) in centroids.iter().enumerate() {
        for j in 0..per_class {
            let id = (c * per_class + j) as ExampleId;
            let values: Vec<f64> = centroid
                .iter()
                .map(|&m| m + noise_sigma * rng.next_normal())
                .collect();
            features.push(values);
            true_classes.insert(id, c);
        }
    }

    let unlabeled_count = ((total as f64) * unlabeled_fraction).round() as usize;
    let unlabeled: BTreeSet<usize> =
        sample_without_replacement(rng, total, unlabeled_count.min(total))?
            .into_iter()
            .collect();

    let mut examples = Vec::with_capacity(total);
    for (i, values) in features.into_iter().enumerate() {
        let id = i as ExampleId;
        let c = true_classes[&id];
        let mut labels = BTreeSet::new();
        if !unlabeled.contains(&i) {
            labels.insert(c);
            if num_classes > 1 && rng.next_f64() < multilabel_rate {
                labels.insert(nearest_other[c]);
            }
        }
        examples.push(Example {
            id,
            features: DenseVector::from_f64s(&values),
            labels,
        });
    }

    Ok(SyntheticData {
        dataset: Dataset::new(examples, num_classes, Some(Split::Train))?,
        true_classes,
    })
}

/// Knobs for the interaction-log simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickLogConfig {
    /// Probability that each record slot of a labeled example emits an
    /// intra-class record.
    pub intra_rate: f64,
    /// Probability that an emitted intra-class record is accompanied by a
    /// cross-class noise record.
    pub noise_rate: f64,
    /// Record slots per labeled example.
    pub records_per_labeled: usize,
    /// Fraction of records emitted as co-click (the rest are
    /// similar-image-click).
    pub co_click_fraction: f64,
}

impl Default for ClickLogConfig {
    fn default() -> Self {
        ClickLogConfig {
            intra_rate: 0.9,
            noise_rate: 0.05,
            records_per_labeled: 3,
            co_click_fraction: 0.5,
        }
    }
}

fn record_for_rate(
    rng: &mut Prng,
    co_click_fraction: f64,
    u: ExampleId,
    v: ExampleId,
    rate: f64,
) -> ClickLogRecord {
    let co = rng.next_f64() < co_click_fraction;
    if co {
        let count_u = 20 + rng.next_below(41);
        let count_v = 20 + rng.next_below(41);
        let joint = ((rate * (count_u + count_v) as f64) / (1.0 + rate)).round() as u64;
        ClickLogRecord {
            kind: ClickKind::CoClick,
            image_u: u,
            image_v: v,
            joint_count: joint.min(count_u.min(count_v)),
            count_u,
            count_v,
        }
    } else {
        let count_v = 20 + rng.next_below(41);
        let joint = ((rate * count_v as f64).round() as u64).min(count_v);
        let count_u = (20 + rng.next_below(41)).max(joint);
        ClickLogRecord {
            kind: ClickKind::SimilarImageClick,
            image_u: u,
            image_v: v,
            joint_count: joint,
            count_u,
            count_v,
        }
    }
}

/// Simulates interaction logs over a generated dataset. Intra-class records
/// target rates in [0.05, 0.15] and noise records rates in [0, 0.25], so the
/// realized rates straddle the default 0.1 edge threshold and surviving
/// edges carry modest weights.
pub fn generate_click_logs<S: Scalar>(
    dataset: &Dataset<S>,
    true_classes: &BTreeMap<ExampleId, ClassId>,
    rng: &mut Prng,
    cfg: &ClickLogConfig,
) -> Result<Vec<ClickLogRecord>> {
    for (name, rate) in [
        ("intra_rate", cfg.intra_rate),
        ("noise_rate", cfg.noise_rate),
        ("co_click_fraction", cfg.co_click_fraction),
    ] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "{name} {rate} outside [0, 1]"
            )));
        }
    }
    let mut members: BTreeMap<ClassId, Vec<ExampleId>> = BTreeMap::new();
    for ex in dataset.examples() {
        let class = true_classes.get(&ex.id).ok_or_else(|| {
            Error::InvalidArgument(format!("example {} has no true class", ex.id))
        })?;
        members.entry(*class).or_default().push(ex.id);
    }
    for ids in members.values_mut() {
        ids.sort_unstable();
    }
    let classes: Vec<ClassId> = members.keys().copied().collect();

    let mut records = Vec::new();
    for u in dataset.labeled_ids() {
        let class = true_classes[&u];
        for _ in 0..cfg.records_per_labeled {
            if rng.next_f64() >= cfg.intra_rate {
                continue;
            }
            let same: Vec<ExampleId> = members[&class].iter().copied().filter(|&v| v != u).collect();
            if same.is_empty() {
                continue;
            }
            let v = same[rng.next_below(same.len() as u64) as usize];
            let rate = 0.05 + 0.1 * rng.next_f64();
            records.push(record_for_rate(rng, cfg.co_click_fraction, u, v, rate));

            if classes.len() > 1 && rng.next_f64() < cfg.noise_rate {
                let mut other_class = classes[rng.next_below(classes.len() as u64) as usize];
                while other_class == class {
                    other_class = classes[rng.next_below(classes.len() as u64) as usize];
                }
                let candidates = &members[&other_class];
                let w = candidates[rng.next_below(candidates.len() as u64) as usize];
                let rate = 0.25 * rng.next_f64();
                records.push(record_for_rate(rng, cfg.co_click_fraction, u, w, rate));
            }
        }
    }
    Ok(records)
}

/// Writes click records as `kind<TAB>u<TAB>v<TAB>joint<TAB>count_u<TAB>count_v`.
pub fn save_click_logs(records: &[ClickLogRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(
        out,
        "# graphemb click log v1: kind\tu\tv\tjoint_count\tcount_u\tcount_v"
    )?;
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.kind, r.image_u, r.image_v, r.joint_count, r.count_u, r.count_v
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_click_logs(path: &Path) -> Result<Vec<ClickLogRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let kind: ClickKind = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("unknown record kind '{}'", fields[0]),
        })?;
        let parse_count = |idx: usize| -> Result<u64> {
            fields[idx].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid count '{}'", fields[idx]),
            })
        };
        records.push(ClickLogRecord {
            kind,
            image_u: parse_count(1)?,
            image_v: parse_count(2)?,
            joint_count: parse_count(3)?,
            count_u: parse_count(4)?,
            count_v: parse_count(5)?,
        });
    }
    Ok(records)
}
