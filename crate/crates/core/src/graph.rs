//! Similarity-graph construction from interaction logs, plus neighbor queries
//! for training.
//!
//! Edge weights stay `f64` regardless of the training scalar type: they come
//! from integer count ratios and round-trip through the text edge format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Prng;

/// Example (vertex) identifier.
pub type ExampleId = u64;

pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ClickKind {
    CoClick,
    SimilarImageClick,
}

impl fmt::Display for ClickKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClickKind::CoClick => write!(f, "co_click"),
            ClickKind::SimilarImageClick => write!(f, "similar_image_click"),
        }
    }
}

impl std::str::FromStr for ClickKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "co_click" => Ok(ClickKind::CoClick),
            "similar_image_click" => Ok(ClickKind::SimilarImageClick),
            other => Err(Error::InvalidArgument(format!(
                "unknown click-log record kind '{other}'"
            ))),
        }
    }
}

/// One aggregated interaction-log record for an image pair.
///
/// For co-click records, `count_u`/`count_v` are the selection counts of each
/// image and `joint_count` how often both were selected for the same query.
/// For similar-image records, `count_v` is the impression count of `u` under
/// query image `v` and `joint_count` how often `u` was selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClickLogRecord {
    pub kind: ClickKind,
    pub image_u: ExampleId,
    pub image_v: ExampleId,
    pub joint_count: u64,
    pub count_u: u64,
    pub count_v: u64,
}

impl ClickLogRecord {
    pub fn validate(&self) -> Result<()> {
        if self.image_u == self.image_v {
            return Err(Error::InvalidArgument(
                "click record relates an image to itself".into(),
            ));
        }
        if self.joint_count > self.count_u.min(self.count_v) {
            return Err(Error::InvalidArgument(format!(
                "joint count {} exceeds a marginal count ({}, {})",
                self.joint_count, self.count_u, self.count_v
            )));
        }
        Ok(())
    }
}

/// Co-click rate as the Jaccard ratio of selection events:
/// `joint / (count_u + count_v - joint)`, in [0, 1].
pub fn co_click_rate(rec: &ClickLogRecord) -> Result<f64> {
    rec.validate()?;
    if rec.count_u + rec.count_v == 0 {
        return Err(Error::DegenerateInput(
            "co-click rate with zero selections on both images".into(),
        ));
    }
    Ok(rec.joint_count as f64 / (rec.count_u + rec.count_v - rec.joint_count) as f64)
}

/// Similar-image click rate: selections of `u` divided by its impressions
/// under query image `v` (`joint / count_v`), in [0, 1].
pub fn similar_image_click_rate(rec: &ClickLogRecord) -> Result<f64> {
    rec.validate()?;
    if rec.count_v == 0 {
        return Err(Error::DegenerateInput(
            "similar-image click rate with zero impressions".into(),
        ));
    }
    Ok(rec.joint_count as f64 / rec.count_v as f64)
}

/// Undirected weighted edge. `u` is the source vertex and is always labeled;
/// the target `v` may be labeled or unlabeled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: ExampleId,
    pub v: ExampleId,
    pub weight: f64,
}

/// Weighted undirected similarity graph with a symmetric adjacency index.
#[derive(Debug, Clone, Default)]
pub struct SimilarityGraph {
    edges: Vec<Edge>,
    adjacency: BTreeMap<ExampleId, Vec<(ExampleId, f64)>>,
    labeled: BTreeSet<ExampleId>,
}

/// Per-record bookkeeping from a graph build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub records_seen: usize,
    pub skipped_malformed: usize,
    pub skipped_unlabeled_source: usize,
    pub below_threshold: usize,
    pub merged_duplicates: usize,
}

/// Summary counts for a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub vertex_count: usize,
    pub edge_count: usize,
    pub labeled_vertex_count: usize,
    /// Edge-weight histogram over ten 0.1-wide bins covering (0, 1].
    pub weight_histogram: [usize; 10],
    pub labeled_target_edges: usize,
    pub unlabeled_target_edges: usize,
}

impl SimilarityGraph {
    /// Builds the graph from log records merged across both record kinds.
    ///
    /// Records are canonicalized (sorted by `(u, v, kind)`) before merging so
    /// the output is independent of input order. An edge is kept iff its rate
    /// is strictly above `threshold` and its source is labeled; duplicate
    /// pairs keep the maximum rate. Malformed records are skipped and
    /// counted, not fatal.
    pub fn build(
        records: &[ClickLogRecord],
        threshold: f64,
        labeled_ids: &BTreeSet<ExampleId>,
    ) -> Result<(SimilarityGraph, BuildReport)> {
        if !(0.0 < threshold && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "edge threshold {threshold} outside (0, 1)"
            )));
        }
        let mut canonical: Vec<&ClickLogRecord> = records.iter().collect();
        canonical.sort_by_key(|r| (r.image_u, r.image_v, r.kind));

        let mut report = BuildReport {
            records_seen: records.len(),
            ..BuildReport::default()
        };
        // Unordered pair -> (weight, source). Max-rate wins; its record's
        // orientation decides the stored source.
        let mut best: BTreeMap<(ExampleId, ExampleId), (f64, ExampleId)> = BTreeMap::new();
        for rec in canonical {
            let rate = match rec.kind {
                ClickKind::CoClick => co_click_rate(rec),
                ClickKind::SimilarImageClick => similar_image_click_rate(rec),
            };
            let rate = match rate {
                Ok(r) => r,
                Err(_) => {
                    report.skipped_malformed += 1;
                    continue;
                }
            };
            if !labeled_ids.contains(&rec.image_u) {
                report.skipped_unlabeled_source += 1;
                continue;
            }
            if rate <= threshold {
                report.below_threshold += 1;
                continue;
            }
            let key = (rec.image_u.min(rec.image_v), rec.image_u.max(rec.image_v));
            match best.get_mut(&key) {
                Some(entry) => {
                    report.merged_duplicates += 1;
                    if rate > entry.0 {
                        *entry = (rate, rec.image_u);
                    }
                }
                None => {
                    best.insert(key, (rate, rec.image_u));
                }
            }
        }
        let edges: Vec<Edge> = best
            .into_iter()
            .map(|((a, b), (weight, source))| Edge {
                u: source,
                v: if source == a { b } else { a },
                weight,
            })
            .collect();
        let graph = SimilarityGraph::from_edges(edges, labeled_ids)?;
        Ok((graph, report))
    }

    /// Assembles a graph from already-weighted edges, checking the structural
    /// invariants (positive weight at most 1, labeled source, no self loop).
    pub fn from_edges(edges: Vec<Edge>, labeled_ids: &BTreeSet<ExampleId>) -> Result<Self> {
        let mut adjacency: BTreeMap<ExampleId, Vec<(ExampleId, f64)>> = BTreeMap::new();
        for e in &edges {
            if e.u == e.v {
                return Err(Error::InvalidArgument(format!(
                    "edge {} -> {} is a self loop",
                    e.u, e.v
                )));
            }
            if !(e.weight > 0.0 && e.weight <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "edge {} -> {} has weight {} outside (0, 1]",
                    e.u, e.v, e.weight
                )));
            }
            if !labeled_ids.contains(&e.u) {
                return Err(Error::InvalidArgument(format!(
                    "edge source {} is not a labeled vertex",
                    e.u
                )));
            }
            adjacency.entry(e.u).or_default().push((e.v, e.weight));
            adjacency.entry(e.v).or_default().push((e.u, e.weight));
        }
        for neighbors in adjacency.values_mut() {
            neighbors.sort_by_key(|&(id, _)| id);
        }
        let labeled = adjacency
            .keys()
            .filter(|id| labeled_ids.contains(id))
            .copied()
            .collect();
        Ok(SimilarityGraph {
            edges,
            adjacency,
            labeled,
        })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_vertex(&self, id: ExampleId) -> bool {
        self.adjacency.contains_key(&id)
    }

    pub fn neighbors(&self, id: ExampleId) -> Option<&[(ExampleId, f64)]> {
        self.adjacency.get(&id).map(Vec::as_slice)
    }

    pub fn vertices(&self) -> impl Iterator<Item = ExampleId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn is_labeled(&self, id: ExampleId) -> bool {
        self.labeled.contains(&id)
    }

    /// Draws one neighbor of `u` with probability proportional to the edge
    /// weight. `None` if `u` is isolated; unknown vertices are an error.
    pub fn sample_neighbor(
        &self,
        u: ExampleId,
        rng: &mut Prng,
    ) -> Result<Option<(ExampleId, f64)>> {
        let neighbors = self.adjacency.get(&u).ok_or_else(|| {
            Error::InvalidArgument(format!("vertex {u} is not in the graph"))
        })?;
        if neighbors.is_empty() {
            return Ok(None);
        }
        let total: f64 = neighbors.iter().map(|(_, w)| w).sum();
        let mut x = rng.next_f64() * total;
        for &(v, w) in neighbors {
            x -= w;
            if x < 0.0 {
                return Ok(Some((v, w)));
            }
        }
        // Rounding pushed x to the very end of the cumulative range.
        Ok(Some(*neighbors.last().expect("nonempty")))
    }

    pub fn stats(&self) -> GraphStats {
        let mut histogram = [0usize; 10];
        let mut labeled_target = 0usize;
        for e in &self.edges {
            let bin = ((e.weight * 10.0).ceil() as usize).clamp(1, 10) - 1;
            histogram[bin] += 1;
            if self.labeled.contains(&e.v) {
                labeled_target += 1;
            }
        }
        GraphStats {
            vertex_count: self.adjacency.len(),
            edge_count: self.edges.len(),
            labeled_vertex_count: self.labeled.len(),
            weight_histogram: histogram,
            labeled_target_edges: labeled_target,
            unlabeled_target_edges: self.edges.len() - labeled_target,
        }
    }

    /// Writes the edge list as `u<TAB>v<TAB>weight` with 17 significant
    /// digits, sorted by (u, v), preceded by '#' comment lines.
    pub fn save_edges(&self, path: &Path) -> Result<()> {
        let mut sorted = self.edges.clone();
        sorted.sort_by_key(|e| (e.u, e.v));
        let mut out = Vec::new();
        writeln!(out, "# graphemb edge file v1: u\tv\tweight")?;
        for e in &sorted {
            writeln!(out, "{}\t{}\t{:.16e}", e.u, e.v, e.weight)?;
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Loads an edge file, bypassing rate computation. Edge invariants
    /// (positive weight, labeled source) are re-checked against
    /// `labeled_ids`.
    pub fn load_edges(path: &Path, labeled_ids: &BTreeSet<ExampleId>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let parse_id = |s: Option<&str>| -> Result<ExampleId> {
                s.and_then(|t| t.parse().ok()).ok_or(Error::Parse {
                    line: line_no,
                    message: "expected u\tv\tweight".into(),
                })
            };
            let u = parse_id(parts.next())?;
            let v = parse_id(parts.next())?;
            let weight: f64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or(Error::Parse {
                    line: line_no,
                    message: "invalid edge weight".into(),
                })?;
            if parts.next().is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "trailing fields after weight".into(),
                });
            }
            edges.push(Edge { u, v, weight });
        }
        SimilarityGraph::from_edges(edges, labeled_ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(
        kind: ClickKind,
        u: u64,
        v: u64,
        joint: u64,
        cu: u64,
        cv: u64,
    ) -> ClickLogRecord {
        ClickLogRecord {
            kind,
            image_u: u,
            image_v: v,
            joint_count: joint,
            count_u: cu,
            count_v: cv,
        }
    }

    #[test]
    fn co_click_rate_cases() {
        let r = rec(ClickKind::CoClick, 1, 2, 5, 10, 5);
        assert_eq!(co_click_rate(&r).unwrap(), 0.5);

        let never = rec(ClickKind::CoClick, 1, 2, 0, 10, 5);
        assert_eq!(co_click_rate(&never).unwrap(), 0.0);

        let always = rec(ClickKind::CoClick, 1, 2, 7, 7, 7);
        assert_eq!(co_click_rate(&always).unwrap(), 1.0);

        let degenerate = rec(ClickKind::CoClick, 1, 2, 0, 0, 0);
        assert!(matches!(
            co_click_rate(&degenerate),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn similar_image_click_rate_cases() {
        let r = rec(ClickKind::SimilarImageClick, 1, 2, 3, 10, 10);
        assert!((similar_image_click_rate(&r).unwrap() - 0.3).abs() <= 1e-15);

        let zero = rec(ClickKind::SimilarImageClick, 1, 2, 0, 10, 10);
        assert_eq!(similar_image_click_rate(&zero).unwrap(), 0.0);

        let all = rec(ClickKind::SimilarImageClick, 1, 2, 10, 10, 10);
        assert_eq!(similar_image_click_rate(&all).unwrap(), 1.0);

        let no_impressions = rec(ClickKind::SimilarImageClick, 1, 2, 0, 10, 0);
        assert!(matches!(
            similar_image_click_rate(&no_impressions),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn record_invariants_are_enforced() {
        let self_loop = rec(ClickKind::CoClick, 1, 1, 0, 5, 5);
        assert!(self_loop.validate().is_err());
        let over_joint = rec(ClickKind::CoClick, 1, 2, 6, 5, 10);
        assert!(over_joint.validate().is_err());
    }

    fn labeled(ids: &[u64]) -> BTreeSet<u64> {
        ids.iter().copied().collect()
    }

    #[test]
    fn rate_exactly_at_threshold_is_excluded() {
        // Jaccard 1/10 == 0.1 exactly: 1 / (6 + 5 - 1).
        let records = vec![rec(ClickKind::CoClick, 1, 2, 1, 6, 5)];
        let (g, report) = SimilarityGraph::build(&records, 0.1, &labeled(&[1])).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(report.below_threshold, 1);
    }

    #[test]
    fn duplicate_pairs_keep_the_maximum_rate() {
        let records = vec![
            // co-click rate 0.3: 3 / (8 + 5 - 3)
            rec(ClickKind::CoClick, 1, 2, 3, 8, 5),
            // similar-image rate 0.5: 5 / 10
            rec(ClickKind::SimilarImageClick, 1, 2, 5, 10, 10),
        ];
        let (g, report) = SimilarityGraph::build(&records, 0.1, &labeled(&[1])).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].weight, 0.5);
        assert_eq!(report.merged_duplicates, 1);
    }

    #[test]
    fn unlabeled_sources_produce_no_edges() {
        let records = vec![rec(ClickKind::CoClick, 3, 2, 5, 5, 5)];
        let (g, report) = SimilarityGraph::build(&records, 0.1, &labeled(&[1, 2])).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(report.skipped_unlabeled_source, 1);
    }

    #[test]
    fn malformed_records_are_counted_not_fatal() {
        let records = vec![
            rec(ClickKind::CoClick, 1, 1, 0, 5, 5),
            rec(ClickKind::CoClick, 1, 2, 5, 5, 5),
        ];
        let (g, report) = SimilarityGraph::build(&records, 0.1, &labeled(&[1])).unwrap();
        assert_eq!(report.skipped_malformed, 1);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn build_is_order_independent() {
        let mut records = vec![
            rec(ClickKind::CoClick, 1, 2, 4, 8, 5),
            rec(ClickKind::SimilarImageClick, 1, 3, 6, 10, 10),
            rec(ClickKind::CoClick, 2, 3, 5, 6, 6),
        ];
        let (a, _) = SimilarityGraph::build(&records, 0.1, &labeled(&[1, 2])).unwrap();
        records.reverse();
        let (b, _) = SimilarityGraph::build(&records, 0.1, &labeled(&[1, 2])).unwrap();
        assert_eq!(a.edges(), b.edges());
    }

    #[test]
    fn edge_weights_lie_in_threshold_one_interval() {
        let records: Vec<ClickLogRecord> = (0..50)
            .map(|i| rec(ClickKind::CoClick, 1, 2 + i, i % 11, 10, 10))
            .collect();
        let threshold = 0.25;
        let (g, _) = SimilarityGraph::build(&records, threshold, &labeled(&[1])).unwrap();
        for e in g.edges() {
            assert!(e.weight > threshold && e.weight <= 1.0);
        }
    }

    #[test]
    fn sample_neighbor_single_choice() {
        let g = SimilarityGraph::from_edges(
            vec![Edge {
                u: 1,
                v: 2,
                weight: 0.5,
            }],
            &labeled(&[1]),
        )
        .unwrap();
        let mut rng = Prng::seed_from(0);
        for _ in 0..10 {
            assert_eq!(g.sample_neighbor(1, &mut rng).unwrap(), Some((2, 0.5)));
        }
    }

    #[test]
    fn sample_neighbor_unknown_vertex_errors() {
        let g = SimilarityGraph::default();
        let mut rng = Prng::seed_from(0);
        assert!(g.sample_neighbor(7, &mut rng).is_err());
    }

    #[test]
    fn sample_neighbor_weight_proportional_frequencies() {
        let g = SimilarityGraph::from_edges(
            vec![
                Edge {
                    u: 1,
                    v: 2,
                    weight: 0.25,
                },
                Edge {
                    u: 1,
                    v: 3,
                    weight: 0.75,
                },
            ],
            &labeled(&[1]),
        )
        .unwrap();
        let mut rng = Prng::seed_from(11);
        let draws = 10_000;
        let mut count2 = 0usize;
        for _ in 0..draws {
            if g.sample_neighbor(1, &mut rng).unwrap().unwrap().0 == 2 {
                count2 += 1;
            }
        }
        let freq = count2 as f64 / draws as f64;
        assert!((freq - 0.25).abs() <= 0.02, "frequency {freq}");
    }

    #[test]
    fn sample_neighbor_chi_square_uniformity() {
        // Four neighbors with weights 0.1/0.2/0.3/0.4 over 10^4 draws;
        // chi-square with 3 degrees of freedom, 1% critical value 11.345.
        let weights = [0.1, 0.2, 0.3, 0.4];
        let edges: Vec<Edge> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| Edge {
                u: 0,
                v: i as u64 + 1,
                weight: w,
            })
            .collect();
        let g = SimilarityGraph::from_edges(edges, &labeled(&[0])).unwrap();
        let mut rng = Prng::seed_from(23);
        let draws = 10_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let (v, _) = g.sample_neighbor(0, &mut rng).unwrap().unwrap();
            counts[(v - 1) as usize] += 1;
        }
        let mut chi2 = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            let expected = draws as f64 * w;
            let diff = counts[i] as f64 - expected;
            chi2 += diff * diff / expected;
        }
        assert!(chi2 <= 11.345, "chi-square statistic {chi2}");
    }

    #[test]
    fn stats_cases() {
        let empty = SimilarityGraph::default();
        let s = empty.stats();
        assert_eq!(s.vertex_count, 0);
        assert_eq!(s.edge_count, 0);
        assert_eq!(s.weight_histogram.iter().sum::<usize>(), 0);

        let g = SimilarityGraph::from_edges(
            vec![
                Edge {
                    u: 1,
                    v: 2,
                    weight: 0.15,
                },
                Edge {
                    u: 1,
                    v: 3,
                    weight: 0.95,
                },
                Edge {
                    u: 2,
                    v: 4,
                    weight: 1.0,
                },
            ],
            &labeled(&[1, 2, 3]),
        )
        .unwrap();
        let s = g.stats();
        assert_eq!(s.edge_count, 3);
        assert_eq!(s.vertex_count, 4);
        assert_eq!(s.weight_histogram.iter().sum::<usize>(), 3);
        assert_eq!(s.weight_histogram[1], 1); // (0.1, 0.2]
        assert_eq!(s.weight_histogram[9], 2); // (0.9, 1.0]
        assert_eq!(s.labeled_target_edges, 2);
        assert_eq!(s.unlabeled_target_edges, 1);
    }

    #[test]
    fn edge_file_round_trip() {
        let g = SimilarityGraph::from_edges(
            vec![
                Edge {
                    u: 5,
                    v: 2,
                    weight: 1.0 / 3.0,
                },
                Edge {
                    u: 1,
                    v: 9,
                    weight: 0.7071067811865476,
                },
            ],
            &labeled(&[1, 5]),
        )
        .unwrap();
        let dir = std::env::temp_dir().join("graphemb-graph-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("edges.tsv");
        g.save_edges(&path).unwrap();
        let loaded = SimilarityGraph::load_edges(&path, &labeled(&[1, 5])).unwrap();
        let mut original = g.edges().to_vec();
        original.sort_by_key(|e| (e.u, e.v));
        assert_eq!(original.len(), loaded.edges().len());
        for (a, b) in original.iter().zip(loaded.edges()) {
            assert_eq!(a.u, b.u);
            assert_eq!(a.v, b.v);
            assert_eq!(a.weight.to_bits(), b.weight.to_bits());
        }
    }

    #[test]
    fn load_rejects_unlabeled_source() {
        let g = SimilarityGraph::from_edges(
            vec![Edge {
                u: 1,
                v: 2,
                weight: 0.5,
            }],
            &labeled(&[1]),
        )
        .unwrap();
        let dir = std::env::temp_dir().join("graphemb-graph-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("edges-unlabeled.tsv");
        g.save_edges(&path).unwrap();
        assert!(SimilarityGraph::load_edges(&path, &labeled(&[2])).is_err());
    }
}
