//! `label-prop`: iterative label propagation over an edge file, seeding
//! labeled vertices with uniform distributions over their labels.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use graphemb::dataio::load_dataset;
use graphemb::error::Result;
use graphemb::graph::SimilarityGraph;
use graphemb::losses::LabelDistribution;
use graphemb::trainer::label_propagation;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Edge file.
    #[arg(long)]
    pub graph: PathBuf,
    /// Dataset supplying labels.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub iterations: u64,
    /// Let labeled vertices drift instead of clamping them to ground truth.
    #[arg(long)]
    pub no_clamp: bool,
    /// Output file: one `id<TAB>class:mass,...` line per vertex.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &Args) -> Result<u8> {
    let dataset = load_dataset::<f64>(&args.data)?;
    let graph = SimilarityGraph::load_edges(&args.graph, &dataset.labeled_id_set())?;

    let mut labeled: BTreeMap<u64, LabelDistribution<f64>> = BTreeMap::new();
    for ex in dataset.examples() {
        if !ex.is_labeled() {
            continue;
        }
        let share = 1.0 / ex.labels.len() as f64;
        let mass: BTreeMap<usize, f64> = ex.labels.iter().map(|&k| (k, share)).collect();
        labeled.insert(ex.id, LabelDistribution::new(mass)?);
    }

    let result = label_propagation(&graph, &labeled, args.iterations, !args.no_clamp)?;

    let mut out = Vec::new();
    writeln!(out, "# graphemb label propagation v1: id\tclass:mass,...")?;
    for (id, dist) in &result.distributions {
        let masses: Vec<String> = dist
            .iter()
            .filter(|(_, m)| *m > 0.0)
            .map(|(k, m)| format!("{k}:{m:.16e}"))
            .collect();
        writeln!(out, "{id}\t{}", masses.join(","))?;
    }
    fs::write(&args.out, out)?;

    println!("vertices\t{}", result.distributions.len());
    println!("iterations\t{}", result.iterations_run);
    println!("last max delta\t{:.3e}", result.last_max_delta);
    Ok(0)
}
