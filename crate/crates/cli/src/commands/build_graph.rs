//! `build-graph`: click log -> thresholded, max-merged edge file plus stats.

use std::path::PathBuf;

use graphemb::dataio::{load_click_logs, load_dataset};
use graphemb::error::Result;
use graphemb::graph::{SimilarityGraph, DEFAULT_EDGE_THRESHOLD};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Click-log file.
    #[arg(long)]
    pub log: PathBuf,
    /// Dataset file supplying the labeled-vertex set.
    #[arg(long)]
    pub data: PathBuf,
    /// Minimum (exclusive) interaction rate for an edge.
    #[arg(long, default_value_t = DEFAULT_EDGE_THRESHOLD)]
    pub threshold: f64,
    /// Output edge file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &Args) -> Result<u8> {
    let records = load_click_logs(&args.log)?;
    let dataset = load_dataset::<f64>(&args.data)?;
    let (graph, report) =
        SimilarityGraph::build(&records, args.threshold, &dataset.labeled_id_set())?;
    graph.save_edges(&args.out)?;

    let stats = graph.stats();
    println!("records seen\t{}", report.records_seen);
    println!("records malformed\t{}", report.skipped_malformed);
    println!("records unlabeled source\t{}", report.skipped_unlabeled_source);
    println!("records below threshold\t{}", report.below_threshold);
    println!("duplicate pairs merged\t{}", report.merged_duplicates);
    println!("vertices\t{}", stats.vertex_count);
    println!("edges\t{}", stats.edge_count);
    println!("edges to labeled targets\t{}", stats.labeled_target_edges);
    println!("edges to unlabeled targets\t{}", stats.unlabeled_target_edges);
    let bins: Vec<String> = stats
        .weight_histogram
        .iter()
        .map(|c| c.to_string())
        .collect();
    println!("weight histogram (0.1 bins)\t{}", bins.join("\t"));
    Ok(0)
}
