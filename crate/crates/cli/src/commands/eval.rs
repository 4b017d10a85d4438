//! `eval`: kNN top-k table and triplet recall-vs-margin curve for a
//! checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use graphemb::dataio::load_dataset;
use graphemb::error::{Error, Result};
use graphemb::eval::{
    embed_dataset, eta_grid, knn_topk, load_triplets, recall_vs_margin, triplet_accurate,
    write_recall_curve, write_topk_report, EvalReport,
};
use graphemb::model::load_checkpoint;
use graphemb::numerics::DenseVector;

use crate::config::RunConfig;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Query dataset (must be disjoint from the index).
    #[arg(long)]
    pub queries: PathBuf,
    /// Index dataset searched by the queries.
    #[arg(long)]
    pub index: PathBuf,
    /// Triplet file; omit (or leave empty) to skip triplet evaluation.
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    /// Run-config file; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated k values (config key eval.k).
    #[arg(long)]
    pub k: Option<String>,
    /// Margin grid min:max:step (config key eval.eta_grid).
    #[arg(long)]
    pub eta_grid: Option<String>,
    /// Evaluation distance: cosine or euclidean (config key eval.metric).
    #[arg(long)]
    pub metric: Option<String>,
    /// L2-normalize embeddings before distances (config key eval.normalize).
    #[arg(long)]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(args: &Args) -> Result<u8> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let overrides: Vec<(&str, Option<String>)> = vec![
        ("eval.k", args.k.clone()),
        ("eval.eta_grid", args.eta_grid.clone()),
        ("eval.metric", args.metric.clone()),
        ("eval.normalize", args.normalize.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.apply(key, &v)?;
        }
    }

    let params = load_checkpoint::<f64>(&args.checkpoint)?;
    let queries = load_dataset::<f64>(&args.queries)?;
    let index = load_dataset::<f64>(&args.index)?;
    for (name, ds) in [("query", &queries), ("index", &index)] {
        if let Some(dim) = ds.feature_dim() {
            if dim != params.config.input_dim {
                return Err(Error::Schema(format!(
                    "{name} set has {dim}-dimensional features, checkpoint expects {}",
                    params.config.input_dim
                )));
            }
        }
    }
    let overlap = queries
        .examples()
        .iter()
        .filter(|e| index.get(e.id).is_some())
        .count();
    if overlap > 0 {
        eprintln!("warning: {overlap} query ids also appear in the index");
    }

    let query_embedded = embed_dataset(&params, &queries, cfg.eval_normalize)?;
    let index_embedded = embed_dataset(&params, &index, cfg.eval_normalize)?;
    let report = knn_topk(&query_embedded, &index_embedded, &cfg.eval_k, cfg.eval_metric)?;
    for k in &report.clamped {
        eprintln!("warning: k={k} exceeds the index size and was clamped");
    }

    let mut triplet_accuracy = None;
    let mut curve = Vec::new();
    if let Some(path) = &args.triplets {
        let triplets = load_triplets(path)?;
        if triplets.is_empty() {
            println!("triplets\tnone");
        } else {
            let mut embeddings: BTreeMap<u64, DenseVector<f64>> = BTreeMap::new();
            for item in query_embedded.iter().chain(&index_embedded) {
                embeddings.insert(item.id, item.embedding.clone());
            }
            let (min, max, step) = cfg.eval_eta;
            let grid = eta_grid(min, max, step)?;
            curve = recall_vs_margin(&triplets, &embeddings, cfg.eval_metric, &grid)?;
            let accurate = triplets
                .iter()
                .filter(|t| {
                    let a = &embeddings[&t.anchor];
                    let d_ap = cfg
                        .eval_metric
                        .distance(a, &embeddings[&t.positive])
                        .expect("distances computed by the curve");
                    let d_an = cfg
                        .eval_metric
                        .distance(a, &embeddings[&t.negative])
                        .expect("distances computed by the curve");
                    triplet_accurate(d_ap, d_an, 0.0)
                })
                .count();
            triplet_accuracy = Some(accurate as f64 / triplets.len() as f64);
        }
    }

    fs::create_dir_all(&args.out_dir)?;
    write_topk_report(&report.accuracy, &args.out_dir.join("topk.tsv"))?;
    if !curve.is_empty() {
        write_recall_curve(&curve, &args.out_dir.join("recall_curve.tsv"))?;
    }

    let eval_report = EvalReport {
        top_k: report.accuracy,
        triplet_accuracy,
        recall_curve: curve,
        metric: cfg.eval_metric,
    };
    for (k, acc) in &eval_report.top_k {
        println!("top-{k} accuracy\t{acc:.6}");
    }
    if let Some(acc) = eval_report.triplet_accuracy {
        println!("triplet accuracy (eta=0)\t{acc:.6}");
    }
    println!("metric\t{}", eval_report.metric);
    Ok(0)
}
