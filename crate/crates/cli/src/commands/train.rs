//! `train`: full training run producing a checkpoint, a manifest carrying the
//! effective configuration and its hash, and a step log.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use graphemb::dataio::load_dataset;
use graphemb::error::{Error, Result};
use graphemb::graph::SimilarityGraph;
use graphemb::model::{save_checkpoint, ModelConfig};
use graphemb::trainer;

use crate::config::RunConfig;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Training dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Edge file; omit to train without graph regularization.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Run-config file; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (checkpoint, manifest, train log).
    #[arg(long)]
    pub out_dir: PathBuf,

    // One flag per config key.
    #[arg(long)]
    pub hidden_dims: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Sampled-vocabulary size; "-" for the full vocabulary.
    #[arg(long)]
    pub sampled_vocab: Option<String>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub decay_rate: Option<f64>,
    #[arg(long)]
    pub decay_every: Option<u64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Regularizer distance: cosine or euclidean.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Alpha phases, e.g. "1000:0,+500:1" (see the run-config format).
    #[arg(long)]
    pub phase_schedule: Option<String>,
    /// Regularize over all incident edges instead of one sampled neighbor.
    #[arg(long)]
    pub exhaustive_edges: Option<bool>,
}

pub fn effective_config(args: &Args) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let overrides: Vec<(&str, Option<String>)> = vec![
        ("model.hidden_dims", args.hidden_dims.clone()),
        ("model.embedding_dim", args.embedding_dim.map(|v| v.to_string())),
        ("train.alpha", args.alpha.map(|v| v.to_string())),
        ("train.epsilon", args.epsilon.map(|v| v.to_string())),
        ("train.batch_size", args.batch_size.map(|v| v.to_string())),
        ("train.sampled_vocab", args.sampled_vocab.clone()),
        ("train.lr0", args.lr0.map(|v| v.to_string())),
        ("train.decay_rate", args.decay_rate.map(|v| v.to_string())),
        ("train.decay_every", args.decay_every.map(|v| v.to_string())),
        ("train.momentum", args.momentum.map(|v| v.to_string())),
        ("train.weight_decay", args.weight_decay.map(|v| v.to_string())),
        ("train.metric", args.metric.clone()),
        ("train.max_steps", args.max_steps.map(|v| v.to_string())),
        ("train.seed", args.seed.map(|v| v.to_string())),
        (
            "train.checkpoint_every",
            args.checkpoint_every.map(|v| v.to_string()),
        ),
        ("train.phase_schedule", args.phase_schedule.clone()),
        (
            "train.exhaustive_edges",
            args.exhaustive_edges.map(|v| v.to_string()),
        ),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.apply(key, &v)?;
        }
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn write_manifest(cfg: &RunConfig, step: u64, out_dir: &std::path::Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# graphemb manifest v1")?;
    writeln!(out, "config_hash\t{:016x}", cfg.hash())?;
    writeln!(out, "step\t{step}")?;
    writeln!(out, "checkpoint\tfinal.ckpt")?;
    for (k, v) in cfg.key_values() {
        writeln!(out, "cfg.{k}\t{v}")?;
    }
    fs::write(out_dir.join("manifest.tsv"), out)?;
    Ok(())
}

pub fn run(args: &Args) -> Result<u8> {
    let cfg = effective_config(args)?;
    let dataset = load_dataset::<f64>(&args.data)?;
    let input_dim = dataset
        .feature_dim()
        .ok_or_else(|| Error::InvalidArgument("training dataset is empty".into()))?;
    let graph = match &args.graph {
        Some(path) => Some(SimilarityGraph::load_edges(path, &dataset.labeled_id_set())?),
        None => None,
    };
    let model_cfg = ModelConfig::new(
        input_dim,
        cfg.hidden_dims.clone(),
        cfg.embedding_dim,
        dataset.num_classes(),
    )?;

    fs::create_dir_all(&args.out_dir)?;
    let out_dir = args.out_dir.clone();
    let mut checkpoint_writer = |step: u64, params: &graphemb::Params64| -> Result<()> {
        save_checkpoint(params, &out_dir.join(format!("checkpoint_{step}.ckpt")))
    };
    let (params, records) = trainer::train(
        &dataset,
        graph.as_ref(),
        &model_cfg,
        &cfg.train,
        Some(&mut checkpoint_writer),
    )?;

    save_checkpoint(&params, &args.out_dir.join("final.ckpt"))?;
    trainer::write_train_log(&records, &args.out_dir.join("trainlog.tsv"))?;
    write_manifest(&cfg, cfg.train.max_steps, &args.out_dir)?;

    if let Some(last) = records.last() {
        println!(
            "final step\t{}\tlr\t{:.3e}\tsupervised\t{:.6}\tgraph\t{:.6}\ttotal\t{:.6}",
            last.step, last.lr, last.supervised, last.graph, last.total
        );
    } else {
        println!("no steps run; checkpoint equals initialization");
    }
    println!("config hash\t{:016x}", cfg.hash());
    Ok(0)
}
