//! `gen-data`: synthetic dataset, click logs, query/index split, and triplet
//! files, all reproducible from the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use graphemb::dataio::{
    generate_click_logs, generate_synthetic, save_click_logs, save_dataset, ClickLogConfig,
    Dataset, Split,
};
use graphemb::error::Result;
use graphemb::eval::{make_synthetic_triplets, save_triplets};
use graphemb::numerics::Prng;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Directory the generated files are written into.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 30)]
    pub per_class: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub unlabeled_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub multilabel_rate: f64,
    /// Labeled examples per class held out as kNN queries.
    #[arg(long, default_value_t = 2)]
    pub queries_per_class: usize,
    #[arg(long, default_value_t = 0.9)]
    pub intra_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise_rate: f64,
    /// Click-log record slots per labeled example.
    #[arg(long, default_value_t = 3)]
    pub records_per_example: usize,
    /// Fraction of records emitted as co-click (the rest are
    /// similar-image-click).
    #[arg(long, default_value_t = 0.5)]
    pub co_click_fraction: f64,
    /// Number of synthetic evaluation triplets.
    #[arg(long, default_value_t = 500)]
    pub triplets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &Args) -> Result<u8> {
    fs::create_dir_all(&args.out_dir)?;

    let mut rng_data = Prng::seed_stream(args.seed, 10);
    let data = generate_synthetic::<f64>(
        &mut rng_data,
        args.classes,
        args.per_class,
        args.dim,
        args.noise_sigma,
        args.unlabeled_fraction,
        args.multilabel_rate,
    )?;

    // Hold out the first queries-per-class labeled examples of each class.
    let mut held_out: BTreeSet<u64> = BTreeSet::new();
    let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
    for ex in data.dataset.examples() {
        if !ex.is_labeled() {
            continue;
        }
        let class = data.true_classes[&ex.id];
        let count = taken.entry(class).or_insert(0);
        if *count < args.queries_per_class {
            held_out.insert(ex.id);
            *count += 1;
        }
    }

    let train_examples: Vec<_> = data
        .dataset
        .examples()
        .iter()
        .filter(|e| !held_out.contains(&e.id))
        .cloned()
        .collect();
    let query_examples: Vec<_> = data
        .dataset
        .examples()
        .iter()
        .filter(|e| held_out.contains(&e.id))
        .cloned()
        .collect();
    let index_examples: Vec<_> = train_examples
        .iter()
        .filter(|e| e.is_labeled())
        .cloned()
        .collect();

    let train = Dataset::new(train_examples, args.classes, Some(Split::Train))?;
    let query = Dataset::new(query_examples, args.classes, Some(Split::Query))?;
    let index = Dataset::new(index_examples, args.classes, Some(Split::Index))?;

    let mut rng_logs = Prng::seed_stream(args.seed, 11);
    let log_cfg = ClickLogConfig {
        intra_rate: args.intra_rate,
        noise_rate: args.noise_rate,
        records_per_labeled: args.records_per_example,
        co_click_fraction: args.co_click_fraction,
    };
    let records = generate_click_logs(&train, &data.true_classes, &mut rng_logs, &log_cfg)?;

    let mut rng_triplets = Prng::seed_stream(args.seed, 12);
    let triplets = if args.triplets > 0 {
        make_synthetic_triplets(&index, &mut rng_triplets, args.triplets)?
    } else {
        Vec::new()
    };

    save_dataset(&train, &args.out_dir.join("train.tsv"))?;
    save_dataset(&index, &args.out_dir.join("index.tsv"))?;
    save_dataset(&query, &args.out_dir.join("query.tsv"))?;
    save_click_logs(&records, &args.out_dir.join("clicks.tsv"))?;
    save_triplets(&triplets, &args.out_dir.join("triplets.tsv"))?;

    println!("train examples\t{}", train.len());
    println!("index examples\t{}", index.len());
    println!("query examples\t{}", query.len());
    println!("click records\t{}", records.len());
    println!("triplets\t{}", triplets.len());
    Ok(0)
}
