//! `pairkl`: train small metric-learning models with a guided pairwise
//! KL-divergence objective and evaluate them under the biometric protocols
//! (classification, closed-set, open-set, verification, clustering).
//!
//! Every run writes its artifacts plus a manifest into `--out`; rerunning
//! the manifest's command line reproduces the artifacts byte for byte.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
mod files;
mod manifest;

#[derive(Parser)]
#[command(name = "pairkl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic identity dataset as a feature CSV
    GenData(GenDataArgs),
    /// Train a network on a labeled feature file
    Train(TrainArgs),
    /// Write l2-normalized embeddings of a dataset under a checkpoint
    Embed(EmbedArgs),
    /// Run evaluation protocols against a checkpoint
    Eval(EvalArgs),
    /// K-means clusterability (NMI) of test-identity embeddings
    Cluster(ClusterArgs),
    /// Evaluate a checkpoint trained on one dataset against another
    Transfer(TransferArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of identities
    #[arg(long, default_value_t = 40)]
    ids: usize,
    /// Inclusive samples-per-identity range, "min,max"
    #[arg(long, default_value = "30,100")]
    range: String,
    /// Feature dimension
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Dimension of the per-identity nuisance subspace
    #[arg(long, default_value_t = 8)]
    nuisance_dim: usize,
    /// Maximum rotation (radians) of a sample away from its prototype
    #[arg(long, default_value_t = 1.0)]
    nuisance_scale: f64,
    /// Isotropic feature-noise standard deviation
    #[arg(long, default_value_t = 0.08)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled feature CSV
    #[arg(long)]
    dataset: PathBuf,
    /// Objective: ce, pfid or siamese
    #[arg(long, default_value = "pfid")]
    loss: String,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    /// Similar pairs per batch (the batch holds twice this many samples)
    #[arg(long, default_value_t = 8)]
    pairs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Factor applied to the learning rate at each decay epoch
    #[arg(long, default_value_t = 0.1)]
    lr_decay: f64,
    /// Comma-separated decay epochs, or "-" for none
    #[arg(long, default_value = "25,35")]
    decay_epochs: String,
    /// Margin (nats for pfid, embedding distance for siamese)
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Comma-separated hidden layer widths, or "-" for none
    #[arg(long, default_value = "64")]
    hidden: String,
    #[arg(long, default_value_t = 32)]
    embedding_dim: usize,
    /// Base seed; init uses it directly, the batch stream uses seed+100
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// classification, closed, open, verification or all
    #[arg(long, default_value = "all")]
    protocol: String,
    #[arg(long, default_value_t = 5)]
    splits: usize,
    /// Probe/gallery trials per split (closed and open protocols)
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Target false-acceptance rate for DIR and TAR
    #[arg(long, default_value_t = 0.01)]
    far: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// CMC depth; defaults to the number of test identities
    #[arg(long)]
    max_rank: Option<usize>,
    /// Base seed; split s uses seed+s, trial t uses seed+1000+t
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Cluster count; defaults to the number of test identities
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 5)]
    splits: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Base seed; split s uses seed+s, k-means for split s uses seed+2000+s
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Second checkpoint to report side by side
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    /// Checkpoint trained on the source dataset
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluation dataset
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    splits: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0.01)]
    far: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Embed(args) => commands::embed(args),
        Command::Eval(args) => commands::eval(args),
        Command::Cluster(args) => commands::cluster(args),
        Command::Transfer(args) => commands::transfer(args),
    }
}
