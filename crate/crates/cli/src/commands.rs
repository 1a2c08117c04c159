//! Subcommand implementations. Each command resolves its configuration,
//! runs the corresponding library calls, writes its artifacts into `--out`,
//! and finishes with a manifest recording the resolved command line and the
//! checksums of everything read and written.

use std::path::Path;

use anyhow::{bail, Context};

use pairkl_core::data::{self, Dataset, SynthConfig};
use pairkl_core::eval::{
    kmeans_nmi, mean_std, run_protocol, transfer_eval, Protocol, ProtocolOptions,
};
use pairkl_core::model::{
    embed_dataset, load_checkpoint, Activation, LossMode, Network, NetworkConfig, TrainConfig,
};
use pairkl_core::pairing::identity_split;

use crate::files::{curve_csv, label_map_text, write_atomic};
use crate::manifest::Manifest;
use crate::{ClusterArgs, EmbedArgs, EvalArgs, GenDataArgs, TrainArgs, TransferArgs};

fn ensure_out_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("cannot create output directory {}", path.display()))
}

fn parse_pair(text: &str, flag: &str) -> anyhow::Result<(usize, usize)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        bail!("--{flag} expects \"min,max\", got {text:?}");
    }
    let lo = parts[0].trim().parse().with_context(|| format!("--{flag}: bad min {text:?}"))?;
    let hi = parts[1].trim().parse().with_context(|| format!("--{flag}: bad max {text:?}"))?;
    Ok((lo, hi))
}

/// Comma-separated list of epoch indices / widths; "-" or "" means empty.
fn parse_list(text: &str, flag: &str) -> anyhow::Result<Vec<usize>> {
    let trimmed = text.trim();
    if trimmed.is_empty() || trimmed == "-" {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .with_context(|| format!("--{flag}: bad entry {p:?}"))
        })
        .collect()
}

fn load_dataset(path: &Path) -> anyhow::Result<(Dataset<f64>, Vec<(i64, usize)>)> {
    data::load_feature_file(path)
        .with_context(|| format!("cannot load dataset {}", path.display()))
}

fn load_net(path: &Path) -> anyhow::Result<Network<f64>> {
    load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn arg(tokens: &mut Vec<String>, flag: &str, value: impl ToString) {
    tokens.push(format!("--{flag}"));
    tokens.push(value.to_string());
}

pub fn gen_data(args: &GenDataArgs) -> anyhow::Result<()> {
    let (lo, hi) = parse_pair(&args.range, "range")?;
    let config = SynthConfig {
        num_identities: args.ids,
        samples_per_identity: (lo, hi),
        feature_dim: args.dim,
        nuisance_dim: args.nuisance_dim,
        nuisance_scale: args.nuisance_scale,
        noise_scale: args.noise_scale,
        seed: args.seed,
    };
    let dataset = data::generate_synthetic::<f64>(&config)?;
    ensure_out_dir(&args.out)?;

    let dataset_path = args.out.join("dataset.csv");
    write_atomic(&dataset_path, &data::feature_file_text(&dataset))?;
    let map_path = args.out.join("label_map.txt");
    let mapping: Vec<(i64, usize)> = (1..=dataset.num_classes()).map(|l| (l as i64, l)).collect();
    write_atomic(&map_path, &label_map_text(&mapping))?;

    let mut tokens = vec!["gen-data".to_string()];
    arg(&mut tokens, "ids", args.ids);
    arg(&mut tokens, "range", format!("{lo},{hi}"));
    arg(&mut tokens, "dim", args.dim);
    arg(&mut tokens, "nuisance-dim", args.nuisance_dim);
    arg(&mut tokens, "nuisance-scale", args.nuisance_scale);
    arg(&mut tokens, "noise-scale", args.noise_scale);
    arg(&mut tokens, "seed", args.seed);
    arg(&mut tokens, "out", args.out.display());
    let mut manifest = Manifest::new(tokens);
    manifest.set_seed(args.seed);
    manifest.record_output(&dataset_path)?;
    manifest.record_output(&map_path)?;
    manifest.write(&args.out)
}

pub fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let loss_mode: LossMode = args.loss.parse()?;
    let hidden_dims = parse_list(&args.hidden, "hidden")?;
    let decay_epochs = parse_list(&args.decay_epochs, "decay-epochs")?;
    let (dataset, mapping) = load_dataset(&args.dataset)?;

    let net_config = NetworkConfig {
        input_dim: dataset.feature_dim(),
        hidden_dims,
        embedding_dim: args.embedding_dim,
        num_classes: dataset.num_classes().max(2),
        activation: Activation::Rectifier,
        seed: args.seed,
    };
    let train_config = TrainConfig {
        epochs: args.epochs,
        pairs_per_batch: args.pairs,
        learning_rate: args.lr,
        weight_decay: args.weight_decay,
        momentum: args.momentum,
        lr_decay_factor: args.lr_decay,
        lr_decay_epochs: decay_epochs.clone(),
        loss_mode,
        margin: args.margin,
        seed: args.seed + 100,
    };
    let (net, history) = pairkl_core::model::train(&dataset, &net_config, &train_config)?;

    ensure_out_dir(&args.out)?;
    let checkpoint_path = args.out.join("checkpoint.txt");
    write_atomic(&checkpoint_path, &pairkl_core::model::checkpoint_text(&net))?;
    let history_path = args.out.join("history.csv");
    let mut history_text = String::from("epoch,loss\n");
    for (epoch, loss) in history.iter().enumerate() {
        history_text.push_str(&format!("{epoch},{loss}\n"));
    }
    write_atomic(&history_path, &history_text)?;
    let map_path = args.out.join("label_map.txt");
    write_atomic(&map_path, &label_map_text(&mapping))?;

    let mut tokens = vec!["train".to_string()];
    arg(&mut tokens, "dataset", args.dataset.display());
    arg(&mut tokens, "loss", loss_mode);
    arg(&mut tokens, "epochs", args.epochs);
    arg(&mut tokens, "pairs", args.pairs);
    arg(&mut tokens, "lr", args.lr);
    arg(&mut tokens, "weight-decay", args.weight_decay);
    arg(&mut tokens, "momentum", args.momentum);
    arg(&mut tokens, "lr-decay", args.lr_decay);
    let decay_text = if decay_epochs.is_empty() {
        "-".to_string()
    } else {
        decay_epochs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
    };
    arg(&mut tokens, "decay-epochs", decay_text);
    arg(&mut tokens, "margin", args.margin);
    let hidden_text = if net_config.hidden_dims.is_empty() {
        "-".to_string()
    } else {
        net_config.hidden_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
    };
    arg(&mut tokens, "hidden", hidden_text);
    arg(&mut tokens, "embedding-dim", args.embedding_dim);
    arg(&mut tokens, "seed", args.seed);
    arg(&mut tokens, "out", args.out.display());
    let mut manifest = Manifest::new(tokens);
    manifest.set_seed(args.seed);
    manifest.record_input(&args.dataset)?;
    manifest.record_output(&checkpoint_path)?;
    manifest.record_output(&history_path)?;
    manifest.record_output(&map_path)?;
    manifest.write(&args.out)
}

pub fn embed(args: &EmbedArgs) -> anyhow::Result<()> {
    let net = load_net(&args.checkpoint)?;
    let (dataset, mapping) = load_dataset(&args.dataset)?;
    let embeddings = embed_dataset(&net, &dataset)?;

    ensure_out_dir(&args.out)?;
    let rows: Vec<pairkl_core::data::Sample<f64>> = embeddings
        .vectors()
        .iter()
        .zip(embeddings.labels())
        .map(|(v, &label)| pairkl_core::data::Sample {
            features: v.clone(),
            label,
        })
        .collect();
    let out_set = Dataset::new(rows)?;
    let embeddings_path = args.out.join("embeddings.csv");
    write_atomic(&embeddings_path, &data::feature_file_text(&out_set))?;
    let map_path = args.out.join("label_map.txt");
    write_atomic(&map_path, &label_map_text(&mapping))?;

    let mut tokens = vec!["embed".to_string()];
    arg(&mut tokens, "checkpoint", args.checkpoint.display());
    arg(&mut tokens, "dataset", args.dataset.display());
    arg(&mut tokens, "out", args.out.display());
    let mut manifest = Manifest::new(tokens);
    manifest.record_input(&args.checkpoint)?;
    manifest.record_input(&args.dataset)?;
    manifest.record_output(&embeddings_path)?;
    manifest.record_output(&map_path)?;
    manifest.write(&args.out)
}

fn protocol_options(
    splits: usize,
    trials: usize,
    far: f64,
    test_fraction: f64,
    max_rank: Option<usize>,
    seed: u64,
) -> ProtocolOptions<f64> {
    ProtocolOptions {
        splits,
        trials,
        far,
        test_fraction,
        max_rank,
        seed,
    }
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<()> {
    let protocols: Vec<Protocol> = if args.protocol == "all" {
        Protocol::ALL.to_vec()
    } else {
        vec![args.protocol.parse()?]
    };
    let net = load_net(&args.checkpoint)?;
    let (dataset, _) = load_dataset(&args.dataset)?;
    let embeddings = embed_dataset(&net, &dataset)?;
    let opts = protocol_options(
        args.splits,
        args.trials,
        args.far,
        args.test_fraction,
        args.max_rank,
        args.seed,
    );

    ensure_out_dir(&args.out)?;
    let mut outputs = Vec::new();
    for &protocol in &protocols {
        let report = run_protocol(&embeddings, protocol, &opts)?;
        let report_path = args.out.join(format!("report_{}.txt", protocol.name()));
        write_atomic(&report_path, &report.to_string())?;
        outputs.push(report_path);
        for curve in &report.curves {
            let curve_path = args.out.join(format!("{}.csv", curve.name));
            write_atomic(&curve_path, &curve_csv(curve))?;
            outputs.push(curve_path);
        }
    }

    let mut tokens = vec!["eval".to_string()];
    arg(&mut tokens, "checkpoint", args.checkpoint.display());
    arg(&mut tokens, "dataset", args.dataset.display());
    arg(&mut tokens, "protocol", &args.protocol);
    arg(&mut tokens, "splits", args.splits);
    arg(&mut tokens, "trials", args.trials);
    arg(&mut tokens, "far", args.far);
    arg(&mut tokens, "test-fraction", args.test_fraction);
    if let Some(rank) = args.max_rank {
        arg(&mut tokens, "max-rank", rank);
    }
    arg(&mut tokens, "seed", args.seed);
    arg(&mut tokens, "out", args.out.display());
    let mut manifest = Manifest::new(tokens);
    manifest.set_seed(args.seed);
    manifest.record_input(&args.checkpoint)?;
    manifest.record_input(&args.dataset)?;
    for path in &outputs {
        manifest.record_output(path)?;
    }
    manifest.write(&args.out)
}

fn cluster_block(
    label: &str,
    net: &Network<f64>,
    dataset: &Dataset<f64>,
    args: &ClusterArgs,
) -> anyhow::Result<(String, Vec<f64>)> {
    let embeddings = embed_dataset(net, dataset)?;
    let labels = dataset.labels();
    let mut values = Vec::with_capacity(args.splits);
    let mut block = format!("model {label}\n");
    for s in 0..args.splits {
        let plan = identity_split(&labels, args.test_fraction, args.seed + s as u64)?;
        let test = embeddings.subset(&plan.test_indices);
        let k = args.k.unwrap_or_else(|| test.identity_labels().len());
        let nmi = kmeans_nmi(&test, k, args.seed + 2000 + s as u64, args.restarts)?;
        block.push_str(&format!("split {s} k {k} nmi {nmi}\n"));
        values.push(nmi);
    }
    let (mean, std) = mean_std(&values);
    block.push_str(&format!("mean {mean}\nstd {std}\n"));
    block.push_str(&format!("summary {:.3} ± {:.3}\n", mean, std));
    Ok((block, values))
}

pub fn cluster(args: &ClusterArgs) -> anyhow::Result<()> {
    let net = load_net(&args.checkpoint)?;
    let (dataset, _) = load_dataset(&args.dataset)?;

    let mut report = String::from("report v1\nprotocol cluster\n");
    report.push_str(&format!(
        "splits {}\nrestarts {}\nk {}\ntest_fraction {}\nseed {}\n",
        args.splits,
        args.restarts,
        args.k.map_or("auto".to_string(), |k| k.to_string()),
        args.test_fraction,
        args.seed
    ));
    let (block, _) = cluster_block("primary", &net, &dataset, args)?;
    report.push_str(&block);
    if let Some(compare_path) = &args.compare {
        let other = load_net(compare_path)?;
        let (block, _) = cluster_block("compare", &other, &dataset, args)?;
        report.push_str(&block);
    }
    report.push_str("end\n");

    ensure_out_dir(&args.out)?;
    let report_path = args.out.join("report_cluster.txt");
    write_atomic(&report_path, &report)?;

    let mut tokens = vec!["cluster".to_string()];
    arg(&mut tokens, "checkpoint", args.checkpoint.display());
    arg(&mut tokens, "dataset", args.dataset.display());
    if let Some(k) = args.k {
        arg(&mut tokens, "k", k);
    }
    arg(&mut tokens, "restarts", args.restarts);
    arg(&mut tokens, "splits", args.splits);
    arg(&mut tokens, "test-fraction", args.test_fraction);
    arg(&mut tokens, "seed", args.seed);
    if let Some(compare) = &args.compare {
        arg(&mut tokens, "compare", compare.display());
    }
    arg(&mut tokens, "out", args.out.display());
    let mut manifest = Manifest::new(tokens);
    manifest.set_seed(args.seed);
    manifest.record_input(&args.checkpoint)?;
    manifest.record_input(&args.dataset)?;
    if let Some(compare) = &args.compare {
        manifest.record_input(compare)?;
    }
    manifest.record_output(&report_path)?;
    manifest.write(&args.out)
}

pub fn transfer(args: &TransferArgs) -> anyhow::Result<()> {
    let net = load_net(&args.checkpoint)?;
    let (dataset, _) = load_dataset(&args.dataset)?;
    let opts = protocol_options(
        args.splits,
        args.trials,
        args.far,
        args.test_fraction,
        None,
        args.seed,
    );
    let reports = transfer_eval(&net, &dataset, &opts)?;

    ensure_out_dir(&args.out)?;
    let mut summary = String::from("report v1\nprotocol transfer\n");
    summary.push_str(&format!(
        "splits {}\ntrials {}\nfar {}\ntest_fraction {}\nseed {}\n",
        args.splits, args.trials, args.far, args.test_fraction, args.seed
    ));
    let mut outputs = Vec::new();
    for report in &reports {
        summary.push_str(&format!(
            "{} mean {} std {} summary {} %\n",
            report.protocol,
            report.mean,
            report.std,
            report.summary_percent()
        ));
        let path = args
            .out
            .join(format!("report_transfer_{}.txt", report.protocol.name()));
        write_atomic(&path, &report.to_string())?;
        outputs.push(path);
    }
    summary.push_str("end\n");
    let summary_path = args.out.join("report_transfer.txt");
    write_atomic(&summary_path, &summary)?;
    outputs.push(summary_path);

    let mut tokens = vec!["transfer".to_string()];
    arg(&mut tokens, "checkpoint", args.checkpoint.display());
    arg(&mut tokens, "dataset", args.dataset.display());
    arg(&mut tokens, "splits", args.splits);
    arg(&mut tokens, "trials", args.trials);
    arg(&mut tokens, "far", args.far);
    arg(&mut tokens, "test-fraction", args.test_fraction);
    arg(&mut tokens, "seed", args.seed);
    arg(&mut tokens, "out", args.out.display());
    let mut manifest = Manifest::new(tokens);
    manifest.set_seed(args.seed);
    manifest.record_input(&args.checkpoint)?;
    manifest.record_input(&args.dataset)?;
    for path in &outputs {
        manifest.record_output(path)?;
    }
    manifest.write(&args.out)
}
