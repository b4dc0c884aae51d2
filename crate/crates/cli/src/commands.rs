use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use disentangle_core::data::{export_manifest, generate_synthetic, Dataset, SyntheticConfig};
use disentangle_core::metrics::{
    cluster_tendency_report, code_posterior_entropy, export_embeddings as export_codes, posterior_embedding, read_embeddings,
    transfer_accuracy, write_embeddings, ClassifierFeatures, EvalClassifiers, FeatureExtractor, Projection, TendencyConfig,
    TransferProtocol,
};
use disentangle_core::model::{load_networks, CheckpointManifest, Networks};
use disentangle_core::training::{load_datasets, AdamHyper, RunConfig, Trainer, CHECKPOINT_DIR};
use disentangle_service::{CatalogSplit, ServeOptions};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, write_snapshot};
use crate::jobs::{self, JobKind};
use crate::{CliError, ConfigArgs, EvalArgs, EvalFitArgs, JobArgs, Metric, Protocol, Split};

pub const SUMMARY: &str = "summary.json";
const EVALUATOR_DIR: &str = "eval_classifiers";

fn write_summary(dir: &Path, command: &str, result: impl Serialize) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let body = json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "result": result,
    });
    let path = dir.join(SUMMARY);
    let text = serde_json::to_string_pretty(&body).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

fn split_of(train: Dataset, test: Dataset, split: Split) -> Dataset {
    match split {
        Split::Train => train,
        Split::Test => test,
    }
}

struct Loaded {
    nets: Networks<f32>,
    manifest: CheckpointManifest,
    config: RunConfig,
}

fn load_checkpoint(dir: &Path) -> Result<Loaded, CliError> {
    let (nets, manifest) = load_networks::<f32>(dir)?;
    let config = config::from_checkpoint(dir)?;
    Ok(Loaded { nets, manifest, config })
}

/// Attribute name to 1-based index; `0` (or `z0`) selects the unlabelled code.
fn code_index(nets: &Networks<f32>, name: &str) -> Result<usize, CliError> {
    if name == "0" || name == "z0" {
        return Ok(0);
    }
    attribute_index(nets, name)
}

fn attribute_index(nets: &Networks<f32>, name: &str) -> Result<usize, CliError> {
    nets.schema.index_of(name).map_err(|_| {
        let known: Vec<&str> = nets.schema.attributes().iter().map(|a| a.name.as_str()).collect();
        CliError::Config(format!("unknown attribute '{name}' (model has: {})", known.join(", ")))
    })
}

fn required<'a, T>(value: &'a Option<T>, flag: &str, metric: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("--metric {metric} needs --{flag}")))
}

pub fn validate_config(cfg: &ConfigArgs) -> Result<(), CliError> {
    let config = config::load(cfg.config.as_deref(), &cfg.set)?;
    print!("{}", config.to_toml());
    Ok(())
}

pub fn synth_data(cfg: &ConfigArgs, out: &Path) -> Result<(), CliError> {
    let config = config::load(cfg.config.as_deref(), &cfg.set)?;
    let train_cfg = &config.data.synthetic;
    let test_cfg = SyntheticConfig {
        seed: config.data.test_seed,
        count_per_combination: config.data.test_count_per_combination,
        ..train_cfg.clone()
    };
    let mut result = serde_json::Map::new();
    for (name, c) in [("train", train_cfg), ("test", &test_cfg)] {
        let data = generate_synthetic(c)?;
        let manifest = export_manifest(&data, &out.join(name))?;
        println!("{name}: {} images -> {}", data.len(), manifest.display());
        result.insert(name.into(), json!({ "images": data.len(), "manifest": manifest }));
    }
    write_snapshot(out, &config)?;
    write_summary(out, "synth-data", result)
}

fn eval_hyper(args: &EvalFitArgs) -> AdamHyper {
    AdamHyper {
        lr: args.eval_learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    }
}

pub fn pretrain(cfg: &ConfigArgs, eval: Option<&EvalFitArgs>, out: &Path) -> Result<(), CliError> {
    let config = config::load(cfg.config.as_deref(), &cfg.set)?;
    let (train, test) = load_datasets(&config)?;
    let mut trainer = Trainer::new(config.clone(), &train)?;
    let report = trainer.pretrain_classifiers(&train)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    trainer.save(&ckpt)?;
    println!(
        "training classifiers: {} steps, train accuracy {:?} -> {}",
        report.steps,
        report.accuracy,
        ckpt.display()
    );
    let mut result = json!({ "checkpoint": ckpt, "training_classifiers": report });
    if let Some(e) = eval {
        let evaluator = EvalClassifiers::fit(
            &config.model,
            &train,
            e.eval_seed,
            e.eval_steps,
            e.eval_target_accuracy,
            e.eval_batch_size,
            eval_hyper(e),
        )?;
        let dir = out.join(EVALUATOR_DIR);
        evaluator.save(&dir)?;
        let test_accuracy = evaluator.accuracy(&test);
        println!(
            "evaluation classifiers: {} steps, test accuracy {:?} -> {}",
            evaluator.report.steps,
            test_accuracy,
            dir.display()
        );
        result["evaluation_classifiers"] = json!({
            "dir": dir,
            "steps": evaluator.report.steps,
            "train_accuracy": evaluator.report.accuracy,
            "test_accuracy": test_accuracy,
            "sha256": evaluator.sha256(),
            "seed": e.eval_seed,
            "max_steps": e.eval_steps,
            "target_accuracy": e.eval_target_accuracy,
            "batch_size": e.eval_batch_size,
            "learning_rate": e.eval_learning_rate,
        });
    }
    write_snapshot(out, &config)?;
    write_summary(out, "pretrain", result)
}

pub fn train(cfg: &ConfigArgs, steps: Option<u64>, resume: bool, out: &Path) -> Result<(), CliError> {
    let ckpt = out.join(CHECKPOINT_DIR);
    let mut config = if resume && cfg.config.is_none() && ckpt.join("config.toml").exists() {
        config::with_overrides(&config::from_checkpoint(&ckpt)?, &cfg.set)?
    } else {
        config::load(cfg.config.as_deref(), &cfg.set)?
    };
    if let Some(s) = steps {
        config.schedule.steps = s;
    }
    let (train, _) = load_datasets(&config)?;
    write_snapshot(out, &config)?;
    let outcome = disentangle_core::training::train(&config, &train, out, resume)?;
    println!("step {} -> {}", outcome.step, outcome.checkpoint.display());
    if let Some(r) = &outcome.last_report {
        println!("last losses: L_G {:.4}  L_D {:.4}  L_C {:.4}", r.l_g, r.l_d, r.l_c);
    }
    write_summary(
        out,
        "train",
        json!({
            "checkpoint": outcome.checkpoint,
            "step": outcome.step,
            "resumed": resume,
            "last_report": outcome.last_report,
            "pretrain": outcome.pretrain,
        }),
    )
}

fn parse_projection(s: &str) -> Result<Projection, CliError> {
    match s {
        "none" => Ok(Projection::None),
        "centroids" => Ok(Projection::Centroids),
        _ => s
            .strip_prefix("pca:")
            .and_then(|k| k.parse().ok())
            .filter(|&k: &usize| k > 0)
            .map(|dims| Projection::Pca { dims })
            .ok_or_else(|| CliError::Config(format!("--projection must be none, centroids or pca:K (got '{s}')"))),
    }
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let (table, result): (String, Value) = match args.metric {
        Metric::Hopkins => {
            let path = required(&args.embeddings, "embeddings", "hopkins")?;
            let set = read_embeddings(path)?;
            let label = |given: &Option<String>, i: usize| {
                given.clone().or_else(|| set.label_names.get(i).cloned()).ok_or_else(|| {
                    CliError::Config(format!("{} has fewer than {} label columns", path.display(), i + 1))
                })
            };
            let by = label(&args.cluster_by, 0)?;
            let within = label(&args.score_within, 1)?;
            let tendency = TendencyConfig {
                repetitions: args.repetitions,
                probe_fraction: args.probe_fraction,
                projection: parse_projection(&args.projection)?,
                seed: args.seed,
            };
            let report = cluster_tendency_report(&set, &by, &within, None, &tendency)?;
            (report.to_table(), json!({ "embeddings": path, "config": tendency, "report": report }))
        }
        Metric::Entropy => {
            let dir = required(&args.checkpoint, "checkpoint", "entropy")?;
            let l = load_checkpoint(dir)?;
            let code = code_index(&l.nets, required(&args.code, "code", "entropy")?)?;
            let target = attribute_index(&l.nets, required(&args.target, "target", "entropy")?)?;
            let (train, test) = load_datasets(&l.config)?;
            let data = split_of(train, test, args.split);
            let summary = code_posterior_entropy(&l.nets, &data, code, target)?;
            let k = l.nets.schema.class_count(target)?;
            let table = format!(
                "Mean posterior entropy of C_{} on z_{}: {:.4} nats (ln {} = {:.4}, {} samples)\n",
                l.nets.schema.attribute(target)?.name,
                code,
                summary.mean,
                k,
                (k as f64).ln(),
                summary.per_sample.len()
            );
            (
                table,
                json!({ "checkpoint": dir, "code": code, "target": target, "mean": summary.mean, "ln_k": (k as f64).ln(),
                        "samples": summary.per_sample.len() }),
            )
        }
        Metric::Transfer | Metric::Fid => {
            let name = if args.metric == Metric::Fid { "fid" } else { "transfer" };
            let dir = required(&args.checkpoint, "checkpoint", name)?;
            let eval_dir = required(&args.evaluator, "evaluator", name)?;
            let l = load_checkpoint(dir)?;
            let m = attribute_index(&l.nets, required(&args.attribute, "attribute", name)?)?;
            let evaluator = EvalClassifiers::load(eval_dir)?;
            let (train, test) = load_datasets(&l.config)?;
            let protocol = match args.protocol {
                Protocol::DonorSwap => TransferProtocol::DonorSwap,
                Protocol::MeanCode => TransferProtocol::MeanCode { reference: &train },
            };
            let features = ClassifierFeatures { classifiers: &evaluator };
            let extractor = (args.metric == Metric::Fid).then_some(&features as &dyn FeatureExtractor);
            let data = match args.split {
                Split::Train => &train,
                Split::Test => &test,
            };
            let report = transfer_accuracy(&l.nets, data, &evaluator, m, protocol, args.seed, extractor)?;
            let table = match (args.metric, report.fid) {
                (Metric::Fid, Some(fid)) => format!("FID of {} transfers: {fid:.4}\n", report.attribute),
                _ => report.to_table(),
            };
            (table, json!({ "checkpoint": dir, "evaluator": eval_dir, "report": report }))
        }
    };
    print!("{table}");
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let path = args.out.join("report.txt");
    std::fs::write(&path, &table).map_err(|e| CliError::io(&path, e))?;
    if let Some(dir) = &args.checkpoint {
        write_snapshot(&args.out, &config::from_checkpoint(dir)?)?;
    }
    write_summary(&args.out, "eval", result)
}

pub fn job(kind: JobKind, args: &JobArgs) -> Result<(), CliError> {
    let jobs = jobs::read(&args.job)?;
    let l = load_checkpoint(&args.checkpoint)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let results = jobs::run(kind, &jobs, &args.job, &l.nets, &l.manifest.class_names, &out)?;
    let copy = out.join("job.toml");
    std::fs::copy(&args.job, &copy).map_err(|e| CliError::io(&copy, e))?;
    let path = out.join("results.json");
    let text = serde_json::to_string_pretty(&results).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    let written: usize = results.iter().map(|r| r.outputs.len()).sum();
    println!("{} {} jobs, {written} images -> {}", results.len(), kind.name(), out.display());
    write_snapshot(&out, &l.config)?;
    write_summary(
        &out,
        kind.name(),
        json!({ "checkpoint": args.checkpoint, "checkpoint_sha256": l.manifest.params_sha256, "results": path }),
    )
}

pub fn export_embeddings(
    checkpoint: &Path,
    code: &str,
    posterior_of: Option<&str>,
    split: Split,
    out: &Path,
) -> Result<(), CliError> {
    let l = load_checkpoint(checkpoint)?;
    let m = code_index(&l.nets, code)?;
    let (train, test) = load_datasets(&l.config)?;
    let data = split_of(train, test, split);
    let result = match posterior_of {
        Some(target) => {
            let t = attribute_index(&l.nets, target)?;
            let set = posterior_embedding(&l.nets, &data, m, t)?;
            std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
            let path = out.join(format!("posterior_{target}_z{m}.tsv"));
            write_embeddings(&set, &path)?;
            println!("{} points x {} dims -> {}", set.len(), set.dims(), path.display());
            json!({ "code": m, "posterior_of": t, "embeddings": path, "points": set.len() })
        }
        None => {
            let (emb, pc) = export_codes(&l.nets, &data, m, out)?;
            println!("{} points -> {} (PCA view {})", data.len(), emb.display(), pc.display());
            json!({ "code": m, "embeddings": emb, "pca": pc, "points": data.len() })
        }
    };
    write_snapshot(out, &l.config)?;
    write_summary(out, "export-embeddings", result)
}

pub fn serve(checkpoint: PathBuf, addr: SocketAddr, split: CatalogSplit) -> Result<(), CliError> {
    if !checkpoint.join("manifest.json").exists() {
        return Err(CliError::Config(format!("{} is not a checkpoint directory", checkpoint.display())));
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime
        .block_on(disentangle_service::serve(ServeOptions { checkpoint, addr, split }))
        .map_err(|e| CliError::Runtime(e.to_string()))
}
