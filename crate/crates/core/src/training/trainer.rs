use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use disentangle_tensor::{grad, no_grad, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamHyper};
use super::shuffle::{sample_shuffle, synthesize_shuffled, ShuffleSpec};
use super::{ClassifierMode, RunConfig};
use crate::data::{Batch, Dataset};
use crate::losses::{
    critic_objective, disentangle_loss, full_objective, generator_adv_loss, image_cls_loss, latent_cls_loss, nll,
    rec_loss, saturating_critic_loss, saturating_generator_loss, synth_cls_loss, AdversarialKind, LossReport,
    LossTerms,
};
use crate::model::{blob, load_networks, save_networks, unblob, Classifier, Group, Networks};
use crate::{Error, Result};

/// Outcome of classifier fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: u64,
    /// Training-set accuracy per attribute, in schema order.
    pub accuracy: Vec<f64>,
}

fn check_finite(name: &str, t: &Tensor<f32>) -> Result<f64> {
    let v = t.item() as f64;
    if !v.is_finite() {
        return Err(Error::Divergence { term: name.into() });
    }
    Ok(v)
}

/// Argmax accuracy of each classifier on the whole dataset.
pub fn classifier_accuracy(classifiers: &[Classifier<f32>], data: &Dataset) -> Vec<f64> {
    let mut correct = vec![0usize; classifiers.len()];
    let idx: Vec<usize> = (0..data.len()).collect();
    no_grad(|| {
        for chunk in idx.chunks(64) {
            let batch = data.batch::<f32>(chunk);
            for (m, c) in classifiers.iter().enumerate() {
                let logits = c.logits(&batch.images);
                let k = c.classes();
                for (i, row) in logits.data().chunks(k).enumerate() {
                    if argmax(row) == batch.labels[i][m] {
                        correct[m] += 1;
                    }
                }
            }
        }
    });
    correct.iter().map(|&c| c as f64 / data.len().max(1) as f64).collect()
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Fits classifiers on real images with cross-entropy until every attribute
/// reaches `target_accuracy` on `data` or `max_steps` updates have run.
pub fn fit_classifiers(
    classifiers: &mut [Classifier<f32>],
    data: &Dataset,
    max_steps: u64,
    target_accuracy: f64,
    batch_size: usize,
    hyper: AdamHyper,
    rng: &mut ChaCha8Rng,
) -> Result<PretrainReport> {
    const CHECK_EVERY: u64 = 50;
    if max_steps == 0 || data.is_empty() {
        return Ok(PretrainReport {
            steps: 0,
            accuracy: classifier_accuracy(classifiers, data),
        });
    }
    let mut opt = Adam::new(hyper);
    let b = batch_size.min(data.len());
    let mut steps = 0;
    while steps < max_steps {
        let idx = sample(rng, data.len(), b).into_vec();
        let batch = data.batch::<f32>(&idx);
        let mut total: Option<Tensor<f32>> = None;
        for (m, c) in classifiers.iter().enumerate() {
            let lp = disentangle_tensor::nn::log_softmax(&c.logits(&batch.images));
            let term = nll(&lp, &batch.labels_of(m + 1))?;
            total = Some(match total {
                Some(t) => t.add(&term),
                None => term,
            });
        }
        let total = total.expect("at least one classifier");
        check_finite("classifier pretraining loss", &total)?;
        let params: Vec<&Tensor<f32>> = classifiers.iter().flat_map(|c| c.params.tensors()).collect();
        let grads = grad(&total, &params, false);
        opt.step(classifiers.iter_mut().map(|c| &mut c.params).collect(), &grads, "classifiers")?;
        steps += 1;
        if steps % CHECK_EVERY == 0 && classifier_accuracy(classifiers, data).iter().all(|&a| a >= target_accuracy) {
            break;
        }
    }
    Ok(PretrainReport {
        steps,
        accuracy: classifier_accuracy(classifiers, data),
    })
}

/// Mutable training state: networks, optimisers, step counter and RNG.
pub struct Trainer {
    pub config: RunConfig,
    pub nets: Networks<f32>,
    pub class_names: Vec<Vec<String>>,
    pub step: u64,
    pub pretrain: Option<PretrainReport>,
    rng: ChaCha8Rng,
    opt_gen: Adam<f32>,
    opt_critic: Adam<f32>,
    opt_cls: Adam<f32>,
}

#[derive(Serialize, Deserialize)]
struct TrainingState {
    step: u64,
    config: RunConfig,
    rng: ChaCha8Rng,
    adam_steps: [u64; 3],
    pretrain: Option<PretrainReport>,
}

const OPTIMIZERS: [&str; 3] = ["generator", "critic", "classifiers"];

impl Trainer {
    pub fn new(config: RunConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        if data.image_size != config.model.image_size {
            return Err(Error::Config(format!(
                "dataset images are {}px, model expects {}px",
                data.image_size, config.model.image_size
            )));
        }
        let nets = Networks::new(config.model.clone(), data.schema.clone(), config.schedule.seed)?;
        let o = &config.optimizer;
        let hyper = AdamHyper {
            lr: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.epsilon,
        };
        let cls_hyper = AdamHyper {
            lr: o.classifier_learning_rate,
            ..hyper
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.schedule.seed ^ 0x5eed_5eed_5eed_5eed),
            nets,
            class_names: data.class_names.clone(),
            step: 0,
            pretrain: None,
            opt_gen: Adam::new(hyper),
            opt_critic: Adam::new(hyper),
            opt_cls: Adam::new(cls_hyper),
            config,
        })
    }

    fn classifier_hyper(&self) -> AdamHyper {
        self.opt_cls.hyper
    }

    /// Fits the training classifiers on real images.
    pub fn pretrain_classifiers(&mut self, data: &Dataset) -> Result<PretrainReport> {
        let s = &self.config.schedule;
        let (steps, target, b) = (s.pretrain_steps, s.pretrain_target_accuracy, s.batch_size);
        let hyper = self.classifier_hyper();
        let report = fit_classifiers(&mut self.nets.classifiers, data, steps, target, b, hyper, &mut self.rng)?;
        self.pretrain = Some(report.clone());
        Ok(report)
    }

    /// Random minibatch without replacement.
    pub fn sample_batch(&mut self, data: &Dataset) -> Batch<f32> {
        let b = self.config.schedule.batch_size.min(data.len());
        let idx = sample(&mut self.rng, data.len(), b).into_vec();
        data.batch(&idx)
    }

    pub fn train_step(&mut self, batch: &Batch<f32>) -> Result<LossReport> {
        let spec = sample_shuffle(
            batch.len(),
            self.nets.attributes(),
            &mut self.rng,
            self.config.schedule.shuffle_mode,
        )?;
        self.train_step_with_spec(batch, &spec)
    }

    /// Critic updates, then one generator update, then (joint mode) one
    /// classifier update. The shuffled batch is decoded once and reused by
    /// every critic update.
    pub fn train_step_with_spec(&mut self, batch: &Batch<f32>, spec: &ShuffleSpec) -> Result<LossReport> {
        let w = self.config.loss_weights.clone();
        let sched = self.config.schedule.clone();
        let x = &batch.images;
        let labels = &batch.labels;

        let gnet = self.nets.detached(&[Group::Classifiers, Group::Critic]);
        let bundle = gnet.encode_all(x)?;
        let x_rec = gnet.decode(&bundle)?;
        let (x_synth, induced) = synthesize_shuffled(&gnet, &bundle, spec, labels)?;
        let fake = x_synth.detach();

        let mut critic_value = 0.0;
        let mut gp_value = 0.0;
        for _ in 0..sched.critic_steps_per_gen {
            let cnet = self.nets.detached(&[Group::Generator, Group::Classifiers]);
            let critic = |t: &Tensor<f32>| cnet.critic.value(t);
            let terms = match sched.adversarial {
                AdversarialKind::WassersteinGp => {
                    let eps: Vec<f64> = (0..batch.len()).map(|_| self.rng.gen::<f64>()).collect();
                    critic_objective(critic, x, &fake, &eps, w.lambda_gp)?
                }
                AdversarialKind::Saturating => saturating_critic_loss(critic, x, &fake)?,
            };
            critic_value = check_finite("critic", &terms.loss)?;
            gp_value = check_finite("gp", &terms.gp)?;
            let grads = grad(&terms.loss, &cnet.params(Group::Critic), false);
            self.opt_critic
                .step(self.nets.param_sets_mut(Group::Critic), &grads, "critic")?;
        }

        let frozen_critic = self.nets.critic.detached();
        let critic = |t: &Tensor<f32>| frozen_critic.value(t);
        let adv = match sched.adversarial {
            AdversarialKind::WassersteinGp => generator_adv_loss(critic, &x_synth),
            AdversarialKind::Saturating => saturating_generator_loss(critic, &x_synth),
        };
        let rec = rec_loss(x, &x_rec)?;
        let cls_x = latent_cls_loss(&gnet, &bundle, labels)?;
        let dis = disentangle_loss(&gnet, &bundle)?;
        let cls_synth = synth_cls_loss(&gnet, &x_synth, &induced)?;

        let weighted = [
            (w.lambda_adv, &adv),
            (w.lambda_dis, &dis),
            (w.lambda_cls_x, &cls_x),
            (w.lambda_cls_synth, &cls_synth),
            (w.lambda_rec, &rec),
        ];
        let mut terms = LossTerms {
            rec: check_finite("rec", &rec)?,
            cls_x: check_finite("cls_x", &cls_x)?,
            dis: check_finite("dis", &dis)?,
            cls_synth: check_finite("cls_synth", &cls_synth)?,
            gen_adv: check_finite("gen_adv", &adv)?,
            critic: critic_value,
            gp: gp_value,
            cls_c: 0.0,
        };
        let total = weighted
            .iter()
            .filter(|(l, _)| *l != 0.0)
            .map(|(l, t)| t.scale(*l))
            .reduce(|a, b| a.add(&b));
        if let Some(total) = total {
            let grads = grad(&total, &gnet.params(Group::Generator), false);
            self.opt_gen
                .step(self.nets.param_sets_mut(Group::Generator), &grads, "generator")?;
        }

        let xr = x.detach();
        terms.cls_c = match sched.classifier_mode {
            ClassifierMode::Joint => {
                let cnet = self.nets.detached(&[Group::Generator, Group::Critic]);
                let loss = image_cls_loss(&cnet, &xr, labels)?;
                let v = check_finite("cls_c", &loss)?;
                let grads = grad(&loss, &cnet.params(Group::Classifiers), false);
                self.opt_cls
                    .step(self.nets.param_sets_mut(Group::Classifiers), &grads, "classifiers")?;
                v
            }
            ClassifierMode::PretrainFrozen => {
                let v = no_grad(|| image_cls_loss(&self.nets, &xr, labels))?;
                check_finite("cls_c", &v)?
            }
        };
        self.step += 1;
        full_objective(&terms, &w)
    }

    /// Writes model blobs plus optimiser and RNG state into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_networks(&self.nets, &self.class_names, dir)?;
        for (name, opt) in OPTIMIZERS.iter().zip([&self.opt_gen, &self.opt_critic, &self.opt_cls]) {
            let mut bytes = Vec::new();
            for (m, v) in opt.m.iter().zip(&opt.v) {
                bytes.extend(blob(m));
                bytes.extend(blob(v));
            }
            let path = dir.join(format!("optimizer_{name}.bin"));
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        let state = TrainingState {
            step: self.step,
            config: self.config.clone(),
            rng: self.rng.clone(),
            adam_steps: [self.opt_gen.t, self.opt_critic.t, self.opt_cls.t],
            pretrain: self.pretrain.clone(),
        };
        let path = dir.join("training_state.json");
        fs::write(&path, serde_json::to_string_pretty(&state)?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.config.to_toml()).map_err(|e| Error::io(&path, e))
    }

    /// Restores a state written by [`Trainer::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let (nets, manifest) = load_networks::<f32>(dir)?;
        let path = dir.join("training_state.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: TrainingState = serde_json::from_str(&text)?;
        let o = &state.config.optimizer;
        let hyper = AdamHyper {
            lr: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.epsilon,
        };
        let mut opts = [
            Adam::new(hyper),
            Adam::new(hyper),
            Adam::new(AdamHyper {
                lr: o.classifier_learning_rate,
                ..hyper
            }),
        ];
        let groups = [Group::Generator, Group::Critic, Group::Classifiers];
        for (((name, opt), group), t) in OPTIMIZERS.iter().zip(opts.iter_mut()).zip(groups).zip(state.adam_steps) {
            opt.t = t;
            let path = dir.join(format!("optimizer_{name}.bin"));
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.is_empty() {
                continue;
            }
            let mut off = 0;
            for p in nets.params(group) {
                let n = p.numel() * 4;
                let slice = |o: usize| {
                    bytes.get(o..o + n).ok_or_else(|| Error::Checkpoint {
                        path: path.clone(),
                        reason: "optimizer state truncated".into(),
                    })
                };
                opt.m.push(unblob(slice(off)?, "f32"));
                opt.v.push(unblob(slice(off + n)?, "f32"));
                off += 2 * n;
            }
        }
        let [opt_gen, opt_critic, opt_cls] = opts;
        Ok(Self {
            config: state.config,
            nets,
            class_names: manifest.class_names,
            step: state.step,
            pretrain: state.pretrain,
            rng: state.rng,
            opt_gen,
            opt_critic,
            opt_cls,
        })
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub step: u64,
    pub last_report: Option<LossReport>,
    pub pretrain: Option<PretrainReport>,
}

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_LOG: &str = "loss_log.tsv";

/// Runs the full loop into `out_dir`: classifier pretraining (fresh runs
/// with at least one step), then `schedule.steps` generator steps with
/// periodic checkpoints in `out_dir/checkpoint` and an append-only loss log.
/// With `resume`, continues from an existing checkpoint there.
pub fn train(config: &RunConfig, data: &Dataset, out_dir: &Path, resume: bool) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt = out_dir.join(CHECKPOINT_DIR);
    let log_path = out_dir.join(LOSS_LOG);
    let mut trainer = if resume && ckpt.join("training_state.json").exists() {
        let mut t = Trainer::load(&ckpt)?;
        t.config.schedule.steps = config.schedule.steps;
        truncate_log(&log_path, t.step)?;
        t
    } else {
        let mut t = Trainer::new(config.clone(), data)?;
        if config.schedule.steps > 0 {
            let report = t.pretrain_classifiers(data)?;
            tracing::info!(steps = report.steps, accuracy = ?report.accuracy, "classifiers pretrained");
        }
        fs::write(&log_path, "step\tterm\tvalue\n").map_err(|e| Error::io(&log_path, e))?;
        t
    };
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut last = None;
    let steps = trainer.config.schedule.steps;
    let (every, log_every) = (trainer.config.schedule.checkpoint_every, trainer.config.schedule.log_every);
    while trainer.step < steps {
        let batch = trainer.sample_batch(data);
        let report = trainer.train_step(&batch)?;
        if trainer.step % log_every == 0 || trainer.step == steps {
            log.write_all(report.log_lines(trainer.step).as_bytes())
                .map_err(|e| Error::io(&log_path, e))?;
            tracing::debug!(step = trainer.step, l_g = report.l_g, l_d = report.l_d, "step");
        }
        if trainer.step % every == 0 && trainer.step < steps {
            trainer.save(&ckpt)?;
        }
        last = Some(report);
    }
    trainer.save(&ckpt)?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        step: trainer.step,
        last_report: last,
        pretrain: trainer.pretrain.clone(),
    })
}

fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let Ok(text) = fs::read_to_string(path) else {
        return fs::write(path, "step\tterm\tvalue\n").map_err(|e| Error::io(path, e));
    };
    let kept: String = text
        .lines()
        .filter(|l| l.split('\t').next().and_then(|s| s.parse::<u64>().ok()).map_or(true, |s| s <= step))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}
