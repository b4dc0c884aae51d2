//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use common::{image, max_grad_error, nets, random_images, sample_coords, tiny_nets, tiny_synthetic};
use disentangle_core::data::{export_manifest, generate_synthetic, AttributeSchema, Dataset, SyntheticConfig};
use disentangle_core::latent_ops::{interpolate, interpolate_code, mean_code, mix, swap, MixMode};
use disentangle_core::losses::*;
use disentangle_core::metrics::*;
use disentangle_core::model::{LatentBundle, ModelConfig, Networks};
use disentangle_core::training::*;
use disentangle_tensor::{no_grad, Tensor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const LN_K_TOL: f64 = 1e-6;
const GP_TOL: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_PARAMS: usize = 200;
const SHUFFLE_SPECS: usize = 1000;
const FID_REL_TOL: f64 = 0.05;
const FID_SAMPLES: usize = 100_000;
const FID_ZERO_TOL: f64 = 1e-6;
const HOPKINS_UNIFORM: (f64, f64) = (0.4, 0.6);
const HOPKINS_BLOBS_MIN: f64 = 0.9;
const HOPKINS_REPS: usize = 20;
const ENTROPY_FRACTION: f64 = 0.9;
const HOPKINS_CLUSTERS_REQUIRED: usize = 2;
const TRANSFER_MIN: f64 = 0.90;
const MAX_GENERATOR_STEPS: u64 = 20_000;
const DESK_CONFIG: &str = include_str!("../../../configs/desk.toml");
const EVAL_SEED: u64 = 99;
const EVAL_STEPS: u64 = 3000;
const TRANSFER_SEED: u64 = 5;
const SMOKE_IMAGES: usize = 20;
const SMOKE_STEPS: u64 = 50;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn constant_heads(classes: usize, bias: impl Fn(usize) -> Vec<f64>) -> Networks<f64> {
    let cfg = ModelConfig {
        image_size: 8,
        base_width: 4,
        res_blocks: 1,
        ..Default::default()
    };
    let schema = AttributeSchema::new(vec![("a", classes), ("b", classes)]).unwrap();
    let mut nets = Networks::<f64>::new(cfg, schema, 1).unwrap();
    for (m, c) in nets.classifiers.iter_mut().enumerate() {
        let names = c.params.names().to_vec();
        for (i, n) in names.iter().enumerate() {
            if n == "logits.weight" {
                let len = c.params.get(i).numel();
                c.params.set(i, vec![0.0; len]);
            } else if n == "logits.bias" {
                c.params.set(i, bias(m));
            }
        }
    }
    nets
}

fn closed_form_losses() -> Outcome {
    let mut worst = 0.0f64;
    for k in [2usize, 4, 8, 147] {
        let nets = constant_heads(k, |_| vec![0.0; k]);
        let bundle = nets.encode_all(&random_images(3, 8, k as u64)).map_err(err)?;
        let v = disentangle_loss(&nets, &bundle).map_err(err)?.item();
        worst = worst.max((v - (k as f64).ln()).abs());
    }
    let one_hot = constant_heads(4, |m| (0..4).map(|c| if c == m + 1 { 1e3 } else { 0.0 }).collect());
    let bundle = one_hot.encode_all(&random_images(3, 8, 0)).map_err(err)?;
    let cls = latent_cls_loss(&one_hot, &bundle, &vec![vec![1, 2]; 3]).map_err(err)?.item();
    let x = random_images(2, 8, 1);
    let rec = rec_loss(&x, &x).map_err(err)?.item();
    let n = x.numel() / 2;
    let unit = |t: &Tensor<f64>| t.flatten_batch().mean_axis(1).scale((n as f64).sqrt());
    let x_hat = interpolates(&x, &random_images(2, 8, 2), &[0.25, 0.75]).map_err(err)?;
    let gp = gradient_penalty(unit, &x_hat).item();
    check(
        worst < LN_K_TOL && cls == 0.0 && rec == 0.0 && gp.abs() < GP_TOL,
        format!("max |L_dis - ln K| = {worst:.2e} (K = 2, 4, 8, 147), one-hot L_cls = {cls}, rec(x, x) = {rec}, unit-gradient gp = {gp:.2e}"),
    )
}

fn gradient_fidelity() -> Outcome {
    let nets = tiny_nets(5);
    let x = random_images(4, 8, 13);
    let fake = random_images(4, 8, 14);
    let labels: Vec<Vec<usize>> = (0..4).map(|i| vec![i % 3, i % 2]).collect();
    let spec = sample_shuffle(4, 2, &mut ChaCha8Rng::seed_from_u64(1), ShuffleMode::Permutation).map_err(err)?;
    let not_critic = |n: &str| n != "critic";
    let gen = |n: &str| n.starts_with("encoder") || n == "decoder";
    let errors = [
        (
            "L_rec",
            max_grad_error(&nets, &sample_coords(&nets, GRAD_PARAMS, 1, gen), |n| {
                rec_loss(&x, &n.decode(&n.encode_all(&x).unwrap()).unwrap()).unwrap()
            }),
        ),
        (
            "L_cls^x",
            max_grad_error(&nets, &sample_coords(&nets, GRAD_PARAMS, 2, not_critic), |n| {
                latent_cls_loss(n, &n.encode_all(&x).unwrap(), &labels).unwrap()
            }),
        ),
        (
            "L_dis",
            max_grad_error(&nets, &sample_coords(&nets, GRAD_PARAMS, 3, not_critic), |n| {
                disentangle_loss(n, &n.encode_all(&x).unwrap()).unwrap()
            }),
        ),
        (
            "L_cls^synth",
            max_grad_error(&nets, &sample_coords(&nets, GRAD_PARAMS, 4, not_critic), |n| {
                let (xs, induced) = synthesize_shuffled(n, &n.encode_all(&x).unwrap(), &spec, &labels).unwrap();
                synth_cls_loss(n, &xs, &induced).unwrap()
            }),
        ),
        (
            "L_D",
            max_grad_error(&nets, &sample_coords(&nets, GRAD_PARAMS, 5, |n| n == "critic"), |n| {
                critic_objective(|t: &Tensor<f64>| n.critic.value(t), &x, &fake, &[0.1, 0.4, 0.6, 0.9], 10.0)
                    .unwrap()
                    .loss
            }),
        ),
    ];
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    check(worst < GRAD_REL_TOL, format!("max relative error over {GRAD_PARAMS} parameters per term: {detail}"))
}

fn shuffle_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<Vec<usize>> = (0..4).map(|i| vec![i, 10 + (i + 1) % 4, 20 + (i + 2) % 4]).collect();
    let mut mismatches = 0;
    for _ in 0..SHUFFLE_SPECS {
        let spec = sample_shuffle(4, 3, &mut rng, ShuffleMode::Permutation).map_err(err)?;
        let induced = spec.induced_labels(&labels);
        for i in 0..4 {
            for m in 0..3 {
                mismatches += (induced[i][m] != labels[spec.permutations[m][i]][m]) as usize;
            }
        }
    }
    let schema = AttributeSchema::new(vec![("a", 4), ("b", 4), ("c", 4)]).map_err(err)?;
    let net = Networks::<f32>::new(common::small_config(32, 4), schema, 0).map_err(err)?;
    let x = random_images(4, 32, 3).cast::<f32>();
    let bundle = net.encode_all(&x).map_err(err)?;
    let rec = net.decode(&bundle).map_err(err)?;
    let labels3: Vec<Vec<usize>> = (0..4).map(|i| vec![i, (i + 1) % 4, (i + 2) % 4]).collect();
    let (xs, _) = synthesize_shuffled(&net, &bundle, &ShuffleSpec::identity(4, 3), &labels3).map_err(err)?;
    let bitwise = xs.to_vec() == rec.to_vec();
    check(
        mismatches == 0 && bitwise,
        format!("{SHUFFLE_SPECS} specs at b=4, M=3: {mismatches} label mismatches; identity shuffle bitwise = {bitwise}"),
    )
}

fn gaussian(n: usize, d: usize, shift: &[f64], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, j| rng.sample::<f64, _>(StandardNormal) + shift[j])
}

fn frechet_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = gaussian(FID_SAMPLES, 8, &[0.0; 8], &mut rng);
    let mut ok = true;
    let mut parts = Vec::new();
    for sq in [1.0f64, 4.0, 16.0] {
        let mu: Vec<f64> = (0..8).map(|j| (sq / 8.0).sqrt() * if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let b = gaussian(FID_SAMPLES, 8, &mu, &mut rng);
        let fid = frechet_distance(&a, &b).map_err(err)?;
        ok &= (fid - sq).abs() <= FID_REL_TOL * sq;
        parts.push(format!("|mu|^2={sq}: {fid:.3}"));
    }
    let same = frechet_distance(&a, &a).map_err(err)?;
    ok &= same.abs() < FID_ZERO_TOL;
    check(ok, format!("N={FID_SAMPLES}, d=8: {}; identical sets {same:.1e}", parts.join(", ")))
}

fn hopkins_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let uniform = DMatrix::from_fn(500, 16, |_, _| rng.gen_range(0.0..1.0));
    let u = hopkins(&uniform, 50, HOPKINS_REPS, &mut rng).map_err(err)?;
    let blobs = DMatrix::from_fn(500, 16, |i, _| {
        let centre = if i % 2 == 0 { 0.0 } else { 10.0 };
        centre + 0.01 * rng.sample::<f64, _>(StandardNormal)
    });
    let b = hopkins(&blobs, 50, HOPKINS_REPS, &mut rng).map_err(err)?;
    check(
        (HOPKINS_UNIFORM.0..=HOPKINS_UNIFORM.1).contains(&u.mean) && b.mean > HOPKINS_BLOBS_MIN,
        format!(
            "uniform box N=500 d=16: H = {:.3} (random, near 0.5); two tight blobs: H = {:.3} (clustered, near 1.0); {HOPKINS_REPS} repetitions",
            u.mean, b.mean
        ),
    )
}

struct DeskRun {
    entropy: f64,
    posterior: Vec<f64>,
    raw: Vec<f64>,
    transfer: TransferReport,
    steps: u64,
    seconds: f64,
}

fn desk_run(lambda_dis: f64, eval: &EvalClassifiers, train_set: &Dataset, test: &Dataset, out: &Path) -> Result<DeskRun, String> {
    let mut cfg = parse_config(DESK_CONFIG).map_err(err)?;
    cfg.loss_weights.lambda_dis = lambda_dis;
    let t0 = Instant::now();
    let outcome = train(&cfg, train_set, out, false).map_err(err)?;
    let seconds = t0.elapsed().as_secs_f64();
    let trainer = Trainer::load(&outcome.checkpoint).map_err(err)?;
    let nets = &trainer.nets;
    let entropy = code_posterior_entropy(nets, test, 1, 2).map_err(err)?.mean;
    let report = |set: &EmbeddingSet| -> Result<Vec<f64>, String> {
        let r = cluster_tendency_report(set, "shape", "hue", None, &TendencyConfig::default()).map_err(err)?;
        Ok(r.rows.iter().map(|row| row.mean).collect())
    };
    let posterior = report(&posterior_embedding(nets, test, 1, 2).map_err(err)?)?;
    let raw = report(&embed(nets, test, 1).map_err(err)?)?;
    let fx = ClassifierFeatures { classifiers: eval };
    let transfer = transfer_accuracy(nets, test, eval, 2, TransferProtocol::DonorSwap, TRANSFER_SEED, Some(&fx)).map_err(err)?;
    Ok(DeskRun {
        entropy,
        posterior,
        raw,
        transfer,
        steps: outcome.step,
        seconds,
    })
}

fn fmt3(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/")
}

fn desk_scale() -> Vec<(&'static str, Outcome)> {
    let failed = |e: String| {
        vec![
            ("desk run (a) entropy of hue posterior on z_shape", Err(e.clone())),
            ("desk run (b) per-shape Hopkins within hue", Err(e.clone())),
            ("desk run (c) hue transfer and shape preservation", Err(e)),
        ]
    };
    let cfg = match parse_config(DESK_CONFIG) {
        Ok(c) => c,
        Err(e) => return failed(e.to_string()),
    };
    let (train_set, test) = match load_datasets(&cfg) {
        Ok(d) => d,
        Err(e) => return failed(e.to_string()),
    };
    let hyper = AdamHyper {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let eval = match EvalClassifiers::fit(&cfg.model, &train_set, EVAL_SEED, EVAL_STEPS, 0.99, 32, hyper) {
        Ok(e) => e,
        Err(e) => return failed(e.to_string()),
    };
    let dir = tempfile::tempdir().expect("temp dir");
    let runs: Result<Vec<DeskRun>, String> = [1.0, 0.0]
        .iter()
        .map(|&l| desk_run(l, &eval, &train_set, &test, &dir.path().join(format!("lambda_dis_{l}"))))
        .collect();
    let (on, off) = match runs {
        Ok(mut r) => {
            let off = r.pop().unwrap();
            (r.pop().unwrap(), off)
        }
        Err(e) => return failed(e),
    };
    let budget = on.steps <= MAX_GENERATOR_STEPS && off.steps <= MAX_GENERATOR_STEPS;
    let header = format!(
        "{} train / {} test images, {} steps per run ({:.0}s + {:.0}s)",
        train_set.len(),
        test.len(),
        on.steps,
        on.seconds,
        off.seconds
    );
    let target = ENTROPY_FRACTION * 6f64.ln();
    let a = check(
        budget && on.entropy >= target && on.entropy > off.entropy,
        format!(
            "mean H = {:.3} with lambda_dis=1 (need >= {target:.3}), {:.3} with lambda_dis=0; {header}",
            on.entropy, off.entropy
        ),
    );
    let lower = on.posterior.iter().zip(&off.posterior).filter(|(x, y)| x < y).count();
    let b = check(
        budget && lower >= HOPKINS_CLUSTERS_REQUIRED && on.posterior.len() == 3,
        format!(
            "hue-classifier view of z_shape per shape cluster: {} with lambda_dis=1 vs {} with lambda_dis=0, lower in {lower}/3 (need {HOPKINS_CLUSTERS_REQUIRED}); raw codes {} vs {}",
            fmt3(&on.posterior),
            fmt3(&off.posterior),
            fmt3(&on.raw),
            fmt3(&off.raw)
        ),
    );
    let shape = on.transfer.preserved.get("shape").map_or(0.0, |s| s.mean);
    let c = check(
        budget && on.transfer.target.mean >= TRANSFER_MIN && shape >= TRANSFER_MIN,
        format!(
            "lambda_dis=1: hue swap accuracy {:.3}, shape preserved {shape:.3} (need >= {TRANSFER_MIN}); FID {:.3}; lambda_dis=0: {:.3} / {:.3}",
            on.transfer.target.mean,
            on.transfer.fid.unwrap_or(f64::NAN),
            off.transfer.target.mean,
            off.transfer.preserved.get("shape").map_or(0.0, |s| s.mean)
        ),
    );
    vec![
        ("desk run (a) entropy of hue posterior on z_shape", a),
        ("desk run (b) per-shape Hopkins within hue", b),
        ("desk run (c) hue transfer and shape preservation", c),
    ]
}

fn decode_with(nets: &Networks<f32>, base: &Tensor<f32>, m: usize, code: Tensor<f32>) -> Tensor<f32> {
    no_grad(|| {
        let mut b: LatentBundle<f32> = nets.encode_all(base).unwrap();
        b.codes[m] = code;
        nets.decode(&b).unwrap()
    })
}

fn latent_identities() -> Outcome {
    let nets = nets::<f32>(1);
    let data = tiny_synthetic(3);
    let n = 3 * 32 * 32;
    let (xi, xj) = (image::<f32>(&data, 0), image::<f32>(&data, 7));
    let strip = interpolate(&nets, 2, &xi, &xj, 5, None).map_err(err)?;
    let zi = no_grad(|| nets.encode(2, &xi)).map_err(err)?;
    let zj = no_grad(|| nets.encode(2, &xj)).map_err(err)?;
    let endpoints = strip.data()[..n] == *decode_with(&nets, &xj, 2, zj.clone()).data()
        && strip.data()[4 * n..] == *decode_with(&nets, &xj, 2, zi.clone()).data();

    let comps: Vec<Tensor<f32>> = [2, 9, 13].iter().map(|&i| image(&data, i)).collect();
    let base = image::<f32>(&data, 17);
    let mut unit_mix = true;
    for k in 0..3 {
        let pairs: Vec<(Tensor<f32>, f64)> = comps
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), if i == k { 1.0 } else { 0.0 }))
            .collect();
        let mixed = mix(&nets, 2, &pairs, &base, MixMode::Convex).map_err(err)?;
        let swapped = swap(&nets, &base, &BTreeMap::from([(2, comps[k].clone())])).map_err(err)?;
        unit_mix &= mixed.data() == swapped.data();
    }

    let pair = data.subset(&[0, 7], "pair");
    let mean = mean_code::<f32>(&nets, &pair, 2, None).map_err(err)?;
    let midpoint = mean.data() == interpolate_code(&zi, &zj, 0.5).data();
    check(
        endpoints && unit_mix && midpoint,
        format!("interpolation endpoints bitwise = {endpoints}; e_k mix = single-donor swap = {unit_mix}; mean_code of two = alpha 0.5 code = {midpoint}"),
    )
}

fn manifest_smoke() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let full = generate_synthetic(&SyntheticConfig {
        count_per_combination: 2,
        brightness_classes: 1,
        brightness_attribute: false,
        seed: 21,
        ..Default::default()
    })
    .map_err(err)?;
    // One image per label combination first, so every class can donate.
    let mut seen = std::collections::BTreeSet::new();
    let (mut idx, rest): (Vec<usize>, Vec<usize>) = (0..full.len()).partition(|&i| seen.insert(full.items[i].labels.clone()));
    idx.extend(rest);
    idx.truncate(SMOKE_IMAGES);
    let manifest = export_manifest(&full.subset(&idx, "smoke"), &dir.path().join("images")).map_err(err)?;
    let mut cfg = RunConfig::default();
    cfg.data.manifest = Some(manifest);
    cfg.model = common::small_config(32, 4);
    cfg.schedule.steps = SMOKE_STEPS;
    cfg.schedule.batch_size = 4;
    cfg.schedule.critic_steps_per_gen = 1;
    cfg.schedule.pretrain_steps = 50;
    cfg.schedule.checkpoint_every = 25;
    let (train_set, test) = load_datasets(&cfg).map_err(err)?;
    let run_dir = dir.path().join("run");
    let outcome = train(&cfg, &train_set, &run_dir, false).map_err(err)?;
    let (nets, _) = disentangle_core::model::load_networks::<f32>(&outcome.checkpoint).map_err(err)?;
    let entropy = code_posterior_entropy(&nets, &test, 1, 2).map_err(err)?.mean;
    let emb = embed(&nets, &test, 1).map_err(err)?;
    let tendency = cluster_tendency_report(&emb, "shape", "hue", None, &TendencyConfig::default()).map_err(err)?;
    let eval = EvalClassifiers::untrained(&cfg.model, &test.schema, 7);
    let transfer = transfer_accuracy(&nets, &test, &eval, 2, TransferProtocol::DonorSwap, 0, None).map_err(err)?;
    check(
        outcome.step == SMOKE_STEPS && entropy.is_finite() && transfer.target.mean.is_finite(),
        format!(
            "{} manifest images -> {} steps -> entropy {entropy:.3}, {} Hopkins rows, {} transfer syntheses, no errors",
            train_set.len(),
            outcome.step,
            tendency.rows.len(),
            transfer.syntheses
        ),
    )
}

fn report(name: &str, r: &Outcome) -> bool {
    match r {
        Ok(d) => println!("PASS  {name}: {d}"),
        Err(d) => println!("FAIL  {name}: {d}"),
    }
    r.is_ok()
}

fn main() {
    let started = Instant::now();
    let checks: [(&str, fn() -> Outcome); 5] = [
        ("closed-form loss values", closed_form_losses),
        ("gradient fidelity", gradient_fidelity),
        ("shuffle correctness", shuffle_correctness),
        ("Frechet oracle", frechet_oracle),
        ("Hopkins oracle", hopkins_oracle),
    ];
    let mut outcomes: Vec<bool> = checks.iter().map(|(name, f)| report(name, &f())).collect();
    for (name, r) in desk_scale() {
        outcomes.push(report(name, &r));
    }
    outcomes.push(report("latent-op identities", &latent_identities()));
    outcomes.push(report("manifest pipeline smoke test", &manifest_smoke()));
    let failures = outcomes.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {} passed, {failures} failed in {:.0}s",
        outcomes.len() - failures,
        started.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
