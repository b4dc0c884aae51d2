mod common;

use common::{small_config, tiny_synthetic};
use disentangle_core::model::layers::Dense;
use disentangle_core::model::{load_networks, params_sha256, Group, Networks, ParamSet};
use disentangle_core::training::*;
use disentangle_core::Error;
use disentangle_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn first_step_moves_by_learning_rate() {
    // With bias correction the first Adam step is lr * sign(g).
    let mut p = ParamSet::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let _ = Dense::new(&mut p, "d", 2, 1, &mut rng);
    let before = p.get(0).to_vec();
    let g = Tensor::from_vec(vec![3.0, -0.5], &[2, 1]);
    let mut adam = Adam::new(AdamHyper {
        lr: 0.1,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-12,
    });
    adam.step(vec![&mut p], &[Some(g), None], "test").unwrap();
    let after = p.get(0).to_vec();
    assert!((after[0] - (before[0] - 0.1)).abs() < 1e-9);
    assert!((after[1] - (before[1] + 0.1)).abs() < 1e-9);
}

#[test]
fn empty_file_gives_defaults() {
    let cfg = parse_config("").unwrap();
    assert_eq!(cfg.schedule.batch_size, 16);
    assert_eq!(cfg.loss_weights.lambda_rec, 10.0);
    assert_eq!(cfg.loss_weights.lambda_gp, 10.0);
    assert_eq!(cfg.optimizer.beta1, 0.5);
    assert!(cfg.to_toml().contains("lambda_rec = 10.0"));
}

#[test]
fn errors_are_aggregated() {
    let text = "[schedule]\nbatch_size = 1\n[loss_weights]\nlambda_dis = -1.0\n";
    match parse_config(text) {
        Err(Error::ConfigList(list)) => {
            assert_eq!(list.len(), 2);
            assert!(list[0].contains("shuffl"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_fields_rejected() {
    assert!(matches!(parse_config("[schedule]\nbatchsize = 4\n"), Err(Error::Config(_))));
}

#[test]
fn permutations_are_bijections_and_reproducible() {
    let mut a = ChaCha8Rng::seed_from_u64(3);
    let mut b = ChaCha8Rng::seed_from_u64(3);
    let s1 = sample_shuffle(16, 3, &mut a, ShuffleMode::Permutation).unwrap();
    let s2 = sample_shuffle(16, 3, &mut b, ShuffleMode::Permutation).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(s1.permutations.len(), 3);
    assert!(s1.is_bijective());
    assert!(sample_shuffle(1, 3, &mut a, ShuffleMode::Permutation).is_err());
}

#[test]
fn two_sample_swap_labels() {
    let spec = ShuffleSpec {
        permutations: vec![vec![1, 0], vec![0, 1]],
    };
    let labels = vec![vec![0, 5], vec![2, 7]];
    assert_eq!(spec.induced_labels(&labels), vec![vec![2, 5], vec![0, 7]]);
}

fn tiny_run() -> RunConfig {
    let mut c = RunConfig::default();
    c.model = small_config(32, 4);
    c.schedule.batch_size = 4;
    c.schedule.critic_steps_per_gen = 1;
    c.schedule.pretrain_steps = 20;
    c.schedule.checkpoint_every = 2;
    c.schedule.log_every = 1;
    c.schedule.seed = 11;
    c
}

fn group_values(nets: &Networks<f32>, g: Group) -> Vec<Vec<f32>> {
    nets.params(g).iter().map(|t| t.to_vec()).collect()
}

#[test]
fn reconstruction_descends_without_adversary() {
    let data = tiny_synthetic(0);
    let mut c = tiny_run();
    c.loss_weights.lambda_adv = 0.0;
    c.loss_weights.lambda_gp = 0.0;
    c.optimizer.learning_rate = 1e-3;
    let mut t = Trainer::new(c, &data).unwrap();
    t.pretrain_classifiers(&data).unwrap();
    let batch = t.sample_batch(&data);
    let rec: Vec<f64> = (0..50).map(|_| t.train_step(&batch).unwrap().terms.rec).collect();
    let window = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;
    assert!(rec[49] < 0.5 * rec[0], "{rec:?}");
    for w in rec.chunks(10).collect::<Vec<_>>().windows(2) {
        assert!(window(w[1]) < window(w[0]), "{rec:?}");
    }
}

#[test]
fn critic_updates_per_generator_step() {
    let data = tiny_synthetic(1);
    let mut c = tiny_run();
    c.schedule.critic_steps_per_gen = 5;
    let mut t = Trainer::new(c, &data).unwrap();
    let critic0 = group_values(&t.nets, Group::Critic);
    let gen0 = group_values(&t.nets, Group::Generator);
    let batch = t.sample_batch(&data);
    t.train_step(&batch).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.save(dir.path()).unwrap();
    let state: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("training_state.json")).unwrap()).unwrap();
    assert_eq!(state["adam_steps"], serde_json::json!([1, 5, 0]));
    assert_ne!(group_values(&t.nets, Group::Critic), critic0);
    assert_ne!(group_values(&t.nets, Group::Generator), gen0);
}

#[test]
fn frozen_classifiers_never_move() {
    let data = tiny_synthetic(2);
    let mut t = Trainer::new(tiny_run(), &data).unwrap();
    t.pretrain_classifiers(&data).unwrap();
    let before = group_values(&t.nets, Group::Classifiers);
    for _ in 0..100 {
        let batch = t.sample_batch(&data);
        t.train_step(&batch).unwrap();
    }
    assert_eq!(group_values(&t.nets, Group::Classifiers), before);
}

#[test]
fn joint_mode_updates_classifiers() {
    let data = tiny_synthetic(3);
    let mut c = tiny_run();
    c.schedule.classifier_mode = ClassifierMode::Joint;
    let mut t = Trainer::new(c, &data).unwrap();
    let before = group_values(&t.nets, Group::Classifiers);
    let batch = t.sample_batch(&data);
    let r = t.train_step(&batch).unwrap();
    assert_ne!(group_values(&t.nets, Group::Classifiers), before);
    assert!(r.l_c > 0.0);
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let data = tiny_synthetic(4);
    let mut c = tiny_run();
    c.schedule.steps = 4;
    let straight = tempfile::tempdir().unwrap();
    let a = train(&c, &data, straight.path(), false).unwrap();
    let split = tempfile::tempdir().unwrap();
    c.schedule.steps = 2;
    train(&c, &data, split.path(), false).unwrap();
    c.schedule.steps = 4;
    let b = train(&c, &data, split.path(), true).unwrap();
    assert_eq!(a.step, 4);
    assert_eq!(b.step, 4);
    let (na, _) = load_networks::<f32>(&a.checkpoint).unwrap();
    let (nb, _) = load_networks::<f32>(&b.checkpoint).unwrap();
    assert_eq!(params_sha256(&na), params_sha256(&nb));
    let log = |d: &std::path::Path| std::fs::read_to_string(d.join(LOSS_LOG)).unwrap();
    assert_eq!(log(straight.path()), log(split.path()));
    assert_eq!(a.last_report, b.last_report);
}

#[test]
fn zero_steps_returns_initialisation() {
    let data = tiny_synthetic(5);
    let mut c = tiny_run();
    c.schedule.steps = 0;
    let dir = tempfile::tempdir().unwrap();
    let out = train(&c, &data, dir.path(), false).unwrap();
    assert_eq!(out.step, 0);
    assert!(out.pretrain.is_none() && out.last_report.is_none());
    let (n, _) = load_networks::<f32>(&out.checkpoint).unwrap();
    let fresh = Networks::<f32>::new(c.model.clone(), data.schema.clone(), c.schedule.seed).unwrap();
    assert_eq!(params_sha256(&n), params_sha256(&fresh));
}

#[test]
fn zero_step_pretraining_leaves_classifiers() {
    let data = tiny_synthetic(6);
    let mut net = Networks::<f32>::new(small_config(32, 4), data.schema.clone(), 0).unwrap();
    let before = group_values(&net, Group::Classifiers);
    let hyper = AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
    let r = fit_classifiers(&mut net.classifiers, &data, 0, 0.99, 4, hyper, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(r.steps, 0);
    assert_eq!(group_values(&net, Group::Classifiers), before);
}

#[test]
fn shuffle_bookkeeping_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<Vec<usize>> = (0..4).map(|i| vec![i, 10 + (i + 1) % 4, 20 + (i + 2) % 4]).collect();
    for _ in 0..1000 {
        let spec = sample_shuffle(4, 3, &mut rng, ShuffleMode::Permutation).unwrap();
        assert!(spec.is_bijective());
        let induced = spec.induced_labels(&labels);
        for i in 0..4 {
            for m in 0..3 {
                assert_eq!(induced[i][m], labels[spec.permutations[m][i]][m]);
            }
        }
    }
}

#[test]
fn identity_shuffle_is_reconstruction() {
    let data = tiny_synthetic(7);
    let net = common::nets::<f32>(3);
    let batch = data.batch::<f32>(&[0, 5, 9, 13]);
    let bundle = net.encode_all(&batch.images).unwrap();
    let rec = net.decode(&bundle).unwrap();
    let (xs, induced) = synthesize_shuffled(&net, &bundle, &ShuffleSpec::identity(4, 2), &batch.labels).unwrap();
    assert_eq!(xs.to_vec(), rec.to_vec());
    assert_eq!(induced, batch.labels);
}

#[test]
fn inverse_gather_restores_codes() {
    let net = common::nets::<f32>(4);
    let data = tiny_synthetic(8);
    let batch = data.batch::<f32>(&[1, 2, 3, 4, 5]);
    let bundle = net.encode_all(&batch.images).unwrap();
    let spec = sample_shuffle(5, 2, &mut ChaCha8Rng::seed_from_u64(2), ShuffleMode::Permutation).unwrap();
    let inverse = ShuffleSpec {
        permutations: spec
            .permutations
            .iter()
            .map(|r| {
                let mut inv = vec![0; r.len()];
                for (i, &j) in r.iter().enumerate() {
                    inv[j] = i;
                }
                inv
            })
            .collect(),
    };
    let back = shuffle_bundle(&shuffle_bundle(&bundle, &spec).unwrap(), &inverse).unwrap();
    for (a, b) in back.codes.iter().zip(&bundle.codes) {
        assert_eq!(a.to_vec(), b.to_vec());
    }
}

#[test]
fn with_replacement_mode_allows_repeats() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let repeated = (0..50)
        .map(|_| sample_shuffle(8, 1, &mut rng, ShuffleMode::WithReplacement).unwrap())
        .any(|s| !s.is_bijective());
    assert!(repeated);
}
