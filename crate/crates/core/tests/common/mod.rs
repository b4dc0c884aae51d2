#![allow(dead_code)]

use disentangle_core::data::{generate_synthetic, AttributeSchema, Dataset, SyntheticConfig};
use disentangle_core::model::{ModelConfig, Networks};
use disentangle_tensor::{Real, Tensor};

pub fn small_config(image_size: usize, width: usize) -> ModelConfig {
    ModelConfig {
        image_size,
        base_width: width,
        res_blocks: 1,
        ..Default::default()
    }
}

pub fn shape_hue() -> AttributeSchema {
    AttributeSchema::new(vec![("shape", 3), ("hue", 6)]).unwrap()
}

pub fn nets<T: Real>(seed: u64) -> Networks<T> {
    Networks::new(small_config(32, 4), shape_hue(), seed).unwrap()
}

/// One jittered copy per (shape, hue, brightness) cell, brightness unlabelled.
pub fn tiny_synthetic(seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        count_per_combination: 1,
        brightness_classes: 1,
        brightness_attribute: false,
        seed,
        ..Default::default()
    })
    .unwrap()
}

pub fn image<T: Real>(data: &Dataset, i: usize) -> Tensor<T> {
    data.batch::<T>(&[i]).images
}

/// 8x8 images, two attributes, width 4: the gradient-check model.
pub fn tiny_nets(seed: u64) -> Networks<f64> {
    let cfg = ModelConfig {
        image_size: 8,
        base_width: 4,
        res_blocks: 1,
        ..Default::default()
    };
    let schema = AttributeSchema::new(vec![("a", 3), ("b", 2)]).unwrap();
    Networks::new(cfg, schema, seed).unwrap()
}

pub fn random_images(b: usize, size: usize, seed: u64) -> Tensor<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = b * 3 * size * size;
    Tensor::from_vec((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[b, 3, size, size])
}

/// One scalar parameter: (submodule, tensor, element).
pub type Coord = (usize, usize, usize);

/// `n` parameter coordinates drawn uniformly from the submodules whose blob
/// name passes `keep`.
pub fn sample_coords(nets: &Networks<f64>, n: usize, seed: u64, keep: impl Fn(&str) -> bool) -> Vec<Coord> {
    use rand::{Rng, SeedableRng};
    let mut all = Vec::new();
    for (s, (name, set)) in nets.named_param_sets().into_iter().enumerate() {
        if !keep(&name) {
            continue;
        }
        for t in 0..set.len() {
            for e in 0..set.get(t).numel() {
                all.push((s, t, e));
            }
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| all[rng.gen_range(0..all.len())]).collect()
}

fn nudged(nets: &Networks<f64>, (s, t, e): Coord, delta: f64) -> Networks<f64> {
    let mut out = nets.clone();
    let mut sets = out.named_param_sets_mut();
    let set = &mut sets[s].1;
    let mut data = set.get(t).to_vec();
    data[e] += delta;
    set.set(t, data);
    out
}

/// Largest `|a - n| / max(|a|, |n|, 1e-6)` between analytic gradients and
/// central differences at `coords`.
pub fn max_grad_error(nets: &Networks<f64>, coords: &[Coord], loss: impl Fn(&Networks<f64>) -> Tensor<f64>) -> f64 {
    let out = loss(nets);
    let sets = nets.named_param_sets();
    let params: Vec<&Tensor<f64>> = sets.iter().flat_map(|(_, p)| p.tensors()).collect();
    let grads = disentangle_tensor::grad(&out, &params, false);
    let offsets: Vec<usize> = sets
        .iter()
        .scan(0, |acc, (_, p)| {
            let o = *acc;
            *acc += p.len();
            Some(o)
        })
        .collect();
    let h = 1e-5;
    coords
        .iter()
        .map(|&c| {
            let g = grads[offsets[c.0] + c.1].as_ref().map_or(0.0, |g| g.data()[c.2]);
            let fd = (loss(&nudged(nets, c, h)).item() - loss(&nudged(nets, c, -h)).item()) / (2.0 * h);
            (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}
