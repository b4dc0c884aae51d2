mod common;

use std::collections::BTreeMap;

use common::{image, nets, tiny_synthetic};
use disentangle_core::latent_ops::{
    alphas, check_weights, interpolate, interpolate_code, mean_code, mix, swap, swap_bundle, weighted_code, MixMode,
};
use disentangle_core::model::LatentBundle;
use disentangle_core::Error;
use disentangle_tensor::{no_grad, Tensor};
use proptest::prelude::*;

fn decode_with(nets: &disentangle_core::model::Networks<f32>, base: &Tensor<f32>, m: usize, code: Tensor<f32>) -> Tensor<f32> {
    no_grad(|| {
        let mut b: LatentBundle<f32> = nets.encode_all(base).unwrap();
        b.codes[m] = code;
        nets.decode(&b).unwrap()
    })
}

#[test]
fn interpolation_endpoints_are_pure_code_decodes() {
    let nets = nets::<f32>(1);
    let data = tiny_synthetic(3);
    let (xi, xj) = (image::<f32>(&data, 0), image::<f32>(&data, 7));
    let strip = interpolate(&nets, 2, &xi, &xj, 5, None).unwrap();
    assert_eq!(strip.shape(), &[5, 3, 32, 32]);
    let n = 3 * 32 * 32;
    let zi = no_grad(|| nets.encode(2, &xi).unwrap());
    let zj = no_grad(|| nets.encode(2, &xj).unwrap());
    let first = decode_with(&nets, &xj, 2, zj);
    let last = decode_with(&nets, &xj, 2, zi);
    assert_eq!(&strip.data()[..n], first.data());
    assert_eq!(&strip.data()[4 * n..], last.data());
}

#[test]
fn two_step_interpolation_is_the_endpoints() {
    let nets = nets::<f32>(2);
    let data = tiny_synthetic(3);
    let (xi, xj) = (image::<f32>(&data, 1), image::<f32>(&data, 4));
    let two = interpolate(&nets, 1, &xi, &xj, 2, None).unwrap();
    let five = interpolate(&nets, 1, &xi, &xj, 5, None).unwrap();
    let n = 3 * 32 * 32;
    assert_eq!(&two.data()[..n], &five.data()[..n]);
    assert_eq!(&two.data()[n..], &five.data()[4 * n..]);
    assert!(matches!(interpolate(&nets, 1, &xi, &xj, 1, None), Err(Error::Contract(_))));
}

#[test]
fn same_label_interpolation_is_allowed() {
    let nets = nets::<f32>(2);
    let data = tiny_synthetic(3);
    // items 0 and 1 share the shape label
    assert_eq!(data.items[0].labels[0], data.items[1].labels[0]);
    let strip = interpolate(&nets, 1, &image(&data, 0), &image(&data, 1), 8, None).unwrap();
    assert_eq!(strip.dim(0), 8);
}

#[test]
fn unit_weight_mix_equals_single_donor_swap() {
    let nets = nets::<f32>(3);
    let data = tiny_synthetic(5);
    let comps: Vec<Tensor<f32>> = [2, 9, 13].iter().map(|&i| image(&data, i)).collect();
    let base = image::<f32>(&data, 17);
    for k in 0..3 {
        let weights: Vec<f64> = (0..3).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
        let pairs: Vec<(Tensor<f32>, f64)> = comps.iter().cloned().zip(weights).collect();
        let mixed = mix(&nets, 2, &pairs, &base, MixMode::Convex).unwrap();
        let swapped = swap(&nets, &base, &BTreeMap::from([(2, comps[k].clone())])).unwrap();
        assert_eq!(mixed.data(), swapped.data());
    }
}

#[test]
fn two_component_mix_agrees_with_interpolation() {
    let nets = nets::<f32>(4);
    let data = tiny_synthetic(5);
    let (xi, xj) = (image::<f32>(&data, 3), image::<f32>(&data, 11));
    let strip = interpolate(&nets, 1, &xi, &xj, 5, None).unwrap();
    let n = 3 * 32 * 32;
    for (k, a) in alphas(5).into_iter().enumerate() {
        let mixed = mix(&nets, 1, &[(xi.clone(), a), (xj.clone(), 1.0 - a)], &xj, MixMode::Convex).unwrap();
        assert_eq!(mixed.data(), &strip.data()[k * n..(k + 1) * n], "alpha {a}");
    }
}

#[test]
fn mix_rejects_bad_weights() {
    let nets = nets::<f32>(3);
    let data = tiny_synthetic(5);
    let x = image::<f32>(&data, 0);
    let pairs = vec![(x.clone(), 0.5), (x.clone(), 0.5), (x.clone(), 0.1)];
    assert!(matches!(mix(&nets, 1, &pairs, &x, MixMode::Convex), Err(Error::Contract(_))));
    let signed = vec![(x.clone(), 1.5), (x.clone(), -0.5)];
    assert!(mix(&nets, 1, &signed, &x, MixMode::Convex).is_err());
    assert!(mix(&nets, 1, &signed, &x, MixMode::Signed).is_ok());
    assert!(mix(&nets, 0, &[(x.clone(), 1.0)], &x, MixMode::Convex).is_err());
}

#[test]
fn mean_of_two_codes_is_the_interpolation_midpoint() {
    let nets = nets::<f32>(6);
    let data = tiny_synthetic(8);
    let pair = data.subset(&[4, 15], "pair");
    let mean = mean_code::<f32>(&nets, &pair, 2, None).unwrap();
    let z: Vec<Tensor<f32>> = (0..2).map(|i| no_grad(|| nets.encode(2, &image(&pair, i)).unwrap())).collect();
    assert_eq!(mean.data(), interpolate_code(&z[0], &z[1], 0.5).data());
}

#[test]
fn mean_code_of_one_image_is_its_code() {
    let nets = nets::<f32>(6);
    let data = tiny_synthetic(8);
    let one = data.subset(&[10], "one");
    let z = no_grad(|| nets.encode(1, &image(&one, 0)).unwrap());
    assert_eq!(mean_code::<f32>(&nets, &one, 1, None).unwrap().data(), z.data());
}

#[test]
fn mean_code_of_an_empty_selection_errors() {
    let nets = nets::<f32>(6);
    let data = tiny_synthetic(8).subset(&[0, 1], "two");
    let absent = (0..6).find(|&c| data.indices_with_label(2, c).is_empty()).unwrap();
    assert!(matches!(mean_code::<f32>(&nets, &data, 2, Some(absent)), Err(Error::EmptySelection(_))));
}

#[test]
fn swap_keeps_the_source_variation_code() {
    let nets = nets::<f32>(7);
    let data = tiny_synthetic(9);
    let src = image::<f32>(&data, 0);
    let donors = BTreeMap::from([(1, image(&data, 8)), (2, image(&data, 12))]);
    let bundle = no_grad(|| swap_bundle(&nets, &src, &donors).unwrap());
    let own = no_grad(|| nets.encode(0, &src).unwrap());
    assert_eq!(bundle.codes[0].data(), own.data());
    assert!(matches!(swap(&nets, &src, &BTreeMap::new()), Err(Error::Contract(_))));
    assert!(swap(&nets, &src, &BTreeMap::from([(3, image(&data, 1))])).is_err());
    assert!(swap(&nets, &src, &BTreeMap::from([(0, image(&data, 1))])).is_err());
}

#[test]
fn swapping_every_attribute_from_the_source_reconstructs_it() {
    let nets = nets::<f32>(7);
    let data = tiny_synthetic(9);
    let src = image::<f32>(&data, 5);
    let out = swap(&nets, &src, &BTreeMap::from([(1, src.clone()), (2, src.clone())])).unwrap();
    let rec = no_grad(|| nets.decode(&nets.encode_all(&src).unwrap()).unwrap());
    assert_eq!(out.data(), rec.data());
}

#[test]
fn operations_do_not_touch_parameters() {
    let nets = nets::<f32>(8);
    let before = disentangle_core::model::params_sha256(&nets);
    let data = tiny_synthetic(9);
    let x = image::<f32>(&data, 0);
    let _ = interpolate(&nets, 1, &x, &image(&data, 3), 3, None).unwrap();
    let _ = mix(&nets, 2, &[(x.clone(), 1.0)], &x, MixMode::Convex).unwrap();
    assert_eq!(before, disentangle_core::model::params_sha256(&nets));
}
#[test]
fn weights_validation() {
    assert!(check_weights(&[1.0, 0.0, 0.0], MixMode::Convex).is_ok());
    assert!(check_weights(&[0.5, 0.5, 0.1], MixMode::Convex).is_err());
    assert!(check_weights(&[1.5, -0.5], MixMode::Convex).is_err());
    assert!(check_weights(&[1.5, -0.5], MixMode::Signed).is_ok());
    assert!(check_weights(&[], MixMode::Convex).is_err());
}

#[test]
fn alphas_include_endpoints() {
    assert_eq!(alphas(2), vec![0.0, 1.0]);
    assert_eq!(alphas(5)[2], 0.5);
}

#[test]
fn weighted_code_is_order_free() {
    let a = Tensor::<f32>::from_vec(vec![0.1, 0.7, 1e-3], &[1, 3, 1, 1]);
    let b = Tensor::<f32>::from_vec(vec![3.0, -2.0, 0.3], &[1, 3, 1, 1]);
    let c = Tensor::<f32>::from_vec(vec![1e4, 0.2, -7.0], &[1, 3, 1, 1]);
    let w = [0.2, 0.3, 0.5];
    let x = weighted_code(&[(a.clone(), w[0]), (b.clone(), w[1]), (c.clone(), w[2])]);
    let y = weighted_code(&[(c, w[2]), (a, w[0]), (b, w[1])]);
    assert_eq!(x.data(), y.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mix_output_ignores_component_order(raw in prop::collection::vec(0.05f64..1.0, 3), rot in 1usize..3) {
        let nets = nets::<f32>(9);
        let data = tiny_synthetic(11);
        let total: f64 = raw.iter().sum();
        let pairs: Vec<(Tensor<f32>, f64)> = raw.iter().enumerate().map(|(i, w)| (image(&data, 3 * i + 1), w / total)).collect();
        let mut rotated = pairs.clone();
        rotated.rotate_left(rot);
        let base = image::<f32>(&data, 0);
        let a = mix(&nets, 1, &pairs, &base, MixMode::Convex).unwrap();
        let b = mix(&nets, 1, &rotated, &base, MixMode::Convex).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }
}
