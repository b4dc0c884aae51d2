use disentangle_tensor::kernels::{self, ConvGeom};
use disentangle_tensor::{backward, no_grad, nn, set_parallelism, Parallelism, Tensor};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn geom_strategy() -> impl Strategy<Value = ConvGeom> {
    (1usize..3, 1usize..4, 3usize..7, 1usize..4, 1usize..4, 1usize..3, 0usize..2).prop_map(
        |(batch, in_ch, size, out_ch, k, stride, pad)| ConvGeom {
            batch,
            in_ch,
            height: size,
            width: size + 1,
            out_ch,
            kh: k.min(size),
            kw: k.min(size),
            stride,
            pad,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// <conv(x, w), y> = <x, conv_input_grad(y, w)> = <w, conv_weight_grad(x, y)>
    #[test]
    fn conv_kernels_are_mutually_adjoint(g in geom_strategy(), seed in 0u64..1000) {
        let mut s = seed;
        let mut next = move || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5 };
        let x: Vec<f64> = (0..g.batch * g.input_len()).map(|_| next()).collect();
        let w: Vec<f64> = (0..g.weight_len()).map(|_| next()).collect();
        let y: Vec<f64> = (0..g.batch * g.output_len()).map(|_| next()).collect();
        let cx = kernels::conv2d_forward(&g, &x, &w);
        let ty = kernels::conv2d_input_grad(&g, &y, &w);
        let wg = kernels::conv2d_weight_grad(&g, &x, &y);
        let lhs = dot(&cx, &y);
        prop_assert!((lhs - dot(&x, &ty)).abs() < 1e-10 * (1.0 + lhs.abs()));
        prop_assert!((lhs - dot(&w, &wg)).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    /// im2col + GEMM agrees with the textbook six-deep loop.
    #[test]
    fn conv_matches_direct_summation(g in geom_strategy(), seed in 0u64..1000) {
        let mut s = seed;
        let mut next = move || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5 };
        let x: Vec<f64> = (0..g.batch * g.input_len()).map(|_| next()).collect();
        let w: Vec<f64> = (0..g.weight_len()).map(|_| next()).collect();
        let got = kernels::conv2d_forward(&g, &x, &w);
        let (oh, ow) = (g.out_h(), g.out_w());
        for b in 0..g.batch {
            for o in 0..g.out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..g.in_ch {
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                        continue;
                                    }
                                    let xv = x[((b * g.in_ch + c) * g.height + iy as usize) * g.width + ix as usize];
                                    acc += xv * w[((o * g.in_ch + c) * g.kh + ki) * g.kw + kj];
                                }
                            }
                        }
                        let v = got[((b * g.out_ch + o) * oh + oy) * ow + ox];
                        prop_assert!((v - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn reflect_pad_adjoint(h in 2usize..6, w in 2usize..6, pad in 1usize..2, seed in 0u64..100) {
        let n = 2 * h * w;
        let x: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
        let p = kernels::reflect_pad2d(&x, 2, h, w, pad);
        let y: Vec<f64> = (0..p.len()).map(|i| ((i as u64 * 13 + seed) % 11) as f64 - 5.0).collect();
        let back = kernels::reflect_pad2d_adjoint(&y, 2, h, w, pad);
        prop_assert_eq!(dot(&p, &y), dot(&x, &back));
    }

    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-50.0f64..50.0, 12)) {
        let p = nn::softmax(&Tensor::from_vec(vals, &[3, 4]));
        for row in p.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn sequential_and_rayon_agree_bitwise() {
    let g = ConvGeom { batch: 9, in_ch: 3, height: 12, width: 12, out_ch: 5, kh: 3, kw: 3, stride: 2, pad: 1 };
    let x: Vec<f32> = (0..g.batch * g.input_len()).map(|i| ((i * 37) % 101) as f32 / 50.0 - 1.0).collect();
    let w: Vec<f32> = (0..g.weight_len()).map(|i| ((i * 17) % 23) as f32 / 11.0 - 1.0).collect();
    let y: Vec<f32> = (0..g.batch * g.output_len()).map(|i| ((i * 7) % 19) as f32 / 9.0 - 1.0).collect();
    let run = || {
        (
            kernels::conv2d_forward(&g, &x, &w),
            kernels::conv2d_input_grad(&g, &y, &w),
            kernels::conv2d_weight_grad(&g, &x, &y),
        )
    };
    set_parallelism(Parallelism::Sequential);
    let seq = run();
    set_parallelism(Parallelism::Rayon);
    let par = run();
    assert_eq!(seq, par);
}

#[test]
fn no_grad_records_nothing() {
    let w = Tensor::<f32>::leaf(vec![1.0, 2.0], &[2]);
    let y = no_grad(|| w.square().sum_all());
    assert!(!y.requires_grad());
    let z = w.square().sum_all();
    assert!(z.requires_grad());
    let g = backward(&z);
    assert_eq!(g.get(&w).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn detached_branches_receive_no_gradient() {
    let a = Tensor::<f64>::leaf(vec![1.0, -2.0], &[2]);
    let b = Tensor::<f64>::leaf(vec![3.0, 4.0], &[2]);
    let loss = a.mul(&b.detach()).sum_all();
    let g = backward(&loss);
    assert!(g.contains(&a));
    assert!(!g.contains(&b));
}

#[test]
fn tensors_are_send_and_sync() {
    fn assert_send_sync<S: Send + Sync>() {}
    assert_send_sync::<Tensor<f32>>();
    assert_send_sync::<Tensor<f64>>();
}
