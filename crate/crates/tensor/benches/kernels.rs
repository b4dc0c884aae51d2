//! Sequential vs rayon execution of the batch-parallel kernels.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use disentangle_tensor::kernels::{self, ConvGeom};
use disentangle_tensor::{grad, nn, set_parallelism, Parallelism, Tensor};

const POLICIES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("rayon", Parallelism::Rayon),
];

fn decoder_block_geom(batch: usize) -> ConvGeom {
    ConvGeom { batch, in_ch: 96, height: 8, width: 8, out_ch: 96, kh: 3, kw: 3, stride: 1, pad: 1 }
}

fn conv_kernels(c: &mut Criterion) {
    let g = decoder_block_geom(16);
    let x = vec![0.5f32; g.batch * g.input_len()];
    let w = vec![0.01f32; g.weight_len()];
    let y = vec![0.1f32; g.batch * g.output_len()];
    let mut group = c.benchmark_group("conv2d_3x3_96ch_8x8_b16");
    for (name, p) in POLICIES {
        group.bench_with_input(BenchmarkId::new("forward", name), &p, |b, &p| {
            set_parallelism(p);
            b.iter(|| black_box(kernels::conv2d_forward(&g, &x, &w)))
        });
        group.bench_with_input(BenchmarkId::new("input_grad", name), &p, |b, &p| {
            set_parallelism(p);
            b.iter(|| black_box(kernels::conv2d_input_grad(&g, &y, &w)))
        });
        group.bench_with_input(BenchmarkId::new("weight_grad", name), &p, |b, &p| {
            set_parallelism(p);
            b.iter(|| black_box(kernels::conv2d_weight_grad(&g, &x, &y)))
        });
    }
    group.finish();
}

fn gradient_penalty(c: &mut Criterion) {
    let mut group = c.benchmark_group("critic_gradient_penalty_b16_32px");
    let x = Tensor::<f32>::from_vec(vec![0.3; 16 * 3 * 32 * 32], &[16, 3, 32, 32]);
    let w1 = Tensor::<f32>::leaf(vec![0.02; 16 * 3 * 4 * 4], &[16, 3, 4, 4]);
    let w2 = Tensor::<f32>::leaf(vec![0.02; 32 * 16 * 4 * 4], &[32, 16, 4, 4]);
    for (name, p) in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &p, |b, &p| {
            set_parallelism(p);
            b.iter(|| {
                let xh = x.detach_leaf();
                let s = xh.conv2d(&w1, 2, 1).leaky_relu(0.01).conv2d(&w2, 2, 1).sum_all();
                let gx = grad(&s, &[&xh], true).remove(0).unwrap();
                let gp = nn::batch_l2_norm(&gx, 1e-12).add_scalar(-1.0).square().mean_all();
                black_box(grad(&gp, &[&w1, &w2], false))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv_kernels, gradient_penalty);
criterion_main!(benches);
